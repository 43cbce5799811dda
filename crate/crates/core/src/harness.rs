//! Experiment drivers behind the command-line tool. Every driver writes its
//! artifacts under one output directory with fixed file names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{FrameError, Result};
use crate::io::{
    encode_pgm, export_metrics_csv, export_sample_grid, parse_pgm, read_checkpoint, render_sample_grid,
    write_atomic, write_checkpoint, Checkpoint, Dataset,
};
use crate::learner::{train_step, TrainState};
use crate::metrics::{mean_energy, response_distance, MetricTrace, Mode};
use crate::sampler::{langevin_step, ChainState};
use crate::signal::GridSignal;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARE_FILE: &str = "compare.csv";

/// Outcome of one training run, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub iterations: u64,
    pub final_r: Option<f64>,
    pub final_energy: Option<f64>,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub wall_time_s: f64,
    pub config: BTreeMap<String, String>,
}

/// A finished (or diverged) run held in memory.
#[derive(Debug)]
pub struct Experiment {
    pub state: TrainState,
    pub dataset: Dataset,
    pub divergence: Option<FrameError>,
    pub wall_time_s: f64,
}

impl Experiment {
    pub fn trace(&self) -> &MetricTrace {
        &self.state.trace
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// Response distance logged at iteration `iter`, if that row is finite.
    pub fn r_at(&self, iter: u64) -> Option<f64> {
        self.trace()
            .at(iter)
            .filter(|row| !row.diverged)
            .map(|row| row.response_distance)
    }

    pub fn final_r(&self) -> Option<f64> {
        self.trace()
            .last()
            .filter(|row| !row.diverged)
            .map(|row| row.response_distance)
    }

    pub fn summary(&self, cfg: &RunConfig) -> RunSummary {
        RunSummary {
            mode: cfg.mode(),
            iterations: self.state.iteration(),
            final_r: self.final_r(),
            final_energy: self
                .trace()
                .last()
                .filter(|row| !row.diverged)
                .map(|row| row.energy_mean),
            diverged: self.diverged(),
            divergence: self.divergence.as_ref().map(ToString::to_string),
            wall_time_s: self.wall_time_s,
            config: cfg.echo.clone(),
        }
    }

    pub fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint {
            state: self.state.clone(),
            sampler: cfg.sampler.clone(),
            learner: cfg.learner.clone(),
            config: cfg.echo.clone(),
        }
    }
}

/// Fresh training state for `cfg`: bank with zero weights, chains seeded by
/// `cfg.seed`.
pub fn initial_state(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainState> {
    let bank = cfg.build_bank()?;
    bank.check_signal(&dataset.items()[0])?;
    let chains = ChainState::initialize(dataset.shape(), cfg.learner.batch_syn, cfg.seed, cfg.init)?;
    Ok(TrainState::new(bank, chains, cfg.seed))
}

/// Train from `state` until `cfg.learner.iters` iterations are complete,
/// calling `after_iter` after each successful iteration.
pub fn continue_training(
    cfg: &RunConfig,
    dataset: Dataset,
    mut state: TrainState,
    mut after_iter: impl FnMut(&TrainState) -> Result<()>,
) -> Result<Experiment> {
    let start = Instant::now();
    let mut divergence = None;
    while state.iteration() < cfg.learner.iters {
        match train_step(&mut state, dataset.items(), &cfg.sampler, &cfg.learner) {
            Ok(_) => after_iter(&state)?,
            Err(err @ FrameError::Diverged { .. }) => {
                info!("{err}");
                divergence = Some(err);
                break;
            }
            Err(err) => return Err(err),
        }
    }
    Ok(Experiment {
        state,
        dataset,
        divergence,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Run `cfg` from scratch without writing anything.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    let dataset = cfg.build_dataset()?;
    let state = initial_state(cfg, &dataset)?;
    continue_training(cfg, dataset, state, |_| Ok(()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_run(cfg: &RunConfig, exp: &Experiment, out: &Path) -> Result<RunSummary> {
    export_metrics_csv(exp.trace(), &out.join(METRICS_FILE))?;
    export_sample_grid(exp.state.chains.chains(), &out.join("samples_final.pgm"))?;
    write_checkpoint(&exp.checkpoint(cfg), &out.join(CHECKPOINT_FILE))?;
    let summary = exp.summary(cfg);
    write_json(&summary, &out.join(SUMMARY_FILE))?;
    Ok(summary)
}

/// Train, writing `metrics.csv`, a sample grid every `grid_every` iterations,
/// the final checkpoint and `summary.json`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let dataset = cfg.build_dataset()?;
    let state = initial_state(cfg, &dataset)?;
    let every = cfg.grid_every;
    let exp = continue_training(cfg, dataset, state, |s| {
        if every > 0 && s.iteration() % every == 0 {
            let name = format!("samples_{:04}.pgm", s.iteration());
            export_sample_grid(s.chains.chains(), &out.join(name))?;
        }
        Ok(())
    })?;
    write_run(cfg, &exp, out)
}

/// Paired FRAME / wFRAME runs with shared seed and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub frame: RunSummary,
    pub wframe: RunSummary,
}

pub const COMPARE_HEADER: &str = "iter,frame_energy_mean,wframe_energy_mean,frame_response_distance,wframe_response_distance,frame_theta_norm,wframe_theta_norm,frame_diverged,wframe_diverged";

/// Rows joined on iteration; a missing side leaves its columns empty.
pub fn join_traces(frame: &MetricTrace, wframe: &MetricTrace) -> String {
    let mut by_iter: BTreeMap<u64, [Option<&crate::metrics::MetricRow>; 2]> = BTreeMap::new();
    for row in frame.rows() {
        by_iter.entry(row.iter).or_default()[0] = Some(row);
    }
    for row in wframe.rows() {
        by_iter.entry(row.iter).or_default()[1] = Some(row);
    }
    let num = |row: Option<&crate::metrics::MetricRow>, f: fn(&crate::metrics::MetricRow) -> f64| {
        row.map(|r| f(r).to_string()).unwrap_or_default()
    };
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (iter, [a, b]) in by_iter {
        let line = [
            iter.to_string(),
            num(a, |r| r.energy_mean),
            num(b, |r| r.energy_mean),
            num(a, |r| r.response_distance),
            num(b, |r| r.response_distance),
            num(a, |r| r.theta_norm),
            num(b, |r| r.theta_norm),
            a.map(|r| r.diverged.to_string()).unwrap_or_default(),
            b.map(|r| r.diverged.to_string()).unwrap_or_default(),
        ]
        .join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Two grids side by side with a 3-px white gutter.
fn side_by_side(left: &[GridSignal], right: &[GridSignal]) -> Result<Vec<u8>> {
    let decode = |batch: &[GridSignal]| -> Result<crate::io::GrayImage> {
        let (bytes, _) = render_sample_grid(batch)?;
        parse_pgm(&bytes).map_err(FrameError::Checkpoint)
    };
    let (a, b) = (decode(left)?, decode(right)?);
    let gutter = 3;
    let height = a.height.max(b.height);
    let width = a.width + gutter + b.width;
    let mut pixels = vec![255u8; height * width];
    for (img, c0) in [(&a, 0), (&b, a.width + gutter)] {
        for i in 0..img.height {
            for j in 0..img.width {
                let v = img.pixels[i * img.width + j] * 255.0 / img.max_value;
                pixels[i * width + c0 + j] = v.round() as u8;
            }
        }
    }
    Ok(encode_pgm(height, width, &pixels))
}

/// Run both modes from the same seed, writing each run into its own
/// subdirectory plus `compare.csv`, `compare_samples.pgm` and `summary.json`.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<CompareSummary> {
    fs::create_dir_all(out)?;
    let frame_cfg = cfg.with("mode", "frame")?;
    let wframe_cfg = cfg.with("mode", "wframe")?;
    let frame = run_experiment(&frame_cfg)?;
    let wframe = run_experiment(&wframe_cfg)?;
    for (sub, c, exp) in [("frame", &frame_cfg, &frame), ("wframe", &wframe_cfg, &wframe)] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir)?;
        write_run(c, exp, &dir)?;
    }
    write_atomic(&out.join(COMPARE_FILE), join_traces(frame.trace(), wframe.trace()).as_bytes())?;
    let grid = side_by_side(frame.state.chains.chains(), wframe.state.chains.chains())?;
    write_atomic(&out.join("compare_samples.pgm"), &grid)?;
    let summary = CompareSummary {
        frame: frame.summary(&frame_cfg),
        wframe: wframe.summary(&wframe_cfg),
    };
    write_json(&summary, &out.join(SUMMARY_FILE))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub steps: u64,
    pub count: usize,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub mean_energy: Option<f64>,
}

/// Continue the persistent chains of a checkpoint for `steps` Langevin steps
/// with frozen weights and tile the first `count` of them.
pub fn cmd_sample(checkpoint: &Path, count: usize, steps: u64, out: &Path) -> Result<SampleSummary> {
    let ckpt = read_checkpoint(checkpoint)?;
    let mut chains = ckpt.state.chains.clone();
    if count == 0 || count > chains.len() {
        return Err(FrameError::Config(format!(
            "count must be in 1..={} (the checkpoint's chain count)",
            chains.len()
        )));
    }
    fs::create_dir_all(out)?;
    let bank = &ckpt.state.bank;
    let mut divergence = None;
    for _ in 0..steps {
        if let Err(err) = langevin_step(&mut chains, bank, &ckpt.sampler) {
            match err {
                FrameError::Diverged { .. } => {
                    divergence = Some(err);
                    break;
                }
                other => return Err(other),
            }
        }
    }
    let shown = &chains.chains()[..count];
    let mean = if divergence.is_none() {
        export_sample_grid(shown, &out.join("samples.pgm"))?;
        Some(mean_energy(bank, shown)?)
    } else {
        None
    };
    let summary = SampleSummary {
        steps,
        count,
        diverged: divergence.is_some(),
        divergence: divergence.map(|e| e.to_string()),
        mean_energy: mean,
    };
    write_json(&summary, &out.join(SUMMARY_FILE))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub response_distance: f64,
    pub mean_energy_samples: f64,
    pub mean_energy_data: f64,
    pub samples: usize,
    pub data_items: usize,
    pub dataset: String,
}

/// Response distance between the checkpoint's chains and the full dataset,
/// plus mean energies of both.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset) -> Result<EvalSummary> {
    let bank = &ckpt.state.bank;
    let samples = ckpt.state.chains.chains();
    Ok(EvalSummary {
        response_distance: response_distance(bank, dataset.items(), samples)?,
        mean_energy_samples: mean_energy(bank, samples)?,
        mean_energy_data: mean_energy(bank, dataset.items())?,
        samples: samples.len(),
        data_items: dataset.len(),
        dataset: dataset.source().to_string(),
    })
}

/// Evaluate a checkpoint against `cfg`'s dataset, or against the dataset
/// recorded in the checkpoint when `cfg` is `None`.
pub fn cmd_eval(checkpoint: &Path, cfg: Option<&RunConfig>, out: &Path) -> Result<EvalSummary> {
    let ckpt = read_checkpoint(checkpoint)?;
    let recorded;
    let cfg = match cfg {
        Some(c) => c,
        None => {
            let pairs: Vec<(String, String)> = ckpt.config.clone().into_iter().collect();
            recorded = RunConfig::resolve(&pairs)?;
            &recorded
        }
    };
    let dataset = cfg.build_dataset()?;
    let summary = evaluate(&ckpt, &dataset)?;
    fs::create_dir_all(out)?;
    write_json(&summary, &out.join(SUMMARY_FILE))?;
    Ok(summary)
}
