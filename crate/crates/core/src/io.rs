//! Datasets, synthetic generators, checkpoints and artifact export.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::{BankKind, FilterBank};
use crate::error::{FrameError, Result};
use crate::learner::{LearnerConfig, TrainState};
use crate::metrics::MetricTrace;
use crate::sampler::{ChainRng, ChainState, SamplerConfig};
use crate::signal::{Filter, GridSignal};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Each item shifted to zero mean and scaled to unit standard deviation.
    PerImage,
    /// Raw intensities divided by the codec's maximum value.
    Global01,
}

impl std::str::FromStr for Normalization {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "per_image" | "per-image" => Ok(Self::PerImage),
            "global01" | "global" => Ok(Self::Global01),
            other => Err(FrameError::Config(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Uniformly shaped training items.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<GridSignal>,
    normalization: Normalization,
    source: String,
}

impl Dataset {
    pub fn new(items: Vec<GridSignal>, source: impl Into<String>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| FrameError::Empty("dataset has no items".into()))?;
        if items.iter().any(|x| x.shape() != first.shape()) {
            return Err(FrameError::Shape("dataset items must share one shape".into()));
        }
        Ok(Self {
            items,
            normalization: Normalization::None,
            source: source.into(),
        })
    }

    pub fn items(&self) -> &[GridSignal] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.items[0].shape()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Per-image standardization. `Global01` only makes sense against a codec
    /// maximum and is applied by the loaders.
    pub fn standardized(mut self) -> Result<Self> {
        if self.normalization != Normalization::None {
            return Err(FrameError::Config("dataset is already normalized".into()));
        }
        for x in &mut self.items {
            standardize(x.values_mut());
        }
        self.normalization = Normalization::PerImage;
        Ok(self)
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in v.iter_mut() {
        *x -= mean;
        if std > 0.0 {
            *x /= std;
        }
    }
}

/// Decoded grayscale image: row-major raw intensities and the codec maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub max_value: f64,
    pub pixels: Vec<f64>,
}

/// Parse a binary (P5) PGM with 8- or 16-bit samples.
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let mut number = |name: &str| -> std::result::Result<usize, String> {
        token()?
            .parse::<usize>()
            .map_err(|_| format!("bad PGM {name}"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let max_value = number("maxval")?;
    if width == 0 || height == 0 || max_value == 0 || max_value > 65535 {
        return Err("PGM header out of range".into());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bytes_per = if max_value < 256 { 1 } else { 2 };
    let need = width * height * bytes_per;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| format!("PGM raster truncated: need {need} bytes"))?;
    let pixels = if bytes_per == 1 {
        raster.iter().map(|&b| b as f64).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Ok(GrayImage {
        height,
        width,
        max_value: max_value as f64,
        pixels,
    })
}

pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn read_image(path: &Path) -> Result<GrayImage> {
    let image_err = |message: String| FrameError::Image {
        path: path.to_path_buf(),
        message,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => {
            let bytes = fs::read(path)?;
            parse_pgm(&bytes).map_err(image_err)
        }
        Some("png") => {
            let img = image::open(path).map_err(|e| image_err(e.to_string()))?.to_luma8();
            let (w, h) = img.dimensions();
            Ok(GrayImage {
                height: h as usize,
                width: w as usize,
                max_value: 255.0,
                pixels: img.into_raw().into_iter().map(f64::from).collect(),
            })
        }
        _ => Err(image_err("unsupported image extension".into())),
    }
}

/// Centre-crop to the target aspect ratio, then bilinear-resize (pixel-centre
/// aligned) to `target_h x target_w`. Upsampling is refused.
pub fn crop_resize(
    pixels: &[f64],
    height: usize,
    width: usize,
    target_h: usize,
    target_w: usize,
) -> std::result::Result<Vec<f64>, String> {
    let (crop_h, crop_w) = if height * target_w > width * target_h {
        (((width * target_h) as f64 / target_w as f64).round() as usize, width)
    } else {
        (height, ((height * target_w) as f64 / target_h as f64).round() as usize)
    };
    if crop_h < target_h || crop_w < target_w {
        return Err(format!(
            "image {height}x{width} is too small for {target_h}x{target_w}"
        ));
    }
    let (top, left) = ((height - crop_h) / 2, (width - crop_w) / 2);
    let at = |r: usize, c: usize| pixels[(top + r) * width + left + c];
    let axis = |i: usize, src: usize, dst: usize| {
        let pos = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        (lo, (lo + 1).min(src - 1), pos - lo as f64)
    };
    let mut out = Vec::with_capacity(target_h * target_w);
    for i in 0..target_h {
        let (r0, r1, fy) = axis(i, crop_h, target_h);
        for j in 0..target_w {
            let (c0, c1, fx) = axis(j, crop_w, target_w);
            let top_row = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
            let bottom_row = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
            out.push(top_row * (1.0 - fy) + bottom_row * fy);
        }
    }
    Ok(out)
}

/// Load every `.pgm` / `.png` in `dir` (lexicographic order) as a 2-D grid
/// of `shape = [h, w]`.
pub fn load_images(dir: &Path, shape: &[usize], normalization: Normalization) -> Result<Dataset> {
    let [target_h, target_w] = *shape else {
        return Err(FrameError::Shape(format!("image shape must be [h, w], got {shape:?}")));
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| {
        matches!(
            p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("pgm" | "png")
        )
    });
    paths.sort();
    if paths.is_empty() {
        return Err(FrameError::Empty(format!("no PGM/PNG images in {}", dir.display())));
    }
    let items = paths
        .iter()
        .map(|path| {
            let img = read_image(path)?;
            let mut values = crop_resize(&img.pixels, img.height, img.width, target_h, target_w)
                .map_err(|message| FrameError::Image {
                    path: path.clone(),
                    message,
                })?;
            match normalization {
                Normalization::None => {}
                Normalization::Global01 => values.iter_mut().for_each(|v| *v /= img.max_value),
                Normalization::PerImage => standardize(&mut values),
            }
            GridSignal::new(vec![target_h, target_w], values)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(items, format!("images:{}", dir.display()))?;
    ds.normalization = normalization;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Sinusoidal stripes, period 6 px, orientation near 45 degrees.
    Stripes,
    /// +-1 checkerboard of 4 px cells with per-cell jitter.
    Checkerboard,
    /// White noise smoothed by a 3x3 box filter, unit variance.
    FilteredNoise,
}

impl std::str::FromStr for TextureKind {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(Self::Stripes),
            "checkerboard" | "checker" => Ok(Self::Checkerboard),
            "noise" | "filtered_noise" => Ok(Self::FilteredNoise),
            other => Err(FrameError::Config(format!("unknown texture kind {other:?}"))),
        }
    }
}

/// Seeded synthetic textures.
pub fn synth_texture(kind: TextureKind, shape: &[usize], seed: u64, count: usize) -> Result<Dataset> {
    if count == 0 {
        return Err(FrameError::Empty("texture count must be >= 1".into()));
    }
    let template = GridSignal::zeros(shape)?;
    let (h, w) = template.dims2();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let items = (0..count)
        .map(|_| {
            let values: Vec<f64> = match kind {
                TextureKind::Stripes => {
                    let angle = PI / 4.0 + 0.1 * normal(&mut rng);
                    let phase = rng.random::<f64>() * 2.0 * PI;
                    let (s, c) = angle.sin_cos();
                    let freq = 2.0 * PI / 6.0;
                    (0..h * w)
                        .map(|p| {
                            let (i, j) = ((p / w) as f64, (p % w) as f64);
                            (freq * (j * c + i * s) + phase).sin() + 0.05 * normal(&mut rng)
                        })
                        .collect()
                }
                TextureKind::Checkerboard => {
                    let cell = 4usize;
                    let (oi, oj) = (rng.random_range(0..cell), rng.random_range(0..cell));
                    let cells_h = (h + 2 * cell) / cell;
                    let cells_w = (w + 2 * cell) / cell;
                    let jitter: Vec<f64> = (0..cells_h * cells_w).map(|_| 0.1 * normal(&mut rng)).collect();
                    (0..h * w)
                        .map(|p| {
                            let (ci, cj) = ((p / w + oi) / cell, (p % w + oj) / cell);
                            let sign = if (ci + cj) % 2 == 0 { 1.0 } else { -1.0 };
                            sign + jitter[ci * cells_w + cj]
                        })
                        .collect()
                }
                TextureKind::FilteredNoise => {
                    let noise: Vec<f64> = (0..h * w).map(|_| normal(&mut rng)).collect();
                    let mut out = vec![0.0; h * w];
                    for i in 0..h {
                        for j in 0..w {
                            let mut acc = 0.0;
                            for di in -1isize..=1 {
                                for dj in -1isize..=1 {
                                    let (r, c) = (i as isize + di, j as isize + dj);
                                    if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                                        acc += noise[r as usize * w + c as usize];
                                    }
                                }
                            }
                            // nine unit-variance terms
                            out[i * w + j] = acc / 3.0;
                        }
                    }
                    out
                }
            };
            GridSignal::new(shape.to_vec(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(items, format!("texture:{kind:?}:{seed}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

/// `count` vectors of length `dim`; each draws a component by weight and then
/// i.i.d. `N(mean, std^2)` coordinates.
pub fn gaussian_mixture(
    dim: usize,
    components: &[MixtureComponent],
    seed: u64,
    count: usize,
) -> Result<Dataset> {
    if components.is_empty() || count == 0 || dim == 0 {
        return Err(FrameError::Empty("mixture needs components, dim and count".into()));
    }
    if components.iter().any(|c| !(c.weight >= 0.0 && c.std >= 0.0)) {
        return Err(FrameError::Config("mixture weights and stds must be >= 0".into()));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return Err(FrameError::Config("mixture weights sum to zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..count)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let comp = components
                .iter()
                .find(|c| {
                    u -= c.weight;
                    u < 0.0
                })
                .unwrap_or(&components[components.len() - 1]);
            let values = (0..dim)
                .map(|_| comp.mean + comp.std * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            GridSignal::from_vec(values)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(items, format!("mixture:{seed}"))
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| FrameError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn export_metrics_csv(trace: &MetricTrace, path: &Path) -> Result<()> {
    write_atomic(path, trace.to_csv().as_bytes())
}

/// Tile `batch` into a PGM with 1-px white separators, mapping the batch's
/// value range affinely onto `[0, 255]`. The mapping is written to a sidecar
/// text file next to the image (same stem, `.txt`).
pub fn export_sample_grid(batch: &[GridSignal], path: &Path) -> Result<()> {
    let (bytes, mapping) = render_sample_grid(batch)?;
    write_atomic(path, &bytes)?;
    write_atomic(&path.with_extension("txt"), mapping.as_bytes())
}

pub fn render_sample_grid(batch: &[GridSignal]) -> Result<(Vec<u8>, String)> {
    let first = batch
        .first()
        .ok_or_else(|| FrameError::Empty("no samples to tile".into()))?;
    let (h, w) = first.dims2();
    let cols = (batch.len() as f64).sqrt().ceil() as usize;
    let rows = batch.len().div_ceil(cols);
    let (grid_h, grid_w) = (rows * h + rows - 1, cols * w + cols - 1);
    let lo = batch.iter().flat_map(|x| x.values()).copied().fold(f64::INFINITY, f64::min);
    let hi = batch.iter().flat_map(|x| x.values()).copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut pixels = vec![255u8; grid_h * grid_w];
    for (n, x) in batch.iter().enumerate() {
        if x.dims2() != (h, w) {
            return Err(FrameError::Shape("samples must share one shape".into()));
        }
        let (r0, c0) = ((n / cols) * (h + 1), (n % cols) * (w + 1));
        for i in 0..h {
            for j in 0..w {
                let v = ((x.values()[i * w + j] - lo) * scale).round().clamp(0.0, 255.0);
                pixels[(r0 + i) * grid_w + c0 + j] = v as u8;
            }
        }
    }
    let mapping = format!(
        "pixel = round((value - offset) * scale)\noffset = {lo}\nscale = {scale}\nmin = {lo}\nmax = {hi}\ntiles = {}\ngrid = {rows}x{cols}\n",
        batch.len()
    );
    Ok((encode_pgm(grid_h, grid_w, &pixels), mapping))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KernelDoc {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BankDoc {
    kind: BankKind,
    kernels: Vec<KernelDoc>,
    biases: Vec<f64>,
    theta: Vec<f64>,
    ref_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChainsDoc {
    shape: Vec<usize>,
    values: Vec<Vec<f64>>,
    iteration: u64,
    steps: u64,
    rng: Vec<ChainRng>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LearnerDoc {
    mode: crate::metrics::Mode,
    iteration: u64,
    config: LearnerConfig,
    sampler: SamplerConfig,
    theta_history: Vec<Vec<f64>>,
    prev_snapshot: Option<Vec<Vec<f64>>>,
    batch_rng: ChaCha8Rng,
    gamma_rng: ChaCha8Rng,
    trace: MetricTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    bank: BankDoc,
    chains: ChainsDoc,
    learner: LearnerDoc,
    config: BTreeMap<String, String>,
}

/// A training state together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub sampler: SamplerConfig,
    pub learner: LearnerConfig,
    /// Flat configuration echo for provenance.
    pub config: BTreeMap<String, String>,
}

pub fn save_checkpoint(ckpt: &Checkpoint) -> Result<String> {
    let state = &ckpt.state;
    let bank = &state.bank;
    let doc = CheckpointDoc {
        version: CHECKPOINT_VERSION,
        bank: BankDoc {
            kind: bank.kind().clone(),
            kernels: bank
                .filters()
                .iter()
                .map(|f| KernelDoc {
                    shape: f.kernel().shape().to_vec(),
                    values: f.kernel().values().to_vec(),
                })
                .collect(),
            biases: bank.filters().iter().map(Filter::bias).collect(),
            theta: bank.theta().to_vec(),
            ref_variance: bank.ref_variance(),
        },
        chains: ChainsDoc {
            shape: state.chains.shape().to_vec(),
            values: state.chains.chains().iter().map(|c| c.values().to_vec()).collect(),
            iteration: state.chains.iteration,
            steps: state.chains.steps,
            rng: state.chains.rngs().to_vec(),
        },
        learner: LearnerDoc {
            mode: ckpt.learner.mode,
            iteration: state.iteration(),
            config: ckpt.learner.clone(),
            sampler: ckpt.sampler.clone(),
            theta_history: state.theta_history.iter().cloned().collect(),
            prev_snapshot: state
                .prev_snapshot
                .as_ref()
                .map(|s| s.iter().map(|x| x.values().to_vec()).collect()),
            batch_rng: state.batch_rng.clone(),
            gamma_rng: state.gamma_rng.clone(),
            trace: state.trace.clone(),
        },
        config: ckpt.config.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn load_checkpoint(text: &str) -> Result<Checkpoint> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(FrameError::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            doc.version
        )));
    }
    let b = doc.bank;
    if b.kernels.len() != b.biases.len() {
        return Err(FrameError::Checkpoint("kernel and bias counts differ".into()));
    }
    let filters = b
        .kernels
        .into_iter()
        .zip(b.biases)
        .map(|(k, bias)| Filter::new(GridSignal::new(k.shape, k.values)?, bias))
        .collect::<Result<Vec<_>>>()?;
    let bank = FilterBank::new(filters, b.theta, b.ref_variance)?.with_kind(b.kind);

    let c = doc.chains;
    let chains = c
        .values
        .into_iter()
        .map(|v| GridSignal::new(c.shape.clone(), v))
        .collect::<Result<Vec<_>>>()?;
    let chains = ChainState::from_parts(chains, c.rng, c.iteration, c.steps)?;

    let l = doc.learner;
    if l.iteration != chains.iteration {
        return Err(FrameError::Checkpoint("learner and chain iterations disagree".into()));
    }
    let prev_snapshot = l
        .prev_snapshot
        .map(|s| {
            s.into_iter()
                .map(|v| GridSignal::new(c.shape.clone(), v))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let state = TrainState {
        bank,
        chains,
        prev_snapshot,
        trace: l.trace,
        batch_rng: l.batch_rng,
        gamma_rng: l.gamma_rng,
        theta_history: VecDeque::from(l.theta_history),
    };
    Ok(Checkpoint {
        state,
        sampler: l.sampler,
        learner: l.config,
        config: doc.config,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, save_checkpoint(ckpt)?.as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let mut bytes = b"P5\n# comment line\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!((img.height, img.width, img.max_value), (2, 3, 255.0));
        assert_eq!(img.pixels, vec![0.0, 10.0, 20.0, 30.0, 40.0, 255.0]);
        let again = parse_pgm(&encode_pgm(2, 3, &[0, 10, 20, 30, 40, 255])).unwrap();
        assert_eq!(again, img);
    }

    #[test]
    fn pgm_sixteen_bit() {
        let mut bytes = b"P5 1 2 1000\n".to_vec();
        bytes.extend_from_slice(&[0x03, 0xE8, 0x00, 0x01]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.pixels, vec![1000.0, 1.0]);
    }

    #[test]
    fn pgm_errors() {
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x01").is_err());
        assert!(parse_pgm(b"P5\n").is_err());
    }

    #[test]
    fn crop_to_aspect_then_identity() {
        // 2x4 -> 2x2 keeps the middle two columns
        let px: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(crop_resize(&px, 2, 4, 2, 2).unwrap(), vec![1.0, 2.0, 5.0, 6.0]);
        assert!(crop_resize(&px, 2, 4, 3, 3).is_err());
    }

    #[test]
    fn texture_generators_are_seeded() {
        for kind in [TextureKind::Stripes, TextureKind::Checkerboard, TextureKind::FilteredNoise] {
            let a = synth_texture(kind, &[16, 16], 4, 3).unwrap();
            let b = synth_texture(kind, &[16, 16], 4, 3).unwrap();
            let c = synth_texture(kind, &[16, 16], 5, 3).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
            assert_ne!(a.items()[0], a.items()[1]);
        }
    }

    #[test]
    fn standardize_once() {
        let ds = synth_texture(TextureKind::Stripes, &[8, 8], 1, 2).unwrap().standardized().unwrap();
        for x in ds.items() {
            assert!(x.mean().abs() < 1e-12);
            assert!((x.norm_sq() / x.len() as f64 - 1.0).abs() < 1e-12);
        }
        assert!(ds.standardized().is_err());
    }

    #[test]
    fn grid_layout_and_mapping() {
        let batch: Vec<GridSignal> = (0..5)
            .map(|n| GridSignal::new(vec![2, 3], vec![n as f64; 6]).unwrap())
            .collect();
        let (bytes, mapping) = render_sample_grid(&batch).unwrap();
        let img = parse_pgm(&bytes).unwrap();
        // 3 columns, 2 rows of 2x3 tiles with 1-px separators
        assert_eq!((img.height, img.width), (5, 11));
        assert_eq!(img.pixels[0], 0.0);
        assert_eq!(img.pixels[3], 255.0); // separator column
        assert_eq!(img.pixels[3 * 11 + 4], 255.0); // tile 4 (value 4 = max)
        assert!(mapping.contains("min = 0") && mapping.contains("max = 4"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
