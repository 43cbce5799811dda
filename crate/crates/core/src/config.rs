//! Flat key-value run configuration and the shipped presets.
//!
//! A configuration document is a TOML file with top-level keys only. Keys
//! start from the chosen `preset`, then the document, then `--set`
//! overrides are applied in order. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bank::{FilterBank, GaborSpec};
use crate::error::{FrameError, Result};
use crate::io::{gaussian_mixture, load_images, synth_texture, Dataset, MixtureComponent, Normalization, TextureKind};
use crate::learner::{GammaSource, LearnerConfig};
use crate::metrics::Mode;
use crate::sampler::{InitKind, SamplerConfig};

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "preset",
    "mode",
    "seed",
    "dataset",
    "dataset_path",
    "dataset_count",
    "height",
    "width",
    "normalization",
    "bank",
    "bank_filters",
    "kernel_size",
    "gabor_orientations",
    "gabor_wavelengths",
    "bias",
    "ref_variance",
    "delta",
    "steps_per_iter",
    "noise_std",
    "use_reference_drift",
    "include_w2_drift",
    "init",
    "lambda",
    "beta",
    "gamma",
    "iters",
    "clip_lo",
    "clip_hi",
    "batch_obs",
    "batch_syn",
    "grid_every",
];

pub const REQUIRED_KEYS: &[&str] = &["dataset"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Decoupled reference variance and noise scale; moderate learning rate.
    StableDefault,
    /// Learning rate raised past the point where FRAME weights run away.
    Stress,
    /// The stress setting with weight clipping switched on.
    ClipBaseline,
    /// The single sigma = 0.01 read literally as reference std and noise std.
    PaperLiteral,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::StableDefault,
        Preset::Stress,
        Preset::ClipBaseline,
        Preset::PaperLiteral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::StableDefault => "stable-default",
            Preset::Stress => "stress",
            Preset::ClipBaseline => "clip-baseline",
            Preset::PaperLiteral => "paper-literal",
        }
    }

    /// Key-value pairs the preset sets (everything except `dataset`).
    pub fn entries(self) -> Vec<(&'static str, &'static str)> {
        let mut kv = vec![
            ("mode", "wframe"),
            ("seed", "0"),
            ("dataset_count", "64"),
            ("height", "16"),
            ("width", "16"),
            ("normalization", "none"),
            ("bank", "gabor"),
            ("bank_filters", "8"),
            ("kernel_size", "5"),
            ("gabor_orientations", "4"),
            ("gabor_wavelengths", "3,6"),
            ("bias", "0"),
            ("ref_variance", "1"),
            ("delta", "0.4"),
            ("steps_per_iter", "50"),
            ("noise_std", "1"),
            ("use_reference_drift", "true"),
            ("include_w2_drift", "false"),
            ("init", "zeros"),
            ("lambda", "0.003"),
            ("beta", "0.0001"),
            ("gamma", "uniform"),
            ("iters", "100"),
            ("batch_obs", "9"),
            ("batch_syn", "9"),
            ("grid_every", "10"),
        ];
        let mut set = |key: &'static str, value: &'static str| {
            if let Some(slot) = kv.iter_mut().find(|(k, _)| *k == key) {
                slot.1 = value;
            } else {
                kv.push((key, value));
            }
        };
        match self {
            Preset::StableDefault => {}
            Preset::Stress => set("lambda", "0.005"),
            Preset::ClipBaseline => {
                set("lambda", "0.005");
                set("clip_lo", "-1");
                set("clip_hi", "1");
            }
            Preset::PaperLiteral => {
                set("ref_variance", "0.0001");
                set("noise_std", "0.01");
                set("delta", "0.2");
                set("lambda", "0.001");
                set("beta", "60");
            }
        }
        kv
    }
}

impl FromStr for Preset {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| FrameError::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Texture(TextureKind),
    /// 1-D two-component Gaussian mixture of vectors of length `width`.
    Mixture,
    Images(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BankSource {
    Gabor,
    Random,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub dataset: DatasetSource,
    pub dataset_count: usize,
    pub shape: Vec<usize>,
    pub normalization: Normalization,
    pub bank: BankSource,
    pub bank_filters: usize,
    pub kernel_size: usize,
    pub gabor_orientations: usize,
    pub gabor_wavelengths: Vec<f64>,
    pub bias: f64,
    pub ref_variance: f64,
    pub init: InitKind,
    pub sampler: SamplerConfig,
    pub learner: LearnerConfig,
    pub grid_every: u64,
    /// Resolved key-value pairs, echoed into every output.
    pub echo: BTreeMap<String, String>,
}

fn toml_scalar(key: &str, value: &toml::Value) -> Result<String> {
    use toml::Value;
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        Value::Array(items) => Ok(items
            .iter()
            .map(|v| toml_scalar(key, v))
            .collect::<Result<Vec<_>>>()?
            .join(",")),
        _ => Err(FrameError::Config(format!(
            "key {key:?}: nested tables are not allowed in a flat configuration"
        ))),
    }
}

/// Parse a flat TOML document into key-value strings.
pub fn parse_document(text: &str) -> Result<Vec<(String, String)>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| FrameError::Config(e.to_string()))?;
    table
        .iter()
        .map(|(k, v)| Ok((k.clone(), toml_scalar(k, v)?)))
        .collect()
}

/// Split a `key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| FrameError::Config(format!("override {text:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().trim_matches('"').to_string()))
}

fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| FrameError::Config(format!("missing required key {key:?}")))?;
    raw.parse()
        .map_err(|_| FrameError::Config(format!("key {key:?}: cannot parse {raw:?}")))
}

impl RunConfig {
    /// Resolve `pairs` (document entries followed by overrides) on top of
    /// the preset named by the last `preset` entry, or `stable-default`.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self> {
        for (k, _) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(FrameError::Config(format!("unknown key {k:?}")));
            }
        }
        let preset: Preset = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Preset::StableDefault);
        let mut map: BTreeMap<String, String> = preset
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        map.insert("preset".into(), preset.name().into());
        for (k, v) in pairs {
            map.insert(k.clone(), v.clone());
        }
        for key in REQUIRED_KEYS {
            if !map.contains_key(*key) {
                return Err(FrameError::Config(format!("missing required key {key:?}")));
            }
        }
        Self::from_map(preset, map)
    }

    pub fn from_document(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_document(text)?;
        pairs.extend_from_slice(overrides);
        Self::resolve(&pairs)
    }

    fn from_map(preset: Preset, map: BTreeMap<String, String>) -> Result<Self> {
        let dataset = match map["dataset"].as_str() {
            "mixture" => DatasetSource::Mixture,
            "images" => DatasetSource::Images(PathBuf::from(get::<String>(&map, "dataset_path")?)),
            other => DatasetSource::Texture(other.parse()?),
        };
        let shape = match dataset {
            DatasetSource::Mixture => vec![get::<usize>(&map, "width")?],
            _ => vec![get::<usize>(&map, "height")?, get::<usize>(&map, "width")?],
        };
        let bank = match map["bank"].as_str() {
            "gabor" => BankSource::Gabor,
            "random" => BankSource::Random,
            other => return Err(FrameError::Config(format!("unknown bank {other:?}"))),
        };
        let gabor_wavelengths = map["gabor_wavelengths"]
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| FrameError::Config(format!("bad wavelength {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let ref_variance: f64 = get(&map, "ref_variance")?;
        let init = match map["init"].as_str() {
            "zeros" => InitKind::Zeros,
            "gaussian" => InitKind::Gaussian {
                std: ref_variance.sqrt(),
            },
            other => return Err(FrameError::Config(format!("unknown init {other:?}"))),
        };
        let gamma_source = match map["gamma"].as_str() {
            "uniform" => GammaSource::Uniform01,
            fixed => GammaSource::Fixed {
                gamma: fixed
                    .parse()
                    .map_err(|_| FrameError::Config(format!("bad gamma {fixed:?}")))?,
            },
        };
        let clip_bounds = match (map.get("clip_lo"), map.get("clip_hi")) {
            (None, None) => None,
            (Some(_), Some(_)) => Some((get(&map, "clip_lo")?, get(&map, "clip_hi")?)),
            _ => return Err(FrameError::Config("clip_lo and clip_hi must be set together".into())),
        };
        let sampler = SamplerConfig {
            delta: get(&map, "delta")?,
            steps_per_iter: get(&map, "steps_per_iter")?,
            noise_std: get(&map, "noise_std")?,
            use_reference_drift: get(&map, "use_reference_drift")?,
            include_w2_drift: get(&map, "include_w2_drift")?,
        };
        let learner = LearnerConfig {
            lambda: get(&map, "lambda")?,
            beta: get(&map, "beta")?,
            gamma_source,
            iters: get(&map, "iters")?,
            clip_bounds,
            mode: get(&map, "mode")?,
            batch_obs: get(&map, "batch_obs")?,
            batch_syn: get(&map, "batch_syn")?,
        };
        sampler.validate()?;
        learner.validate()?;
        let cfg = RunConfig {
            preset,
            seed: get(&map, "seed")?,
            dataset,
            dataset_count: get(&map, "dataset_count")?,
            shape,
            normalization: get(&map, "normalization")?,
            bank,
            bank_filters: get(&map, "bank_filters")?,
            kernel_size: get(&map, "kernel_size")?,
            gabor_orientations: get(&map, "gabor_orientations")?,
            gabor_wavelengths,
            bias: get(&map, "bias")?,
            ref_variance,
            init,
            sampler,
            learner,
            grid_every: get(&map, "grid_every")?,
            echo: map,
        };
        Ok(cfg)
    }

    /// Same configuration with one key replaced (re-validated).
    pub fn with(&self, key: &str, value: impl ToString) -> Result<Self> {
        let pairs: Vec<(String, String)> = self
            .echo
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .chain(std::iter::once((key.to_string(), value.to_string())))
            .collect();
        Self::resolve(&pairs)
    }

    pub fn mode(&self) -> Mode {
        self.learner.mode
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        let data_seed = self.seed.wrapping_add(0x5eed);
        let ds = match &self.dataset {
            DatasetSource::Texture(kind) => {
                let ds = synth_texture(*kind, &self.shape, data_seed, self.dataset_count)?;
                match self.normalization {
                    Normalization::None => ds,
                    Normalization::PerImage => ds.standardized()?,
                    Normalization::Global01 => {
                        return Err(FrameError::Config(
                            "global01 normalization applies to image files only".into(),
                        ))
                    }
                }
            }
            DatasetSource::Mixture => {
                let components = [
                    MixtureComponent { mean: -1.5, std: 0.5, weight: 0.5 },
                    MixtureComponent { mean: 1.5, std: 0.5, weight: 0.5 },
                ];
                gaussian_mixture(self.shape[0], &components, data_seed, self.dataset_count)?
            }
            DatasetSource::Images(dir) => load_images(dir, &self.shape, self.normalization)?,
        };
        Ok(ds)
    }

    pub fn build_bank(&self) -> Result<FilterBank> {
        match self.bank {
            BankSource::Gabor => {
                if self.shape.len() != 2 {
                    return Err(FrameError::Config("Gabor banks need 2-D signals".into()));
                }
                let spec = GaborSpec {
                    size: self.kernel_size,
                    orientations: self.gabor_orientations,
                    wavelengths: self.gabor_wavelengths.clone(),
                    bias: self.bias,
                };
                FilterBank::gabor(&spec, self.ref_variance)
            }
            BankSource::Random => {
                let kernel = vec![self.kernel_size; self.shape.len()];
                FilterBank::random(self.bank_filters, &kernel, self.seed.wrapping_add(0xba4c), self.ref_variance)
            }
        }
    }
}
