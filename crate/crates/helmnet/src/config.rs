//! Experiment configuration.
//!
//! A TOML file with the sections `[grid]`, `[frequency]`, `[slowness]`,
//! `[vcycle]`, `[krylov]`, `[network]` and `[training]`. Every key has a
//! default, and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use helmnet_core::{
    slw, Attenuation, HelmholtzProblem, KrylovConfig, ProblemGrid, Shift, SlownessSquared, VCycleConfig,
};
use helmnet_nn::UNetConfig;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, derive_seed, GaussianBlur, GenerationPlan};
use crate::error::{Error, Result};
use crate::network::{NetworkKind, INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::precond::PrecondKind;
use crate::training::{RetrainConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    /// Absorbing layer width in cells.
    pub absorbing_width: usize,
    pub gamma_max: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 128,
            ny: 128,
            absorbing_width: 10,
            gamma_max: 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrequencySection {
    pub omega: f64,
}

impl Default for FrequencySection {
    fn default() -> Self {
        Self {
            omega: 20.0 * std::f64::consts::PI,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlownessSource {
    /// Gaussian bumps and a ramp.
    Synthetic,
    /// Generated flat-shape pictures through the image pipeline.
    Procedural,
    /// Image files from `image_dir` through the image pipeline.
    Images,
    /// SLW1 files from `models_dir`.
    Files,
    /// The constant `value`.
    Homogeneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlownessSection {
    pub source: SlownessSource,
    pub range: (f64, f64),
    pub count: usize,
    pub seed: u64,
    pub blur_size: usize,
    pub blur_sigma: f64,
    pub image_dir: PathBuf,
    pub models_dir: PathBuf,
    pub value: f64,
    /// Side of generated pictures for the procedural source.
    pub image_size: usize,
}

impl Default for SlownessSection {
    fn default() -> Self {
        Self {
            source: SlownessSource::Synthetic,
            range: (0.25, 1.0),
            count: 50,
            seed: 0,
            blur_size: 5,
            blur_sigma: 1.0,
            image_dir: PathBuf::from("images"),
            models_dir: PathBuf::from("models"),
            value: 1.0,
            image_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VCycleSection {
    pub levels: usize,
    pub nu1: usize,
    pub nu2: usize,
    pub damping: f64,
    pub shift_alpha: f64,
    pub shift_beta: f64,
    pub coarse_iters: usize,
}

impl Default for VCycleSection {
    fn default() -> Self {
        let d = VCycleConfig::default();
        Self {
            levels: d.levels,
            nu1: d.nu1,
            nu2: d.nu2,
            damping: d.damping,
            shift_alpha: d.shift.alpha,
            shift_beta: d.shift.beta,
            coarse_iters: d.coarse_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrylovSection {
    pub restart: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub flexible: bool,
    /// Right-hand sides solved together.
    pub rhs: usize,
    pub seed: u64,
    pub preconditioners: Vec<PrecondKind>,
    /// Residual drop defining the convergence factor.
    pub target_drop: f64,
}

impl Default for KrylovSection {
    fn default() -> Self {
        let d = KrylovConfig::default();
        Self {
            restart: d.restart,
            max_iters: d.max_iters,
            rel_tol: d.rel_tol,
            flexible: d.flexible,
            rhs: 10,
            seed: 0,
            preconditioners: vec![PrecondKind::V],
            target_drop: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub kind: NetworkKind,
    pub levels: usize,
    pub base_channels: usize,
    pub resnet_per_level: usize,
    pub bottleneck_resnets: usize,
    pub seed: u64,
    pub checkpoint: PathBuf,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = UNetConfig::default();
        Self {
            kind: NetworkKind::Standalone,
            levels: d.levels,
            base_channels: d.base_channels,
            resnet_per_level: d.resnet_per_level,
            bottleneck_resnets: d.bottleneck_resnets,
            seed: 0,
            checkpoint: PathBuf::from("unet.unw"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr0: f32,
    pub batch0: usize,
    pub t0: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub residual_loss_weight: f32,
    pub samples_per_model: usize,
    pub augment_fraction: f64,
    pub dataset: PathBuf,
    pub retrain_pairs: usize,
    pub retrain_epochs: usize,
    pub retrain_lr_divisor: f32,
    pub retrain_batch: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = RetrainConfig::default();
        Self {
            epochs: t.epochs,
            lr0: t.lr0,
            batch0: t.batch0,
            t0: t.t0,
            val_fraction: t.val_fraction,
            seed: t.seed,
            residual_loss_weight: t.residual_loss_weight,
            samples_per_model: 40,
            augment_fraction: 0.5,
            dataset: PathBuf::from("data"),
            retrain_pairs: r.pairs,
            retrain_epochs: r.epochs,
            retrain_lr_divisor: r.lr_divisor,
            retrain_batch: r.batch,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub frequency: FrequencySection,
    pub slowness: SlownessSection,
    pub vcycle: VCycleSection,
    pub krylov: KrylovSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
}

fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v was written"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after applying `section.key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            let (path, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key `{path}` is not section.key")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let sec = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{section}` is not a section")))?;
            sec.insert(key.to_string(), parse_value(value.trim()));
        }
        let cfg: Self = table.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.vcycle_config().validate()?;
        self.krylov_config().validate()?;
        self.train_config().validate()?;
        self.blur().validate()?;
        self.unet_config().validate()?;
        if self.krylov.rhs == 0 || !(self.krylov.target_drop > 1.0) {
            return Err(Error::Config("krylov.rhs must be >= 1 and target_drop > 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<ProblemGrid> {
        Ok(ProblemGrid::new(self.grid.nx, self.grid.ny)?)
    }

    pub fn attenuation(&self) -> Result<Attenuation> {
        let g = self.grid()?;
        if self.grid.absorbing_width == 0 {
            return Ok(Attenuation::zeros(g.nx(), g.ny()));
        }
        Ok(Attenuation::absorbing_layer(&g, self.grid.absorbing_width, self.grid.gamma_max)?)
    }

    pub fn problem(&self, kappa2: SlownessSquared) -> Result<HelmholtzProblem> {
        Ok(HelmholtzProblem::new(self.grid()?, self.frequency.omega, kappa2, self.attenuation()?)?)
    }

    pub fn blur(&self) -> GaussianBlur {
        GaussianBlur {
            size: self.slowness.blur_size,
            sigma: self.slowness.blur_sigma,
        }
    }

    pub fn vcycle_config(&self) -> VCycleConfig {
        let v = &self.vcycle;
        VCycleConfig {
            levels: v.levels,
            nu1: v.nu1,
            nu2: v.nu2,
            damping: v.damping,
            shift: Shift {
                alpha: v.shift_alpha,
                beta: v.shift_beta,
            },
            coarse_iters: v.coarse_iters,
        }
    }

    pub fn krylov_config(&self) -> KrylovConfig {
        KrylovConfig {
            restart: self.krylov.restart,
            max_iters: self.krylov.max_iters,
            rel_tol: self.krylov.rel_tol,
            flexible: self.krylov.flexible,
        }
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            levels: self.network.levels,
            base_channels: self.network.base_channels,
            resnet_per_level: self.network.resnet_per_level,
            bottleneck_resnets: self.network.bottleneck_resnets,
            in_channels: INPUT_CHANNELS,
            out_channels: OUTPUT_CHANNELS,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            lr0: t.lr0,
            batch0: t.batch0,
            t0: t.t0,
            val_fraction: t.val_fraction,
            seed: t.seed,
            residual_loss_weight: t.residual_loss_weight,
        }
    }

    pub fn retrain_config(&self) -> RetrainConfig {
        let t = &self.training;
        RetrainConfig {
            pairs: t.retrain_pairs,
            epochs: t.retrain_epochs,
            lr_divisor: t.retrain_lr_divisor,
            batch: t.retrain_batch,
        }
    }

    pub fn generation_plan(&self) -> GenerationPlan {
        GenerationPlan {
            samples_per_model: self.training.samples_per_model,
            augment_fraction: self.training.augment_fraction,
        }
    }

    /// Model `m` of the configured slowness source.
    pub fn slowness_model(&self, m: usize) -> Result<SlownessSquared> {
        let s = &self.slowness;
        let grid = self.grid()?;
        let seed = derive_seed(s.seed, m as u64);
        match s.source {
            SlownessSource::Synthetic => datagen::synthetic_slowness(seed, &grid, s.range, self.blur()),
            SlownessSource::Procedural => {
                let img = datagen::procedural_image(seed, s.image_size, s.image_size);
                datagen::image_to_slowness(&img, &grid, s.range, self.blur())
            }
            SlownessSource::Images => {
                let files = list_files(&s.image_dir, &["png", "jpg", "jpeg", "bmp", "pgm", "ppm"])?;
                let path = files.get(m).ok_or_else(|| {
                    Error::InvalidArgument(format!("{} holds only {} images", s.image_dir.display(), files.len()))
                })?;
                datagen::image_to_slowness(&datagen::load_image(path)?, &grid, s.range, self.blur())
            }
            SlownessSource::Files => {
                let files = list_files(&s.models_dir, &["slw"])?;
                let path = files.get(m).ok_or_else(|| {
                    Error::InvalidArgument(format!("{} holds only {} models", s.models_dir.display(), files.len()))
                })?;
                Ok(SlownessSquared::new(slw::load(path)?, s.range)?)
            }
            SlownessSource::Homogeneous => {
                let (lo, hi) = s.range;
                let range = (lo.min(s.value), hi.max(s.value));
                Ok(SlownessSquared::new(
                    helmnet_core::RealField::filled(grid.nx(), grid.ny(), s.value),
                    range,
                )?)
            }
        }
    }

    /// The first `slowness.count` models.
    pub fn slowness_models(&self) -> Result<Vec<SlownessSquared>> {
        (0..self.slowness.count).map(|m| self.slowness_model(m)).collect()
    }
}

/// Files in `dir` with one of the extensions, sorted by name.
pub fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}
