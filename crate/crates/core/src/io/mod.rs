//! Run configuration, persistence and plots.

mod plot;
mod trajectory;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{GenConfig, ShiftSpec, SplitSizes};
use crate::model::{masked_count, validate_tasks, MaskStrategy, ModelConfig, TaskKind, TaskSpec};
use crate::objectives::LossWeights;
use crate::runner::{AdaptConfig, MaskSetting, OptimConfig};
use crate::{Error, Result};

pub use plot::{render_plot, render_plot_file, PlotOptions};
pub use trajectory::{
    format_sig6, read_trajectory_csv, write_trajectory_csv, CSV_HEADER, CSV_VERSION_LINE,
};

/// Environment variable overriding [`RunConfig::outdir`].
pub const OUT_ENV: &str = "S4T_OUT";

/// Scene seeds of run seed `s` start at `s << SEED_SHIFT`.
pub const SEED_SHIFT: u32 = 24;

fn default_tasks() -> Vec<TaskSpec> {
    TaskSpec::default_tasks(GenConfig::default().label_classes())
}

fn default_test() -> OptimConfig {
    OptimConfig::test_default()
}

fn default_shift() -> ShiftSpec {
    ShiftSpec::desk_target()
}

/// Everything a run needs. Only `seeds` and `outdir` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub train: OptimConfig,
    #[serde(default = "default_test")]
    pub test: OptimConfig,
    /// Masking while training the synchronizer.
    #[serde(default)]
    pub train_mask: MaskSetting,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub splits: SplitSizes,
    /// Target-domain shift.
    #[serde(default = "default_shift")]
    pub shift: ShiftSpec,
    pub seeds: Vec<u64>,
    pub outdir: PathBuf,
}

impl RunConfig {
    /// All defaults with the given seeds and output directory.
    pub fn new(seeds: Vec<u64>, outdir: impl Into<PathBuf>) -> Self {
        Self {
            model: ModelConfig::default(),
            tasks: default_tasks(),
            weights: LossWeights::default(),
            train: OptimConfig::train_default(),
            test: OptimConfig::test_default(),
            train_mask: MaskSetting::default(),
            adapt: AdaptConfig::default(),
            gen: GenConfig::default(),
            splits: SplitSizes::default(),
            shift: ShiftSpec::desk_target(),
            seeds,
            outdir: outdir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level and cross-field checks.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if self.outdir.as_os_str().is_empty() {
            return Err(Error::Config("outdir: must not be empty".into()));
        }
        self.model.validate()?;
        validate_tasks(&self.tasks)?;
        self.gen.validate()?;
        self.shift.validate()?;
        self.train.validate().map_err(|e| prefix("train", e))?;
        self.test.validate().map_err(|e| prefix("test", e))?;
        self.adapt.validate(&self.tasks)?;
        if self.model.image_size != self.gen.size {
            return Err(Error::Config(format!(
                "model.image_size {} differs from gen.size {}",
                self.model.image_size, self.gen.size
            )));
        }
        for t in &self.tasks {
            if let TaskKind::CategoricalMap { classes } = t.kind {
                if classes != self.gen.label_classes() {
                    return Err(Error::Config(format!(
                        "tasks.{}: {classes} classes but gen.classes gives {} labels (background included)",
                        t.name,
                        self.gen.label_classes()
                    )));
                }
            }
        }
        let patches = self.model.grid() * self.model.grid();
        for (field, m) in [
            ("train_mask", self.train_mask),
            ("adapt", self.adapt.mask()),
        ] {
            if !(0.0..=1.0).contains(&m.ratio) {
                return Err(Error::Config(format!(
                    "{field}: mask ratio {} outside [0, 1]",
                    m.ratio
                )));
            }
            if let Some(lo) = m.min_ratio {
                if !(0.0..=m.ratio).contains(&lo) {
                    return Err(Error::Config(format!(
                        "{field}: min_ratio {lo} outside [0, {}]",
                        m.ratio
                    )));
                }
            }
            let per = masked_count(m.ratio, patches);
            if m.strategy == MaskStrategy::NonOverlap && self.tasks.len() * per > patches {
                return Err(Error::Config(format!(
                    "{field}: non-overlap masking of {} tasks × {per} patches exceeds the {patches}-patch grid",
                    self.tasks.len()
                )));
            }
        }
        if self.splits.source_train < self.train.batch_size {
            return Err(Error::Config(
                "splits.source_train is smaller than train.batch_size".into(),
            ));
        }
        if self.splits.target < self.test.batch_size {
            return Err(Error::Config(
                "splits.target is smaller than test.batch_size".into(),
            ));
        }
        let total = self.splits.source_train + self.splits.source_val + self.splits.target;
        if total as u64 >= 1 << SEED_SHIFT {
            return Err(Error::Config(format!(
                "splits: {total} scenes exceed the per-seed range"
            )));
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn resolved_outdir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.outdir.clone(),
        }
    }

    /// First scene seed of a run seed.
    pub fn scene_base(seed: u64) -> u64 {
        seed << SEED_SHIFT
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

fn prefix(field: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{field}.{m}")),
        other => other,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    write_text(path, &cfg.to_json())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Write a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
