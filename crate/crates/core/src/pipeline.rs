//! Seeded experiment steps shared by the command line, the examples and the
//! acceptance tests. Everything here is a pure function of the run
//! configuration and the seed.

use serde::{Deserialize, Serialize};

use crate::bench::{make_dataset, stream_batches, Batch, Datasets, ShiftSpec};
use crate::io::{sha256_hex, RunConfig};
use crate::model::{Components, ModelParams};
use crate::objectives::SourceStats;
use crate::runner::{
    adapt_online, evaluate, train_source, AdaptConfig, AdaptOutput, Objective, TrainOutput,
};
use crate::sync::MethodReport;
use crate::Result;

pub const TRAIN_LOG_EVERY: usize = 100;

pub fn datasets(cfg: &RunConfig, seed: u64) -> Result<Datasets> {
    datasets_with_shift(cfg, seed, &cfg.shift)
}

/// The run's splits with a different target shift; the source splits do not
/// depend on the shift.
pub fn datasets_with_shift(cfg: &RunConfig, seed: u64, shift: &ShiftSpec) -> Result<Datasets> {
    make_dataset(&cfg.gen, shift, cfg.splits, RunConfig::scene_base(seed))
}

pub fn train(cfg: &RunConfig, seed: u64, data: &Datasets) -> Result<TrainOutput> {
    train_source(
        &cfg.model,
        &cfg.tasks,
        &data.source_train,
        &cfg.train,
        &cfg.weights,
        cfg.train_mask,
        seed,
        TRAIN_LOG_EVERY,
    )
}

/// Hash of everything that determines the trained source model.
pub fn train_hash(cfg: &RunConfig, seed: u64) -> String {
    let key = serde_json::json!({
        "model": cfg.model,
        "tasks": cfg.tasks,
        "weights": [cfg.weights.tbs_train, cfg.weights.tp_train],
        "train": cfg.train,
        "train_mask": cfg.train_mask,
        "gen": cfg.gen,
        "source_train": cfg.splits.source_train,
        "seed": seed,
    });
    sha256_hex(key.to_string().as_bytes())
}

pub fn target_stream(cfg: &RunConfig, data: &Datasets) -> Result<Vec<Batch>> {
    stream_batches(&data.target, cfg.test.batch_size, &cfg.tasks)
}

/// Per-task metrics of `params` on the source validation split and on the
/// target split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<String>,
    pub source_val: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn eval(cfg: &RunConfig, params: &ModelParams<f32>, data: &Datasets) -> Result<EvalReport> {
    let bs = cfg.test.batch_size;
    let val = if data.source_val.len() >= bs {
        evaluate(
            &cfg.model,
            &cfg.tasks,
            params,
            &stream_batches(&data.source_val, bs, &cfg.tasks)?,
        )?
    } else {
        Vec::new()
    };
    let target = evaluate(&cfg.model, &cfg.tasks, params, &target_stream(cfg, data)?)?;
    Ok(EvalReport {
        tasks: cfg.tasks.iter().map(|t| t.name.clone()).collect(),
        source_val: val,
        target,
    })
}

/// The run's adaptation settings with the objective replaced and the mask
/// seed taken from the run seed.
pub fn adapt_config(cfg: &RunConfig, seed: u64, objective: Objective) -> AdaptConfig {
    AdaptConfig {
        objective,
        seed,
        ..cfg.adapt.clone()
    }
}

pub fn adapt(
    cfg: &RunConfig,
    adapt: &AdaptConfig,
    params: &ModelParams<f32>,
    stats: Option<&SourceStats>,
    stream: &[Batch],
) -> Result<AdaptOutput> {
    adapt_online(
        &cfg.model,
        &cfg.tasks,
        params,
        stream,
        adapt,
        &cfg.test,
        &cfg.weights,
        stats,
    )
}

/// Adapt and summarize.
pub fn adapt_report(
    cfg: &RunConfig,
    adapt_cfg: &AdaptConfig,
    params: &ModelParams<f32>,
    stats: Option<&SourceStats>,
    stream: &[Batch],
) -> Result<(AdaptOutput, MethodReport)> {
    let out = adapt(cfg, adapt_cfg, params, stats, stream)?;
    let report = MethodReport::from_trajectory(adapt_cfg.objective.as_str(), &out.trajectory)?;
    Ok((out, report))
}

/// Component configurations of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// No test-time training.
    NoTtt,
    /// Synchronizer on the shared latent, without masking.
    TbsOnly,
    /// Synchronizer on task-specific projections, without masking.
    TbsProjection,
    /// Everything on.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoTtt,
        Ablation::TbsOnly,
        Ablation::TbsProjection,
        Ablation::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoTtt => "no-ttt",
            Ablation::TbsOnly => "tbs",
            Ablation::TbsProjection => "tbs+projection",
            Ablation::Full => "tbs+projection+masking",
        }
    }

    pub fn components(self) -> Components {
        let (tbs, projection, masking) = match self {
            Ablation::NoTtt | Ablation::Full => (true, true, true),
            Ablation::TbsOnly => (true, false, false),
            Ablation::TbsProjection => (true, true, false),
        };
        Components {
            tbs,
            projection,
            masking,
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            Ablation::NoTtt => Objective::None,
            _ => Objective::S4t,
        }
    }

    /// `cfg` with this configuration's component switches.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.model.components = self.components();
        c.adapt.objective = self.objective();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_switches_are_independent() {
        let cs: Vec<Components> = Ablation::ALL.iter().map(|a| a.components()).collect();
        assert!(!cs[1].projection && !cs[1].masking && cs[1].tbs);
        assert!(cs[2].projection && !cs[2].masking);
        assert_eq!(cs[3], Components::default());
        let cfg = RunConfig::new(vec![0], "o");
        assert_eq!(Ablation::NoTtt.apply(&cfg).adapt.objective, Objective::None);
        Ablation::TbsOnly.apply(&cfg).validate().unwrap();
    }

    #[test]
    fn train_hash_ignores_target_side_settings() {
        let a = RunConfig::new(vec![0], "o");
        let mut b = a.clone();
        b.shift.alpha = 0.9;
        b.adapt.steps = 3;
        b.test.lr = 1.0;
        assert_eq!(train_hash(&a, 0), train_hash(&b, 0));
        b.train.iterations = 7;
        assert_ne!(train_hash(&a, 0), train_hash(&b, 0));
        assert_ne!(train_hash(&a, 0), train_hash(&a, 1));
    }
}
