//! The multi-task network: shared encoder, per-task projections with
//! auxiliary predictors, main decoders, latent masking and the task behavior
//! synchronizer (TBS).
//!
//! The main branch (`encoder → projection → decoder`) never reads any TBS
//! parameter; the TBS branch (`projection → mask → transformer`) exists only
//! to provide a training signal.

mod affinity;
mod build;
mod checkpoint;
mod mask;

pub use affinity::{task_affinity, AffinityMatrix};
pub use build::{GraphKind, ModelBuilder, ModelGraph, TttObjective};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use mask::{
    apply_mask, hidden_task_count, make_mask, masked_count, MaskError, MaskPlan, MaskStrategy,
};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor, TensorMap};

/// What a task predicts at every pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum TaskKind {
    CategoricalMap { classes: usize },
    ScalarMap,
    UnitVectorMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossId {
    CrossEntropy,
    MeanAbsolute,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricId {
    MeanIou,
    Rmse,
    AngularError,
}

impl MetricId {
    pub fn higher_better(self) -> bool {
        matches!(self, MetricId::MeanIou)
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        [MetricId::MeanIou, MetricId::Rmse, MetricId::AngularError]
            .into_iter()
            .find(|m| m.short_name() == s)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            MetricId::MeanIou => "miou",
            MetricId::Rmse => "rmse",
            MetricId::AngularError => "merr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub loss: LossId,
    pub metric: MetricId,
    pub higher_better: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("task `{task}`: {detail}")]
    InvalidTask { task: String, detail: String },
    #[error("task list is empty")]
    NoTasks,
    #[error("duplicate task name `{0}`")]
    DuplicateTask(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

impl TaskSpec {
    pub fn semseg(classes: usize) -> Self {
        Self {
            name: "semseg".into(),
            kind: TaskKind::CategoricalMap { classes },
            loss: LossId::CrossEntropy,
            metric: MetricId::MeanIou,
            higher_better: true,
        }
    }

    pub fn depth() -> Self {
        Self::scalar("depth")
    }

    pub fn edge() -> Self {
        Self::scalar("edge")
    }

    pub fn scalar(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::ScalarMap,
            loss: LossId::MeanAbsolute,
            metric: MetricId::Rmse,
            higher_better: false,
        }
    }

    pub fn normal() -> Self {
        Self {
            name: "normal".into(),
            kind: TaskKind::UnitVectorMap,
            loss: LossId::Cosine,
            metric: MetricId::AngularError,
            higher_better: false,
        }
    }

    /// The four dense tasks of the synthetic bench, in canonical order.
    pub fn default_tasks(classes: usize) -> Vec<Self> {
        vec![
            Self::semseg(classes),
            Self::depth(),
            Self::normal(),
            Self::edge(),
        ]
    }

    /// Output channels per pixel.
    pub fn channels(&self) -> usize {
        match self.kind {
            TaskKind::CategoricalMap { classes } => classes,
            TaskKind::ScalarMap => 1,
            TaskKind::UnitVectorMap => 3,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, TaskKind::CategoricalMap { .. })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |detail: &str| ModelError::InvalidTask {
            task: self.name.clone(),
            detail: detail.to_string(),
        };
        if self.name.is_empty() || self.name.contains([',', '.', ' ']) {
            return Err(bad("name must be non-empty without ',', '.' or spaces"));
        }
        let legal = match self.kind {
            TaskKind::CategoricalMap { classes } => {
                if classes < 2 {
                    return Err(bad("categorical tasks need at least 2 classes"));
                }
                self.loss == LossId::CrossEntropy && self.metric == MetricId::MeanIou
            }
            TaskKind::ScalarMap => {
                self.loss == LossId::MeanAbsolute && self.metric == MetricId::Rmse
            }
            TaskKind::UnitVectorMap => {
                self.loss == LossId::Cosine && self.metric == MetricId::AngularError
            }
        };
        if !legal {
            return Err(bad("loss/metric pair is not legal for this kind"));
        }
        if self.higher_better != self.metric.higher_better() {
            return Err(bad("higher_better disagrees with the metric orientation"));
        }
        Ok(())
    }
}

pub fn validate_tasks(tasks: &[TaskSpec]) -> Result<(), ModelError> {
    if tasks.is_empty() {
        return Err(ModelError::NoTasks);
    }
    for (i, t) in tasks.iter().enumerate() {
        t.validate()?;
        if tasks[..i].iter().any(|o| o.name == t.name) {
            return Err(ModelError::DuplicateTask(t.name.clone()));
        }
    }
    Ok(())
}

/// Switches for the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Components {
    pub tbs: bool,
    pub projection: bool,
    pub masking: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            tbs: true,
            projection: true,
            masking: true,
        }
    }
}

/// Architecture sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    /// Patch size of each encoder stage; their product is the latent stride.
    pub encoder_patches: Vec<usize>,
    /// Output width of each encoder stage; the last one is `C_z`.
    pub encoder_channels: Vec<usize>,
    /// Per-task latent width `C_t`.
    pub task_channels: usize,
    pub decoder_hidden: usize,
    pub tbs_width: usize,
    pub tbs_heads: usize,
    pub tbs_blocks: usize,
    pub tbs_mlp_ratio: usize,
    pub components: Components,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            encoder_patches: vec![2, 2, 1],
            encoder_channels: vec![16, 32, 32],
            task_channels: 16,
            decoder_hidden: 32,
            tbs_width: 64,
            tbs_heads: 4,
            tbs_blocks: 2,
            tbs_mlp_ratio: 2,
            components: Components::default(),
        }
    }
}

impl ModelConfig {
    /// A very small configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            image_size: 8,
            in_channels: 3,
            encoder_patches: vec![2, 2],
            encoder_channels: vec![4, 6],
            task_channels: 4,
            decoder_hidden: 5,
            tbs_width: 8,
            tbs_heads: 2,
            tbs_blocks: 1,
            tbs_mlp_ratio: 2,
            components: Components::default(),
        }
    }

    pub fn stride(&self) -> usize {
        self.encoder_patches.iter().product()
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.stride()
    }

    pub fn latent_channels(&self) -> usize {
        *self.encoder_channels.last().expect("validated")
    }

    /// Width of the latents fed to decoders and the TBS.
    pub fn task_latent_channels(&self) -> usize {
        if self.components.projection {
            self.task_channels
        } else {
            self.latent_channels()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |s: String| Err(ModelError::Config(s));
        if self.encoder_patches.is_empty()
            || self.encoder_patches.len() != self.encoder_channels.len()
        {
            return bad(
                "encoder_patches and encoder_channels must be non-empty and equally long".into(),
            );
        }
        if self.encoder_patches.contains(&0) || self.encoder_channels.contains(&0) {
            return bad("encoder sizes must be positive".into());
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.stride()) {
            return bad(format!(
                "image_size {} is not divisible by the encoder stride {}",
                self.image_size,
                self.stride()
            ));
        }
        if self.tbs_heads == 0 || !self.tbs_width.is_multiple_of(self.tbs_heads) {
            return bad(format!(
                "tbs_width {} must be divisible by tbs_heads {}",
                self.tbs_width, self.tbs_heads
            ));
        }
        if self.in_channels == 0
            || self.task_channels == 0
            || self.decoder_hidden == 0
            || self.tbs_mlp_ratio == 0
        {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Canonical parameter list: names and shapes.
    pub fn param_shapes(&self, tasks: &[TaskSpec]) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));
        let mut cin = self.in_channels;
        for (k, (&p, &c)) in self
            .encoder_patches
            .iter()
            .zip(&self.encoder_channels)
            .enumerate()
        {
            push(format!("enc.s{k}.w"), vec![p * p * cin, c]);
            push(format!("enc.s{k}.b"), vec![c]);
            push(format!("enc.s{k}.ln.g"), vec![c]);
            push(format!("enc.s{k}.ln.b"), vec![c]);
            cin = c;
        }
        let cz = self.latent_channels();
        let ct = self.task_latent_channels();
        let s2 = self.stride() * self.stride();
        for t in tasks {
            let co = t.channels();
            if self.components.projection {
                push(format!("proj.{}.w", t.name), vec![cz, ct]);
                push(format!("proj.{}.b", t.name), vec![ct]);
                push(format!("tp.{}.w", t.name), vec![ct, co]);
                push(format!("tp.{}.b", t.name), vec![co]);
            }
            push(format!("dec.{}.w1", t.name), vec![ct, self.decoder_hidden]);
            push(format!("dec.{}.b1", t.name), vec![self.decoder_hidden]);
            push(
                format!("dec.{}.w2", t.name),
                vec![self.decoder_hidden, s2 * co],
            );
            push(format!("dec.{}.b2", t.name), vec![s2 * co]);
        }
        if self.components.tbs {
            let d = self.tbs_width;
            let p = self.grid() * self.grid();
            push("tbs.mask_token".into(), vec![ct]);
            push("tbs.pos".into(), vec![p, d]);
            for t in tasks {
                push(format!("tbs.task.{}", t.name), vec![d]);
                push(format!("tbs.embed.{}.w", t.name), vec![ct, d]);
                push(format!("tbs.embed.{}.b", t.name), vec![d]);
            }
            let hidden = d * self.tbs_mlp_ratio;
            for l in 0..self.tbs_blocks {
                let pre = format!("tbs.blk{l}");
                push(format!("{pre}.ln1.g"), vec![d]);
                push(format!("{pre}.ln1.b"), vec![d]);
                push(format!("{pre}.qkv.w"), vec![d, 3 * d]);
                push(format!("{pre}.qkv.b"), vec![3 * d]);
                push(format!("{pre}.out.w"), vec![d, d]);
                push(format!("{pre}.out.b"), vec![d]);
                push(format!("{pre}.ln2.g"), vec![d]);
                push(format!("{pre}.ln2.b"), vec![d]);
                push(format!("{pre}.mlp1.w"), vec![d, hidden]);
                push(format!("{pre}.mlp1.b"), vec![hidden]);
                push(format!("{pre}.mlp2.w"), vec![hidden, d]);
                push(format!("{pre}.mlp2.b"), vec![d]);
            }
            push("tbs.ln_f.g".into(), vec![d]);
            push("tbs.ln_f.b".into(), vec![d]);
            for t in tasks {
                push(format!("tbs.head.{}.w", t.name), vec![d, s2 * t.channels()]);
                push(format!("tbs.head.{}.b", t.name), vec![s2 * t.channels()]);
            }
        }
        out
    }
}

/// Which parameter group a name belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Projection,
    Decoder,
    Tbs,
}

pub fn param_group(name: &str) -> ParamGroup {
    match name.split('.').next() {
        Some("enc") => ParamGroup::Encoder,
        Some("proj") | Some("tp") => ParamGroup::Projection,
        Some("dec") => ParamGroup::Decoder,
        Some("tbs") => ParamGroup::Tbs,
        _ => panic!("parameter `{name}` has no known group prefix"),
    }
}

/// Named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: TensorMap<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn from_map(tensors: TensorMap<T>) -> Self {
        Self { tensors }
    }

    /// Seeded initialization: fan-in scaled Gaussian weights, zero biases,
    /// unit layer-norm gains, small embeddings.
    pub fn init(cfg: &ModelConfig, tasks: &[TaskSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in cfg.param_shapes(tasks) {
            let leaf = name.rsplit('.').next().unwrap();
            let t = if leaf == "g" {
                Tensor::full(shape, T::one())
            } else if leaf.starts_with('w') {
                let std = (1.0 / shape[0] as f64).sqrt();
                let dist = Normal::new(0.0, std).unwrap();
                Tensor::from_fn(shape, |_| T::of(dist.sample(&mut rng)))
            } else if name == "tbs.pos" || name.starts_with("tbs.task.") || name == "tbs.mask_token"
            {
                let dist = Normal::new(0.0, 0.02).unwrap();
                Tensor::from_fn(shape, |_| T::of(dist.sample(&mut rng)))
            } else {
                Tensor::zeros(shape)
            };
            tensors.insert(name, t);
        }
        Self { tensors }
    }

    pub fn zeros(cfg: &ModelConfig, tasks: &[TaskSpec]) -> Self {
        let tensors = cfg
            .param_shapes(tasks)
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .collect();
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn map(&self) -> &TensorMap<T> {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Copy of these parameters with every tensor of `group` taken from `other`.
    pub fn with_group_from(&self, other: &Self, group: ParamGroup) -> Self {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            if param_group(k) == group {
                out.tensors.insert(k.clone(), v.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_validation_rejects_illegal_pairs() {
        let mut t = TaskSpec::depth();
        t.metric = MetricId::MeanIou;
        t.higher_better = true;
        assert!(t.validate().is_err());
        let mut c = TaskSpec::semseg(1);
        assert!(c.validate().is_err());
        c = TaskSpec::semseg(6);
        c.higher_better = false;
        assert!(c.validate().is_err());
        assert!(validate_tasks(&[]).is_err());
        assert!(validate_tasks(&[TaskSpec::depth(), TaskSpec::depth()]).is_err());
        assert!(validate_tasks(&TaskSpec::default_tasks(6)).is_ok());
    }

    #[test]
    fn parameter_names_are_unique_and_grouped() {
        let cfg = ModelConfig::default();
        let shapes = cfg.param_shapes(&TaskSpec::default_tasks(6));
        let mut names: Vec<_> = shapes.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        let before = names.len();
        names.dedup();
        assert_eq!(before, names.len());
        for n in &names {
            param_group(n);
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::tiny();
        let tasks = TaskSpec::default_tasks(3);
        let a = ModelParams::<f32>::init(&cfg, &tasks, 7);
        let b = ModelParams::<f32>::init(&cfg, &tasks, 7);
        let c = ModelParams::<f32>::init(&cfg, &tasks, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = ModelConfig::default();
        c.image_size = 30;
        assert!(c.validate().is_err());
        c = ModelConfig::default();
        c.tbs_heads = 5;
        assert!(c.validate().is_err());
    }
}
