//! Source training, online test-time adaptation and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{make_batch, mix, Batch, Scene};
use crate::graph::{backward, forward_eval, GraphError};
use crate::model::{
    make_mask, param_group, task_affinity, AffinityMatrix, GraphKind, MaskPlan, MaskStrategy,
    MetricId, ModelConfig, ModelGraph, ModelParams, ParamGroup, TaskKind, TaskSpec, TttObjective,
};
use crate::objectives::{channel_stats, LayerStats, LossWeights, SourceStats, STAT_EPS};
use crate::tensor::{Tensor, TensorMap};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Metrics

/// Mean IoU over the classes present in the ground truth.
pub fn mean_iou(pred: &[usize], gt: &[usize], classes: usize) -> f64 {
    let mut acc = MetricAcc::Iou {
        inter: vec![0; classes],
        union: vec![0; classes],
        present: vec![false; classes],
    };
    acc.add_classes(pred, gt);
    acc.finish()
}

pub fn rmse(pred: &[f64], gt: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(gt).map(|(a, b)| (a - b).powi(2)).sum();
    (s / pred.len() as f64).sqrt()
}

/// Mean angle in degrees between corresponding 3-vectors.
pub fn mean_angular_error(pred: &[f64], gt: &[f64]) -> f64 {
    let mut acc = MetricAcc::Angle { sum: 0.0, n: 0 };
    acc.add_vectors(pred, gt);
    acc.finish()
}

#[derive(Debug, Clone)]
enum MetricAcc {
    Iou {
        inter: Vec<u64>,
        union: Vec<u64>,
        present: Vec<bool>,
    },
    Squared {
        sum: f64,
        n: usize,
    },
    Angle {
        sum: f64,
        n: usize,
    },
}

impl MetricAcc {
    fn for_task(t: &TaskSpec) -> Self {
        match t.kind {
            TaskKind::CategoricalMap { classes } => MetricAcc::Iou {
                inter: vec![0; classes],
                union: vec![0; classes],
                present: vec![false; classes],
            },
            TaskKind::ScalarMap => MetricAcc::Squared { sum: 0.0, n: 0 },
            TaskKind::UnitVectorMap => MetricAcc::Angle { sum: 0.0, n: 0 },
        }
    }

    fn add_classes(&mut self, pred: &[usize], gt: &[usize]) {
        let MetricAcc::Iou {
            inter,
            union,
            present,
        } = self
        else {
            unreachable!()
        };
        for (&p, &g) in pred.iter().zip(gt) {
            present[g] = true;
            if p == g {
                inter[g] += 1;
                union[g] += 1;
            } else {
                union[g] += 1;
                union[p] += 1;
            }
        }
    }

    fn add_vectors(&mut self, pred: &[f64], gt: &[f64]) {
        let MetricAcc::Angle { sum, n } = self else {
            unreachable!()
        };
        for (p, g) in pred.chunks(3).zip(gt.chunks(3)) {
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ng = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            *sum += (dot / (np * ng).max(1e-30))
                .clamp(-1.0, 1.0)
                .acos()
                .to_degrees();
            *n += 1;
        }
    }

    fn add(&mut self, pred: &Tensor<f32>, target: &Tensor<f32>, labels: &[u8]) {
        match self {
            MetricAcc::Iou { inter, .. } => {
                let c = inter.len();
                let p: Vec<usize> = pred
                    .data()
                    .chunks(c)
                    .map(crate::graph::argmax_index)
                    .collect();
                let g: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
                self.add_classes(&p, &g);
            }
            MetricAcc::Squared { sum, n } => {
                for (a, b) in pred.data().iter().zip(target.data()) {
                    *sum += (*a as f64 - *b as f64).powi(2);
                }
                *n += pred.len();
            }
            MetricAcc::Angle { .. } => self.add_vectors(&pred.to_f64_vec(), &target.to_f64_vec()),
        }
    }

    fn finish(&self) -> f64 {
        match self {
            MetricAcc::Iou {
                inter,
                union,
                present,
            } => {
                let ious: Vec<f64> = (0..inter.len())
                    .filter(|&c| present[c])
                    .map(|c| inter[c] as f64 / union[c] as f64)
                    .collect();
                ious.iter().sum::<f64>() / ious.len() as f64
            }
            MetricAcc::Squared { sum, n } => (sum / *n as f64).sqrt(),
            MetricAcc::Angle { sum, n } => sum / *n as f64,
        }
    }
}

/// Per-task metrics of one batch of predictions, in task order.
pub fn batch_metrics(tasks: &[TaskSpec], preds: &[&Tensor<f32>], batch: &Batch) -> Vec<f64> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut acc = MetricAcc::for_task(t);
            acc.add(preds[i], &batch.targets[i], &batch.labels[i]);
            acc.finish()
        })
        .collect()
}

fn main_outputs<'e>(
    ev: &'e crate::graph::Evaluation<f32>,
    tasks: &[TaskSpec],
) -> Result<Vec<&'e Tensor<f32>>> {
    tasks
        .iter()
        .map(|t| Ok(ev.output(&format!("main.{}", t.name))?))
        .collect()
}

/// Dataset-level metrics: confusion pooled over all pixels for mIoU,
/// pixel-pooled RMSE and mean angular error.
pub fn evaluate(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    params: &ModelParams<f32>,
    batches: &[Batch],
) -> Result<Vec<f64>> {
    let first = batches
        .first()
        .ok_or_else(|| Error::Invalid("cannot evaluate an empty dataset".into()))?;
    let mg = ModelGraph::build(cfg, tasks, first.len(), GraphKind::Predict)?;
    let mut accs: Vec<MetricAcc> = tasks.iter().map(MetricAcc::for_task).collect();
    for b in batches {
        let inputs = mg.inputs(&b.image, None, None, None)?;
        let ev = forward_eval(&mg.graph, &inputs, params.map())?;
        let preds = main_outputs(&ev, tasks)?;
        for (i, acc) in accs.iter_mut().enumerate() {
            acc.add(preds[i], &b.targets[i], &b.labels[i]);
        }
    }
    Ok(accs.iter().map(MetricAcc::finish).collect())
}

// ---------------------------------------------------------------------------
// Optimization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Schedule {
    Constant,
    Polynomial { power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::train_default()
    }
}

impl OptimConfig {
    /// Desk-scale source training.
    pub fn train_default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            lr: 1e-3,
            weight_decay: 1e-6,
            schedule: Schedule::Polynomial { power: 0.9 },
            iterations: 3000,
            batch_size: 8,
        }
    }

    /// Source training at the published backbone scale.
    pub fn train_published() -> Self {
        Self {
            lr: 2e-5,
            iterations: 60_000,
            ..Self::train_default()
        }
    }

    /// Test-time updates; `iterations` is unused (steps come from the
    /// adaptation config). The step is large because the pseudo-label loss
    /// is weighted by 0.01.
    pub fn test_default() -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            lr: 0.1,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
            iterations: 0,
            batch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "optim: learning rate {} must be > 0",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("optim: weight_decay must be ≥ 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("optim: batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Polynomial { power } => {
                let frac = iter as f64 / self.iterations.max(1) as f64;
                self.lr * (1.0 - frac).max(0.0).powf(power)
            }
        }
    }
}

/// Optimizer state over a fixed parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimConfig,
    m: TensorMap<f32>,
    v: TensorMap<f32>,
    t: usize,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig) -> Self {
        Self {
            cfg,
            m: TensorMap::new(),
            v: TensorMap::new(),
            t: 0,
        }
    }

    /// One update of every parameter accepted by `scope`, using the
    /// schedule value at the current step count.
    pub fn step(
        &mut self,
        params: &mut ModelParams<f32>,
        grads: &crate::graph::GradientSet<f32>,
        scope: impl Fn(&str) -> bool,
    ) {
        let lr = self.cfg.lr_at(self.t) as f32;
        self.t += 1;
        let wd = self.cfg.weight_decay as f32;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, g) in grads.iter() {
            if !scope(name) {
                continue;
            }
            let p = params
                .get_mut(name)
                .expect("gradient for a known parameter");
            match self.cfg.algorithm {
                Algorithm::Sgd => {
                    for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * (gi + wd * *w);
                    }
                }
                Algorithm::Adam => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let (md, vd) = (m.data_mut(), v.data_mut());
                    for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let gi = gi + wd * *w;
                        md[i] = b1 * md[i] + (1.0 - b1) * gi;
                        vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                        *w -= lr * (md[i] / bc1) / ((vd[i] / bc2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Source training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub loss_total: f64,
    pub loss_main: f64,
    pub loss_tp: Option<f64>,
    pub loss_tbs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams<f32>,
    pub stats: SourceStats,
    pub log: Vec<TrainLogEntry>,
}

/// Masking used while training the synchronizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSetting {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    /// When set, each training iteration draws its ratio uniformly from
    /// `[min_ratio, ratio]`. Adaptation always uses `ratio`. Defaults to 0,
    /// so the synchronizer also learns to predict from unmasked latents;
    /// `null` trains at `ratio` only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_ratio: Option<f64>,
}

impl Default for MaskSetting {
    fn default() -> Self {
        Self {
            strategy: MaskStrategy::SameForAll,
            ratio: 0.7,
            min_ratio: Some(0.0),
        }
    }
}

/// Per-step mask seed from (run seed, batch, step).
pub fn step_seed(seed: u64, batch: usize, step: usize) -> u64 {
    mix(mix(seed) ^ ((batch as u64) << 24) ^ step as u64)
}

fn diverged(step: usize, e: impl std::fmt::Display) -> Error {
    Error::Diverged {
        step,
        detail: e.to_string(),
        partial: None,
    }
}

fn mask_plan(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    mask: MaskSetting,
    seed: u64,
) -> Result<Option<MaskPlan>> {
    if !cfg.components.tbs || !cfg.components.masking {
        return Ok(None);
    }
    let g = cfg.grid();
    let ratio = match mask.min_ratio {
        Some(lo) => {
            lo + (mask.ratio - lo) * ((mix(seed ^ 0x5eed_7a71) >> 11) as f64 / (1u64 << 53) as f64)
        }
        None => mask.ratio,
    };
    Ok(Some(make_mask(
        mask.strategy,
        ratio,
        g,
        g,
        tasks.len(),
        seed,
    )?))
}

/// Train all parameters with the supervised total loss on randomly ordered
/// source batches (reshuffled each epoch), logging every `log_every`
/// iterations, then record source activation statistics.
#[allow(clippy::too_many_arguments)]
pub fn train_source(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    scenes: &[Scene],
    optim: &OptimConfig,
    weights: &LossWeights,
    mask: MaskSetting,
    seed: u64,
    log_every: usize,
) -> Result<TrainOutput> {
    optim.validate()?;
    if scenes.len() < optim.batch_size {
        return Err(Error::Invalid("fewer source scenes than one batch".into()));
    }
    let mut params = ModelParams::<f32>::init(cfg, tasks, seed);
    let mg = ModelGraph::build(cfg, tasks, optim.batch_size, GraphKind::Train(*weights))?;
    let loss = mg.graph.output("loss")?;
    let mut opt = Optimizer::new(optim.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x7a11));
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    for it in 0..optim.iterations {
        if order.len() < optim.batch_size {
            let mut fresh: Vec<usize> = (0..scenes.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let idx: Vec<usize> = order.drain(..optim.batch_size).collect();
        let batch = make_batch(&idx.iter().map(|&i| &scenes[i]).collect::<Vec<_>>(), tasks)?;
        let plan = mask_plan(cfg, tasks, mask, step_seed(seed, usize::MAX >> 40, it))?;
        let inputs = mg.inputs(&batch.image, Some(&batch.targets), plan.as_ref(), None)?;
        let ev = forward_eval(&mg.graph, &inputs, params.map()).map_err(|e| diverged(it, e))?;
        if log_every > 0 && (it % log_every == 0 || it + 1 == optim.iterations) {
            let get = |n: &str| ev.scalar(n).ok();
            log.push(TrainLogEntry {
                iteration: it,
                loss_total: ev.scalar("loss")?,
                loss_main: ev.scalar("loss_main")?,
                loss_tp: get("loss_tp"),
                loss_tbs: get("loss_tbs"),
            });
        }
        let grads = backward(&mg.graph, loss, &ev)?;
        if !grads.is_finite() {
            return Err(diverged(it, "non-finite gradient"));
        }
        opt.step(&mut params, &grads, |_| true);
    }
    let stats = source_stats(cfg, tasks, &params, scenes, optim.batch_size)?;
    Ok(TrainOutput { params, stats, log })
}

/// Per-channel activation mean and std of each encoder stage, pooled over
/// every position of every full batch of `scenes`.
pub fn source_stats(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    params: &ModelParams<f32>,
    scenes: &[Scene],
    batch_size: usize,
) -> Result<SourceStats> {
    let mg = ModelGraph::build(cfg, tasks, batch_size, GraphKind::Predict)?;
    let mut sums: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for chunk in scenes.chunks_exact(batch_size) {
        let b = make_batch(&chunk.iter().collect::<Vec<_>>(), tasks)?;
        let inputs = mg.inputs(&b.image, None, None, None)?;
        let ev = forward_eval(&mg.graph, &inputs, params.map())?;
        for (k, name) in mg.stage_names.iter().enumerate() {
            let act = ev.output(&format!("act.{name}"))?;
            let c = *act.shape().last().unwrap();
            if sums.len() <= k {
                sums.push((vec![0.0; c], vec![0.0; c], 0.0));
            }
            let (s, sq, n) = &mut sums[k];
            for row in act.data().chunks(c) {
                for (j, &v) in row.iter().enumerate() {
                    s[j] += v as f64;
                    sq[j] += (v as f64).powi(2);
                }
                *n += 1.0;
            }
        }
    }
    let layers = mg
        .stage_names
        .iter()
        .zip(sums)
        .map(|(name, (s, sq, n))| {
            let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
            let std = sq
                .iter()
                .zip(&mean)
                .map(|(q, m)| ((q / n - m * m).max(0.0) + STAT_EPS).sqrt())
                .collect();
            LayerStats {
                layer: name.clone(),
                mean,
                std,
            }
        })
        .collect();
    Ok(SourceStats { layers })
}

// ---------------------------------------------------------------------------
// Online adaptation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    S4t,
    Entropy,
    Actalign,
    None,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::S4t => "s4t",
            Objective::Entropy => "entropy",
            Objective::Actalign => "actalign",
            Objective::None => "none",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            Objective::S4t,
            Objective::Entropy,
            Objective::Actalign,
            Objective::None,
        ]
        .into_iter()
        .find(|o| o.as_str() == s)
        .ok_or_else(|| format!("unknown objective `{s}` (s4t, entropy, actalign, none)"))
    }
}

/// Which parameters receive test-time updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateScope {
    All,
    EncoderProjTbs,
    EncoderOnly,
}

impl UpdateScope {
    pub fn includes(self, name: &str) -> bool {
        match self {
            UpdateScope::All => true,
            UpdateScope::EncoderProjTbs => param_group(name) != ParamGroup::Decoder,
            UpdateScope::EncoderOnly => param_group(name) == ParamGroup::Encoder,
        }
    }
}

pub const MAX_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub objective: Objective,
    /// Gradient steps per incoming batch.
    pub steps: usize,
    pub scope: UpdateScope,
    pub mask_strategy: MaskStrategy,
    pub mask_ratio: f64,
    /// Restrict the test-time loss to this task.
    pub single_task: Option<String>,
    /// Mask seed; run drivers set it from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            objective: Objective::S4t,
            steps: MAX_STEPS,
            scope: UpdateScope::EncoderProjTbs,
            mask_strategy: MaskStrategy::SameForAll,
            mask_ratio: 0.7,
            single_task: None,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn mask(&self) -> MaskSetting {
        MaskSetting {
            strategy: self.mask_strategy,
            ratio: self.mask_ratio,
            min_ratio: None,
        }
    }

    pub fn validate(&self, tasks: &[TaskSpec]) -> Result<()> {
        if self.steps > MAX_STEPS {
            return Err(Error::Config(format!(
                "adapt.steps {} exceeds {MAX_STEPS}",
                self.steps
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "adapt.mask_ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if let Some(t) = &self.single_task {
            if !tasks.iter().any(|s| &s.name == t) {
                return Err(Error::Config(format!(
                    "adapt.single_task `{t}` is not a configured task"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskColumn {
    pub name: String,
    pub metric: MetricId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajRecord {
    /// Global step, strictly increasing from 0.
    pub step: usize,
    pub batch: usize,
    pub inner_step: usize,
    /// Per-task metric values in column order.
    pub values: Vec<f64>,
    /// Weighted objective at the logged parameters (0 when none is evaluated).
    pub loss_total: f64,
    /// Unweighted objective.
    pub loss_ttt: f64,
}

/// Per-step metric log of an online run plus unadapted per-batch metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub tasks: Vec<TaskColumn>,
    pub records: Vec<TrajRecord>,
    /// Source-model metrics per batch.
    pub baseline: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(tasks: &[TaskSpec]) -> Self {
        Self {
            tasks: tasks
                .iter()
                .map(|t| TaskColumn {
                    name: t.name.clone(),
                    metric: t.metric,
                })
                .collect(),
            records: Vec::new(),
            baseline: Vec::new(),
        }
    }

    pub fn higher_better(&self) -> Vec<bool> {
        self.tasks
            .iter()
            .map(|t| t.metric.higher_better())
            .collect()
    }

    /// Records per batch, `K + 1`.
    pub fn steps_per_batch(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.inner_step + 1)
            .max()
            .unwrap_or(0)
    }

    /// `curve[i][k]`: task `i`'s metric at inner step `k`, averaged over batches.
    pub fn curve(&self) -> Vec<Vec<f64>> {
        let t = self.steps_per_batch();
        let n = self.tasks.len();
        let mut sum = vec![vec![0.0; t]; n];
        let mut cnt = vec![0usize; t];
        for r in &self.records {
            cnt[r.inner_step] += 1;
            for i in 0..n {
                sum[i][r.inner_step] += r.values[i];
            }
        }
        sum.iter()
            .map(|row| row.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect())
            .collect()
    }

    /// Unadapted per-task metrics averaged over batches; falls back to the
    /// first inner step when no baseline was recorded.
    pub fn baseline_mean(&self) -> Vec<f64> {
        if self.baseline.is_empty() {
            return self.curve().iter().map(|c| c[0]).collect();
        }
        let n = self.baseline.len() as f64;
        (0..self.tasks.len())
            .map(|i| self.baseline.iter().map(|b| b[i]).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutput {
    pub trajectory: Trajectory,
    pub params: ModelParams<f32>,
}

/// Online adaptation: per batch, log metrics, then take `steps` SGD steps
/// of the objective, logging after each; parameters carry over.
#[allow(clippy::too_many_arguments)]
pub fn adapt_online(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    source: &ModelParams<f32>,
    stream: &[Batch],
    adapt: &AdaptConfig,
    optim: &OptimConfig,
    weights: &LossWeights,
    stats: Option<&SourceStats>,
) -> Result<AdaptOutput> {
    adapt.validate(tasks)?;
    optim.validate()?;
    let first = stream
        .first()
        .ok_or_else(|| Error::Invalid("empty target stream".into()))?;
    let bsz = first.len();
    let predict = ModelGraph::build(cfg, tasks, bsz, GraphKind::Predict)?;
    let active = adapt.objective != Objective::None && adapt.steps > 0;
    let ttt = if active {
        let obj = match adapt.objective {
            Objective::S4t => TttObjective::S4t {
                weight: weights.tbs_test,
                only_task: adapt
                    .single_task
                    .as_ref()
                    .map(|n| tasks.iter().position(|t| &t.name == n).unwrap()),
            },
            Objective::Entropy => TttObjective::Entropy {
                weight: weights.tbs_test,
            },
            Objective::Actalign => {
                if stats.is_none() {
                    return Err(Error::Config("actalign needs source statistics".into()));
                }
                TttObjective::ActAlign {
                    weight: weights.tbs_test,
                }
            }
            Objective::None => unreachable!(),
        };
        Some(ModelGraph::build(cfg, tasks, bsz, GraphKind::Ttt(obj))?)
    } else {
        None
    };
    let mut params = source.clone();
    let mut opt = Optimizer::new(optim.clone());
    let mut traj = Trajectory::new(tasks);
    let mut step = 0;
    let fail = |traj: &Trajectory, step: usize, e: &dyn std::fmt::Display| Error::Diverged {
        step,
        detail: e.to_string(),
        partial: Some(Box::new(traj.clone())),
    };
    for (bi, batch) in stream.iter().enumerate() {
        if batch.len() != bsz {
            return Err(Error::Invalid("target batches must share one size".into()));
        }
        let inputs = predict.inputs(&batch.image, None, None, None)?;
        let base_ev = forward_eval(&predict.graph, &inputs, source.map())?;
        let base = batch_metrics(tasks, &main_outputs(&base_ev, tasks)?, batch);
        traj.baseline.push(base.clone());
        let Some(mg) = &ttt else {
            for k in 0..=adapt.steps {
                traj.records.push(TrajRecord {
                    step,
                    batch: bi,
                    inner_step: k,
                    values: base.clone(),
                    loss_total: 0.0,
                    loss_ttt: 0.0,
                });
                step += 1;
            }
            continue;
        };
        let loss = mg.graph.output("loss")?;
        for k in 0..=adapt.steps {
            let plan = mask_plan(cfg, tasks, adapt.mask(), step_seed(adapt.seed, bi, k))?;
            let inputs = mg.inputs(&batch.image, None, plan.as_ref(), stats)?;
            let ev = match forward_eval(&mg.graph, &inputs, params.map()) {
                Ok(ev) => ev,
                Err(e @ GraphError::NonFinite { .. }) => return Err(fail(&traj, step, &e)),
                Err(e) => return Err(e.into()),
            };
            let values = batch_metrics(tasks, &main_outputs(&ev, tasks)?, batch);
            traj.records.push(TrajRecord {
                step,
                batch: bi,
                inner_step: k,
                values,
                loss_total: ev.scalar("loss")?,
                loss_ttt: ev.scalar("loss_raw")?,
            });
            step += 1;
            if k == adapt.steps {
                break;
            }
            let grads = backward(&mg.graph, loss, &ev)?;
            if !grads.is_finite() {
                return Err(fail(&traj, step, &"non-finite gradient"));
            }
            opt.step(&mut params, &grads, |n| adapt.scope.includes(n));
        }
    }
    Ok(AdaptOutput {
        trajectory: traj,
        params,
    })
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Supervised synchronizer loss against ground truth, averaged over batches,
/// with masks drawn per batch from `seed`.
pub fn tbs_loss(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    params: &ModelParams<f32>,
    batches: &[Batch],
    mask: MaskSetting,
    seed: u64,
) -> Result<f64> {
    let mut c = cfg.clone();
    c.components.masking = true;
    let mg = ModelGraph::build(
        &c,
        tasks,
        batches[0].len(),
        GraphKind::Train(LossWeights::default()),
    )?;
    let mut total = 0.0;
    for (bi, b) in batches.iter().enumerate() {
        let plan = mask_plan(&c, tasks, mask, step_seed(seed, bi, 0))?;
        let inputs = mg.inputs(&b.image, Some(&b.targets), plan.as_ref(), None)?;
        let ev = forward_eval(&mg.graph, &inputs, params.map())?;
        total += ev.scalar("loss_tbs")?;
    }
    Ok(total / batches.len() as f64)
}

/// Task affinity of batch-and-space-averaged task latents over `batches`.
pub fn latent_affinity(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    params: &ModelParams<f32>,
    batches: &[Batch],
) -> Result<AffinityMatrix> {
    let mg = ModelGraph::build(cfg, tasks, batches[0].len(), GraphKind::Predict)?;
    let mut per_task: Vec<Vec<f32>> = vec![Vec::new(); tasks.len()];
    let mut shape = Vec::new();
    for b in batches {
        let inputs = mg.inputs(&b.image, None, None, None)?;
        let ev = forward_eval(&mg.graph, &inputs, params.map())?;
        for (i, t) in tasks.iter().enumerate() {
            let z = ev.output(&format!("z.{}", t.name))?;
            shape = z.shape().to_vec();
            per_task[i].extend_from_slice(z.data());
        }
    }
    shape[0] *= batches.len();
    let latents: Vec<Tensor<f32>> = per_task
        .into_iter()
        .map(|d| Tensor::new(shape.clone(), d).expect("consistent latent shapes"))
        .collect();
    Ok(task_affinity(&latents))
}

/// Per-channel stats of one activation tensor, as a [`LayerStats`].
pub fn layer_stats(name: &str, act: &Tensor<f32>) -> LayerStats {
    let (mean, std) = channel_stats(act);
    LayerStats {
        layer: name.into(),
        mean,
        std,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{gen_scene, GenConfig};

    #[test]
    fn miou_hand_case() {
        let v = mean_iou(&[0, 1, 1, 1], &[0, 0, 1, 1], 2);
        assert!((v - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(mean_iou(&[2, 0, 1], &[2, 0, 1], 4), 1.0);
    }

    #[test]
    fn rmse_and_angle() {
        assert!((rmse(&[1.3, 0.3], &[1.0, 0.0]) - 0.3).abs() < 1e-12);
        assert_eq!(rmse(&[0.5], &[0.5]), 0.0);
        let a = mean_angular_error(
            &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert!((a - 45.0).abs() < 1e-9);
    }

    #[test]
    fn polynomial_schedule() {
        let o = OptimConfig {
            iterations: 100,
            ..OptimConfig::train_default()
        };
        assert_eq!(o.lr_at(0), o.lr);
        assert!(o.lr_at(50) < o.lr && o.lr_at(100) == 0.0);
    }

    fn tiny_setup() -> (ModelConfig, Vec<TaskSpec>, Vec<Scene>) {
        let mut g = GenConfig::default();
        g.size = 8;
        g.classes = 2;
        let tasks = TaskSpec::default_tasks(3);
        let scenes = (0..8).map(|s| gen_scene(s, &g)).collect();
        (ModelConfig::tiny(), tasks, scenes)
    }

    #[test]
    fn online_counts_and_zero_steps() {
        let (cfg, tasks, scenes) = tiny_setup();
        let stream = crate::bench::stream_batches(&scenes, 2, &tasks).unwrap();
        let params = ModelParams::init(&cfg, &tasks, 0);
        let optim = OptimConfig::test_default();
        let w = LossWeights::default();
        let mut a = AdaptConfig {
            steps: 3,
            ..AdaptConfig::default()
        };
        let out = adapt_online(&cfg, &tasks, &params, &stream, &a, &optim, &w, None).unwrap();
        assert_eq!(out.trajectory.records.len(), 4 * 4);
        assert!(out
            .trajectory
            .records
            .windows(2)
            .all(|r| r[0].step < r[1].step));
        a.steps = 0;
        let zero = adapt_online(&cfg, &tasks, &params, &stream, &a, &optim, &w, None).unwrap();
        a.objective = Objective::None;
        let none = adapt_online(&cfg, &tasks, &params, &stream, &a, &optim, &w, None).unwrap();
        assert_eq!(zero.trajectory, none.trajectory);
    }

    #[test]
    fn decoders_frozen_under_default_scope() {
        let (cfg, tasks, scenes) = tiny_setup();
        let stream = crate::bench::stream_batches(&scenes, 4, &tasks).unwrap();
        let params = ModelParams::init(&cfg, &tasks, 1);
        let a = AdaptConfig {
            steps: 2,
            ..AdaptConfig::default()
        };
        let out = adapt_online(
            &cfg,
            &tasks,
            &params,
            &stream,
            &a,
            &OptimConfig::test_default(),
            &LossWeights::default(),
            None,
        )
        .unwrap();
        for (k, v) in params.iter() {
            let moved = out.params.get(k).unwrap() != v;
            if param_group(k) == ParamGroup::Decoder {
                assert!(!moved, "{k}");
            }
        }
        assert_ne!(out.params.get("enc.s0.w"), params.get("enc.s0.w"));
    }
}
