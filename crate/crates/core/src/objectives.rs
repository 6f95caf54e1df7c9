//! Loss functions: per-task supervision, the source training total, the
//! test-time pseudo-label loss, two comparison baselines, and the
//! masked/unmasked bound checker.

use serde::{Deserialize, Serialize};

use crate::graph::{forward_eval, GraphBuilder, GraphError, NodeId};
use crate::model::{
    GraphKind, MaskPlan, ModelConfig, ModelError, ModelGraph, ModelParams, TaskKind, TaskSpec,
};
use crate::tensor::{Real, Tensor, TensorMap};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: f64, classes: usize },
    #[error("entropy objective needs at least one categorical task")]
    NoCategoricalTask,
    #[error("activation statistics mismatch: {0}")]
    LayerMismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Weights of the auxiliary losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub tbs_train: f64,
    pub tp_train: f64,
    /// Weight of the test-time loss; the comparison baselines use it too so
    /// every objective sees the same step size.
    pub tbs_test: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tbs_train: 1.0,
            tp_train: 1.0,
            tbs_test: 0.01,
        }
    }
}

/// Per-channel activation statistics of one monitored layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Activation statistics recorded on source data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceStats {
    pub layers: Vec<LayerStats>,
}

/// Epsilon inside the standard deviation of activation statistics.
pub const STAT_EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Graph-level loss builders

/// Pixels (positions excluding the channel axis) of a prediction.
fn pixels(b: &GraphBuilder, pred: NodeId) -> usize {
    let s = b.shape(pred);
    s[..s.len() - 1].iter().product()
}

/// Per-task loss. Categorical predictions are logits and targets are one-hot;
/// unit-vector predictions and targets are normalized.
pub fn task_loss_node(
    b: &mut GraphBuilder,
    spec: &TaskSpec,
    pred: NodeId,
    target: NodeId,
) -> Result<NodeId, GraphError> {
    match spec.kind {
        TaskKind::CategoricalMap { .. } => {
            let n = pixels(b, pred);
            let ls = b.log_softmax(pred)?;
            let m = b.mul(ls, target)?;
            let s = b.sum(m)?;
            b.scale(s, -1.0 / n as f64)
        }
        TaskKind::ScalarMap => {
            let d = b.sub(pred, target)?;
            let a = b.abs(d)?;
            b.mean(a)
        }
        TaskKind::UnitVectorMap => {
            let m = b.mul(pred, target)?;
            let cos = b.sum_last(m)?;
            let mc = b.mean(cos)?;
            let neg = b.scale(mc, -1.0)?;
            b.add_scalar(neg, 1.0)
        }
    }
}

/// `Σ_i 𝓛_i(pred_i, target_i)`
pub fn summed_task_loss(
    b: &mut GraphBuilder,
    specs: &[TaskSpec],
    preds: &[NodeId],
    targets: &[NodeId],
) -> Result<NodeId, GraphError> {
    let mut total: Option<NodeId> = None;
    for ((s, p), t) in specs.iter().zip(preds).zip(targets) {
        let l = task_loss_node(b, s, *p, *t)?;
        total = Some(match total {
            None => l,
            Some(acc) => b.add(acc, l)?,
        });
    }
    total.ok_or_else(|| GraphError::Shape {
        node: "summed_task_loss".into(),
        detail: "no tasks".into(),
    })
}

/// Node ids of the source training total and its components.
#[derive(Debug, Clone, Copy)]
pub struct TrainLossNodes {
    pub total: NodeId,
    pub main: NodeId,
    pub tp: Option<NodeId>,
    pub tbs: Option<NodeId>,
}

/// `𝓛_main + λ_TBS·𝓛_TBS + λ_TP·𝓛_TP`; absent branches contribute nothing.
pub fn loss_train_node(
    b: &mut GraphBuilder,
    specs: &[TaskSpec],
    main: &[NodeId],
    tp: Option<&[NodeId]>,
    tbs: Option<&[NodeId]>,
    targets: &[NodeId],
    weights: &LossWeights,
) -> Result<TrainLossNodes, GraphError> {
    b.push_scope("loss_train");
    let main_l = summed_task_loss(b, specs, main, targets)?;
    let mut total = main_l;
    let mut tp_l = None;
    let mut tbs_l = None;
    if let Some(tp) = tp {
        let l = summed_task_loss(b, specs, tp, targets)?;
        let w = b.scale(l, weights.tp_train)?;
        total = b.add(total, w)?;
        tp_l = Some(l);
    }
    if let Some(tbs) = tbs {
        let l = summed_task_loss(b, specs, tbs, targets)?;
        let w = b.scale(l, weights.tbs_train)?;
        total = b.add(total, w)?;
        tbs_l = Some(l);
    }
    b.pop_scope();
    Ok(TrainLossNodes {
        total,
        main: main_l,
        tp: tp_l,
        tbs: tbs_l,
    })
}

/// Pseudo-label prediction loss. Returns `(weighted, unweighted)`.
///
/// Main predictions enter only as detached targets; categorical targets are
/// the argmax class maps. `only_task` restricts the sum to one task.
pub fn loss_ttt_node(
    b: &mut GraphBuilder,
    specs: &[TaskSpec],
    tbs: &[NodeId],
    main: &[NodeId],
    weight: f64,
    only_task: Option<usize>,
) -> Result<(NodeId, NodeId), GraphError> {
    b.push_scope("loss_ttt");
    let mut sel_specs = Vec::new();
    let mut sel_tbs = Vec::new();
    let mut targets = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        if only_task.is_some_and(|t| t != i) {
            continue;
        }
        let d = b.detach(main[i])?;
        let target = if spec.is_categorical() {
            b.argmax_one_hot(d)?
        } else {
            d
        };
        sel_specs.push(spec.clone());
        sel_tbs.push(tbs[i]);
        targets.push(target);
    }
    let raw = summed_task_loss(b, &sel_specs, &sel_tbs, &targets)?;
    let weighted = b.scale(raw, weight)?;
    b.pop_scope();
    Ok((weighted, raw))
}

/// Mean per-pixel Shannon entropy of softmax scores, summed over categorical
/// tasks.
pub fn entropy_node(
    b: &mut GraphBuilder,
    specs: &[TaskSpec],
    main: &[NodeId],
) -> Result<NodeId, ObjectiveError> {
    let mut total: Option<NodeId> = None;
    b.push_scope("entropy");
    for (spec, &logits) in specs.iter().zip(main) {
        if !spec.is_categorical() {
            continue;
        }
        let n = pixels(b, logits);
        let p = b.softmax(logits)?;
        let lp = b.log_softmax(logits)?;
        let m = b.mul(p, lp)?;
        let s = b.sum(m)?;
        let h = b.scale(s, -1.0 / n as f64)?;
        total = Some(match total {
            None => h,
            Some(acc) => b.add(acc, h)?,
        });
    }
    b.pop_scope();
    total.ok_or(ObjectiveError::NoCategoricalTask)
}

/// Per-channel mean and standard deviation nodes of an activation.
pub fn activation_stats_nodes(
    b: &mut GraphBuilder,
    act: NodeId,
) -> Result<(NodeId, NodeId), GraphError> {
    let mu = b.mean_leading(act)?;
    let neg = b.scale(mu, -1.0)?;
    let centered = b.add_suffix(act, neg)?;
    let sq = b.square(centered)?;
    let var = b.mean_leading(sq)?;
    let sd = b.sqrt(var, STAT_EPS)?;
    Ok((mu, sd))
}

/// `Σ_layers |μ − μ_src|₁ + |σ − σ_src|₁`, with source statistics supplied as
/// inputs `src.mean.<layer>` and `src.std.<layer>`.
pub fn actalign_node(
    b: &mut GraphBuilder,
    layers: &[(String, NodeId)],
) -> Result<NodeId, GraphError> {
    b.push_scope("actalign");
    let mut total: Option<NodeId> = None;
    for (name, act) in layers {
        let c = *b.shape(*act).last().unwrap();
        let (mu, sd) = activation_stats_nodes(b, *act)?;
        let src_mu = b.input(format!("src.mean.{name}"), &[c])?;
        let src_sd = b.input(format!("src.std.{name}"), &[c])?;
        let dm = b.sub(mu, src_mu)?;
        let am = b.abs(dm)?;
        let sm = b.sum(am)?;
        let ds = b.sub(sd, src_sd)?;
        let a_s = b.abs(ds)?;
        let ss = b.sum(a_s)?;
        let l = b.add(sm, ss)?;
        total = Some(match total {
            None => l,
            Some(acc) => b.add(acc, l)?,
        });
    }
    b.pop_scope();
    total.ok_or_else(|| GraphError::Shape {
        node: "actalign".into(),
        detail: "no monitored layers".into(),
    })
}

/// Bind source statistics for [`actalign_node`].
pub fn bind_source_stats<T: Real>(
    inputs: &mut TensorMap<T>,
    stats: &SourceStats,
    layers: &[String],
) -> Result<(), ObjectiveError> {
    if stats.layers.len() != layers.len() {
        return Err(ObjectiveError::LayerMismatch(format!(
            "{} recorded layers, {} monitored",
            stats.layers.len(),
            layers.len()
        )));
    }
    for (ls, name) in stats.layers.iter().zip(layers) {
        if &ls.layer != name {
            return Err(ObjectiveError::LayerMismatch(format!(
                "recorded `{}`, monitored `{name}`",
                ls.layer
            )));
        }
        let c = ls.mean.len();
        inputs.insert(
            format!("src.mean.{name}"),
            Tensor::from_f64([c], &ls.mean).map_err(|e| ObjectiveError::Shape(e.to_string()))?,
        );
        inputs.insert(
            format!("src.std.{name}"),
            Tensor::from_f64([c], &ls.std).map_err(|e| ObjectiveError::Shape(e.to_string()))?,
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tensor-level evaluation

/// One-hot encode a class-index map (last axis appended).
pub fn one_hot<T: Real>(indices: &Tensor<T>, classes: usize) -> Result<Tensor<T>, ObjectiveError> {
    let mut shape = indices.shape().to_vec();
    shape.push(classes);
    let mut data = vec![T::zero(); indices.len() * classes];
    for (i, &v) in indices.data().iter().enumerate() {
        let f = v.as_f64();
        if f < 0.0 || f.fract() != 0.0 || f as usize >= classes {
            return Err(ObjectiveError::ClassIndex { index: f, classes });
        }
        data[i * classes + f as usize] = T::one();
    }
    Ok(Tensor::from_parts(shape, data))
}

fn run_scalar<T: Real>(
    build: impl FnOnce(&mut GraphBuilder) -> Result<NodeId, ObjectiveError>,
    inputs: TensorMap<T>,
) -> Result<f64, ObjectiveError> {
    let mut b = GraphBuilder::new();
    let out = build(&mut b)?;
    b.output("out", out);
    let g = b.finish();
    Ok(forward_eval(&g, &inputs, &TensorMap::new())?.scalar("out")?)
}

/// Per-task loss on concrete tensors. Categorical targets are class indices
/// with the prediction's shape minus the class axis.
pub fn task_loss<T: Real>(
    spec: &TaskSpec,
    pred: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<f64, ObjectiveError> {
    let target = match spec.kind {
        TaskKind::CategoricalMap { classes } => {
            if pred.shape().last() != Some(&classes) {
                return Err(ObjectiveError::Shape(format!(
                    "prediction {:?} lacks {classes} class channels",
                    pred.shape()
                )));
            }
            one_hot(target, classes)?
        }
        _ => target.clone(),
    };
    if target.shape() != pred.shape() {
        return Err(ObjectiveError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut inputs = TensorMap::new();
    inputs.insert("pred".into(), pred.clone());
    inputs.insert("target".into(), target);
    let (ps, ts) = (pred.shape().to_vec(), pred.shape().to_vec());
    run_scalar(
        |b| {
            let p = b.input("pred", &ps)?;
            let t = b.input("target", &ts)?;
            Ok(task_loss_node(b, spec, p, t)?)
        },
        inputs,
    )
}

/// Entropy baseline on concrete logits, one tensor per task.
pub fn loss_entropy<T: Real>(
    specs: &[TaskSpec],
    preds: &[Tensor<T>],
) -> Result<f64, ObjectiveError> {
    let mut inputs = TensorMap::new();
    for (s, p) in specs.iter().zip(preds) {
        inputs.insert(format!("pred.{}", s.name), p.clone());
    }
    run_scalar(
        |b| {
            let mut nodes = Vec::new();
            for (s, p) in specs.iter().zip(preds) {
                nodes.push(b.input(format!("pred.{}", s.name), p.shape())?);
            }
            entropy_node(b, specs, &nodes)
        },
        inputs,
    )
}

/// Activation-alignment baseline on concrete activations `[.., C]`.
pub fn loss_actalign<T: Real>(
    live: &[(String, Tensor<T>)],
    stats: &SourceStats,
) -> Result<f64, ObjectiveError> {
    let names: Vec<String> = live.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs = TensorMap::new();
    bind_source_stats(&mut inputs, stats, &names)?;
    for ((name, act), ls) in live.iter().zip(&stats.layers) {
        if act.shape().last() != Some(&ls.mean.len()) {
            return Err(ObjectiveError::LayerMismatch(format!(
                "layer `{name}` has {:?} channels, statistics have {}",
                act.shape().last(),
                ls.mean.len()
            )));
        }
        inputs.insert(format!("act.{name}"), act.clone());
    }
    run_scalar(
        |b| {
            let mut layers = Vec::new();
            for (name, act) in live {
                layers.push((name.clone(), b.input(format!("act.{name}"), act.shape())?));
            }
            Ok(actalign_node(b, &layers)?)
        },
        inputs,
    )
}

/// Per-channel mean and standard deviation over every axis but the last.
pub fn channel_stats<T: Real>(act: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let c = *act.shape().last().unwrap();
    let rows = (act.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for row in act.data().chunks(c) {
        row.iter()
            .enumerate()
            .for_each(|(j, v)| mean[j] += v.as_f64());
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0; c];
    for row in act.data().chunks(c) {
        row.iter().enumerate().for_each(|(j, v)| {
            let d = v.as_f64() - mean[j];
            var[j] += d * d;
        });
    }
    let std = var.iter().map(|v| (v / rows + STAT_EPS).sqrt()).collect();
    (mean, std)
}

// ---------------------------------------------------------------------------
// Bound check

/// One evaluation of the masked/unmasked inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    /// Distance of full-latent predictions to ground truth.
    pub lhs: f64,
    /// Distance of masked-latent predictions to ground truth.
    pub rhs_term1: f64,
    /// Distance between full-latent and masked-latent predictions.
    pub rhs_term2: f64,
    pub holds: bool,
}

/// Mean absolute difference between two prediction arrays of one sample.
fn sample_l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter_mut().for_each(|v| *v = (*v - m).exp());
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
}

/// Prediction arrays compared by the bound check: class probabilities for
/// categorical tasks, raw values otherwise.
fn as_distribution<T: Real>(spec: &TaskSpec, pred: &Tensor<T>) -> Vec<f64> {
    let mut v = pred.to_f64_vec();
    if spec.is_categorical() {
        let c = spec.channels();
        v.chunks_mut(c).for_each(softmax_in_place);
    }
    v
}

/// Evaluate `lhs ≤ rhs_term1 + rhs_term2` on a labeled batch, using the TBS
/// predictor from full latents (empty mask) and from `plan`-masked latents,
/// with per-sample mean absolute difference as the distance. Targets follow
/// the graph binding convention (one-hot for categorical tasks).
pub fn bound_check(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    params: &ModelParams<f32>,
    image: &Tensor<f32>,
    targets: &[Tensor<f32>],
    plan: &MaskPlan,
) -> Result<BoundRecord, ObjectiveError> {
    let batch = image.shape()[0];
    let mg = ModelGraph::build(cfg, tasks, batch, GraphKind::TbsPredict)?;
    let grid = cfg.grid();
    let empty = MaskPlan::empty(grid, grid, tasks.len());
    let run = |p: &MaskPlan| -> Result<Vec<Tensor<f32>>, ObjectiveError> {
        let inputs = mg.inputs(image, None, Some(p), None)?;
        let ev = forward_eval(&mg.graph, &inputs, params.map())?;
        tasks
            .iter()
            .map(|t| Ok(ev.output(&format!("tbs.{}", t.name))?.clone()))
            .collect()
    };
    let full = run(&empty)?;
    let masked = run(plan)?;
    let (mut lhs, mut r1, mut r2) = (0.0, 0.0, 0.0);
    for (j, spec) in tasks.iter().enumerate() {
        let f = as_distribution(spec, &full[j]);
        let m = as_distribution(spec, &masked[j]);
        let gt = targets[j].to_f64_vec();
        let per = f.len() / batch;
        for s in 0..batch {
            let r = s * per..(s + 1) * per;
            lhs += sample_l1(&f[r.clone()], &gt[r.clone()]);
            r1 += sample_l1(&m[r.clone()], &gt[r.clone()]);
            r2 += sample_l1(&f[r.clone()], &m[r]);
        }
    }
    let n = batch as f64;
    let (lhs, r1, r2) = (lhs / n, r1 / n, r2 / n);
    Ok(BoundRecord {
        lhs,
        rhs_term1: r1,
        rhs_term2: r2,
        holds: lhs <= r1 + r2 + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn cross_entropy_of_ninety_percent() {
        let spec = TaskSpec::semseg(2);
        let pred = t(&[1, 1, 1, 2], &[0.9f64.ln(), 0.1f64.ln()]);
        let target = t(&[1, 1, 1], &[0.0]);
        let l = task_loss(&spec, &pred, &target).unwrap();
        assert!((l - 0.1054).abs() < 1e-4, "{l}");
        assert!((l + 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_near_zero() {
        let spec = TaskSpec::semseg(3);
        let pred = t(&[1, 1, 2, 3], &[40.0, 0.0, 0.0, 0.0, 0.0, 40.0]);
        let target = t(&[1, 1, 2], &[0.0, 2.0]);
        assert!(task_loss(&spec, &pred, &target).unwrap() < 1e-6);
    }

    #[test]
    fn class_index_out_of_range() {
        let spec = TaskSpec::semseg(2);
        let pred = t(&[1, 1, 1, 2], &[0.0, 0.0]);
        let err = task_loss(&spec, &pred, &t(&[1, 1, 1], &[2.0])).unwrap_err();
        assert!(matches!(err, ObjectiveError::ClassIndex { classes: 2, .. }));
    }

    #[test]
    fn scalar_and_unit_vector_zero_at_agreement() {
        let d = t(&[1, 2, 1, 1], &[0.3, 0.7]);
        assert_eq!(task_loss(&TaskSpec::depth(), &d, &d).unwrap(), 0.0);
        let n = t(&[1, 1, 1, 3], &[0.6, 0.0, 0.8]);
        assert!(task_loss(&TaskSpec::normal(), &n, &n).unwrap().abs() < 1e-12);
        let opposite = n.map(|v| -v);
        assert!((task_loss(&TaskSpec::normal(), &opposite, &n).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_cases() {
        let specs = [TaskSpec::semseg(2)];
        let p = t(&[1, 1, 1, 2], &[0.9f64.ln(), 0.1f64.ln()]);
        let h = loss_entropy(&specs, &[p]).unwrap();
        assert!((h - 0.3251).abs() < 1e-4, "{h}");
        let k = 5;
        let uniform = Tensor::<f64>::zeros([1, 2, 2, k]);
        let h = loss_entropy(&[TaskSpec::semseg(k)], &[uniform]).unwrap();
        assert!((h - (k as f64).ln()).abs() < 1e-12);
        let onehot = t(&[1, 1, 1, 2], &[800.0, 0.0]);
        assert!(loss_entropy(&specs, &[onehot]).unwrap().abs() < 1e-12);
        assert_eq!(
            loss_entropy(&[TaskSpec::depth()], &[Tensor::<f64>::zeros([1, 1, 1, 1])]).unwrap_err(),
            ObjectiveError::NoCategoricalTask
        );
    }

    #[test]
    fn actalign_cases() {
        let act = t(&[4, 1], &[1.0, 2.0, 3.0, 4.0]);
        let (mean, std) = channel_stats(&act);
        let same = SourceStats {
            layers: vec![LayerStats {
                layer: "l0".into(),
                mean: mean.clone(),
                std: std.clone(),
            }],
        };
        let live = vec![("l0".to_string(), act.clone())];
        assert!(loss_actalign(&live, &same).unwrap().abs() < 1e-12);
        let shifted = SourceStats {
            layers: vec![LayerStats {
                layer: "l0".into(),
                mean: vec![mean[0] + 0.5],
                std,
            }],
        };
        assert!((loss_actalign(&live, &shifted).unwrap() - 0.5).abs() < 1e-12);
        let wrong = SourceStats {
            layers: vec![LayerStats {
                layer: "other".into(),
                mean,
                std: vec![1.0],
            }],
        };
        assert!(matches!(
            loss_actalign(&live, &wrong),
            Err(ObjectiveError::LayerMismatch(_))
        ));
    }
}
