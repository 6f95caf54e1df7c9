//! Graph assembly for every model pass.

use std::collections::HashMap;

use crate::graph::{Graph, GraphBuilder, GraphError, NodeId};
use crate::objectives::{self, LossWeights, SourceStats};
use crate::tensor::{Real, Tensor, TensorMap};

use super::{validate_tasks, MaskPlan, ModelConfig, ModelError, TaskKind, TaskSpec};

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Test-time objective assembled into a [`GraphKind::Ttt`] graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TttObjective {
    /// Pseudo-label prediction through the synchronizer; `only_task`
    /// restricts it to one task.
    S4t {
        weight: f64,
        only_task: Option<usize>,
    },
    /// Softmax entropy of categorical main predictions.
    Entropy { weight: f64 },
    /// L1 alignment of encoder activation statistics to source values.
    ActAlign { weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    /// Main predictions, latents and encoder activations.
    Predict,
    /// Supervised source loss.
    Train(LossWeights),
    /// Unsupervised test-time loss.
    Ttt(TttObjective),
    /// Synchronizer predictions from masked latents.
    TbsPredict,
}

/// Incremental construction of model fragments on one [`GraphBuilder`].
pub struct ModelBuilder<'a> {
    pub b: GraphBuilder,
    cfg: &'a ModelConfig,
    tasks: &'a [TaskSpec],
    batch: usize,
    shapes: HashMap<String, Vec<usize>>,
    declared: HashMap<String, NodeId>,
}

type R<T> = Result<T, GraphError>;

impl<'a> ModelBuilder<'a> {
    pub fn new(
        cfg: &'a ModelConfig,
        tasks: &'a [TaskSpec],
        batch: usize,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        validate_tasks(tasks)?;
        if batch == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        Ok(Self {
            b: GraphBuilder::new(),
            cfg,
            tasks,
            batch,
            shapes: cfg.param_shapes(tasks).into_iter().collect(),
            declared: HashMap::new(),
        })
    }

    fn p(&mut self, name: &str) -> R<NodeId> {
        if let Some(&id) = self.declared.get(name) {
            return Ok(id);
        }
        let shape = self
            .shapes
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not part of this configuration"))
            .clone();
        let id = self.b.param(name, &shape)?;
        self.declared.insert(name.to_string(), id);
        Ok(id)
    }

    fn lin(&mut self, x: NodeId, w: &str, bias: &str) -> R<NodeId> {
        let (w, bias) = (self.p(w)?, self.p(bias)?);
        self.b.linear(x, w, bias)
    }

    fn finalize(&mut self, spec: &TaskSpec, y: NodeId) -> R<NodeId> {
        match spec.kind {
            TaskKind::UnitVectorMap => self.b.l2_normalize(y, NORM_EPS),
            _ => Ok(y),
        }
    }

    pub fn image_input(&mut self) -> R<NodeId> {
        let s = self.cfg.image_size;
        self.b
            .input("image", &[self.batch, s, s, self.cfg.in_channels])
    }

    /// Shared encoder. Returns the latent and every stage's activation.
    pub fn encode(&mut self, x: NodeId) -> R<(NodeId, Vec<NodeId>)> {
        self.b.push_scope("encode");
        let mut h = x;
        let mut stages = Vec::new();
        for (k, &p) in self.cfg.encoder_patches.iter().enumerate() {
            let patches = self.b.patchify(h, p)?;
            let y = self.lin(patches, &format!("enc.s{k}.w"), &format!("enc.s{k}.b"))?;
            let (g, bt) = (
                self.p(&format!("enc.s{k}.ln.g"))?,
                self.p(&format!("enc.s{k}.ln.b"))?,
            );
            let n = self.b.layer_norm(y, g, bt, LN_EPS)?;
            h = self.b.relu(n)?;
            stages.push(h);
        }
        self.b.pop_scope();
        Ok((h, stages))
    }

    /// Per-task latents and auxiliary predictions. Without the projection
    /// component every task reads `z` directly and there are no auxiliary
    /// predictions.
    pub fn project(&mut self, z: NodeId) -> R<(Vec<NodeId>, Vec<NodeId>)> {
        if !self.cfg.components.projection {
            return Ok((vec![z; self.tasks.len()], Vec::new()));
        }
        self.b.push_scope("project");
        let s = self.cfg.stride();
        let mut latents = Vec::new();
        let mut aux = Vec::new();
        for spec in self.tasks {
            let t = &spec.name;
            let zi = self.lin(z, &format!("proj.{t}.w"), &format!("proj.{t}.b"))?;
            let y = self.lin(zi, &format!("tp.{t}.w"), &format!("tp.{t}.b"))?;
            let up = self.b.upsample_nearest(y, s)?;
            let up = self.finalize(spec, up)?;
            latents.push(zi);
            aux.push(up);
        }
        self.b.pop_scope();
        Ok((latents, aux))
    }

    pub fn decode_main(&mut self, latents: &[NodeId]) -> R<Vec<NodeId>> {
        self.b.push_scope("decode");
        let s = self.cfg.stride();
        let mut out = Vec::new();
        for (spec, &zi) in self.tasks.iter().zip(latents) {
            let t = &spec.name;
            let h = self.lin(zi, &format!("dec.{t}.w1"), &format!("dec.{t}.b1"))?;
            let h = self.b.relu(h)?;
            let y = self.lin(h, &format!("dec.{t}.w2"), &format!("dec.{t}.b2"))?;
            let y = self.b.unpatchify(y, s)?;
            out.push(self.finalize(spec, y)?);
        }
        self.b.pop_scope();
        Ok(out)
    }

    /// Inputs `mask.<task>` of shape `[h, w]`.
    pub fn mask_inputs(&mut self) -> R<Vec<NodeId>> {
        let g = self.cfg.grid();
        self.tasks
            .iter()
            .map(|t| self.b.input(format!("mask.{}", t.name), &[g, g]))
            .collect()
    }

    /// Inputs `target.<task>` at label resolution; categorical targets are one-hot.
    pub fn target_inputs(&mut self) -> R<Vec<NodeId>> {
        let s = self.cfg.image_size;
        let batch = self.batch;
        self.tasks
            .iter()
            .map(|t| {
                self.b
                    .input(format!("target.{}", t.name), &[batch, s, s, t.channels()])
            })
            .collect()
    }

    pub fn apply_mask(&mut self, latents: &[NodeId], masks: &[NodeId]) -> R<Vec<NodeId>> {
        self.b.push_scope("mask");
        let token = self.p("tbs.mask_token")?;
        let out = latents
            .iter()
            .zip(masks)
            .map(|(&z, &m)| self.b.mask_fill(z, m, token))
            .collect();
        self.b.pop_scope();
        out
    }

    /// Joint transformer over all task tokens; per-task full-grid predictions.
    pub fn tbs_predict(&mut self, masked: &[NodeId]) -> R<Vec<NodeId>> {
        self.b.push_scope("tbs");
        let cfg = self.cfg;
        let (bsz, g, d) = (self.batch, cfg.grid(), cfg.tbs_width);
        let p = g * g;
        let n = self.tasks.len();
        let pos = self.p("tbs.pos")?;
        let mut seqs = Vec::new();
        for (spec, &zt) in self.tasks.iter().zip(masked) {
            let t = &spec.name;
            let e = self.lin(zt, &format!("tbs.embed.{t}.w"), &format!("tbs.embed.{t}.b"))?;
            let e = self.b.reshape(e, &[bsz, p, d])?;
            let e = self.b.add_suffix(e, pos)?;
            let te = self.p(&format!("tbs.task.{t}"))?;
            seqs.push(self.b.add_suffix(e, te)?);
        }
        let mut x = if n == 1 {
            seqs[0]
        } else {
            self.b.concat(&seqs, 1)?
        };
        let heads = cfg.tbs_heads;
        let dh = d / heads;
        for l in 0..cfg.tbs_blocks {
            let pre = format!("tbs.blk{l}");
            let (g1, b1) = (
                self.p(&format!("{pre}.ln1.g"))?,
                self.p(&format!("{pre}.ln1.b"))?,
            );
            let a = self.b.layer_norm(x, g1, b1, LN_EPS)?;
            let qkv = self.lin(a, &format!("{pre}.qkv.w"), &format!("{pre}.qkv.b"))?;
            let mut outs = Vec::new();
            for h in 0..heads {
                let q = self.b.slice(qkv, 2, h * dh, dh)?;
                let k = self.b.slice(qkv, 2, d + h * dh, dh)?;
                let v = self.b.slice(qkv, 2, 2 * d + h * dh, dh)?;
                let s = self
                    .b
                    .batch_matmul_scaled(q, k, true, 1.0 / (dh as f64).sqrt())?;
                let att = self.b.softmax(s)?;
                outs.push(self.b.batch_matmul(att, v, false)?);
            }
            let o = if heads == 1 {
                outs[0]
            } else {
                self.b.concat(&outs, 2)?
            };
            let o = self.lin(o, &format!("{pre}.out.w"), &format!("{pre}.out.b"))?;
            x = self.b.add(x, o)?;
            let (g2, b2) = (
                self.p(&format!("{pre}.ln2.g"))?,
                self.p(&format!("{pre}.ln2.b"))?,
            );
            let m = self.b.layer_norm(x, g2, b2, LN_EPS)?;
            let m = self.lin(m, &format!("{pre}.mlp1.w"), &format!("{pre}.mlp1.b"))?;
            let m = self.b.relu(m)?;
            let m = self.lin(m, &format!("{pre}.mlp2.w"), &format!("{pre}.mlp2.b"))?;
            x = self.b.add(x, m)?;
        }
        let (gf, bf) = (self.p("tbs.ln_f.g")?, self.p("tbs.ln_f.b")?);
        x = self.b.layer_norm(x, gf, bf, LN_EPS)?;
        let s = cfg.stride();
        let mut out = Vec::new();
        for (i, spec) in self.tasks.iter().enumerate() {
            let t = &spec.name;
            let xi = if n == 1 {
                x
            } else {
                self.b.slice(x, 1, i * p, p)?
            };
            let xi = self.b.reshape(xi, &[bsz, g, g, d])?;
            let y = self.lin(xi, &format!("tbs.head.{t}.w"), &format!("tbs.head.{t}.b"))?;
            let y = self.b.unpatchify(y, s)?;
            out.push(self.finalize(spec, y)?);
        }
        self.b.pop_scope();
        Ok(out)
    }

    pub fn finish(self) -> Graph {
        self.b.finish()
    }
}

/// A compiled graph of one kind, with its binding conventions.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub graph: Graph,
    pub kind: GraphKind,
    pub batch: usize,
    pub cfg: ModelConfig,
    pub tasks: Vec<TaskSpec>,
    /// Names of the monitored encoder stages, `enc.s<k>`.
    pub stage_names: Vec<String>,
}

impl ModelGraph {
    pub fn build(
        cfg: &ModelConfig,
        tasks: &[TaskSpec],
        batch: usize,
        kind: GraphKind,
    ) -> Result<Self, ModelError> {
        let needs_tbs = matches!(
            kind,
            GraphKind::TbsPredict | GraphKind::Ttt(TttObjective::S4t { .. })
        );
        if needs_tbs && !cfg.components.tbs {
            return Err(ModelError::Config(
                "this pass needs the synchronizer component".into(),
            ));
        }
        let mut mb = ModelBuilder::new(cfg, tasks, batch)?;
        let x = mb.image_input()?;
        let (z, stages) = mb.encode(x)?;
        let stage_names: Vec<String> = (0..stages.len()).map(|k| format!("enc.s{k}")).collect();
        let (latents, aux) = mb.project(z)?;
        let tbs_branch = |mb: &mut ModelBuilder| -> R<Vec<NodeId>> {
            let masks = mb.mask_inputs()?;
            let masked = mb.apply_mask(&latents, &masks)?;
            mb.tbs_predict(&masked)
        };
        match kind {
            GraphKind::Predict => {
                let main = mb.decode_main(&latents)?;
                for (t, &m) in tasks.iter().zip(&main) {
                    mb.b.output(format!("main.{}", t.name), m);
                }
                mb.b.output("z", z);
                for (t, &zi) in tasks.iter().zip(&latents) {
                    mb.b.output(format!("z.{}", t.name), zi);
                }
                for (name, &s) in stage_names.iter().zip(&stages) {
                    mb.b.output(format!("act.{name}"), s);
                }
            }
            GraphKind::Train(w) => {
                let main = mb.decode_main(&latents)?;
                let tbs = if cfg.components.tbs {
                    Some(tbs_branch(&mut mb)?)
                } else {
                    None
                };
                let targets = mb.target_inputs()?;
                let tp = cfg.components.projection.then_some(aux.as_slice());
                let l = objectives::loss_train_node(
                    &mut mb.b,
                    tasks,
                    &main,
                    tp,
                    tbs.as_deref(),
                    &targets,
                    &w,
                )?;
                mb.b.output("loss", l.total);
                mb.b.output("loss_main", l.main);
                if let Some(n) = l.tp {
                    mb.b.output("loss_tp", n);
                }
                if let Some(n) = l.tbs {
                    mb.b.output("loss_tbs", n);
                }
            }
            GraphKind::Ttt(obj) => {
                let main = mb.decode_main(&latents)?;
                for (t, &m) in tasks.iter().zip(&main) {
                    mb.b.output(format!("main.{}", t.name), m);
                }
                let (loss, raw) = match obj {
                    TttObjective::S4t { weight, only_task } => {
                        if only_task.is_some_and(|t| t >= tasks.len()) {
                            return Err(ModelError::Config(
                                "single-task index out of range".into(),
                            ));
                        }
                        let tbs = tbs_branch(&mut mb)?;
                        objectives::loss_ttt_node(&mut mb.b, tasks, &tbs, &main, weight, only_task)?
                    }
                    TttObjective::Entropy { weight } => {
                        let l = objectives::entropy_node(&mut mb.b, tasks, &main)
                            .map_err(|e| ModelError::Config(e.to_string()))?;
                        (mb.b.scale(l, weight)?, l)
                    }
                    TttObjective::ActAlign { weight } => {
                        let layers: Vec<(String, NodeId)> = stage_names
                            .iter()
                            .cloned()
                            .zip(stages.iter().copied())
                            .collect();
                        let l = objectives::actalign_node(&mut mb.b, &layers)?;
                        (mb.b.scale(l, weight)?, l)
                    }
                };
                mb.b.output("loss", loss);
                mb.b.output("loss_raw", raw);
            }
            GraphKind::TbsPredict => {
                let tbs = tbs_branch(&mut mb)?;
                for (t, &y) in tasks.iter().zip(&tbs) {
                    mb.b.output(format!("tbs.{}", t.name), y);
                }
            }
        }
        Ok(Self {
            graph: mb.finish(),
            kind,
            batch,
            cfg: cfg.clone(),
            tasks: tasks.to_vec(),
            stage_names,
        })
    }

    /// Bindings for this graph. Mask inputs default to an empty plan, which
    /// is also forced when the masking component is off.
    pub fn inputs<T: Real>(
        &self,
        image: &Tensor<T>,
        targets: Option<&[Tensor<T>]>,
        plan: Option<&MaskPlan>,
        stats: Option<&SourceStats>,
    ) -> Result<TensorMap<T>, ModelError> {
        let mut m = TensorMap::new();
        m.insert("image".to_string(), image.clone());
        let names: Vec<&str> = self.graph.input_names().collect();
        let g = self.cfg.grid();
        if names.iter().any(|n| n.starts_with("mask.")) {
            let empty = MaskPlan::empty(g, g, self.tasks.len());
            let plan = match plan {
                Some(p) if self.cfg.components.masking => p,
                _ => &empty,
            };
            if plan.height != g || plan.width != g || plan.n_tasks() != self.tasks.len() {
                return Err(ModelError::Config(format!(
                    "mask plan {}×{} for {} tasks does not match grid {g}×{g} with {} tasks",
                    plan.height,
                    plan.width,
                    plan.n_tasks(),
                    self.tasks.len()
                )));
            }
            for (i, t) in self.tasks.iter().enumerate() {
                m.insert(format!("mask.{}", t.name), plan.grid_tensor(i));
            }
        }
        if names.iter().any(|n| n.starts_with("target.")) {
            let targets =
                targets.ok_or_else(|| ModelError::Config("this pass needs targets".into()))?;
            for (t, y) in self.tasks.iter().zip(targets) {
                m.insert(format!("target.{}", t.name), y.clone());
            }
        }
        if names.iter().any(|n| n.starts_with("src.")) {
            let stats = stats
                .ok_or_else(|| ModelError::Config("this pass needs source statistics".into()))?;
            objectives::bind_source_stats(&mut m, stats, &self.stage_names)
                .map_err(|e| ModelError::Config(e.to_string()))?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{finite_diff_check, forward_eval};
    use crate::model::{make_mask, MaskStrategy, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(cfg: &ModelConfig, batch: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.image_size;
        Tensor::from_fn([batch, s, s, cfg.in_channels], |_| rng.gen_range(-1.0..1.0))
    }

    fn rand_targets(
        cfg: &ModelConfig,
        tasks: &[TaskSpec],
        batch: usize,
        seed: u64,
    ) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.image_size;
        tasks
            .iter()
            .map(|t| {
                let c = t.channels();
                let mut v: Vec<f64> = (0..batch * s * s * c)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                match t.kind {
                    TaskKind::CategoricalMap { .. } => {
                        for row in v.chunks_mut(c) {
                            let k = rng.gen_range(0..c);
                            row.iter_mut()
                                .enumerate()
                                .for_each(|(j, x)| *x = (j == k) as u8 as f64);
                        }
                    }
                    TaskKind::UnitVectorMap => {
                        for row in v.chunks_mut(3) {
                            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                            row.iter_mut().for_each(|x| *x /= n);
                        }
                    }
                    TaskKind::ScalarMap => {}
                }
                Tensor::from_f64([batch, s, s, c], &v).unwrap()
            })
            .collect()
    }

    #[test]
    fn shapes_of_the_default_model() {
        let cfg = ModelConfig::default();
        let tasks = TaskSpec::default_tasks(6);
        let mg = ModelGraph::build(&cfg, &tasks, 2, GraphKind::Predict).unwrap();
        let g = &mg.graph;
        assert_eq!(g.shape(g.output("z").unwrap()), [2, 8, 8, 32]);
        assert_eq!(g.shape(g.output("main.semseg").unwrap()), [2, 32, 32, 6]);
        assert_eq!(g.shape(g.output("main.normal").unwrap()), [2, 32, 32, 3]);
        let tbs = ModelGraph::build(&cfg, &tasks, 2, GraphKind::TbsPredict).unwrap();
        assert_eq!(
            tbs.graph.shape(tbs.graph.output("tbs.depth").unwrap()),
            [2, 32, 32, 1]
        );
    }

    #[test]
    fn normals_are_unit_length() {
        let cfg = ModelConfig::tiny();
        let tasks = TaskSpec::default_tasks(3);
        let params = ModelParams::<f64>::init(&cfg, &tasks, 1);
        let mg = ModelGraph::build(&cfg, &tasks, 2, GraphKind::Predict).unwrap();
        let inputs = mg
            .inputs(&rand_image(&cfg, 2, 0), None, None, None)
            .unwrap();
        let ev = forward_eval(&mg.graph, &inputs, params.map()).unwrap();
        for row in ev.output("main.normal").unwrap().data().chunks(3) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn train_loss_gradients_match_finite_differences() {
        let cfg = ModelConfig::tiny();
        let tasks = TaskSpec::default_tasks(3);
        let params = ModelParams::<f64>::init(&cfg, &tasks, 2);
        let mg =
            ModelGraph::build(&cfg, &tasks, 1, GraphKind::Train(LossWeights::default())).unwrap();
        let plan = make_mask(MaskStrategy::Random, 0.5, 2, 2, 4, 3).unwrap();
        let targets = rand_targets(&cfg, &tasks, 1, 4);
        let inputs = mg
            .inputs(&rand_image(&cfg, 1, 5), Some(&targets), Some(&plan), None)
            .unwrap();
        let loss = mg.graph.output("loss").unwrap();
        let r = finite_diff_check(&mg.graph, loss, &inputs, params.map(), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    /// Pseudo-labels are detached, so the reference graph binds them as
    /// constants; finite differences of that graph must match the analytic
    /// gradient of the test-time graph.
    #[test]
    fn ttt_loss_gradients_match_constant_target_reference() {
        use crate::graph::backward;
        let cfg = ModelConfig::tiny();
        let tasks = TaskSpec::default_tasks(3);
        let params = ModelParams::<f64>::init(&cfg, &tasks, 6);
        let obj = TttObjective::S4t {
            weight: 0.01,
            only_task: None,
        };
        let mg = ModelGraph::build(&cfg, &tasks, 1, GraphKind::Ttt(obj)).unwrap();
        let plan = make_mask(MaskStrategy::SameForAll, 0.5, 2, 2, 4, 3).unwrap();
        let img = rand_image(&cfg, 1, 7);
        let inputs = mg.inputs(&img, None, Some(&plan), None).unwrap();
        let ev = forward_eval(&mg.graph, &inputs, params.map()).unwrap();
        let grads = backward(&mg.graph, mg.graph.output("loss").unwrap(), &ev).unwrap();

        let mut mb = ModelBuilder::new(&cfg, &tasks, 1).unwrap();
        let x = mb.image_input().unwrap();
        let (z, _) = mb.encode(x).unwrap();
        let (lat, _) = mb.project(z).unwrap();
        let masks = mb.mask_inputs().unwrap();
        let masked = mb.apply_mask(&lat, &masks).unwrap();
        let tbs = mb.tbs_predict(&masked).unwrap();
        let targets = mb.target_inputs().unwrap();
        let raw = objectives::summed_task_loss(&mut mb.b, &tasks, &tbs, &targets).unwrap();
        let loss = mb.b.scale(raw, 0.01).unwrap();
        mb.b.output("loss", loss);
        let reference = mb.finish();
        let mut ref_inputs = inputs.clone();
        for t in &tasks {
            let m = ev.output(&format!("main.{}", t.name)).unwrap();
            let target = if t.is_categorical() {
                let c = t.channels();
                let mut v = m.data().to_vec();
                for row in v.chunks_mut(c) {
                    let k = crate::graph::argmax_index(row);
                    row.iter_mut()
                        .enumerate()
                        .for_each(|(j, x)| *x = (j == k) as u8 as f64);
                }
                Tensor::new(m.shape().to_vec(), v).unwrap()
            } else {
                m.clone()
            };
            ref_inputs.insert(format!("target.{}", t.name), target);
        }
        let ref_params: TensorMap<f64> = params
            .iter()
            .filter(|(k, _)| reference.param_shape(k).is_some())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let r = finite_diff_check(&reference, loss, &ref_inputs, &ref_params, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        let rev = forward_eval(&reference, &ref_inputs, &ref_params).unwrap();
        let rgrads = backward(&reference, loss, &rev).unwrap();
        for (k, g) in grads.iter() {
            match rgrads.get(k) {
                Some(rg) => assert!(g.max_abs_diff(rg) < 1e-12, "{k}"),
                None => assert!(g.data().iter().all(|&v| v == 0.0), "{k} should not move"),
            }
        }
    }

    #[test]
    fn main_branch_ignores_tbs_parameters() {
        let cfg = ModelConfig::tiny();
        let tasks = TaskSpec::default_tasks(3);
        let a = ModelParams::<f32>::init(&cfg, &tasks, 1);
        let other = ModelParams::<f32>::init(&cfg, &tasks, 99);
        let b = a.with_group_from(&other, super::super::ParamGroup::Tbs);
        assert_ne!(a, b);
        let mg = ModelGraph::build(&cfg, &tasks, 2, GraphKind::Predict).unwrap();
        let img = rand_image(&cfg, 2, 3).cast::<f32>();
        let inputs = mg.inputs(&img, None, None, None).unwrap();
        let ea = forward_eval(&mg.graph, &inputs, a.map()).unwrap();
        let eb = forward_eval(&mg.graph, &inputs, b.map()).unwrap();
        for t in &tasks {
            let k = format!("main.{}", t.name);
            assert_eq!(ea.output(&k).unwrap(), eb.output(&k).unwrap());
        }
    }

    #[test]
    fn projection_identity_passes_latent_through() {
        let mut cfg = ModelConfig::tiny();
        cfg.task_channels = cfg.latent_channels();
        let tasks = TaskSpec::default_tasks(3);
        let mut params = ModelParams::<f64>::init(&cfg, &tasks, 1);
        let c = cfg.task_channels;
        for t in &tasks {
            params.insert(
                format!("proj.{}.w", t.name),
                Tensor::from_fn([c, c], |i| (i / c == i % c) as u8 as f64),
            );
        }
        let mg = ModelGraph::build(&cfg, &tasks, 1, GraphKind::Predict).unwrap();
        let inputs = mg
            .inputs(&rand_image(&cfg, 1, 2), None, None, None)
            .unwrap();
        let ev = forward_eval(&mg.graph, &inputs, params.map()).unwrap();
        for t in &tasks {
            assert_eq!(
                ev.output(&format!("z.{}", t.name)).unwrap(),
                ev.output("z").unwrap()
            );
        }
    }

    #[test]
    fn tbs_needs_its_component() {
        let mut cfg = ModelConfig::tiny();
        cfg.components.tbs = false;
        let tasks = TaskSpec::default_tasks(3);
        assert!(ModelGraph::build(&cfg, &tasks, 1, GraphKind::TbsPredict).is_err());
        assert!(
            ModelGraph::build(&cfg, &tasks, 1, GraphKind::Train(LossWeights::default())).is_ok()
        );
    }
}
