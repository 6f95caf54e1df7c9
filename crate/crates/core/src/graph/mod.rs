//! Static computation graphs with forward evaluation and exact reverse-mode
//! gradients.
//!
//! A [`GraphBuilder`] records primitive operations and infers every node's
//! shape while the graph is built, so a finished [`Graph`] can be evaluated
//! repeatedly against different parameter and input bindings. Nodes are
//! stored in creation order, which is a topological order by construction.
//!
//! ```
//! use s4t::graph::{GraphBuilder, forward_eval, backward};
//! use s4t::tensor::{Tensor, TensorMap};
//!
//! let mut b = GraphBuilder::new();
//! let x = b.param("x", &[1]).unwrap();
//! let sq = b.square(x).unwrap();
//! let loss = b.sum(sq).unwrap();
//! let g = b.finish();
//!
//! let mut params = TensorMap::new();
//! params.insert("x".to_string(), Tensor::<f64>::from_f64([1], &[3.0]).unwrap());
//! let eval = forward_eval(&g, &TensorMap::new(), &params).unwrap();
//! let grads = backward(&g, loss, &eval).unwrap();
//! assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
//! ```

mod backward;
mod check;
mod forward;

pub use backward::{backward, GradientSet};
pub use check::{finite_diff_check, finite_diff_check_f32, FiniteDiffReport, GRAD_NORM_FLOOR};
pub use forward::{forward_eval, Evaluation};

/// Index of the largest entry; ties go to the first.
pub fn argmax_index<T: crate::tensor::Real>(row: &[T]) -> usize {
    forward::argmax(row)
}

use crate::tensor::numel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("shape mismatch at node `{node}`: {detail}")]
    Shape { node: String, detail: String },
    #[error("non-finite value produced by node `{node}`")]
    NonFinite { node: String },
    #[error("missing binding for `{0}`")]
    MissingBinding(String),
    #[error("binding `{name}` has shape {got:?}, graph declares {expected:?}")]
    BindingShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("duplicate leaf name `{0}`")]
    DuplicateName(String),
    #[error("loss node `{node}` has shape {shape:?}; a scalar is required")]
    NonScalarLoss { node: String, shape: Vec<usize> },
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
    #[error("non-finite loss at perturbed point of parameter `{0}`")]
    PerturbedNonFinite(String),
}

/// Primitive operations. Operand order follows the argument order of the
/// matching [`GraphBuilder`] method.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Param(usize),
    Input(usize),
    /// `[.., k] · [k, n]`
    MatMul(NodeId, NodeId),
    /// `α · [g, m, k] · [g, k, n]`, or `α · [g, m, k] · [g, n, k]ᵀ`.
    BatchMatMul {
        a: NodeId,
        b: NodeId,
        transpose_b: bool,
        alpha: f64,
    },
    /// `b`'s shape is a suffix of `a`'s; `b` broadcasts over the leading axes.
    AddSuffix(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Abs(NodeId),
    Square(NodeId),
    Sqrt(NodeId, f64),
    Relu(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    L2Normalize(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    MeanLeading(NodeId),
    Patchify(NodeId, usize),
    Unpatchify(NodeId, usize),
    UpsampleNearest(NodeId, usize),
    Concat(Vec<NodeId>, usize),
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    /// Replace masked spatial positions of `x [B,h,w,C]` by `token [C]`;
    /// `mask` is `[h,w]` or `[B,h,w]` with 1 marking masked positions.
    MaskFill {
        x: NodeId,
        mask: NodeId,
        token: NodeId,
    },
    Detach(NodeId),
    ArgmaxOneHot(NodeId),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Input(_) => "input",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::AddSuffix(..) => "add_suffix",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::L2Normalize(..) => "l2_normalize",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLast(_) => "sum_last",
            Op::MeanLeading(_) => "mean_leading",
            Op::Patchify(..) => "patchify",
            Op::Unpatchify(..) => "unpatchify",
            Op::UpsampleNearest(..) => "upsample_nearest",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Permute(..) => "permute",
            Op::MaskFill { .. } => "mask_fill",
            Op::Detach(_) => "detach",
            Op::ArgmaxOneHot(_) => "argmax_one_hot",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Param(_) | Op::Input(_) => vec![],
            Op::MatMul(a, b)
            | Op::AddSuffix(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Sqrt(a, _)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::L2Normalize(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::MeanLeading(a)
            | Op::Patchify(a, _)
            | Op::Unpatchify(a, _)
            | Op::UpsampleNearest(a, _)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Detach(a)
            | Op::ArgmaxOneHot(a) => vec![*a],
            Op::Slice { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat(parts, _) => parts.clone(),
            Op::MaskFill { x, mask, token } => vec![*x, *mask, *token],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Vec<usize>,
    pub(crate) label: String,
    pub(crate) needs_grad: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Leaf {
    pub(crate) name: String,
    pub(crate) shape: Vec<usize>,
    pub(crate) node: NodeId,
}

/// An immutable, topologically ordered computation graph.
#[derive(Debug, Clone)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) params: Vec<Leaf>,
    pub(crate) inputs: Vec<Leaf>,
    pub(crate) outputs: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|l| l.name.as_str())
    }

    pub fn param_shape(&self, name: &str) -> Option<&[usize]> {
        self.params
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.shape.as_slice())
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|l| l.name.as_str())
    }

    pub fn output(&self, name: &str) -> Result<NodeId, GraphError> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| GraphError::UnknownOutput(name.to_string()))
    }

    pub fn output_names(&self) -> impl Iterator<Item = &str> {
        self.outputs.iter().map(|(n, _)| n.as_str())
    }
}

/// Records operations and infers shapes.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Leaf>,
    inputs: Vec<Leaf>,
    outputs: Vec<(String, NodeId)>,
    scope: Vec<String>,
}

type BResult = Result<NodeId, GraphError>;

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prefix subsequent node labels with `name` until [`pop_scope`](Self::pop_scope).
    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.scope.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn finish(self) -> Graph {
        Graph {
            nodes: self.nodes,
            params: self.params,
            inputs: self.inputs,
            outputs: self.outputs,
        }
    }

    pub fn output(&mut self, name: impl Into<String>, node: NodeId) {
        self.outputs.push((name.into(), node));
    }

    fn next_label(&self, kind: &str) -> String {
        let idx = self.nodes.len();
        if self.scope.is_empty() {
            format!("{kind}#{idx}")
        } else {
            format!("{}/{kind}#{idx}", self.scope.join("/"))
        }
    }

    fn err(&self, kind: &str, detail: String) -> GraphError {
        GraphError::Shape {
            node: self.next_label(kind),
            detail,
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Input(_) | Op::Detach(_) | Op::ArgmaxOneHot(_) => false,
            other => other
                .operands()
                .iter()
                .any(|id| self.nodes[id.0].needs_grad),
        };
        let label = match &op {
            Op::Param(i) => self.params[*i].name.clone(),
            Op::Input(i) => self.inputs[*i].name.clone(),
            other => self.next_label(other.kind()),
        };
        self.nodes.push(Node {
            op,
            shape,
            label,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check_leaf(&self, name: &str, shape: &[usize]) -> Result<(), GraphError> {
        if self
            .params
            .iter()
            .chain(&self.inputs)
            .any(|l| l.name == name)
        {
            return Err(GraphError::DuplicateName(name.to_string()));
        }
        if shape.contains(&0) {
            return Err(GraphError::Shape {
                node: name.to_string(),
                detail: format!("zero extent in {shape:?}"),
            });
        }
        Ok(())
    }

    /// Declare a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, shape: &[usize]) -> BResult {
        let name = name.into();
        self.check_leaf(&name, shape)?;
        let node = NodeId(self.nodes.len());
        self.params.push(Leaf {
            name,
            shape: shape.to_vec(),
            node,
        });
        Ok(self.push(Op::Param(self.params.len() - 1), shape.to_vec()))
    }

    /// Declare a named constant leaf supplied at evaluation time.
    pub fn input(&mut self, name: impl Into<String>, shape: &[usize]) -> BResult {
        let name = name.into();
        self.check_leaf(&name, shape)?;
        let node = NodeId(self.nodes.len());
        self.inputs.push(Leaf {
            name,
            shape: shape.to_vec(),
            node,
        });
        Ok(self.push(Op::Input(self.inputs.len() - 1), shape.to_vec()))
    }

    pub fn matmul(&mut self, a: NodeId, w: NodeId) -> BResult {
        let (sa, sw) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        if sa.is_empty() || sw.len() != 2 || sa[sa.len() - 1] != sw[0] {
            return Err(self.err("matmul", format!("{sa:?} · {sw:?}")));
        }
        let mut out = sa.clone();
        *out.last_mut().unwrap() = sw[1];
        Ok(self.push(Op::MatMul(a, w), out))
    }

    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> BResult {
        self.batch_matmul_scaled(a, b, transpose_b, 1.0)
    }

    /// [`batch_matmul`](Self::batch_matmul) with the product scaled by `alpha`.
    pub fn batch_matmul_scaled(
        &mut self,
        a: NodeId,
        b: NodeId,
        transpose_b: bool,
        alpha: f64,
    ) -> BResult {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(self.err(
                "batch_matmul",
                format!("{sa:?} · {sb:?} (transpose_b={transpose_b})"),
            ));
        }
        let n = if transpose_b { sb[1] } else { sb[2] };
        Ok(self.push(
            Op::BatchMatMul {
                a,
                b,
                transpose_b,
                alpha,
            },
            vec![sa[0], sa[1], n],
        ))
    }

    /// `a + b` where `b` broadcasts over the leading axes of `a`.
    pub fn add_suffix(&mut self, a: NodeId, b: NodeId) -> BResult {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(self.err("add_suffix", format!("{sb:?} is not a suffix of {sa:?}")));
        }
        Ok(self.push(Op::AddSuffix(a, b), sa))
    }

    fn same_shape(
        &mut self,
        kind: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<Vec<usize>, GraphError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(self.err(kind, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> BResult {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> BResult {
        let s = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> BResult {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    fn unary(&mut self, op: Op, a: NodeId) -> BResult {
        let s = self.shape(a).to_vec();
        Ok(self.push(op, s))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> BResult {
        self.unary(Op::Scale(a, c), a)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> BResult {
        self.unary(Op::AddScalar(a, c), a)
    }

    pub fn abs(&mut self, a: NodeId) -> BResult {
        self.unary(Op::Abs(a), a)
    }

    pub fn square(&mut self, a: NodeId) -> BResult {
        self.unary(Op::Square(a), a)
    }

    /// `sqrt(a + eps)`
    pub fn sqrt(&mut self, a: NodeId, eps: f64) -> BResult {
        self.unary(Op::Sqrt(a, eps), a)
    }

    pub fn relu(&mut self, a: NodeId) -> BResult {
        self.unary(Op::Relu(a), a)
    }

    fn nonscalar(&self, kind: &str, a: NodeId) -> Result<(), GraphError> {
        if self.shape(a).is_empty() {
            return Err(self.err(kind, "operand must have at least one axis".into()));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: NodeId) -> BResult {
        self.nonscalar("softmax", a)?;
        self.unary(Op::Softmax(a), a)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> BResult {
        self.nonscalar("log_softmax", a)?;
        self.unary(Op::LogSoftmax(a), a)
    }

    /// Normalize over the last axis, then scale by `gamma` and shift by `beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> BResult {
        self.nonscalar("layer_norm", x)?;
        let sx = self.shape(x).to_vec();
        let c = *sx.last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            let (g, b) = (self.shape(gamma).to_vec(), self.shape(beta).to_vec());
            return Err(self.err("layer_norm", format!("x {sx:?}, gamma {g:?}, beta {b:?}")));
        }
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            sx,
        ))
    }

    /// `x / sqrt(|x|² + eps)` over the last axis.
    pub fn l2_normalize(&mut self, a: NodeId, eps: f64) -> BResult {
        self.nonscalar("l2_normalize", a)?;
        self.unary(Op::L2Normalize(a, eps), a)
    }

    pub fn sum(&mut self, a: NodeId) -> BResult {
        Ok(self.push(Op::Sum(a), vec![]))
    }

    pub fn mean(&mut self, a: NodeId) -> BResult {
        Ok(self.push(Op::Mean(a), vec![]))
    }

    pub fn sum_last(&mut self, a: NodeId) -> BResult {
        self.nonscalar("sum_last", a)?;
        let mut s = self.shape(a).to_vec();
        s.pop();
        Ok(self.push(Op::SumLast(a), s))
    }

    /// Mean over every axis except the last.
    pub fn mean_leading(&mut self, a: NodeId) -> BResult {
        self.nonscalar("mean_leading", a)?;
        let c = *self.shape(a).last().unwrap();
        Ok(self.push(Op::MeanLeading(a), vec![c]))
    }

    /// `[B,H,W,C] → [B,H/p,W/p,p·p·C]`
    pub fn patchify(&mut self, x: NodeId, p: usize) -> BResult {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || p == 0 || !s[1].is_multiple_of(p) || !s[2].is_multiple_of(p) {
            return Err(self.err("patchify", format!("{s:?} with patch {p}")));
        }
        Ok(self.push(
            Op::Patchify(x, p),
            vec![s[0], s[1] / p, s[2] / p, p * p * s[3]],
        ))
    }

    /// `[B,h,w,p·p·C] → [B,h·p,w·p,C]`
    pub fn unpatchify(&mut self, x: NodeId, p: usize) -> BResult {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || p == 0 || !s[3].is_multiple_of(p * p) {
            return Err(self.err("unpatchify", format!("{s:?} with patch {p}")));
        }
        Ok(self.push(
            Op::Unpatchify(x, p),
            vec![s[0], s[1] * p, s[2] * p, s[3] / (p * p)],
        ))
    }

    /// `[B,h,w,C] → [B,h·f,w·f,C]` by repetition.
    pub fn upsample_nearest(&mut self, x: NodeId, f: usize) -> BResult {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || f == 0 {
            return Err(self.err("upsample_nearest", format!("{s:?} with factor {f}")));
        }
        Ok(self.push(
            Op::UpsampleNearest(x, f),
            vec![s[0], s[1] * f, s[2] * f, s[3]],
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> BResult {
        let Some(first) = parts.first() else {
            return Err(self.err("concat", "no operands".into()));
        };
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(self.err("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                let s = s.to_vec();
                return Err(self.err(
                    "concat",
                    format!("{s:?} incompatible with {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut out = base;
        out[axis] = total;
        Ok(self.push(Op::Concat(parts.to_vec(), axis), out))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> BResult {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(self.err(
                "slice",
                format!("{s:?} axis {axis} [{start}, {})", start + len),
            ));
        }
        let mut out = s;
        out[axis] = len;
        Ok(self.push(
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
            out,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> BResult {
        let s = self.shape(x);
        if numel(s) != numel(shape) || shape.contains(&0) {
            let s = s.to_vec();
            return Err(self.err("reshape", format!("{s:?} → {shape:?}")));
        }
        Ok(self.push(Op::Reshape(x), shape.to_vec()))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> BResult {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        let valid = perm.len() == s.len()
            && perm
                .iter()
                .all(|&p| p < s.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(self.err("permute", format!("{perm:?} for {s:?}")));
        }
        let out = perm.iter().map(|&p| s[p]).collect();
        Ok(self.push(Op::Permute(x, perm.to_vec()), out))
    }

    pub fn mask_fill(&mut self, x: NodeId, mask: NodeId, token: NodeId) -> BResult {
        let (sx, sm, st) = (
            self.shape(x).to_vec(),
            self.shape(mask).to_vec(),
            self.shape(token).to_vec(),
        );
        let ok = sx.len() == 4 && st == [sx[3]] && (sm == sx[1..3] || sm == sx[..3]);
        if !ok {
            return Err(self.err("mask_fill", format!("x {sx:?}, mask {sm:?}, token {st:?}")));
        }
        Ok(self.push(Op::MaskFill { x, mask, token }, sx))
    }

    /// Identity on values; blocks gradient flow.
    pub fn detach(&mut self, a: NodeId) -> BResult {
        self.unary(Op::Detach(a), a)
    }

    /// One-hot encoding of the argmax over the last axis (no gradient).
    pub fn argmax_one_hot(&mut self, a: NodeId) -> BResult {
        self.nonscalar("argmax_one_hot", a)?;
        self.unary(Op::ArgmaxOneHot(a), a)
    }

    /// `x · w + b` over the last axis.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> BResult {
        let y = self.matmul(x, w)?;
        self.add_suffix(y, b)
    }
}
