use super::{Graph, GraphError, NodeId, Op};
use crate::tensor::{numel, Real, Tensor, TensorMap};

/// All node values from one forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub(crate) values: Vec<Tensor<T>>,
    outputs: Vec<(String, NodeId)>,
}

impl<T: Real> Evaluation<T> {
    pub fn get(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn output(&self, name: &str) -> Result<&Tensor<T>, GraphError> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| &self.values[id.0])
            .ok_or_else(|| GraphError::UnknownOutput(name.to_string()))
    }

    pub fn into_output(mut self, name: &str) -> Result<Tensor<T>, GraphError> {
        let id = self
            .outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| GraphError::UnknownOutput(name.to_string()))?;
        Ok(std::mem::replace(
            &mut self.values[id.0],
            Tensor::scalar(T::zero()),
        ))
    }

    /// Scalar value of a one-element output.
    pub fn scalar(&self, name: &str) -> Result<f64, GraphError> {
        Ok(self.output(name)?.item().as_f64())
    }
}

/// Evaluate every node of `graph` under the given bindings.
///
/// Pure: neither bindings nor graph are modified, and repeated calls with
/// identical bindings produce bit-identical values.
pub fn forward_eval<T: Real>(
    graph: &Graph,
    inputs: &TensorMap<T>,
    params: &TensorMap<T>,
) -> Result<Evaluation<T>, GraphError> {
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let v = match &node.op {
            Op::Param(i) => bind(&graph.params[*i], params)?,
            Op::Input(i) => bind(&graph.inputs[*i], inputs)?,
            op => eval_op(op, &node.shape, &values),
        };
        if !v.is_finite() {
            return Err(GraphError::NonFinite {
                node: node.label.clone(),
            });
        }
        values.push(v);
    }
    Ok(Evaluation {
        values,
        outputs: graph.outputs.clone(),
    })
}

fn bind<T: Real>(leaf: &super::Leaf, map: &TensorMap<T>) -> Result<Tensor<T>, GraphError> {
    let t = map
        .get(&leaf.name)
        .ok_or_else(|| GraphError::MissingBinding(leaf.name.clone()))?;
    if t.shape() != leaf.shape.as_slice() {
        return Err(GraphError::BindingShape {
            name: leaf.name.clone(),
            expected: leaf.shape.clone(),
            got: t.shape().to_vec(),
        });
    }
    Ok(t.clone())
}

fn eval_op<T: Real>(op: &Op, shape: &[usize], vals: &[Tensor<T>]) -> Tensor<T> {
    let v = |id: &NodeId| &vals[id.0];
    let out = |data: Vec<T>| Tensor::from_parts(shape.to_vec(), data);
    match op {
        Op::Param(_) | Op::Input(_) => unreachable!("leaves are bound, not evaluated"),
        Op::MatMul(a, w) => {
            let (a, w) = (v(a), v(w));
            let k = w.shape()[0];
            let n = w.shape()[1];
            let m = a.len() / k;
            let mut c = vec![T::zero(); m * n];
            gemm(m, k, n, a.data(), false, w.data(), false, &mut c, T::zero());
            out(c)
        }
        Op::BatchMatMul {
            a,
            b,
            transpose_b,
            alpha,
        } => {
            let (a, b) = (v(a), v(b));
            let alpha = T::of(*alpha);
            let (g, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = shape[2];
            let mut c = vec![T::zero(); g * m * n];
            for i in 0..g {
                gemm_scaled(
                    m,
                    k,
                    n,
                    alpha,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    *transpose_b,
                    &mut c[i * m * n..(i + 1) * m * n],
                    T::zero(),
                );
            }
            out(c)
        }
        Op::AddSuffix(a, b) => {
            let (a, b) = (v(a), v(b));
            let bl = b.len();
            let mut d = a.data().to_vec();
            for row in d.chunks_mut(bl) {
                for (x, y) in row.iter_mut().zip(b.data()) {
                    *x += *y;
                }
            }
            out(d)
        }
        Op::Add(a, b) => out(zip(v(a), v(b), |x, y| x + y)),
        Op::Sub(a, b) => out(zip(v(a), v(b), |x, y| x - y)),
        Op::Mul(a, b) => out(zip(v(a), v(b), |x, y| x * y)),
        Op::Scale(a, c) => {
            let c = T::of(*c);
            out(v(a).data().iter().map(|&x| x * c).collect())
        }
        Op::AddScalar(a, c) => {
            let c = T::of(*c);
            out(v(a).data().iter().map(|&x| x + c).collect())
        }
        Op::Abs(a) => out(v(a).data().iter().map(|x| x.abs()).collect()),
        Op::Square(a) => out(v(a).data().iter().map(|&x| x * x).collect()),
        Op::Sqrt(a, eps) => {
            let eps = T::of(*eps);
            out(v(a).data().iter().map(|&x| (x + eps).sqrt()).collect())
        }
        Op::Relu(a) => out(v(a).data().iter().map(|&x| x.max(T::zero())).collect()),
        Op::Softmax(a) => {
            let a = v(a);
            let c = *a.shape().last().unwrap();
            let mut d = a.data().to_vec();
            d.chunks_mut(c).for_each(softmax_row);
            out(d)
        }
        Op::LogSoftmax(a) => {
            let a = v(a);
            let c = *a.shape().last().unwrap();
            let mut d = a.data().to_vec();
            for row in d.chunks_mut(c) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&x| (x - m).exp()).sum::<T>().ln() + m;
                row.iter_mut().for_each(|x| *x -= lse);
            }
            out(d)
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            eps,
        } => {
            let (x, g, b) = (v(x), v(gamma), v(beta));
            let c = *x.shape().last().unwrap();
            let mut d = Vec::with_capacity(x.len());
            for row in x.data().chunks(c) {
                let (mu, rstd) = row_stats(row, *eps);
                for j in 0..c {
                    d.push((row[j] - mu) * rstd * g.data()[j] + b.data()[j]);
                }
            }
            out(d)
        }
        Op::L2Normalize(a, eps) => {
            let a = v(a);
            let c = *a.shape().last().unwrap();
            let eps = T::of(*eps);
            let mut d = a.data().to_vec();
            for row in d.chunks_mut(c) {
                let n = (row.iter().map(|&x| x * x).sum::<T>() + eps).sqrt();
                row.iter_mut().for_each(|x| *x = *x / n);
            }
            out(d)
        }
        Op::Sum(a) => out(vec![v(a).data().iter().copied().sum()]),
        Op::Mean(a) => {
            let a = v(a);
            out(vec![
                a.data().iter().copied().sum::<T>() / T::of(a.len() as f64),
            ])
        }
        Op::SumLast(a) => {
            let a = v(a);
            let c = *a.shape().last().unwrap();
            out(a
                .data()
                .chunks(c)
                .map(|r| r.iter().copied().sum())
                .collect())
        }
        Op::MeanLeading(a) => {
            let a = v(a);
            let c = *a.shape().last().unwrap();
            let rows = a.len() / c;
            let mut acc = vec![T::zero(); c];
            for row in a.data().chunks(c) {
                for (s, x) in acc.iter_mut().zip(row) {
                    *s += *x;
                }
            }
            let inv = T::of(1.0 / rows as f64);
            out(acc.into_iter().map(|s| s * inv).collect())
        }
        Op::Patchify(x, p) => {
            let x = v(x);
            let mut d = vec![T::zero(); x.len()];
            for_each_patch_index(x.shape(), *p, |src, dst| d[dst] = x.data()[src]);
            out(d)
        }
        Op::Unpatchify(x, p) => {
            let x = v(x);
            let mut d = vec![T::zero(); x.len()];
            for_each_patch_index(shape, *p, |img, patched| d[img] = x.data()[patched]);
            out(d)
        }
        Op::UpsampleNearest(x, f) => {
            let x = v(x);
            let (b, h, w, c) = dims4(x.shape());
            let (oh, ow) = (h * f, w * f);
            let mut d = Vec::with_capacity(numel(shape));
            for bi in 0..b {
                for y in 0..oh {
                    for xx in 0..ow {
                        let src = ((bi * h + y / f) * w + xx / f) * c;
                        d.extend_from_slice(&x.data()[src..src + c]);
                    }
                }
            }
            out(d)
        }
        Op::Concat(parts, axis) => {
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..*axis].iter().product();
            let mut d = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                for p in parts {
                    let t = v(p);
                    let blk = t.shape()[*axis] * inner;
                    d.extend_from_slice(&t.data()[o * blk..(o + 1) * blk]);
                }
            }
            out(d)
        }
        Op::Slice {
            x,
            axis,
            start,
            len,
        } => {
            let x = v(x);
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..*axis].iter().product();
            let full = x.shape()[*axis] * inner;
            let mut d = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                let base = o * full + start * inner;
                d.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            out(d)
        }
        Op::Reshape(x) => out(v(x).data().to_vec()),
        Op::Permute(x, perm) => {
            let x = v(x);
            let mut d = vec![T::zero(); x.len()];
            for_each_permuted(x.shape(), perm, |src, dst| d[dst] = x.data()[src]);
            out(d)
        }
        Op::MaskFill { x, mask, token } => {
            let (x, m, t) = (v(x), v(mask), v(token));
            let (_, h, w, c) = dims4(x.shape());
            let per_sample = m.shape().len() == 2;
            let mut d = x.data().to_vec();
            for (pos, row) in d.chunks_mut(c).enumerate() {
                let mi = if per_sample { pos % (h * w) } else { pos };
                if m.data()[mi] > T::of(0.5) {
                    row.copy_from_slice(t.data());
                }
            }
            out(d)
        }
        Op::Detach(x) => out(v(x).data().to_vec()),
        Op::ArgmaxOneHot(x) => {
            let x = v(x);
            let c = *x.shape().last().unwrap();
            let mut d = vec![T::zero(); x.len()];
            for (r, row) in x.data().chunks(c).enumerate() {
                d[r * c + argmax(row)] = T::one();
            }
            out(d)
        }
    }
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_row<T: Real>(row: &mut [T]) {
    let m = row
        .iter()
        .copied()
        .fold(row[0], |a, b| if b > a { b } else { a });
    let s = T::exp_shifted(row, m);
    let inv = T::one() / s;
    row.iter_mut().for_each(|x| *x *= inv);
}

/// Mean and reciprocal standard deviation of a row.
pub(crate) fn row_stats<T: Real>(row: &[T], eps: f64) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mu = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() / n;
    (mu, T::one() / (var + T::of(eps)).sqrt())
}

pub(crate) fn dims4(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

/// Row-major `c = a·b (+ beta·c)` for contiguous slices; `b` may be stored
/// transposed as `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    transpose_a: bool,
    b: &[T],
    transpose_b: bool,
    c: &mut [T],
    beta: T,
) {
    gemm_scaled(m, k, n, T::one(), a, transpose_a, b, transpose_b, c, beta);
}

/// `c ← alpha · op(a) · op(b) + beta · c`, row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_scaled<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    transpose_a: bool,
    b: &[T],
    transpose_b: bool,
    c: &mut [T],
    beta: T,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if transpose_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if transpose_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths match the stated dimensions and `c` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Calls `f(image_index, patched_index)` for each element of an image of
/// shape `[B,H,W,C]` split into `p×p` patches.
pub(crate) fn for_each_patch_index(img: &[usize], p: usize, mut f: impl FnMut(usize, usize)) {
    let (b, h, w, c) = dims4(img);
    let (ph, pw) = (h / p, w / p);
    let pc = p * p * c;
    for bi in 0..b {
        for y in 0..h {
            let (py, dy) = (y / p, y % p);
            for x in 0..w {
                let (px, dx) = (x / p, x % p);
                let src = ((bi * h + y) * w + x) * c;
                let dst = ((bi * ph + py) * pw + px) * pc + (dy * p + dx) * c;
                for ch in 0..c {
                    f(src + ch, dst + ch);
                }
            }
        }
    }
}

/// Calls `f(src_index, dst_index)` where output axis `i` is input axis `perm[i]`.
pub(crate) fn for_each_permuted(
    in_shape: &[usize],
    perm: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(in_shape);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(src, dst);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}
