use std::collections::BTreeMap;

use super::forward::{
    dims4, for_each_patch_index, for_each_permuted, gemm, gemm_scaled, row_stats, Evaluation,
};
use super::{Graph, GraphError, NodeId, Op};
use crate::tensor::{Real, Tensor};

/// Gradients of a scalar loss with respect to every declared parameter.
#[derive(Debug, Clone)]
pub struct GradientSet<T> {
    grads: BTreeMap<String, Tensor<T>>,
    /// Parameters the loss does not depend on; their gradient is zero.
    pub unreachable: Vec<String>,
}

impl<T: Real> GradientSet<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<T>> {
        self.grads
    }
}

/// Reverse-mode gradients of the scalar node `loss`.
pub fn backward<T: Real>(
    graph: &Graph,
    loss: NodeId,
    eval: &Evaluation<T>,
) -> Result<GradientSet<T>, GraphError> {
    let loss_node = &graph.nodes[loss.0];
    if loss_node.shape.iter().product::<usize>() != 1 {
        return Err(GraphError::NonScalarLoss {
            node: loss_node.label.clone(),
            shape: loss_node.shape.clone(),
        });
    }
    let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
    grads[loss.0] = Some(vec![T::one()]);

    for idx in (0..=loss.0).rev() {
        let node = &graph.nodes[idx];
        if !node.needs_grad || matches!(node.op, Op::Param(_)) {
            continue;
        }
        let Some(g) = grads[idx].take() else {
            continue;
        };
        propagate(graph, &node.op, NodeId(idx), &g, eval, &mut grads);
    }

    let mut out = BTreeMap::new();
    let mut unreachable = Vec::new();
    for leaf in &graph.params {
        let g = grads.get_mut(leaf.node.0).and_then(Option::take);
        let t = match g {
            Some(d) => Tensor::from_parts(leaf.shape.clone(), d),
            None => {
                unreachable.push(leaf.name.clone());
                Tensor::zeros(leaf.shape.clone())
            }
        };
        out.insert(leaf.name.clone(), t);
    }
    Ok(GradientSet {
        grads: out,
        unreachable,
    })
}

fn accumulate<T: Real>(
    graph: &Graph,
    grads: &mut [Option<Vec<T>>],
    id: NodeId,
    make: impl FnOnce() -> Vec<T>,
) {
    if !graph.nodes[id.0].needs_grad {
        return;
    }
    let d = make();
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

/// Accumulate directly into the slot, allocating zeros on first use.
fn slot<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, n: usize) -> &mut Vec<T> {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn propagate<T: Real>(
    graph: &Graph,
    op: &Op,
    me: NodeId,
    g: &[T],
    eval: &Evaluation<T>,
    grads: &mut [Option<Vec<T>>],
) {
    let val = |id: &NodeId| eval.get(*id);
    let ng = |id: &NodeId| graph.nodes[id.0].needs_grad;
    let y = eval.get(me);
    match op {
        Op::Param(_) | Op::Input(_) | Op::Detach(_) | Op::ArgmaxOneHot(_) => {}
        Op::MatMul(a, w) => {
            let (av, wv) = (val(a), val(w));
            let (k, n) = (wv.shape()[0], wv.shape()[1]);
            let m = av.len() / k;
            if ng(a) {
                let dst = slot(grads, *a, m * k);
                gemm(m, n, k, g, false, wv.data(), true, dst, T::one());
            }
            if ng(w) {
                let dst = slot(grads, *w, k * n);
                gemm(k, m, n, av.data(), true, g, false, dst, T::one());
            }
        }
        Op::BatchMatMul {
            a,
            b,
            transpose_b,
            alpha,
        } => {
            let (av, bv) = (val(a), val(b));
            let alpha = T::of(*alpha);
            let (gn, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = y.shape()[2];
            let (mk, kn, mn) = (m * k, k * n, m * n);
            if ng(a) {
                let dst = slot(grads, *a, gn * mk);
                for i in 0..gn {
                    // dA = dC · Bᵀ, with B stored [k,n] or [n,k]
                    gemm_scaled(
                        m,
                        n,
                        k,
                        alpha,
                        &g[i * mn..(i + 1) * mn],
                        false,
                        &bv.data()[i * kn..(i + 1) * kn],
                        !*transpose_b,
                        &mut dst[i * mk..(i + 1) * mk],
                        T::one(),
                    );
                }
            }
            if ng(b) {
                let dst = slot(grads, *b, gn * kn);
                for i in 0..gn {
                    let gi = &g[i * mn..(i + 1) * mn];
                    let ai = &av.data()[i * mk..(i + 1) * mk];
                    let di = &mut dst[i * kn..(i + 1) * kn];
                    if *transpose_b {
                        // dBt [n,k] = dCᵀ · A
                        gemm_scaled(n, m, k, alpha, gi, true, ai, false, di, T::one());
                    } else {
                        // dB [k,n] = Aᵀ · dC
                        gemm_scaled(k, m, n, alpha, ai, true, gi, false, di, T::one());
                    }
                }
            }
        }
        Op::AddSuffix(a, b) => {
            accumulate(graph, grads, *a, || g.to_vec());
            if ng(b) {
                let bl = val(b).len();
                let dst = slot(grads, *b, bl);
                for row in g.chunks(bl) {
                    dst.iter_mut().zip(row).for_each(|(d, x)| *d += *x);
                }
            }
        }
        Op::Add(a, b) => {
            accumulate(graph, grads, *a, || g.to_vec());
            accumulate(graph, grads, *b, || g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(graph, grads, *a, || g.to_vec());
            accumulate(graph, grads, *b, || g.iter().map(|&x| -x).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            accumulate(graph, grads, *a, || {
                g.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect()
            });
            accumulate(graph, grads, *b, || {
                g.iter().zip(av.data()).map(|(&x, &y)| x * y).collect()
            });
        }
        Op::Scale(a, c) => {
            let c = T::of(*c);
            accumulate(graph, grads, *a, || g.iter().map(|&x| x * c).collect());
        }
        Op::AddScalar(a, _) | Op::Reshape(a) => accumulate(graph, grads, *a, || g.to_vec()),
        Op::Abs(a) => {
            let av = val(a);
            accumulate(graph, grads, *a, || {
                g.iter()
                    .zip(av.data())
                    .map(|(&x, &v)| {
                        if v > T::zero() {
                            x
                        } else if v < T::zero() {
                            -x
                        } else {
                            T::zero()
                        }
                    })
                    .collect()
            });
        }
        Op::Square(a) => {
            let av = val(a);
            let two = T::of(2.0);
            accumulate(graph, grads, *a, || {
                g.iter()
                    .zip(av.data())
                    .map(|(&x, &v)| two * v * x)
                    .collect()
            });
        }
        Op::Sqrt(a, _) => {
            let half = T::of(0.5);
            accumulate(graph, grads, *a, || {
                g.iter()
                    .zip(y.data())
                    .map(|(&x, &s)| half * x / s)
                    .collect()
            });
        }
        Op::Relu(a) => {
            let av = val(a);
            accumulate(graph, grads, *a, || {
                g.iter()
                    .zip(av.data())
                    .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() })
                    .collect()
            });
        }
        Op::Softmax(a) => {
            let c = *y.shape().last().unwrap();
            accumulate(graph, grads, *a, || {
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(y.data().chunks(c)) {
                    let dot: T = gr.iter().zip(yr).map(|(&x, &p)| x * p).sum();
                    d.extend(gr.iter().zip(yr).map(|(&x, &p)| p * (x - dot)));
                }
                d
            });
        }
        Op::LogSoftmax(a) => {
            let c = *y.shape().last().unwrap();
            accumulate(graph, grads, *a, || {
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(y.data().chunks(c)) {
                    let s: T = gr.iter().copied().sum();
                    d.extend(gr.iter().zip(yr).map(|(&x, &l)| x - l.exp() * s));
                }
                d
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            eps,
        } => {
            let (xv, gv) = (val(x), val(gamma));
            let c = *xv.shape().last().unwrap();
            let cf = T::of(c as f64);
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = if ng(x) {
                Vec::with_capacity(xv.len())
            } else {
                Vec::new()
            };
            let mut xhat = vec![T::zero(); c];
            let mut dxhat = vec![T::zero(); c];
            for (xr, gr) in xv.data().chunks(c).zip(g.chunks(c)) {
                let (mu, rstd) = row_stats(xr, *eps);
                for j in 0..c {
                    xhat[j] = (xr[j] - mu) * rstd;
                    dgamma[j] += gr[j] * xhat[j];
                    dbeta[j] += gr[j];
                    dxhat[j] = gr[j] * gv.data()[j];
                }
                if ng(x) {
                    let s1: T = dxhat.iter().copied().sum();
                    let s2: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        dx.push(rstd / cf * (cf * dxhat[j] - s1 - xhat[j] * s2));
                    }
                }
            }
            if ng(x) {
                accumulate(graph, grads, *x, || dx);
            }
            accumulate(graph, grads, *gamma, || dgamma);
            accumulate(graph, grads, *beta, || dbeta);
        }
        Op::L2Normalize(a, eps) => {
            let av = val(a);
            let c = *y.shape().last().unwrap();
            let eps = T::of(*eps);
            accumulate(graph, grads, *a, || {
                let mut d = Vec::with_capacity(g.len());
                for ((gr, yr), xr) in g.chunks(c).zip(y.data().chunks(c)).zip(av.data().chunks(c)) {
                    let n = (xr.iter().map(|&x| x * x).sum::<T>() + eps).sqrt();
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    d.extend(gr.iter().zip(yr).map(|(&gi, &yi)| (gi - yi * dot) / n));
                }
                d
            });
        }
        Op::Sum(a) => {
            let n = val(a).len();
            accumulate(graph, grads, *a, || vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = val(a).len();
            let v = g[0] / T::of(n as f64);
            accumulate(graph, grads, *a, || vec![v; n]);
        }
        Op::SumLast(a) => {
            let c = *val(a).shape().last().unwrap();
            accumulate(graph, grads, *a, || {
                g.iter().flat_map(|&x| std::iter::repeat_n(x, c)).collect()
            });
        }
        Op::MeanLeading(a) => {
            let av = val(a);
            let c = *av.shape().last().unwrap();
            let inv = T::of(c as f64 / av.len() as f64);
            accumulate(graph, grads, *a, || {
                let row: Vec<T> = g.iter().map(|&x| x * inv).collect();
                row.iter().copied().cycle().take(av.len()).collect()
            });
        }
        Op::Patchify(x, p) => {
            let xs = val(x).shape().to_vec();
            accumulate(graph, grads, *x, || {
                let mut d = vec![T::zero(); g.len()];
                for_each_patch_index(&xs, *p, |img, patched| d[img] = g[patched]);
                d
            });
        }
        Op::Unpatchify(x, p) => {
            accumulate(graph, grads, *x, || {
                let mut d = vec![T::zero(); g.len()];
                for_each_patch_index(y.shape(), *p, |img, patched| d[patched] = g[img]);
                d
            });
        }
        Op::UpsampleNearest(x, f) => {
            let xv = val(x);
            let (b, h, w, c) = dims4(xv.shape());
            let (oh, ow) = (h * f, w * f);
            accumulate(graph, grads, *x, || {
                let mut d = vec![T::zero(); xv.len()];
                for bi in 0..b {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let dst = ((bi * h + yy / f) * w + xx / f) * c;
                            let src = ((bi * oh + yy) * ow + xx) * c;
                            for ch in 0..c {
                                d[dst + ch] += g[src + ch];
                            }
                        }
                    }
                }
                d
            });
        }
        Op::Concat(parts, axis) => {
            let shape = y.shape();
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..*axis].iter().product();
            let row = shape[*axis] * inner;
            let mut offset = 0;
            for p in parts {
                let blk = val(p).shape()[*axis] * inner;
                let off = offset;
                accumulate(graph, grads, *p, || {
                    let mut d = Vec::with_capacity(outer * blk);
                    for o in 0..outer {
                        d.extend_from_slice(&g[o * row + off..o * row + off + blk]);
                    }
                    d
                });
                offset += blk;
            }
        }
        Op::Slice {
            x,
            axis,
            start,
            len,
        } => {
            let xv = val(x);
            let inner: usize = y.shape()[axis + 1..].iter().product();
            let outer: usize = y.shape()[..*axis].iter().product();
            let full = xv.shape()[*axis] * inner;
            if ng(x) {
                let dst = slot(grads, *x, xv.len());
                for o in 0..outer {
                    let base = o * full + start * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    dst[base..base + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, s)| *d += *s);
                }
            }
        }
        Op::Permute(x, perm) => {
            let xs = val(x).shape().to_vec();
            accumulate(graph, grads, *x, || {
                let mut d = vec![T::zero(); g.len()];
                for_each_permuted(&xs, perm, |src, dst| d[src] = g[dst]);
                d
            });
        }
        Op::MaskFill { x, mask, token } => {
            let m = val(mask);
            let (_, h, w, c) = dims4(y.shape());
            let per_sample = m.shape().len() == 2;
            let masked = |pos: usize| {
                let mi = if per_sample { pos % (h * w) } else { pos };
                m.data()[mi] > T::of(0.5)
            };
            accumulate(graph, grads, *x, || {
                let mut d = g.to_vec();
                for (pos, row) in d.chunks_mut(c).enumerate() {
                    if masked(pos) {
                        row.iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                d
            });
            accumulate(graph, grads, *token, || {
                let mut d = vec![T::zero(); c];
                for (pos, row) in g.chunks(c).enumerate() {
                    if masked(pos) {
                        d.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
                    }
                }
                d
            });
        }
    }
}
