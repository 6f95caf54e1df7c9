//! Central finite-difference verification of analytic gradients.

use super::{backward, forward_eval, Graph, GraphError, NodeId};
use crate::tensor::{Tensor, TensorMap};

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    /// Max over parameters of the relative error.
    pub max_rel_error: f64,
    /// Parameter achieving the maximum.
    pub worst: Option<String>,
    pub per_param: Vec<(String, f64)>,
}

/// Gradients with a smaller norm are compared in absolute terms. An exactly
/// zero gradient (an L1 bias whose residual signs cancel, say) has a numeric
/// estimate of pure rounding noise, and a ratio of two noise terms says
/// nothing.
pub const GRAD_NORM_FLOOR: f64 = 1e-5;

/// Relative error of one parameter's gradient:
/// `‖a − n‖ / max(‖a‖, ‖n‖, GRAD_NORM_FLOOR)` with Euclidean norms.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(GRAD_NORM_FLOOR)
}

fn numeric_grad(
    graph: &Graph,
    loss: NodeId,
    inputs: &TensorMap<f64>,
    params: &TensorMap<f64>,
    step: f64,
) -> Result<Vec<(String, Vec<f64>)>, GraphError> {
    let eval_loss = |p: &TensorMap<f64>, name: &str| -> Result<f64, GraphError> {
        match forward_eval(graph, inputs, p) {
            Ok(ev) => {
                let v = ev.get(loss).item();
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(GraphError::PerturbedNonFinite(name.to_string()))
                }
            }
            Err(GraphError::NonFinite { .. }) => {
                Err(GraphError::PerturbedNonFinite(name.to_string()))
            }
            Err(e) => Err(e),
        }
    };
    let mut work = params.clone();
    let mut out = Vec::new();
    for name in graph.param_names() {
        let n = params
            .get(name)
            .ok_or_else(|| GraphError::MissingBinding(name.to_string()))?
            .len();
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = params[name].data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let plus = eval_loss(&work, name)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let minus = eval_loss(&work, name)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            g.push((plus - minus) / (2.0 * step));
        }
        out.push((name.to_string(), g));
    }
    Ok(out)
}

fn assert_step(step: f64) {
    assert!(
        step > 0.0 && step <= 1e-2,
        "finite-difference step must lie in (0, 1e-2], got {step}"
    );
}

fn report(pairs: Vec<(String, f64)>) -> FiniteDiffReport {
    let (worst, max) = pairs.iter().fold((None, 0.0f64), |(w, m), (name, e)| {
        if w.is_none() || *e > m {
            (Some(name.clone()), *e)
        } else {
            (w, m)
        }
    });
    FiniteDiffReport {
        max_rel_error: max,
        worst,
        per_param: pairs,
    }
}

/// Compare 64-bit analytic gradients of `loss` with central differences.
pub fn finite_diff_check(
    graph: &Graph,
    loss: NodeId,
    inputs: &TensorMap<f64>,
    params: &TensorMap<f64>,
    step: f64,
) -> Result<FiniteDiffReport, GraphError> {
    assert_step(step);
    let eval = forward_eval(graph, inputs, params)?;
    let analytic = backward(graph, loss, &eval)?;
    let numeric = numeric_grad(graph, loss, inputs, params, step)?;
    let pairs = numeric
        .into_iter()
        .map(|(name, num)| {
            let a = analytic.get(&name).unwrap().to_f64_vec();
            let e = rel_error(&a, &num);
            (name, e)
        })
        .collect();
    Ok(report(pairs))
}

/// Compare 32-bit analytic gradients with 64-bit central differences of the
/// same graph at the same (widened) bindings.
pub fn finite_diff_check_f32(
    graph: &Graph,
    loss: NodeId,
    inputs: &TensorMap<f32>,
    params: &TensorMap<f32>,
    step: f64,
) -> Result<FiniteDiffReport, GraphError> {
    assert_step(step);
    let eval = forward_eval(graph, inputs, params)?;
    let analytic = backward(graph, loss, &eval)?;
    let widen = |m: &TensorMap<f32>| -> TensorMap<f64> {
        m.iter()
            .map(|(k, v)| (k.clone(), v.cast::<f64>()))
            .collect()
    };
    let numeric = numeric_grad(graph, loss, &widen(inputs), &widen(params), step)?;
    let pairs = numeric
        .into_iter()
        .map(|(name, num)| {
            let a = analytic.get(&name).map(Tensor::to_f64_vec).unwrap();
            let e = rel_error(&a, &num);
            (name, e)
        })
        .collect();
    Ok(report(pairs))
}
