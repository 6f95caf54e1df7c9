//! Adaptation gain and task synchronization measures.
//!
//! All trajectory functions take `curves[i][k]`: task `i`'s metric after `k`
//! adaptation steps, with `higher_better[i]` giving its orientation. Steps are
//! reported 1-based, so a curve of `T` values spans steps `1..=T`.

use serde::{Deserialize, Serialize};

use crate::model::AffinityMatrix;
use crate::runner::Trajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    #[error("baseline metric of task {task} is zero")]
    ZeroBaseline { task: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("affinity matrices are {a}×{a} and {b}×{b}")]
    Dimension { a: usize, b: usize },
    #[error("trajectory has no records")]
    Empty,
}

/// Average signed relative improvement over tasks, in percent.
pub fn delta_ttt(m_ttt: &[f64], m_base: &[f64], higher_better: &[bool]) -> Result<f64, SyncError> {
    if m_ttt.len() != m_base.len() || m_ttt.len() != higher_better.len() || m_ttt.is_empty() {
        return Err(SyncError::Length(format!(
            "{} adapted, {} baseline, {} orientations",
            m_ttt.len(),
            m_base.len(),
            higher_better.len()
        )));
    }
    let mut sum = 0.0;
    for (i, ((&t, &b), &hb)) in m_ttt.iter().zip(m_base).zip(higher_better).enumerate() {
        if b == 0.0 {
            return Err(SyncError::ZeroBaseline { task: i });
        }
        let rel = (t - b) / b;
        sum += if hb { rel } else { -rel };
    }
    Ok(100.0 * sum / m_ttt.len() as f64)
}

fn oriented(v: f64, hb: bool) -> f64 {
    if hb {
        v
    } else {
        -v
    }
}

/// 1-based step of each task's best value; ties go to the earliest step.
pub fn peak_steps(curves: &[Vec<f64>], higher_better: &[bool]) -> Vec<usize> {
    curves
        .iter()
        .zip(higher_better)
        .map(|(c, &hb)| {
            let mut best = 0;
            for k in 1..c.len() {
                if oriented(c[k], hb) > oriented(c[best], hb) {
                    best = k;
                }
            }
            best + 1
        })
        .collect()
}

/// Population standard deviation of the peak steps.
pub fn step_variance(curves: &[Vec<f64>], higher_better: &[bool]) -> f64 {
    let peaks = peak_steps(curves, higher_better);
    if peaks.is_empty() {
        return 0.0;
    }
    let n = peaks.len() as f64;
    let mean = peaks.iter().map(|&p| p as f64).sum::<f64>() / n;
    (peaks
        .iter()
        .map(|&p| (p as f64 - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Signed relative improvement of each value over the series' first value,
/// oriented so that higher is better. A zero first value falls back to the
/// plain difference.
pub fn normalize(curves: &[Vec<f64>], higher_better: &[bool]) -> Vec<Vec<f64>> {
    curves
        .iter()
        .zip(higher_better)
        .map(|(c, &hb)| {
            let Some(&y0) = c.first() else {
                return Vec::new();
            };
            let scale = if y0 == 0.0 { 1.0 } else { y0.abs() };
            c.iter().map(|&y| oriented(y - y0, hb) / scale).collect()
        })
        .collect()
}

/// Dynamic time warping cost with absolute-difference local distance.
pub fn dtw(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            let d = (x - y).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = prev[j];
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = d + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

fn pair_mean(n: usize, f: impl Fn(usize, usize) -> f64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            sum += f(i, j);
            pairs += 1;
        }
    }
    sum / pairs as f64
}

/// Mean pairwise DTW over all unordered task pairs; 0 for a single task.
pub fn dtw_sync(normalized: &[Vec<f64>]) -> f64 {
    pair_mean(normalized.len(), |i, j| dtw(&normalized[i], &normalized[j]))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-step agreement of the improvement directions of two series,
/// averaged over the `T − 1` transitions.
pub fn cosine_pair(a: &[f64], b: &[f64]) -> f64 {
    let t = a.len().min(b.len());
    if t < 2 {
        return 0.0;
    }
    let s: f64 = (0..t - 1)
        .map(|k| sign(a[k + 1] - a[k]) * sign(b[k + 1] - b[k]))
        .sum();
    s / (t - 1) as f64
}

/// Mean pairwise [`cosine_pair`] over all unordered task pairs.
pub fn cosine_sync(normalized: &[Vec<f64>]) -> f64 {
    pair_mean(normalized.len(), |i, j| {
        cosine_pair(&normalized[i], &normalized[j])
    })
}

/// Frobenius norm of the difference of two affinity matrices.
pub fn affinity_gap(a: &AffinityMatrix, b: &AffinityMatrix) -> Result<f64, SyncError> {
    if a.n != b.n {
        return Err(SyncError::Dimension { a: a.n, b: b.n });
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Average ranks, 1-based, with ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on tie-averaged ranks). `None` when
/// either side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let m = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - m) * (b - m);
        sxx += (a - m) * (a - m);
        syy += (b - m) * (b - m);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub metric: String,
    pub baseline: f64,
    pub best: f64,
    pub final_value: f64,
    /// 1-based step of `best`.
    pub peak_step: usize,
}

/// Synchronization and gain summary of one adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    /// Steps per batch, `K + 1`.
    pub steps: usize,
    pub tasks: Vec<TaskSummary>,
    pub delta_best: f64,
    /// 1-based step at which `delta_best` is reached.
    pub best_step: usize,
    pub delta_final: f64,
    /// Δ at every step.
    pub delta_curve: Vec<f64>,
    pub sv: f64,
    pub dtw: f64,
    pub cs: f64,
}

impl MethodReport {
    /// Summarize a trajectory from its batch-averaged curves against the
    /// batch-averaged unadapted metrics.
    pub fn from_trajectory(method: &str, traj: &Trajectory) -> Result<Self, SyncError> {
        if traj.records.is_empty() {
            return Err(SyncError::Empty);
        }
        let hb = traj.higher_better();
        let curves = traj.curve();
        let base = traj.baseline_mean();
        let t = traj.steps_per_batch();
        let delta_curve = (0..t)
            .map(|k| {
                let at: Vec<f64> = curves.iter().map(|c| c[k]).collect();
                delta_ttt(&at, &base, &hb)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let best_step = peak_steps(std::slice::from_ref(&delta_curve), &[true])[0];
        let peaks = peak_steps(&curves, &hb);
        let tasks = traj
            .tasks
            .iter()
            .enumerate()
            .map(|(i, col)| TaskSummary {
                task: col.name.clone(),
                metric: col.metric.short_name().into(),
                baseline: base[i],
                best: curves[i][peaks[i] - 1],
                final_value: curves[i][t - 1],
                peak_step: peaks[i],
            })
            .collect();
        let norm = normalize(&curves, &hb);
        Ok(Self {
            method: method.into(),
            steps: t,
            tasks,
            delta_best: delta_curve[best_step - 1],
            best_step,
            delta_final: delta_curve[t - 1],
            sv: step_variance(&curves, &hb),
            dtw: dtw_sync(&norm),
            cs: cosine_sync(&norm),
            delta_curve,
        })
    }
}
