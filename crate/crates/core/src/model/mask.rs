//! Patch masks over task-specific latents.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{forward_eval, GraphBuilder};
use crate::tensor::{Real, Tensor, TensorMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskStrategy {
    /// Independent random patches per task.
    Random,
    /// Random patches, pairwise disjoint across tasks.
    NonOverlap,
    /// One random patch set shared by every task.
    SameForAll,
    /// Whole tasks hidden.
    HideTasks,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 4] = [
        MaskStrategy::Random,
        MaskStrategy::NonOverlap,
        MaskStrategy::SameForAll,
        MaskStrategy::HideTasks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskStrategy::Random => "random",
            MaskStrategy::NonOverlap => "non-overlap",
            MaskStrategy::SameForAll => "same-for-all",
            MaskStrategy::HideTasks => "hide-tasks",
        }
    }
}

impl std::str::FromStr for MaskStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mask strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("mask ratio {0} is outside [0, 1]")]
    Ratio(f64),
    #[error("non-overlapping masks need n·⌊r·P⌋ ≤ P, but {n_tasks}·{per_task} = {} > {patches}", n_tasks * per_task)]
    Infeasible {
        n_tasks: usize,
        per_task: usize,
        patches: usize,
    },
    #[error("mask plan needs at least one task and one patch")]
    Empty,
}

/// Per-task boolean grids over the `h × w` patch lattice; `true` = masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub grids: Vec<Vec<bool>>,
}

/// `⌊r·P⌋`, tolerant of representation error such as `0.29·100`.
pub fn masked_count(ratio: f64, patches: usize) -> usize {
    ((ratio * patches as f64) + 1e-9).floor() as usize
}

/// Number of whole tasks hidden by [`MaskStrategy::HideTasks`].
pub fn hidden_task_count(ratio: f64, n_tasks: usize) -> usize {
    ((ratio * n_tasks as f64).round() as usize).clamp(1, n_tasks)
}

pub fn make_mask(
    strategy: MaskStrategy,
    ratio: f64,
    height: usize,
    width: usize,
    n_tasks: usize,
    seed: u64,
) -> Result<MaskPlan, MaskError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MaskError::Ratio(ratio));
    }
    let patches = height * width;
    if n_tasks == 0 || patches == 0 {
        return Err(MaskError::Empty);
    }
    let count = masked_count(ratio, patches);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..patches).collect();
    let grid_from = |idx: &[usize]| {
        let mut g = vec![false; patches];
        idx.iter().for_each(|&i| g[i] = true);
        g
    };
    let grids = match strategy {
        MaskStrategy::Random => (0..n_tasks)
            .map(|_| {
                order.shuffle(&mut rng);
                grid_from(&order[..count])
            })
            .collect(),
        MaskStrategy::NonOverlap => {
            if n_tasks * count > patches {
                return Err(MaskError::Infeasible {
                    n_tasks,
                    per_task: count,
                    patches,
                });
            }
            order.shuffle(&mut rng);
            (0..n_tasks)
                .map(|t| grid_from(&order[t * count..(t + 1) * count]))
                .collect()
        }
        MaskStrategy::SameForAll => {
            order.shuffle(&mut rng);
            vec![grid_from(&order[..count]); n_tasks]
        }
        MaskStrategy::HideTasks => {
            let k = hidden_task_count(ratio, n_tasks);
            let mut tasks: Vec<usize> = (0..n_tasks).collect();
            tasks.shuffle(&mut rng);
            let mut grids = vec![vec![false; patches]; n_tasks];
            for &t in &tasks[..k] {
                grids[t] = vec![true; patches];
            }
            grids
        }
    };
    Ok(MaskPlan {
        strategy,
        ratio,
        height,
        width,
        seed,
        grids,
    })
}

impl MaskPlan {
    /// A plan that masks nothing.
    pub fn empty(height: usize, width: usize, n_tasks: usize) -> Self {
        Self {
            strategy: MaskStrategy::SameForAll,
            ratio: 0.0,
            height,
            width,
            seed: 0,
            grids: vec![vec![false; height * width]; n_tasks],
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.grids.len()
    }

    pub fn masked(&self, task: usize) -> usize {
        self.grids[task].iter().filter(|&&m| m).count()
    }

    /// Task `task`'s grid as a `[h, w]` tensor of 0/1.
    pub fn grid_tensor<T: Real>(&self, task: usize) -> Tensor<T> {
        Tensor::from_fn([self.height, self.width], |i| {
            if self.grids[task][i] {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Check the invariants of this plan's strategy.
    pub fn check_invariants(&self) -> Result<(), String> {
        let p = self.height * self.width;
        let n = self.grids.len();
        let count = masked_count(self.ratio, p);
        if self.grids.iter().any(|g| g.len() != p) {
            return Err("grid size differs from h·w".into());
        }
        match self.strategy {
            MaskStrategy::Random => {
                for t in 0..n {
                    if self.masked(t) != count {
                        return Err(format!(
                            "task {t}: {} masked, expected {count}",
                            self.masked(t)
                        ));
                    }
                }
            }
            MaskStrategy::NonOverlap => {
                for t in 0..n {
                    if self.masked(t) != count {
                        return Err(format!(
                            "task {t}: {} masked, expected {count}",
                            self.masked(t)
                        ));
                    }
                }
                for i in 0..p {
                    let owners = self.grids.iter().filter(|g| g[i]).count();
                    if owners > 1 {
                        return Err(format!("patch {i} masked for {owners} tasks"));
                    }
                }
            }
            MaskStrategy::SameForAll => {
                if self.grids.iter().any(|g| g != &self.grids[0]) {
                    return Err("grids differ across tasks".into());
                }
                if self.masked(0) != count {
                    return Err(format!("{} masked, expected {count}", self.masked(0)));
                }
            }
            MaskStrategy::HideTasks => {
                let mut hidden = 0;
                for g in &self.grids {
                    let m = g.iter().filter(|&&x| x).count();
                    if m == p {
                        hidden += 1;
                    } else if m != 0 {
                        return Err("a grid is neither all-true nor all-false".into());
                    }
                }
                let want = hidden_task_count(self.ratio, n);
                if hidden != want {
                    return Err(format!("{hidden} tasks hidden, expected {want}"));
                }
            }
        }
        Ok(())
    }
}

/// Replace masked patches of each latent `[B, h, w, C]` by `token [C]`.
pub fn apply_mask<T: Real>(
    latents: &[Tensor<T>],
    plan: &MaskPlan,
    token: &Tensor<T>,
) -> Vec<Tensor<T>> {
    latents
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut b = GraphBuilder::new();
            let x = b.input("z", z.shape()).expect("fresh builder");
            let m = b
                .input("mask", &[plan.height, plan.width])
                .expect("fresh builder");
            let t = b.input("token", token.shape()).expect("fresh builder");
            let y = b
                .mask_fill(x, m, t)
                .expect("plan grid and token must match the latent shape");
            b.output("y", y);
            let g = b.finish();
            let mut inputs = TensorMap::new();
            inputs.insert("z".into(), z.clone());
            inputs.insert("mask".into(), plan.grid_tensor(i));
            inputs.insert("token".into(), token.clone());
            forward_eval(&g, &inputs, &TensorMap::new())
                .and_then(|e| e.into_output("y"))
                .expect("mask fill of finite values is finite")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_for_all_half_of_sixteen() {
        let plan = make_mask(MaskStrategy::SameForAll, 0.5, 4, 4, 3, 11).unwrap();
        assert!(plan.grids.iter().all(|g| g == &plan.grids[0]));
        assert_eq!(plan.masked(0), 8);
    }

    #[test]
    fn non_overlap_infeasible() {
        // 4 · ⌊0.5 · 6⌋ = 12 > 6
        let err = make_mask(MaskStrategy::NonOverlap, 0.5, 2, 3, 4, 0).unwrap_err();
        assert_eq!(
            err,
            MaskError::Infeasible {
                n_tasks: 4,
                per_task: 3,
                patches: 6
            }
        );
        assert!(err.to_string().contains("12 > 6"));
    }

    #[test]
    fn zero_ratio_masks_nothing_except_hide_tasks() {
        for s in MaskStrategy::ALL {
            let plan = make_mask(s, 0.0, 4, 4, 4, 3).unwrap();
            let hidden = plan.grids.iter().filter(|g| g.iter().all(|&m| m)).count();
            if s == MaskStrategy::HideTasks {
                assert_eq!(hidden, 1);
            } else {
                assert!(plan.grids.iter().all(|g| g.iter().all(|&m| !m)));
            }
        }
    }

    #[test]
    fn reproducible_from_seed() {
        for s in MaskStrategy::ALL {
            assert_eq!(make_mask(s, 0.3, 8, 8, 4, 5), make_mask(s, 0.3, 8, 8, 4, 5));
        }
    }

    #[test]
    fn ratio_out_of_range() {
        assert!(matches!(
            make_mask(MaskStrategy::Random, 1.5, 2, 2, 1, 0),
            Err(MaskError::Ratio(_))
        ));
    }

    fn latent() -> Tensor<f64> {
        Tensor::from_fn([2, 2, 2, 3], |i| i as f64 * 0.5 - 3.0)
    }

    #[test]
    fn empty_plan_is_identity() {
        let z = latent();
        let token = Tensor::from_fn([3], |i| 10.0 + i as f64);
        let out = apply_mask(std::slice::from_ref(&z), &MaskPlan::empty(2, 2, 1), &token);
        assert_eq!(out[0], z);
    }

    #[test]
    fn full_plan_is_all_token_and_idempotent() {
        let z = latent();
        let token = Tensor::from_fn([3], |i| 10.0 + i as f64);
        let full = make_mask(MaskStrategy::SameForAll, 1.0, 2, 2, 1, 0).unwrap();
        let out = apply_mask(std::slice::from_ref(&z), &full, &token);
        for row in out[0].data().chunks(3) {
            assert_eq!(row, token.data());
        }
        let half = make_mask(MaskStrategy::Random, 0.5, 2, 2, 1, 4).unwrap();
        let once = apply_mask(&[z], &half, &token);
        let twice = apply_mask(&once, &half, &token);
        assert_eq!(once, twice);
    }
}
