//! Task affinity from averaged task latents.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    pub n: usize,
    /// Row-major `n × n` cosine similarities.
    pub values: Vec<f64>,
    /// Tasks whose averaged latent had zero norm; their entries are 0.
    pub zero_norm: Vec<usize>,
}

impl AffinityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Cosine similarity between batch-and-space-averaged latents `[B, h, w, C]`.
pub fn task_affinity<T: Real>(latents: &[Tensor<T>]) -> AffinityMatrix {
    let means: Vec<Vec<f64>> = latents
        .iter()
        .map(|z| {
            let c = *z.shape().last().expect("latent has a channel axis");
            let rows = (z.len() / c) as f64;
            let mut m = vec![0.0; c];
            for row in z.data().chunks(c) {
                row.iter().enumerate().for_each(|(j, v)| m[j] += v.as_f64());
            }
            m.iter_mut().for_each(|v| *v /= rows);
            m
        })
        .collect();
    let norms: Vec<f64> = means
        .iter()
        .map(|m| m.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let n = latents.len();
    let zero_norm: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    AffinityMatrix {
        n,
        values,
        zero_norm,
    }
}
