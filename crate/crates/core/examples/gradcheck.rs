//! Finite-difference check of the full training graph at tiny sizes, in both
//! precisions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s4t::graph::{finite_diff_check, finite_diff_check_f32};
use s4t::model::{
    make_mask, GraphKind, MaskStrategy, ModelConfig, ModelGraph, ModelParams, TaskSpec,
};
use s4t::objectives::LossWeights;
use s4t::tensor::{Tensor, TensorMap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::tiny();
    let tasks = TaskSpec::default_tasks(3);
    // Jitter away from the zero-bias initialization, where a decoder pixel
    // with only dead hidden units outputs an exact zero normal vector.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ModelParams::<f64>::init(&cfg, &tasks, 0);
    for (_, t) in params.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
    let mg = ModelGraph::build(&cfg, &tasks, 2, GraphKind::Train(LossWeights::default()))?;
    let g = cfg.grid();
    let plan = make_mask(MaskStrategy::Random, 0.5, g, g, tasks.len(), 1)?;

    let s = cfg.image_size;
    let image = Tensor::from_fn([2, s, s, cfg.in_channels], |_| rng.gen_range(0.0..1.0f64));
    // Random one-hot labels for categorical tasks, unit normals, and uniform
    // values elsewhere.
    let targets: Vec<Tensor<f64>> = tasks
        .iter()
        .map(|t| {
            let c = t.channels();
            let mut v: Vec<f64> = (0..2 * s * s * c)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            for px in v.chunks_mut(c) {
                if t.is_categorical() {
                    let k = rng.gen_range(0..c);
                    px.iter_mut()
                        .enumerate()
                        .for_each(|(j, x)| *x = f64::from(j == k));
                } else if c == 3 {
                    let n = px.iter().map(|x| x * x).sum::<f64>().sqrt();
                    px.iter_mut().for_each(|x| *x /= n);
                }
            }
            Tensor::new([2, s, s, c], v).expect("shape matches data")
        })
        .collect();
    let inputs = mg.inputs(&image, Some(&targets), Some(&plan), None)?;
    let loss = mg.graph.output("loss")?;

    let r64 = finite_diff_check(&mg.graph, loss, &inputs, params.map(), 1e-6)?;
    let cast = |m: &TensorMap<f64>| -> TensorMap<f32> {
        m.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    };
    let r32 = finite_diff_check_f32(&mg.graph, loss, &cast(&inputs), &cast(params.map()), 1e-5)?;

    println!(
        "{} graph nodes, {} parameter tensors",
        mg.graph.len(),
        params.len()
    );
    println!(
        "f64 max relative error {:.2e} (worst: {:?})",
        r64.max_rel_error, r64.worst
    );
    println!(
        "f32 max relative error {:.2e} (worst: {:?})",
        r32.max_rel_error, r32.worst
    );
    let mut per: Vec<_> = r64.per_param.iter().collect();
    per.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (name, e) in per.iter().take(5) {
        println!("  {name:<28} {e:.2e}");
    }
    Ok(())
}
