//! Masked-latent prediction bound: the full-latent error never exceeds the
//! masked-latent error plus the distance between the two predictions.

use s4t::bench::stream_batches;
use s4t::io::RunConfig;
use s4t::model::{make_mask, MaskStrategy, ModelParams};
use s4t::objectives::bound_check;
use s4t::pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::new(vec![0], "runs/example");
    cfg.train.iterations = 150;
    cfg.splits.source_train = 128;
    let data = pipeline::datasets(&cfg, 0)?;
    let trained = pipeline::train(&cfg, 0, &data)?.params;
    let untrained = ModelParams::<f32>::init(&cfg.model, &cfg.tasks, 0);
    let batches = stream_batches(&data.target, 4, &cfg.tasks)?;
    let g = cfg.model.grid();

    println!(
        "{:<9} {:>5} {:>9} {:>9} {:>9}  holds",
        "model", "r", "lhs", "rhs1", "rhs2"
    );
    for (name, params) in [("untrained", &untrained), ("trained", &trained)] {
        for (i, r) in [0.0, 0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
            let b = &batches[i % batches.len()];
            let plan = make_mask(MaskStrategy::Random, r, g, g, cfg.tasks.len(), i as u64)?;
            let rec = bound_check(&cfg.model, &cfg.tasks, params, &b.image, &b.targets, &plan)?;
            println!(
                "{name:<9} {r:>5.1} {:>9.4} {:>9.4} {:>9.4}  {}",
                rec.lhs, rec.rhs_term1, rec.rhs_term2, rec.holds
            );
        }
    }
    Ok(())
}
