//! Online test-time adaptation with each objective on one trained model.
//!
//! `cargo run --release --example adapt_online -- 600` sets the source
//! training iterations (default 300).

use s4t::io::RunConfig;
use s4t::pipeline;
use s4t::runner::Objective;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map_or(Ok(300), |s| s.parse())?;
    let mut cfg = RunConfig::new(vec![0], "runs/example");
    cfg.train.iterations = iterations;
    cfg.splits.source_train = 256;
    cfg.splits.target = 32;
    cfg.adapt.steps = 10;
    cfg.validate()?;

    let data = pipeline::datasets(&cfg, 0)?;
    let src = pipeline::train(&cfg, 0, &data)?;
    let stream = pipeline::target_stream(&cfg, &data)?;
    println!(
        "{} target batches, {} steps each",
        stream.len(),
        cfg.adapt.steps
    );
    for obj in [
        Objective::None,
        Objective::S4t,
        Objective::Entropy,
        Objective::Actalign,
    ] {
        let a = pipeline::adapt_config(&cfg, 0, obj);
        let (_, r) = pipeline::adapt_report(&cfg, &a, &src.params, Some(&src.stats), &stream)?;
        println!(
            "{:<9} best Δ {:+6.2}% at step {:2}  final Δ {:+6.2}%  SV {:.2}  DTW {:.4}  CS {:+.3}",
            r.method, r.delta_best, r.best_step, r.delta_final, r.sv, r.dtw, r.cs
        );
    }
    Ok(())
}
