//! Component ablation on one seed: each configuration trains its own source
//! model and adapts with S4T.

use s4t::io::RunConfig;
use s4t::pipeline::{self, Ablation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map_or(Ok(300), |s| s.parse())?;
    let mut base = RunConfig::new(vec![0], "runs/example");
    base.train.iterations = iterations;
    base.splits.source_train = 256;
    base.splits.target = 32;
    base.adapt.steps = 10;

    for a in Ablation::ALL {
        let cfg = a.apply(&base);
        cfg.validate()?;
        let data = pipeline::datasets(&cfg, 0)?;
        let src = pipeline::train(&cfg, 0, &data)?;
        let stream = pipeline::target_stream(&cfg, &data)?;
        let ad = pipeline::adapt_config(&cfg, 0, a.objective());
        let (_, r) = pipeline::adapt_report(&cfg, &ad, &src.params, Some(&src.stats), &stream)?;
        let c = a.components();
        println!(
            "{:<24} tbs {:<5} projection {:<5} masking {:<5}  best Δ {:+.2}%",
            a.as_str(),
            c.tbs,
            c.projection,
            c.masking,
            r.delta_best
        );
    }
    Ok(())
}
