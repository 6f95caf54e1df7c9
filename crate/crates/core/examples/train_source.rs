//! Train a small source model and evaluate it on source and target data.
//!
//! `cargo run --release --example train_source -- 600` sets the iteration
//! count (default 300).

use s4t::io::RunConfig;
use s4t::pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map_or(Ok(300), |s| s.parse())?;
    let mut cfg = RunConfig::new(vec![0], "runs/example");
    cfg.train.iterations = iterations;
    cfg.splits.source_train = 256;
    cfg.splits.target = 64;
    cfg.validate()?;

    let data = pipeline::datasets(&cfg, 0)?;
    let out = pipeline::train(&cfg, 0, &data)?;
    for e in &out.log {
        println!(
            "iter {:5}  total {:.4}  main {:.4}  tp {:?}  tbs {:?}",
            e.iteration, e.loss_total, e.loss_main, e.loss_tp, e.loss_tbs
        );
    }
    let ev = pipeline::eval(&cfg, &out.params, &data)?;
    for (i, t) in ev.tasks.iter().enumerate() {
        let metric = cfg.tasks[i].metric.short_name();
        println!(
            "{t:<7} {metric:<5} source {:.4}  target {:.4}",
            ev.source_val[i], ev.target[i]
        );
    }
    Ok(())
}
