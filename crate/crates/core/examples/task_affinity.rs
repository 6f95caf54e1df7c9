//! Task affinity of the task-specific latents on source and target data,
//! before and after S4T adaptation.

use s4t::bench::stream_batches;
use s4t::io::RunConfig;
use s4t::model::AffinityMatrix;
use s4t::pipeline;
use s4t::runner::{latent_affinity, Objective};
use s4t::sync::affinity_gap;

fn show(label: &str, a: &AffinityMatrix) {
    println!("{label}");
    for i in 0..a.n {
        let row: Vec<String> = (0..a.n).map(|j| format!("{:+.3}", a.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::new(vec![0], "runs/example");
    cfg.train.iterations = 300;
    cfg.splits.source_train = 256;
    cfg.splits.target = 32;
    cfg.adapt.steps = 10;
    let data = pipeline::datasets(&cfg, 0)?;
    let src = pipeline::train(&cfg, 0, &data)?;
    let val = stream_batches(&data.source_val, cfg.test.batch_size, &cfg.tasks)?;
    let stream = pipeline::target_stream(&cfg, &data)?;

    let a_src = latent_affinity(&cfg.model, &cfg.tasks, &src.params, &val)?;
    let a_tgt = latent_affinity(&cfg.model, &cfg.tasks, &src.params, &stream)?;
    let a = pipeline::adapt_config(&cfg, 0, Objective::S4t);
    let adapted = pipeline::adapt(&cfg, &a, &src.params, Some(&src.stats), &stream)?.params;
    let a_ada = latent_affinity(&cfg.model, &cfg.tasks, &adapted, &stream)?;

    show("source", &a_src);
    show("target, unadapted", &a_tgt);
    show("target, adapted", &a_ada);
    println!(
        "gap to source: unadapted {:.4}, adapted {:.4}",
        affinity_gap(&a_src, &a_tgt)?,
        affinity_gap(&a_src, &a_ada)?
    );
    Ok(())
}
