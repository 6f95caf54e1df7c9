//! Write an adaptation trajectory as CSV, read it back and render it as SVG.

use s4t::io::{read_trajectory_csv, render_plot, write_trajectory_csv, PlotOptions, RunConfig};
use s4t::pipeline;
use s4t::runner::Objective;
use s4t::sync::MethodReport;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::new(vec![0], "runs/example");
    cfg.train.iterations = 200;
    cfg.splits.source_train = 128;
    cfg.splits.target = 16;
    cfg.adapt.steps = 15;
    let data = pipeline::datasets(&cfg, 0)?;
    let src = pipeline::train(&cfg, 0, &data)?;
    let stream = pipeline::target_stream(&cfg, &data)?;
    let a = pipeline::adapt_config(&cfg, 0, Objective::S4t);
    let out = pipeline::adapt(&cfg, &a, &src.params, Some(&src.stats), &stream)?;

    let dir = std::env::temp_dir().join("s4t_plot_example");
    let csv = dir.join("trajectory.csv");
    write_trajectory_csv(&out.trajectory, &csv)?;
    let back = read_trajectory_csv(&csv)?;
    let r = MethodReport::from_trajectory("s4t", &back)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    let svg = dir.join("trajectory.svg");
    let opts = PlotOptions {
        title: "S4T on the shifted target".into(),
        ..PlotOptions::default()
    };
    std::fs::write(&svg, render_plot(&back, &opts))?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
