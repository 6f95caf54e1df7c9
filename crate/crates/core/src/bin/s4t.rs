use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use s4t::bench::write_scene_cache;
use s4t::io::{
    load_config, read_trajectory_csv, render_plot, save_config, write_json, write_text,
    write_trajectory_csv, PlotOptions, RunConfig,
};
use s4t::model::{
    load_checkpoint, masked_count, save_checkpoint, Checkpoint, MaskStrategy, ModelParams,
};
use s4t::objectives::SourceStats;
use s4t::pipeline;
use s4t::runner::Objective;
use s4t::sync::MethodReport;
use s4t::{Error, Result};

/// Multi-task test-time training on a procedural benchmark.
#[derive(Parser)]
#[command(name = "s4t", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Only this seed instead of every configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the source and target splits and their manifest.
    GenData(RunArgs),
    /// Train the source model.
    Train(RunArgs),
    /// Adapt online on the target stream (trains first if needed).
    Adapt {
        #[command(flatten)]
        run: RunArgs,
        /// Override the configured objective.
        #[arg(long)]
        objective: Option<Objective>,
    },
    /// Evaluate the source model on source validation and target data.
    Eval(RunArgs),
    /// Sweep mask ratios and mask strategies.
    SweepMask {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.3,0.5,0.7,0.8,0.9")]
        ratios: Vec<f64>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "random,non-overlap,same-for-all,hide-tasks"
        )]
        strategies: Vec<MaskStrategy>,
    },
    /// Gain and synchronization measures of trajectory CSV files.
    Metrics {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Also write the reports here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a trajectory CSV as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    seeds: Vec<u64>,
}

impl Run {
    fn open(args: &RunArgs) -> Result<Self> {
        let cfg = load_config(&args.config)?;
        let out = cfg.resolved_outdir();
        let seeds = match args.seed {
            Some(s) => vec![s],
            None => cfg.seeds.clone(),
        };
        let mut resolved = cfg.clone();
        resolved.outdir = out.clone();
        save_config(&out.join("config.json"), &resolved)?;
        Ok(Self { cfg, out, seeds })
    }

    fn dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    fn train(
        &self,
        seed: u64,
        data: &s4t::bench::Datasets,
    ) -> Result<(ModelParams<f32>, SourceStats)> {
        let t = std::time::Instant::now();
        let out = pipeline::train(&self.cfg, seed, data)?;
        let dir = self.dir(seed);
        let ck = Checkpoint::new(&out.params, pipeline::train_hash(&self.cfg, seed))
            .with_stats(out.stats.clone());
        let path = dir.join("checkpoint.json");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_checkpoint(&path, &ck).map_err(|e| Error::io(&path, e))?;
        write_json(&dir.join("train_log.json"), &out.log)?;
        let last = out.log.last().map_or(f64::NAN, |l| l.loss_total);
        eprintln!(
            "seed {seed}: trained {} iterations in {:.1}s, final loss {last:.4}",
            self.cfg.train.iterations,
            t.elapsed().as_secs_f64()
        );
        Ok((out.params, out.stats))
    }

    /// The stored checkpoint, or a freshly trained one when none exists.
    fn source(
        &self,
        seed: u64,
        data: &s4t::bench::Datasets,
    ) -> Result<(ModelParams<f32>, SourceStats)> {
        let path = self.dir(seed).join("checkpoint.json");
        if !path.exists() {
            return self.train(seed, data);
        }
        let ck = load_checkpoint(&path).map_err(|e| Error::io(&path, e))?;
        if ck.config_hash != pipeline::train_hash(&self.cfg, seed) {
            return Err(Error::Config(format!(
                "{} was trained with different settings; rerun `train`",
                path.display()
            )));
        }
        let params = ck.to_params().map_err(Error::Format)?;
        let stats = ck.source_stats.unwrap_or_default();
        Ok((params, stats))
    }
}

#[allow(clippy::too_many_arguments)]
fn adapt_to(
    run: &Run,
    seed: u64,
    objective: Objective,
    params: &ModelParams<f32>,
    stats: &SourceStats,
    stream: &[s4t::bench::Batch],
    csv: &Path,
    adapt: Option<s4t::runner::AdaptConfig>,
) -> Result<MethodReport> {
    let a = adapt.unwrap_or_else(|| pipeline::adapt_config(&run.cfg, seed, objective));
    let out = match pipeline::adapt(&run.cfg, &a, params, Some(stats), stream) {
        Ok(o) => o,
        Err(Error::Diverged {
            step,
            detail,
            partial,
        }) => {
            if let Some(p) = partial {
                write_trajectory_csv(&p, csv)?;
            }
            return Err(Error::Diverged {
                step,
                detail: format!("{detail} (partial trajectory in {})", csv.display()),
                partial: None,
            });
        }
        Err(e) => return Err(e),
    };
    write_trajectory_csv(&out.trajectory, csv)?;
    // Summaries come from the stored CSV so `metrics` reproduces them exactly.
    let report = MethodReport::from_trajectory(objective.as_str(), &read_trajectory_csv(csv)?)?;
    write_json(&csv.with_extension("report.json"), &report)?;
    Ok(report)
}

fn print_report(label: &str, r: &MethodReport) {
    println!(
        "{label}: best Δ {:+.3}% at step {}, final Δ {:+.3}%, SV {:.3}, DTW {:.4}, CS {:.3}",
        r.delta_best, r.best_step, r.delta_final, r.sv, r.dtw, r.cs
    );
}

#[derive(Serialize)]
struct SweepEntry {
    kind: &'static str,
    strategy: MaskStrategy,
    ratio: f64,
    file: String,
    delta_best: Option<f64>,
    delta_final: Option<f64>,
    error: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData(args) => {
            let run = Run::open(&args)?;
            for &seed in &run.seeds {
                let data = pipeline::datasets(&run.cfg, seed)?;
                let dir = run.dir(seed).join("data");
                write_json(&dir.join("manifest.json"), &data.manifest)?;
                write_scene_cache(&dir.join("source_train.scenes"), &data.source_train)?;
                write_scene_cache(&dir.join("source_val.scenes"), &data.source_val)?;
                write_scene_cache(&dir.join("target.scenes"), &data.target)?;
                println!(
                    "seed {seed}: {} / {} / {} scenes in {}",
                    data.source_train.len(),
                    data.source_val.len(),
                    data.target.len(),
                    dir.display()
                );
            }
        }
        Cmd::Train(args) => {
            let run = Run::open(&args)?;
            for &seed in &run.seeds {
                let data = pipeline::datasets(&run.cfg, seed)?;
                let (params, _) = run.train(seed, &data)?;
                let ev = pipeline::eval(&run.cfg, &params, &data)?;
                println!(
                    "seed {seed}: source val {:?}, target {:?}",
                    ev.source_val, ev.target
                );
            }
        }
        Cmd::Eval(args) => {
            let run = Run::open(&args)?;
            for &seed in &run.seeds {
                let data = pipeline::datasets(&run.cfg, seed)?;
                let (params, _) = run.source(seed, &data)?;
                let ev = pipeline::eval(&run.cfg, &params, &data)?;
                write_json(&run.dir(seed).join("eval.json"), &ev)?;
                println!("seed {seed}: tasks {:?}", ev.tasks);
                println!("  source val {:?}", ev.source_val);
                println!("  target     {:?}", ev.target);
            }
        }
        Cmd::Adapt { run, objective } => {
            let run = Run::open(&run)?;
            let objective = objective.unwrap_or(run.cfg.adapt.objective);
            for &seed in &run.seeds {
                let data = pipeline::datasets(&run.cfg, seed)?;
                let (params, stats) = run.source(seed, &data)?;
                let stream = pipeline::target_stream(&run.cfg, &data)?;
                let dir = run.dir(seed).join(objective.as_str());
                let csv = dir.join("trajectory.csv");
                let report = adapt_to(&run, seed, objective, &params, &stats, &stream, &csv, None)?;
                let svg = render_plot(
                    &read_trajectory_csv(&csv)?,
                    &PlotOptions {
                        title: format!("{} seed {seed}", objective.as_str()),
                        ..PlotOptions::default()
                    },
                );
                write_text(&dir.join("plot.svg"), &svg)?;
                print_report(&format!("seed {seed} {}", objective.as_str()), &report);
            }
        }
        Cmd::SweepMask {
            run,
            ratios,
            strategies,
        } => {
            let run = Run::open(&run)?;
            let patches = run.cfg.model.grid() * run.cfg.model.grid();
            for &seed in &run.seeds {
                let data = pipeline::datasets(&run.cfg, seed)?;
                let (params, stats) = run.source(seed, &data)?;
                let stream = pipeline::target_stream(&run.cfg, &data)?;
                let dir = run.dir(seed).join("sweep");
                let mut entries = Vec::new();
                let mut jobs: Vec<(&'static str, MaskStrategy, f64, PathBuf)> = ratios
                    .iter()
                    .map(|&r| {
                        let s = run.cfg.adapt.mask_strategy;
                        (
                            "ratio",
                            s,
                            r,
                            dir.join("ratio").join(format!("r{r:.2}.csv")),
                        )
                    })
                    .collect();
                for &s in &strategies {
                    let mut r = run.cfg.adapt.mask_ratio;
                    // Disjoint masks cannot cover more than 1/n of the grid each.
                    if s == MaskStrategy::NonOverlap
                        && run.cfg.tasks.len() * masked_count(r, patches) > patches
                    {
                        r = (patches / run.cfg.tasks.len()) as f64 / patches as f64;
                    }
                    jobs.push((
                        "strategy",
                        s,
                        r,
                        dir.join("strategy").join(format!("{}.csv", s.as_str())),
                    ));
                }
                for (kind, strategy, ratio, csv) in jobs {
                    let mut a = pipeline::adapt_config(&run.cfg, seed, Objective::S4t);
                    a.mask_strategy = strategy;
                    a.mask_ratio = ratio;
                    let res = adapt_to(
                        &run,
                        seed,
                        Objective::S4t,
                        &params,
                        &stats,
                        &stream,
                        &csv,
                        Some(a),
                    );
                    let file = csv.strip_prefix(&dir).unwrap_or(&csv).display().to_string();
                    match &res {
                        Ok(r) => print_report(
                            &format!("seed {seed} {kind} {} r={ratio:.2}", strategy.as_str()),
                            r,
                        ),
                        Err(e) => {
                            eprintln!("seed {seed} {kind} {} r={ratio:.2}: {e}", strategy.as_str())
                        }
                    }
                    entries.push(SweepEntry {
                        kind,
                        strategy,
                        ratio,
                        file,
                        delta_best: res.as_ref().ok().map(|r| r.delta_best),
                        delta_final: res.as_ref().ok().map(|r| r.delta_final),
                        error: res.err().map(|e| e.to_string()),
                    });
                }
                write_json(&dir.join("summary.json"), &entries)?;
            }
        }
        Cmd::Metrics { csv, out } => {
            let mut reports = Vec::new();
            for p in &csv {
                let traj = read_trajectory_csv(p)?;
                let name = p
                    .file_stem()
                    .map_or("run".into(), |s| s.to_string_lossy().into_owned());
                let r = MethodReport::from_trajectory(&name, &traj)?;
                print_report(&p.display().to_string(), &r);
                reports.push(r);
            }
            let json =
                serde_json::to_string_pretty(&reports).map_err(|e| Error::Format(e.to_string()))?;
            match out {
                Some(o) => write_text(&o, &(json + "\n"))?,
                None => println!("{json}"),
            }
        }
        Cmd::Plot { csv, out, title } => {
            let traj = read_trajectory_csv(&csv)?;
            let opts = PlotOptions {
                title: title.unwrap_or_else(|| csv.display().to_string()),
                ..PlotOptions::default()
            };
            write_text(&out, &render_plot(&traj, &opts))?;
        }
    }
    Ok(())
}
