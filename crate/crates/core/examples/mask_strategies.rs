//! Mask plans of every strategy drawn as text, and the synchronizer's
//! prediction loss as the mask ratio grows on a briefly trained model.

use s4t::bench::stream_batches;
use s4t::io::RunConfig;
use s4t::model::{make_mask, MaskStrategy};
use s4t::pipeline;
use s4t::runner::{tbs_loss, MaskSetting};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let strategies = [
        MaskStrategy::Random,
        MaskStrategy::NonOverlap,
        MaskStrategy::SameForAll,
        MaskStrategy::HideTasks,
    ];
    for s in strategies {
        let plan = make_mask(s, 0.25, 8, 8, 4, 7)?;
        println!("{} (r = 0.25)", s.as_str());
        for row in 0..8 {
            let line: Vec<String> = plan
                .grids
                .iter()
                .map(|g| {
                    g[row * 8..row * 8 + 8]
                        .iter()
                        .map(|&m| if m { '#' } else { '.' })
                        .collect()
                })
                .collect();
            println!("  {}", line.join("  "));
        }
    }
    match make_mask(MaskStrategy::NonOverlap, 0.7, 8, 8, 4, 0) {
        Err(e) => println!("non-overlap at r = 0.7: {e}"),
        Ok(_) => unreachable!("4 disjoint masks of 44 patches cannot fit in 64"),
    }

    let mut cfg = RunConfig::new(vec![0], "runs/example");
    cfg.train.iterations = 200;
    cfg.splits.source_train = 128;
    let data = pipeline::datasets(&cfg, 0)?;
    let model = pipeline::train(&cfg, 0, &data)?;
    let batches = stream_batches(&data.source_val, cfg.test.batch_size, &cfg.tasks)?;
    for s in strategies {
        let losses = (0..10)
            .map(|i| {
                let m = MaskSetting {
                    strategy: s,
                    ratio: i as f64 / 10.0,
                    min_ratio: None,
                };
                tbs_loss(&cfg.model, &cfg.tasks, &model.params, &batches, m, 0)
                    .map(|l| format!("{l:.3}"))
            })
            .map(|r| r.unwrap_or_else(|_| "  -  ".into()))
            .collect::<Vec<_>>();
        println!(
            "{:<13} TBS loss for r = 0.0..0.9: {}",
            s.as_str(),
            losses.join(" ")
        );
    }
    Ok(())
}
