//! Gain and synchronization measures on hand-made trajectories.

use s4t::sync::{cosine_sync, delta_ttt, dtw, dtw_sync, normalize, peak_steps, step_variance};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Published base and adapted per-task values: mIoU up, the rest down.
    let base = [29.31, 1.179, 61.32, 0.1443];
    let adapted = [59.37, 1.052, 45.33, 0.1441];
    let hb = [true, false, false, false];
    println!("Δ_TTT = {:+.2}%", delta_ttt(&adapted, &base, &hb)?);

    // Two synchronized tasks and one that peaks early then degrades.
    let steps = 20;
    let rise = |k: usize| 1.0 - (-(k as f64) / 5.0).exp();
    let curves: Vec<Vec<f64>> = vec![
        (0..steps).map(|k| 0.5 + 0.1 * rise(k)).collect(),
        (0..steps).map(|k| 2.0 - 0.3 * rise(k)).collect(),
        (0..steps)
            .map(|k| 0.4 + 0.01 * k as f64 * (8.0 - k as f64))
            .collect(),
    ];
    let hb = [true, false, true];
    println!("peak steps {:?}", peak_steps(&curves, &hb));
    println!("SV  {:.3}", step_variance(&curves, &hb));
    let n = normalize(&curves, &hb);
    println!("DTW {:.4}  CS {:+.3}", dtw_sync(&n), cosine_sync(&n));
    println!("DTW between tasks 0 and 1 alone: {:.4}", dtw(&n[0], &n[1]));
    Ok(())
}
