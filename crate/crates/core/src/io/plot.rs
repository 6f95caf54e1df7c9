//! SVG line plot of an adaptation trajectory.

use std::fmt::Write;
use std::path::Path;

use crate::runner::Trajectory;
use crate::sync::{delta_ttt, normalize};
use crate::Result;

use super::read_trajectory_csv;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub width: f64,
    pub height: f64,
    pub title: String,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 400.0,
            title: "test-time adaptation".into(),
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];
const DELTA_COLOR: &str = "#d62728";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_plot_file(csv: &Path, opts: &PlotOptions) -> Result<String> {
    Ok(render_plot(&read_trajectory_csv(csv)?, opts))
}

/// One polyline per task (relative improvement over the first step, in
/// percent, oriented so up is better) plus the Δ curve against the unadapted
/// baseline, both against the 1-based step.
pub fn render_plot(traj: &Trajectory, opts: &PlotOptions) -> String {
    let hb = traj.higher_better();
    let curves = traj.curve();
    let mut series: Vec<(String, &str, Vec<f64>)> = normalize(&curves, &hb)
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            (
                traj.tasks[i].name.clone(),
                PALETTE[i % PALETTE.len()],
                c.into_iter().map(|v| 100.0 * v).collect(),
            )
        })
        .collect();
    let base = traj.baseline_mean();
    let t = traj.steps_per_batch();
    let delta: Vec<f64> = (0..t)
        .map(|k| {
            let at: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            delta_ttt(&at, &base, &hb).unwrap_or(f64::NAN)
        })
        .collect();
    series.push(("Δ_TTT".into(), DELTA_COLOR, delta));

    let (w, h) = (opts.width, opts.height);
    let (left, right, top, bottom) = (60.0, 130.0, 30.0, 45.0);
    let pw = (w - left - right).max(1.0);
    let ph = (h - top - bottom).max(1.0);
    let finite = series
        .iter()
        .flat_map(|s| s.2.iter().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let x_of = |k: usize| {
        left + if t > 1 {
            pw * k as f64 / (t - 1) as f64
        } else {
            pw / 2.0
        }
    };
    let y_of = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        left + pw / 2.0,
        escape(&opts.title)
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    let zero = y_of(0.0);
    writeln!(
        s,
        r##"<line x1="{left}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        left + pw
    )
    .unwrap();
    for (v, anchor) in [(hi, "end"), (0.0, "end"), (lo, "end")] {
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="{anchor}">{}</text>"#,
            left - 4.0,
            y_of(v) + 4.0,
            super::format_sig6((v * 1000.0).round() / 1000.0)
        )
        .unwrap();
    }
    for k in [0, t.saturating_sub(1)] {
        writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x_of(k),
            top + ph + 14.0,
            k + 1
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">adaptation step</text>"#,
        left + pw / 2.0,
        h - 8.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">improvement (%)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    )
    .unwrap();
    for (i, (name, color, ys)) in series.iter().enumerate() {
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(k, &v)| format!("{:.2},{:.2}", x_of(k), y_of(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="{}" points="{}"/>"#,
            if i + 1 == series.len() { 2.5 } else { 1.5 },
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 12.0 + 16.0 * i as f64;
        let lx = left + pw + 10.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
