//! Trajectory CSV.
//!
//! ```text
//! # s4t-trajectory v1
//! step,batch,inner_step,task,metric,value,loss_total,loss_ttt
//! # baseline,<batch>,<task>,<metric>,<value>
//! 0,0,0,semseg,miou,0.712345,0.0123457,1.23457
//! ```
//!
//! One data row per (record, task). Baseline lines are comments so generic
//! CSV readers skip them.

use std::io::Write;
use std::path::Path;

use crate::model::MetricId;
use crate::runner::{TaskColumn, TrajRecord, Trajectory};
use crate::{Error, Result};

pub const CSV_VERSION_LINE: &str = "# s4t-trajectory v1";
pub const CSV_HEADER: &str = "step,batch,inner_step,task,metric,value,loss_total,loss_ttt";

/// Shortest decimal form with 6 significant digits.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let s = format!("{v:.5e}");
    let back: f64 = s.parse().unwrap();
    let exp = back.abs().log10().floor() as i32;
    if (-5..=9).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{back:.decimals$}");
        if fixed.contains('.') {
            fixed
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
        } else {
            fixed
        }
    } else {
        let (m, e) = s.split_once('e').unwrap();
        let m = if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.')
        } else {
            m
        };
        format!("{m}e{e}")
    }
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut out = Vec::new();
    writeln!(out, "{CSV_VERSION_LINE}").unwrap();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for (b, row) in traj.baseline.iter().enumerate() {
        for (col, v) in traj.tasks.iter().zip(row) {
            writeln!(
                out,
                "# baseline,{b},{},{},{}",
                col.name,
                col.metric.short_name(),
                format_sig6(*v)
            )
            .unwrap();
        }
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for r in &traj.records {
        for (col, v) in traj.tasks.iter().zip(&r.values) {
            w.write_record([
                r.step.to_string(),
                r.batch.to_string(),
                r.inner_step.to_string(),
                col.name.clone(),
                col.metric.short_name().to_string(),
                format_sig6(*v),
                format_sig6(r.loss_total),
                format_sig6(r.loss_ttt),
            ])
            .map_err(|e| Error::io(path, e.into()))?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}:{line}: {msg}", path.display()))
}

fn metric(path: &Path, line: usize, s: &str) -> Result<MetricId> {
    MetricId::from_short_name(s).ok_or_else(|| bad(path, line, format!("unknown metric `{s}`")))
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, field: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| bad(path, line, format!("bad {field} `{s}`")))
}

fn push_column(tasks: &mut Vec<TaskColumn>, name: &str, metric: MetricId) -> usize {
    match tasks.iter().position(|t| t.name == name) {
        Some(i) => i,
        None => {
            tasks.push(TaskColumn {
                name: name.to_string(),
                metric,
            });
            tasks.len() - 1
        }
    }
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == CSV_VERSION_LINE => {}
        Some((_, l)) if l.starts_with("# s4t-trajectory") => {
            return Err(bad(path, 1, format!("unsupported version `{l}`")))
        }
        _ => return Err(bad(path, 1, format!("missing `{CSV_VERSION_LINE}`"))),
    }
    match lines.next() {
        Some((_, l)) if l.trim_end() == CSV_HEADER => {}
        _ => return Err(bad(path, 2, format!("expected header `{CSV_HEADER}`"))),
    }
    let mut tasks: Vec<TaskColumn> = Vec::new();
    let mut baseline: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut records: Vec<TrajRecord> = Vec::new();
    // (step, column, value) cells, assembled once all columns are known.
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for (i, raw) in lines {
        let ln = i + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let f: Vec<&str> = rest.trim().split(',').collect();
            if f.first() == Some(&"baseline") {
                if f.len() != 5 {
                    return Err(bad(path, ln, "baseline line needs 5 fields"));
                }
                let b: usize = num(path, ln, "batch", f[1])?;
                let col = push_column(&mut tasks, f[2], metric(path, ln, f[3])?);
                if baseline.len() <= b {
                    baseline.resize(b + 1, Vec::new());
                }
                baseline[b].push((col, num(path, ln, "value", f[4])?));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(
                path,
                ln,
                format!("expected 8 fields, found {}", f.len()),
            ));
        }
        let step: usize = num(path, ln, "step", f[0])?;
        let col = push_column(&mut tasks, f[3], metric(path, ln, f[4])?);
        let value: f64 = num(path, ln, "value", f[5])?;
        match records.last() {
            Some(r) if r.step == step => {}
            Some(r) if r.step > step => return Err(bad(path, ln, "steps must not decrease")),
            _ => records.push(TrajRecord {
                step,
                batch: num(path, ln, "batch", f[1])?,
                inner_step: num(path, ln, "inner_step", f[2])?,
                values: Vec::new(),
                loss_total: num(path, ln, "loss_total", f[6])?,
                loss_ttt: num(path, ln, "loss_ttt", f[7])?,
            }),
        }
        cells.push((records.len() - 1, col, value));
    }
    let n = tasks.len();
    for r in &mut records {
        r.values = vec![f64::NAN; n];
    }
    for (r, c, v) in cells {
        records[r].values[c] = v;
    }
    if let Some(r) = records.iter().find(|r| r.values.iter().any(|v| v.is_nan())) {
        return Err(Error::Format(format!(
            "{}: step {} lacks some task rows",
            path.display(),
            r.step
        )));
    }
    let baseline = baseline
        .into_iter()
        .enumerate()
        .map(|(b, cols)| {
            let mut row = vec![f64::NAN; n];
            cols.into_iter().for_each(|(c, v)| row[c] = v);
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::Format(format!(
                    "{}: baseline of batch {b} is incomplete",
                    path.display()
                )));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        tasks,
        records,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskSpec;

    fn sample(batches: usize, k: usize) -> Trajectory {
        let tasks = [TaskSpec::semseg(3), TaskSpec::depth(), TaskSpec::normal()];
        let mut t = Trajectory::new(&tasks);
        let mut step = 0;
        for b in 0..batches {
            t.baseline.push(vec![0.5 + b as f64, 0.123456789, 33.0]);
            for i in 0..=k {
                t.records.push(TrajRecord {
                    step,
                    batch: b,
                    inner_step: i,
                    values: vec![
                        0.1 * step as f64 + 1.0 / 3.0,
                        2e-7 * (step + 1) as f64,
                        1234567.0,
                    ],
                    loss_total: 0.01 / 7.0,
                    loss_ttt: 1.0 / 7.0,
                });
                step += 1;
            }
        }
        t
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(format_sig6(-2.0), "-2");
        assert_eq!(format_sig6(1234567.0), "1234570");
        assert_eq!(format_sig6(2e-7), "2e-7");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(9.999996), "10");
    }

    #[test]
    fn row_count_and_round_trip() {
        let t = sample(2, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectory_csv(&t, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));
        let data = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
        assert_eq!(data, 12);
        let back = read_trajectory_csv(&p).unwrap();
        assert_eq!(back.tasks, t.tasks);
        assert_eq!(back.baseline.len(), 2);
        for (a, b) in back.records.iter().zip(&t.records) {
            assert_eq!(
                (a.step, a.batch, a.inner_step),
                (b.step, b.batch, b.inner_step)
            );
            for (x, y) in a
                .values
                .iter()
                .chain([&a.loss_total, &a.loss_ttt])
                .zip(b.values.iter().chain([&b.loss_total, &b.loss_ttt]))
            {
                assert!((x - y).abs() <= 5e-6 * y.abs(), "{x} vs {y}");
            }
        }
        // a second pass is exact
        let p2 = dir.path().join("t2.csv");
        write_trajectory_csv(&back, &p2).unwrap();
        assert_eq!(read_trajectory_csv(&p2).unwrap(), back);
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_trajectory_csv(&Trajectory::default(), &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            format!("{CSV_VERSION_LINE}\n{CSV_HEADER}\n")
        );
        assert_eq!(read_trajectory_csv(&p).unwrap(), Trajectory::default());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        for body in [
            "step,batch\n".to_string(),
            format!("{CSV_VERSION_LINE}\n{CSV_HEADER}\n0,0,0,depth,rmse,abc,0,0\n"),
            format!("{CSV_VERSION_LINE}\n{CSV_HEADER}\n0,0,0,depth,bogus,1,0,0\n"),
            format!("{CSV_VERSION_LINE}\n{CSV_HEADER}\n0,0,0,depth,rmse,1,0\n"),
            "# s4t-trajectory v9\n".to_string(),
        ] {
            std::fs::write(&p, body).unwrap();
            assert!(read_trajectory_csv(&p).is_err());
        }
    }
}
