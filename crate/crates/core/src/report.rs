//! Serialised outputs and plain-text rendering.
//!
//! Sweep CSV columns, in order:
//! `policy,instance_kept,time_kept,seed,final_error,error_<rate>hz...,processed_ratio,wall_clock_per_epoch_s,baseline_wall_clock_per_epoch_s,wall_clock_ratio`.
//! Wall-clock columns always come last so the deterministic prefix of each
//! row can be compared byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::{EpochReport, RunSummary};
use crate::selection::PolicyKind;
use crate::sweep::SweepRow;

pub const WALL_CLOCK_COLUMNS: usize = 3;

pub fn epochs_jsonl(reports: &[EpochReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_epochs_jsonl(text: &str) -> Result<Vec<EpochReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn sweep_header(rates: &[u32]) -> String {
    let mut h = String::from("policy,instance_kept,time_kept,seed,final_error");
    for r in rates {
        let _ = write!(h, ",error_{r}hz");
    }
    h.push_str(",processed_ratio,wall_clock_per_epoch_s,baseline_wall_clock_per_epoch_s,wall_clock_ratio");
    h
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let rates: Vec<u32> = rows
        .first()
        .map(|r| r.rate_errors.iter().map(|(rate, _)| *rate).collect())
        .unwrap_or_default();
    let mut out = sweep_header(&rates);
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{:.6}",
            r.policy, r.instance_kept, r.time_kept, r.seed, r.final_error
        );
        for (_, e) in &r.rate_errors {
            let _ = write!(out, ",{e:.6}");
        }
        let _ = writeln!(
            out,
            ",{:.6},{:.6},{:.6},{:.4}",
            r.processed_ratio,
            r.wall_clock_per_epoch_s,
            r.baseline_wall_clock_per_epoch_s,
            r.wall_clock_ratio
        );
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty sweep table".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    let rates: Vec<u32> = cols
        .iter()
        .filter_map(|c| c.strip_prefix("error_")?.strip_suffix("hz")?.parse().ok())
        .collect();
    if header != sweep_header(&rates) {
        return Err(Error::Parse { line: 1, message: format!("unexpected header '{header}'") });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse { line: i + 1, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
        let n = rates.len();
        rows.push(SweepRow {
            policy: f[0].parse().map_err(|e: Error| bad(e.to_string()))?,
            instance_kept: num(f[1])?,
            time_kept: num(f[2])?,
            seed: f[3].parse().map_err(|e| bad(format!("seed: {e}")))?,
            final_error: num(f[4])?,
            rate_errors: rates
                .iter()
                .zip(&f[5..5 + n])
                .map(|(r, v)| num(v).map(|e| (*r, e)))
                .collect::<Result<_>>()?,
            processed_ratio: num(f[5 + n])?,
            wall_clock_per_epoch_s: num(f[6 + n])?,
            baseline_wall_clock_per_epoch_s: num(f[7 + n])?,
            wall_clock_ratio: num(f[8 + n])?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellAggregate {
    pub policy: PolicyKind,
    pub instance_kept: f64,
    pub time_kept: f64,
    pub seeds: usize,
    pub error_mean: f64,
    pub error_std: f64,
    pub processed_ratio: f64,
    pub wall_clock_ratio: f64,
}

/// Groups rows by (policy, instance ratio, time ratio), preserving first-seen order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<CellAggregate> {
    let mut order: Vec<(PolicyKind, u64, u64)> = Vec::new();
    let mut groups: BTreeMap<(PolicyKind, u64, u64), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.policy, r.instance_kept.to_bits(), r.time_kept.to_bits());
        let g = groups.entry(key).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let errors: Vec<f64> = g.iter().map(|r| r.final_error).collect();
            let (error_mean, error_std) = mean_std(&errors);
            let avg = |f: fn(&SweepRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
            CellAggregate {
                policy: key.0,
                instance_kept: f64::from_bits(key.1),
                time_kept: f64::from_bits(key.2),
                seeds: g.len(),
                error_mean,
                error_std,
                processed_ratio: avg(|r| r.processed_ratio),
                wall_clock_ratio: avg(|r| r.wall_clock_ratio),
            }
        })
        .collect()
}

pub fn render_aggregate(cells: &[CellAggregate]) -> String {
    let mut out = String::from(
        "policy     inst_k  time_k  seeds  error[%]         processed  wall-clock\n",
    );
    for c in cells {
        let _ = writeln!(
            out,
            "{:<10} {:>6.2}  {:>6.2}  {:>5}  {:>6.2} ± {:<6.2}  {:>9.3}  {:>10.3}",
            c.policy.to_string(),
            c.instance_kept,
            c.time_kept,
            c.seeds,
            100.0 * c.error_mean,
            100.0 * c.error_std,
            c.processed_ratio,
            c.wall_clock_ratio
        );
    }
    out
}

pub fn render_epochs(reports: &[EpochReport]) -> String {
    let mut out = String::from("epoch  eps     kept   processed     loss     error[%]  wall[s]\n");
    for r in reports {
        let eps = r.epsilon.map_or_else(|| "-".to_string(), |e| format!("{e:.3}"));
        let _ = writeln!(
            out,
            "{:>5}  {:<6} {:>5}  {:>10}  {:>8.4}  {:>9.2}  {:>7.3}",
            r.epoch,
            eps,
            r.kept_count,
            r.processed_sample_count,
            r.mean_train_loss,
            100.0 * r.native_error(),
            r.wall_clock_s
        );
    }
    out
}

pub fn render_summary(s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "policy {} | instance k {:.2} | time k {:.2} | {} epochs | seed {}",
        s.policy, s.kept_ratio, s.time_kept_ratio, s.epochs, s.seed
    );
    for r in &s.final_eval_error {
        let _ = writeln!(out, "  error @ {:>6} Hz: {:>6.2} %", r.sample_rate, 100.0 * r.error);
    }
    for b in &s.final_bucket_error {
        let hi = b.hi_s.map_or_else(|| "inf".to_string(), |h| h.to_string());
        let _ = writeln!(
            out,
            "  {:<7} [{}, {}) s: {:>6.2} % over {} instances",
            b.bucket,
            b.lo_s,
            hi,
            100.0 * b.error,
            b.instances
        );
    }
    let _ = writeln!(
        out,
        "  processed {:.3} of baseline | {:.4} s/epoch vs {:.4} s/epoch (speedup {:.2}x)",
        s.processed_ratio, s.wall_clock_per_epoch_s, s.baseline_wall_clock_per_epoch_s, s.speedup
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: PolicyKind, seed: u64, err: f64) -> SweepRow {
        SweepRow {
            policy,
            instance_kept: 0.3,
            time_kept: 1.0,
            seed,
            final_error: err,
            rate_errors: vec![(11_025, 0.5)],
            processed_ratio: 0.3,
            wall_clock_per_epoch_s: 0.01,
            baseline_wall_clock_per_epoch_s: 0.03,
            wall_clock_ratio: 0.3333,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(PolicyKind::Easy, 1, 0.25), row(PolicyKind::Easy2hard, 2, 0.125)];
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("policy,instance_kept,time_kept,seed,final_error,error_11025hz,processed_ratio"));
        assert_eq!(parse_sweep_csv(&csv).unwrap(), rows);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(parse_sweep_csv("a,b,c\n1,2,3\n").is_err());
    }

    #[test]
    fn aggregates_by_cell() {
        let rows = vec![
            row(PolicyKind::Easy, 1, 0.2),
            row(PolicyKind::Random, 1, 0.1),
            row(PolicyKind::Easy, 2, 0.4),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].policy, PolicyKind::Easy);
        assert!((agg[0].error_mean - 0.3).abs() < 1e-12);
        assert_eq!(agg[0].seeds, 2);
        assert!(render_aggregate(&agg).contains("easy"));
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
