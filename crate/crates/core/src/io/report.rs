//! CSV reports. Every writer emits one header row, quotes only where
//! RFC 4180 requires it and prints floats with 9 significant digits.

use std::path::Path;

use crate::attribution::{rank, AttributionResult, RankMode};
use crate::error::{Error, Result};
use crate::experiments::{FinetuneRow, RandomInitRun, RobustnessCurve, UnitDistribution, QUANTILE_LEVELS};
use crate::pruning::PruneLog;

const DIGITS: usize = 9;

/// Formats like C's `%.9g`: shortest of fixed or scientific notation,
/// trailing zeros removed.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..DIGITS as i32).contains(&exp) {
        let decimals = (DIGITS as i32 - 1 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// A table of pre-formatted cells.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Report { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| Error::config(format!("flushing CSV: {e}")))
    }
}

pub fn write_csv(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// One row per removal step, step 0 being the unpruned network.
pub fn robustness_report(curves: &[RobustnessCurve]) -> Report {
    let mut r = Report::new(&["site", "metric", "step", "unit_removed", "loss", "accuracy"]);
    for c in curves {
        for (t, &loss) in c.loss.iter().enumerate() {
            r.push(vec![
                c.site.to_string(),
                c.metric.to_string(),
                t.to_string(),
                if t == 0 { String::new() } else { c.order[t - 1].to_string() },
                format_float(loss),
                opt(c.accuracy.as_ref().map(|a| a[t])),
            ]);
        }
    }
    r
}

/// Per-unit scores with each unit's 0-based rank under both orderings.
/// The conservative rank is left empty for data-free metrics.
pub fn attribution_report(results: &[AttributionResult]) -> Result<Report> {
    let mut r = Report::new(&["site", "metric", "unit", "mean", "std", "rank_mean", "rank_conservative"]);
    for res in results {
        let by_mean = rank(res, RankMode::Mean)?.positions();
        let conservative =
            if res.metric.is_data_free() { None } else { Some(rank(res, RankMode::Conservative)?.positions()) };
        for u in 0..res.units() {
            r.push(vec![
                res.site.to_string(),
                res.metric.to_string(),
                u.to_string(),
                format_float(res.mean[u]),
                format_float(res.std[u]),
                by_mean[u].to_string(),
                conservative.as_ref().map(|c| c[u].to_string()).unwrap_or_default(),
            ]);
        }
    }
    Ok(r)
}

pub fn prunelog_report(log: &PruneLog) -> Report {
    let mut r = Report::new(&[
        "step",
        "site",
        "metric",
        "removed_count",
        "loss_before",
        "loss_after",
        "acc_before",
        "acc_after",
    ]);
    for s in &log.steps {
        let after = s.fine_tuned.unwrap_or(s.after);
        r.push(vec![
            s.step.to_string(),
            s.site.to_string(),
            s.metric.to_string(),
            s.removed.len().to_string(),
            format_float(s.before.loss),
            format_float(after.loss),
            opt(s.before.accuracy),
            opt(after.accuracy),
        ]);
    }
    r
}

pub fn distribution_report(site: usize, units: &[UnitDistribution]) -> Report {
    let quantile_names: Vec<String> =
        QUANTILE_LEVELS.iter().map(|q| format!("q{:02}", (q * 100.0).round() as u32)).collect();
    let mut header = vec!["site", "unit", "mean", "std", "mean_plus_2std"];
    header.extend(quantile_names.iter().map(String::as_str));
    header.push("nonzero_fraction");
    let mut r = Report::new(&header);
    for d in units {
        let mut row = vec![
            site.to_string(),
            d.unit.to_string(),
            format_float(d.mean),
            format_float(d.std),
            format_float(d.conservative),
        ];
        row.extend(d.quantiles.iter().map(|&q| format_float(q)));
        row.push(format_float(d.nonzero));
        r.push(row);
    }
    r
}

pub fn finetune_report(rows: &[FinetuneRow]) -> Report {
    let mut r = Report::new(&[
        "metric",
        "seed",
        "step",
        "site",
        "loss_pruned",
        "loss_finetuned",
        "acc_pruned",
        "acc_finetuned",
        "epochs",
    ]);
    for row in rows {
        r.push(vec![
            row.metric.to_string(),
            row.seed.to_string(),
            row.step.to_string(),
            row.site.to_string(),
            format_float(row.loss_pruned),
            format_float(row.loss_finetuned),
            opt(row.accuracy_pruned),
            opt(row.accuracy_finetuned),
            row.epochs.to_string(),
        ]);
    }
    r
}

/// Unit counts are joined with `;`.
pub fn randinit_report(runs: &[RandomInitRun]) -> Report {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
    let mut r = Report::new(&["seed", "acc_before", "acc_after", "units_before", "units_after"]);
    for run in runs {
        r.push(vec![
            run.seed.to_string(),
            format_float(run.accuracy_before),
            format_float(run.accuracy_after),
            join(&run.units_before),
            join(&run.units_after),
        ]);
    }
    r
}
