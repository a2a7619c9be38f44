//! CSV emission for training histories and sweep summaries.
//!
//! Numbers are formatted with six significant digits and no trailing zeros,
//! so reruns of the same computation produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::trainer::{EvalRecord, RunSummary};

/// Formats with six significant digits, trimming trailing zeros. Values whose
/// decimal exponent falls in [-4, 5] use fixed notation, the rest scientific.
pub fn fmt_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..=5).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const HISTORY_HEADER: &str =
    "step,train_total,train_recon,train_kl,test_total,test_recon,test_kl,gen_total,gen_recon,gen_kl";

pub fn write_history_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            fmt_g6(r.train.total),
            fmt_g6(r.train.recon),
            fmt_g6(r.train.kl),
            fmt_g6(r.test.total),
            fmt_g6(r.test.recon),
            fmt_g6(r.test.kl),
            fmt_g6(r.gen.total),
            fmt_g6(r.gen.recon),
            fmt_g6(r.gen.kl)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One sweep line: the last-epoch loss summary for a β plus the Fréchet score
/// of its generated samples.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub beta: f64,
    pub summary: RunSummary,
    pub fid: f64,
}

pub const SWEEP_HEADER: &str = "beta,train_total,test_total,gen_total,fid";

/// Writes rows sorted by ascending β regardless of input order.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SWEEP_HEADER}")?;
    for row in sorted {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_g6(row.beta),
            fmt_g6(row.summary.train.total),
            fmt_g6(row.summary.test.total),
            fmt_g6(row.summary.gen.total),
            fmt_g6(row.fid)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a generic CSV: a header line, then one line per row with cells
/// joined by commas. Cells are written verbatim.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
