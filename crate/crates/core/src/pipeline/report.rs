//! Text output for metric records and the CKA matrix. Columns are fixed:
//! `kind, psnr, ssim, n`, with PSNR at two decimals and SSIM at four.

use std::fmt::Write as _;

use super::evaluate::{EvalReport, MetricRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::UnknownName(format!("report format `{s}`"))),
        }
    }
}

pub fn format_records(records: &[MetricRecord], format: Format) -> Result<String> {
    if records.is_empty() {
        return Err(Error::invalid("format_records", "no records"));
    }
    let mut s = String::new();
    match format {
        Format::Csv => {
            s.push_str("kind,psnr,ssim,n\n");
            for r in records {
                let _ = writeln!(s, "{},{:.2},{:.4},{}", r.kind, r.psnr, r.ssim, r.n);
            }
        }
        Format::Table => {
            let w = records.iter().map(|r| r.kind.len()).max().unwrap_or(0).max(4);
            let _ = writeln!(s, "{:<w$}  {:>7}  {:>7}  {:>5}", "kind", "psnr", "ssim", "n");
            for r in records {
                let _ = writeln!(s, "{:<w$}  {:>7.2}  {:>7.4}  {:>5}", r.kind, r.psnr, r.ssim, r.n);
            }
        }
    }
    Ok(s)
}

/// Mean and across-kind variance lines.
pub fn format_summary(report: &EvalReport) -> String {
    format!(
        "mean psnr {:.2} ssim {:.4}\nvariance psnr {:.4} ssim {:.6}\n",
        report.psnr_mean, report.ssim_mean, report.psnr_variance, report.ssim_variance
    )
}

/// Square table with the set names as row and column headers.
pub fn format_cka(report: &EvalReport) -> String {
    let names: Vec<&str> = report.records.iter().map(|r| r.kind.as_str()).collect();
    let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<w$}", "cka");
    for n in &names {
        let _ = write!(s, "  {n:>w$}");
    }
    s.push('\n');
    for (i, row) in report.cka.iter().enumerate() {
        let _ = write!(s, "{:<w$}", names[i]);
        for v in row {
            let _ = write!(s, "  {v:>w$.4}");
        }
        s.push('\n');
    }
    s
}
