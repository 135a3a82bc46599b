//! CSV rows for the three run kinds.
//!
//! Floats use Rust's shortest round-trip scientific formatting, so parsing a
//! field gives back the exact value. Missing values are empty fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{BenchError, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

fn push_opt(out: &mut String, v: Option<f64>) {
    if let Some(x) = v {
        out.push_str(&fmt_f64(x));
    }
}

pub trait CsvRow {
    const HEADER: &'static str;
    fn write_row(&self, out: &mut String);
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeRow {
    pub k: usize,
    pub lambda: f64,
    pub residue: f64,
    pub inf_residue: f64,
    pub step_norm: f64,
    pub lyapunov: f64,
    pub cum_lambda: f64,
    pub merit_ergodic: Option<f64>,
}

impl CsvRow for DeRow {
    const HEADER: &'static str = "k,lambda,residue,inf_residue,step_norm,lyapunov,cum_lambda,merit_ergodic";

    fn write_row(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},",
            self.k,
            fmt_f64(self.lambda),
            fmt_f64(self.residue),
            fmt_f64(self.inf_residue),
            fmt_f64(self.step_norm),
            fmt_f64(self.lyapunov),
            fmt_f64(self.cum_lambda)
        );
        push_opt(out, self.merit_ergodic);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub t: f64,
    pub residue: f64,
    pub lower_bound_margin: Option<f64>,
    pub lyapunov: f64,
    pub lambda: f64,
    pub merit_ergodic: Option<f64>,
}

impl CsvRow for FlowRow {
    const HEADER: &'static str = "t,residue,lower_bound_margin,lyapunov,lambda,merit_ergodic";

    fn write_row(&self, out: &mut String) {
        let _ = write!(out, "{},{},", fmt_f64(self.t), fmt_f64(self.residue));
        push_opt(out, self.lower_bound_margin);
        let _ = write!(out, ",{},{},", fmt_f64(self.lyapunov), fmt_f64(self.lambda));
        push_opt(out, self.merit_ergodic);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRow {
    pub k: usize,
    pub error: Option<f64>,
    pub residue: f64,
    pub cert_margin: Option<f64>,
}

impl CsvRow for RestartRow {
    const HEADER: &'static str = "k,error,residue,cert_margin";

    fn write_row(&self, out: &mut String) {
        let _ = write!(out, "{},", self.k);
        push_opt(out, self.error);
        let _ = write!(out, ",{},", fmt_f64(self.residue));
        push_opt(out, self.cert_margin);
    }
}

/// Header plus one line per row, each terminated by `\n`.
pub fn render_csv<R: CsvRow>(rows: &[R]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(R::HEADER);
    out.push('\n');
    for r in rows {
        r.write_row(&mut out);
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::Io { path: dir.display().to_string(), source: e })?;
    }
    std::fs::write(path, contents).map_err(|e| BenchError::Io { path: path.display().to_string(), source: e })
}

pub fn emit_csv<R: CsvRow>(rows: &[R], path: &Path) -> Result<()> {
    write_file(path, &render_csv(rows))
}
