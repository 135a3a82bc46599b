//! Log-log least-squares fits of convergence columns.

use std::path::Path;

use crate::error::{BenchError, Result};

/// Fewest usable rows a fit accepts.
pub const MIN_FIT_ROWS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub column: String,
    pub k_min: f64,
    pub k_max: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub rows: usize,
}

impl std::fmt::Display for RateFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} over [{}, {}]: slope {:.4}, intercept {:.4}, r2 {:.4} ({} rows)",
            self.column, self.k_min, self.k_max, self.slope, self.intercept, self.r2, self.rows
        )
    }
}

/// Default window `[max(100, T/100), T]`.
pub fn default_window(t: f64) -> (f64, f64) {
    ((t / 100.0).max(100.0), t)
}

/// OLS of `ln y` on `ln x` over `x` in `[k_min, k_max]`, skipping
/// non-finite and non-positive values.
pub fn fit_power_law(column: &str, xs: &[f64], ys: &[f64], k_min: f64, k_max: f64) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x >= k_min && **x <= k_max && x.is_finite() && y.is_finite() && **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < MIN_FIT_ROWS {
        return Err(BenchError::Fit(format!(
            "column `{column}` has {} usable rows in [{k_min}, {k_max}], need {MIN_FIT_ROWS}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(BenchError::Fit(format!("column `{column}` window has a single abscissa")));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit {
        column: column.to_string(),
        k_min,
        k_max,
        slope,
        intercept,
        r2,
        rows: pts.len(),
    })
}

/// Reads `column` and the first column (the abscissa) from CSV text.
/// Empty fields are skipped.
pub fn read_columns(text: &str, column: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| BenchError::Fit("empty file".into()))?;
    let idx = header
        .split(',')
        .position(|h| h.trim() == column)
        .ok_or_else(|| BenchError::Fit(format!("no column `{column}` in header `{header}`")))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| BenchError::Fit(format!("row {}: `{s}`: {e}", i + 2)))
        };
        let Some(y) = fields.get(idx).filter(|f| !f.trim().is_empty()) else {
            continue;
        };
        xs.push(parse(fields[0])?);
        ys.push(parse(y)?);
    }
    Ok((xs, ys))
}

pub fn fit_rate_slope(path: &Path, column: &str, k_min: f64, k_max: f64) -> Result<RateFit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Io { path: path.display().to_string(), source: e })?;
    let (xs, ys) = read_columns(&text, column)?;
    fit_power_law(column, &xs, &ys, k_min, k_max)
}
