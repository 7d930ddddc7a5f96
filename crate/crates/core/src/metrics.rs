//! Reconstruction error metrics in m/s.
//!
//! Medians use the lower median (`sorted[(n - 1) / 2]`); standard deviations are
//! population (divide by `n`). Windowed metrics compare each predicted pixel with
//! the truth in a neighbourhood around it and keep the smallest absolute error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::SpeedMap;

pub const DEFAULT_RADIUS: usize = 5;

pub const CSV_COLUMNS: [&str; 7] = ["RMSE", "mu", "sigma", "median", "mu_star", "sigma_star", "median_star"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowShape {
    /// Chebyshev distance `max(|dy|, |dx|) <= r`.
    #[default]
    Square,
    /// Euclidean distance `dy^2 + dx^2 <= r^2`.
    Disc,
}

fn check_dims(pred: &SpeedMap, truth: &SpeedMap) -> Result<()> {
    if pred.height != truth.height || pred.width != truth.width {
        return Err(Error::Argument(format!(
            "prediction is {}x{} but truth is {}x{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    Ok(())
}

/// `|pred - truth|` per pixel.
pub fn abs_error(pred: &SpeedMap, truth: &SpeedMap) -> Result<Vec<f64>> {
    check_dims(pred, truth)?;
    Ok(pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .collect())
}

pub fn rmse(pred: &SpeedMap, truth: &SpeedMap) -> Result<f64> {
    Ok(rms(&abs_error(pred, truth)?))
}

pub fn mean_abs(pred: &SpeedMap, truth: &SpeedMap) -> Result<f64> {
    Ok(mean(&abs_error(pred, truth)?))
}

pub fn median_abs(pred: &SpeedMap, truth: &SpeedMap) -> Result<f64> {
    Ok(lower_median(&abs_error(pred, truth)?))
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn population_std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn lower_median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

/// `e*(q) = min |pred(q) - truth(r)|` over `r` within `radius` of `q`, windows clipped
/// at the borders.
pub fn windowed_min_abs(pred: &SpeedMap, truth: &SpeedMap, radius: usize, shape: WindowShape) -> Result<Vec<f64>> {
    let mut out = abs_error(pred, truth)?;
    let (h, w) = (pred.height as isize, pred.width as isize);
    let r = radius as isize;
    for dy in -r.min(h - 1)..=r.min(h - 1) {
        for dx in -r.min(w - 1)..=r.min(w - 1) {
            if (dy, dx) == (0, 0) || (shape == WindowShape::Disc && dy * dy + dx * dx > r * r) {
                continue;
            }
            let y0 = 0.max(-dy);
            let y1 = h.min(h - dy);
            let x0 = 0.max(-dx);
            let x1 = w.min(w - dx);
            for y in y0..y1 {
                let prow = (y * w) as usize;
                let trow = ((y + dy) * w) as usize;
                for x in x0..x1 {
                    let e = (pred.data[prow + x as usize] as f64 - truth.data[trow + (x + dx) as usize] as f64).abs();
                    let o = &mut out[prow + x as usize];
                    if e < *o {
                        *o = e;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The seven summary numbers of one error population.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub rmse: f64,
    pub mu: f64,
    pub sigma: f64,
    pub median: f64,
    pub mu_star: f64,
    pub sigma_star: f64,
    pub median_star: f64,
}

impl ErrorSummary {
    pub fn from_fields(abs: &[f64], windowed: &[f64]) -> Self {
        Self {
            rmse: rms(abs),
            mu: mean(abs),
            sigma: population_std(abs),
            median: lower_median(abs),
            mu_star: mean(windowed),
            sigma_star: population_std(windowed),
            median_star: lower_median(windowed),
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.rmse,
            self.mu,
            self.sigma,
            self.median,
            self.mu_star,
            self.sigma_star,
            self.median_star,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: u64,
    pub summary: ErrorSummary,
}

/// Metrics pooled over every pixel of every sample, plus a per-sample breakdown.
/// `sigma_star` is the std of the pooled windowed-minimum field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub radius: usize,
    pub shape: WindowShape,
    pub pooled: ErrorSummary,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricsReport {
    /// `pairs` are `(sample_id, prediction, truth)`.
    pub fn compute<'a>(
        name: &str,
        pairs: impl IntoIterator<Item = (u64, &'a SpeedMap, &'a SpeedMap)>,
        radius: usize,
        shape: WindowShape,
    ) -> Result<Self> {
        let mut all_abs = Vec::new();
        let mut all_win = Vec::new();
        let mut per_sample = Vec::new();
        for (id, pred, truth) in pairs {
            let abs = abs_error(pred, truth)?;
            let win = windowed_min_abs(pred, truth, radius, shape)?;
            per_sample.push(SampleMetrics {
                sample_id: id,
                summary: ErrorSummary::from_fields(&abs, &win),
            });
            all_abs.extend(abs);
            all_win.extend(win);
        }
        Ok(Self {
            name: name.to_string(),
            radius,
            shape,
            pooled: ErrorSummary::from_fields(&all_abs, &all_win),
            per_sample,
        })
    }
}

/// Header plus one row per report, columns [`CSV_COLUMNS`].
pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut s = CSV_COLUMNS.join(",");
    s.push('\n');
    for r in reports {
        let row: Vec<String> = r.pooled.values().iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Per-sample rows of one report: `sample_id` followed by [`CSV_COLUMNS`].
pub fn per_sample_csv(report: &MetricsReport) -> String {
    let mut s = format!("sample_id,{}\n", CSV_COLUMNS.join(","));
    for m in &report.per_sample {
        let row: Vec<String> = m.summary.values().iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "{},{}", m.sample_id, row.join(","));
    }
    s
}

/// Fixed-width table with one named row per report.
pub fn reports_table(reports: &[MetricsReport]) -> String {
    let name_w = reports.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
    let heads = ["RMSE", "mu", "sigma", "Median", "mu*", "sigma*", "Median*"];
    let mut s = format!("{:<name_w$}", "case");
    for h in heads {
        let _ = write!(s, " {h:>9}");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{:<name_w$}", r.name);
        for v in r.pooled.values() {
            let _ = write!(s, " {v:>9.2}");
        }
        s.push('\n');
    }
    s
}
