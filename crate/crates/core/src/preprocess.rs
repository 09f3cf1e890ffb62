//! Box-Cox normalization, column standardization and Kolmogorov-Smirnov
//! normality diagnostics.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::panel::{DialoguePanel, EventId};

/// Smallest sample for which the asymptotic Kolmogorov p-value is reported.
pub const KS_MIN_SAMPLE: usize = 8;

/// Default Box-Cox exponent.
pub const DEFAULT_GAMMA: f64 = -0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("box-cox requires positive values, got {value} for period {period}, event {event}")]
    Domain { period: String, event: EventId, value: f64 },
    #[error("box-cox requires a positive value, got {0}")]
    NonPositive(f64),
    #[error("box-cox exponent must be finite, got {0}")]
    InvalidGamma(f64),
    #[error("column {column} has zero variance")]
    ZeroVariance { column: String },
    #[error("need at least {needed} observations, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
}

/// Box-Cox transform of a single positive value.
///
/// Uses `expm1` so that small exponents converge smoothly to `ln y`.
pub fn box_cox(y: f64, gamma: f64) -> Result<f64, PreprocessError> {
    if !gamma.is_finite() {
        return Err(PreprocessError::InvalidGamma(gamma));
    }
    if !(y > 0.0) {
        return Err(PreprocessError::NonPositive(y));
    }
    if gamma == 0.0 {
        Ok(y.ln())
    } else {
        Ok((gamma * y.ln()).exp_m1() / gamma)
    }
}

pub fn box_cox_vec(values: &[f64], gamma: f64) -> Result<Vec<f64>, PreprocessError> {
    values.iter().map(|&y| box_cox(y, gamma)).collect()
}

/// Preprocessing applied to a panel before analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    /// Box-Cox exponent; `None` skips the transform.
    pub gamma: Option<f64>,
    /// Constant added to every cell before Box-Cox.
    pub shift: f64,
    pub standardize: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            gamma: Some(DEFAULT_GAMMA),
            shift: 0.0,
            standardize: true,
        }
    }
}

impl TransformConfig {
    pub fn raw() -> Self {
        TransformConfig {
            gamma: None,
            shift: 0.0,
            standardize: true,
        }
    }

    /// Applies shift and Box-Cox cell by cell to every event of the panel.
    /// Standardization is left to the analyses, which work on columns.
    pub fn apply(&self, panel: &DialoguePanel) -> Result<DialoguePanel, PreprocessError> {
        let Some(gamma) = self.gamma else {
            if self.shift == 0.0 {
                return Ok(panel.clone());
            }
            return panel.try_map(|_, _, v| Ok(v + self.shift));
        };
        if !gamma.is_finite() {
            return Err(PreprocessError::InvalidGamma(gamma));
        }
        panel.try_map(|row, event, v| {
            let shifted = v + self.shift;
            box_cox(shifted, gamma).map_err(|_| PreprocessError::Domain {
                period: panel.period_labels()[row].clone(),
                event,
                value: shifted,
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std_dev: f64,
}

/// Sample mean and standard deviation (denominator T-1).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (t - 1.0)).sqrt())
}

fn is_degenerate(sd: f64, mean: f64) -> bool {
    !(sd > 1e-12 * mean.abs().max(1.0))
}

/// Scales each column to sample mean 0 and sample standard deviation 1.
///
/// `names` labels columns in error messages; falls back to the column index.
pub fn standardize_columns(
    x: &DMatrix<f64>,
    names: Option<&[EventId]>,
) -> Result<(DMatrix<f64>, Vec<ColumnScale>), PreprocessError> {
    if x.nrows() < 2 {
        return Err(PreprocessError::SampleTooSmall {
            needed: 2,
            got: x.nrows(),
        });
    }
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let values: Vec<f64> = col.iter().copied().collect();
        let (mean, std_dev) = mean_sd(&values);
        if is_degenerate(std_dev, mean) {
            let column = names
                .and_then(|n| n.get(j))
                .map(|e| e.to_string())
                .unwrap_or_else(|| format!("#{j}"));
            return Err(PreprocessError::ZeroVariance { column });
        }
        col.apply(|v| *v = (*v - mean) / std_dev);
        scales.push(ColumnScale { mean, std_dev });
    }
    Ok((out, scales))
}

/// Inverse of [`standardize_columns`].
pub fn unstandardize_columns(z: &DMatrix<f64>, scales: &[ColumnScale]) -> DMatrix<f64> {
    assert_eq!(z.ncols(), scales.len(), "one scale per column");
    let mut out = z.clone();
    for (mut col, s) in out.column_iter_mut().zip(scales) {
        col.apply(|v| *v = *v * s.std_dev + s.mean);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution,
/// `Q(l) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 l^2)`.
///
/// The alternating series converges slowly for small `l`; there the
/// equivalent theta-function form `1 - sqrt(2 pi)/l sum exp(-(2k-1)^2 pi^2 / (8 l^2))`
/// is summed instead. Both are truncated once terms drop below 1e-12.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    const TERM_TOL: f64 = 1e-12;
    if !(lambda > 0.0) {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        let mut sum = 0.0;
        for k in 1..1000 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * PI * PI / (8.0 * lambda * lambda)).exp();
            sum += term;
            if term < TERM_TOL {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..1000 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < TERM_TOL {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    };
    q.clamp(0.0, 1.0)
}

/// Asymptotic p-value for a one-sample KS statistic `d` on `t` observations.
pub fn ks_p_value(d: f64, t: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let sqrt_t = (t as f64).sqrt();
    kolmogorov_survival((sqrt_t + 0.12 + 0.11 / sqrt_t) * d)
}

/// One-sample KS test against a normal with mean and standard deviation
/// estimated from `x`. The p-value is the classical Kolmogorov one and is
/// only an approximate diagnostic when parameters are estimated.
pub fn ks_normality(x: &[f64]) -> Result<KsResult, PreprocessError> {
    let t = x.len();
    if t < KS_MIN_SAMPLE {
        return Err(PreprocessError::SampleTooSmall {
            needed: KS_MIN_SAMPLE,
            got: t,
        });
    }
    let (mean, sd) = mean_sd(x);
    if is_degenerate(sd, mean) {
        return Err(PreprocessError::ZeroVariance {
            column: "sample".into(),
        });
    }
    let normal = Normal::new(mean, sd).expect("finite mean and positive sd");
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = t as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let cdf = normal.cdf(v);
            let above = (i + 1) as f64 / n - cdf;
            let below = cdf - i as f64 / n;
            above.max(below)
        })
        .fold(0.0_f64, f64::max)
        .clamp(0.0, 1.0);
    Ok(KsResult {
        statistic,
        p_value: ks_p_value(statistic, t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNormality {
    pub event: EventId,
    #[serde(rename = "ks")]
    pub ks_statistic: f64,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub mean: f64,
    #[serde(rename = "sd")]
    pub std_dev: f64,
}

/// Per-event KS diagnostics in event-sequence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalityReport {
    pub columns: Vec<ColumnNormality>,
}

impl NormalityReport {
    pub fn get(&self, event: EventId) -> Option<&ColumnNormality> {
        self.columns.iter().find(|c| c.event == event)
    }
}

/// Transforms the panel with `config` and runs the KS test on every event
/// column. Mean and sd are those of the transformed, unstandardized column.
pub fn normality_report(panel: &DialoguePanel, config: &TransformConfig) -> Result<NormalityReport, PreprocessError> {
    let transformed = config.apply(panel)?;
    let mut columns = Vec::new();
    for event in transformed.event_sequence().iter() {
        let col = transformed.column(event);
        let (mean, std_dev) = mean_sd(col.as_slice());
        let ks = ks_normality(col.as_slice()).map_err(|e| match e {
            PreprocessError::ZeroVariance { .. } => PreprocessError::ZeroVariance {
                column: event.to_string(),
            },
            other => other,
        })?;
        columns.push(ColumnNormality {
            event,
            ks_statistic: ks.statistic,
            p_value: ks.p_value,
            mean,
            std_dev,
        });
    }
    Ok(NormalityReport { columns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweepPoint {
    pub gamma: f64,
    pub mean_p: f64,
    pub report: NormalityReport,
}

/// Normality reports over a grid of Box-Cox exponents.
pub fn gamma_sweep(panel: &DialoguePanel, grid: &[f64], shift: f64) -> Result<Vec<GammaSweepPoint>, PreprocessError> {
    grid.iter()
        .map(|&gamma| {
            let config = TransformConfig {
                gamma: Some(gamma),
                shift,
                standardize: false,
            };
            let report = normality_report(panel, &config)?;
            let mean_p = report.columns.iter().map(|c| c.p_value).sum::<f64>() / report.columns.len() as f64;
            Ok(GammaSweepPoint { gamma, mean_p, report })
        })
        .collect()
}
