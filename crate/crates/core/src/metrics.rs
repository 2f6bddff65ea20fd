//! Accuracy and group-fairness metrics for load predictions.
//!
//! Residuals are `y − ŷ`: positive means the load was underestimated.
//! Statistical parity is female minus male. Every function refuses empty
//! groups rather than returning NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Sex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub subject_id: String,
    pub trial_id: String,
    pub sex: Sex,
    pub y_true: f64,
    pub y_pred: f64,
}

impl PredictionRecord {
    pub fn residual(&self) -> f64 {
        self.y_true - self.y_pred
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae_overall: f64,
    pub mae_female: f64,
    pub mae_male: f64,
    pub sp: f64,
    pub prd: f64,
    pub nrd: f64,
    pub n_female: usize,
    pub n_male: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn group_mean(records: &[PredictionRecord], sex: Sex, f: impl Fn(&PredictionRecord) -> f64) -> Result<f64> {
    mean(records.iter().filter(|r| r.sex == sex).map(f))
        .ok_or_else(|| Error::Parameter(format!("no {sex} records")))
}

pub fn mae(records: &[PredictionRecord]) -> Result<f64> {
    mean(records.iter().map(|r| r.residual().abs()))
        .ok_or_else(|| Error::Parameter("MAE of an empty record set".into()))
}

/// Mean female prediction minus mean male prediction.
pub fn statistical_parity(records: &[PredictionRecord]) -> Result<f64> {
    Ok(group_mean(records, Sex::Female, |r| r.y_pred)? - group_mean(records, Sex::Male, |r| r.y_pred)?)
}

/// Absolute gap between the groups' mean underestimation `max(0, y − ŷ)`.
pub fn positive_residual_difference(records: &[PredictionRecord]) -> Result<f64> {
    let pos = |r: &PredictionRecord| r.residual().max(0.0);
    Ok((group_mean(records, Sex::Female, pos)? - group_mean(records, Sex::Male, pos)?).abs())
}

/// Absolute gap between the groups' mean overestimation `min(0, y − ŷ)`.
pub fn negative_residual_difference(records: &[PredictionRecord]) -> Result<f64> {
    let neg = |r: &PredictionRecord| r.residual().min(0.0);
    Ok((group_mean(records, Sex::Female, neg)? - group_mean(records, Sex::Male, neg)?).abs())
}

pub fn report(records: &[PredictionRecord]) -> Result<MetricsReport> {
    let ctx = |field: &'static str| move |e: Error| Error::Parameter(format!("{field}: {e}"));
    let abs = |r: &PredictionRecord| r.residual().abs();
    Ok(MetricsReport {
        mae_overall: mae(records).map_err(ctx("mae_overall"))?,
        mae_female: group_mean(records, Sex::Female, abs).map_err(ctx("mae_female"))?,
        mae_male: group_mean(records, Sex::Male, abs).map_err(ctx("mae_male"))?,
        sp: statistical_parity(records).map_err(ctx("sp"))?,
        prd: positive_residual_difference(records).map_err(ctx("prd"))?,
        nrd: negative_residual_difference(records).map_err(ctx("nrd"))?,
        n_female: records.iter().filter(|r| r.sex == Sex::Female).count(),
        n_male: records.iter().filter(|r| r.sex == Sex::Male).count(),
    })
}
