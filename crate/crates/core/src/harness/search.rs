use std::path::Path;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{group_trials, split};
use crate::dvae::{csv_err, train, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{report, PredictionRecord};
use crate::signal::{Dataset, Sex};

/// Seeded grid search over the two loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSearch {
    pub beta1_grid: Vec<f64>,
    pub beta2_grid: Vec<f64>,
    /// Grid points to try; 0 tries all of them.
    pub draws: usize,
    pub seed: u64,
    /// Subjects of each sex held out for validation.
    pub validation_per_sex: usize,
}

impl Default for BetaSearch {
    fn default() -> Self {
        BetaSearch {
            beta1_grid: vec![0.1, 1.0, 10.0],
            beta2_grid: vec![0.01, 0.1, 1.0],
            draws: 0,
            seed: 0,
            validation_per_sex: 1,
        }
    }
}

impl BetaSearch {
    pub fn validate(&self) -> Result<()> {
        if self.beta1_grid.is_empty() || self.beta2_grid.is_empty() {
            return Err(Error::Parameter("beta grids must not be empty".into()));
        }
        if self.beta1_grid.iter().chain(&self.beta2_grid).any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Parameter("beta grid values must be finite and non-negative".into()));
        }
        if self.validation_per_sex == 0 {
            return Err(Error::Parameter("validation_per_sex must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaTrial {
    pub beta1: f64,
    pub beta2: f64,
    pub mae: f64,
    pub mae_gap: f64,
    /// `mae + mae_gap`; lower is better.
    pub score: f64,
}

/// Trains the dvae once per drawn grid point on all but a few validation
/// subjects and returns the trials best first.
pub fn beta_search(raw: &Dataset, base: &TrainConfig, search: &BetaSearch) -> Result<Vec<BetaTrial>> {
    search.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut roster = raw.subjects.clone();
    roster.sort_by(|a, b| a.id.cmp(&b.id));
    let mut validation = Vec::new();
    for sex in [Sex::Male, Sex::Female] {
        let mut ids: Vec<String> = roster.iter().filter(|s| s.sex == sex).map(|s| s.id.clone()).collect();
        if ids.len() <= search.validation_per_sex {
            return Err(Error::Data(format!("too few {sex} subjects for a validation split")));
        }
        ids.shuffle(&mut rng);
        validation.extend(ids.into_iter().take(search.validation_per_sex));
    }
    let train_ids: Vec<String> = roster
        .iter()
        .map(|s| s.id.clone())
        .filter(|id| !validation.contains(id))
        .collect();

    let grid: Vec<(f64, f64)> = search
        .beta1_grid
        .iter()
        .flat_map(|&a| search.beta2_grid.iter().map(move |&b| (a, b)))
        .collect();
    let picked: Vec<(f64, f64)> = if search.draws == 0 || search.draws >= grid.len() {
        grid
    } else {
        let mut idx: Vec<usize> = (0..grid.len()).collect::<Vec<_>>().choose_multiple(&mut rng, search.draws).copied().collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| grid[i]).collect()
    };

    let mut trials = Vec::with_capacity(picked.len());
    for (beta1, beta2) in picked {
        let cfg = TrainConfig { beta1, beta2, ..base.clone() };
        let outcome = (|| -> Result<(f64, f64)> {
            let (train_set, _) = split(raw, &train_ids, &validation[0])?;
            let model = train(&train_set, &cfg)?;
            let mut records = Vec::new();
            for held in &validation {
                let (_, test) = split(raw, &train_ids, held)?;
                for trial in group_trials(&test) {
                    records.push(PredictionRecord {
                        subject_id: trial[0].subject_id.clone(),
                        trial_id: trial[0].trial_id.clone(),
                        sex: trial[0].sex,
                        y_true: trial[0].weight_kg,
                        y_pred: model.predict_trial(&trial)?,
                    });
                }
            }
            let m = report(&records)?;
            Ok((m.mae_overall, (m.mae_male - m.mae_female).abs()))
        })();
        let (mae, mae_gap) = outcome.unwrap_or_else(|e| {
            warn!("beta search point ({beta1}, {beta2}) failed: {e}");
            (f64::INFINITY, f64::INFINITY)
        });
        trials.push(BetaTrial { beta1, beta2, mae, mae_gap, score: mae + mae_gap });
    }
    trials.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(trials)
}

pub(crate) fn write_trials(path: &Path, trials: &[BetaTrial]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for t in trials {
        w.serialize(t).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
