use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Dataset, Sex};

/// Requested (male, female) fraction of training subjects.
pub type Ratio = (f64, f64);

/// Training-subject selection for one held-out subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub held_out_subject: String,
    pub held_out_sex: Sex,
    pub ratio: Ratio,
    pub seed: u64,
    pub available_male: usize,
    pub available_female: usize,
    pub n_male: usize,
    pub n_female: usize,
    pub realized_ratio: Ratio,
    pub train_subjects: Vec<String>,
}

/// A plan together with what the run actually trained on, as persisted
/// under `folds/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub plan: FoldPlan,
    pub used_train_subjects: Vec<String>,
    pub n_train_cycles: usize,
    pub n_test_cycles: usize,
}

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn ratio_key(ratio: Ratio) -> u64 {
    mix(ratio.0.to_bits(), ratio.1.to_bits())
}

pub fn validate_ratio(ratio: Ratio) -> Result<()> {
    let (m, f) = ratio;
    if !((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&f)) || (m + f - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "ratio {m}:{f} must be two fractions in [0, 1] summing to 1"
        )));
    }
    Ok(())
}

/// Subject counts `(male, female)` for a pool with the given availability,
/// or `None` when the ratio cannot be realised with at least one subject of
/// every sex it asks for.
///
/// The budget is the largest total the scarcer pool supports; the male
/// count is `round(ratio_m · budget)` with exact halves going to the sex with
/// the larger fraction. Equal fractions always give an even budget, so they
/// never tie.
pub fn realize_counts(ratio: Ratio, available_male: usize, available_female: usize) -> Option<(usize, usize)> {
    let (rm, rf) = ratio;
    let mut budget = f64::INFINITY;
    if rm > 0.0 {
        budget = budget.min(available_male as f64 / rm);
    }
    if rf > 0.0 {
        budget = budget.min(available_female as f64 / rf);
    }
    let budget = (budget + 1e-9).floor() as usize;
    let exact = rm * budget as f64;
    let frac = exact - exact.floor();
    let male = if (frac - 0.5).abs() < 1e-9 {
        if rm > rf {
            exact.ceil()
        } else {
            exact.floor()
        }
    } else {
        exact.round()
    } as usize;
    let female = budget - male;
    let ok = (rm == 0.0 || male >= 1)
        && (rf == 0.0 || female >= 1)
        && male <= available_male
        && female <= available_female;
    ok.then_some((male, female))
}

/// One fold per subject, each holding that subject out and drawing the
/// training subjects to match `ratio`.
pub fn plan_folds(dataset: &Dataset, ratio: Ratio, seed: u64) -> Result<Vec<FoldPlan>> {
    validate_ratio(ratio)?;
    let mut roster = dataset.subjects.clone();
    roster.sort_by(|a, b| a.id.cmp(&b.id));
    let ids = |sex: Sex| -> Vec<&str> {
        roster.iter().filter(|s| s.sex == sex).map(|s| s.id.as_str()).collect()
    };
    let (males, females) = (ids(Sex::Male), ids(Sex::Female));
    if males.len() < 2 || females.len() < 2 {
        return Err(Error::Data(format!(
            "need at least two subjects per sex, have {} male and {} female",
            males.len(),
            females.len()
        )));
    }
    let mut plans = Vec::new();
    for (idx, subject) in roster.iter().enumerate() {
        let pool = |list: &[&str]| -> Vec<String> {
            list.iter().filter(|&&s| s != subject.id).map(|s| s.to_string()).collect()
        };
        let (avail_m, avail_f) = (pool(&males), pool(&females));
        let Some((n_male, n_female)) = realize_counts(ratio, avail_m.len(), avail_f.len()) else {
            warn!(
                "skipping fold {}: ratio {}:{} not realisable from {} male and {} female subjects",
                subject.id,
                ratio.0,
                ratio.1,
                avail_m.len(),
                avail_f.len()
            );
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed, ratio_key(ratio)), idx as u64));
        let mut train: Vec<String> = avail_m
            .choose_multiple(&mut rng, n_male)
            .chain(avail_f.choose_multiple(&mut rng, n_female))
            .cloned()
            .collect();
        train.sort();
        let total = (n_male + n_female) as f64;
        plans.push(FoldPlan {
            held_out_subject: subject.id.clone(),
            held_out_sex: subject.sex,
            ratio,
            seed,
            available_male: avail_m.len(),
            available_female: avail_f.len(),
            n_male,
            n_female,
            realized_ratio: (n_male as f64 / total, n_female as f64 / total),
            train_subjects: train,
        });
    }
    if plans.is_empty() {
        return Err(Error::Data(format!(
            "ratio {}:{} cannot be realised for any fold",
            ratio.0, ratio.1
        )));
    }
    Ok(plans)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub folds_checked: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-checks every persisted fold of a run directory: the held-out subject
/// never trained, training used only planned subjects, and the counts obey
/// the rounding rule.
pub fn audit_run(run_dir: &Path) -> Result<AuditReport> {
    let dir = run_dir.join("folds");
    let mut files: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut report = AuditReport::default();
    for path in files {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rec: FoldRecord = serde_json::from_str(&text)?;
        let p = &rec.plan;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let planned: BTreeSet<&String> = p.train_subjects.iter().collect();
        if planned.contains(&p.held_out_subject) || rec.used_train_subjects.contains(&p.held_out_subject) {
            report.violations.push(format!("{name}: held-out subject {} was trained on", p.held_out_subject));
        }
        if let Some(extra) = rec.used_train_subjects.iter().find(|s| !planned.contains(s)) {
            report.violations.push(format!("{name}: unplanned training subject {extra}"));
        }
        if planned.len() != p.n_male + p.n_female {
            report.violations.push(format!("{name}: plan lists {} subjects for {}+{}", planned.len(), p.n_male, p.n_female));
        }
        if realize_counts(p.ratio, p.available_male, p.available_female) != Some((p.n_male, p.n_female)) {
            report.violations.push(format!("{name}: counts {}+{} break the rounding rule", p.n_male, p.n_female));
        }
        report.folds_checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_the_rounding_rule() {
        assert_eq!(realize_counts((0.5, 0.5), 4, 5), Some((4, 4)));
        assert_eq!(realize_counts((0.9, 0.1), 7, 8), Some((6, 1)));
        assert_eq!(realize_counts((0.9, 0.1), 8, 7), Some((7, 1)));
        assert_eq!(realize_counts((0.1, 0.9), 8, 7), Some((1, 6)));
        assert_eq!(realize_counts((0.7, 0.3), 7, 8), Some((7, 3)));
        assert_eq!(realize_counts((0.3, 0.7), 8, 7), Some((3, 7)));
        // Budget 5: 0.7 · 5 = 3.5 is a tie and goes to the larger fraction.
        assert_eq!(realize_counts((0.7, 0.3), 4, 2), Some((4, 1)));
        assert_eq!(realize_counts((0.3, 0.7), 2, 4), Some((1, 4)));
        assert_eq!(realize_counts((1.0, 0.0), 3, 0), Some((3, 0)));
        assert_eq!(realize_counts((0.9, 0.1), 3, 3), None);
    }
}
