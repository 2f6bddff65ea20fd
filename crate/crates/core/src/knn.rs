//! k-nearest-neighbour regression over flattened, normalised gait cycles.
//!
//! The prediction is the mean load of the `k` training cycles closest in
//! Euclidean distance. Equal distances are ordered by training index.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dvae::check_single_trial;
use crate::error::{Error, Result};
use crate::signal::{renormalize, ChannelStat, Dataset, GaitCycle};
use crate::tensorfile::{read_tensors, write_tensors};

pub const DEFAULT_K: usize = 5;
pub const KNN_MANIFEST: &str = "knn.json";
pub const KNN_TENSORS: &str = "knn.f32";

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major `[n × dim]` training matrix.
    pub rows: Vec<f64>,
    pub targets: Vec<f64>,
    pub channel_names: Vec<String>,
    pub channel_stats: Vec<ChannelStat>,
}

/// Stores the cycles of a normalised dataset.
pub fn knn_fit(dataset: &Dataset, k: usize) -> Result<KnnModel> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k must be in 1..={n}, got {k}")));
    }
    let stats = dataset
        .channel_stats
        .clone()
        .ok_or_else(|| Error::Data("k-NN expects a normalised dataset".into()))?;
    dataset.validate()?;
    let dim = dataset.cycles[0].data.len();
    let mut rows = Vec::with_capacity(n * dim);
    for c in &dataset.cycles {
        rows.extend_from_slice(&c.data);
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in k-NN training data".into()));
    }
    Ok(KnnModel {
        k,
        dim,
        rows,
        targets: dataset.cycles.iter().map(|c| c.weight_kg).collect(),
        channel_names: dataset.channel_names.clone(),
        channel_stats: stats,
    })
}

/// Load estimate for one normalised cycle.
pub fn knn_predict(model: &KnnModel, cycle: &[f64]) -> Result<f64> {
    if cycle.len() != model.dim {
        return Err(Error::Shape(format!(
            "query has {} values, model expects {}",
            cycle.len(),
            model.dim
        )));
    }
    let mut dist: Vec<(f64, usize)> = model
        .rows
        .chunks_exact(model.dim)
        .enumerate()
        .map(|(i, row)| {
            let d: f64 = row.iter().zip(cycle).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        })
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    if model.k < dist.len() {
        dist.select_nth_unstable_by(model.k - 1, by_distance);
        dist.truncate(model.k);
    }
    dist.sort_unstable_by(by_distance);
    Ok(dist.iter().map(|&(_, i)| model.targets[i]).sum::<f64>() / model.k as f64)
}

impl KnnModel {
    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    /// Applies the stored channel statistics to `dataset`.
    pub fn prepare(&self, dataset: &Dataset) -> Result<Dataset> {
        renormalize(dataset, &self.channel_names, &self.channel_stats)
    }

    pub fn predict_cycles(&self, cycles: &[&GaitCycle]) -> Result<Vec<f64>> {
        cycles.iter().map(|c| knn_predict(self, &c.data)).collect()
    }

    /// Mean of the per-cycle estimates of one trial.
    pub fn predict_trial(&self, cycles: &[&GaitCycle]) -> Result<f64> {
        check_single_trial(cycles)?;
        let p = self.predict_cycles(cycles)?;
        Ok(p.iter().sum::<f64>() / p.len() as f64)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KnnManifest {
    format_version: u32,
    k: usize,
    n_rows: usize,
    dim: usize,
    channel_names: Vec<String>,
    channel_stats: Vec<ChannelStat>,
}

pub fn save_knn(dir: &Path, model: &KnnModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = KnnManifest {
        format_version: 1,
        k: model.k,
        n_rows: model.n_rows(),
        dim: model.dim,
        channel_names: model.channel_names.clone(),
        channel_stats: model.channel_stats.clone(),
    };
    let path = dir.join(KNN_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let n = model.n_rows();
    write_tensors(
        &dir.join(KNN_TENSORS),
        [
            ("rows", &[n, model.dim][..], &model.rows[..]),
            ("targets", &[n][..], &model.targets[..]),
        ],
    )
}

pub fn load_knn(dir: &Path) -> Result<KnnModel> {
    let path = dir.join(KNN_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: KnnManifest = serde_json::from_str(&text)?;
    let mut rows = None;
    let mut targets = None;
    for t in read_tensors(&dir.join(KNN_TENSORS))? {
        match t.name.as_str() {
            "rows" if t.shape == [m.n_rows, m.dim] => rows = Some(t.data),
            "targets" if t.shape == [m.n_rows] => targets = Some(t.data),
            other => return Err(Error::Data(format!("unexpected tensor {other} in {KNN_TENSORS}"))),
        }
    }
    let (Some(rows), Some(targets)) = (rows, targets) else {
        return Err(Error::Data(format!("{KNN_TENSORS} is missing rows or targets")));
    };
    if m.k == 0 || m.k > m.n_rows {
        return Err(Error::Data(format!("stored k = {} with {} rows", m.k, m.n_rows)));
    }
    Ok(KnnModel {
        k: m.k,
        dim: m.dim,
        rows,
        targets,
        channel_names: m.channel_names,
        channel_stats: m.channel_stats,
    })
}
