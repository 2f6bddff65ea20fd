use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dvae::csv_err;
use crate::error::{Error, Result};
use crate::signal::Sex;

pub const RESULTS_HEADER: [&str; 12] = [
    "model", "ratio_m", "ratio_f", "seed", "fold_subject", "test_sex", "n_trials", "mae", "sp", "prd",
    "nrd", "status",
];

/// One line of `results.csv`. Fairness columns repeat the pooled value of
/// the row's (model, ratio, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub ratio_m: f64,
    pub ratio_f: f64,
    pub seed: u64,
    pub fold_subject: String,
    pub test_sex: Sex,
    pub n_trials: usize,
    pub mae: Option<f64>,
    pub sp: Option<f64>,
    pub prd: Option<f64>,
    pub nrd: Option<f64>,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

pub(crate) fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.iter().ne(RESULTS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", RESULTS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.deserialize::<ResultRow>() {
        let row = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Quantile of sorted data by linear interpolation between order
/// statistics: position `p · (n − 1)` (the common "type 7" rule).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub ratio_m: f64,
    pub ratio_f: f64,
    pub metric: String,
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Per-seed aggregates of one (model, ratio).
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub model: String,
    pub ratio_m: f64,
    pub ratio_f: f64,
    pub seed: u64,
    /// Trial-weighted mean of fold MAEs.
    pub mae_overall: Option<f64>,
    pub mae_male: Option<f64>,
    pub mae_female: Option<f64>,
    pub sp: Option<f64>,
    pub prd: Option<f64>,
    pub nrd: Option<f64>,
}

impl SeedSummary {
    pub fn mae_gap(&self) -> Option<f64> {
        Some((self.mae_male? - self.mae_female?).abs())
    }
}

fn first_appearance<K: PartialEq + Clone>(items: impl Iterator<Item = K>) -> Vec<K> {
    let mut keys = Vec::new();
    for k in items {
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys
}

fn weighted_mae<'a>(rows: impl Iterator<Item = &'a ResultRow>) -> Option<f64> {
    let (sum, n) = rows
        .filter_map(|r| r.mae.map(|m| (m, r.n_trials as f64)))
        .fold((0.0, 0.0), |(s, n), (m, w)| (s + m * w, n + w));
    (n > 0.0).then(|| sum / n)
}

pub fn seed_summaries(rows: &[ResultRow]) -> Vec<SeedSummary> {
    let keys = first_appearance(rows.iter().map(|r| (r.model.clone(), r.ratio_m, r.ratio_f, r.seed)));
    keys.into_iter()
        .map(|(model, ratio_m, ratio_f, seed)| {
            let mine: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.model == model && r.ratio_m == ratio_m && r.ratio_f == ratio_f && r.seed == seed)
                .filter(|r| r.is_ok())
                .collect();
            let of_sex = |s: Sex| weighted_mae(mine.iter().copied().filter(move |r| r.test_sex == s));
            let pooled = |f: fn(&ResultRow) -> Option<f64>| mine.iter().find_map(|r| f(r));
            SeedSummary {
                mae_overall: weighted_mae(mine.iter().copied()),
                mae_male: of_sex(Sex::Male),
                mae_female: of_sex(Sex::Female),
                sp: pooled(|r| r.sp),
                prd: pooled(|r| r.prd),
                nrd: pooled(|r| r.nrd),
                model,
                ratio_m,
                ratio_f,
                seed,
            }
        })
        .collect()
}

fn describe(model: &str, ratio: (f64, f64), metric: &str, group: &str, mut v: Vec<f64>) -> Option<SummaryRow> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(SummaryRow {
        model: model.to_string(),
        ratio_m: ratio.0,
        ratio_f: ratio.1,
        metric: metric.to_string(),
        group: group.to_string(),
        n: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Distribution summaries of per-fold MAE by test sex and of the pooled
/// per-seed fairness metrics.
pub fn summary_rows(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let seeds = seed_summaries(rows);
    let mut out = Vec::new();
    for (model, rm, rf) in first_appearance(rows.iter().map(|r| (r.model.clone(), r.ratio_m, r.ratio_f))) {
        let ok: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.model == model && r.ratio_m == rm && r.ratio_f == rf && r.is_ok())
            .collect();
        let fold_mae = |keep: &dyn Fn(&ResultRow) -> bool| -> Vec<f64> {
            ok.iter().filter(|r| keep(r)).filter_map(|r| r.mae).collect()
        };
        let per_seed = |f: &dyn Fn(&SeedSummary) -> Option<f64>| -> Vec<f64> {
            seeds
                .iter()
                .filter(|s| s.model == model && s.ratio_m == rm && s.ratio_f == rf)
                .filter_map(f)
                .collect()
        };
        let ratio = (rm, rf);
        out.extend(
            [
                describe(&model, ratio, "mae", "male", fold_mae(&|r| r.test_sex == Sex::Male)),
                describe(&model, ratio, "mae", "female", fold_mae(&|r| r.test_sex == Sex::Female)),
                describe(&model, ratio, "mae", "all", fold_mae(&|_| true)),
                describe(&model, ratio, "mae_gap", "pooled", per_seed(&|s| s.mae_gap())),
                describe(&model, ratio, "sp", "pooled", per_seed(&|s| s.sp)),
                describe(&model, ratio, "prd", "pooled", per_seed(&|s| s.prd)),
                describe(&model, ratio, "nrd", "pooled", per_seed(&|s| s.nrd)),
            ]
            .into_iter()
            .flatten(),
        );
    }
    out
}

pub const PLOTTED_METRICS: [&str; 5] = ["mae", "mae_gap", "sp", "prd", "nrd"];

/// Writes `summary.csv` and `plots/<metric>.svg` under `out_dir`.
pub fn summarize(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<SummaryRow>> {
    let summary = summary_rows(rows);
    let path = out_dir.join(super::SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for s in &summary {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let plots = out_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    for metric in PLOTTED_METRICS {
        let boxes: Vec<&SummaryRow> = summary.iter().filter(|s| s.metric == metric).collect();
        let path = plots.join(format!("{metric}.svg"));
        fs::write(&path, boxplot_svg(metric, &boxes)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(summary)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Min/quartile/max boxes, one per summary row. Equal quartiles draw a flat box.
pub fn boxplot_svg(metric: &str, boxes: &[&SummaryRow]) -> String {
    const TOP: f64 = 40.0;
    const PLOT_H: f64 = 300.0;
    const LEFT: f64 = 70.0;
    const SLOT: f64 = 60.0;
    const BOX_W: f64 = 30.0;
    let width = LEFT + SLOT * boxes.len().max(1) as f64 + 20.0;
    let height = TOP + PLOT_H + 140.0;
    let mut lo = boxes.iter().map(|b| b.min).fold(f64::INFINITY, f64::min);
    let mut hi = boxes.iter().map(|b| b.max).fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 1.0, hi + 1.0);
    }
    let y = |v: f64| TOP + PLOT_H * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="14">{}</text>"#, escape(metric));
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + PLOT_H
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    for (i, b) in boxes.iter().enumerate() {
        let cx = LEFT + SLOT * (i as f64 + 0.5);
        let x0 = cx - BOX_W / 2.0;
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(b.max),
            y(b.min)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{BOX_W}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
            y(b.q3),
            y(b.q1) - y(b.q3)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.2}" y1="{m:.2}" x2="{:.2}" y2="{m:.2}" stroke="black" stroke-width="2"/>"#,
            x0 + BOX_W,
            m = y(b.median)
        );
        let label = format!("{} {}:{} {}", b.model, b.ratio_m, b.ratio_f, b.group);
        let ly = TOP + PLOT_H + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{ly:.2}" transform="rotate(45 {cx:.2} {ly:.2})">{}</text>"#,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_endpoints_and_midpoint() {
        let v = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 8.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
    }

    #[test]
    fn bad_header_and_bad_cell_report_lines() {
        let err = parse_results("a,b\n1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        let text = format!(
            "{}\nknn,0.5,0.5,0,M01,male,3,1.0,0.1,0.1,0.1,ok\nknn,0.5,0.5,0,M02,male,three,1.0,,,,ok\n",
            RESULTS_HEADER.join(",")
        );
        let err = parse_results(&text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }
}
