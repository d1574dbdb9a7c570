//! Evaluation metrics.
//!
//! * mean localisation accuracy over IoU thresholds 0.50, 0.55, ..., 0.95
//!   (a hit counts when `iou >= threshold`), in percent;
//! * average precision with all-points interpolation, one class against the
//!   rest;
//! * ICC(2,1) inter-rater agreement.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{iou, BoundingBox, Episode, RiskSituation};

/// IoU thresholds of the accuracy sweep.
pub const THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// One localisation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub episode: usize,
    pub predicted: BoundingBox,
    pub truth: BoundingBox,
    pub situation: RiskSituation,
}

/// Accuracy at each threshold and their mean, all in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct MaccRow {
    pub acc: [f64; 10],
    pub macc: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaccReport {
    pub overall: MaccRow,
    pub per_situation: BTreeMap<RiskSituation, MaccRow>,
    /// Macro average of the per-situation rows.
    pub average: MaccRow,
}

fn row(ious: &[f64]) -> MaccRow {
    let n = ious.len() as f64;
    let mut acc = [0.0; 10];
    for (a, &tau) in acc.iter_mut().zip(&THRESHOLDS) {
        *a = 100.0 * ious.iter().filter(|&&v| v >= tau).count() as f64 / n;
    }
    MaccRow { acc, macc: acc.iter().sum::<f64>() / 10.0, count: ious.len() }
}

/// Mean accuracy of all records, overall and per situation.
pub fn macc(records: &[EvalRecord]) -> Result<MaccReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no evaluation records".into()));
    }
    let ious: Vec<f64> = records.iter().map(|r| iou(&r.predicted, &r.truth)).collect();
    let mut groups: BTreeMap<RiskSituation, Vec<f64>> = BTreeMap::new();
    for (r, v) in records.iter().zip(&ious) {
        groups.entry(r.situation).or_default().push(*v);
    }
    let per_situation: BTreeMap<_, _> = groups.into_iter().map(|(s, v)| (s, row(&v))).collect();
    let k = per_situation.len() as f64;
    let mut acc = [0.0; 10];
    for r in per_situation.values() {
        for (a, v) in acc.iter_mut().zip(r.acc) {
            *a += v / k;
        }
    }
    let average = MaccRow {
        acc,
        macc: per_situation.values().map(|r| r.macc).sum::<f64>() / k,
        count: records.len(),
    };
    Ok(MaccReport { overall: row(&ious), per_situation, average })
}

/// Average precision of `scores` against binary `labels`.
///
/// Tied scores form a single operating point. Precision is replaced by its
/// running maximum from the right before integrating over recall.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(Error::InvalidInput("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // (recall, precision) at each distinct score
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            tp += labels[order[k]] as usize;
            seen += 1;
            k += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / seen as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for i in (0..points.len()).rev() {
        envelope = envelope.max(points[i].1);
        let prev_recall = if i == 0 { 0.0 } else { points[i - 1].0 };
        ap += (points[i].0 - prev_recall) * envelope;
    }
    // Rounding in the sum may overshoot a perfect ranking.
    Ok(ap.min(1.0))
}

/// One-vs-rest AP for `class` given per-sample class scores.
pub fn class_average_precision(scores: &[Vec<f64>], labels: &[usize], class: usize) -> Result<f64> {
    let s: Vec<f64> = scores
        .iter()
        .map(|v| {
            v.get(class)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no score for class {class}")))
        })
        .collect::<Result<_>>()?;
    let l: Vec<bool> = labels.iter().map(|&c| c == class).collect();
    average_precision(&s, &l)
}

/// Localisation records of a uniformly random candidate choice per episode.
///
/// Only episodes with a ground-truth box are scored.
pub fn random_records(episodes: &[Episode], seed: u64) -> Result<Vec<EvalRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, e) in episodes.iter().enumerate() {
        let Some(truth) = e.gt_box else { continue };
        let candidates = e.candidates();
        if candidates.is_empty() {
            continue;
        }
        let id = candidates[rng.random_range(0..candidates.len())];
        let predicted = e.final_frame().node(id).expect("candidate is in the last frame").bbox;
        out.push(EvalRecord { episode: k, predicted, truth, situation: e.situation });
    }
    Ok(out)
}

/// Mean accuracy of random candidate selection.
pub fn random_baseline(episodes: &[Episode], seed: u64) -> Result<MaccReport> {
    macc(&random_records(episodes, seed)?)
}

/// ICC(2,1): two-way random effects, absolute agreement, single rater.
///
/// `ratings[i][j]` is rater `j`'s rating of subject `i`.
pub fn icc(ratings: &[Vec<f64>]) -> Result<f64> {
    let n = ratings.len();
    let k = ratings.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::InvalidInput("ICC needs at least 2 subjects and 2 raters".into()));
    }
    if ratings.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput("rating matrix is ragged".into()));
    }
    if ratings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite rating".into()));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = ratings.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| ratings.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    // Raters that never disagree agree perfectly, whatever the rounding in
    // the sums of squares below would say.
    if ratings.iter().all(|r| r.iter().all(|v| *v == r[0])) {
        return Ok(1.0);
    }
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_err: f64 = ratings
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (i, j, v)))
        .map(|(i, j, v)| (v - row_means[i] - col_means[j] + grand).powi(2))
        .sum();
    let msr = ss_rows / (nf - 1.0);
    let msc = ss_cols / (kf - 1.0);
    let mse = ss_err / ((nf - 1.0) * (kf - 1.0));
    let denom = msr + (kf - 1.0) * mse + kf * (msc - mse) / nf;
    if denom == 0.0 {
        return Err(Error::Degenerate("ICC denominator vanishes".into()));
    }
    Ok((msr - mse) / denom)
}

fn fmt_row(out: &mut String, label: &str, r: Option<&MaccRow>) {
    out.push_str(label);
    match r {
        Some(r) => {
            for a in r.acc {
                let _ = write!(out, ",{a:.4}");
            }
            let _ = writeln!(out, ",{:.4},{}", r.macc, r.count);
        }
        None => out.push_str(",,,,,,,,,,,,0\n"),
    }
}

/// Accuracy table: one row per situation (blank when unseen), the macro
/// average, and optionally a random-selection row.
pub fn macc_csv(report: &MaccReport, random: Option<&MaccReport>) -> String {
    let mut out = String::from("situation");
    for t in THRESHOLDS {
        let _ = write!(out, ",acc@{t:.2}");
    }
    out.push_str(",mAcc,count\n");
    for s in RiskSituation::ALL {
        fmt_row(&mut out, s.tag(), report.per_situation.get(s));
    }
    fmt_row(&mut out, "average", Some(&report.average));
    if let Some(r) = random {
        fmt_row(&mut out, "random_selection", Some(&r.average));
    }
    out
}

/// One line of the AP table, all values in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ApRow {
    pub method: String,
    /// Left, right, straight; `None` without an action branch.
    pub action: Option<[f64; 3]>,
    /// Continue, alter.
    pub response: [f64; 2],
    pub macc: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cell(v: f64) -> String {
    if v.is_nan() { "-".into() } else { format!("{v:.4}") }
}

/// AP table with action, response and risk columns. Undefined values (a
/// class without positives) print as `-`.
pub fn ap_csv(rows: &[ApRow]) -> String {
    let mut out = String::from(
        "method,action_left,action_right,action_straight,action_mAP,response_continue,response_alter,response_mAP,risk_mAcc\n",
    );
    for r in rows {
        out.push_str(&r.method);
        match r.action {
            Some(a) => {
                let _ = write!(out, ",{},{},{},{}", cell(a[0]), cell(a[1]), cell(a[2]), cell(mean(&a)));
            }
            None => out.push_str(",-,-,-,-"),
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            cell(r.response[0]),
            cell(r.response[1]),
            cell(mean(&r.response)),
            cell(r.macc)
        );
    }
    out
}
