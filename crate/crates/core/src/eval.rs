//! Evaluation metrics and reports: AUC, AUC@K curves, average precision,
//! random-ordering baselines, intra-class statistics and ranking tables.

use std::io::Write;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::GroundTruthSet;
use crate::error::{Error, Result};

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// ROC AUC as the Mann–Whitney statistic: probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DegenerateInput("NaN score".into()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput("labels contain a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so it
    // stays an exact integer.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&o| labels[o]).count() as u64;
        twice_rank_sum += twice_avg * pos_in_tie;
        i = j + 1;
    }
    let p = pos as u64;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// Sorts AUCs descending, groups `k` consecutive values (remainder dropped)
/// and returns each group's mean.
pub fn auc_at_k_curve(per_element_auc: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("group size must be >= 1".into()));
    }
    if per_element_auc.len() < k {
        return Err(Error::DegenerateInput(format!(
            "{} values cannot fill a group of {k}",
            per_element_auc.len()
        )));
    }
    let mut sorted = per_element_auc.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted
        .chunks_exact(k)
        .map(|c| c.iter().sum::<f64>() / k as f64)
        .collect())
}

/// Average precision: mean of the precision at each positive's rank, ranking
/// by descending score with ties kept in input order.
pub fn mean_average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::DegenerateInput("no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub mean: f64,
    pub std: f64,
}

/// AUC of uniformly random orderings. Trial `t` draws from `seed + t`, so the
/// result does not depend on thread scheduling.
pub fn random_baseline(labels: &[bool], trials: usize, seed: u64) -> Result<Baseline> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput("labels contain a single class".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let aucs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let mut scores: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
            scores.shuffle(&mut rng);
            auc(&scores, labels).expect("both classes present")
        })
        .collect();
    let mean = aucs.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    Ok(Baseline { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraClassStats {
    /// Per element: mean over styles of the within-style mean.
    pub mu: Array1<f64>,
    /// Per element: mean over styles of the within-style sample standard deviation.
    pub sigma: Array1<f64>,
}

pub fn intra_class_stats(gt: &GroundTruthSet) -> Result<IntraClassStats> {
    let m = gt.elements.len();
    let mut mu = Array1::zeros(m);
    let mut sigma = Array1::zeros(m);
    let mut styles_used = 0usize;
    for s in 0..gt.style_vocab.len() {
        let rows = gt.rows_of_style(s);
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::Data(format!(
                "style `{}` has {} annotated painting(s), at least 2 required",
                gt.style_vocab.name(s),
                rows.len()
            )));
        }
        styles_used += 1;
        let sub = gt.ternary.select(ndarray::Axis(0), &rows).mapv(f64::from);
        let mean = sub.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let std = sub.std_axis(ndarray::Axis(0), 1.0);
        mu += &mean;
        sigma += &std;
    }
    if styles_used == 0 {
        return Err(Error::Data("ground truth has no paintings".into()));
    }
    Ok(IntraClassStats { mu: mu / styles_used as f64, sigma: sigma / styles_used as f64 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankTable {
    /// Highest scores first.
    pub top: Vec<String>,
    /// The tail of the same descending order (lowest score last).
    pub bottom: Vec<String>,
}

fn rank_ids(values: ArrayView1<f64>, ids: &[String], top: usize) -> Result<RankTable> {
    if top == 0 || 2 * top > values.len() {
        return Err(Error::InvalidConfig(format!(
            "top must be in 1..={} for {} items",
            values.len() / 2,
            values.len()
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let name = |i: &usize| ids[*i].clone();
    Ok(RankTable {
        top: order[..top].iter().map(name).collect(),
        bottom: order[order.len() - top..].iter().map(name).collect(),
    })
}

/// Top and bottom items for one element column of a k×m score matrix.
pub fn rank_table(scores: ArrayView2<f64>, ids: &[String], element: usize, top: usize) -> Result<RankTable> {
    if ids.len() != scores.nrows() {
        return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), scores.nrows())));
    }
    if element >= scores.ncols() {
        return Err(Error::Index { index: element, len: scores.ncols() });
    }
    rank_ids(scores.column(element), ids, top)
}

/// Top and bottom elements for one item (row).
pub fn rank_elements(
    scores: ArrayView2<f64>,
    element_names: &[String],
    item: usize,
    top: usize,
) -> Result<RankTable> {
    if element_names.len() != scores.ncols() {
        return Err(Error::Shape(format!(
            "{} element names for {} columns",
            element_names.len(),
            scores.ncols()
        )));
    }
    if item >= scores.nrows() {
        return Err(Error::Index { index: item, len: scores.nrows() });
    }
    rank_ids(scores.row(item), element_names, top)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementScore {
    pub name: String,
    /// `None` when the element's labels hold a single class.
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub g_provenance: String,
    pub split: String,
    pub elements: Vec<ElementScore>,
    pub group_size: usize,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub group_size: usize,
    pub baseline_trials: usize,
    pub seed: u64,
    pub with_ap: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { group_size: 3, baseline_trials: 1000, seed: 0, with_ap: true }
    }
}

/// Scores every element column of `predictions` (k×m) against binary labels.
pub fn evaluate(
    predictions: ArrayView2<f64>,
    labels: ArrayView2<bool>,
    element_names: &[String],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if predictions.dim() != labels.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs labels {:?}",
            predictions.dim(),
            labels.dim()
        )));
    }
    if element_names.len() != predictions.ncols() {
        return Err(Error::Shape("element names do not match columns".into()));
    }
    let elements: Vec<ElementScore> = (0..predictions.ncols())
        .into_par_iter()
        .map(|j| {
            let s = predictions.column(j).to_vec();
            let l = labels.column(j).to_vec();
            let a = auc(&s, &l).ok();
            let ap = if options.with_ap { mean_average_precision(&s, &l).ok() } else { None };
            let baseline = if options.baseline_trials > 0 {
                random_baseline(&l, options.baseline_trials, options.seed.wrapping_add((j as u64) << 32))
                    .ok()
            } else {
                None
            };
            ElementScore { name: element_names[j].clone(), auc: a, ap, baseline }
        })
        .collect();
    let evaluable: Vec<f64> = elements.iter().filter_map(|e| e.auc).collect();
    let curve = if evaluable.len() >= options.group_size {
        auc_at_k_curve(&evaluable, options.group_size)?
    } else {
        Vec::new()
    };
    Ok(EvalReport {
        method: String::new(),
        g_provenance: String::new(),
        split: String::new(),
        elements,
        group_size: options.group_size,
        curve,
    })
}

impl EvalReport {
    /// Mean AUC over evaluable elements.
    pub fn mean_auc(&self) -> Option<f64> {
        let v: Vec<f64> = self.elements.iter().filter_map(|e| e.auc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn not_evaluable(&self) -> Vec<&str> {
        self.elements.iter().filter(|e| e.auc.is_none()).map(|e| e.name.as_str()).collect()
    }

    /// `element,auc,ap,random_mean,random_std`; missing values are written as `NA`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        writeln!(w, "element,auc,ap,random_mean,random_std")?;
        for e in &self.elements {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.name,
                cell(e.auc),
                cell(e.ap),
                cell(e.baseline.map(|b| b.mean)),
                cell(e.baseline.map(|b| b.std))
            )?;
        }
        Ok(())
    }

    /// `group_index,auc_at_k`
    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "group_index,auc_at_k")?;
        for (i, v) in self.curve.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        Ok(())
    }
}
