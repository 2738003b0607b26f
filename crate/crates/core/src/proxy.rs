//! Neural proxy methods (deep-proxy with a fixed G* head, per-attribute
//! logistic regression), the style classifier feeding sparse coding, and
//! validation-based hyperparameter selection.

use ndarray::{Array1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::domain::{CategoryAttributeMatrix, FeatureDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::gmatrix::{build_gstar, Variant};
use crate::linalg::Matrix;
use crate::linear::{sparse_code_attributes, EszslModel, PcaProxyModel};
use crate::nn::{
    forward_pass, softmax_rows, train, Activation, Checkpoint, DenseLayer, Init, MlpModel, ModelKind, TrainConfig,
    TrainReport, TrainTarget,
};

/// Stream offset between weight initialisation and batch sampling.
const INIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn check_styles(data: &FeatureDataset, g: &CategoryAttributeMatrix) -> Result<()> {
    if data.styles.names() != g.styles.names() {
        return Err(Error::Shape(format!(
            "dataset has {} styles, G has {}; style vocabularies must match",
            data.styles.len(),
            g.n()
        )));
    }
    if data.is_empty() {
        return Err(Error::DegenerateInput("empty training set".into()));
    }
    Ok(())
}

fn widths(hidden: &[usize], last: (usize, Activation)) -> Vec<(usize, Activation)> {
    hidden.iter().map(|&h| (h, Activation::Relu)).chain(std::iter::once(last)).collect()
}

fn init_rng(config: &TrainConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed ^ INIT_STREAM)
}

#[derive(Debug, Clone)]
pub struct DeepProxyModel {
    pub mlp: MlpModel,
    pub variant: Variant,
    pub config: TrainConfig,
    pub report: Option<TrainReport>,
}

pub fn train_deep_proxy(
    data: &FeatureDataset,
    g: &CategoryAttributeMatrix,
    variant: Variant,
    config: &TrainConfig,
) -> Result<DeepProxyModel> {
    config.validate()?;
    check_styles(data, g)?;
    let gstar = build_gstar(g, variant, config.pre_shift)?;
    let mut mlp = MlpModel::new(
        data.dim(),
        &widths(&config.hidden, (g.m(), Activation::Linear)),
        Some(gstar),
        Init::Scaled,
        &mut init_rng(config),
    )?;
    let report = train(&mut mlp, data.features.view(), TrainTarget::Classes(&data.labels), config)?;
    Ok(DeepProxyModel { mlp, variant, config: config.clone(), report: Some(report) })
}

impl DeepProxyModel {
    /// f_A: the linear attribute layer feeding G*.
    pub fn predict_attributes(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        Ok(forward_pass(&self.mlp, features)?.attributes().clone())
    }

    /// `f_A · G*`.
    pub fn style_logits(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        Ok(forward_pass(&self.mlp, features)?.output)
    }

    pub fn predict_styles(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        Ok(softmax_rows(self.style_logits(features)?.view()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::DeepProxy,
            model: self.mlp.clone(),
            metadata: vec![("lambda".into(), self.config.lambda)],
        }
    }
}

/// Per-style sigmoid targets (m×n) from G. Matrices inside [−1, 1] map by
/// `(v + 1) / 2`; otherwise positives scale into [0.5, 1] by the largest
/// positive and negatives into [0, 0.5] by the largest magnitude negative.
/// Zero always maps to 0.5.
pub fn logistic_targets(g: &Matrix) -> Matrix {
    if g.iter().all(|v| (-1.0..=1.0).contains(v)) {
        return g.mapv(|v| (v + 1.0) / 2.0);
    }
    let max_pos = g.iter().copied().fold(0.0f64, f64::max);
    let max_neg = g.iter().copied().fold(0.0f64, |m, v| m.max(-v));
    g.mapv(|v| {
        if v > 0.0 {
            0.5 + 0.5 * v / max_pos
        } else if v < 0.0 {
            0.5 + 0.5 * v / max_neg
        } else {
            0.5
        }
    })
}

#[derive(Debug, Clone)]
pub struct LogisticProxyModel {
    pub mlp: MlpModel,
    /// m×n targets in [0, 1].
    pub targets: Matrix,
    pub config: TrainConfig,
    pub report: Option<TrainReport>,
}

pub fn train_logistic(
    data: &FeatureDataset,
    g: &CategoryAttributeMatrix,
    config: &TrainConfig,
) -> Result<LogisticProxyModel> {
    config.validate()?;
    check_styles(data, g)?;
    let targets = logistic_targets(&g.g);
    // Row r of the per-sample targets is the target column of its style.
    let per_sample = targets.t().select(Axis(0), &data.labels);
    let mut mlp = MlpModel::new(
        data.dim(),
        &widths(&config.hidden, (g.m(), Activation::Sigmoid)),
        None,
        Init::Scaled,
        &mut init_rng(config),
    )?;
    let report = train(&mut mlp, data.features.view(), TrainTarget::Probabilities(per_sample.view()), config)?;
    Ok(LogisticProxyModel { mlp, targets, config: config.clone(), report: Some(report) })
}

impl LogisticProxyModel {
    pub fn predict_attributes(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        Ok(forward_pass(&self.mlp, features)?.output)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Logistic,
            model: self.mlp.clone(),
            metadata: vec![("lambda_l".into(), self.config.lambda_l)],
        }
    }
}

/// Softmax style classifier whose scores feed sparse coding.
#[derive(Debug, Clone)]
pub struct StyleClassifier {
    pub mlp: MlpModel,
    pub config: TrainConfig,
}

pub fn train_style_classifier(data: &FeatureDataset, config: &TrainConfig) -> Result<StyleClassifier> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::DegenerateInput("empty training set".into()));
    }
    let mut mlp = MlpModel::new(
        data.dim(),
        &widths(&config.hidden, (data.styles.len(), Activation::Softmax)),
        None,
        Init::Scaled,
        &mut init_rng(config),
    )?;
    train(&mut mlp, data.features.view(), TrainTarget::Classes(&data.labels), config)?;
    Ok(StyleClassifier { mlp, config: config.clone() })
}

impl StyleClassifier {
    pub fn predict_styles(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        Ok(forward_pass(&self.mlp, features)?.output)
    }
}

/// Sparse-codes every row of a k×n score matrix into k×m attributes.
pub fn sparse_code_batch(scores: ArrayView2<f64>, g: &CategoryAttributeMatrix, lambda_s: f64) -> Result<Matrix> {
    if scores.ncols() != g.n() {
        return Err(Error::Shape(format!("scores have {} styles, G has {}", scores.ncols(), g.n())));
    }
    let rows: Vec<Array1<f64>> = (0..scores.nrows())
        .into_par_iter()
        .map(|i| sparse_code_attributes(scores.row(i), g, lambda_s))
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros((scores.nrows(), g.m()));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// ESZSL as a single linear layer: `W = Qᵗ`.
pub fn eszsl_checkpoint(model: &EszslModel) -> Checkpoint {
    let w = model.q.t().to_owned();
    let m = w.nrows();
    Checkpoint {
        kind: ModelKind::EszslLinear,
        model: MlpModel {
            layers: vec![DenseLayer { weights: w, bias: Array1::zeros(m), activation: Activation::Linear }],
            terminal: None,
        },
        metadata: vec![("lambda1".into(), model.lambda1), ("lambda2".into(), model.lambda2)],
    }
}

/// PCA-proxy folded into one affine layer: `W = G·Zᵗ·P`, `b = −W·m̄`.
pub fn pca_checkpoint(model: &PcaProxyModel, g: &CategoryAttributeMatrix) -> Result<Checkpoint> {
    if model.style_encoder.ncols() != g.n() {
        return Err(Error::Shape("PCA style encoder and G disagree on n".into()));
    }
    let w = g.g.dot(&model.style_encoder.t()).dot(&model.projection);
    let bias = -w.dot(&model.mean);
    Ok(Checkpoint {
        kind: ModelKind::PcaLinear,
        model: MlpModel {
            layers: vec![DenseLayer { weights: w, bias, activation: Activation::Linear }],
            terminal: None,
        },
        metadata: vec![
            ("retained_variance".into(), model.retained_variance),
            ("components".into(), model.components() as f64),
        ],
    })
}

impl Checkpoint {
    pub fn metadata_value(&self, key: &str) -> Option<f64> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Attribute scores (k×m) for attribute models; style scores for a style classifier.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        let acts = forward_pass(&self.model, features)?;
        Ok(match self.kind {
            ModelKind::DeepProxy => acts.attributes().clone(),
            _ => acts.output,
        })
    }
}

/// Mean AUC of k×m predictions against binary labels; single-class elements are skipped.
pub fn validation_auc(predictions: ArrayView2<f64>, labels: ArrayView2<bool>) -> Result<f64> {
    let names: Vec<String> = (0..predictions.ncols()).map(|i| i.to_string()).collect();
    let opts = EvalOptions { baseline_trials: 0, with_ap: false, group_size: 1, seed: 0 };
    let report = evaluate(predictions, labels, &names, &opts)?;
    report
        .mean_auc()
        .ok_or_else(|| Error::DegenerateInput("no evaluable element in the validation split".into()))
}

/// Outcome of a hyperparameter sweep.
#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub best: T,
    pub best_index: usize,
    /// Validation score of each candidate, in candidate order.
    pub scores: Vec<f64>,
}

/// Fits every candidate and keeps the one with the highest validation score;
/// the earliest candidate wins ties.
pub fn select_by_validation<C, T>(
    candidates: &[C],
    mut fit: impl FnMut(&C) -> Result<T>,
    mut score: impl FnMut(&T) -> Result<f64>,
) -> Result<Selection<T>> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("empty hyperparameter grid".into()));
    }
    let mut best: Option<(usize, T, f64)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let model = fit(c)?;
        let s = score(&model)?;
        scores.push(s);
        if best.as_ref().is_none_or(|b| s > b.2) {
            best = Some((i, model, s));
        }
    }
    let (best_index, best, _) = best.expect("non-empty grid");
    Ok(Selection { best, best_index, scores })
}

/// The λ values swept for deep-proxy.
pub const DEEP_PROXY_LAMBDAS: [f64; 4] = [1e-4, 5e-4, 1e-3, 5e-3];
/// The λ_L values swept for logistic regression.
pub const LOGISTIC_LAMBDAS: [f64; 4] = [0.0, 1e-3, 1e-4, 1e-5];
/// The λ_s values swept for sparse coding.
pub const SPARSE_LAMBDAS: [f64; 9] = [0.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 0.15, 0.3, 0.45];

/// `10^a` for `a = −3..=3`, the ESZSL grid for each of λ₁ and λ₂.
pub fn eszsl_grid() -> Vec<(f64, f64)> {
    let powers: Vec<f64> = (-3..=3).map(|a| 10f64.powi(a)).collect();
    powers.iter().flat_map(|&a| powers.iter().map(move |&b| (a, b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Provenance, Vocabulary};
    use crate::linalg::Matrix;
    use crate::linear::{fit_eszsl, fit_pca_proxy};
    use ndarray::array;
    use rand::Rng;

    fn toy(seed: u64, k: usize, d: usize, n: usize, m: usize) -> (FeatureDataset, CategoryAttributeMatrix) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = Matrix::from_shape_fn((m, n), |_| r.random_range(-1.0..1.0));
        let centers = Matrix::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..k).map(|i| i % n).collect();
        let x = Matrix::from_shape_fn((k, d), |(i, j)| centers[[labels[i], j]] + 0.3 * r.random_range(-1.0..1.0));
        let styles = Vocabulary::numbered("s", n).unwrap();
        let g = CategoryAttributeMatrix::new(g, Vocabulary::numbered("e", m).unwrap(), styles.clone(), Provenance::Synthetic)
            .unwrap();
        (FeatureDataset::new(x, labels, styles).unwrap(), g)
    }

    fn small_config(steps: usize) -> TrainConfig {
        TrainConfig { steps, batch: 16, lr: 0.02, hidden: vec![16], seed: 3, ..Default::default() }
    }

    #[test]
    fn logistic_target_rules() {
        assert_eq!(logistic_targets(&array![[1.0, 1.0]]), array![[1.0, 1.0]]);
        assert_eq!(logistic_targets(&array![[0.0, -1.0]]), array![[0.5, 0.0]]);
        let wide = logistic_targets(&array![[4.0, 2.0], [0.0, -0.5], [-0.25, 0.0]]);
        assert_eq!(wide, array![[1.0, 0.75], [0.5, 0.0], [0.25, 0.5]]);
    }

    #[test]
    fn logistic_targets_are_monotone() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        for scale in [1.0, 3.0] {
            let g = Matrix::from_shape_fn((6, 5), |_| scale * r.random_range(-1.0..1.0));
            let t = logistic_targets(&g);
            assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
            for (a, ta) in g.iter().zip(t.iter()) {
                for (b, tb) in g.iter().zip(t.iter()) {
                    if a < b {
                        assert!(ta <= tb);
                    }
                }
            }
        }
    }

    #[test]
    fn deep_proxy_architectural_identity() {
        let (data, g) = toy(1, 60, 5, 3, 6);
        for variant in [Variant::Plain, Variant::Svd, Variant::Offset] {
            let model = train_deep_proxy(&data, &g, variant, &small_config(40)).unwrap();
            let fa = model.predict_attributes(data.features.view()).unwrap();
            let logits = model.style_logits(data.features.view()).unwrap();
            assert_eq!(fa.dot(model.mlp.terminal.as_ref().unwrap().matrix()), logits);
            let probs = model.predict_styles(data.features.view()).unwrap();
            assert_eq!(probs, softmax_rows(logits.view()));
            for row in probs.rows() {
                assert!((row.sum() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn svd_head_is_untouched_and_offset_stays_nonnegative() {
        let (data, g) = toy(2, 60, 5, 3, 6);
        let fresh = build_gstar(&g, Variant::Svd, 0.0).unwrap();
        let model = train_deep_proxy(&data, &g, Variant::Svd, &small_config(60)).unwrap();
        assert_eq!(model.mlp.terminal.as_ref().unwrap().matrix(), fresh.matrix());
        let off = train_deep_proxy(&data, &g, Variant::Offset, &small_config(60)).unwrap();
        let t = off.mlp.terminal.as_ref().unwrap();
        assert!(t.offset().unwrap().iter().all(|&o| o >= 0.0));
        let rebuilt = crate::gmatrix::GStar::from_parts(
            Variant::Offset,
            t.matrix().clone(),
            t.source().clone(),
            t.pre_shift(),
            t.offset().cloned(),
        )
        .unwrap();
        let mut replay = build_gstar(&g, Variant::Offset, 1.0).unwrap();
        replay.set_offset(t.offset().unwrap().clone()).unwrap();
        assert_eq!(replay.matrix(), rebuilt.matrix());
    }

    #[test]
    fn rank_deficient_g_is_rejected() {
        let (data, mut g) = toy(3, 30, 4, 3, 5);
        let c0 = g.g.column(0).to_owned();
        g.g.column_mut(2).assign(&c0);
        assert!(matches!(
            train_deep_proxy(&data, &g, Variant::Svd, &small_config(5)),
            Err(Error::Rank { .. })
        ));
    }

    #[test]
    fn style_accuracy_beats_chance() {
        let (data, g) = toy(4, 120, 6, 4, 8);
        let model = train_deep_proxy(&data, &g, Variant::Svd, &small_config(600)).unwrap();
        let probs = model.predict_styles(data.features.view()).unwrap();
        let correct = probs
            .rows()
            .into_iter()
            .zip(&data.labels)
            .filter(|(row, &l)| {
                let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                best == l
            })
            .count();
        assert!(correct as f64 / 120.0 > 0.75, "accuracy {correct}/120");
    }

    #[test]
    fn activation_penalty_shrinks_attributes() {
        let (data, g) = toy(5, 80, 5, 3, 6);
        let l1 = |lambda: f64| {
            let cfg = TrainConfig { lambda, ..small_config(400) };
            let m = train_deep_proxy(&data, &g, Variant::Svd, &cfg).unwrap();
            m.predict_attributes(data.features.view()).unwrap().mapv(f64::abs).sum() / 80.0
        };
        assert!(l1(0.5) < l1(0.0));
    }

    #[test]
    fn logistic_outputs_in_open_interval_and_batch_equals_loop() {
        let (data, g) = toy(6, 50, 4, 3, 5);
        let model = train_logistic(&data, &g, &small_config(100)).unwrap();
        let batch = model.predict_attributes(data.features.view()).unwrap();
        assert!(batch.iter().all(|&v| v > 0.0 && v < 1.0));
        for i in 0..5 {
            let one = model.predict_attributes(data.features.slice(ndarray::s![i..i + 1, ..])).unwrap();
            for (a, b) in one.row(0).iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let deep = train_deep_proxy(&data, &g, Variant::Plain, &small_config(50)).unwrap();
        let batch = deep.predict_attributes(data.features.view()).unwrap();
        let one = deep.predict_attributes(data.features.slice(ndarray::s![3..4, ..])).unwrap();
        for (a, b) in one.row(0).iter().zip(batch.row(3)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_checkpoints_reproduce_predictions() {
        let (data, g) = toy(7, 40, 6, 3, 5);
        let es = fit_eszsl(&data, &g, 0.1, 0.1).unwrap();
        let ck = eszsl_checkpoint(&es);
        let direct = es.predict_batch(data.features.view()).unwrap();
        let via = ck.predict(data.features.view()).unwrap();
        assert!((&direct - &via).iter().all(|v| v.abs() < 1e-10));
        let pca = fit_pca_proxy(&data, 0.95).unwrap();
        let ck = pca_checkpoint(&pca, &g).unwrap();
        let direct = pca.predict_batch(&g, data.features.view()).unwrap();
        let via = ck.predict(data.features.view()).unwrap();
        assert!((&direct - &via).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn sparse_batch_matches_rows() {
        let (_, g) = toy(8, 10, 3, 4, 7);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let s = Matrix::from_shape_fn((5, 4), |_| r.random_range(0.0..1.0));
        let batch = sparse_code_batch(s.view(), &g, 0.01).unwrap();
        for i in 0..5 {
            assert_eq!(batch.row(i), sparse_code_attributes(s.row(i), &g, 0.01).unwrap());
        }
    }

    #[test]
    fn selection_keeps_best_and_first_on_ties() {
        let sel = select_by_validation(&[1.0, 3.0, 3.0, 2.0], |&c| Ok(c), |&m| Ok(m)).unwrap();
        assert_eq!((sel.best_index, sel.best), (1, 3.0));
        assert_eq!(sel.scores, vec![1.0, 3.0, 3.0, 2.0]);
        assert!(select_by_validation(&[] as &[f64], |&c| Ok(c), |&m| Ok(m)).is_err());
        assert_eq!(eszsl_grid().len(), 49);
    }
}
