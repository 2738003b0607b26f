//! The non-neural proxy methods: sparse coding by LARS-lasso, ESZSL and the
//! PCA proxy.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::domain::{CategoryAttributeMatrix, FeatureDataset};
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, solve_least_squares, solve_nonsingular, svd_thin, Matrix};

/// Attribute vector whose image under `Gᵗ` best explains the style scores:
/// `argmin ½‖f_S − Gᵗ·a‖² + λ_s‖a‖₁`.
pub fn sparse_code_attributes(
    style_scores: ArrayView1<f64>,
    g: &CategoryAttributeMatrix,
    lambda_s: f64,
) -> Result<Array1<f64>> {
    if style_scores.len() != g.n() {
        return Err(Error::Shape(format!(
            "{} style scores for a G with {} styles",
            style_scores.len(),
            g.n()
        )));
    }
    lasso_lars(g.g.t(), style_scores, lambda_s)
}

/// Lasso by least angle regression with the lasso modification (variables
/// whose coefficient would cross zero leave the active set).
///
/// Solves `argmin ½‖y − X·β‖² + λ‖β‖₁` for `x` of shape observations × features.
pub fn lasso_lars(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    let (n_obs, p) = x.dim();
    if y.len() != n_obs {
        return Err(Error::Shape(format!("{n_obs} rows but {} targets", y.len())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    ensure_finite(x, "design")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("targets have non-finite entries".into()));
    }

    let mut beta = Array1::<f64>::zeros(p);
    let mut active: Vec<usize> = Vec::new();
    let mut is_active = vec![false; p];
    let c0 = x.t().dot(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = 1e-13 * (1.0 + c0);

    for _ in 0..(8 * p + 8) {
        let residual = &y - &x.dot(&beta);
        let corr = x.t().dot(&residual);
        let big_c = corr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big_c <= lambda + tiny {
            break;
        }
        if active.is_empty() {
            let j = (0..p)
                .max_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs()).then(b.cmp(&a)))
                .expect("p > 0");
            active.push(j);
            is_active[j] = true;
        }

        let signs = Array1::from_iter(active.iter().map(|&j| corr[j].signum()));
        let xa = x.select(Axis(1), &active);
        let gram = xa.t().dot(&xa);
        let delta = solve_least_squares(gram.view(), signs.view().insert_axis(Axis(1)), 0.0)?
            .remove_axis(Axis(1));
        let direction = xa.dot(&delta);
        let a = x.t().dot(&direction);

        let mut gamma = big_c - lambda;
        let mut enter = None;
        let mut drop = None;
        if active.len() < n_obs {
            for j in (0..p).filter(|&j| !is_active[j]) {
                for cand in [(big_c - corr[j]) / (1.0 - a[j]), (big_c + corr[j]) / (1.0 + a[j])] {
                    if cand.is_finite() && cand > tiny && cand < gamma {
                        gamma = cand;
                        enter = Some(j);
                    }
                }
            }
        }
        for (idx, &j) in active.iter().enumerate() {
            if delta[idx] != 0.0 {
                let cand = -beta[j] / delta[idx];
                if cand.is_finite() && cand > tiny && cand < gamma {
                    gamma = cand;
                    drop = Some(idx);
                    enter = None;
                }
            }
        }

        for (idx, &j) in active.iter().enumerate() {
            beta[j] += gamma * delta[idx];
        }
        if let Some(idx) = drop {
            let j = active.remove(idx);
            is_active[j] = false;
            beta[j] = 0.0;
        } else if let Some(j) = enter {
            active.push(j);
            is_active[j] = true;
        } else {
            break;
        }
    }
    Ok(beta)
}

/// ESZSL map from features to attributes.
#[derive(Debug, Clone)]
pub struct EszslModel {
    /// d × m
    pub q: Matrix,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// One-vs-rest {−1, +1} label matrix, k × n.
pub fn signed_one_hot(labels: &[usize], n: usize) -> Matrix {
    let mut y = Matrix::from_elem((labels.len(), n), -1.0);
    for (r, &l) in labels.iter().enumerate() {
        y[[r, l]] = 1.0;
    }
    y
}

fn check_labels(data: &FeatureDataset, g: &CategoryAttributeMatrix) -> Result<()> {
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= g.n()) {
        return Err(Error::Index { index: bad, len: g.n() });
    }
    Ok(())
}

/// `Q = (E·Eᵗ + λ₁I)⁻¹ · E·Y·Gᵗ · (G·Gᵗ + λ₂I)⁻¹` with `E` the d×k feature matrix.
pub fn fit_eszsl(
    data: &FeatureDataset,
    g: &CategoryAttributeMatrix,
    lambda1: f64,
    lambda2: f64,
) -> Result<EszslModel> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::InvalidConfig("ESZSL regularizers must be >= 0".into()));
    }
    check_labels(data, g)?;
    let x = &data.features;
    let d = x.ncols();
    let m = g.m();
    let y = signed_one_hot(&data.labels, g.n());

    let feat_gram = x.t().dot(x) + Matrix::eye(d) * lambda1;
    let attr_gram = g.g.dot(&g.g.t()) + Matrix::eye(m) * lambda2;
    let middle = x.t().dot(&y).dot(&g.g.t());
    let left = solve_nonsingular(feat_gram.view(), middle.view(), "E·Eᵗ + λ₁I")?;
    let q = solve_nonsingular(attr_gram.view(), left.t(), "G·Gᵗ + λ₂I")?.reversed_axes();
    Ok(EszslModel { q, lambda1, lambda2 })
}

impl EszslModel {
    pub fn predict_batch(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        if features.ncols() != self.q.nrows() {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.q.nrows()
            )));
        }
        Ok(features.dot(&self.q))
    }
}

/// `i_a = Qᵗ·e`
pub fn predict_eszsl(model: &EszslModel, feature: ArrayView1<f64>) -> Result<Array1<f64>> {
    if feature.len() != model.q.nrows() {
        return Err(Error::Shape(format!(
            "feature has {} values, model expects {}",
            feature.len(),
            model.q.nrows()
        )));
    }
    Ok(model.q.t().dot(&feature))
}

/// PCA of the features followed by a least-squares style encoding of the
/// principal coordinates.
#[derive(Debug, Clone)]
pub struct PcaProxyModel {
    pub mean: Array1<f64>,
    /// p × d, orthonormal rows.
    pub projection: Matrix,
    /// p × n
    pub style_encoder: Matrix,
    pub retained_variance: f64,
}

pub fn fit_pca_proxy(data: &FeatureDataset, variance_target: f64) -> Result<PcaProxyModel> {
    let k = data.len();
    if k < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 samples, got {k}")));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "variance target must be in (0, 1], got {variance_target}"
        )));
    }
    let mean = data.features.mean_axis(Axis(0)).expect("k >= 2");
    let centered = &data.features - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (k as f64 - 1.0);
    let total: f64 = cov.diag().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateInput("features have zero variance".into()));
    }
    let f = svd_thin(cov.view())?;
    let goal = variance_target * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut p = f.rank();
    for (i, s) in f.sigma.iter().enumerate() {
        acc += s;
        if acc >= goal {
            p = i + 1;
            break;
        }
    }
    let retained = f.sigma.iter().take(p).sum::<f64>() / total;
    let projection = f.u.slice(ndarray::s![.., ..p]).t().to_owned();
    let coords = centered.dot(&projection.t());
    let mut onehot = Matrix::zeros((k, data.styles.len()));
    for (r, &l) in data.labels.iter().enumerate() {
        onehot[[r, l]] = 1.0;
    }
    let style_encoder = solve_least_squares(coords.view(), onehot.view(), 0.0)?;
    Ok(PcaProxyModel { mean, projection, style_encoder, retained_variance: retained })
}

impl PcaProxyModel {
    pub fn components(&self) -> usize {
        self.projection.nrows()
    }

    /// Style scores `vᵗ·Z` for every row.
    pub fn style_scores(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        if features.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.mean.len()
            )));
        }
        let centered = &features - &self.mean.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.projection.t()).dot(&self.style_encoder))
    }

    pub fn predict_batch(&self, g: &CategoryAttributeMatrix, features: ArrayView2<f64>) -> Result<Matrix> {
        if g.n() != self.style_encoder.ncols() {
            return Err(Error::Shape(format!(
                "G has {} styles, model encodes {}",
                g.n(),
                self.style_encoder.ncols()
            )));
        }
        Ok(self.style_scores(features)?.dot(&g.g.t()))
    }
}

/// `i_aᵗ = vᵗ·Z·Gᵗ` with `v = P·(e − m̄)`.
pub fn predict_pca_proxy(
    model: &PcaProxyModel,
    g: &CategoryAttributeMatrix,
    feature: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let row = feature.insert_axis(Axis(0));
    Ok(model.predict_batch(g, row)?.remove_axis(Axis(0)))
}
