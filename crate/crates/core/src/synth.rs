//! Synthetic worlds with known latent attributes, used as a ground-truth
//! oracle for every proxy method.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::io::{write_features, write_g_csv, write_ground_truth_csv, write_labels, write_vocabulary};
use crate::domain::{CategoryAttributeMatrix, FeatureDataset, GroundTruthSet, Provenance, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::linalg::{frobenius_norm, Matrix};
use crate::nn::softmax_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// `tanh(A·a + c)`
    AffineTanh,
    /// `A·a + c`
    Affine,
    /// Features are the attributes themselves; needs `d == m`.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    /// Standard deviation of Gaussian feature noise.
    pub noise: f64,
    pub seed: u64,
    /// Share of each G entry drawn from a per-element common factor, in [0, 1).
    pub correlation: f64,
    /// Standard deviation of a sample's attributes around its style prototype.
    pub spread: f64,
    pub feature_map: FeatureMap,
    /// Elements whose G row is forced to zero for every style.
    pub zero_rows: Vec<usize>,
}

impl WorldConfig {
    pub fn new(m: usize, n: usize, k: usize, d: usize, noise: f64, seed: u64) -> Self {
        WorldConfig {
            m,
            n,
            k,
            d,
            noise,
            seed,
            correlation: 0.3,
            spread: 0.5,
            feature_map: FeatureMap::AffineTanh,
            zero_rows: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidConfig(s));
        if self.n < 2 || self.m < self.n {
            return bad(format!("need m >= n >= 2, got m={} n={}", self.m, self.n));
        }
        if self.k == 0 || self.d == 0 {
            return bad("k and d must be positive".into());
        }
        if !(self.noise >= 0.0 && self.spread >= 0.0) || !self.noise.is_finite() || !self.spread.is_finite() {
            return bad("noise and spread must be finite and nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return bad("correlation must be in [0, 1)".into());
        }
        if self.feature_map == FeatureMap::Identity && self.d != self.m {
            return bad(format!("identity map needs d == m, got d={} m={}", self.d, self.m));
        }
        if let Some(&r) = self.zero_rows.iter().find(|&&r| r >= self.m) {
            return bad(format!("zero row {r} out of range for m={}", self.m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    /// m×n
    pub g_true: Matrix,
    /// k×m
    pub attributes: Matrix,
    /// k×d
    pub features: Matrix,
    /// `argmax_s aᵗ·G_true[:, s]` per sample.
    pub labels: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate_world(m: usize, n: usize, k: usize, d: usize, noise: f64, seed: u64) -> Result<SyntheticWorld> {
    generate_world_with(&WorldConfig::new(m, n, k, d, noise, seed))
}

pub fn generate_world_with(config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let WorldConfig { m, n, k, d, .. } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rho = config.correlation;
    let common: Vec<f64> = (0..m).map(|_| gaussian(&mut rng)).collect();
    let mut g_true = Matrix::from_shape_fn((m, n), |(e, _)| {
        rho.sqrt() * common[e] + (1.0 - rho).sqrt() * gaussian(&mut rng)
    });
    for &r in &config.zero_rows {
        g_true.row_mut(r).fill(0.0);
    }
    let mut attributes = Matrix::zeros((k, m));
    for i in 0..k {
        let s = rng.random_range(0..n);
        for e in 0..m {
            attributes[[i, e]] = g_true[[e, s]] + config.spread * gaussian(&mut rng);
        }
    }
    let scores = attributes.dot(&g_true);
    let labels = scores
        .rows()
        .into_iter()
        .map(|row| {
            // First maximum wins.
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut features = match config.feature_map {
        FeatureMap::Identity => attributes.clone(),
        map => {
            let scale = 1.0 / (m as f64).sqrt();
            let a = Matrix::from_shape_fn((d, m), |_| scale * gaussian(&mut rng));
            let c = Array1::from_shape_fn(d, |_| 0.1 * gaussian(&mut rng));
            let z = attributes.dot(&a.t()) + &c;
            if map == FeatureMap::AffineTanh {
                z.mapv(f64::tanh)
            } else {
                z
            }
        }
    };
    if config.noise > 0.0 {
        features.mapv_inplace(|v| v + config.noise * gaussian(&mut rng));
    }
    Ok(SyntheticWorld { config: config.clone(), g_true, attributes, features, labels })
}

impl SyntheticWorld {
    pub fn style_vocabulary(&self) -> Vocabulary {
        Vocabulary::numbered("style", self.config.n).expect("n >= 2")
    }

    pub fn element_vocabulary(&self) -> Vocabulary {
        Vocabulary::numbered("element", self.config.m).expect("m >= 1")
    }

    pub fn dataset(&self) -> FeatureDataset {
        FeatureDataset::new(self.features.clone(), self.labels.clone(), self.style_vocabulary())
            .expect("generated data is consistent")
    }

    pub fn category_matrix(&self) -> CategoryAttributeMatrix {
        CategoryAttributeMatrix::new(
            self.g_true.clone(),
            self.element_vocabulary(),
            self.style_vocabulary(),
            Provenance::Synthetic,
        )
        .expect("generated G is consistent")
    }

    /// Latent attributes binarised at each element's median (above → +1, else −1).
    pub fn ground_truth(&self) -> GroundTruthSet {
        let bin = median_binarize(self.attributes.view());
        GroundTruthSet::new(
            (0..self.config.k).map(|i| format!("x{i}")).collect(),
            self.labels.clone(),
            self.style_vocabulary(),
            self.element_vocabulary(),
            bin.mapv(|b| if b { 1 } else { -1 }),
        )
        .expect("generated ground truth is consistent")
    }

    /// `softmax(aᵗ·G_true / temperature)` for every sample: the style scores an
    /// ideal classifier would emit.
    pub fn oracle_style_scores(&self, temperature: f64) -> Result<Matrix> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(softmax_rows((self.attributes.dot(&self.g_true) / temperature).view()))
    }

    /// Restricts the world to the given sample rows.
    pub fn subset(&self, rows: &[usize]) -> SyntheticWorld {
        let mut config = self.config.clone();
        config.k = rows.len();
        SyntheticWorld {
            config,
            g_true: self.g_true.clone(),
            attributes: self.attributes.select(Axis(0), rows),
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Writes `features.pxy`, `labels.txt`, `styles.txt`, `elements.txt`,
    /// `g.csv` and `ground_truth.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let styles = self.style_vocabulary();
        let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        write_features(create("features.pxy")?, &self.features)?;
        write_labels(create("labels.txt")?, &self.labels, &styles)?;
        write_vocabulary(create("styles.txt")?, &styles)?;
        write_vocabulary(create("elements.txt")?, &self.element_vocabulary())?;
        write_g_csv(create("g.csv")?, &self.category_matrix())?;
        write_ground_truth_csv(create("ground_truth.csv")?, &self.ground_truth())?;
        Ok(())
    }
}

/// Per column: `true` where the value exceeds the column median.
pub fn median_binarize(values: ArrayView2<f64>) -> ndarray::Array2<bool> {
    let mut out = ndarray::Array2::from_elem(values.dim(), false);
    for (j, col) in values.columns().into_iter().enumerate() {
        let mut sorted = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        let len = sorted.len();
        let median = if len % 2 == 1 { sorted[len / 2] } else { 0.5 * (sorted[len / 2 - 1] + sorted[len / 2]) };
        for (i, &v) in col.iter().enumerate() {
            out[[i, j]] = v > median;
        }
    }
    out
}

/// Per-element AUC of `predicted` (k×m) against the median-binarised latents.
pub fn recovery_score(world: &SyntheticWorld, predicted: ArrayView2<f64>) -> Result<Vec<f64>> {
    if predicted.dim() != world.attributes.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs latent attributes {:?}",
            predicted.dim(),
            world.attributes.dim()
        )));
    }
    let truth = median_binarize(world.attributes.view());
    (0..predicted.ncols())
        .map(|j| auc(&predicted.column(j).to_vec(), &truth.column(j).to_vec()))
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Adds Gaussian noise whose Frobenius norm is `magnitude·‖G‖_F`.
pub fn perturb_g(g: &CategoryAttributeMatrix, magnitude: f64, seed: u64) -> Result<CategoryAttributeMatrix> {
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(Error::InvalidConfig("magnitude must be finite and nonnegative".into()));
    }
    let mut out = g.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Matrix::from_shape_fn(g.g.dim(), |_| gaussian(&mut rng));
    let scale = magnitude * frobenius_norm(g.g.view()) / frobenius_norm(raw.view());
    out.g = &g.g + &(raw * scale);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;

    #[test]
    fn invalid_configs_rejected() {
        assert!(matches!(generate_world(3, 4, 10, 5, 0.0, 1), Err(Error::InvalidConfig(_))));
        let mut c = WorldConfig::new(5, 3, 10, 4, 0.0, 1);
        c.feature_map = FeatureMap::Identity;
        assert!(generate_world_with(&c).is_err());
    }

    #[test]
    fn identity_world_is_invertible() {
        let mut c = WorldConfig::new(6, 3, 50, 6, 0.0, 2);
        c.feature_map = FeatureMap::Identity;
        let w = generate_world_with(&c).unwrap();
        assert_eq!(w.features, w.attributes);
        assert!(recovery_score(&w, w.features.view()).unwrap().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn same_seed_same_world() {
        assert_eq!(generate_world(8, 4, 100, 10, 0.1, 9).unwrap(), generate_world(8, 4, 100, 10, 0.1, 9).unwrap());
        assert_ne!(generate_world(8, 4, 100, 10, 0.1, 9).unwrap(), generate_world(8, 4, 100, 10, 0.1, 10).unwrap());
    }

    #[test]
    fn labels_match_brute_force_argmax() {
        let w = generate_world(7, 5, 300, 9, 0.2, 4).unwrap();
        for i in 0..300 {
            let mut best = (0, f64::NEG_INFINITY);
            for s in 0..5 {
                let mut dot = 0.0;
                for e in 0..7 {
                    dot += w.attributes[[i, e]] * w.g_true[[e, s]];
                }
                if dot > best.1 {
                    best = (s, dot);
                }
            }
            assert_eq!(w.labels[i], best.0);
        }
    }

    #[test]
    fn recovery_oracle_and_anti_oracle() {
        let w = generate_world(6, 3, 200, 8, 0.1, 5).unwrap();
        assert!(recovery_score(&w, w.attributes.view()).unwrap().iter().all(|&a| a == 1.0));
        let neg = w.attributes.mapv(|v| -v);
        assert!(recovery_score(&w, neg.view()).unwrap().iter().all(|&a| a == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let means: Vec<f64> = (0..10)
            .map(|_| {
                let p = Matrix::from_shape_fn((200, 6), |_| rng.random_range(0.0..1.0));
                mean(&recovery_score(&w, p.view()).unwrap())
            })
            .collect();
        assert!((mean(&means) - 0.5).abs() < 0.03);
        assert!(recovery_score(&w, Matrix::zeros((3, 6)).view()).is_err());
    }

    #[test]
    fn perturbation_norms() {
        let w = generate_world(6, 3, 10, 4, 0.0, 7).unwrap();
        let g = w.category_matrix();
        assert_eq!(perturb_g(&g, 0.0, 1).unwrap().g, g.g);
        let base = frobenius_norm(g.g.view());
        let a = perturb_g(&g, 0.5, 1).unwrap();
        let b = perturb_g(&g, 0.5, 2).unwrap();
        let da = &a.g - &g.g;
        let db = &b.g - &g.g;
        assert!((frobenius_norm(da.view()) / base - 0.5).abs() < 1e-10);
        assert!((frobenius_norm(db.view()) / base - 0.5).abs() < 1e-10);
        assert_ne!(da, db);
        assert!(perturb_g(&g, -1.0, 1).is_err());
    }

    #[test]
    fn zero_rows_and_written_world() {
        let mut c = WorldConfig::new(5, 3, 40, 6, 0.05, 8);
        c.zero_rows = vec![2];
        let w = generate_world_with(&c).unwrap();
        assert!(w.g_true.row(2).iter().all(|&v| v == 0.0));
        let dir = std::env::temp_dir().join(format!("proxylearn-synth-{}", std::process::id()));
        w.write_to_dir(&dir).unwrap();
        let styles = crate::domain::io::read_vocabulary(std::io::BufReader::new(File::open(dir.join("styles.txt")).unwrap())).unwrap();
        let data = crate::domain::io::read_feature_dataset(
            File::open(dir.join("features.pxy")).unwrap(),
            std::io::BufReader::new(File::open(dir.join("labels.txt")).unwrap()),
            &styles,
        )
        .unwrap();
        assert_eq!(data.labels, w.labels);
        let gt = crate::domain::io::read_ground_truth_csv(
            std::io::BufReader::new(File::open(dir.join("ground_truth.csv")).unwrap()),
            Some(&styles),
        )
        .unwrap();
        assert_eq!(gt.binary(), median_binarize(w.attributes.view()));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn median_split_is_balanced() {
        let w = generate_world(4, 2, 101, 4, 0.0, 3).unwrap();
        let b = median_binarize(w.attributes.view());
        for col in b.columns() {
            assert_eq!(col.iter().filter(|&&v| v).count(), 50);
        }
    }

    #[test]
    fn sparse_coding_inverts_square_g_and_beats_chance_otherwise() {
        use crate::proxy::sparse_code_batch;
        // Square, full-rank G and unsoftened scores: the code is exact.
        let w = generate_world(6, 6, 300, 8, 0.1, 12).unwrap();
        let linear = w.attributes.dot(&w.g_true);
        let coded = sparse_code_batch(linear.view(), &w.category_matrix(), 0.0).unwrap();
        assert!(recovery_score(&w, coded.view()).unwrap().iter().all(|&a| a > 0.999));
        // m > n with softmax scores: Gᵗ has a null space, so only partial recovery.
        let w = generate_world(12, 6, 300, 8, 0.1, 12).unwrap();
        let scores = w.oracle_style_scores(1.0).unwrap();
        let coded = sparse_code_batch(scores.view(), &w.category_matrix(), 1e-3).unwrap();
        assert!(mean(&recovery_score(&w, coded.view()).unwrap()) > 0.6);
    }
}
