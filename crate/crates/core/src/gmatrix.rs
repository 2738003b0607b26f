//! Estimating the category-attribute matrix `G` and deriving the fixed
//! terminal maps `G*` used by deep-proxy networks.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{
    CategoryAttributeMatrix, ElementVocabulary, EmbeddingTable, GroundTruthSet, Provenance,
    StyleVocabulary,
};
use crate::error::{Error, Result};
use crate::linalg::{singular_values, solve_least_squares, svd_thin, Matrix};

/// Smallest singular value must be at least this fraction of the largest.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Solves `W_A · a = w_s` for every style by minimum-norm least squares, where
/// the columns of `W_A` are the element embeddings.
pub fn estimate_g_from_embeddings(
    table: &EmbeddingTable,
    elements: &ElementVocabulary,
    styles: &StyleVocabulary,
) -> Result<CategoryAttributeMatrix> {
    let missing: Vec<String> = elements
        .names()
        .iter()
        .chain(styles.names())
        .filter(|t| table.get(t).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Vocabulary(missing));
    }
    let d = table.dim();
    let stack = |vocab: &[String]| {
        let mut m = Matrix::zeros((d, vocab.len()));
        for (j, t) in vocab.iter().enumerate() {
            m.column_mut(j).assign(table.get(t).expect("presence checked"));
        }
        m
    };
    let w_a = stack(elements.names());
    let w_s = stack(styles.names());
    let g = solve_least_squares(w_a.view(), w_s.view(), 0.0)?;
    CategoryAttributeMatrix::new(g, elements.clone(), styles.clone(), Provenance::Embedding)
}

/// Picks `per_style` paintings of every style with a seeded RNG. Rows are
/// returned in ascending order within each style.
pub fn select_ground_truth_rows(
    gt: &GroundTruthSet,
    per_style: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if per_style == 0 {
        return Err(Error::InvalidConfig("per-style sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..gt.style_vocab.len())
        .map(|s| {
            let rows = gt.rows_of_style(s);
            if rows.len() < per_style {
                return Err(Error::Data(format!(
                    "style `{}` has {} annotated paintings, {per_style} required",
                    gt.style_vocab.name(s),
                    rows.len()
                )));
            }
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, rows.len(), per_style)
                .into_iter()
                .map(|i| rows[i])
                .collect();
            picked.sort_unstable();
            Ok(picked)
        })
        .collect()
}

/// Column `i` is the mean ternary vector of the selected paintings of style `i`.
pub fn g_from_selected_rows(
    gt: &GroundTruthSet,
    selection: &[Vec<usize>],
) -> Result<CategoryAttributeMatrix> {
    let m = gt.elements.len();
    let n = gt.style_vocab.len();
    if selection.len() != n {
        return Err(Error::Shape(format!("{} selections for {n} styles", selection.len())));
    }
    let mut g = Matrix::zeros((m, n));
    for (s, rows) in selection.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::Data(format!("no paintings for `{}`", gt.style_vocab.name(s))));
        }
        for &r in rows {
            let row = gt.ternary.row(r).mapv(f64::from);
            let mut col = g.column_mut(s);
            col += &row;
        }
        g.column_mut(s).mapv_inplace(|v| v / rows.len() as f64);
    }
    CategoryAttributeMatrix::new(
        g,
        gt.elements.clone(),
        gt.style_vocab.clone(),
        Provenance::GroundTruth,
    )
}

pub fn estimate_g_from_ground_truth(
    gt: &GroundTruthSet,
    per_style: usize,
    seed: u64,
) -> Result<CategoryAttributeMatrix> {
    let selection = select_ground_truth_rows(gt, per_style, seed)?;
    g_from_selected_rows(gt, &selection)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Svd,
    Offset,
}

impl Variant {
    pub fn tag(self) -> u8 {
        match self {
            Variant::Plain => 0,
            Variant::Svd => 1,
            Variant::Offset => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Variant::Plain),
            1 => Some(Variant::Svd),
            2 => Some(Variant::Offset),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Svd => "svd",
            Variant::Offset => "offset",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "plain" => Ok(Variant::Plain),
            "svd" => Ok(Variant::Svd),
            "offset" => Ok(Variant::Offset),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

/// The fixed terminal map between the attribute layer and the style logits.
///
/// For `Offset`, `projector` is `U·Σ⁻²·Uᵗ` of the current shifted matrix; it is
/// treated as constant when differentiating with respect to the offset.
#[derive(Debug, Clone)]
pub struct GStar {
    variant: Variant,
    matrix: Matrix,
    source: Matrix,
    pre_shift: f64,
    offset: Option<Array1<f64>>,
    projector: Option<Matrix>,
}

struct Projection {
    projector: Matrix,
    transform: Matrix,
}

fn svd_projection(g: &Matrix) -> Result<Projection> {
    let (m, n) = g.dim();
    let sv = singular_values(g.view())?;
    let largest = sv.first().copied().unwrap_or(0.0);
    let smallest = if m < n { 0.0 } else { sv.last().copied().unwrap_or(0.0) };
    if largest == 0.0 || smallest < RANK_TOLERANCE * largest {
        return Err(Error::Rank { smallest, largest });
    }
    let f = svd_thin(g.view())?;
    if f.rank() < n {
        return Err(Error::Rank { smallest: 0.0, largest });
    }
    // T = Σ⁻¹·Uᵗ and G* = Tᵗ·T·G.
    let inv = f.sigma.mapv(|s| 1.0 / s);
    let transform = &f.u.t() * &inv.view().insert_axis(Axis(1));
    let projector = transform.t().dot(&transform);
    Ok(Projection { projector, transform })
}

fn shifted(source: &Matrix, pre_shift: f64, offset: &Array1<f64>) -> Matrix {
    let mut g = source.mapv(|v| v + pre_shift);
    g -= &offset.view().insert_axis(Axis(1));
    g
}

pub fn build_gstar(g: &CategoryAttributeMatrix, variant: Variant, pre_shift: f64) -> Result<GStar> {
    let source = g.g.clone();
    match variant {
        Variant::Plain => Ok(GStar {
            variant,
            matrix: source.clone(),
            source,
            pre_shift: 0.0,
            offset: None,
            projector: None,
        }),
        Variant::Svd => {
            let p = svd_projection(&source)?;
            Ok(GStar {
                variant,
                matrix: p.projector.dot(&source),
                source,
                pre_shift: 0.0,
                offset: None,
                projector: Some(p.projector),
            })
        }
        Variant::Offset => {
            if !pre_shift.is_finite() {
                return Err(Error::InvalidConfig("pre-shift must be finite".into()));
            }
            let offset = Array1::from_elem(source.nrows(), pre_shift.max(0.0));
            let mut out = GStar {
                variant,
                matrix: Matrix::zeros(source.dim()),
                source,
                pre_shift,
                offset: Some(offset.clone()),
                projector: None,
            };
            out.set_offset(offset)?;
            Ok(out)
        }
    }
}

impl GStar {
    /// Reassembles a map read back from a checkpoint.
    pub fn from_parts(
        variant: Variant,
        matrix: Matrix,
        source: Matrix,
        pre_shift: f64,
        offset: Option<Array1<f64>>,
    ) -> Result<Self> {
        if matrix.dim() != source.dim() {
            return Err(Error::Shape("G* and source G differ in shape".into()));
        }
        let projector = match (variant, &offset) {
            (Variant::Plain, _) => None,
            (Variant::Svd, _) => Some(svd_projection(&source)?.projector),
            (Variant::Offset, Some(o)) => {
                if o.len() != source.nrows() {
                    return Err(Error::Shape("offset length differs from m".into()));
                }
                Some(svd_projection(&shifted(&source, pre_shift, o))?.projector)
            }
            (Variant::Offset, None) => {
                return Err(Error::Data("offset variant without an offset vector".into()))
            }
        };
        Ok(GStar { variant, matrix, source, pre_shift, offset, projector })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// The m×n map applied as `logits = f_A · G*`.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn source(&self) -> &Matrix {
        &self.source
    }

    pub fn pre_shift(&self) -> f64 {
        self.pre_shift
    }

    pub fn offset(&self) -> Option<&Array1<f64>> {
        self.offset.as_ref()
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    /// The matrix the SVD is taken of: `G` for Svd, `G + shift − 𝛍` for Offset.
    pub fn decomposed(&self) -> Matrix {
        match &self.offset {
            Some(o) => shifted(&self.source, self.pre_shift, o),
            None => self.source.clone(),
        }
    }

    /// `T = Σ⁻¹·Uᵗ` of the decomposed matrix (Svd and Offset only).
    pub fn transform(&self) -> Result<Option<Matrix>> {
        match self.variant {
            Variant::Plain => Ok(None),
            _ => Ok(Some(svd_projection(&self.decomposed())?.transform)),
        }
    }

    /// Replaces the offset (clamped at zero) and recomputes the SVD factors.
    pub fn set_offset(&mut self, mut offset: Array1<f64>) -> Result<()> {
        if self.variant != Variant::Offset {
            return Err(Error::InvalidConfig("only the offset variant has an offset".into()));
        }
        if offset.len() != self.source.nrows() {
            return Err(Error::Shape("offset length differs from m".into()));
        }
        offset.mapv_inplace(|v| v.max(0.0));
        let g = shifted(&self.source, self.pre_shift, &offset);
        let p = svd_projection(&g)?;
        self.matrix = p.projector.dot(&g);
        self.projector = Some(p.projector);
        self.offset = Some(offset);
        Ok(())
    }

    /// Gradient with respect to the offset given `∂L/∂G*`, holding the current
    /// SVD factors fixed: `G* = P·(G + shift − 𝛍)` so `∂L/∂o_j = −Σ_i (P·∂L/∂G*)_{j,i}`.
    pub fn offset_gradient(&self, d_gstar: &Matrix) -> Option<Array1<f64>> {
        if self.variant != Variant::Offset {
            return None;
        }
        let p = self.projector.as_ref()?;
        Some(-p.dot(d_gstar).sum_axis(Axis(1)))
    }

    /// `G*` that the frozen factors would give for a different offset; used to
    /// check [`GStar::offset_gradient`] by finite differences.
    pub fn frozen_matrix_for(&self, offset: &Array1<f64>) -> Option<Matrix> {
        let p = self.projector.as_ref()?;
        Some(p.dot(&shifted(&self.source, self.pre_shift, offset)))
    }
}

/// Ternary-mean columns for callers that already hold a k×m matrix and labels.
pub fn class_means(values: &Array2<f64>, labels: &[usize], n: usize) -> Result<Matrix> {
    let m = values.ncols();
    let mut sums = Matrix::zeros((m, n));
    let mut counts = vec![0usize; n];
    for (row, &l) in values.rows().into_iter().zip(labels) {
        let mut col = sums.column_mut(l);
        col += &row;
        counts[l] += 1;
    }
    for (s, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::Data(format!("class {s} has no samples")));
        }
        sums.column_mut(s).mapv_inplace(|v| v / c as f64);
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Vocabulary;
    use ndarray::{array, Array};
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn max_abs(a: &Matrix) -> f64 {
        a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn cam(g: Matrix) -> CategoryAttributeMatrix {
        CategoryAttributeMatrix::from_matrix(g, Provenance::Synthetic).unwrap()
    }

    fn table_from(columns: &[(&str, Vec<f64>)]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(columns[0].1.len());
        for (name, v) in columns {
            t.insert(name, Array1::from(v.clone())).unwrap();
        }
        t
    }

    #[test]
    fn one_hot_elements_give_style_vectors() {
        let t = table_from(&[
            ("flat", vec![1.0, 0.0, 0.0]),
            ("calm", vec![0.0, 1.0, 0.0]),
            ("warm", vec![0.0, 0.0, 1.0]),
            ("cubism", vec![0.2, -0.4, 0.9]),
            ("rococo", vec![1.5, 0.0, -1.0]),
        ]);
        let el = Vocabulary::new(["flat", "calm", "warm"]).unwrap();
        let st = Vocabulary::new(["cubism", "rococo"]).unwrap();
        let g = estimate_g_from_embeddings(&t, &el, &st).unwrap();
        assert!(max_abs(&(g.g - array![[0.2, 1.5], [-0.4, 0.0], [0.9, -1.0]])) < 1e-12);
    }

    #[test]
    fn consistent_mixture_is_recovered() {
        // Orthonormal element embeddings in 4-d; style = 0.3·abstract + 0.7·gestural.
        let q = svd_thin(random(4, 3, 3).view()).unwrap().u;
        let style: Array1<f64> = 0.3 * &q.column(0) + 0.7 * &q.column(1);
        let t = table_from(&[
            ("abstract", q.column(0).to_vec()),
            ("gestural", q.column(1).to_vec()),
            ("flat", q.column(2).to_vec()),
            ("expressionism", style.to_vec()),
        ]);
        let el = Vocabulary::new(["abstract", "gestural", "flat"]).unwrap();
        let st = Vocabulary::new(["expressionism"]).unwrap();
        let g = estimate_g_from_embeddings(&t, &el, &st).unwrap();
        assert!(max_abs(&(g.g - array![[0.3], [0.7], [0.0]])) < 1e-10);
    }

    #[test]
    fn missing_terms_are_all_listed() {
        let t = table_from(&[("flat", vec![1.0]), ("cubism", vec![1.0])]);
        let el = Vocabulary::new(["flat", "calm"]).unwrap();
        let st = Vocabulary::new(["cubism", "ukiyo-e"]).unwrap();
        match estimate_g_from_embeddings(&t, &el, &st) {
            Err(Error::Vocabulary(v)) => assert_eq!(v, vec!["calm", "ukiyo-e"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn style_permutation_permutes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let names = ["a", "b", "c", "d", "s0", "s1", "s2"];
        let cols: Vec<(&str, Vec<f64>)> = names
            .iter()
            .map(|n| (*n, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let t = table_from(&cols);
        let el = Vocabulary::new(["a", "b", "c", "d"]).unwrap();
        let g1 = estimate_g_from_embeddings(&t, &el, &Vocabulary::new(["s0", "s1", "s2"]).unwrap()).unwrap();
        let g2 = estimate_g_from_embeddings(&t, &el, &Vocabulary::new(["s2", "s0", "s1"]).unwrap()).unwrap();
        assert!(max_abs(&(g1.g.select(Axis(1), &[2, 0, 1]) - g2.g)) < 1e-12);
    }

    fn gt_fixture(per_style: usize, n: usize, m: usize, seed: u64) -> GroundTruthSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = per_style * n;
        GroundTruthSet::new(
            (0..k).map(|i| format!("p{i}")).collect(),
            (0..k).map(|i| i % n).collect(),
            Vocabulary::numbered("s", n).unwrap(),
            Vocabulary::numbered("e", m).unwrap(),
            Array2::from_shape_fn((k, m), |_| rng.random_range(-1i8..=1)),
        )
        .unwrap()
    }

    #[test]
    fn single_painting_per_style() {
        let gt = gt_fixture(1, 3, 4, 1);
        let g = estimate_g_from_ground_truth(&gt, 1, 0).unwrap();
        for s in 0..3 {
            let expected = gt.ternary.row(s).mapv(f64::from);
            assert_eq!(g.g.column(s), expected);
        }
    }

    #[test]
    fn symmetric_mean_is_zero() {
        let gt = GroundTruthSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0, 0, 0],
            Vocabulary::numbered("s", 1).unwrap(),
            Vocabulary::numbered("e", 1).unwrap(),
            array![[1i8], [0], [-1]],
        )
        .unwrap();
        let g = estimate_g_from_ground_truth(&gt, 3, 0).unwrap();
        assert_eq!(g.g[[0, 0]], 0.0);
    }

    #[test]
    fn seeded_selection_matches_brute_force_mean() {
        let gt = gt_fixture(6, 4, 5, 2);
        let sel = select_ground_truth_rows(&gt, 3, 11).unwrap();
        let g = estimate_g_from_ground_truth(&gt, 3, 11).unwrap();
        for (s, rows) in sel.iter().enumerate() {
            assert_eq!(rows.len(), 3);
            for e in 0..5 {
                let mut total = 0.0;
                for &r in rows {
                    assert_eq!(gt.styles[r], s);
                    total += gt.ternary[[r, e]] as f64;
                }
                assert!((g.g[[e, s]] - total / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(sel, select_ground_truth_rows(&gt, 3, 11).unwrap());
    }

    #[test]
    fn insufficient_samples_named() {
        let gt = gt_fixture(2, 3, 2, 3);
        match estimate_g_from_ground_truth(&gt, 3, 0) {
            Err(Error::Data(msg)) => assert!(msg.contains("s0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_is_svd_fixed_point() {
        let gs = build_gstar(&cam(Matrix::eye(4)), Variant::Svd, 0.0).unwrap();
        assert!(max_abs(&(gs.matrix() - Matrix::eye(4))) < 1e-14);
    }

    #[test]
    fn transformed_columns_are_orthonormal() {
        let g = random(10, 4, 5);
        let gs = build_gstar(&cam(g.clone()), Variant::Svd, 0.0).unwrap();
        let t = gs.transform().unwrap().unwrap();
        let tg = t.dot(&g);
        assert!(max_abs(&(tg.dot(&tg.t()) - Matrix::eye(4))) < 1e-8);
        // G* = Tᵗ·(T·G)
        assert!(max_abs(&(t.t().dot(&tg) - gs.matrix())) < 1e-10);
    }

    #[test]
    fn plain_is_source() {
        let g = random(6, 3, 6);
        let gs = build_gstar(&cam(g.clone()), Variant::Plain, 0.0).unwrap();
        assert_eq!(gs.matrix(), &g);
    }

    #[test]
    fn offset_at_pre_shift_equals_svd() {
        let g = random(8, 3, 7);
        let svd = build_gstar(&cam(g.clone()), Variant::Svd, 0.0).unwrap();
        let off = build_gstar(&cam(g), Variant::Offset, 1.0).unwrap();
        assert!(max_abs(&(svd.matrix() - off.matrix())) < 1e-10);
        assert_eq!(off.offset().unwrap().to_vec(), vec![1.0; 8]);
    }

    #[test]
    fn rank_deficient_g_rejected() {
        let mut g = random(6, 3, 8);
        let c0 = g.column(0).to_owned();
        g.column_mut(2).assign(&(2.0 * &c0));
        assert!(matches!(build_gstar(&cam(g.clone()), Variant::Svd, 0.0), Err(Error::Rank { .. })));
        assert!(matches!(build_gstar(&cam(g), Variant::Offset, 1.0), Err(Error::Rank { .. })));
        assert!(matches!(build_gstar(&cam(random(2, 3, 1)), Variant::Svd, 0.0), Err(Error::Rank { .. })));
    }

    #[test]
    fn offset_is_clamped_nonnegative() {
        let mut gs = build_gstar(&cam(random(6, 3, 9)), Variant::Offset, 1.0).unwrap();
        gs.set_offset(Array1::from(vec![-1.0, 0.5, 2.0, -0.1, 0.0, 1.0])).unwrap();
        assert!(gs.offset().unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn offset_gradient_matches_frozen_finite_difference() {
        let mut gs = build_gstar(&cam(random(7, 3, 10)), Variant::Offset, 1.0).unwrap();
        gs.set_offset(Array1::from(vec![0.8, 1.2, 0.5, 1.0, 0.9, 1.4, 1.1])).unwrap();
        let f_a = random(5, 7, 11);
        let w = random(5, 3, 12);
        // L(G*) = Σ w ⊙ (f_A·G*)  ⇒  ∂L/∂G* = f_Aᵗ·w
        let loss = |gm: &Matrix| (&f_a.dot(gm) * &w).sum();
        let grad = gs.offset_gradient(&f_a.t().dot(&w)).unwrap();
        let o = gs.offset().unwrap().clone();
        let h = 1e-6;
        for j in 0..o.len() {
            let mut up = o.clone();
            up[j] += h;
            let mut dn = o.clone();
            dn[j] -= h;
            let fd = (loss(&gs.frozen_matrix_for(&up).unwrap())
                - loss(&gs.frozen_matrix_for(&dn).unwrap()))
                / (2.0 * h);
            assert!((fd - grad[j]).abs() <= 1e-4 * (1.0 + fd.abs()), "{fd} vs {}", grad[j]);
        }
    }

    #[test]
    fn class_means_basic() {
        let v = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let g = class_means(&v, &[0, 0, 1], 2).unwrap();
        assert_eq!(g, array![[2.0, 5.0], [3.0, 6.0]]);
    }
}
