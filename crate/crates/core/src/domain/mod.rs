//! Core domain types: vocabularies, feature datasets, ground truth and the
//! category-attribute matrix, plus the on-disk formats in [`io`].

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix};

pub mod io;
pub mod survey;

pub use survey::{ingest_survey, majority, Answer, SurveySheet};

/// The 58 visual elements, grouped as subject, line, texture, color, shape,
/// light and space, and general principles.
pub const DEFAULT_ELEMENTS: [&str; 58] = [
    "representational", "non-representational",
    "blurred", "broken", "controlled", "curved", "diagonal", "horizontal", "vertical",
    "meandering", "thick", "thin", "active", "energetic", "straight",
    "bumpy", "flat", "smooth", "gestural", "rough",
    "calm", "cool", "chromatic", "monochromatic", "muted", "warm", "transparent",
    "ambiguous", "geometric", "amorphous", "biomorphic", "closed", "open", "distorted",
    "heavy", "linear", "organic", "abstract", "decorative", "kinetic", "light",
    "bright", "dark", "atmospheric", "planar", "perspective",
    "overlapping", "balance", "contrast", "harmony", "pattern", "repetition", "rhythm",
    "unity", "variety", "symmetry", "proportion", "parallel",
];

/// The merged 20-style set.
pub const DEFAULT_STYLES: [&str; 20] = [
    "abstract-expressionism", "art-nouveau-modern", "baroque", "color-field-painting",
    "cubism", "early-renaissance", "expressionism", "fauvism", "high-renaissance",
    "impressionism", "mannerism", "minimalism", "naive-art-primitivism",
    "northern-renaissance", "pop-art", "post-impressionism", "realism", "rococo",
    "romanticism", "ukiyo-e",
];

/// Canonical token form: trimmed, lowercase, inner whitespace runs joined by `-`.
pub fn normalize_token(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

/// An ordered list of unique, normalized names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

pub type ElementVocabulary = Vocabulary;
pub type StyleVocabulary = Vocabulary;

impl Vocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vocabulary { names: Vec::new(), index: HashMap::new() };
        for raw in names {
            let name = normalize_token(raw.as_ref());
            if name.is_empty() {
                return Err(Error::Data("empty vocabulary entry".into()));
            }
            if out.index.insert(name.clone(), out.names.len()).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry `{name}`")));
            }
            out.names.push(name);
        }
        if out.names.is_empty() {
            return Err(Error::Data("vocabulary is empty".into()));
        }
        Ok(out)
    }

    pub fn default_elements() -> Self {
        Self::new(DEFAULT_ELEMENTS).expect("builtin element catalog is valid")
    }

    pub fn default_styles() -> Self {
        Self::new(DEFAULT_STYLES).expect("builtin style catalog is valid")
    }

    /// `prefix0, prefix1, ...`; used for synthetic worlds.
    pub fn numbered(prefix: &str, len: usize) -> Result<Self> {
        Self::new((0..len).map(|i| format!("{prefix}{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize_token(name)).copied()
    }

    pub fn lookup(&self, name: &str) -> Result<usize> {
        self.get(name).ok_or_else(|| Error::Vocabulary(vec![name.to_string()]))
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.names[i].as_str()))
    }
}

/// Word vectors keyed by normalized token.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Array1<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, vectors: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Inserts a vector; fails on a dimension mismatch or a duplicate token.
    pub fn insert(&mut self, token: &str, vector: Array1<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{token}` has {} values, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        let key = normalize_token(token);
        if self.vectors.contains_key(&key) {
            return Err(Error::Data(format!("duplicate token `{key}`")));
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&Array1<f64>> {
        self.vectors.get(&normalize_token(token))
    }
}

/// `k` samples of `d`-dimensional features with style labels.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub styles: StyleVocabulary,
}

impl FeatureDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, styles: StyleVocabulary) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        ensure_finite(features.view(), "features")?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= styles.len()) {
            return Err(Error::Index { index: bad, len: styles.len() });
        }
        Ok(FeatureDataset { features, labels, styles })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> FeatureDataset {
        FeatureDataset {
            features: self.features.select(ndarray::Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            styles: self.styles.clone(),
        }
    }
}

/// Majority-voted ternary annotations: relevant = +1, somewhat = 0, irrelevant = −1.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub ids: Vec<String>,
    pub styles: Vec<usize>,
    pub style_vocab: StyleVocabulary,
    pub elements: ElementVocabulary,
    pub ternary: Array2<i8>,
}

impl GroundTruthSet {
    pub fn new(
        ids: Vec<String>,
        styles: Vec<usize>,
        style_vocab: StyleVocabulary,
        elements: ElementVocabulary,
        ternary: Array2<i8>,
    ) -> Result<Self> {
        let k = ids.len();
        if styles.len() != k || ternary.nrows() != k || ternary.ncols() != elements.len() {
            return Err(Error::Shape(format!(
                "{k} ids, {} styles, ternary {}x{} for {} elements",
                styles.len(),
                ternary.nrows(),
                ternary.ncols(),
                elements.len()
            )));
        }
        if let Some(v) = ternary.iter().find(|v| !matches!(v, -1..=1)) {
            return Err(Error::Data(format!("ternary value {v} outside {{-1,0,1}}")));
        }
        if let Some(&bad) = styles.iter().find(|&&s| s >= style_vocab.len()) {
            return Err(Error::Index { index: bad, len: style_vocab.len() });
        }
        Ok(GroundTruthSet { ids, styles, style_vocab, elements, ternary })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Binary view: somewhat counts as relevant.
    pub fn binary(&self) -> Array2<bool> {
        self.ternary.mapv(|v| v >= 0)
    }

    /// Row indices of paintings belonging to `style`.
    pub fn rows_of_style(&self, style: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.styles[r] == style).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Embedding,
    GroundTruth,
    Synthetic,
    External,
}

/// The m×n element-by-style relation `G`.
#[derive(Debug, Clone)]
pub struct CategoryAttributeMatrix {
    pub g: Matrix,
    pub elements: ElementVocabulary,
    pub styles: StyleVocabulary,
    pub provenance: Provenance,
}

impl CategoryAttributeMatrix {
    pub fn new(
        g: Matrix,
        elements: ElementVocabulary,
        styles: StyleVocabulary,
        provenance: Provenance,
    ) -> Result<Self> {
        if g.dim() != (elements.len(), styles.len()) {
            return Err(Error::Shape(format!(
                "G is {}x{} but vocabularies are {}x{}",
                g.nrows(),
                g.ncols(),
                elements.len(),
                styles.len()
            )));
        }
        ensure_finite(g.view(), "G")?;
        Ok(CategoryAttributeMatrix { g, elements, styles, provenance })
    }

    /// Wraps a bare matrix with numbered vocabularies.
    pub fn from_matrix(g: Matrix, provenance: Provenance) -> Result<Self> {
        let elements = Vocabulary::numbered("e", g.nrows())?;
        let styles = Vocabulary::numbered("s", g.ncols())?;
        Self::new(g, elements, styles, provenance)
    }

    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    pub fn n(&self) -> usize {
        self.g.ncols()
    }

    /// Keeps only the listed style columns, in the given order.
    pub fn select_styles(&self, columns: &[usize]) -> Result<Self> {
        Self::new(
            self.g.select(ndarray::Axis(1), columns),
            self.elements.clone(),
            self.styles.select(columns)?,
            self.provenance,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_catalogs() {
        let e = Vocabulary::default_elements();
        assert_eq!(e.len(), 58);
        assert!(e.get("Non-Representational").is_some());
        assert!(e.get("medium").is_none());
        let s = Vocabulary::default_styles();
        assert_eq!(s.len(), 20);
        assert_eq!(s.get("Ukiyo-e"), Some(19));
        assert_eq!(s.get("color field painting"), s.get("color-field-painting"));
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(["Cubism", "cubism"]).is_err());
        assert!(Vocabulary::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn binary_view_maps_somewhat_to_relevant() {
        let gt = GroundTruthSet::new(
            vec!["a".into()],
            vec![0],
            Vocabulary::numbered("s", 2).unwrap(),
            Vocabulary::numbered("e", 3).unwrap(),
            array![[1i8, 0, -1]],
        )
        .unwrap();
        assert_eq!(gt.binary().row(0).to_vec(), vec![true, true, false]);
    }

    #[test]
    fn ternary_out_of_range_rejected() {
        let r = GroundTruthSet::new(
            vec!["a".into()],
            vec![0],
            Vocabulary::numbered("s", 2).unwrap(),
            Vocabulary::numbered("e", 1).unwrap(),
            array![[2i8]],
        );
        assert!(r.is_err());
    }

    #[test]
    fn g_shape_checked() {
        let r = CategoryAttributeMatrix::new(
            Matrix::zeros((3, 2)),
            Vocabulary::numbered("e", 3).unwrap(),
            Vocabulary::numbered("s", 3).unwrap(),
            Provenance::External,
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
