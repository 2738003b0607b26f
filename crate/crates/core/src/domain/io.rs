//! File formats.
//!
//! - Feature file (`.pxy`): ASCII `PXY1`, u32 LE `k`, u32 LE `d`, then `k·d`
//!   little-endian f32 values, row-major.
//! - Labels file: one style name per line.
//! - Embedding table: `token v1 ... vd` per line, whitespace separated.
//! - G CSV: header `element,<style1>,...,<styleN>`, then one row per element.
//! - Ground-truth CSV: header `painting_id,style,<element1>,...`, cells in {-1,0,1}.

use std::io::{BufRead, Read, Write};

use ndarray::{Array1, Array2};

use super::{
    CategoryAttributeMatrix, EmbeddingTable, FeatureDataset, GroundTruthSet, Provenance,
    StyleVocabulary, Vocabulary,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"PXY1";

pub fn parse_embedding_table<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::format(line_no, format!("bad number `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::format(line_no, format!("token `{token}` has no vector")));
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
        if values.len() != t.dim() {
            return Err(Error::format(
                line_no,
                format!("expected {} values, found {}", t.dim(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(line_no, "non-finite value"));
        }
        if t.get(token).is_some() {
            return Err(Error::format(line_no, format!("duplicate token `{token}`")));
        }
        t.insert(token, Array1::from(values))?;
    }
    table.ok_or_else(|| Error::format(0, "embedding table is empty"))
}

pub fn write_embedding_table<W: Write>(
    mut w: W,
    rows: &[(&str, Array1<f64>)],
) -> Result<()> {
    for (token, v) in rows {
        write!(w, "{token}")?;
        for x in v {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut reader: R) -> Result<Matrix> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::format(0, "feature file shorter than its 12-byte header"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(0, "bad magic, expected PXY1"));
    }
    let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = k.checked_mul(d).and_then(|n| n.checked_mul(4));
    if expected != Some(body.len()) {
        return Err(Error::format(
            0,
            format!("header declares {k}x{d} but payload has {} bytes", body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(0, "non-finite feature value"));
    }
    Ok(Array2::from_shape_vec((k, d), values).expect("length checked"))
}

pub fn write_features<W: Write>(mut w: W, features: &Matrix) -> Result<()> {
    let (k, d) = features.dim();
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Data(format!("dimension {v} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(12 + 4 * k * d);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&to_u32(k)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for v in features.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_labels<R: BufRead>(reader: R, styles: &StyleVocabulary) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        labels.push(styles.lookup(name)?);
    }
    Ok(labels)
}

pub fn write_labels<W: Write>(mut w: W, labels: &[usize], styles: &StyleVocabulary) -> Result<()> {
    for &l in labels {
        writeln!(w, "{}", styles.name(l))?;
    }
    Ok(())
}

/// One name per line, blank lines ignored.
pub fn read_vocabulary<R: BufRead>(reader: R) -> Result<Vocabulary> {
    let mut names = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            names.push(line);
        }
    }
    Vocabulary::new(names)
}

pub fn write_vocabulary<W: Write>(mut w: W, vocab: &Vocabulary) -> Result<()> {
    for n in vocab.names() {
        writeln!(w, "{n}")?;
    }
    Ok(())
}

pub fn read_feature_dataset<R: Read, L: BufRead>(
    binary: R,
    labels: L,
    styles: &StyleVocabulary,
) -> Result<FeatureDataset> {
    let features = read_features(binary)?;
    let labels = read_labels(labels, styles)?;
    if labels.len() != features.nrows() {
        return Err(Error::format(
            0,
            format!("{} feature rows but {} labels", features.nrows(), labels.len()),
        ));
    }
    FeatureDataset::new(features, labels, styles.clone())
}

pub fn write_feature_dataset<W: Write, L: Write>(
    binary: W,
    labels: L,
    data: &FeatureDataset,
) -> Result<()> {
    write_features(binary, &data.features)?;
    write_labels(labels, &data.labels, &data.styles)
}

fn csv_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
}

fn split_csv(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

pub fn read_g_csv<R: BufRead>(reader: R) -> Result<CategoryAttributeMatrix> {
    let mut lines = csv_lines(reader);
    let (_, header) = lines.next().ok_or_else(|| Error::format(1, "missing header"))?;
    let header = header?;
    let cols = split_csv(&header);
    if cols.first().copied() != Some("element") || cols.len() < 2 {
        return Err(Error::format(1, "header must be `element,<style1>,...`"));
    }
    let styles = Vocabulary::new(&cols[1..]).map_err(|e| Error::format(1, e.to_string()))?;
    let n = styles.len();
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (line_no, line) in lines {
        let line = line?;
        let cells = split_csv(&line);
        if cells.len() != n + 1 {
            return Err(Error::format(
                line_no,
                format!("expected {} cells, found {}", n + 1, cells.len()),
            ));
        }
        names.push(cells[0].to_string());
        for c in &cells[1..] {
            let v: f64 = c
                .parse()
                .map_err(|_| Error::format(line_no, format!("bad number `{c}`")))?;
            values.push(v);
        }
    }
    let elements = Vocabulary::new(&names).map_err(|e| Error::format(0, e.to_string()))?;
    let g = Array2::from_shape_vec((elements.len(), n), values).expect("row lengths checked");
    CategoryAttributeMatrix::new(g, elements, styles, Provenance::External)
}

pub fn write_g_csv<W: Write>(mut w: W, g: &CategoryAttributeMatrix) -> Result<()> {
    write!(w, "element")?;
    for s in g.styles.names() {
        write!(w, ",{s}")?;
    }
    writeln!(w)?;
    for (i, row) in g.g.rows().into_iter().enumerate() {
        write!(w, "{}", g.elements.name(i))?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a ground-truth CSV. When `styles` is `None` the style vocabulary is
/// built from first appearance order.
pub fn read_ground_truth_csv<R: BufRead>(
    reader: R,
    styles: Option<&StyleVocabulary>,
) -> Result<GroundTruthSet> {
    let mut lines = csv_lines(reader);
    let (_, header) = lines.next().ok_or_else(|| Error::format(1, "missing header"))?;
    let header = header?;
    let cols = split_csv(&header);
    if cols.len() < 3 || cols[0] != "painting_id" || cols[1] != "style" {
        return Err(Error::format(1, "header must be `painting_id,style,<element1>,...`"));
    }
    let elements = Vocabulary::new(&cols[2..]).map_err(|e| Error::format(1, e.to_string()))?;
    let m = elements.len();
    let mut ids = Vec::new();
    let mut style_names = Vec::new();
    let mut values = Vec::new();
    for (line_no, line) in lines {
        let line = line?;
        let cells = split_csv(&line);
        if cells.len() != m + 2 {
            return Err(Error::format(
                line_no,
                format!("expected {} cells, found {}", m + 2, cells.len()),
            ));
        }
        ids.push(cells[0].to_string());
        style_names.push(cells[1].to_string());
        for c in &cells[2..] {
            let v = match *c {
                "1" | "+1" => 1i8,
                "0" | "-0" => 0,
                "-1" => -1,
                other => {
                    return Err(Error::format(line_no, format!("cell `{other}` not in {{-1,0,1}}")))
                }
            };
            values.push(v);
        }
    }
    let style_vocab = match styles {
        Some(v) => v.clone(),
        None => {
            let mut seen: Vec<String> = Vec::new();
            for s in &style_names {
                let norm = super::normalize_token(s);
                if !seen.contains(&norm) {
                    seen.push(norm);
                }
            }
            Vocabulary::new(seen).map_err(|e| Error::format(0, e.to_string()))?
        }
    };
    let mut unknown = Vec::new();
    let mut style_idx = Vec::with_capacity(style_names.len());
    for s in &style_names {
        match style_vocab.get(s) {
            Some(i) => style_idx.push(i),
            None => {
                if !unknown.contains(s) {
                    unknown.push(s.clone());
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Vocabulary(unknown));
    }
    let ternary = Array2::from_shape_vec((ids.len(), m), values).expect("row lengths checked");
    GroundTruthSet::new(ids, style_idx, style_vocab, elements, ternary)
}

pub fn write_ground_truth_csv<W: Write>(mut w: W, gt: &GroundTruthSet) -> Result<()> {
    write!(w, "painting_id,style")?;
    for e in gt.elements.names() {
        write!(w, ",{e}")?;
    }
    writeln!(w)?;
    for (r, row) in gt.ternary.rows().into_iter().enumerate() {
        write!(w, "{},{}", gt.ids[r], gt.style_vocab.name(gt.styles[r]))?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DEFAULT_ELEMENTS;
    use crate::domain::DEFAULT_STYLES;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn minimal_embedding_table() {
        let t = parse_embedding_table("a 1.0 2.0\nb 3.0 4.0".as_bytes()).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("B").unwrap().to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn ragged_embedding_reports_line() {
        let err = parse_embedding_table("a 1.0 2.0\nb 3.0 4.0 5.0".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_embedding_token() {
        let err = parse_embedding_table("a 1 2\nA 3 4\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn catalog_fixture_lookups_succeed() {
        let mut text = String::new();
        for (i, w) in DEFAULT_ELEMENTS.iter().chain(DEFAULT_STYLES.iter()).enumerate() {
            text.push_str(&format!("{w} {} {}\n", i as f64, -(i as f64)));
        }
        let t = parse_embedding_table(text.as_bytes()).unwrap();
        for w in DEFAULT_ELEMENTS.iter().chain(DEFAULT_STYLES.iter()) {
            assert!(t.get(w).is_some(), "{w}");
        }
    }

    #[test]
    fn empty_feature_file_accepted() {
        let mut buf = Vec::new();
        write_features(&mut buf, &Matrix::zeros((0, 7))).unwrap();
        let styles = Vocabulary::default_styles();
        let ds = read_feature_dataset(buf.as_slice(), "".as_bytes(), &styles).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.dim(), 7);
    }

    #[test]
    fn unknown_label_is_named() {
        let mut buf = Vec::new();
        write_features(&mut buf, &Matrix::zeros((1, 2))).unwrap();
        let styles = Vocabulary::default_styles();
        let err = read_feature_dataset(buf.as_slice(), "Cubizm\n".as_bytes(), &styles).unwrap_err();
        match err {
            Error::Vocabulary(names) => assert_eq!(names, vec!["Cubizm".to_string()]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn label_count_mismatch() {
        let mut buf = Vec::new();
        write_features(&mut buf, &Matrix::zeros((2, 2))).unwrap();
        let styles = Vocabulary::default_styles();
        let err = read_feature_dataset(buf.as_slice(), "cubism\n".as_bytes(), &styles).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_features(&mut buf, &Matrix::zeros((1, 1))).unwrap();
        buf[3] = b'2';
        assert!(matches!(read_features(buf.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn g_csv_round_trip() {
        let g = CategoryAttributeMatrix::new(
            array![[0.1, -2.5], [1e-17, 3.0], [0.0, 1.0 / 3.0]],
            Vocabulary::new(["flat", "bumpy", "calm"]).unwrap(),
            Vocabulary::new(["cubism", "rococo"]).unwrap(),
            Provenance::External,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_g_csv(&mut buf, &g).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("element,cubism,rococo\nflat,0.1,-2.5\n"));
        let back = read_g_csv(buf.as_slice()).unwrap();
        assert_eq!(back.g, g.g);
        assert_eq!(back.elements, g.elements);
    }

    #[test]
    fn g_csv_rejects_bad_header() {
        assert!(read_g_csv("elemant,a,b\nx,1,2\n".as_bytes()).is_err());
        assert!(matches!(
            read_g_csv("element,a,b\nx,1\n".as_bytes()),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn ground_truth_csv_round_trip() {
        let text = "painting_id,style,flat,calm\np1,cubism,1,-1\np2,rococo,0,1\n";
        let gt = read_ground_truth_csv(text.as_bytes(), None).unwrap();
        assert_eq!(gt.ternary, array![[1i8, -1], [0, 1]]);
        assert_eq!(gt.style_vocab.names(), &["cubism".to_string(), "rococo".to_string()]);
        let mut out = Vec::new();
        write_ground_truth_csv(&mut out, &gt).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn ground_truth_csv_rejects_bad_cell() {
        let text = "painting_id,style,flat\np1,cubism,2\n";
        assert!(matches!(
            read_ground_truth_csv(text.as_bytes(), None),
            Err(Error::Format { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn feature_round_trip_is_exact(
            k in 1usize..6, d in 1usize..8, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // Values representable in f32 survive bit-identically.
            let m = Array2::from_shape_fn((k, d), |_| (rng.random::<f32>() * 10.0 - 5.0) as f64);
            let mut buf = Vec::new();
            write_features(&mut buf, &m).unwrap();
            let back = read_features(buf.as_slice()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn any_header_mutation_is_rejected(
            k in 1usize..5, d in 1usize..5, pos in 0usize..12, flip in 1u8..=255
        ) {
            let mut buf = Vec::new();
            write_features(&mut buf, &Matrix::zeros((k, d))).unwrap();
            buf[pos] ^= flip;
            prop_assert!(read_features(buf.as_slice()).is_err());
        }
    }
}
