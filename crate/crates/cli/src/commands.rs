use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use proxylearn::domain::io::{
    parse_embedding_table, read_feature_dataset, read_features, read_g_csv, read_ground_truth_csv, read_vocabulary,
    write_g_csv,
};
use proxylearn::domain::{CategoryAttributeMatrix, GroundTruthSet, Vocabulary};
use proxylearn::eval::{evaluate, random_baseline, rank_table, EvalOptions};
use proxylearn::gmatrix::{estimate_g_from_embeddings, estimate_g_from_ground_truth, Variant};
use proxylearn::linear::{fit_eszsl, fit_pca_proxy};
use proxylearn::nn::{read_checkpoint, write_checkpoint, Checkpoint, ModelKind, TrainConfig};
use proxylearn::proxy::{
    eszsl_checkpoint, pca_checkpoint, select_by_validation, sparse_code_batch, train_deep_proxy, train_logistic,
    train_style_classifier, validation_auc,
};
use proxylearn::synth::{generate_world_with, perturb_g, WorldConfig};
use proxylearn::{Error, Matrix, Result};

use crate::args::*;
use crate::manifest::RunManifest;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::EstimateG(a) => estimate_g(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Rank(a) => rank(a),
        Command::Baseline(a) => baseline(a),
        Command::Synth(a) => synth(a),
        Command::PerturbG(a) => perturb(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes the whole buffer at once so a failed command leaves no partial output.
fn write_file(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn read_g(path: &Path) -> Result<CategoryAttributeMatrix> {
    read_g_csv(open(path)?)
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    read_vocabulary(open(path)?)
}

fn estimate_g(a: EstimateGArgs) -> Result<()> {
    let mut manifest = RunManifest::new("estimate-g", &a, Some(a.seed))?;
    let g = if let Some(path) = &a.embeddings {
        let (Some(el), Some(st)) = (&a.elements, &a.styles) else {
            return Err(usage("--embeddings needs --elements and --styles"));
        };
        manifest.input("embeddings", path)?.input("elements", el)?.input("styles", st)?;
        let table = parse_embedding_table(open(path)?)?;
        estimate_g_from_embeddings(&table, &read_vocab(el)?, &read_vocab(st)?)?
    } else {
        let path = a.ground_truth.as_ref().expect("clap enforces one source");
        manifest.input("ground_truth", path)?;
        let styles = match &a.styles {
            Some(st) => {
                manifest.input("styles", st)?;
                Some(read_vocab(st)?)
            }
            None => None,
        };
        let gt = read_ground_truth_csv(open(path)?, styles.as_ref())?;
        estimate_g_from_ground_truth(&gt, a.per_style, a.seed)?
    };
    write_file(&a.out, |w| write_g_csv(w, &g))?;
    manifest.write_beside(&a.out)
}

enum Method {
    Sparse,
    Logistic,
    Pca,
    Eszsl,
    DeepProxy(Variant),
}

fn parse_variant(name: &str) -> Result<Variant> {
    match name {
        "plain" => Ok(Variant::Plain),
        "svd" => Ok(Variant::Svd),
        "offset" => Ok(Variant::Offset),
        other => Err(usage(format!("unknown variant `{other}` (plain | svd | offset)"))),
    }
}

fn parse_method(method: &str, variant: Option<&str>) -> Result<Method> {
    let m = match method {
        "sparse" => Method::Sparse,
        "logistic" => Method::Logistic,
        "pca" => Method::Pca,
        "eszsl" => Method::Eszsl,
        "deep-proxy" => {
            let v = variant.ok_or_else(|| usage("--method deep-proxy needs --variant"))?;
            return Ok(Method::DeepProxy(parse_variant(v)?));
        }
        other => match other.strip_prefix("deep-proxy-") {
            Some(v) => {
                let parsed = parse_variant(v)?;
                if variant.is_some_and(|given| given != v) {
                    return Err(usage(format!("--variant conflicts with --method {other}")));
                }
                return Ok(Method::DeepProxy(parsed));
            }
            None => return Err(usage(format!("unknown method `{other}`"))),
        },
    };
    if variant.is_some() {
        return Err(usage("--variant only applies to deep-proxy methods"));
    }
    Ok(m)
}

struct Validation {
    features: Matrix,
    labels: Array2<bool>,
}

fn read_validation(a: &TrainArgs, g: &CategoryAttributeMatrix, manifest: &mut RunManifest) -> Result<Option<Validation>> {
    let (Some(fp), Some(gp)) = (&a.val_features, &a.val_ground_truth) else {
        return Ok(None);
    };
    manifest.input("val_features", fp)?.input("val_ground_truth", gp)?;
    let features = read_features(open(fp)?)?;
    let gt = read_ground_truth_csv(open(gp)?, None)?;
    if gt.elements.names() != g.elements.names() {
        return Err(Error::Data("validation ground-truth elements differ from the rows of G".into()));
    }
    if gt.len() != features.nrows() {
        return Err(Error::Data(format!(
            "{} validation feature rows but {} ground-truth rows",
            features.nrows(),
            gt.len()
        )));
    }
    Ok(Some(Validation { features, labels: gt.binary() }))
}

fn grid(values: &[f64], default: f64) -> Vec<f64> {
    if values.is_empty() {
        vec![default]
    } else {
        values.to_vec()
    }
}

/// Fits the single candidate directly, or every candidate with selection by
/// validation mean AUC.
fn choose<C: std::fmt::Debug, T>(
    candidates: &[C],
    val: Option<&Validation>,
    mut fit: impl FnMut(&C) -> Result<T>,
    mut attributes: impl FnMut(&T, ArrayView2<f64>) -> Result<Matrix>,
) -> Result<T> {
    if let [only] = candidates {
        return fit(only);
    }
    let val = val.ok_or_else(|| {
        usage(format!(
            "{} hyperparameter candidates need --val-features and --val-ground-truth",
            candidates.len()
        ))
    })?;
    let sel = select_by_validation(candidates, &mut fit, |m| {
        validation_auc(attributes(m, val.features.view())?.view(), val.labels.view())
    })?;
    for (c, s) in candidates.iter().zip(&sel.scores) {
        println!("candidate {c:?}: validation mean AUC {s}");
    }
    println!("selected {:?}", candidates[sel.best_index]);
    Ok(sel.best)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::new("train", &a, Some(a.seed))?;
    let method = parse_method(&a.method, a.variant.as_deref())?;
    manifest.input("features", &a.features)?.input("labels", &a.labels)?.input("g", &a.g)?;
    let g = read_g(&a.g)?;
    let data = read_feature_dataset(open(&a.features)?, open(&a.labels)?, &g.styles)?;
    let val = read_validation(&a, &g, &mut manifest)?;
    let o = &a.optimizer;
    let base = TrainConfig {
        batch: o.batch,
        steps: o.steps,
        lr: o.lr,
        momentum: o.momentum,
        decay: o.decay,
        decay_epochs: o.decay_epochs,
        seed: a.seed,
        hidden: o.hidden.clone(),
        pre_shift: o.pre_shift,
        ..TrainConfig::default()
    };
    base.validate()?;

    let checkpoint: Checkpoint = match method {
        Method::DeepProxy(variant) => choose(
            &grid(&a.lambda, 0.0),
            val.as_ref(),
            |&lambda| train_deep_proxy(&data, &g, variant, &TrainConfig { lambda, ..base.clone() }),
            |m, x| m.predict_attributes(x),
        )?
        .to_checkpoint(),
        Method::Logistic => choose(
            &grid(&a.lambda_l, 0.0),
            val.as_ref(),
            |&lambda_l| train_logistic(&data, &g, &TrainConfig { lambda_l, ..base.clone() }),
            |m, x| m.predict_attributes(x),
        )?
        .to_checkpoint(),
        Method::Eszsl => {
            let pairs: Vec<(f64, f64)> = grid(&a.lambda1, 1.0)
                .into_iter()
                .flat_map(|l1| grid(&a.lambda2, 1.0).into_iter().map(move |l2| (l1, l2)))
                .collect();
            let model = choose(
                &pairs,
                val.as_ref(),
                |&(l1, l2)| fit_eszsl(&data, &g, l1, l2),
                |m, x| m.predict_batch(x),
            )?;
            eszsl_checkpoint(&model)
        }
        Method::Pca => pca_checkpoint(&fit_pca_proxy(&data, a.variance_target)?, &g)?,
        Method::Sparse => {
            let classifier = train_style_classifier(&data, &base)?;
            let lambdas = grid(&a.lambda_s, 0.0);
            let lambda_s = choose(
                &lambdas,
                val.as_ref(),
                |&l| Ok(l),
                |&l, x| sparse_code_batch(classifier.predict_styles(x)?.view(), &g, l),
            )?;
            Checkpoint {
                kind: ModelKind::StyleClassifier,
                model: classifier.mlp,
                metadata: vec![("lambda_s".into(), lambda_s)],
            }
        }
    };
    write_file(&a.out, |w| write_checkpoint(w, &checkpoint))?;
    manifest.write_beside(&a.out)
}

fn predict(a: PredictArgs) -> Result<()> {
    let mut manifest = RunManifest::new("predict", &a, None)?;
    manifest.input("model", &a.model)?.input("features", &a.features)?;
    let checkpoint = read_checkpoint(open(&a.model)?)?;
    let features = read_features(open(&a.features)?)?;
    let g = match &a.g {
        Some(p) => {
            manifest.input("g", p)?;
            Some(read_g(p)?)
        }
        None => None,
    };
    let scores = checkpoint.predict(features.view())?;
    let predictions = if checkpoint.kind == ModelKind::StyleClassifier {
        let g = g.as_ref().ok_or_else(|| usage("sparse models need --g at prediction time"))?;
        let lambda_s = a.lambda_s.or(checkpoint.metadata_value("lambda_s")).unwrap_or(0.0);
        sparse_code_batch(scores.view(), g, lambda_s)?
    } else {
        scores
    };
    let names: Vec<String> = match &g {
        Some(g) if g.m() == predictions.ncols() => g.elements.names().to_vec(),
        Some(g) => {
            return Err(Error::Data(format!(
                "model predicts {} attributes but G has {} elements",
                predictions.ncols(),
                g.m()
            )))
        }
        None => (0..predictions.ncols()).map(|j| format!("a{j}")).collect(),
    };
    let ids: Vec<String> = match &a.ground_truth {
        Some(p) => {
            manifest.input("ground_truth", p)?;
            let gt = read_ground_truth_csv(open(p)?, None)?;
            if gt.len() != predictions.nrows() {
                return Err(Error::Data(format!(
                    "{} ground-truth ids for {} feature rows",
                    gt.len(),
                    predictions.nrows()
                )));
            }
            gt.ids
        }
        None => (0..predictions.nrows()).map(|i| i.to_string()).collect(),
    };
    write_file(&a.out, |w| write_predictions(w, &ids, &names, predictions.view()))?;
    manifest.write_beside(&a.out)
}

fn write_predictions<W: Write>(mut w: W, ids: &[String], names: &[String], p: ArrayView2<f64>) -> Result<()> {
    writeln!(w, "id,{}", names.join(","))?;
    for (id, row) in ids.iter().zip(p.outer_iter()) {
        write!(w, "{id}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

struct Predictions {
    ids: Vec<String>,
    names: Vec<String>,
    values: Matrix,
}

fn read_predictions(path: &Path) -> Result<Predictions> {
    let mut lines = open(path)?.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let (_, header) = lines.next().ok_or_else(|| Error::format(1, "missing header"))?;
    let header = header?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") || cols.len() < 2 {
        return Err(Error::format(1, "header must be `id,<element1>,...`"));
    }
    let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let mut cells = line.split(',').map(str::trim);
        ids.push(cells.next().unwrap_or_default().to_string());
        let row: Vec<f64> = cells
            .map(|c| c.parse::<f64>().map_err(|_| Error::format(i + 1, format!("`{c}` is not a number"))))
            .collect::<Result<_>>()?;
        if row.len() != names.len() {
            return Err(Error::format(i + 1, format!("{} values for {} elements", row.len(), names.len())));
        }
        values.extend(row);
    }
    let values = Matrix::from_shape_vec((ids.len(), names.len()), values).expect("row lengths checked");
    Ok(Predictions { ids, names, values })
}

/// Reorders prediction columns to the ground truth's element order.
fn align(p: &Predictions, gt: &GroundTruthSet) -> Result<Matrix> {
    if p.values.nrows() != gt.len() {
        return Err(Error::Data(format!("{} prediction rows but {} ground-truth rows", p.values.nrows(), gt.len())));
    }
    let cols: Vec<usize> = gt
        .elements
        .names()
        .iter()
        .map(|e| {
            p.names
                .iter()
                .position(|n| n == e)
                .ok_or_else(|| Error::Data(format!("predictions have no column for element `{e}`")))
        })
        .collect::<Result<_>>()?;
    Ok(p.values.select(Axis(1), &cols))
}

fn curve_path(out: &Path) -> PathBuf {
    out.with_extension("curve.csv")
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::new("eval", &a, Some(a.seed))?;
    manifest.input("predictions", &a.predictions)?.input("ground_truth", &a.ground_truth)?;
    let preds = read_predictions(&a.predictions)?;
    let gt = read_ground_truth_csv(open(&a.ground_truth)?, None)?;
    let scores = align(&preds, &gt)?;
    let opts = EvalOptions { group_size: a.k_group, baseline_trials: a.trials, seed: a.seed, with_ap: true };
    if a.k_group == 0 {
        return Err(usage("--k-group must be >= 1"));
    }
    let mut report = evaluate(scores.view(), gt.binary().view(), gt.elements.names(), &opts)?;
    report.method = a.method.clone();
    write_file(&a.out, |w| report.write_csv(w))?;
    write_file(&curve_path(&a.out), |w| report.write_curve_csv(w))?;
    match report.mean_auc() {
        Some(m) => println!("mean AUC {m}"),
        None => println!("no evaluable elements"),
    }
    let skipped = report.not_evaluable();
    if !skipped.is_empty() {
        println!("not evaluable (single class): {}", skipped.join(", "));
    }
    manifest.write_beside(&a.out)
}

fn rank(a: RankArgs) -> Result<()> {
    let mut manifest = RunManifest::new("rank", &a, None)?;
    manifest.input("predictions", &a.predictions)?;
    let p = read_predictions(&a.predictions)?;
    let j = p
        .names
        .iter()
        .position(|n| *n == a.element)
        .ok_or_else(|| Error::Data(format!("no element `{}` in predictions", a.element)))?;
    let table = rank_table(p.values.view(), &p.ids, j, a.top)?;
    write_file(&a.out, |w| {
        writeln!(w, "position,top,bottom")?;
        for (i, (t, b)) in table.top.iter().zip(&table.bottom).enumerate() {
            writeln!(w, "{},{t},{b}", i + 1)?;
        }
        Ok(())
    })?;
    manifest.write_beside(&a.out)
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let mut manifest = RunManifest::new("baseline", &a, Some(a.seed))?;
    manifest.input("ground_truth", &a.ground_truth)?;
    if a.trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    let gt = read_ground_truth_csv(open(&a.ground_truth)?, None)?;
    let labels = gt.binary();
    write_file(&a.out, |w| {
        writeln!(w, "element,positives,negatives,random_mean,random_std")?;
        for (j, name) in gt.elements.names().iter().enumerate() {
            let col = labels.column(j).to_vec();
            let pos = col.iter().filter(|&&b| b).count();
            // Same per-element seed stream as `eval`.
            let cell = match random_baseline(&col, a.trials, a.seed.wrapping_add((j as u64) << 32)) {
                Ok(b) => format!("{},{}", b.mean, b.std),
                Err(_) => "NA,NA".into(),
            };
            writeln!(w, "{name},{pos},{},{cell}", col.len() - pos)?;
        }
        Ok(())
    })?;
    manifest.write_beside(&a.out)
}

fn synth(a: SynthArgs) -> Result<()> {
    let manifest = RunManifest::new("synth", &a, Some(a.seed))?;
    let mut config = WorldConfig::new(a.m, a.n, a.k, a.d, a.noise, a.seed);
    config.zero_rows = a.zero_row.clone();
    let world = generate_world_with(&config)?;
    world.write_to_dir(&a.out)?;
    manifest.write_to(&a.out.join("manifest.json"))
}

fn perturb(a: PerturbGArgs) -> Result<()> {
    let mut manifest = RunManifest::new("perturb-g", &a, Some(a.seed))?;
    manifest.input("g", &a.g)?;
    let g = perturb_g(&read_g(&a.g)?, a.magnitude, a.seed)?;
    write_file(&a.out, |w| write_g_csv(w, &g))?;
    manifest.write_beside(&a.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        assert!(matches!(parse_method("deep-proxy-svd", None), Ok(Method::DeepProxy(Variant::Svd))));
        assert!(matches!(parse_method("deep-proxy", Some("offset")), Ok(Method::DeepProxy(Variant::Offset))));
        assert!(matches!(parse_method("deep-proxy-plain", Some("plain")), Ok(Method::DeepProxy(Variant::Plain))));
        assert!(parse_method("deep-proxy-plain", Some("svd")).is_err());
        assert!(parse_method("deep-proxy", None).is_err());
        assert!(parse_method("eszsl", Some("svd")).is_err());
        assert!(parse_method("ridge", None).is_err());
        assert!(matches!(parse_method("sparse", None), Ok(Method::Sparse)));
    }

    #[test]
    fn predictions_round_trip() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let v = Matrix::from_shape_vec((2, 3), vec![0.1, -2.5, 1e-17, 3.0, 0.0, f64::MAX]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_file(&path, |w| write_predictions(w, &ids, &names, v.view())).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!((back.ids, back.names, back.values), (ids, names, v));
    }

    #[test]
    fn curve_path_sits_beside_report() {
        assert_eq!(curve_path(Path::new("out/report.csv")), PathBuf::from("out/report.curve.csv"));
    }
}
