use std::fs;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use nesphere::alignment::{
    load_lexicon, procrustes, train_adversarial, transform_hypersphere, translation_accuracy, AdversarialConfig,
    AlignmentMap, TranslationAccuracy,
};
use nesphere::corpus::{entity_prf, TaggedCorpus};
use nesphere::dictionary::{NeDictionary, NeType};
use nesphere::embeddings::{project as pca_project, EmbeddingSpace, LabelledPoint};
use nesphere::features::{compute_stats, featurize_corpus, sphere_file_name, HsFeatureVector, SphereSet};
use nesphere::hypersphere::{CenterMethod, Hypersphere, PrfReport, SphereType, Universe};
use nesphere::tagger::{build_features, prepare_instances, train, CrfModel, FeatureSpec, TrainConfig};
use nesphere::{Error, Result};

use crate::table::Table;
use crate::{
    AlignArgs, AlignMode, Center, EmbeddingArgs, FeaturizeArgs, FitArgs, ProjectArgs, TagEvalArgs, TagTrainArgs,
    TransferArgs,
};

fn load_space(args: &EmbeddingArgs) -> Result<EmbeddingSpace> {
    let space = EmbeddingSpace::load(&args.embeddings, args.limit)?.with_lowercase_fallback(args.lowercase);
    if space.duplicates() > 0 {
        warn!(
            "{}: {} duplicate tokens ignored",
            args.embeddings.display(),
            space.duplicates()
        );
    }
    Ok(space)
}

fn load_plain(path: &Path, limit: Option<usize>, lowercase: bool) -> Result<EmbeddingSpace> {
    load_space(&EmbeddingArgs {
        embeddings: path.to_path_buf(),
        limit,
        lowercase,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    body(&mut buf)
        .and_then(|_| fs::write(path, buf))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn fixed(v: f64) -> String {
    format!("{v:.4}")
}

fn center_method(c: Center) -> CenterMethod {
    match c {
        Center::Mean => CenterMethod::Mean,
        Center::Median => CenterMethod::Median,
    }
}

#[derive(Debug, Serialize)]
struct FitRow {
    ne_type: SphereType,
    radius: f64,
    dictionary_entries: usize,
    out_of_vocabulary: usize,
    #[serde(flatten)]
    report: PrfReport,
}

#[derive(Debug, Serialize)]
struct FitReport {
    vocabulary: usize,
    dim: usize,
    spheres: Vec<FitRow>,
}

pub fn fit(args: &FitArgs, out: &Path) -> Result<()> {
    let space = load_space(&args.embeddings)?;
    let dictionary = NeDictionary::load(&args.dictionary)?;
    let resolved = dictionary.resolve(&space);
    let mut rows = Vec::new();
    for &t in &args.types {
        let universe = Universe::for_dictionary(&space, &resolved, t);
        let (sphere, report) = Hypersphere::fit(t, &universe, center_method(args.center))?;
        sphere.save(out.join(sphere_file_name(t)))?;
        let covered = NeType::ALL.into_iter().filter(|n| t.covers(*n));
        let (entries, oov) = covered.fold((0, 0), |(e, o), n| (e + dictionary.count(n), o + resolved.of(n).oov));
        rows.push(FitRow {
            ne_type: t,
            radius: sphere.radius,
            dictionary_entries: entries,
            out_of_vocabulary: oov,
            report,
        });
    }
    let mut table = Table::new(&["type", "radius", "precision", "recall", "F1", "entries", "oov"]);
    for r in &rows {
        table.row(vec![
            r.ne_type.to_string(),
            fixed(r.radius),
            fixed(r.report.precision),
            fixed(r.report.recall),
            fixed(r.report.f1),
            r.dictionary_entries.to_string(),
            r.out_of_vocabulary.to_string(),
        ]);
    }
    print!("{}", table.render());
    write_json(
        &out.join("fit_report.json"),
        &FitReport {
            vocabulary: space.len(),
            dim: space.dim(),
            spheres: rows,
        },
    )
}

#[derive(Debug, Serialize)]
struct AlignReport {
    mode: &'static str,
    source_dim: usize,
    target_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    training_pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<AdversarialConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_critic_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_at_1: Option<TranslationAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy_at_k: Option<(usize, TranslationAccuracy)>,
}

pub fn align(args: &AlignArgs, seed: u64, out: &Path) -> Result<()> {
    let source = load_plain(&args.source, args.limit, false)?;
    let target = load_plain(&args.target, args.limit, false)?;
    if args.k == 0 {
        return Err(Error::Usage("--k must be positive".into()));
    }
    let mut report = AlignReport {
        mode: "",
        source_dim: source.dim(),
        target_dim: target.dim(),
        training_pairs: None,
        config: None,
        final_critic_loss: None,
        accuracy_at_1: None,
        accuracy_at_k: None,
    };
    let map = match args.mode {
        AlignMode::Procrustes => {
            report.mode = "procrustes";
            let Some(lexicon) = &args.lexicon else {
                return Err(Error::Usage("procrustes mode needs --lexicon".into()));
            };
            if source.dim() != target.dim() {
                return Err(Error::Usage(format!(
                    "procrustes needs equal dimensions, got {} and {}",
                    source.dim(),
                    target.dim()
                )));
            }
            let pairs: Vec<(&[f64], &[f64])> = load_lexicon(lexicon)?
                .iter()
                .filter_map(|(s, t)| Some((source.lookup(s)?, target.lookup(t)?)))
                .collect();
            report.training_pairs = Some(pairs.len());
            let mut map = procrustes(&pairs)?;
            map.source_tag = source.language_tag().to_string();
            map.target_tag = target.language_tag().to_string();
            map
        }
        AlignMode::Adversarial => {
            report.mode = "adversarial";
            let cfg = AdversarialConfig {
                critic_hidden_size: args.critic_hidden_size,
                clip_value: args.clip_value,
                steps: args.steps,
                critic_steps_per_generator_step: args.critic_steps,
                learning_rate: args.learning_rate,
                batch_size: args.batch_size,
                seed,
                normalize_inputs: args.normalize_inputs,
                orthogonality: args.orthogonality,
            };
            info!("adversarial training for {} steps", cfg.steps);
            let map = train_adversarial(&source, &target, &cfg)?;
            report.config = Some(cfg);
            report.final_critic_loss = map.training.map(|t| t.final_critic_loss);
            map
        }
    };
    map.save(out.join("map.json"))?;

    if let Some(path) = args.eval_lexicon.as_ref().or(args.lexicon.as_ref()) {
        let lexicon = load_lexicon(path)?;
        report.accuracy_at_1 = Some(translation_accuracy(&map, &lexicon, &source, &target, 1)?);
        if args.k > 1 {
            report.accuracy_at_k = Some((args.k, translation_accuracy(&map, &lexicon, &source, &target, args.k)?));
        }
    }
    let mut table = Table::new(&["mode", "shape", "acc@1", "acc@k", "evaluated", "skipped"]);
    let acc = report.accuracy_at_1;
    table.row(vec![
        report.mode.to_string(),
        format!("{}x{}", map.rows, map.cols),
        acc.map_or("-".into(), |a| fixed(a.accuracy)),
        report
            .accuracy_at_k
            .map_or("-".into(), |(k, a)| format!("{} (k={k})", fixed(a.accuracy))),
        acc.map_or("-".into(), |a| a.evaluated.to_string()),
        acc.map_or("-".into(), |a| a.skipped.to_string()),
    ]);
    print!("{}", table.render());
    write_json(&out.join("align_report.json"), &report)
}

#[derive(Debug, Serialize)]
struct TransferReport {
    ne_type: SphereType,
    source_radius: f64,
    transferred_radius: f64,
    scale_sample: usize,
    transferred: PrfReport,
    native_radius: f64,
    native: PrfReport,
    /// Transferred F1 over natively fitted F1; absent when the native F1 is 0.
    f_ratio: Option<f64>,
}

pub fn transfer(args: &TransferArgs, out: &Path) -> Result<()> {
    let map = AlignmentMap::load(&args.map)?;
    let sphere = Hypersphere::load(&args.sphere)?;
    let source = load_plain(&args.source, args.limit, false)?;
    let target = load_plain(&args.target, args.limit, args.lowercase)?;
    if sphere.dim() != map.source_dim() || source.dim() != map.source_dim() || target.dim() != map.target_dim() {
        return Err(Error::Usage(format!(
            "map is {}x{} but sphere is {}-D, source {}-D, target {}-D",
            map.rows,
            map.cols,
            sphere.dim(),
            source.dim(),
            target.dim()
        )));
    }
    let mut sample: Vec<&[f64]> = Vec::new();
    for (_, v) in source.iter() {
        if sphere.contains(v)? {
            sample.push(v);
        }
    }
    if sample.is_empty() {
        warn!("no source word lies inside the sphere; estimating the radius scale from the whole vocabulary");
        sample = source.iter().map(|(_, v)| v).collect();
    }
    let moved = transform_hypersphere(&map, &sphere, &sample)?;
    let dictionary = NeDictionary::load(&args.target_dictionary)?;
    let resolved = dictionary.resolve(&target);
    let universe = Universe::for_dictionary(&target, &resolved, sphere.ne_type);
    let transferred = moved.evaluate(&universe)?;
    let (native_sphere, native) = Hypersphere::fit(sphere.ne_type, &universe, CenterMethod::Mean)?;
    let report = TransferReport {
        ne_type: sphere.ne_type,
        source_radius: sphere.radius,
        transferred_radius: moved.radius,
        scale_sample: sample.len(),
        transferred,
        native_radius: native_sphere.radius,
        native,
        f_ratio: (native.f1 > 0.0).then(|| transferred.f1 / native.f1),
    };
    moved.save(out.join(sphere_file_name(sphere.ne_type)))?;
    let mut table = Table::new(&[
        "type", "R source", "R target", "F target", "R native", "F native", "F-ratio",
    ]);
    table.row(vec![
        report.ne_type.to_string(),
        fixed(report.source_radius),
        fixed(report.transferred_radius),
        fixed(report.transferred.f1),
        fixed(report.native_radius),
        fixed(report.native.f1),
        report.f_ratio.map_or("-".into(), fixed),
    ]);
    print!("{}", table.render());
    write_json(&out.join("transfer_report.json"), &report)
}

pub fn featurize(args: &FeaturizeArgs, out: &Path) -> Result<()> {
    let space = load_space(&args.embeddings)?;
    let spheres = SphereSet::load_dir(&args.spheres)?;
    let stats = compute_stats(&space, &spheres)?;
    let corpus = TaggedCorpus::load(&args.corpus)?;
    let features = featurize_corpus(&corpus, &space, &spheres, &stats);
    features.save(out.join("features.tsv"))?;
    write_json(&out.join("stats.json"), &stats)?;
    let mut table = Table::new(&["type", "mean", "std"]);
    for t in NeType::ALL {
        let s = stats.get(t);
        table.row(vec![t.to_string(), fixed(s.mean), fixed(s.std_dev)]);
    }
    print!("{}", table.render());
    println!("{} tokens featurized", features.rows.len());
    Ok(())
}

fn hypersphere_rows(
    spheres: Option<&Path>,
    space: &EmbeddingSpace,
    corpus: &TaggedCorpus,
) -> Result<Option<Vec<Vec<HsFeatureVector>>>> {
    let Some(dir) = spheres else {
        return Ok(None);
    };
    let spheres = SphereSet::load_dir(dir)?;
    let stats = compute_stats(space, &spheres)?;
    Ok(Some(featurize_corpus(corpus, space, &spheres, &stats).by_sentence()))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    hypersphere_block: bool,
    parameters: usize,
    config: TrainConfig,
    epoch_mean_log_likelihood: Vec<f64>,
    training: PrfReport,
}

pub fn tag_train(args: &TagTrainArgs, seed: u64, out: &Path) -> Result<()> {
    let space = load_space(&args.embeddings)?;
    let corpus = TaggedCorpus::load(&args.corpus)?;
    if corpus.repairs() > 0 {
        warn!("{} orphan inside tags rewritten as begin tags", corpus.repairs());
    }
    let hs = hypersphere_rows(args.spheres.as_deref(), &space, &corpus)?;
    let model = CrfModel::new(corpus.tag_set().to_vec(), FeatureSpec::new(space.dim(), hs.is_some()))?;
    let instances = prepare_instances(&model, &corpus, Some(&space), hs.as_deref())?;
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        l2_strength: args.l2,
        seed,
        shuffle: !args.no_shuffle,
        batch_size: args.batch_size,
    };
    let (model, report) = train(model, &instances, &config)?;
    model.save(out.join(&args.model_name))?;
    let training = nesphere::tagger::evaluate_ner(&model, &corpus, &instances)?;

    let mut table = Table::new(&["epoch", "mean log p(y|x)"]);
    for (i, ll) in report.epoch_mean_log_likelihood.iter().enumerate() {
        table.row(vec![(i + 1).to_string(), fixed(*ll)]);
    }
    print!("{}", table.render());
    println!("training entity F1 {}", fixed(100.0 * training.f1));
    let stem = Path::new(&args.model_name)
        .file_stem()
        .map_or("model".into(), |s| s.to_string_lossy().into_owned());
    write_json(
        &out.join(format!("{stem}_train_report.json")),
        &TrainSummary {
            hypersphere_block: hs.is_some(),
            parameters: model.parameter_count(),
            config,
            epoch_mean_log_likelihood: report.epoch_mean_log_likelihood,
            training,
        },
    )
}

/// Relative error-rate reduction between two F1 scores on the percentage scale.
pub fn error_rate_reduction(f_old: f64, f_new: f64) -> Option<f64> {
    (f_old < 100.0).then(|| (f_new - f_old) / (100.0 - f_old) * 100.0)
}

fn score_model(
    model: &CrfModel,
    space: &EmbeddingSpace,
    corpus: &TaggedCorpus,
    hs: Option<&[Vec<HsFeatureVector>]>,
) -> Result<PrfReport> {
    if model.feature_spec.hypersphere && hs.is_none() {
        return Err(Error::Usage(
            "the model uses hypersphere features; pass --spheres".into(),
        ));
    }
    let predicted = corpus
        .sentences()
        .par_iter()
        .enumerate()
        .map(|(i, tokens)| {
            let rows = hs.map(|h| h[i].as_slice());
            model.predict(&build_features(tokens, Some(space), rows, &model.feature_spec)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(entity_prf(corpus.tags(), &predicted))
}

#[derive(Debug, Serialize)]
struct EvalReport {
    baseline: PrfReport,
    baseline_f1_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    enhanced: Option<PrfReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    enhanced_f1_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_rate_reduction: Option<f64>,
}

pub fn tag_eval(args: &TagEvalArgs, out: &Path) -> Result<()> {
    let space = load_space(&args.embeddings)?;
    let corpus = TaggedCorpus::load(&args.corpus)?;
    let hs = hypersphere_rows(args.spheres.as_deref(), &space, &corpus)?;
    let baseline = score_model(&CrfModel::load(&args.baseline)?, &space, &corpus, hs.as_deref())?;
    let enhanced = match &args.enhanced {
        Some(path) => Some(score_model(&CrfModel::load(path)?, &space, &corpus, hs.as_deref())?),
        None => None,
    };
    let base_pct = 100.0 * baseline.f1;
    let enhanced_pct = enhanced.map(|r| 100.0 * r.f1);
    let err = enhanced_pct.and_then(|e| error_rate_reduction(base_pct, e));

    let mut table = Table::new(&["model", "precision", "recall", "F1", "ERR"]);
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    table.row(vec![
        "baseline".into(),
        pct(baseline.precision),
        pct(baseline.recall),
        pct(baseline.f1),
        "-".into(),
    ]);
    if let Some(e) = enhanced {
        table.row(vec![
            "+hypersphere".into(),
            pct(e.precision),
            pct(e.recall),
            pct(e.f1),
            err.map_or("-".into(), |v| format!("({v:.1})")),
        ]);
    }
    print!("{}", table.render());
    write_json(
        &out.join("eval_report.json"),
        &EvalReport {
            baseline,
            baseline_f1_percent: base_pct,
            enhanced,
            enhanced_f1_percent: enhanced_pct,
            error_rate_reduction: err,
        },
    )
}

pub fn project(args: &ProjectArgs, out: &Path) -> Result<()> {
    let space = load_space(&args.embeddings)?;
    let points: Vec<LabelledPoint> = match &args.dictionary {
        Some(path) => {
            let resolved = NeDictionary::load(path)?.resolve(&space);
            NeType::ALL
                .iter()
                .flat_map(|t| {
                    resolved.of(*t).entities.iter().map(move |e| LabelledPoint {
                        token: e.surface.clone(),
                        label: t.to_string(),
                        vector: e.vector.clone(),
                    })
                })
                .collect()
        }
        None => space
            .iter()
            .map(|(token, v)| LabelledPoint {
                token: token.to_string(),
                label: "word".into(),
                vector: v.to_vec(),
            })
            .collect(),
    };
    let projected = pca_project(&points, usize::from(args.dims))?;
    write_with(&out.join("projection.csv"), |buf| projected.write_csv(buf))?;
    let mut table = Table::new(&["axis", "variance"]);
    for (i, v) in projected.explained_variance.iter().enumerate() {
        table.row(vec![(i + 1).to_string(), fixed(*v)]);
    }
    print!("{}", table.render());
    println!("{} points projected", projected.rows.len());
    Ok(())
}
