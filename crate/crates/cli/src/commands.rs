use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use scene2obj_core::eval::{
    accuracy_curve_svg, mean_ap, ApVariant, ChanceMode, EvalReport, FrequencySetMap,
    PresenceEval,
};
use scene2obj_core::extract::{extract_corpus, normalize_relation, ExtractConfig};
use scene2obj_core::ingest::{self, Vocabulary};
use scene2obj_core::matrix::{count_relations, load_matrix, matrix_from_annotations, save_matrix, ContextMatrix};
use scene2obj_core::predict::{
    compute_posterior, estimate_alpha, estimate_sigma_with, load_presence, predict_presence,
    sample_table, save_presence, smooth, PresenceScores, SigmaSource,
};
use scene2obj_core::rescore::{
    build_descriptor, detection_ap, index_presence, label_detections, load_models, rescore as rescore_detections,
    save_models, train_rescorer, ContextDescriptor, RescorerModel, TrainOptions,
};
use scene2obj_core::scene::{perfect_source, scores_source, topk_scene_accuracy, Normalization};
use scene2obj_core::synth::{self, SynthConfig};

use crate::{
    ApVariantOpt, AutoOrValue, BuildMatrixArgs, ChanceOpt, E2eArgs, EvaluateArgs, ExtractArgs,
    GtMatrixArgs, NormalizeOpt, PredictArgs, RescoreArgs, RescoreTrainArgs, SceneEvalArgs,
};

fn load_vocab(
    scenes: &Path,
    objects: &Path,
    lemma_map: Option<&PathBuf>,
) -> Result<Vocabulary> {
    let vocab = ingest::load_vocabulary(scenes, objects, lemma_map.map(|p| p.as_path()))?;
    for warning in vocab.warnings() {
        log::warn!("{warning}");
    }
    log::info!(
        "vocabulary: {} scenes, {} objects",
        vocab.scene_count(),
        vocab.object_count()
    );
    Ok(vocab)
}

impl From<NormalizeOpt> for Normalization {
    fn from(opt: NormalizeOpt) -> Self {
        match opt {
            NormalizeOpt::Sum => Normalization::Sum,
            NormalizeOpt::Softmax(t) => Normalization::Softmax(t),
        }
    }
}

impl From<ApVariantOpt> for ApVariant {
    fn from(opt: ApVariantOpt) -> Self {
        match opt {
            ApVariantOpt::All => ApVariant::AllPoint,
            ApVariantOpt::ElevenPoint => ApVariant::ElevenPoint,
        }
    }
}

pub fn extract(args: ExtractArgs, header: &str) -> Result<()> {
    let tags = match &args.tag_map {
        Some(path) => ingest::TagMap::load(path)?,
        None => ingest::TagMap::builtin(),
    };
    let corpus = ingest::load_tagged_corpus(&args.corpus, &tags)?;
    let lemma_map = match &args.lemma_map {
        Some(path) => ingest::load_lemma_map(path)?,
        None => Default::default(),
    };
    let relation_dictionary: Option<HashSet<String>> = match &args.relation_dict {
        Some(path) => Some(
            ingest::load_name_list(path)?
                .iter()
                .map(|name| normalize_relation(name))
                .collect(),
        ),
        None => None,
    };
    let config = ExtractConfig {
        lemma_map,
        relation_dictionary,
    };
    let triples = extract_corpus(&corpus, &config);
    log::info!(
        "extracted {} triples from {} sentences",
        triples.len(),
        corpus.len()
    );
    let records: Vec<_> = triples.into_iter().map(|t| t.into_record()).collect();
    ingest::save_triples(&args.out, &records, Some(header))?;
    Ok(())
}

pub fn build_matrix(args: BuildMatrixArgs, header: &str) -> Result<()> {
    let vocab = load_vocab(&args.scenes, &args.objects, args.lemma_map.as_ref())?;
    let triples = ingest::load_triples(&args.triples)?;
    let mut matrix = count_relations(&triples, &vocab)?;
    if args.self_similarity {
        matrix.apply_self_similarity();
    }
    log::info!(
        "matrix: {} total counts over {} non-zero cells",
        matrix.total(),
        matrix.entries().count()
    );
    save_matrix(&matrix, &args.out, Some(header))?;
    Ok(())
}

pub fn gt_matrix(args: GtMatrixArgs, header: &str) -> Result<()> {
    let vocab = load_vocab(&args.scenes, &args.objects, args.lemma_map.as_ref())?;
    let annotations = ingest::load_annotations(&args.annotations)?;
    let built = matrix_from_annotations(&annotations, &vocab)?;
    if built.skipped_images > 0 {
        log::warn!("{} images had scene labels outside the vocabulary", built.skipped_images);
    }
    if built.unknown_objects > 0 {
        log::warn!("{} object mentions were outside the vocabulary", built.unknown_objects);
    }
    save_matrix(&built.matrix, &args.out, Some(header))?;
    Ok(())
}

/// Run the posterior -> smooth -> sample pipeline on a matrix.
fn build_table(
    matrix: &ContextMatrix,
    alpha: AutoOrValue,
    sigma: AutoOrValue,
    sigma_source: crate::SigmaSourceOpt,
    draws: usize,
    seed: u64,
) -> Result<scene2obj_core::PosteriorTable> {
    let raw = compute_posterior(matrix)?;
    let alpha = match alpha {
        AutoOrValue::Auto => estimate_alpha(matrix)?,
        AutoOrValue::Value(v) => v,
    };
    let smoothed = smooth(&raw, alpha)?;
    let sigma = match sigma {
        AutoOrValue::Auto => {
            let source = match sigma_source {
                crate::SigmaSourceOpt::ProbStd => SigmaSource::ProbStd,
                crate::SigmaSourceOpt::CountStd => SigmaSource::CountStdNormalized,
            };
            estimate_sigma_with(source, matrix, &smoothed)?
        }
        AutoOrValue::Value(v) => v,
    };
    log::info!("alpha = {alpha:.6}, sigma = {sigma:.6}, draws = {draws}");
    Ok(sample_table(&smoothed, sigma, draws, seed)?)
}

pub fn predict(args: PredictArgs, seed: u64, header: &str) -> Result<()> {
    let vocab = load_vocab(&args.scenes, &args.objects, args.lemma_map.as_ref())?;
    let matrix = load_matrix(&args.matrix, &vocab)?;
    let distributions = match (&args.scene_scores, &args.annotations) {
        (Some(path), None) => {
            let rows = ingest::load_scene_scores(path)?;
            scores_source(&rows, &vocab, args.normalize.into())?
        }
        (None, Some(path)) => {
            let annotations = ingest::load_annotations(path)?;
            let (dists, skipped) = perfect_source(&annotations, &vocab);
            if skipped > 0 {
                log::warn!("{skipped} images skipped: scene label outside the vocabulary");
            }
            dists
        }
        _ => bail!("provide exactly one of --scene-scores or --annotations with --perfect-scene"),
    };
    let table = build_table(&matrix, args.alpha, args.sigma, args.sigma_source, args.draws, seed)?;
    let presence: Vec<PresenceScores> = distributions
        .iter()
        .map(|d| predict_presence(&table, d))
        .collect::<scene2obj_core::Result<_>>()?;
    log::info!("scored {} images over {} objects", presence.len(), vocab.object_count());
    save_presence(&args.out, &presence, vocab.objects(), Some(header))?;
    Ok(())
}

pub fn scene_eval(args: SceneEvalArgs) -> Result<()> {
    // objects play no role in scene recognition; a placeholder
    // satisfies the vocabulary shape
    let scene_names = ingest::load_name_list(&args.scenes)?;
    let lemma_map = match &args.lemma_map {
        Some(path) => ingest::load_lemma_map(path)?,
        None => Default::default(),
    };
    let vocab = Vocabulary::new(scene_names, ["unused-object".to_string()], lemma_map)?;
    let rows = ingest::load_scene_scores(&args.scene_scores)?;
    let distributions = scores_source(&rows, &vocab, args.normalize.into())?;
    let annotations = ingest::load_annotations(&args.annotations)?;
    println!("k-best scene recognition rate ({} images)", distributions.len());
    println!("  k    accuracy");
    for &k in &args.k.0 {
        let accuracy = topk_scene_accuracy(&distributions, &annotations, &vocab, k)?;
        println!("  {k:<4} {accuracy:.4}");
    }
    Ok(())
}

enum ClassSelection {
    All,
    FrequencySets(Vec<usize>),
    Named(Vec<String>),
}

fn parse_class_selection(raw: &Option<String>) -> Result<ClassSelection> {
    let Some(raw) = raw else {
        return Ok(ClassSelection::All);
    };
    let pieces: Vec<&str> = raw.split(',').collect();
    if pieces.iter().all(|p| {
        p.strip_prefix("top")
            .map(|n| n.parse::<usize>().is_ok())
            .unwrap_or(false)
    }) {
        let sizes = pieces
            .iter()
            .map(|p| p.strip_prefix("top").unwrap().parse().unwrap())
            .collect();
        return Ok(ClassSelection::FrequencySets(sizes));
    }
    let names = ingest::load_name_list(Path::new(raw))
        .with_context(|| format!("--classes `{raw}` is neither top-N sets nor a readable file"))?;
    Ok(ClassSelection::Named(names))
}

pub fn evaluate(args: EvaluateArgs, seed: u64, header: &str) -> Result<()> {
    let (objects, presence) = load_presence(&args.predictions)?;
    let annotations = ingest::load_annotations(&args.annotations)?;
    let lemma_map = match &args.lemma_map {
        Some(path) => ingest::load_lemma_map(path)?,
        None => Default::default(),
    };
    let (eval, stats) = PresenceEval::assemble(&objects, &lemma_map, &presence, &annotations)?;
    if eval.images.is_empty() {
        bail!("no image has both predictions and annotations");
    }
    let variant: ApVariant = args.ap_variant.into();
    let chance_mode = match args.chance {
        ChanceOpt::Analytic => ChanceMode::Analytic,
        ChanceOpt::Empirical(trials) => ChanceMode::Empirical { seed, trials },
    };

    let aps = eval.all_aps(variant);
    let chance: Vec<Option<f64>> = (0..objects.len())
        .map(|c| eval.chance_ap(c, chance_mode))
        .collect();

    let mut report = EvalReport::default();
    let order = eval.frequency_order();
    match parse_class_selection(&args.classes)? {
        ClassSelection::All => {
            report.set_maps = scene2obj_core::eval::map_over_frequency_sets(
                &eval,
                &aps,
                &[objects.len()],
            );
            for &c in &order {
                report
                    .per_class
                    .push((objects[c].clone(), aps[c], chance[c]));
            }
        }
        ClassSelection::FrequencySets(sizes) => {
            report.set_maps = scene2obj_core::eval::map_over_frequency_sets(&eval, &aps, &sizes);
            for set in &report.set_maps {
                if set.used < set.requested {
                    report.notes.push(format!(
                        "top{} clamped to the {} available classes",
                        set.requested, set.used
                    ));
                }
            }
            let widest = sizes.iter().copied().max().unwrap_or(0).min(order.len());
            for &c in &order[..widest] {
                report
                    .per_class
                    .push((objects[c].clone(), aps[c], chance[c]));
            }
        }
        ClassSelection::Named(names) => {
            let mut selected = Vec::new();
            for name in &names {
                let Some(c) = objects.iter().position(|o| o == name) else {
                    bail!("class `{name}` does not appear in the predictions");
                };
                selected.push(c);
                report
                    .per_class
                    .push((name.clone(), aps[c], chance[c]));
            }
            let subset: Vec<Option<f64>> = selected.iter().map(|&c| aps[c]).collect();
            report.set_maps = vec![FrequencySetMap {
                requested: names.len(),
                used: names.len(),
                defined_classes: subset.iter().filter(|a| a.is_some()).count(),
                map: mean_ap(subset.iter()),
            }];
        }
    }

    for &k in &args.k_list.0 {
        match eval.topk_accuracy(k, args.count_instances) {
            Ok(accuracy) => report.topk.push((k, accuracy)),
            Err(e) => report.notes.push(format!("top-{k}: {e}")),
        }
    }
    if stats.images_without_predictions > 0 {
        report.notes.push(format!(
            "{} annotated images had no predictions",
            stats.images_without_predictions
        ));
    }
    if stats.predictions_without_annotations > 0 {
        report.notes.push(format!(
            "{} predicted images had no annotations",
            stats.predictions_without_annotations
        ));
    }
    if stats.unknown_object_mentions > 0 {
        report.notes.push(format!(
            "{} annotated object mentions were outside the prediction classes",
            stats.unknown_object_mentions
        ));
    }

    print!("{}", report.render());
    if let Some(out) = &args.out {
        let mut text = String::new();
        for line in header.lines() {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
        text.push_str(&report.to_tsv());
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(plot) = &args.plot {
        let svg = accuracy_curve_svg(&[("top-k accuracy", &report.topk)]);
        fs::write(plot, format!("<!-- {header} -->\n{svg}"))
            .with_context(|| format!("writing {}", plot.display()))?;
    }
    Ok(())
}

pub fn rescore_train(args: RescoreTrainArgs, header: &str) -> Result<()> {
    let detections = ingest::load_detections(&args.detections)?;
    let labeled = match &args.gt {
        Some(gt_path) => {
            let ground_truth = ingest::load_detections(gt_path)?;
            label_detections(&detections, &ground_truth, args.iou)
        }
        None => {
            if let Some(unlabeled) = detections.iter().find(|d| d.tp_label.is_none()) {
                bail!(
                    "detection for image `{}` has no tp/fp label; supply --gt or label the file",
                    unlabeled.image_id
                );
            }
            detections.clone()
        }
    };
    let (_, presence) = load_presence(&args.predictions)?;
    let index = index_presence(&presence);
    let options = TrainOptions {
        cost: args.cost,
        tolerance: args.tolerance,
        standardize: !args.no_standardize,
    };
    let classes: BTreeSet<&str> = labeled.iter().map(|d| d.class_name.as_str()).collect();
    let mut models: BTreeMap<String, RescorerModel> = BTreeMap::new();
    for class in classes {
        let mut descriptors: Vec<ContextDescriptor> = Vec::new();
        let mut labels: Vec<bool> = Vec::new();
        for det in labeled.iter().filter(|d| d.class_name == class) {
            descriptors.push(build_descriptor(det, &index)?);
            labels.push(det.tp_label.expect("labels checked above"));
        }
        match train_rescorer(&descriptors, &labels, class, &options) {
            Ok(model) => {
                models.insert(class.to_string(), model);
            }
            Err(e) => log::warn!("skipping class `{class}`: {e}"),
        }
    }
    if models.is_empty() {
        bail!("no class had both true and false positives to train on");
    }
    log::info!("trained {} class models", models.len());
    save_models(&args.out, &models, Some(header))?;
    Ok(())
}

pub fn rescore(args: RescoreArgs, header: &str) -> Result<()> {
    let detections = ingest::load_detections(&args.detections)?;
    let models = load_models(&args.model)?;
    let (_, presence) = load_presence(&args.predictions)?;
    let (rescored, passed_through) = rescore_detections(&detections, &models, &presence)?;
    if passed_through > 0 {
        log::warn!("{passed_through} detections had no model and kept their scores");
    }
    let records: Vec<_> = rescored.into_iter().map(|r| r.detection).collect();
    ingest::save_detections(&args.out, &records, Some(header))?;
    Ok(())
}

pub fn e2e_synthetic(args: E2eArgs, seed: u64, header: &str) -> Result<()> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let dir = args.out.as_path();
    let config = SynthConfig {
        scenes: args.scenes,
        objects: args.objects,
        images: args.images,
        confusable_pairs: args.confusable_pairs,
        seed,
        ..SynthConfig::default()
    };
    let world = synth::generate(&config);
    println!(
        "synthetic world: {} scenes, {} objects, {} images, {} sentences",
        config.scenes,
        config.objects,
        config.images,
        world.corpus.len()
    );

    let path = |name: &str| dir.join(name);
    ingest::save_tagged_corpus(path("corpus.tsv"), &world.corpus, Some(header))?;
    ingest::save_name_list(path("scenes.tsv"), world.vocab.scenes(), Some(header))?;
    ingest::save_name_list(path("objects.tsv"), world.vocab.objects(), Some(header))?;
    ingest::save_lemma_map(path("lemma_map.tsv"), world.vocab.lemma_map(), Some(header))?;
    ingest::save_annotations(path("annotations.tsv"), &world.annotations, Some(header))?;
    let score_rows = synth::classifier_scores(&world, 0.45, 0.6, seed.wrapping_add(1));
    ingest::save_scene_scores(path("scene_scores.tsv"), &score_rows, Some(header))?;
    let bench = synth::detection_benchmark(&world, 5, seed.wrapping_add(2));
    ingest::save_detections(path("detections.tsv"), &bench.detections, Some(header))?;
    ingest::save_detections(path("detection_gt.tsv"), &bench.ground_truth, Some(header))?;

    // pipeline, stage by stage, through the files
    extract(
        ExtractArgs {
            corpus: path("corpus.tsv"),
            lemma_map: Some(path("lemma_map.tsv")),
            relation_dict: None,
            tag_map: None,
            out: path("triples.tsv"),
        },
        header,
    )?;
    build_matrix(
        BuildMatrixArgs {
            triples: path("triples.tsv"),
            scenes: path("scenes.tsv"),
            objects: path("objects.tsv"),
            lemma_map: Some(path("lemma_map.tsv")),
            self_similarity: true,
            out: path("matrix.tsv"),
        },
        header,
    )?;
    gt_matrix(
        GtMatrixArgs {
            annotations: path("annotations.tsv"),
            scenes: path("scenes.tsv"),
            objects: path("objects.tsv"),
            lemma_map: Some(path("lemma_map.tsv")),
            out: path("gt_matrix.tsv"),
        },
        header,
    )?;

    let predict_args = |matrix: &str, out: &str, perfect: bool| PredictArgs {
        matrix: path(matrix),
        scenes: path("scenes.tsv"),
        objects: path("objects.tsv"),
        lemma_map: Some(path("lemma_map.tsv")),
        scene_scores: (!perfect).then(|| path("scene_scores.tsv")),
        annotations: perfect.then(|| path("annotations.tsv")),
        perfect_scene: perfect,
        normalize: NormalizeOpt::Sum,
        alpha: AutoOrValue::Auto,
        sigma: AutoOrValue::Auto,
        sigma_source: crate::SigmaSourceOpt::ProbStd,
        draws: args.draws,
        out: path(out),
    };
    predict(predict_args("matrix.tsv", "predictions_text_perfect.tsv", true), seed, header)?;
    predict(
        predict_args("matrix.tsv", "predictions_text_classifier.tsv", false),
        seed,
        header,
    )?;
    predict(predict_args("gt_matrix.tsv", "predictions_gt_perfect.tsv", true), seed, header)?;

    println!();
    scene_eval(SceneEvalArgs {
        scene_scores: path("scene_scores.tsv"),
        annotations: path("annotations.tsv"),
        scenes: path("scenes.tsv"),
        lemma_map: Some(path("lemma_map.tsv")),
        normalize: NormalizeOpt::Sum,
        k: crate::UsizeList(vec![1, 3, 5]),
    })?;

    let summarize = |name: &str, predictions: &str| -> Result<(f64, Vec<(usize, f64)>)> {
        let (objects, presence) = load_presence(path(predictions))?;
        let (eval, _) = PresenceEval::assemble(
            &objects,
            world.vocab.lemma_map(),
            &presence,
            &world.annotations,
        )?;
        let aps = eval.all_aps(ApVariant::AllPoint);
        let map = mean_ap(aps.iter()).unwrap_or(0.0);
        let mut curve = Vec::new();
        for k in 1..=5 {
            if let Ok(acc) = eval.topk_accuracy(k, false) {
                curve.push((k, acc));
            }
        }
        println!("  {name:<24} mAP {map:.4}");
        Ok((map, curve))
    };

    println!();
    println!("presence prediction (all {} objects)", config.objects);
    let (_, curve) = summarize("text + classifier", "predictions_text_classifier.tsv")?;
    summarize("text + perfect scenes", "predictions_text_perfect.tsv")?;
    summarize("GT distribution", "predictions_gt_perfect.tsv")?;
    {
        let (objects, presence) = load_presence(path("predictions_text_classifier.tsv"))?;
        let (eval, _) = PresenceEval::assemble(
            &objects,
            world.vocab.lemma_map(),
            &presence,
            &world.annotations,
        )?;
        let chance: Vec<Option<f64>> = (0..objects.len())
            .map(|c| eval.chance_ap(c, ChanceMode::Analytic))
            .collect();
        println!("  {:<24} mAP {:.4}", "chance", mean_ap(chance.iter()).unwrap_or(0.0));
    }
    fs::write(path("accuracy_curve.svg"), accuracy_curve_svg(&[("text + classifier", &curve)]))?;

    println!();
    println!("top-k object prediction accuracy (text + classifier)");
    println!("  k    accuracy");
    for (k, acc) in &curve {
        println!("  {k:<4} {acc:.4}");
    }

    rescore_train(
        RescoreTrainArgs {
            detections: path("detections.tsv"),
            gt: Some(path("detection_gt.tsv")),
            predictions: path("predictions_text_classifier.tsv"),
            cost: 1.0,
            tolerance: 0.01,
            no_standardize: false,
            iou: 0.5,
            out: path("rescore_models.tsv"),
        },
        header,
    )?;
    rescore(
        RescoreArgs {
            detections: path("detections.tsv"),
            model: path("rescore_models.tsv"),
            predictions: path("predictions_text_classifier.tsv"),
            out: path("detections_rescored.tsv"),
        },
        header,
    )?;
    let raw = detection_ap(
        &ingest::load_detections(path("detections.tsv"))?,
        &ingest::load_detections(path("detection_gt.tsv"))?,
        0.5,
        ApVariant::AllPoint,
    )?;
    let rescored = detection_ap(
        &ingest::load_detections(path("detections_rescored.tsv"))?,
        &ingest::load_detections(path("detection_gt.tsv"))?,
        0.5,
        ApVariant::AllPoint,
    )?;
    println!();
    println!("detection rescoring over {} classes", bench.classes.len());
    println!(
        "  raw detector mAP      {:.4}",
        mean_ap(raw.values()).unwrap_or(0.0)
    );
    println!(
        "  scene-context mAP     {:.4}",
        mean_ap(rescored.values()).unwrap_or(0.0)
    );
    println!();
    println!("artifacts written to {}", dir.display());
    Ok(())
}
