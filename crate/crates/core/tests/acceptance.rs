//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line and enforcing its time budget. Run with
//! `cargo test -p scene2obj-core --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scene2obj_core::eval::{
    ap_from_labels, average_precision, mean_ap, ApVariant, ChanceMode, PresenceEval,
};
use scene2obj_core::extract::{
    brute_force_longest_match, extract_corpus, match_relation_span, ExtractConfig, Triple,
};
use scene2obj_core::ingest::{ImageAnnotation, LemmaMap, Pos, Sentence, TaggedToken, Vocabulary};
use scene2obj_core::matrix::{count_relations, matrix_from_annotations, ContextMatrix};
use scene2obj_core::predict::{
    compute_posterior, estimate_alpha, estimate_sigma, predict_presence, sample_table, smooth,
    PosteriorTable, PresenceScores, Stage,
};
use scene2obj_core::rescore::{
    build_descriptor, detection_ap, index_presence, label_detections, rescore, train_rescorer,
    ContextDescriptor, RescorerModel, TrainOptions,
};
use scene2obj_core::scene::{perfect_source, scores_source, Normalization};
use scene2obj_core::synth::{self, SynthConfig};

fn criterion(id: &str, budget: Duration, body: impl FnOnce() + UnwindSafe) {
    let start = Instant::now();
    let outcome = catch_unwind(body);
    let elapsed = start.elapsed();
    match outcome {
        Ok(()) if elapsed <= budget => {
            println!("[PASS] criterion {id} ({elapsed:.2?})");
        }
        Ok(()) => {
            println!("[FAIL] criterion {id}: exceeded budget {budget:?} ({elapsed:.2?})");
            panic!("criterion {id} exceeded its time budget");
        }
        Err(cause) => {
            println!("[FAIL] criterion {id} ({elapsed:.2?})");
            resume_unwind(cause);
        }
    }
}

fn tok(surface: &str, pos: Pos) -> TaggedToken {
    TaggedToken::new(surface, pos)
}

#[test]
fn criterion_01_extraction_fidelity() {
    criterion("1: extraction fidelity", Duration::from_secs(1), || {
        let corpus: Vec<Sentence> = vec![
            vec![
                tok("A", Pos::Det),
                tok("car", Pos::Noun),
                tok("drove", Pos::Verb),
                tok("down", Pos::Prep),
                tok("the", Pos::Det),
                tok("street", Pos::Noun),
            ],
            vec![
                tok("Many", Pos::Adj),
                tok("persons", Pos::Noun),
                tok("were", Pos::Verb),
                tok("on", Pos::Prep),
                tok("the", Pos::Det),
                tok("streets", Pos::Noun),
            ],
        ];
        let mut lemma_map = LemmaMap::new();
        lemma_map.insert("persons".into(), "person".into());
        lemma_map.insert("streets".into(), "street".into());
        let triples = extract_corpus(
            &corpus,
            &ExtractConfig {
                lemma_map,
                relation_dictionary: None,
            },
        );
        assert_eq!(
            triples,
            vec![
                Triple {
                    arg1: "car".into(),
                    relation: "drove down".into(),
                    arg2: "street".into(),
                },
                Triple {
                    arg1: "person".into(),
                    relation: "were on".into(),
                    arg2: "street".into(),
                },
            ]
        );
    });
}

#[test]
fn criterion_02_longest_match_oracle() {
    criterion("2: longest-match oracle", Duration::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
        for _ in 0..1000 {
            let len = rng.gen_range(1..=12);
            let sentence: Sentence = (0..len)
                .map(|_| tok("w", Pos::ALL[rng.gen_range(0..Pos::ALL.len())]))
                .collect();
            for index in 0..len {
                let got = match_relation_span(&sentence, index, 0).map(|s| s.end);
                let expected = brute_force_longest_match(&sentence, index);
                assert_eq!(
                    got, expected,
                    "disagreement at index {index} of {:?}",
                    sentence.iter().map(|t| t.pos).collect::<Vec<_>>()
                );
            }
        }
    });
}

fn random_matrix(rng: &mut ChaCha8Rng, max_side: usize) -> ContextMatrix {
    loop {
        let s = rng.gen_range(1..=max_side);
        let o = rng.gen_range(1..=max_side);
        let vocab = Vocabulary::new(
            (0..s).map(|i| format!("s{i}")),
            (0..o).map(|i| format!("o{i}")),
            LemmaMap::new(),
        )
        .unwrap();
        let mut m = ContextMatrix::zeros(vocab);
        let cells = rng.gen_range(1..=(s * o));
        for _ in 0..cells {
            m.add(rng.gen_range(0..s), rng.gen_range(0..o), rng.gen_range(0..4));
        }
        if m.total() > 0 {
            return m;
        }
    }
}

#[test]
fn criterion_03_bayes_prior_consistency() {
    criterion("3: Bayes/prior consistency", Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
        for _ in 0..100 {
            let m = random_matrix(&mut rng, 50);
            let raw = compute_posterior(&m).unwrap();
            let alpha = estimate_alpha(&m).unwrap();
            let smoothed = smooth(&raw, alpha).unwrap();
            let s = raw.scene_count() as f64;
            for table in [&raw, &smoothed] {
                for o in 0..raw.object_count() {
                    let mean: f64 = (0..raw.scene_count())
                        .map(|i| table.value(i, o))
                        .sum::<f64>()
                        / s;
                    assert!(
                        (mean - raw.prior()[o]).abs() < 1e-9,
                        "prior consistency violated: {} vs {}",
                        mean,
                        raw.prior()[o]
                    );
                }
            }
        }
    });
}

#[test]
fn criterion_04_smoothing_and_alpha() {
    criterion("4: smoothing and alpha", Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
        for _ in 0..100 {
            let m = random_matrix(&mut rng, 20);
            // dense singleton-count oracle
            let dense = m.dense();
            let ones = dense
                .iter()
                .flat_map(|row| row.iter())
                .filter(|&&c| c == 1)
                .count();
            let total: u64 = dense.iter().flat_map(|row| row.iter()).sum();
            let expected = ones as f64 / total as f64;
            let alpha = estimate_alpha(&m).unwrap();
            assert_eq!(alpha, expected);
            assert!((0.0..=1.0).contains(&alpha));

            let raw = compute_posterior(&m).unwrap();
            let identity = smooth(&raw, 0.0).unwrap();
            assert_eq!(identity.values(), raw.values());
            let collapsed = smooth(&raw, 1.0).unwrap();
            for s in 0..raw.scene_count() {
                for o in 0..raw.object_count() {
                    assert_eq!(collapsed.value(s, o), raw.prior()[o]);
                }
            }
        }
    });
}

#[test]
fn criterion_05_sampling_statistics() {
    criterion("5: sampling statistics", Duration::from_secs(30), || {
        // 200 entries, all at 0.5 (>= 0.4 so the zero clamp is inert)
        let scenes = 100;
        let objects = 2;
        let smoothed = PosteriorTable::from_parts(
            Stage::Smoothed,
            scenes,
            objects,
            vec![0.5; scenes * objects],
            vec![0.5; objects],
            0.0,
            0.0,
        )
        .unwrap();

        let sigma = 0.1;
        let draws = 10_000;
        let sampled = sample_table(&smoothed, sigma, draws, 0xC5).unwrap();
        let bound = 3.0 * sigma / (draws as f64).sqrt();
        let within = sampled
            .values()
            .iter()
            .filter(|&&v| (v - 0.5).abs() <= bound)
            .count();
        let fraction = within as f64 / (scenes * objects) as f64;
        assert!(
            fraction >= 0.99,
            "only {fraction:.4} of entries within 3 sigma/sqrt(D)"
        );

        // sigma = 0 reproduces the smoothed table bit-exactly
        let frozen = sample_table(&smoothed, 0.0, draws, 0xC5).unwrap();
        assert_eq!(frozen.values(), smoothed.values());

        // fixed seed is bit-exact across thread counts
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample_table(&smoothed, sigma, 50, 0xC5).unwrap());
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| sample_table(&smoothed, sigma, 50, 0xC5).unwrap());
        assert_eq!(one.values(), four.values());
    });
}

#[test]
fn criterion_06_mixture_linearity() {
    criterion("6: mixture linearity", Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
        for round in 0..50 {
            let m = random_matrix(&mut rng, 12);
            let raw = compute_posterior(&m).unwrap();
            let alpha = estimate_alpha(&m).unwrap();
            let smoothed = smooth(&raw, alpha).unwrap();
            let sampled = sample_table(&smoothed, 0.05, 5, round).unwrap();
            let s = sampled.scene_count();

            let mut d1 = vec![0.0f64; s];
            let mut d2 = vec![0.0f64; s];
            d1[rng.gen_range(0..s)] = 1.0;
            d2[rng.gen_range(0..s)] = 1.0;
            let lambda: f64 = rng.gen();
            let mix: Vec<f64> = d1
                .iter()
                .zip(&d2)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let make = |probs: Vec<f64>| scene2obj_core::SceneDistribution {
                image_id: "i".into(),
                probs,
            };
            let pm = predict_presence(&sampled, &make(mix)).unwrap();
            let p1 = predict_presence(&sampled, &make(d1)).unwrap();
            let p2 = predict_presence(&sampled, &make(d2)).unwrap();
            for o in 0..sampled.object_count() {
                let expected = lambda * p1.scores[o] + (1.0 - lambda) * p2.scores[o];
                assert!(
                    (pm.scores[o] - expected).abs() < 1e-12,
                    "linearity violated: {} vs {expected}",
                    pm.scores[o]
                );
            }
        }
    });
}

// Independent AP references for criterion 7.
fn oracle_all_point(labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    // area under the stepwise precision-recall curve
    let mut tp = 0usize;
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for (rank, &l) in labels.iter().enumerate() {
        if l {
            tp += 1;
            let recall = tp as f64 / positives as f64;
            area += (recall - last_recall) * (tp as f64 / (rank + 1) as f64);
            last_recall = recall;
        }
    }
    Some(area)
}

fn oracle_eleven_point(labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut sum = 0.0;
    for level in 0..=10usize {
        // smallest tp reaching recall level/10, by ceiling division
        let tp_needed = (level * positives).div_ceil(10);
        let mut tp = 0usize;
        let mut best = 0.0f64;
        for (rank, &l) in labels.iter().enumerate() {
            if l {
                tp += 1;
            }
            if tp >= tp_needed {
                best = best.max(tp as f64 / (rank + 1) as f64);
            }
        }
        sum += best;
    }
    Some(sum / 11.0)
}

#[test]
fn criterion_07_ap_oracles() {
    criterion("7: AP oracles", Duration::from_secs(30), || {
        // fixed examples: scores 0.9+/0.8-/0.7+
        let items = [("a", 0.9, true), ("b", 0.8, false), ("c", 0.7, true)];
        let ap = average_precision(&items, ApVariant::AllPoint).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15, "all-point {ap} != 5/6");
        let ap11 = average_precision(&items, ApVariant::ElevenPoint).unwrap();
        assert!((ap11 - 28.0 / 33.0).abs() < 1e-15, "11-point {ap11} != 28/33");

        // 200 random ranked lists against the independent oracles
        let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
        for _ in 0..200 {
            let len = rng.gen_range(1..=80);
            let labels: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.3)).collect();
            let positives = labels.iter().filter(|&&l| l).count();
            let got = ap_from_labels(&labels, positives, ApVariant::AllPoint);
            match (got, oracle_all_point(&labels)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (a, b) => assert_eq!(a, b),
            }
            let got11 = ap_from_labels(&labels, positives, ApVariant::ElevenPoint);
            match (got11, oracle_eleven_point(&labels)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (a, b) => assert_eq!(a, b),
            }
        }

        // chance baseline vs Monte-Carlo within 3 standard errors; the
        // list is long so the asymptotic prevalence expectation applies
        for (prevalence, seed) in [(0.1f64, 11u64), (0.5, 12)] {
            let n = 100_000usize;
            let positives = (n as f64 * prevalence) as usize;
            let mut labels = vec![false; n];
            for l in labels.iter_mut().take(positives) {
                *l = true;
            }
            let analytic = scene2obj_core::eval::chance_ap_for_labels(
                &labels,
                0,
                ChanceMode::Analytic,
            )
            .unwrap();
            let trials = 40;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut aps = Vec::with_capacity(trials);
            for _ in 0..trials {
                use rand::seq::SliceRandom;
                labels.shuffle(&mut rng);
                aps.push(ap_from_labels(&labels, positives, ApVariant::AllPoint).unwrap());
            }
            let mean = aps.iter().sum::<f64>() / trials as f64;
            let var = aps.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / (trials - 1) as f64;
            let se = (var / trials as f64).sqrt();
            println!(
                "      chance p={prevalence}: analytic {analytic:.5}, MC {mean:.5}, 3se {:.5}",
                3.0 * se
            );
            assert!(
                (analytic - mean).abs() <= 3.0 * se,
                "prevalence {prevalence}: analytic {analytic} vs MC {mean} (3se = {})",
                3.0 * se
            );
        }
    });
}

/// Run the prediction pipeline on a matrix with D=10 sampling and score
/// every annotated image under the given scene distributions.
fn pipeline_presence(
    matrix: &ContextMatrix,
    distributions: &[scene2obj_core::SceneDistribution],
    seed: u64,
) -> Vec<PresenceScores> {
    let raw = compute_posterior(matrix).unwrap();
    let alpha = estimate_alpha(matrix).unwrap();
    let smoothed = smooth(&raw, alpha).unwrap();
    let sigma = estimate_sigma(matrix, &smoothed).unwrap();
    let sampled = sample_table(&smoothed, sigma, 10, seed).unwrap();
    distributions
        .iter()
        .map(|d| predict_presence(&sampled, d).unwrap())
        .collect()
}

fn presence_map(
    world_vocab: &Vocabulary,
    presence: &[PresenceScores],
    annotations: &[ImageAnnotation],
) -> f64 {
    let (eval, _) = PresenceEval::assemble(
        world_vocab.objects(),
        world_vocab.lemma_map(),
        presence,
        annotations,
    )
    .unwrap();
    let aps = eval.all_aps(ApVariant::AllPoint);
    mean_ap(aps.iter()).unwrap()
}

fn text_matrix(world: &synth::SynthWorld) -> ContextMatrix {
    let triples = extract_corpus(
        &world.corpus,
        &ExtractConfig {
            lemma_map: world.vocab.lemma_map().clone(),
            relation_dictionary: None,
        },
    );
    let records: Vec<_> = triples.into_iter().map(|t| t.into_record()).collect();
    count_relations(&records, &world.vocab).unwrap()
}

#[test]
fn criterion_08_synthetic_upper_bound_ordering() {
    criterion("8: chance < text < GT ordering", Duration::from_secs(60), || {
        let config = SynthConfig {
            seed: 42,
            ..SynthConfig::default()
        };
        let world = synth::generate(&config);
        let (perfect, skipped) = perfect_source(&world.annotations, &world.vocab);
        assert_eq!(skipped, 0);

        let text = text_matrix(&world);
        let text_presence = pipeline_presence(&text, &perfect, 1);
        let text_map = presence_map(&world.vocab, &text_presence, &world.annotations);

        // determinism under the fixed seed
        let again = pipeline_presence(&text, &perfect, 1);
        let text_map_again = presence_map(&world.vocab, &again, &world.annotations);
        assert_eq!(text_map.to_bits(), text_map_again.to_bits());

        let gt = matrix_from_annotations(&world.annotations, &world.vocab)
            .unwrap()
            .matrix;
        let gt_presence = pipeline_presence(&gt, &perfect, 2);
        let gt_map = presence_map(&world.vocab, &gt_presence, &world.annotations);

        let (eval, _) = PresenceEval::assemble(
            world.vocab.objects(),
            world.vocab.lemma_map(),
            &text_presence,
            &world.annotations,
        )
        .unwrap();
        let chance: Vec<Option<f64>> = (0..world.vocab.object_count())
            .map(|c| eval.chance_ap(c, ChanceMode::Analytic))
            .collect();
        let chance_map = mean_ap(chance.iter()).unwrap();

        println!(
            "      mAP: chance {chance_map:.4}, text {text_map:.4}, GT {gt_map:.4}"
        );
        assert!(
            gt_map >= 1.5 * chance_map,
            "GT mAP {gt_map} below 1.5x chance {chance_map}"
        );
        assert!(
            chance_map < text_map && text_map < gt_map,
            "ordering violated: chance {chance_map}, text {text_map}, GT {gt_map}"
        );
    });
}

#[test]
fn criterion_09_soft_scenes_robust_on_confusable_pairs() {
    criterion("9: perfect vs distribution scenes", Duration::from_secs(60), || {
        let config = SynthConfig {
            seed: 7,
            confusable_pairs: true,
            ..SynthConfig::default()
        };
        let world = synth::generate(&config);
        let text = text_matrix(&world);

        let (hard, skipped) = perfect_source(&world.annotations, &world.vocab);
        assert_eq!(skipped, 0);
        let hard_presence = pipeline_presence(&text, &hard, 3);
        let hard_map = presence_map(&world.vocab, &hard_presence, &world.annotations);

        let rows = synth::classifier_scores(&world, 0.5, 0.0, 4);
        let soft = scores_source(&rows, &world.vocab, Normalization::Sum).unwrap();
        let soft_presence = pipeline_presence(&text, &soft, 3);
        let soft_map = presence_map(&world.vocab, &soft_presence, &world.annotations);

        println!("      mAP: one-hot {hard_map:.4}, softened {soft_map:.4}");
        assert!(
            soft_map >= hard_map - 0.02,
            "softened scenes lost more than 0.02 mAP: {soft_map} vs {hard_map}"
        );
    });
}

#[test]
fn criterion_10_rescoring() {
    criterion("10: rescoring", Duration::from_secs(60), || {
        let classes = ["alpha", "beta", "gamma"];
        let images = 40usize;
        let mut rng = ChaCha8Rng::seed_from_u64(0xCA);
        let mut presence = Vec::new();
        let mut ground_truth = Vec::new();
        let mut detections = Vec::new();
        for i in 0..images {
            let image_id = format!("d{i:03}");
            let mut scores = vec![0.0f64; classes.len()];
            for (c, class) in classes.iter().enumerate() {
                let present = (i + c) % 2 == 0;
                // context separates perfectly
                scores[c] = if present { 0.9 } else { 0.1 };
                let offset = 10.0 * c as f64;
                let bbox = scene2obj_core::ingest::BBox::new(
                    10.0 + offset,
                    10.0,
                    50.0 + offset,
                    50.0,
                )
                .unwrap();
                let record = scene2obj_core::ingest::DetectionRecord {
                    image_id: image_id.clone(),
                    class_name: class.to_string(),
                    score: rng.gen::<f64>(), // detector score is pure noise
                    bbox,
                    tp_label: None,
                };
                if present {
                    ground_truth.push(scene2obj_core::ingest::DetectionRecord {
                        score: 1.0,
                        tp_label: None,
                        ..record.clone()
                    });
                }
                detections.push(record);
            }
            presence.push(PresenceScores {
                image_id,
                scores,
            });
        }

        let raw_aps = detection_ap(&detections, &ground_truth, 0.5, ApVariant::AllPoint).unwrap();
        let raw_map = mean_ap(raw_aps.values()).unwrap();

        // train on labels computed by the greedy matcher
        let labeled = label_detections(&detections, &ground_truth, 0.5);
        let index = index_presence(&presence);
        let mut models: BTreeMap<String, RescorerModel> = BTreeMap::new();
        for class in classes {
            let mut descriptors: Vec<ContextDescriptor> = Vec::new();
            let mut labels: Vec<bool> = Vec::new();
            for det in labeled.iter().filter(|d| d.class_name == class) {
                descriptors.push(build_descriptor(det, &index).unwrap());
                labels.push(det.tp_label.unwrap());
            }
            let model =
                train_rescorer(&descriptors, &labels, class, &TrainOptions::default()).unwrap();
            models.insert(class.to_string(), model);
        }
        let (rescored, passed_through) = rescore(&detections, &models, &presence).unwrap();
        assert_eq!(passed_through, 0);
        let rescored_dets: Vec<_> = rescored.iter().map(|r| r.detection.clone()).collect();
        let new_aps =
            detection_ap(&rescored_dets, &ground_truth, 0.5, ApVariant::AllPoint).unwrap();
        let new_map = mean_ap(new_aps.values()).unwrap();
        println!("      detection mAP: raw {raw_map:.4}, rescored {new_map:.4}");
        assert!(
            new_map - raw_map >= 0.10,
            "rescoring improved mAP by {} only",
            new_map - raw_map
        );

        // calibration-only rescoring leaves every per-class AP unchanged
        let mut monotone: BTreeMap<String, RescorerModel> = BTreeMap::new();
        for class in classes {
            monotone.insert(
                class.to_string(),
                RescorerModel::calibration_only(class, 1 + classes.len()),
            );
        }
        let (calibrated, _) = rescore(&detections, &monotone, &presence).unwrap();
        let calibrated_dets: Vec<_> = calibrated.iter().map(|r| r.detection.clone()).collect();
        let cal_aps =
            detection_ap(&calibrated_dets, &ground_truth, 0.5, ApVariant::AllPoint).unwrap();
        for (class, ap) in &raw_aps {
            let a = ap.unwrap();
            let b = cal_aps[class].unwrap();
            assert!(
                (a - b).abs() < 1e-12,
                "calibration-only changed AP of {class}: {a} vs {b}"
            );
        }
    });
}
