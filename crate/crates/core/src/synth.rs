//! Synthetic world generation for the end-to-end demo and the
//! acceptance suite: a known scene-object affinity, annotated images
//! sampled from it, a tagged text corpus whose relation frequencies
//! mirror it, simulated classifier scores, and a detection benchmark.
//!
//! Everything is a deterministic function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{
    DetectionRecord, ImageAnnotation, LemmaMap, Pos, SceneScoreRow, Sentence, TaggedToken,
    Vocabulary, BBox,
};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub scenes: usize,
    pub objects: usize,
    pub images: usize,
    /// Objects strongly associated with each scene.
    pub preferred_per_scene: usize,
    /// Inclusion probability of a preferred object in its scenes.
    pub p_preferred: f64,
    /// Inclusion probability of any other object.
    pub p_background: f64,
    /// Sentences per unit of affinity in the generated corpus.
    pub corpus_scale: f64,
    /// Relative distortion of corpus counts against the true affinity.
    pub corpus_noise: f64,
    /// Probability that a scene-object pair goes unmentioned entirely.
    pub drop_rate: f64,
    /// Fraction of corpus mentions using the plural surface form.
    pub plural_fraction: f64,
    /// Give scene pairs (0,1), (2,3), ... identical object profiles.
    pub confusable_pairs: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 20,
            objects: 100,
            images: 500,
            preferred_per_scene: 8,
            p_preferred: 0.6,
            p_background: 0.02,
            corpus_scale: 30.0,
            corpus_noise: 0.5,
            drop_rate: 0.15,
            plural_fraction: 0.2,
            confusable_pairs: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub vocab: Vocabulary,
    /// True per-scene object inclusion probabilities.
    pub affinity: Vec<Vec<f64>>,
    pub annotations: Vec<ImageAnnotation>,
    pub corpus: Vec<Sentence>,
}

const VERBS: [&str; 5] = ["stood", "sat", "appeared", "remained", "lay"];
const PREPS: [&str; 5] = ["in", "near", "at", "inside", "around"];
const PARTICLES: [&str; 2] = ["out", "up"];
const ADVS: [&str; 2] = ["quietly", "often"];

pub fn generate(config: &SynthConfig) -> SynthWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scene_names: Vec<String> = (0..config.scenes).map(|i| format!("scene{i:02}")).collect();
    let object_names: Vec<String> = (0..config.objects).map(|i| format!("object{i:02}")).collect();
    let mut lemma_map = LemmaMap::new();
    for name in scene_names.iter().chain(&object_names) {
        lemma_map.insert(format!("{name}s"), name.clone());
    }
    let vocab = Vocabulary::new(scene_names.clone(), object_names.clone(), lemma_map)
        .expect("synthetic vocabulary is non-empty");

    let affinity = build_affinity(config, &mut rng);
    let annotations = sample_annotations(config, &affinity, &scene_names, &object_names, &mut rng);
    let corpus = build_corpus(config, &affinity, &scene_names, &object_names, &mut rng);

    SynthWorld {
        config: config.clone(),
        vocab,
        affinity,
        annotations,
        corpus,
    }
}

fn build_affinity(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut affinity: Vec<Vec<f64>> = Vec::with_capacity(config.scenes);
    for s in 0..config.scenes {
        if config.confusable_pairs && s % 2 == 1 {
            let prev = affinity[s - 1].clone();
            affinity.push(prev);
            continue;
        }
        let mut row = vec![config.p_background; config.objects];
        let mut pool: Vec<usize> = (0..config.objects).collect();
        for k in 0..config.preferred_per_scene.min(config.objects) {
            let pick = rng.gen_range(k..pool.len());
            pool.swap(k, pick);
            row[pool[k]] = config.p_preferred;
        }
        affinity.push(row);
    }
    affinity
}

fn sample_annotations(
    config: &SynthConfig,
    affinity: &[Vec<f64>],
    scene_names: &[String],
    object_names: &[String],
    rng: &mut ChaCha8Rng,
) -> Vec<ImageAnnotation> {
    (0..config.images)
        .map(|i| {
            let s = rng.gen_range(0..config.scenes);
            let mut objects = Vec::new();
            for (o, name) in object_names.iter().enumerate() {
                if rng.gen::<f64>() < affinity[s][o] {
                    objects.push(name.clone());
                    // occasional duplicate instance of the same type
                    if rng.gen::<f64>() < 0.15 {
                        objects.push(name.clone());
                    }
                }
            }
            ImageAnnotation {
                image_id: format!("img{i:04}"),
                scene_label: scene_names[s].clone(),
                objects,
            }
        })
        .collect()
}

fn mention(name: &str, config: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    if rng.gen::<f64>() < config.plural_fraction {
        format!("{name}s")
    } else {
        name.to_string()
    }
}

fn build_corpus(
    config: &SynthConfig,
    affinity: &[Vec<f64>],
    scene_names: &[String],
    object_names: &[String],
    rng: &mut ChaCha8Rng,
) -> Vec<Sentence> {
    let mut corpus = Vec::new();
    for (s, scene) in scene_names.iter().enumerate() {
        for (o, object) in object_names.iter().enumerate() {
            let distortion = 1.0 - config.corpus_noise + 2.0 * config.corpus_noise * rng.gen::<f64>();
            let mut count = (config.corpus_scale * affinity[s][o] * distortion).round() as i64;
            if rng.gen::<f64>() < config.drop_rate {
                count = 0;
            }
            for j in 0..count {
                let scene_word = mention(scene, config, rng);
                let object_word = mention(object, config, rng);
                corpus.push(template_sentence(
                    (s + o + j as usize) % 4,
                    &object_word,
                    &scene_word,
                    s + o + j as usize,
                ));
            }
        }
    }
    corpus.extend(decoy_sentences());
    corpus
}

fn template_sentence(template: usize, object: &str, scene: &str, cycle: usize) -> Sentence {
    let verb = VERBS[cycle % VERBS.len()];
    let prep = PREPS[cycle % PREPS.len()];
    let particle = PARTICLES[cycle % PARTICLES.len()];
    let adv = ADVS[cycle % ADVS.len()];
    let t = |s: &str, p: Pos| TaggedToken::new(s, p);
    match template {
        // (object, verb prep, scene)
        0 => vec![
            t("the", Pos::Det),
            t(object, Pos::Noun),
            t(verb, Pos::Verb),
            t(prep, Pos::Prep),
            t("the", Pos::Det),
            t(scene, Pos::Noun),
        ],
        // reversed order: (scene, verb, object)
        1 => vec![
            t("the", Pos::Det),
            t(scene, Pos::Noun),
            t(verb, Pos::Verb),
            t("a", Pos::Det),
            t(object, Pos::Noun),
        ],
        // (object, verb adv prep, scene)
        2 => vec![
            t(object, Pos::Noun),
            t(verb, Pos::Verb),
            t(adv, Pos::Adv),
            t(prep, Pos::Prep),
            t("the", Pos::Det),
            t(scene, Pos::Noun),
        ],
        // (object, verb particle adv, scene)
        _ => vec![
            t("the", Pos::Det),
            t(object, Pos::Noun),
            t(verb, Pos::Verb),
            t(particle, Pos::Particle),
            t(adv, Pos::Adv),
            t("the", Pos::Det),
            t(scene, Pos::Noun),
        ],
    }
}

/// Sentences that must not contribute counts: no extractable triple, or
/// arguments outside the vocabulary.
fn decoy_sentences() -> Vec<Sentence> {
    let t = |s: &str, p: Pos| TaggedToken::new(s, p);
    vec![
        vec![
            t("it", Pos::Pron),
            t("rained", Pos::Verb),
            t("heavily", Pos::Adv),
        ],
        vec![
            t("the", Pos::Det),
            t("dog", Pos::Noun),
            t("barked", Pos::Verb),
        ],
        vec![
            t("dog", Pos::Noun),
            t("chased", Pos::Verb),
            t("cat", Pos::Noun),
        ],
        vec![t("silence", Pos::Noun)],
    ]
}

/// Simulated classifier scores: the annotated scene gets most of the
/// mass, a confusion partner the rest, plus faint seeded clutter. The
/// partner is the pair sibling in a confusable-pairs world, otherwise
/// the next scene.
pub fn classifier_scores(
    world: &SynthWorld,
    partner_weight: f64,
    jitter: f64,
    seed: u64,
) -> Vec<SceneScoreRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes = world.vocab.scenes();
    let s_count = scenes.len();
    world
        .annotations
        .iter()
        .filter_map(|ann| {
            let t = world.vocab.scene_index(&ann.scene_label)?;
            let partner = if world.config.confusable_pairs {
                let p = t ^ 1;
                if p < s_count {
                    p
                } else {
                    (t + 1) % s_count
                }
            } else {
                (t + 1) % s_count
            };
            let wobble =
                |rng: &mut ChaCha8Rng| 1.0 - jitter + 2.0 * jitter * rng.gen::<f64>();
            let mut row = SceneScoreRow {
                image_id: ann.image_id.clone(),
                scores: Default::default(),
            };
            row.scores
                .insert(scenes[t].clone(), (1.0 - partner_weight) * wobble(&mut rng));
            if partner != t {
                row.scores
                    .insert(scenes[partner].clone(), partner_weight * wobble(&mut rng));
            }
            for _ in 0..2 {
                let clutter = rng.gen_range(0..s_count);
                row.scores
                    .entry(scenes[clutter].clone())
                    .or_insert(0.03 * wobble(&mut rng));
            }
            Some(row)
        })
        .collect()
}

/// A synthetic detection benchmark over the first `class_count` object
/// names: every image containing a class gets a ground-truth box and a
/// matching detection, images lacking it sometimes get a spurious one,
/// and all detector scores are uninformative noise.
#[derive(Debug, Clone)]
pub struct DetectionBenchmark {
    pub classes: Vec<String>,
    pub ground_truth: Vec<DetectionRecord>,
    pub detections: Vec<DetectionRecord>,
}

pub fn detection_benchmark(world: &SynthWorld, class_count: usize, seed: u64) -> DetectionBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<String> = world.vocab.objects()[..class_count.min(world.vocab.object_count())]
        .to_vec();
    let mut ground_truth = Vec::new();
    let mut detections = Vec::new();
    for ann in &world.annotations {
        for (ci, class) in classes.iter().enumerate() {
            let offset = 5.0 * ci as f64;
            let bbox = BBox::new(10.0 + offset, 10.0, 60.0 + offset, 60.0).unwrap();
            let contains = ann.objects.iter().any(|o| o == class);
            if contains {
                ground_truth.push(DetectionRecord {
                    image_id: ann.image_id.clone(),
                    class_name: class.clone(),
                    score: 1.0,
                    bbox,
                    tp_label: None,
                });
                detections.push(DetectionRecord {
                    image_id: ann.image_id.clone(),
                    class_name: class.clone(),
                    score: rng.gen::<f64>(),
                    bbox,
                    tp_label: None,
                });
                if rng.gen::<f64>() < 0.3 {
                    // duplicate window on the same box
                    detections.push(DetectionRecord {
                        image_id: ann.image_id.clone(),
                        class_name: class.clone(),
                        score: 0.5 * rng.gen::<f64>(),
                        bbox,
                        tp_label: None,
                    });
                }
            } else if rng.gen::<f64>() < 0.5 {
                detections.push(DetectionRecord {
                    image_id: ann.image_id.clone(),
                    class_name: class.clone(),
                    score: rng.gen::<f64>(),
                    bbox,
                    tp_label: None,
                });
            }
        }
    }
    DetectionBenchmark {
        classes,
        ground_truth,
        detections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig {
            scenes: 4,
            objects: 10,
            images: 20,
            ..SynthConfig::default()
        };
        let a = generate(&config);
        let b = generate(&config);
        assert_eq!(a.annotations, b.annotations);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.affinity, b.affinity);
    }

    #[test]
    fn confusable_pairs_share_profiles() {
        let config = SynthConfig {
            scenes: 4,
            objects: 10,
            confusable_pairs: true,
            ..SynthConfig::default()
        };
        let world = generate(&config);
        assert_eq!(world.affinity[0], world.affinity[1]);
        assert_eq!(world.affinity[2], world.affinity[3]);
        assert_ne!(world.affinity[0], world.affinity[2]);
    }

    #[test]
    fn corpus_recovers_affinity_ordering() {
        let config = SynthConfig {
            scenes: 3,
            objects: 8,
            images: 10,
            seed: 5,
            ..SynthConfig::default()
        };
        let world = generate(&config);
        let triples = crate::extract::extract_corpus(
            &world.corpus,
            &crate::extract::ExtractConfig {
                lemma_map: world.vocab.lemma_map().clone(),
                relation_dictionary: None,
            },
        );
        let records: Vec<_> = triples.into_iter().map(|t| t.into_record()).collect();
        let matrix = crate::matrix::count_relations(&records, &world.vocab).unwrap();
        // every preferred pair should out-count every background pair
        // that was not dropped entirely
        let mut preferred_min = u64::MAX;
        let mut preferred_seen = 0;
        let mut background_max = 0u64;
        for s in 0..config.scenes {
            for o in 0..config.objects {
                let c = matrix.get(s, o);
                if world.affinity[s][o] == config.p_preferred {
                    if c > 0 {
                        preferred_min = preferred_min.min(c);
                        preferred_seen += 1;
                    }
                } else {
                    background_max = background_max.max(c);
                }
            }
        }
        assert!(preferred_seen > 0);
        assert!(preferred_min > background_max);
    }

    #[test]
    fn classifier_scores_load_as_distributions() {
        let config = SynthConfig {
            scenes: 6,
            objects: 10,
            images: 30,
            confusable_pairs: true,
            ..SynthConfig::default()
        };
        let world = generate(&config);
        let rows = classifier_scores(&world, 0.4, 0.1, 9);
        assert_eq!(rows.len(), world.annotations.len());
        let dists = crate::scene::scores_source(
            &rows,
            &world.vocab,
            crate::scene::Normalization::Sum,
        )
        .unwrap();
        for d in &dists {
            d.validate().unwrap();
        }
    }

    #[test]
    fn detection_benchmark_matches_annotations() {
        let config = SynthConfig {
            scenes: 3,
            objects: 10,
            images: 25,
            seed: 2,
            ..SynthConfig::default()
        };
        let world = generate(&config);
        let bench = detection_benchmark(&world, 3, 7);
        assert_eq!(bench.classes.len(), 3);
        // every ground-truth box corresponds to an image annotated with
        // the class
        for gt in &bench.ground_truth {
            let ann = world
                .annotations
                .iter()
                .find(|a| a.image_id == gt.image_id)
                .unwrap();
            assert!(ann.objects.contains(&gt.class_name));
        }
    }
}
