//! Per-image scene distributions from interchangeable sources: the
//! annotated label as a one-hot vector, external classifier score
//! files, a uniform fallback, and a synthetic noisy source for tests.
//!
//! Classifier scores over original label variants are summed into
//! their canonical scene before normalization, so prediction can run
//! on a finer label set than the vocabulary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{ImageAnnotation, SceneScoreRow, Vocabulary};
use crate::predict::rank_desc;

/// A probability distribution over the canonical scenes of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDistribution {
    pub image_id: String,
    pub probs: Vec<f64>,
}

impl SceneDistribution {
    pub fn one_hot(image_id: impl Into<String>, scene_count: usize, scene: usize) -> Self {
        let mut probs = vec![0.0; scene_count];
        probs[scene] = 1.0;
        SceneDistribution {
            image_id: image_id.into(),
            probs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!(
                "scene distribution for `{}` has negative or non-finite entries",
                self.image_id
            )));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "scene distribution for `{}` sums to {sum}, expected 1",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// How raw classifier scores become a distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Divide by the sum; requires nonnegative scores.
    Sum,
    /// Softmax with the given temperature; accepts any finite scores.
    Softmax(f64),
}

/// One-hot distributions from annotated scene labels ("perfect
/// classifier"). Images whose label does not resolve into the
/// vocabulary are skipped and counted.
pub fn perfect_source(
    annotations: &[ImageAnnotation],
    vocab: &Vocabulary,
) -> (Vec<SceneDistribution>, usize) {
    let mut out = Vec::with_capacity(annotations.len());
    let mut skipped = 0;
    for ann in annotations {
        match vocab.scene_index(&ann.scene_label) {
            Some(s) => out.push(SceneDistribution::one_hot(
                ann.image_id.clone(),
                vocab.scene_count(),
                s,
            )),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

/// Distributions from classifier score rows: scores of original labels
/// are summed into their canonical scene, then normalized.
pub fn scores_source(
    rows: &[SceneScoreRow],
    vocab: &Vocabulary,
    normalization: Normalization,
) -> Result<Vec<SceneDistribution>> {
    if let Normalization::Softmax(t) = normalization {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::invalid(format!(
                "softmax temperature must be positive, got {t}"
            )));
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut mass = vec![0.0f64; vocab.scene_count()];
        let mut any = vec![false; vocab.scene_count()];
        for (name, &score) in &row.scores {
            let Some(s) = vocab.scene_index(name) else {
                return Err(Error::invalid(format!(
                    "image `{}` scores unknown scene `{name}`",
                    row.image_id
                )));
            };
            mass[s] += score;
            any[s] = true;
        }
        let probs = match normalization {
            Normalization::Sum => {
                if mass.iter().any(|&v| v < 0.0) {
                    return Err(Error::invalid(format!(
                        "image `{}` has negative scores; use softmax normalization",
                        row.image_id
                    )));
                }
                let total: f64 = mass.iter().sum();
                if total <= 0.0 {
                    return Err(Error::invalid(format!(
                        "image `{}` has no positive score mass",
                        row.image_id
                    )));
                }
                mass.iter().map(|v| v / total).collect()
            }
            Normalization::Softmax(temperature) => {
                // Scenes with no scored original stay at zero rather
                // than receiving exp(0) mass.
                let max = mass
                    .iter()
                    .zip(&any)
                    .filter(|(_, &a)| a)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = mass
                    .iter()
                    .zip(&any)
                    .map(|(&v, &a)| if a { ((v - max) / temperature).exp() } else { 0.0 })
                    .collect();
                let total: f64 = exp.iter().sum();
                exp.iter().map(|v| v / total).collect()
            }
        };
        let dist = SceneDistribution {
            image_id: row.image_id.clone(),
            probs,
        };
        dist.validate()?;
        out.push(dist);
    }
    Ok(out)
}

/// Uniform distribution for every image id.
pub fn uniform_source<I>(image_ids: I, scene_count: usize) -> Vec<SceneDistribution>
where
    I: IntoIterator,
    I::Item: Into<String>,
{
    image_ids
        .into_iter()
        .map(|id| SceneDistribution {
            image_id: id.into(),
            probs: vec![1.0 / scene_count as f64; scene_count],
        })
        .collect()
}

/// Synthetic noisy source: the annotated one-hot mixed with a uniform
/// floor plus seeded jitter, renormalized. Images with unknown scene
/// labels are skipped.
pub fn noisy_source(
    annotations: &[ImageAnnotation],
    vocab: &Vocabulary,
    uniform_weight: f64,
    jitter: f64,
    seed: u64,
) -> Result<(Vec<SceneDistribution>, usize)> {
    if !(0.0..=1.0).contains(&uniform_weight) {
        return Err(Error::invalid("uniform weight must be in [0, 1]"));
    }
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::invalid("jitter must be in [0, 1)"));
    }
    let s_count = vocab.scene_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(annotations.len());
    let mut skipped = 0;
    for ann in annotations {
        let Some(truth) = vocab.scene_index(&ann.scene_label) else {
            skipped += 1;
            continue;
        };
        let mut probs: Vec<f64> = (0..s_count)
            .map(|s| {
                let base = if s == truth { 1.0 - uniform_weight } else { 0.0 }
                    + uniform_weight / s_count as f64;
                base * (1.0 - jitter + 2.0 * jitter * rng.gen::<f64>())
            })
            .collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        out.push(SceneDistribution {
            image_id: ann.image_id.clone(),
            probs,
        });
    }
    Ok((out, skipped))
}

/// Fraction of images whose annotated scene ranks among the k highest
/// probabilities (ties by scene index). Images without a distribution
/// or with an unknown label are skipped.
pub fn topk_scene_accuracy(
    distributions: &[SceneDistribution],
    annotations: &[ImageAnnotation],
    vocab: &Vocabulary,
    k: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let by_id: std::collections::HashMap<&str, &SceneDistribution> = distributions
        .iter()
        .map(|d| (d.image_id.as_str(), d))
        .collect();
    let mut evaluated = 0usize;
    let mut correct = 0usize;
    for ann in annotations {
        let (Some(dist), Some(truth)) = (
            by_id.get(ann.image_id.as_str()),
            vocab.scene_index(&ann.scene_label),
        ) else {
            continue;
        };
        evaluated += 1;
        if rank_desc(&dist.probs).iter().take(k).any(|&s| s == truth) {
            correct += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::invalid("no image could be evaluated"));
    }
    Ok(correct as f64 / evaluated as f64)
}
