//! Object-presence prediction from the context matrix.
//!
//! The pipeline is staged: a Bayes posterior over objects per scene
//! (uniform scene prior), interpolation smoothing against the object
//! prior, optional noise sampling, and finally a mixture over the
//! per-image scene distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::ContextMatrix;
use crate::scene::SceneDistribution;

/// Pipeline stage of a [`PosteriorTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Smoothed,
    Sampled,
}

/// S x O table of per-scene object probabilities plus the object prior.
///
/// At stages `Raw` and `Smoothed` the table satisfies
/// `(1/S) * sum_s table[s][o] == prior[o]` for every object.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    stage: Stage,
    scenes: usize,
    objects: usize,
    values: Vec<f64>,
    prior: Vec<f64>,
    alpha: f64,
    sigma: f64,
}

impl PosteriorTable {
    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn scene_count(&self) -> usize {
        self.scenes
    }

    pub fn object_count(&self) -> usize {
        self.objects
    }

    pub fn value(&self, scene: usize, object: usize) -> f64 {
        self.values[scene * self.objects + object]
    }

    pub fn row(&self, scene: usize) -> &[f64] {
        &self.values[scene * self.objects..(scene + 1) * self.objects]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Assemble a table from raw parts, validating the stage invariants.
    pub fn from_parts(
        stage: Stage,
        scenes: usize,
        objects: usize,
        values: Vec<f64>,
        prior: Vec<f64>,
        alpha: f64,
        sigma: f64,
    ) -> Result<Self> {
        if values.len() != scenes * objects || prior.len() != objects {
            return Err(Error::invalid("table dimensions do not match"));
        }
        if values.iter().chain(prior.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("table entries must be finite and nonnegative"));
        }
        let prior_sum: f64 = prior.iter().sum();
        if (prior_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "object prior must sum to 1, sums to {prior_sum}"
            )));
        }
        let table = PosteriorTable {
            stage,
            scenes,
            objects,
            values,
            prior,
            alpha,
            sigma,
        };
        if stage != Stage::Sampled {
            for o in 0..objects {
                let mean: f64 =
                    (0..scenes).map(|s| table.value(s, o)).sum::<f64>() / scenes as f64;
                if (mean - table.prior[o]).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "scene-average of object {o} is {mean}, prior is {}",
                        table.prior[o]
                    )));
                }
            }
        }
        Ok(table)
    }
}

/// Bayes posterior from the counts: `P(o|s) = P(s|o) P(o) / P(s)` with
/// column-normalized `P(s|o)`, `P(o)` from column sums, and uniform
/// `P(s) = 1/S`. Objects never observed get an all-zero column.
pub fn compute_posterior(matrix: &ContextMatrix) -> Result<PosteriorTable> {
    let scenes = matrix.vocab().scene_count();
    let objects = matrix.vocab().object_count();
    let mut column_sums = vec![0u64; objects];
    for (_, o, c) in matrix.entries() {
        column_sums[o] += c;
    }
    let total: u64 = column_sums.iter().sum();
    if total == 0 {
        return Err(Error::invalid(
            "context matrix has no counts; cannot compute probabilities",
        ));
    }
    let n = total as f64;
    let prior: Vec<f64> = column_sums.iter().map(|&c| c as f64 / n).collect();
    let mut values = vec![0.0f64; scenes * objects];
    for (s, o, c) in matrix.entries() {
        let p_s_given_o = c as f64 / column_sums[o] as f64;
        values[s * objects + o] = p_s_given_o * prior[o] * scenes as f64;
    }
    Ok(PosteriorTable {
        stage: Stage::Raw,
        scenes,
        objects,
        values,
        prior,
        alpha: 0.0,
        sigma: 0.0,
    })
}

/// Interpolation factor: the number of matrix entries equal to 1
/// divided by the total count sum.
pub fn estimate_alpha(matrix: &ContextMatrix) -> Result<f64> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::invalid("context matrix has no counts"));
    }
    Ok(matrix.singleton_entries() as f64 / total as f64)
}

/// Interpolate each entry with the object prior:
/// `(1 - alpha) * P(o|s) + alpha * P(o)`.
pub fn smooth(table: &PosteriorTable, alpha: f64) -> Result<PosteriorTable> {
    if table.stage != Stage::Raw {
        return Err(Error::invalid("smoothing expects a raw posterior table"));
    }
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(Error::invalid(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let mut out = table.clone();
    for s in 0..table.scenes {
        for o in 0..table.objects {
            let v = &mut out.values[s * table.objects + o];
            *v = (1.0 - alpha) * *v + alpha * table.prior[o];
        }
    }
    out.stage = Stage::Smoothed;
    out.alpha = alpha;
    Ok(out)
}

/// How the sampling noise scale is derived. The counts-vs-probabilities
/// reading of the matrix variance is ambiguous, so both are available;
/// the default is the spread of the smoothed probabilities, which lives
/// on the same scale as the draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSource {
    /// Population standard deviation of the smoothed table entries.
    ProbStd,
    /// Population standard deviation of the counts, divided by the
    /// total count (i.e. the spread of the joint count distribution).
    CountStdNormalized,
    /// A fixed value.
    Fixed(f64),
}

/// Noise scale from the default source (probability spread).
pub fn estimate_sigma(matrix: &ContextMatrix, table: &PosteriorTable) -> Result<f64> {
    estimate_sigma_with(SigmaSource::ProbStd, matrix, table)
}

pub fn estimate_sigma_with(
    source: SigmaSource,
    matrix: &ContextMatrix,
    table: &PosteriorTable,
) -> Result<f64> {
    if table.stage != Stage::Smoothed {
        return Err(Error::invalid("sigma is estimated on the smoothed table"));
    }
    match source {
        SigmaSource::ProbStd => Ok(population_std(&table.values)),
        SigmaSource::CountStdNormalized => {
            let total = matrix.total();
            if total == 0 {
                return Err(Error::invalid("context matrix has no counts"));
            }
            let n = matrix.vocab().scene_count() * matrix.vocab().object_count();
            let mut cells = vec![0.0f64; n];
            for (s, o, c) in matrix.entries() {
                cells[s * matrix.vocab().object_count() + o] = c as f64 / total as f64;
            }
            Ok(population_std(&cells))
        }
        SigmaSource::Fixed(v) => {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("sigma must be >= 0, got {v}")));
            }
            Ok(v)
        }
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

// Domain tag separating the sampling streams from other users of the
// same seed.
const SAMPLE_STREAM_TAG: u64 = 0x5a3c_9d17_42b8_e6f1;

fn entry_rng(seed: u64, scene: usize, object: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_STREAM_TAG);
    rng.set_stream(((scene as u64) << 32) | (object as u64 & 0xffff_ffff));
    rng
}

/// Replace every entry by the mean of `draws` normal draws centered on
/// it with standard deviation `sigma`, each draw clamped at zero. One
/// RNG stream per (seed, scene, object), so the result is independent
/// of iteration order and thread count. `sigma == 0` returns the
/// smoothed entries bit-exactly.
pub fn sample_table(
    table: &PosteriorTable,
    sigma: f64,
    draws: usize,
    seed: u64,
) -> Result<PosteriorTable> {
    if table.stage != Stage::Smoothed {
        return Err(Error::invalid("sampling expects a smoothed posterior table"));
    }
    if draws < 1 {
        return Err(Error::invalid("the number of draws must be at least 1"));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut out = table.clone();
    out.stage = Stage::Sampled;
    out.sigma = sigma;
    if sigma == 0.0 {
        return Ok(out);
    }
    let objects = table.objects;
    let noise = Normal::new(0.0, sigma).expect("sigma checked finite and positive");
    out.values = table
        .values
        .par_chunks(objects)
        .enumerate()
        .flat_map_iter(|(s, row)| {
            row.iter().enumerate().map(move |(o, &center)| {
                let mut rng = entry_rng(seed, s, o);
                let sum: f64 = (0..draws)
                    .map(|_| (center + noise.sample(&mut rng)).max(0.0))
                    .sum();
                sum / draws as f64
            })
        })
        .collect();
    Ok(out)
}

/// Per-image object presence scores `P(o|I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceScores {
    pub image_id: String,
    pub scores: Vec<f64>,
}

/// Mix the sampled table rows by the image's scene distribution:
/// `P(o|I) = sum_s P(s|I) * table[s][o]`.
pub fn predict_presence(
    table: &PosteriorTable,
    distribution: &SceneDistribution,
) -> Result<PresenceScores> {
    if table.stage != Stage::Sampled {
        return Err(Error::invalid("presence prediction expects a sampled table"));
    }
    if distribution.probs.len() != table.scenes {
        return Err(Error::invalid(format!(
            "scene distribution has {} entries, table has {} scenes",
            distribution.probs.len(),
            table.scenes
        )));
    }
    distribution.validate()?;
    let mut scores = vec![0.0f64; table.objects];
    for (s, &p) in distribution.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (score, &v) in scores.iter_mut().zip(table.row(s)) {
            *score += p * v;
        }
    }
    Ok(PresenceScores {
        image_id: distribution.image_id.clone(),
        scores,
    })
}

/// Indices sorted by score descending, ties broken by index ascending.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Write presence scores as `image_id<TAB>object<TAB>score`, images in
/// ascending id order, objects by descending score (ties by object
/// index).
pub fn save_presence(
    path: impl AsRef<std::path::Path>,
    presence: &[PresenceScores],
    objects: &[String],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut by_image: Vec<&PresenceScores> = presence.iter().collect();
    by_image.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut out = String::new();
    crate::ingest::push_header(&mut out, header);
    for p in by_image {
        for o in rank_desc(&p.scores) {
            out.push_str(&p.image_id);
            out.push('\t');
            out.push_str(&objects[o]);
            out.push('\t');
            out.push_str(&p.scores[o].to_string());
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load presence scores written by [`save_presence`]. Returns the
/// object names in lexicographic order and one score vector per image;
/// every image must score the same object set.
pub fn load_presence(path: impl AsRef<std::path::Path>) -> Result<(Vec<String>, Vec<PresenceScores>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut per_image: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if crate::ingest::skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let score = crate::ingest::parse_finite(fields[2], path, line_no, "score")?;
        match per_image.last_mut() {
            Some((id, rows)) if id == fields[0] => rows.push((fields[1].to_string(), score)),
            _ => per_image.push((
                fields[0].to_string(),
                vec![(fields[1].to_string(), score)],
            )),
        }
    }
    let mut objects: Vec<String> = match per_image.first() {
        Some((_, rows)) => rows.iter().map(|(name, _)| name.clone()).collect(),
        None => return Err(Error::invalid(format!("{}: no predictions", path.display()))),
    };
    objects.sort();
    objects.dedup();
    let index: std::collections::HashMap<&str, usize> = objects
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut presence = Vec::with_capacity(per_image.len());
    for (image_id, rows) in per_image {
        if rows.len() != objects.len() {
            return Err(Error::invalid(format!(
                "{}: image `{image_id}` scores {} objects, expected {}",
                path.display(),
                rows.len(),
                objects.len()
            )));
        }
        let mut scores = vec![f64::NAN; objects.len()];
        for (name, score) in rows {
            let Some(&i) = index.get(name.as_str()) else {
                return Err(Error::invalid(format!(
                    "{}: image `{image_id}` scores unknown object `{name}`",
                    path.display()
                )));
            };
            if !scores[i].is_nan() {
                return Err(Error::invalid(format!(
                    "{}: image `{image_id}` scores `{name}` twice",
                    path.display()
                )));
            }
            scores[i] = score;
        }
        presence.push(PresenceScores { image_id, scores });
    }
    Ok((objects, presence))
}
