//! Presence-prediction evaluation: top-k accuracy over the per-image
//! ranking, per-class average precision, mean AP over frequency-ranked
//! object sets, and a chance baseline.

use std::collections::HashMap;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{ImageAnnotation, LemmaMap};
use crate::predict::{rank_desc, PresenceScores};

/// Which precision-recall summary to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApVariant {
    /// Mean precision at the rank of every positive.
    AllPoint,
    /// Mean of the max precision at recall >= r for r in 0.0..=1.0
    /// stepped by 0.1.
    ElevenPoint,
}

/// Average precision of a ranked list of true/false labels.
/// `num_positives` is the recall base (it may exceed the true labels in
/// the list, e.g. ground-truth boxes never recovered by a detector).
/// `None` when there are no positives.
pub fn ap_from_labels(labels: &[bool], num_positives: usize, variant: ApVariant) -> Option<f64> {
    if num_positives == 0 {
        return None;
    }
    match variant {
        ApVariant::AllPoint => {
            let mut tp = 0usize;
            let mut sum = 0.0f64;
            for (rank, &hit) in labels.iter().enumerate() {
                if hit {
                    tp += 1;
                    sum += tp as f64 / (rank + 1) as f64;
                }
            }
            Some(sum / num_positives as f64)
        }
        ApVariant::ElevenPoint => {
            let mut tp_at = Vec::with_capacity(labels.len());
            let mut tp = 0usize;
            for &hit in labels {
                if hit {
                    tp += 1;
                }
                tp_at.push(tp);
            }
            let mut sum = 0.0f64;
            for level in 0..=10u64 {
                // recall >= level/10 compared in integers: 10*tp >= level*P
                let best = tp_at
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| 10 * t as u64 >= level * num_positives as u64)
                    .map(|(rank, &t)| t as f64 / (rank + 1) as f64)
                    .fold(0.0f64, f64::max);
                sum += best;
            }
            Some(sum / 11.0)
        }
    }
}

/// AP over per-item `(sort key, score, is positive)` rows, ranked by
/// score descending with ties broken by the key ascending.
pub fn average_precision<K: Ord>(
    items: &[(K, f64, bool)],
    variant: ApVariant,
) -> Option<f64> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b].1
            .total_cmp(&items[a].1)
            .then_with(|| items[a].0.cmp(&items[b].0))
    });
    let labels: Vec<bool> = order.iter().map(|&i| items[i].2).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    ap_from_labels(&labels, positives, variant)
}

/// The per-image ranking induced by presence scores: strictly ordered
/// by score descending, ties by object index ascending.
#[derive(Debug, Clone)]
pub struct RankedPredictions {
    pub image_id: String,
    pub ranked: Vec<(usize, f64)>,
}

impl RankedPredictions {
    pub fn from_scores(presence: &PresenceScores) -> Self {
        RankedPredictions {
            image_id: presence.image_id.clone(),
            ranked: rank_desc(&presence.scores)
                .into_iter()
                .map(|o| (o, presence.scores[o]))
                .collect(),
        }
    }
}

/// One evaluated image: its scores over the class list plus the
/// annotated object indices (a multiset).
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub image_id: String,
    pub scores: Vec<f64>,
    pub truth: Vec<usize>,
}

/// Presence predictions joined with annotations over one class list.
#[derive(Debug, Clone)]
pub struct PresenceEval {
    pub objects: Vec<String>,
    pub images: Vec<EvalImage>,
}

/// Join statistics; unmatched rows are dropped, not errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssembleStats {
    pub images_without_predictions: usize,
    pub predictions_without_annotations: usize,
    pub unknown_object_mentions: usize,
}

impl PresenceEval {
    /// Join scores and annotations by image id. Annotated object names
    /// go through the lemma map; mentions that resolve to no class are
    /// counted and dropped.
    pub fn assemble(
        objects: &[String],
        lemma_map: &LemmaMap,
        presence: &[PresenceScores],
        annotations: &[ImageAnnotation],
    ) -> Result<(Self, AssembleStats)> {
        let class_index: HashMap<&str, usize> = objects
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let by_id: HashMap<&str, &PresenceScores> = presence
            .iter()
            .map(|p| (p.image_id.as_str(), p))
            .collect();
        let mut stats = AssembleStats::default();
        let mut images = Vec::new();
        for ann in annotations {
            let Some(scores) = by_id.get(ann.image_id.as_str()) else {
                stats.images_without_predictions += 1;
                continue;
            };
            if scores.scores.len() != objects.len() {
                return Err(Error::invalid(format!(
                    "image `{}` scores {} objects, class list has {}",
                    ann.image_id,
                    scores.scores.len(),
                    objects.len()
                )));
            }
            let mut truth = Vec::with_capacity(ann.objects.len());
            for name in &ann.objects {
                let canonical = lemma_map.get(name).map(String::as_str).unwrap_or(name);
                match class_index
                    .get(name.as_str())
                    .or_else(|| class_index.get(canonical))
                {
                    Some(&i) => truth.push(i),
                    None => stats.unknown_object_mentions += 1,
                }
            }
            images.push(EvalImage {
                image_id: ann.image_id.clone(),
                scores: scores.scores.clone(),
                truth,
            });
        }
        stats.predictions_without_annotations = presence.len() - images.len();
        Ok((
            PresenceEval {
                objects: objects.to_vec(),
                images,
            },
            stats,
        ))
    }

    fn distinct_truth(image: &EvalImage) -> Vec<usize> {
        let mut t = image.truth.clone();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Accuracy of the k best predictions over images with at least k
    /// annotated objects. `count_instances` makes eligibility count
    /// annotated instances rather than distinct object types.
    pub fn topk_accuracy(&self, k: usize, count_instances: bool) -> Result<f64> {
        if k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mut eligible = 0usize;
        let mut hits = 0usize;
        for image in &self.images {
            let distinct = Self::distinct_truth(image);
            let size = if count_instances {
                image.truth.len()
            } else {
                distinct.len()
            };
            if size < k {
                continue;
            }
            eligible += 1;
            for &o in rank_desc(&image.scores).iter().take(k) {
                if distinct.binary_search(&o).is_ok() {
                    hits += 1;
                }
            }
        }
        if eligible == 0 {
            return Err(Error::invalid(format!(
                "no image has at least {k} annotated objects"
            )));
        }
        Ok(hits as f64 / (k * eligible) as f64)
    }

    /// Per-class AP: images ranked by the class score, positives are
    /// images annotated with the class. `None` without positives.
    pub fn class_ap(&self, class: usize, variant: ApVariant) -> Option<f64> {
        let items: Vec<(&str, f64, bool)> = self
            .images
            .iter()
            .map(|img| {
                (
                    img.image_id.as_str(),
                    img.scores[class],
                    img.truth.contains(&class),
                )
            })
            .collect();
        average_precision(&items, variant)
    }

    pub fn all_aps(&self, variant: ApVariant) -> Vec<Option<f64>> {
        (0..self.objects.len())
            .into_par_iter()
            .map(|c| self.class_ap(c, variant))
            .collect()
    }

    /// Number of images containing each class at least once.
    pub fn class_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0usize; self.objects.len()];
        for image in &self.images {
            for &o in &Self::distinct_truth(image) {
                freq[o] += 1;
            }
        }
        freq
    }

    /// Class indices by frequency descending, ties by name ascending.
    pub fn frequency_order(&self) -> Vec<usize> {
        let freq = self.class_frequencies();
        let mut order: Vec<usize> = (0..self.objects.len()).collect();
        order.sort_by(|&a, &b| {
            freq[b]
                .cmp(&freq[a])
                .then_with(|| self.objects[a].cmp(&self.objects[b]))
        });
        order
    }

    /// Expected AP of a random ranking for a class.
    pub fn chance_ap(&self, class: usize, mode: ChanceMode) -> Option<f64> {
        let labels: Vec<bool> = self
            .images
            .iter()
            .map(|img| img.truth.contains(&class))
            .collect();
        chance_ap_for_labels(&labels, class, mode)
    }
}

/// Chance baseline mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChanceMode {
    /// Positive prevalence: the large-list expectation of the AP of a
    /// uniformly random ranking.
    Analytic,
    /// Mean all-point AP over seeded random permutations.
    Empirical { seed: u64, trials: usize },
}

pub fn chance_ap_for_labels(labels: &[bool], class: usize, mode: ChanceMode) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || labels.is_empty() {
        return None;
    }
    match mode {
        ChanceMode::Analytic => Some(positives as f64 / labels.len() as f64),
        ChanceMode::Empirical { seed, trials } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            let mut shuffled = labels.to_vec();
            let mut sum = 0.0;
            for _ in 0..trials.max(1) {
                shuffled.shuffle(&mut rng);
                sum += ap_from_labels(&shuffled, positives, ApVariant::AllPoint)
                    .expect("positives > 0");
            }
            Some(sum / trials.max(1) as f64)
        }
    }
}

/// Mean of the defined APs; `None` when every AP is undefined.
pub fn mean_ap<'a, I: IntoIterator<Item = &'a Option<f64>>>(aps: I) -> Option<f64> {
    let defined: Vec<f64> = aps.into_iter().filter_map(|a| *a).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Mean AP over one frequency-ranked class set.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySetMap {
    pub requested: usize,
    /// Set size after clamping to the number of classes.
    pub used: usize,
    /// Classes whose AP was defined and entered the mean.
    pub defined_classes: usize,
    pub map: Option<f64>,
}

/// Mean AP over the n most frequent classes for each requested n.
/// Sizes beyond the class count are clamped.
pub fn map_over_frequency_sets(
    eval: &PresenceEval,
    aps: &[Option<f64>],
    set_sizes: &[usize],
) -> Vec<FrequencySetMap> {
    let order = eval.frequency_order();
    set_sizes
        .iter()
        .map(|&requested| {
            let used = requested.min(order.len());
            let selected: Vec<Option<f64>> =
                order[..used].iter().map(|&c| aps[c]).collect();
            FrequencySetMap {
                requested,
                used,
                defined_classes: selected.iter().filter(|a| a.is_some()).count(),
                map: mean_ap(selected.iter()),
            }
        })
        .collect()
}

/// Assembled evaluation results for report emission.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    /// (class name, AP, chance AP)
    pub per_class: Vec<(String, Option<f64>, Option<f64>)>,
    pub set_maps: Vec<FrequencySetMap>,
    pub topk: Vec<(usize, f64)>,
    pub notes: Vec<String>,
}

fn fmt_ap(v: &Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.4}", v),
        None => "NA".to_string(),
    }
}

impl EvalReport {
    /// Machine-readable TSV with one tagged row per result.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, ap, chance) in &self.per_class {
            out.push_str(&format!("ap\t{name}\t{}\t{}\n", fmt_ap(ap), fmt_ap(chance)));
        }
        for set in &self.set_maps {
            out.push_str(&format!(
                "map\ttop{}\t{}\t{}\n",
                set.requested,
                fmt_ap(&set.map),
                set.defined_classes
            ));
        }
        for (k, acc) in &self.topk {
            out.push_str(&format!("topk\t{k}\t{acc:.4}\n"));
        }
        for note in &self.notes {
            out.push_str(&format!("note\t{note}\n"));
        }
        out
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.topk.is_empty() {
            out.push_str("top-k prediction accuracy\n");
            out.push_str("  k    accuracy\n");
            for (k, acc) in &self.topk {
                out.push_str(&format!("  {:<4} {:.4}\n", k, acc));
            }
        }
        if !self.set_maps.is_empty() {
            out.push_str("mean AP over most frequent objects\n");
            out.push_str("  set      mAP      classes\n");
            for set in &self.set_maps {
                out.push_str(&format!(
                    "  top{:<5} {:<8} {}\n",
                    set.requested,
                    fmt_ap(&set.map),
                    set.defined_classes
                ));
            }
        }
        if !self.per_class.is_empty() {
            out.push_str("per-class AP (vs chance)\n");
            for (name, ap, chance) in &self.per_class {
                out.push_str(&format!(
                    "  {:<24} {:<8} {}\n",
                    name,
                    fmt_ap(ap),
                    fmt_ap(chance)
                ));
            }
        }
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}

/// Minimal SVG line chart for accuracy-versus-k curves.
pub fn accuracy_curve_svg(series: &[(&str, &[(usize, f64)])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 48.0;
    let max_k = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x = |k: f64| M + (k - 1.0) / (max_k - 1.0).max(1.0) * (W - 2.0 * M);
    let y = |acc: f64| H - M - acc * (H - 2.0 * M);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - M,
        W - M
    ));
    for tick in 0..=5 {
        let acc = tick as f64 / 5.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.1}</text>\n",
            M - 6.0,
            y(acc) + 4.0,
            acc
        ));
    }
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    for (i, (label, points)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = points
            .iter()
            .map(|&(k, acc)| format!("{:.1},{:.1}", x(k as f64), y(acc)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            W - M - 120.0,
            M + 16.0 * (i + 1) as f64
        ));
    }
    for &(k, _) in series.first().map(|s| s.1).unwrap_or(&[]) {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{k}</text>\n",
            x(k as f64),
            H - M + 16.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
