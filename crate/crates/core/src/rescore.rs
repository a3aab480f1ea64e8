//! Detection rescoring with a scene-context descriptor.
//!
//! Each detection is described by its detector score concatenated with
//! the image's full object-presence vector. A per-class linear
//! max-margin classifier separates true from false positives on that
//! descriptor, its margins are calibrated with a sigmoid fit, and the
//! calibrated probability replaces the detection score. Detection AP
//! uses VOC-style greedy matching at an IoU threshold.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{ap_from_labels, ApVariant};
use crate::ingest::{self, BBox, DetectionRecord};
use crate::predict::PresenceScores;

/// Intersection over union of two boxes; symmetric, in [0, 1], and 1
/// exactly for identical boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Context descriptor of one detection: `(score, P(o_1|I), ..., P(o_n|I))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDescriptor {
    pub values: Vec<f64>,
}

/// Presence scores indexed by image id, for descriptor construction.
pub fn index_presence(presence: &[PresenceScores]) -> HashMap<&str, &PresenceScores> {
    presence
        .iter()
        .map(|p| (p.image_id.as_str(), p))
        .collect()
}

/// Concatenate the detector score with the presence vector of the
/// detection's image. The descriptor depends on the image, not the box.
pub fn build_descriptor(
    detection: &DetectionRecord,
    presence: &HashMap<&str, &PresenceScores>,
) -> Result<ContextDescriptor> {
    let scores = presence.get(detection.image_id.as_str()).ok_or_else(|| {
        Error::invalid(format!(
            "no presence scores for image `{}`",
            detection.image_id
        ))
    })?;
    let mut values = Vec::with_capacity(1 + scores.scores.len());
    values.push(detection.score);
    values.extend_from_slice(&scores.scores);
    Ok(ContextDescriptor { values })
}

/// Per-class rescoring model: standardization parameters, linear
/// weights with bias, and sigmoid calibration `1/(1+exp(A*m+B))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescorerModel {
    pub class_name: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub standardized: bool,
    pub cost: f64,
    pub tolerance: f64,
}

impl RescorerModel {
    /// A model that reproduces the detector score through a fixed
    /// monotone sigmoid; rescoring with it preserves every ranking.
    pub fn calibration_only(class_name: impl Into<String>, dim: usize) -> Self {
        let mut weights = vec![0.0; dim];
        weights[0] = 1.0;
        RescorerModel {
            class_name: class_name.into(),
            weights,
            bias: 0.0,
            platt_a: -1.0,
            platt_b: 0.0,
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            standardized: false,
            cost: 1.0,
            tolerance: 0.01,
        }
    }

    pub fn margin(&self, descriptor: &ContextDescriptor) -> Result<f64> {
        if descriptor.values.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "descriptor has {} features, model `{}` expects {}",
                descriptor.values.len(),
                self.class_name,
                self.weights.len()
            )));
        }
        let mut m = self.bias;
        for ((&v, &w), (&mean, &std)) in descriptor
            .values
            .iter()
            .zip(&self.weights)
            .zip(self.feature_mean.iter().zip(&self.feature_std))
        {
            m += w * (v - mean) / std;
        }
        Ok(m)
    }

    /// Calibrated probability of being a true positive.
    pub fn probability(&self, descriptor: &ContextDescriptor) -> Result<f64> {
        Ok(sigmoid_predict(
            self.margin(descriptor)?,
            self.platt_a,
            self.platt_b,
        ))
    }
}

/// Training settings; the defaults match a linear kernel with C = 1 and
/// stopping tolerance 0.01.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub cost: f64,
    pub tolerance: f64,
    pub standardize: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            cost: 1.0,
            tolerance: 0.01,
            standardize: true,
        }
    }
}

/// Train the per-class rescorer on TP/FP labeled descriptors: an
/// L1-loss linear SVM solved by dual coordinate descent to the stated
/// tolerance on the projected gradient, followed by a sigmoid fit on
/// the training margins.
pub fn train_rescorer(
    descriptors: &[ContextDescriptor],
    labels: &[bool],
    class_name: &str,
    options: &TrainOptions,
) -> Result<RescorerModel> {
    if descriptors.len() != labels.len() {
        return Err(Error::invalid("descriptor and label counts differ"));
    }
    if options.cost <= 0.0 || !options.cost.is_finite() {
        return Err(Error::invalid("C must be positive"));
    }
    if options.tolerance <= 0.0 || !options.tolerance.is_finite() {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid(format!(
            "class `{class_name}` needs at least one true positive and one false positive"
        )));
    }
    let dim = descriptors[0].values.len();
    if descriptors.iter().any(|d| d.values.len() != dim) {
        return Err(Error::invalid("descriptors have inconsistent lengths"));
    }

    let (mean, std) = if options.standardize {
        feature_moments(descriptors, dim)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };

    // Standardized features with a trailing constant for the bias.
    let rows: Vec<Vec<f64>> = descriptors
        .iter()
        .map(|d| {
            let mut row: Vec<f64> = d
                .values
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect();
            row.push(1.0);
            row
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let w = solve_linear_svm(&rows, &y, options.cost, options.tolerance);

    let margins: Vec<f64> = rows
        .iter()
        .map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    let (platt_a, platt_b) = sigmoid_train(&margins, &y);

    Ok(RescorerModel {
        class_name: class_name.to_string(),
        weights: w[..dim].to_vec(),
        bias: w[dim],
        platt_a,
        platt_b,
        feature_mean: mean,
        feature_std: std,
        standardized: options.standardize,
        cost: options.cost,
        tolerance: options.tolerance,
    })
}

fn feature_moments(descriptors: &[ContextDescriptor], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = descriptors.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for d in descriptors {
        for (m, &v) in mean.iter_mut().zip(&d.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; dim];
    for d in descriptors {
        for ((v, &x), &m) in var.iter_mut().zip(&d.values).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Dual coordinate descent for the L1-loss linear SVM
/// `min 1/2 ||w||^2 + C sum hinge(y_i w.x_i)`; stops when the spread of
/// projected gradients falls below `tolerance`.
fn solve_linear_svm(rows: &[Vec<f64>], y: &[f64], cost: f64, tolerance: f64) -> Vec<f64> {
    let n = rows.len();
    let dim = rows[0].len();
    let q_ii: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut alpha = vec![0.0f64; n];
    let mut w = vec![0.0f64; dim];
    for _epoch in 0..10_000 {
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for i in 0..n {
            let g = y[i] * rows[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= cost {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 && q_ii[i] > 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q_ii[i]).clamp(0.0, cost);
                let delta = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(&rows[i]) {
                    *wj += delta * xj;
                }
            }
        }
        if pg_max - pg_min < tolerance {
            break;
        }
    }
    w
}

/// Fit sigmoid calibration parameters (A, B) on margins and +/-1 labels
/// by regularized maximum likelihood (prior-count targets, Newton
/// iterations with backtracking line search).
pub fn sigmoid_train(margins: &[f64], y: &[f64]) -> (f64, f64) {
    let n = margins.len();
    let prior1 = y.iter().filter(|&&v| v > 0.0).count() as f64;
    let prior0 = n as f64 - prior1;

    let hi_target = (prior1 + 1.0) / (prior1 + 2.0);
    let lo_target = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y
        .iter()
        .map(|&v| if v > 0.0 { hi_target } else { lo_target })
        .collect();

    let objective = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&t)
            .map(|(&m, &ti)| {
                let f = m * a + b;
                if f >= 0.0 {
                    ti * f + (1.0 + (-f).exp()).ln()
                } else {
                    (ti - 1.0) * f + (1.0 + f.exp()).ln()
                }
            })
            .sum()
    };

    let min_step = 1e-10;
    let damping = 1e-12;
    let eps = 1e-5;
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);

    for _ in 0..100 {
        let mut h11 = damping;
        let mut h22 = damping;
        let mut h21 = 0.0;
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for (&m, &ti) in margins.iter().zip(&t) {
            let f = m * a + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += m * m * d2;
            h22 += d2;
            h21 += m * d2;
            let d1 = ti - p;
            g1 += m * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}

/// Numerically stable `1/(1+exp(A*m+B))`.
pub fn sigmoid_predict(margin: f64, a: f64, b: f64) -> f64 {
    let f = margin * a + b;
    if f >= 0.0 {
        (-f).exp() / (1.0 + (-f).exp())
    } else {
        1.0 / (1.0 + f.exp())
    }
}

/// A rescored detection, keeping the detector's original score.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescored {
    pub detection: DetectionRecord,
    pub original_score: f64,
}

/// Replace detection scores with the calibrated TP probability of the
/// class model. Detections of classes without a model pass through
/// unchanged; the second return value counts them.
pub fn rescore(
    detections: &[DetectionRecord],
    models: &BTreeMap<String, RescorerModel>,
    presence: &[PresenceScores],
) -> Result<(Vec<Rescored>, usize)> {
    let presence = index_presence(presence);
    let mut out = Vec::with_capacity(detections.len());
    let mut passed_through = 0usize;
    for det in detections {
        match models.get(&det.class_name) {
            Some(model) => {
                let descriptor = build_descriptor(det, &presence)?;
                let probability = model.probability(&descriptor)?;
                let mut rescored = det.clone();
                rescored.score = probability;
                out.push(Rescored {
                    detection: rescored,
                    original_score: det.score,
                });
            }
            None => {
                passed_through += 1;
                out.push(Rescored {
                    detection: det.clone(),
                    original_score: det.score,
                });
            }
        }
    }
    Ok((out, passed_through))
}

/// Sort order for matching and AP: score descending, then image id,
/// then insertion order.
fn detection_order(detections: &[&DetectionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .total_cmp(&detections[a].score)
            .then_with(|| detections[a].image_id.cmp(&detections[b].image_id))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy TP/FP decisions for one class in descending score order: a
/// detection is a true positive when its best-overlapping unmatched
/// ground-truth box of the same image reaches the IoU threshold;
/// duplicates on an already matched box are false positives. Returns
/// labels in the same descending order.
fn greedy_labels(
    detections: &[&DetectionRecord],
    order: &[usize],
    ground_truth: &[&DetectionRecord],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut gt_by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, gt) in ground_truth.iter().enumerate() {
        gt_by_image.entry(gt.image_id.as_str()).or_default().push(i);
    }
    let mut matched = vec![false; ground_truth.len()];
    let mut labels = Vec::with_capacity(order.len());
    for &idx in order {
        let det = detections[idx];
        let mut best: Option<(usize, f64)> = None;
        if let Some(candidates) = gt_by_image.get(det.image_id.as_str()) {
            for &g in candidates {
                if matched[g] {
                    continue;
                }
                let overlap = iou(&det.bbox, &ground_truth[g].bbox);
                if overlap >= iou_threshold
                    && best.map(|(_, b)| overlap > b).unwrap_or(true)
                {
                    best = Some((g, overlap));
                }
            }
        }
        match best {
            Some((g, _)) => {
                matched[g] = true;
                labels.push(true);
            }
            None => labels.push(false),
        }
    }
    labels
}

/// Label detections as tp/fp against ground-truth boxes using the same
/// greedy matcher as [`detection_ap`]. Output order follows the input.
pub fn label_detections(
    detections: &[DetectionRecord],
    ground_truth: &[DetectionRecord],
    iou_threshold: f64,
) -> Vec<DetectionRecord> {
    let mut labeled: Vec<DetectionRecord> = detections.to_vec();
    let classes: std::collections::BTreeSet<&str> =
        detections.iter().map(|d| d.class_name.as_str()).collect();
    for class in classes {
        let indices: Vec<usize> = (0..detections.len())
            .filter(|&i| detections[i].class_name == class)
            .collect();
        let dets: Vec<&DetectionRecord> = indices.iter().map(|&i| &detections[i]).collect();
        let gts: Vec<&DetectionRecord> = ground_truth
            .iter()
            .filter(|g| g.class_name == class)
            .collect();
        let order = detection_order(&dets);
        let labels = greedy_labels(&dets, &order, &gts, iou_threshold);
        for (rank, &local) in order.iter().enumerate() {
            labeled[indices[local]].tp_label = Some(labels[rank]);
        }
    }
    labeled
}

/// Per-class detection AP at an IoU threshold. The recall base of each
/// class is its ground-truth box count; classes without ground truth
/// get `None`.
pub fn detection_ap(
    detections: &[DetectionRecord],
    ground_truth: &[DetectionRecord],
    iou_threshold: f64,
    variant: ApVariant,
) -> Result<BTreeMap<String, Option<f64>>> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold must be in (0, 1), got {iou_threshold}"
        )));
    }
    let mut classes: std::collections::BTreeSet<&str> =
        ground_truth.iter().map(|g| g.class_name.as_str()).collect();
    classes.extend(detections.iter().map(|d| d.class_name.as_str()));
    let classes: Vec<&str> = classes.into_iter().collect();
    let results: Vec<(String, Option<f64>)> = classes
        .par_iter()
        .map(|&class| {
            let dets: Vec<&DetectionRecord> = detections
                .iter()
                .filter(|d| d.class_name == class)
                .collect();
            let gts: Vec<&DetectionRecord> = ground_truth
                .iter()
                .filter(|g| g.class_name == class)
                .collect();
            let order = detection_order(&dets);
            let labels = greedy_labels(&dets, &order, &gts, iou_threshold);
            (
                class.to_string(),
                ap_from_labels(&labels, gts.len(), variant),
            )
        })
        .collect();
    Ok(results.into_iter().collect())
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// Persist models as a versioned TSV, one keyed row per parameter.
pub fn save_models(
    path: impl AsRef<Path>,
    models: &BTreeMap<String, RescorerModel>,
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    ingest::push_header(&mut out, header);
    out.push_str(&format!("format\t{MODEL_FORMAT_VERSION}\n"));
    for model in models.values() {
        let c = &model.class_name;
        out.push_str(&format!("model\t{c}\tdim\t{}\n", model.weights.len()));
        out.push_str(&format!("model\t{c}\tcost\t{}\n", model.cost));
        out.push_str(&format!("model\t{c}\ttolerance\t{}\n", model.tolerance));
        out.push_str(&format!("model\t{c}\tstandardized\t{}\n", model.standardized));
        out.push_str(&format!("model\t{c}\tbias\t{}\n", model.bias));
        out.push_str(&format!("model\t{c}\tplatt_a\t{}\n", model.platt_a));
        out.push_str(&format!("model\t{c}\tplatt_b\t{}\n", model.platt_b));
        for (i, w) in model.weights.iter().enumerate() {
            out.push_str(&format!("model\t{c}\tweight\t{i}\t{w}\n"));
        }
        for (i, m) in model.feature_mean.iter().enumerate() {
            out.push_str(&format!("model\t{c}\tmean\t{i}\t{m}\n"));
        }
        for (i, s) in model.feature_std.iter().enumerate() {
            out.push_str(&format!("model\t{c}\tstd\t{i}\t{s}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct ModelBuilder {
    dim: Option<usize>,
    cost: Option<f64>,
    tolerance: Option<f64>,
    standardized: Option<bool>,
    bias: Option<f64>,
    platt_a: Option<f64>,
    platt_b: Option<f64>,
    weights: BTreeMap<usize, f64>,
    mean: BTreeMap<usize, f64>,
    std: BTreeMap<usize, f64>,
}

impl ModelBuilder {
    fn finish(self, class: &str) -> Result<RescorerModel> {
        let dim = self
            .dim
            .ok_or_else(|| Error::invalid(format!("model `{class}`: missing dim")))?;
        let dense = |m: BTreeMap<usize, f64>, what: &str| -> Result<Vec<f64>> {
            if m.len() != dim || m.keys().last() != Some(&(dim - 1)) {
                return Err(Error::invalid(format!(
                    "model `{class}`: expected {dim} {what} rows, found {}",
                    m.len()
                )));
            }
            Ok(m.into_values().collect())
        };
        let missing = |what: &str| Error::invalid(format!("model `{class}`: missing {what}"));
        Ok(RescorerModel {
            class_name: class.to_string(),
            weights: dense(self.weights, "weight")?,
            bias: self.bias.ok_or_else(|| missing("bias"))?,
            platt_a: self.platt_a.ok_or_else(|| missing("platt_a"))?,
            platt_b: self.platt_b.ok_or_else(|| missing("platt_b"))?,
            feature_mean: dense(self.mean, "mean")?,
            feature_std: dense(self.std, "std")?,
            standardized: self.standardized.ok_or_else(|| missing("standardized"))?,
            cost: self.cost.ok_or_else(|| missing("cost"))?,
            tolerance: self.tolerance.ok_or_else(|| missing("tolerance"))?,
        })
    }
}

/// Load models written by [`save_models`].
pub fn load_models(path: impl AsRef<Path>) -> Result<BTreeMap<String, RescorerModel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut builders: BTreeMap<String, ModelBuilder> = BTreeMap::new();
    let mut version_seen = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if ingest::skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !version_seen {
            if fields.len() == 2 && fields[0] == "format" && fields[1] == "1" {
                version_seen = true;
                continue;
            }
            return Err(Error::parse(
                path,
                line_no,
                "expected `format\\t1` as the first data row",
            ));
        }
        if fields.len() < 4 || fields[0] != "model" {
            return Err(Error::parse(path, line_no, "expected a `model` row"));
        }
        let builder = builders.entry(fields[1].to_string()).or_default();
        let parse_f = |raw: &str| ingest::parse_finite(raw, path, line_no, fields[2]);
        match (fields[2], fields.len()) {
            ("dim", 4) => builder.dim = Some(fields[3].parse().map_err(|_| {
                Error::parse(path, line_no, "dim must be an integer")
            })?),
            ("cost", 4) => builder.cost = Some(parse_f(fields[3])?),
            ("tolerance", 4) => builder.tolerance = Some(parse_f(fields[3])?),
            ("standardized", 4) => {
                builder.standardized = Some(fields[3].parse().map_err(|_| {
                    Error::parse(path, line_no, "standardized must be true or false")
                })?)
            }
            ("bias", 4) => builder.bias = Some(parse_f(fields[3])?),
            ("platt_a", 4) => builder.platt_a = Some(parse_f(fields[3])?),
            ("platt_b", 4) => builder.platt_b = Some(parse_f(fields[3])?),
            ("weight", 5) | ("mean", 5) | ("std", 5) => {
                let i: usize = fields[3].parse().map_err(|_| {
                    Error::parse(path, line_no, "feature index must be an integer")
                })?;
                let v = parse_f(fields[4])?;
                let target = match fields[2] {
                    "weight" => &mut builder.weights,
                    "mean" => &mut builder.mean,
                    _ => &mut builder.std,
                };
                target.insert(i, v);
            }
            (other, _) => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown model field `{other}`"),
                ))
            }
        }
    }
    if !version_seen {
        return Err(Error::invalid(format!(
            "{}: missing format version row",
            path.display()
        )));
    }
    builders
        .into_iter()
        .map(|(class, b)| b.finish(&class).map(|m| (class, m)))
        .collect()
}
