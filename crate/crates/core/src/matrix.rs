//! The matrix of objects in scene context.
//!
//! `C[s, o]` counts extracted relations between scene `s` and object
//! `o` in either argument order; the relation phrase itself is
//! discarded. A ground-truth variant counts (image, object type)
//! incidences from annotations instead and serves as an upper-bound
//! reference.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{self, ImageAnnotation, TripleRecord, Vocabulary};

/// Sparse nonnegative integer counts over the scene x object vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMatrix {
    vocab: Vocabulary,
    counts: BTreeMap<(usize, usize), u64>,
}

impl ContextMatrix {
    pub fn zeros(vocab: Vocabulary) -> Self {
        ContextMatrix {
            vocab,
            counts: BTreeMap::new(),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn get(&self, scene: usize, object: usize) -> u64 {
        self.counts.get(&(scene, object)).copied().unwrap_or(0)
    }

    pub fn add(&mut self, scene: usize, object: usize, count: u64) {
        debug_assert!(scene < self.vocab.scene_count() && object < self.vocab.object_count());
        if count > 0 {
            *self.counts.entry((scene, object)).or_insert(0) += count;
        }
    }

    /// Sum of all counts.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Largest single count in the matrix.
    pub fn max_count(&self) -> u64 {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// Number of entries equal to exactly 1.
    pub fn singleton_entries(&self) -> usize {
        self.counts.values().filter(|&&v| v == 1).count()
    }

    /// Nonzero entries in (scene, object) index order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.counts.iter().map(|(&(s, o), &c)| (s, o, c))
    }

    /// Dense export for inspection.
    pub fn dense(&self) -> Vec<Vec<u64>> {
        let mut rows = vec![vec![0u64; self.vocab.object_count()]; self.vocab.scene_count()];
        for (s, o, c) in self.entries() {
            rows[s][o] = c;
        }
        rows
    }

    /// Where a scene name equals an object name, replace the count with
    /// the maximum count observed anywhere in the matrix. Idempotent.
    pub fn apply_self_similarity(&mut self) {
        let max = self.max_count();
        if max == 0 {
            return;
        }
        for (s, scene_name) in self.vocab.scenes().iter().enumerate() {
            if let Some(o) = self.vocab.object_index(scene_name) {
                self.counts.insert((s, o), max);
            }
        }
    }
}

/// Count scene-object relations from triples. A triple contributes its
/// count once per consistent (scene, object) assignment of its
/// arguments; triples whose arguments are not one scene and one object
/// are ignored. Arguments go through the vocabulary's lemma map.
pub fn count_relations(triples: &[TripleRecord], vocab: &Vocabulary) -> Result<ContextMatrix> {
    if vocab.scene_count() == 0 || vocab.object_count() == 0 {
        return Err(Error::invalid("cannot count relations over an empty vocabulary"));
    }
    let counts = triples
        .par_iter()
        .fold(BTreeMap::new, |mut acc: BTreeMap<(usize, usize), u64>, t| {
            if let (Some(o), Some(s)) = (vocab.object_index(&t.arg1), vocab.scene_index(&t.arg2)) {
                *acc.entry((s, o)).or_insert(0) += t.count;
            }
            if let (Some(s), Some(o)) = (vocab.scene_index(&t.arg1), vocab.object_index(&t.arg2)) {
                *acc.entry((s, o)).or_insert(0) += t.count;
            }
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    Ok(ContextMatrix {
        vocab: vocab.clone(),
        counts,
    })
}

/// Result of building the ground-truth distribution matrix.
#[derive(Debug)]
pub struct GtMatrixBuild {
    pub matrix: ContextMatrix,
    /// Images whose scene label did not resolve into the vocabulary.
    pub skipped_images: usize,
    /// Annotated object names that did not resolve into the vocabulary.
    pub unknown_objects: usize,
}

/// Build the matrix from dataset annotations: each image adds 1 to
/// `C[scene, o]` for every distinct object type it contains.
pub fn matrix_from_annotations(
    annotations: &[ImageAnnotation],
    vocab: &Vocabulary,
) -> Result<GtMatrixBuild> {
    if vocab.scene_count() == 0 || vocab.object_count() == 0 {
        return Err(Error::invalid("cannot build a matrix over an empty vocabulary"));
    }
    let mut matrix = ContextMatrix::zeros(vocab.clone());
    let mut skipped_images = 0;
    let mut unknown_objects = 0;
    for ann in annotations {
        let Some(s) = vocab.scene_index(&ann.scene_label) else {
            skipped_images += 1;
            continue;
        };
        let mut seen: Vec<usize> = Vec::new();
        for name in &ann.objects {
            match vocab.object_index(name) {
                Some(o) => {
                    if !seen.contains(&o) {
                        seen.push(o);
                        matrix.add(s, o, 1);
                    }
                }
                None => unknown_objects += 1,
            }
        }
    }
    Ok(GtMatrixBuild {
        matrix,
        skipped_images,
        unknown_objects,
    })
}

/// Write the matrix as sparse `scene<TAB>object<TAB>count` rows sorted
/// by scene then object name.
pub fn save_matrix(matrix: &ContextMatrix, path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let vocab = matrix.vocab();
    let mut rows: Vec<(&str, &str, u64)> = matrix
        .entries()
        .map(|(s, o, c)| (vocab.scenes()[s].as_str(), vocab.objects()[o].as_str(), c))
        .collect();
    rows.sort();
    let mut out = String::new();
    ingest::push_header(&mut out, header);
    for (scene, object, count) in rows {
        out.push_str(scene);
        out.push('\t');
        out.push_str(object);
        out.push('\t');
        out.push_str(&count.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a sparse matrix file against a known vocabulary. Names that do
/// not resolve, duplicate cells, and non-positive counts are errors.
pub fn load_matrix(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<ContextMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut counts = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if ingest::skippable(line) {
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
        let s = vocab.scene_index(fields[0]).ok_or_else(|| {
            Error::parse(path, line_no, format!("unknown scene `{}`", fields[0]))
        })?;
        let o = vocab.object_index(fields[1]).ok_or_else(|| {
            Error::parse(path, line_no, format!("unknown object `{}`", fields[1]))
        })?;
        let count: u64 = match fields[2].parse() {
            Ok(c) if c > 0 => c,
            _ => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("count must be a positive integer, found `{}`", fields[2]),
                ))
            }
        };
        if counts.insert((s, o), count).is_some() {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate cell ({}, {})", fields[0], fields[1]),
            ));
        }
    }
    Ok(ContextMatrix {
        vocab: vocab.clone(),
        counts,
    })
}
