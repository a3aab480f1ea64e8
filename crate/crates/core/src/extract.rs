//! Relation extraction from POS-tagged sentences.
//!
//! A relation phrase is the longest token sequence starting at a verb
//! that matches `V | V P | V W* P` with
//!
//! ```text
//! V = verb particle? adv?
//! W = noun | adj | adv | pron | det
//! P = prep | particle | infmarker
//! ```
//!
//! Overlapping phrases of one sentence are merged, and each surviving
//! phrase yields a triple from the nearest noun on either side — both
//! nouns must exist or the phrase is dropped.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::ingest::{LemmaMap, Pos, Sentence, TaggedToken, TripleRecord};

/// A relation phrase inside one sentence; `start` is inclusive, `end`
/// exclusive, and the token at `start` is a verb.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSpan {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// An extracted (arg1, relation, arg2) triple with lemma-mapped noun
/// arguments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub arg1: String,
    pub relation: String,
    pub arg2: String,
}

impl Triple {
    pub fn into_record(self) -> TripleRecord {
        TripleRecord {
            arg1: self.arg1,
            relation: self.relation,
            arg2: self.arg2,
            count: 1,
        }
    }
}

fn is_w(pos: Pos) -> bool {
    matches!(pos, Pos::Noun | Pos::Adj | Pos::Adv | Pos::Pron | Pos::Det)
}

fn is_p(pos: Pos) -> bool {
    matches!(pos, Pos::Prep | Pos::Particle | Pos::InfMarker)
}

/// End positions (exclusive) of `V = verb particle? adv?` starting at
/// `start`. `start` must hold a verb.
fn v_ends(sentence: &[TaggedToken], start: usize) -> Vec<usize> {
    let mut ends = vec![start + 1];
    let mut at = start + 1;
    if sentence.get(at).map(|t| t.pos) == Some(Pos::Particle) {
        at += 1;
        ends.push(at);
    }
    if sentence.get(at).map(|t| t.pos) == Some(Pos::Adv) {
        ends.push(at + 1);
    }
    ends
}

pub fn span_text(sentence: &[TaggedToken], start: usize, end: usize) -> String {
    sentence[start..end]
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Longest relation phrase starting at `verb_index`, or `None` when the
/// token there is not a verb. A lone verb always matches, so a verb
/// never yields `None`.
pub fn match_relation_span(
    sentence: &[TaggedToken],
    verb_index: usize,
    sentence_index: usize,
) -> Option<RelationSpan> {
    if sentence.get(verb_index).map(|t| t.pos) != Some(Pos::Verb) {
        return None;
    }
    let mut best = verb_index + 1;
    for v_end in v_ends(sentence, verb_index) {
        best = best.max(v_end);
        // V W* P: scan the maximal W run; every prefix boundary that is
        // followed by a P token is a match (W* empty covers V P).
        let mut at = v_end;
        loop {
            if sentence.get(at).map(|t| is_p(t.pos)) == Some(true) {
                best = best.max(at + 1);
            }
            match sentence.get(at) {
                Some(t) if is_w(t.pos) => at += 1,
                _ => break,
            }
        }
    }
    Some(RelationSpan {
        sentence_index,
        start: verb_index,
        end: best,
        text: span_text(sentence, verb_index, best),
    })
}

/// Whether a phrase passes the lexical constraint. With no dictionary
/// the constraint is disabled and everything passes.
pub fn apply_lexical_constraint(span: &RelationSpan, dictionary: Option<&HashSet<String>>) -> bool {
    match dictionary {
        None => true,
        Some(dict) => dict.contains(&normalize_relation(&span.text)),
    }
}

/// Normalization applied to relation phrases before dictionary lookup:
/// lowercase with single-space separation.
pub fn normalize_relation(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Merge spans sharing at least one token index into single spans, and
/// apply the merge transitively. The result is sorted and pairwise
/// disjoint; merged text is re-rendered from the covered tokens.
pub fn merge_overlapping_spans(sentence: &[TaggedToken], spans: &[RelationSpan]) -> Vec<RelationSpan> {
    let mut sorted: Vec<&RelationSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut merged: Vec<RelationSpan> = Vec::new();
    for span in sorted {
        match merged.last_mut() {
            Some(last) if span.start < last.end => {
                if span.end > last.end {
                    last.end = span.end;
                    last.text = span_text(sentence, last.start, last.end);
                }
            }
            _ => merged.push(span.clone()),
        }
    }
    merged
}

fn lemma_of<'a>(token: &'a TaggedToken, lemma_map: &'a LemmaMap) -> &'a str {
    // An explicit lemma column wins over the table-driven map.
    if let Some(lemma) = &token.lemma {
        return lemma;
    }
    lemma_map
        .get(&token.surface)
        .map(String::as_str)
        .unwrap_or(&token.surface)
}

/// Extract triples for disjoint spans of one sentence: the nearest noun
/// left of each span and the nearest noun right of it become the
/// arguments. Spans missing either noun yield nothing.
pub fn extract_triples(
    sentence: &[TaggedToken],
    spans: &[RelationSpan],
    lemma_map: &LemmaMap,
) -> Vec<Triple> {
    let mut triples = Vec::new();
    for span in spans {
        let left = sentence[..span.start]
            .iter()
            .rev()
            .find(|t| t.pos == Pos::Noun);
        let right = sentence[span.end.min(sentence.len())..]
            .iter()
            .find(|t| t.pos == Pos::Noun);
        if let (Some(l), Some(r)) = (left, right) {
            triples.push(Triple {
                arg1: lemma_of(l, lemma_map).to_string(),
                relation: span.text.clone(),
                arg2: lemma_of(r, lemma_map).to_string(),
            });
        }
    }
    triples
}

/// Extraction settings: the lemma map for noun arguments and the
/// optional relation dictionary.
#[derive(Debug, Clone, Default)]
pub struct ExtractConfig {
    pub lemma_map: LemmaMap,
    pub relation_dictionary: Option<HashSet<String>>,
}

/// Run extraction over one sentence: match a phrase at every verb,
/// filter by the lexical constraint, merge overlaps, then extract
/// arguments.
pub fn extract_sentence(
    sentence: &[TaggedToken],
    sentence_index: usize,
    config: &ExtractConfig,
) -> Vec<Triple> {
    let spans: Vec<RelationSpan> = (0..sentence.len())
        .filter(|&i| sentence[i].pos == Pos::Verb)
        .filter_map(|i| match_relation_span(sentence, i, sentence_index))
        .filter(|s| apply_lexical_constraint(s, config.relation_dictionary.as_ref()))
        .collect();
    let merged = merge_overlapping_spans(sentence, &spans);
    extract_triples(sentence, &merged, &config.lemma_map)
}

/// Extract the whole corpus, sentence results concatenated in corpus
/// order. Sentences are processed in parallel.
pub fn extract_corpus(corpus: &[Sentence], config: &ExtractConfig) -> Vec<Triple> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, sentence)| extract_sentence(sentence, i, config))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Enumeration-based reference matcher used to cross-check the greedy
/// scanner: checks every candidate span against all decompositions of
/// the grammar. Test support; not part of the extraction pipeline.
pub fn brute_force_longest_match(sentence: &[TaggedToken], verb_index: usize) -> Option<usize> {
    if sentence.get(verb_index).map(|t| t.pos) != Some(Pos::Verb) {
        return None;
    }
    fn matches_grammar(tokens: &[TaggedToken]) -> bool {
        // V candidates: [verb], [verb particle], [verb adv], [verb particle adv]
        let mut v_lens = vec![1];
        if tokens.len() >= 2 && tokens[1].pos == Pos::Particle {
            v_lens.push(2);
            if tokens.len() >= 3 && tokens[2].pos == Pos::Adv {
                v_lens.push(3);
            }
        }
        if tokens.len() >= 2 && tokens[1].pos == Pos::Adv {
            v_lens.push(2);
        }
        for v in v_lens {
            let rest = &tokens[v..];
            if rest.is_empty() {
                return true; // V
            }
            let (last, mid) = rest.split_last().unwrap();
            if is_p(last.pos) && mid.iter().all(|t| is_w(t.pos)) {
                return true; // V P (mid empty) or V W* P
            }
        }
        false
    }
    (verb_index + 1..=sentence.len())
        .filter(|&end| matches_grammar(&sentence[verb_index..end]))
        .max()
}
