//! Loaders and writers for every external file format.
//!
//! All files are UTF-8 and TAB separated. Lines starting with `#` are
//! comments and are skipped everywhere. Blank lines are skipped too,
//! except in tagged corpora where a blank line ends the current
//! sentence. Loaders either parse a file completely or fail with the
//! first offending line; there are no partial results.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Coarse part-of-speech tagset used by the relation grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Verb,
    Particle,
    Adv,
    Noun,
    Adj,
    Pron,
    Det,
    Prep,
    InfMarker,
    Other,
}

impl Pos {
    pub const ALL: [Pos; 10] = [
        Pos::Verb,
        Pos::Particle,
        Pos::Adv,
        Pos::Noun,
        Pos::Adj,
        Pos::Pron,
        Pos::Det,
        Pos::Prep,
        Pos::InfMarker,
        Pos::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pos::Verb => "verb",
            Pos::Particle => "particle",
            Pos::Adv => "adv",
            Pos::Noun => "noun",
            Pos::Adj => "adj",
            Pos::Pron => "pron",
            Pos::Det => "det",
            Pos::Prep => "prep",
            Pos::InfMarker => "infmarker",
            Pos::Other => "other",
        }
    }

    /// Parse a coarse tag name. Case-insensitive, so UPOS-style `NOUN`
    /// resolves as well.
    pub fn from_coarse(s: &str) -> Option<Pos> {
        let lower = s.to_ascii_lowercase();
        Pos::ALL.iter().copied().find(|p| p.name() == lower)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps tagset-specific POS strings onto the coarse tagset.
///
/// Resolution order: coarse names themselves, then the mapping table,
/// then `other`. The built-in table covers Penn Treebank and Universal
/// POS tags.
#[derive(Debug, Clone, Default)]
pub struct TagMap {
    map: HashMap<String, Pos>,
}

const DEFAULT_TAG_MAP: &str = include_str!("../data/default_tag_map.tsv");

impl TagMap {
    /// Map with no entries: only coarse names resolve, everything else
    /// is `other`.
    pub fn empty() -> Self {
        TagMap::default()
    }

    /// The built-in Penn Treebank / UPOS mapping.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TAG_MAP, Path::new("<builtin tag map>"))
            .expect("builtin tag map is well formed")
    }

    /// Load a custom mapping file with `tag<TAB>coarse` rows.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if skippable(line) {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected 2 tab-separated fields, found {}", fields.len()),
                ));
            }
            let coarse = Pos::from_coarse(fields[1]).ok_or_else(|| {
                Error::parse(path, line_no, format!("unknown coarse tag `{}`", fields[1]))
            })?;
            map.insert(fields[0].to_string(), coarse);
        }
        Ok(TagMap { map })
    }

    pub fn resolve(&self, tag: &str) -> Pos {
        if let Some(p) = Pos::from_coarse(tag) {
            return p;
        }
        self.map.get(tag).copied().unwrap_or(Pos::Other)
    }
}

/// A single token of a POS-tagged corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub surface: String,
    pub pos: Pos,
    pub lemma: Option<String>,
}

impl TaggedToken {
    pub fn new(surface: impl Into<String>, pos: Pos) -> Self {
        TaggedToken {
            surface: surface.into(),
            pos,
            lemma: None,
        }
    }

    pub fn with_lemma(surface: impl Into<String>, pos: Pos, lemma: impl Into<String>) -> Self {
        TaggedToken {
            surface: surface.into(),
            pos,
            lemma: Some(lemma.into()),
        }
    }
}

pub type Sentence = Vec<TaggedToken>;

/// Load a tagged corpus: `surface<TAB>pos[<TAB>lemma]`, blank line
/// between sentences. POS strings not resolvable through `tags` become
/// `other`.
pub fn load_tagged_corpus(path: impl AsRef<Path>, tags: &TagMap) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    let mut current: Sentence = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim_start().starts_with('#') {
            continue;
        }
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(path, line_no, "empty token surface"));
        }
        let lemma = fields
            .get(2)
            .filter(|l| !l.is_empty())
            .map(|l| l.to_string());
        current.push(TaggedToken {
            surface: fields[0].to_string(),
            pos: tags.resolve(fields[1]),
            lemma,
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Write a tagged corpus in the format accepted by [`load_tagged_corpus`].
pub fn save_tagged_corpus(
    path: impl AsRef<Path>,
    sentences: &[Sentence],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    push_header(&mut out, header);
    for (i, sentence) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for token in sentence {
            out.push_str(&token.surface);
            out.push('\t');
            out.push_str(token.pos.name());
            if let Some(lemma) = &token.lemma {
                out.push('\t');
                out.push_str(lemma);
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One row of a triples file: `arg1<TAB>relation<TAB>arg2[<TAB>count]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleRecord {
    pub arg1: String,
    pub relation: String,
    pub arg2: String,
    pub count: u64,
}

/// Load extracted relation triples. Counts default to 1 and must be
/// positive integers; arguments are kept verbatim (lemma mapping is
/// applied downstream).
pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<TripleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        for (name, value) in [("arg1", fields[0]), ("relation", fields[1]), ("arg2", fields[2])] {
            if value.is_empty() {
                return Err(Error::parse(path, line_no, format!("empty {name} field")));
            }
        }
        let count = match fields.get(3) {
            None => 1,
            Some(raw) => match u64::from_str(raw) {
                Ok(c) if c > 0 => c,
                _ => {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("count must be a positive integer, found `{raw}`"),
                    ))
                }
            },
        };
        records.push(TripleRecord {
            arg1: fields[0].to_string(),
            relation: fields[1].to_string(),
            arg2: fields[2].to_string(),
            count,
        });
    }
    Ok(records)
}

/// Write triples in the format accepted by [`load_triples`]. The count
/// column is omitted when it is 1.
pub fn save_triples(
    path: impl AsRef<Path>,
    records: &[TripleRecord],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    push_header(&mut out, header);
    for r in records {
        out.push_str(&r.arg1);
        out.push('\t');
        out.push_str(&r.relation);
        out.push('\t');
        out.push_str(&r.arg2);
        if r.count != 1 {
            out.push('\t');
            out.push_str(&r.count.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub type LemmaMap = HashMap<String, String>;

/// Load a lemma map with `surface<TAB>lemma` rows. Duplicate surfaces
/// with conflicting lemmas are an error.
pub fn load_lemma_map(path: impl AsRef<Path>) -> Result<LemmaMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = LemmaMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(
                path,
                line_no,
                "expected `surface<TAB>lemma` with non-empty fields",
            ));
        }
        if let Some(existing) = map.get(fields[0]) {
            if existing != fields[1] {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("conflicting lemma for `{}`", fields[0]),
                ));
            }
        }
        map.insert(fields[0].to_string(), fields[1].to_string());
    }
    Ok(map)
}

pub fn save_lemma_map(path: impl AsRef<Path>, map: &LemmaMap, header: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    push_header(&mut out, header);
    let mut entries: Vec<_> = map.iter().collect();
    entries.sort();
    for (surface, lemma) in entries {
        out.push_str(surface);
        out.push('\t');
        out.push_str(lemma);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// The fixed scene and object vocabulary, after lemma mapping and
/// deduplication. Original names remain resolvable to their canonical
/// index, and merges are recorded as warnings.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    scenes: Vec<String>,
    objects: Vec<String>,
    lemma_map: LemmaMap,
    scene_lookup: HashMap<String, usize>,
    object_lookup: HashMap<String, usize>,
    warnings: Vec<String>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.scenes == other.scenes && self.objects == other.objects
    }
}

impl Vocabulary {
    pub fn new<S, O>(scene_names: S, object_names: O, lemma_map: LemmaMap) -> Result<Self>
    where
        S: IntoIterator,
        S::Item: Into<String>,
        O: IntoIterator,
        O::Item: Into<String>,
    {
        let mut warnings = Vec::new();
        let (scenes, scene_lookup) =
            dedup_names(scene_names, &lemma_map, "scene", &mut warnings)?;
        let (objects, object_lookup) =
            dedup_names(object_names, &lemma_map, "object", &mut warnings)?;
        Ok(Vocabulary {
            scenes,
            objects,
            lemma_map,
            scene_lookup,
            object_lookup,
            warnings,
        })
    }

    pub fn scenes(&self) -> &[String] {
        &self.scenes
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn lemma_map(&self) -> &LemmaMap {
        &self.lemma_map
    }

    /// Merge warnings recorded while deduplicating canonical names.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Apply the lemma map to a single name.
    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.lemma_map.get(name).map(String::as_str).unwrap_or(name)
    }

    /// Resolve a scene name (original or canonical) to its index.
    pub fn scene_index(&self, name: &str) -> Option<usize> {
        self.scene_lookup
            .get(name)
            .or_else(|| self.scene_lookup.get(self.canonical(name)))
            .copied()
    }

    /// Resolve an object name (original or canonical) to its index.
    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.object_lookup
            .get(name)
            .or_else(|| self.object_lookup.get(self.canonical(name)))
            .copied()
    }
}

fn dedup_names<I>(
    names: I,
    lemma_map: &LemmaMap,
    kind: &str,
    warnings: &mut Vec<String>,
) -> Result<(Vec<String>, HashMap<String, usize>)>
where
    I: IntoIterator,
    I::Item: Into<String>,
{
    let mut canon = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    for name in names {
        let original: String = name.into();
        let canonical = lemma_map
            .get(&original)
            .cloned()
            .unwrap_or_else(|| original.clone());
        let index = match lookup.get(&canonical) {
            Some(&idx) => {
                warnings.push(format!("{kind} `{original}` merged into `{canonical}`"));
                idx
            }
            None => {
                canon.push(canonical.clone());
                let idx = canon.len() - 1;
                lookup.insert(canonical.clone(), idx);
                idx
            }
        };
        lookup.entry(original).or_insert(index);
    }
    if canon.is_empty() {
        return Err(Error::invalid(format!("{kind} vocabulary is empty")));
    }
    Ok((canon, lookup))
}

/// Load the vocabulary from one-name-per-line scene and object files
/// plus an optional lemma map.
pub fn load_vocabulary(
    scene_path: impl AsRef<Path>,
    object_path: impl AsRef<Path>,
    lemma_map_path: Option<&Path>,
) -> Result<Vocabulary> {
    let lemma_map = match lemma_map_path {
        Some(p) => load_lemma_map(p)?,
        None => LemmaMap::new(),
    };
    let scenes = load_name_list(scene_path.as_ref())?;
    let objects = load_name_list(object_path.as_ref())?;
    Vocabulary::new(scenes, objects, lemma_map)
}

/// Load a one-name-per-line list, trimming surrounding whitespace.
pub fn load_name_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text
        .lines()
        .filter(|l| !skippable(l))
        .map(|l| l.trim().to_string())
        .collect();
    if names.is_empty() {
        return Err(Error::invalid(format!(
            "{}: file contains no names",
            path.display()
        )));
    }
    Ok(names)
}

pub fn save_name_list(path: impl AsRef<Path>, names: &[String], header: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    push_header(&mut out, header);
    for n in names {
        out.push_str(n);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Scene and object labels of one image. Objects form a multiset; an
/// object type may repeat when several instances are annotated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub scene_label: String,
    pub objects: Vec<String>,
}

/// Load annotations: `image_id<TAB>scene_label<TAB>obj1,obj2,...`.
/// Unknown scene or object names are kept; downstream consumers decide
/// how strict to be.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<ImageAnnotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut annotations = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if skippable(line) {
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
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(path, line_no, "empty image id or scene label"));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate image id `{}`", fields[0]),
            ));
        }
        let objects: Vec<String> = fields[2]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        annotations.push(ImageAnnotation {
            image_id: fields[0].to_string(),
            scene_label: fields[1].to_string(),
            objects,
        });
    }
    Ok(annotations)
}

pub fn save_annotations(
    path: impl AsRef<Path>,
    annotations: &[ImageAnnotation],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    push_header(&mut out, header);
    for a in annotations {
        out.push_str(&a.image_id);
        out.push('\t');
        out.push_str(&a.scene_label);
        out.push('\t');
        out.push_str(&a.objects.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-image classifier scores over scene names. Scores may be
/// unnormalized and, for logit-style inputs, negative; a row whose
/// scores are all exactly zero is rejected at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScoreRow {
    pub image_id: String,
    pub scores: BTreeMap<String, f64>,
}

/// Load scene scores: `image_id<TAB>scene_name<TAB>score`, one scene
/// per line, rows of one image contiguous.
pub fn load_scene_scores(path: impl AsRef<Path>) -> Result<Vec<SceneScoreRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<SceneScoreRow> = Vec::new();
    let mut closed: HashSet<String> = HashSet::new();
    let mut group_start = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if skippable(line) {
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
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(path, line_no, "empty image id or scene name"));
        }
        let score = parse_finite(fields[2], path, line_no, "score")?;
        let start_new = match rows.last() {
            Some(last) => last.image_id != fields[0],
            None => true,
        };
        if start_new {
            if let Some(last) = rows.last() {
                check_not_all_zero(last, path, group_start)?;
                closed.insert(last.image_id.clone());
            }
            if closed.contains(fields[0]) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("rows for image `{}` are not contiguous", fields[0]),
                ));
            }
            rows.push(SceneScoreRow {
                image_id: fields[0].to_string(),
                scores: BTreeMap::new(),
            });
            group_start = line_no;
        }
        let row = rows.last_mut().unwrap();
        if row.scores.insert(fields[1].to_string(), score).is_some() {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate scene `{}` for image `{}`", fields[1], fields[0]),
            ));
        }
    }
    if let Some(last) = rows.last() {
        check_not_all_zero(last, path, group_start)?;
    }
    Ok(rows)
}

fn check_not_all_zero(row: &SceneScoreRow, path: &Path, line: usize) -> Result<()> {
    if row.scores.values().all(|&v| v == 0.0) {
        return Err(Error::parse(
            path,
            line,
            format!("all scores are zero for image `{}`", row.image_id),
        ));
    }
    Ok(())
}

pub fn save_scene_scores(
    path: impl AsRef<Path>,
    rows: &[SceneScoreRow],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    push_header(&mut out, header);
    for row in rows {
        for (scene, score) in &row.scores {
            out.push_str(&row.image_id);
            out.push('\t');
            out.push_str(scene);
            out.push('\t');
            out.push_str(&score.to_string());
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Axis-aligned box in pixel coordinates, `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("box coordinates must be finite"));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::invalid(format!(
                "box must satisfy x1 < x2 and y1 < y2, got ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// One detector output (or one ground-truth box when the score is
/// unused) with an optional true/false-positive label.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_name: String,
    pub score: f64,
    pub bbox: BBox,
    pub tp_label: Option<bool>,
}

/// Load detections:
/// `image_id<TAB>class<TAB>score<TAB>x1,y1,x2,y2[<TAB>tp|fp]`.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if skippable(line) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 || fields.len() > 5 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 or 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(path, line_no, "empty image id or class name"));
        }
        let score = parse_finite(fields[2], path, line_no, "score")?;
        let coords: Vec<&str> = fields[3].split(',').collect();
        if coords.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                "box must be 4 comma-separated coordinates",
            ));
        }
        let mut xy = [0.0f64; 4];
        for (i, c) in coords.iter().enumerate() {
            xy[i] = parse_finite(c, path, line_no, "box coordinate")?;
        }
        let bbox = BBox::new(xy[0], xy[1], xy[2], xy[3])
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let tp_label = match fields.get(4) {
            None => None,
            Some(&"tp") => Some(true),
            Some(&"fp") => Some(false),
            Some(other) => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("label must be `tp` or `fp`, found `{other}`"),
                ))
            }
        };
        records.push(DetectionRecord {
            image_id: fields[0].to_string(),
            class_name: fields[1].to_string(),
            score,
            bbox,
            tp_label,
        });
    }
    Ok(records)
}

pub fn save_detections(
    path: impl AsRef<Path>,
    records: &[DetectionRecord],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    push_header(&mut out, header);
    for r in records {
        out.push_str(&r.image_id);
        out.push('\t');
        out.push_str(&r.class_name);
        out.push('\t');
        out.push_str(&r.score.to_string());
        out.push('\t');
        out.push_str(&format!(
            "{},{},{},{}",
            r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2
        ));
        if let Some(tp) = r.tp_label {
            out.push('\t');
            out.push_str(if tp { "tp" } else { "fp" });
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn skippable(line: &str) -> bool {
    let trimmed = line.trim();
    trimmed.is_empty() || trimmed.starts_with('#')
}

pub(crate) fn parse_finite(raw: &str, path: &Path, line: usize, what: &str) -> Result<f64> {
    match f64::from_str(raw.trim()) {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(
            path,
            line,
            format!("{what} must be a finite number, found `{raw}`"),
        )),
    }
}

pub(crate) fn push_header(out: &mut String, header: Option<&str>) {
    if let Some(h) = header {
        for line in h.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn file_with(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn corpus_minimal() {
        let f = file_with("car\tnoun\n");
        let sentences = load_tagged_corpus(f.path(), &TagMap::empty()).unwrap();
        assert_eq!(sentences.len(), 1);
        assert_eq!(sentences[0], vec![TaggedToken::new("car", Pos::Noun)]);
    }

    #[test]
    fn corpus_two_sentences() {
        let f = file_with("car\tnoun\n\nstreet\tnoun\n");
        let sentences = load_tagged_corpus(f.path(), &TagMap::empty()).unwrap();
        assert_eq!(sentences.len(), 2);
    }

    #[test]
    fn corpus_missing_pos_is_error_with_line() {
        let f = file_with("car\n");
        let err = load_tagged_corpus(f.path(), &TagMap::empty()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn corpus_unknown_pos_maps_to_other() {
        let f = file_with("car\tXYZ\n");
        let sentences = load_tagged_corpus(f.path(), &TagMap::empty()).unwrap();
        assert_eq!(sentences[0][0].pos, Pos::Other);
    }

    #[test]
    fn builtin_tag_map_covers_ptb() {
        let tags = TagMap::builtin();
        assert_eq!(tags.resolve("NN"), Pos::Noun);
        assert_eq!(tags.resolve("VBD"), Pos::Verb);
        assert_eq!(tags.resolve("IN"), Pos::Prep);
        assert_eq!(tags.resolve("TO"), Pos::InfMarker);
        assert_eq!(tags.resolve("noun"), Pos::Noun);
        assert_eq!(tags.resolve("???"), Pos::Other);
    }

    #[test]
    fn triples_default_count() {
        let f = file_with("car\tdrove down\tstreet\n");
        let t = load_triples(f.path()).unwrap();
        assert_eq!(
            t,
            vec![TripleRecord {
                arg1: "car".into(),
                relation: "drove down".into(),
                arg2: "street".into(),
                count: 1,
            }]
        );
    }

    #[test]
    fn triples_explicit_count() {
        let f = file_with("person\twere on\tstreet\t5\n");
        let t = load_triples(f.path()).unwrap();
        assert_eq!(t[0].count, 5);
    }

    #[test]
    fn triples_zero_count_rejected() {
        let f = file_with("a\tb\tc\t0\n");
        assert!(load_triples(f.path()).is_err());
        let f = file_with("a\tb\tc\t-3\n");
        assert!(load_triples(f.path()).is_err());
        let f = file_with("a\tb\tc\t1.5\n");
        assert!(load_triples(f.path()).is_err());
    }

    #[test]
    fn vocabulary_basic() {
        let v = Vocabulary::new(
            ["street", "highway"].map(String::from),
            ["car", "person"].map(String::from),
            LemmaMap::new(),
        )
        .unwrap();
        assert_eq!(v.scene_count(), 2);
        assert_eq!(v.object_count(), 2);
        assert_eq!(v.scene_index("highway"), Some(1));
        assert_eq!(v.object_index("car"), Some(0));
    }

    #[test]
    fn vocabulary_lemma_mapping_and_merge() {
        let mut lm = LemmaMap::new();
        lm.insert("streets".into(), "street".into());
        lm.insert("tennis court indoor".into(), "tennis court".into());
        lm.insert("tennis court outdoor".into(), "tennis court".into());
        let v = Vocabulary::new(
            ["tennis court indoor", "tennis court outdoor"].map(String::from),
            ["streets"].map(String::from),
            lm,
        )
        .unwrap();
        assert_eq!(v.scenes(), &["tennis court".to_string()]);
        assert_eq!(v.objects(), &["street".to_string()]);
        assert_eq!(v.scene_index("tennis court outdoor"), Some(0));
        assert_eq!(v.scene_index("tennis court"), Some(0));
        assert_eq!(v.object_index("streets"), Some(0));
        assert_eq!(v.warnings().len(), 1);
    }

    #[test]
    fn vocabulary_unseen_surface_goes_through_lemma_map() {
        let mut lm = LemmaMap::new();
        lm.insert("cars".into(), "car".into());
        let v = Vocabulary::new(
            ["street"].map(String::from),
            ["car"].map(String::from),
            lm,
        )
        .unwrap();
        assert_eq!(v.object_index("cars"), Some(0));
        assert_eq!(v.object_index("bicycle"), None);
    }

    #[test]
    fn empty_vocabulary_file_is_error() {
        let f = file_with("# only a comment\n");
        assert!(load_name_list(f.path()).is_err());
    }

    #[test]
    fn annotations_multiset() {
        let f = file_with("img1\tstreet\tcar,person,car\n");
        let anns = load_annotations(f.path()).unwrap();
        assert_eq!(anns[0].objects, vec!["car", "person", "car"]);
    }

    #[test]
    fn annotations_duplicate_image_rejected() {
        let f = file_with("img1\tstreet\tcar\nimg1\tstreet\tperson\n");
        assert!(load_annotations(f.path()).is_err());
    }

    #[test]
    fn scene_scores_grouping() {
        let f = file_with("img1\tstreet\t2\nimg1\thighway\t1\nimg2\tstreet\t1\n");
        let rows = load_scene_scores(f.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].scores["street"], 2.0);
    }

    #[test]
    fn scene_scores_all_zero_rejected() {
        let f = file_with("img1\tstreet\t0\nimg1\thighway\t0\n");
        assert!(load_scene_scores(f.path()).is_err());
    }

    #[test]
    fn scene_scores_non_contiguous_rejected() {
        let f = file_with("img1\tstreet\t1\nimg2\tstreet\t1\nimg1\thighway\t1\n");
        assert!(load_scene_scores(f.path()).is_err());
    }

    #[test]
    fn detections_bad_box_rejected() {
        let f = file_with("img1\tcar\t0.9\t10,0,5,10\n");
        assert!(load_detections(f.path()).is_err());
    }

    #[test]
    fn detections_with_label() {
        let f = file_with("img1\tcar\t0.9\t0,0,10,10\ttp\n");
        let recs = load_detections(f.path()).unwrap();
        assert_eq!(recs[0].tp_label, Some(true));
    }

    #[test]
    fn round_trip_triples_and_detections() {
        let triples = vec![
            TripleRecord {
                arg1: "car".into(),
                relation: "drove down".into(),
                arg2: "street".into(),
                count: 1,
            },
            TripleRecord {
                arg1: "person".into(),
                relation: "were on".into(),
                arg2: "street".into(),
                count: 7,
            },
        ];
        let f = NamedTempFile::new().unwrap();
        save_triples(f.path(), &triples, Some("test header")).unwrap();
        assert_eq!(load_triples(f.path()).unwrap(), triples);

        let dets = vec![DetectionRecord {
            image_id: "img1".into(),
            class_name: "car".into(),
            score: 0.25,
            bbox: BBox::new(0.0, 0.5, 10.25, 12.0).unwrap(),
            tp_label: Some(false),
        }];
        let f = NamedTempFile::new().unwrap();
        save_detections(f.path(), &dets, None).unwrap();
        assert_eq!(load_detections(f.path()).unwrap(), dets);
    }
}
