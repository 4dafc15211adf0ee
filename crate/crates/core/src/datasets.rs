//! Word lists and the long-format distance table.
//!
//! A [`BiasDataset`] groups protected words into stereotype classes, attaches
//! attribute sets labelled with a class, and carries two control lists
//! (neutral words and human-related predicates). [`build_long_table`] joins
//! it with an embedding into one row per (protected word, attribute) pair.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedding, MissingPolicy, ResolveError};
use crate::geometry::{cosine_distance, GeometryError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("dataset document does not match the schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unknown builtin dataset {0:?} (expected religion, gender, race, weat1 or weat7)")]
    UnknownBuiltin(String),
    #[error("dataset defines no protected classes")]
    NoClasses,
    #[error("protected class {0:?} has no tokens")]
    EmptyClass(String),
    #[error("attribute set {0:?} has no tokens")]
    EmptySet(String),
    #[error("attribute set {set:?} references unknown class {class:?}")]
    DanglingClass { set: String, class: String },
    #[error("protected token {token:?} appears in classes {first:?} and {second:?}")]
    DuplicateProtected {
        token: String,
        first: String,
        second: String,
    },
    #[error("attribute token {token:?} appears in sets {first:?} and {second:?}")]
    DuplicateAttribute {
        token: String,
        first: String,
        second: String,
    },
    #[error("control token {token:?} ({list}) also appears in attribute set {set:?}")]
    ControlOverlap {
        token: String,
        list: &'static str,
        set: String,
    },
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("category {0} has no rows after skipping missing tokens")]
    EmptyCategory(AssociationCategory),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// How an attribute relates to a protected word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationCategory {
    /// Attribute from the stereotype set of the word's own class.
    Associated,
    /// Attribute from another class's stereotype set ("opposite" for gender).
    Different,
    Human,
    Neutral,
}

impl AssociationCategory {
    pub const ALL: [AssociationCategory; 4] = [Self::Associated, Self::Different, Self::Human, Self::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Associated => "associated",
            Self::Different => "different",
            Self::Human => "human",
            Self::Neutral => "neutral",
        }
    }

    /// One-letter prefix used in parameter names (`a`, `d`, `h`, `n`).
    pub fn letter(self) -> char {
        self.as_str().chars().next().unwrap()
    }
}

impl fmt::Display for AssociationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssociationCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeSetDoc {
    class: String,
    tokens: Vec<String>,
}

/// On-disk JSON layout of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    protected_classes: IndexMap<String, Vec<String>>,
    attribute_sets: IndexMap<String, AttributeSetDoc>,
    neutral: Vec<String>,
    human: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtectedWord {
    pub token: String,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeSet {
    pub id: String,
    pub class: String,
    pub tokens: Vec<String>,
}

/// Validated word lists for one bias dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasDataset {
    name: String,
    classes: Vec<String>,
    protected: Vec<ProtectedWord>,
    attribute_sets: Vec<AttributeSet>,
    neutral: Vec<String>,
    human: Vec<String>,
}

pub const BUILTIN_NAMES: [&str; 5] = ["religion", "gender", "race", "weat1", "weat7"];

impl BiasDataset {
    pub fn builtin(name: &str) -> Result<Self, DatasetError> {
        let json = match name {
            "religion" => include_str!("../data/religion.json"),
            "gender" => include_str!("../data/gender.json"),
            "race" => include_str!("../data/race.json"),
            "weat1" => include_str!("../data/weat1.json"),
            "weat7" => include_str!("../data/weat7.json"),
            other => return Err(DatasetError::UnknownBuiltin(other.to_string())),
        };
        Self::from_json(name, json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::from_json(&name, &text)
    }

    pub fn from_json(name: &str, json: &str) -> Result<Self, DatasetError> {
        let doc: DatasetDoc = serde_json::from_str(json)?;
        Self::from_doc(name, doc)
    }

    fn from_doc(name: &str, doc: DatasetDoc) -> Result<Self, DatasetError> {
        if doc.protected_classes.is_empty() {
            return Err(DatasetError::NoClasses);
        }
        let mut protected = Vec::new();
        let mut seen_protected: HashMap<&str, &str> = HashMap::new();
        for (class, tokens) in &doc.protected_classes {
            if tokens.is_empty() {
                return Err(DatasetError::EmptyClass(class.clone()));
            }
            for t in tokens {
                if let Some(first) = seen_protected.insert(t, class) {
                    if first == class {
                        continue;
                    }
                    return Err(DatasetError::DuplicateProtected {
                        token: t.clone(),
                        first: first.to_string(),
                        second: class.clone(),
                    });
                }
                protected.push(ProtectedWord {
                    token: t.clone(),
                    class: class.clone(),
                });
            }
        }

        let mut attribute_sets = Vec::new();
        let mut seen_attr: HashMap<&str, &str> = HashMap::new();
        for (id, set) in &doc.attribute_sets {
            if !doc.protected_classes.contains_key(&set.class) {
                return Err(DatasetError::DanglingClass {
                    set: id.clone(),
                    class: set.class.clone(),
                });
            }
            if set.tokens.is_empty() {
                return Err(DatasetError::EmptySet(id.clone()));
            }
            let mut tokens = Vec::new();
            for t in &set.tokens {
                match seen_attr.insert(t, id) {
                    Some(first) if first == id => continue,
                    Some(first) => {
                        return Err(DatasetError::DuplicateAttribute {
                            token: t.clone(),
                            first: first.to_string(),
                            second: id.clone(),
                        })
                    }
                    None => tokens.push(t.clone()),
                }
            }
            attribute_sets.push(AttributeSet {
                id: id.clone(),
                class: set.class.clone(),
                tokens,
            });
        }

        for (list, tokens) in [("neutral", &doc.neutral), ("human", &doc.human)] {
            for t in tokens {
                if let Some(set) = seen_attr.get(t.as_str()) {
                    return Err(DatasetError::ControlOverlap {
                        token: t.clone(),
                        list,
                        set: set.to_string(),
                    });
                }
            }
        }

        Ok(Self {
            name: name.to_string(),
            classes: doc.protected_classes.keys().cloned().collect(),
            protected,
            attribute_sets,
            neutral: dedup(&doc.neutral),
            human: dedup(&doc.human),
        })
    }

    /// Serializes back into the dataset JSON schema.
    pub fn to_json(&self) -> String {
        let mut protected_classes: IndexMap<String, Vec<String>> =
            self.classes.iter().map(|c| (c.clone(), Vec::new())).collect();
        for p in &self.protected {
            protected_classes[&p.class].push(p.token.clone());
        }
        let doc = DatasetDoc {
            protected_classes,
            attribute_sets: self
                .attribute_sets
                .iter()
                .map(|s| {
                    (
                        s.id.clone(),
                        AttributeSetDoc {
                            class: s.class.clone(),
                            tokens: s.tokens.clone(),
                        },
                    )
                })
                .collect(),
            neutral: self.neutral.clone(),
            human: self.human.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("dataset serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Class ids in document order.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn protected(&self) -> &[ProtectedWord] {
        &self.protected
    }

    pub fn protected_in(&self, class: &str) -> Vec<&str> {
        self.protected
            .iter()
            .filter(|p| p.class == class)
            .map(|p| p.token.as_str())
            .collect()
    }

    pub fn attribute_sets(&self) -> &[AttributeSet] {
        &self.attribute_sets
    }

    pub fn neutral(&self) -> &[String] {
        &self.neutral
    }

    pub fn human(&self) -> &[String] {
        &self.human
    }

    pub fn n_stereotype_attributes(&self) -> usize {
        self.attribute_sets.iter().map(|s| s.tokens.len()).sum()
    }

    /// Category of an attribute from stereotype set `set_class` relative to a
    /// protected word of class `word_class`.
    pub fn stereotype_category(word_class: &str, set_class: &str) -> AssociationCategory {
        if word_class == set_class {
            AssociationCategory::Associated
        } else {
            AssociationCategory::Different
        }
    }

    /// Categories the full table will contain.
    pub fn expected_categories(&self) -> Vec<AssociationCategory> {
        let mut out = Vec::new();
        if self
            .attribute_sets
            .iter()
            .any(|s| self.protected.iter().any(|p| p.class == s.class))
        {
            out.push(AssociationCategory::Associated);
        }
        if self
            .attribute_sets
            .iter()
            .any(|s| self.protected.iter().any(|p| p.class != s.class))
        {
            out.push(AssociationCategory::Different);
        }
        if !self.human.is_empty() {
            out.push(AssociationCategory::Human);
        }
        if !self.neutral.is_empty() {
            out.push(AssociationCategory::Neutral);
        }
        out
    }
}

fn dedup(tokens: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    tokens.iter().filter(|t| seen.insert(t.as_str())).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub protected: String,
    pub attribute: String,
    pub category: AssociationCategory,
    pub distance: f64,
}

/// One row per (protected word, attribute) with its cosine distance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LongTable {
    rows: Vec<LongRow>,
    skipped: Vec<String>,
}

impl LongTable {
    /// Builds a table from rows, sorting them into canonical order.
    pub fn from_rows(mut rows: Vec<LongRow>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (i, r) in rows.iter().enumerate() {
            if !r.distance.is_finite() {
                return Err(DatasetError::BadRow {
                    row: i + 1,
                    reason: format!("non-finite distance {}", r.distance),
                });
            }
            if !seen.insert((r.protected.as_str(), r.attribute.as_str())) {
                return Err(DatasetError::BadRow {
                    row: i + 1,
                    reason: format!("duplicate pair ({}, {})", r.protected, r.attribute),
                });
            }
        }
        sort_rows(&mut rows);
        Ok(Self {
            rows,
            skipped: Vec::new(),
        })
    }

    pub fn rows(&self) -> &[LongRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Tokens dropped under [`MissingPolicy::Skip`].
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    /// Sorted unique protected words.
    pub fn protected_words(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.rows.iter().map(|r| r.protected.as_str()).collect();
        out.dedup();
        out
    }

    pub fn categories(&self) -> Vec<AssociationCategory> {
        let mut out: Vec<_> = self.rows.iter().map(|r| r.category).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Cosine similarities (`1 - distance`) grouped by category.
    pub fn similarities_by_category(&self) -> BTreeMap<AssociationCategory, Vec<f64>> {
        let mut out: BTreeMap<_, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.category).or_default().push(1.0 - r.distance);
        }
        out
    }

    /// Keeps only the rows whose category passes `keep`.
    pub fn filter_categories(&self, keep: impl Fn(AssociationCategory) -> bool) -> LongTable {
        LongTable {
            rows: self.rows.iter().filter(|r| keep(r.category)).cloned().collect(),
            skipped: self.skipped.clone(),
        }
    }

    /// CSV with columns `protected,attribute,category,distance`; distances in
    /// 9-decimal fixed point.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["protected", "attribute", "category", "distance"])?;
        for r in &self.rows {
            w.write_record([
                r.protected.as_str(),
                r.attribute.as_str(),
                r.category.as_str(),
                &format!("{:.9}", r.distance),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, DatasetError> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["protected", "attribute", "category", "distance"] {
            return Err(DatasetError::BadRow {
                row: 0,
                reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |reason: String| DatasetError::BadRow { row: i + 1, reason };
            let category = rec[2].parse().map_err(bad)?;
            let distance = rec[3].parse::<f64>().map_err(|e| DatasetError::BadRow {
                row: i + 1,
                reason: e.to_string(),
            })?;
            rows.push(LongRow {
                protected: rec[0].to_string(),
                attribute: rec[1].to_string(),
                category,
                distance,
            });
        }
        Self::from_rows(rows)
    }
}

fn sort_rows(rows: &mut [LongRow]) {
    rows.sort_by(|a, b| {
        a.protected
            .cmp(&b.protected)
            .then(a.category.cmp(&b.category))
            .then(a.attribute.cmp(&b.attribute))
    });
}

/// Joins a dataset with an embedding: one row per protected word and every
/// stereotype, neutral and human attribute.
pub fn build_long_table(ds: &BiasDataset, emb: &Embedding, policy: MissingPolicy) -> Result<LongTable, DatasetError> {
    let mut skipped = Vec::new();
    let protected_tokens: Vec<&str> = ds.protected.iter().map(|p| p.token.as_str()).collect();
    let protected = emb.resolve("protected words", &protected_tokens, policy, &mut skipped)?;
    let class_of: HashMap<&str, &str> = ds
        .protected
        .iter()
        .map(|p| (p.token.as_str(), p.class.as_str()))
        .collect();

    // (class of the attribute set, if any; resolved vectors)
    type Source<'a> = (Option<&'a str>, Vec<(&'a str, &'a [f32])>);
    let mut sources: Vec<Source> = Vec::new();
    for set in &ds.attribute_sets {
        let resolved = emb.resolve(&format!("attribute set {}", set.id), &set.tokens, policy, &mut skipped)?;
        sources.push((Some(set.class.as_str()), resolved));
    }
    let neutral = emb.resolve("neutral list", &ds.neutral, policy, &mut skipped)?;
    let human = emb.resolve("human list", &ds.human, policy, &mut skipped)?;

    let mut rows = Vec::new();
    for &(p, pv) in &protected {
        let word_class = class_of[p];
        for (set_class, attrs) in &sources {
            let category = BiasDataset::stereotype_category(word_class, set_class.unwrap());
            for &(a, av) in attrs {
                rows.push(LongRow {
                    protected: p.to_string(),
                    attribute: a.to_string(),
                    category,
                    distance: cosine_distance(pv, av)?,
                });
            }
        }
        for (category, list) in [
            (AssociationCategory::Neutral, &neutral),
            (AssociationCategory::Human, &human),
        ] {
            for &(a, av) in list {
                rows.push(LongRow {
                    protected: p.to_string(),
                    attribute: a.to_string(),
                    category,
                    distance: cosine_distance(pv, av)?,
                });
            }
        }
    }

    let present: HashSet<AssociationCategory> = rows.iter().map(|r| r.category).collect();
    for c in ds.expected_categories() {
        if !present.contains(&c) {
            return Err(DatasetError::EmptyCategory(c));
        }
    }

    let mut table = LongTable::from_rows(rows)?;
    table.skipped = skipped;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_doc() -> &'static str {
        r#"{"protected_classes": {"c": ["p"]},
            "attribute_sets": {"s": {"class": "c", "tokens": ["a"]}},
            "neutral": ["n"], "human": ["h"]}"#
    }

    #[test]
    fn builtin_counts() {
        let rel = BiasDataset::builtin("religion").unwrap();
        assert_eq!(rel.protected().len(), 15);
        assert_eq!(rel.attribute_sets().len(), 3);
        assert_eq!(rel.n_stereotype_attributes(), 11);
        assert_eq!(rel.neutral().len(), 226);
        assert_eq!(rel.human().len(), 85);

        let gender = BiasDataset::builtin("gender").unwrap();
        assert_eq!(gender.protected().len(), 14);
        assert!(gender.protected_in("man").contains(&"he"));
        assert!(gender.protected_in("woman").contains(&"she"));
        let sizes: Vec<usize> = gender.attribute_sets().iter().map(|s| s.tokens.len()).collect();
        assert_eq!(sizes, [12, 13]);

        let race = BiasDataset::builtin("race").unwrap();
        assert_eq!(race.protected_in("black"), ["black", "african", "africa"]);
        assert_eq!(
            race.protected_in("caucasian"),
            ["caucasian", "white", "america", "europe"]
        );
        assert_eq!(race.protected_in("asian"), ["asian", "asia", "china"]);

        assert_eq!(BiasDataset::builtin("weat7").unwrap().protected().len(), 16);
        assert_eq!(BiasDataset::builtin("weat1").unwrap().protected().len(), 50);
        assert!(matches!(
            BiasDataset::builtin("nope"),
            Err(DatasetError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn minimal_document_loads_and_round_trips() {
        let ds = BiasDataset::from_json("m", minimal_doc()).unwrap();
        assert_eq!(ds.classes(), ["c"]);
        let again = BiasDataset::from_json("m", &ds.to_json()).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn validation_errors() {
        let dangling = r#"{"protected_classes": {"c": ["p"]},
            "attribute_sets": {"s": {"class": "zzz", "tokens": ["a"]}}, "neutral": [], "human": []}"#;
        assert!(matches!(
            BiasDataset::from_json("x", dangling),
            Err(DatasetError::DanglingClass { ref class, .. }) if class == "zzz"
        ));
        let dup = r#"{"protected_classes": {"c": ["p"], "d": ["q"]},
            "attribute_sets": {"s": {"class": "c", "tokens": ["a"]}, "t": {"class": "d", "tokens": ["a"]}},
            "neutral": [], "human": []}"#;
        assert!(matches!(
            BiasDataset::from_json("x", dup),
            Err(DatasetError::DuplicateAttribute { ref token, .. }) if token == "a"
        ));
        let overlap = r#"{"protected_classes": {"c": ["p"]},
            "attribute_sets": {"s": {"class": "c", "tokens": ["a"]}}, "neutral": ["a"], "human": []}"#;
        assert!(matches!(
            BiasDataset::from_json("x", overlap),
            Err(DatasetError::ControlOverlap { .. })
        ));
        let schema = r#"{"protected_classes": {"c": ["p"]}, "neutral": [], "human": []}"#;
        assert!(matches!(
            BiasDataset::from_json("x", schema),
            Err(DatasetError::Schema(_))
        ));
        let extra = r#"{"protected_classes": {"c": ["p"]}, "attribute_sets": {}, "neutral": [], "human": [], "x": 1}"#;
        assert!(matches!(
            BiasDataset::from_json("x", extra),
            Err(DatasetError::Schema(_))
        ));
    }

    /// Embedding containing every token of `ds`, with deterministic pseudo-random vectors.
    pub(crate) fn covering_embedding(ds: &BiasDataset, drop: &[&str]) -> Embedding {
        let mut words: Vec<String> = ds.protected().iter().map(|p| p.token.clone()).collect();
        for s in ds.attribute_sets() {
            words.extend(s.tokens.iter().cloned());
        }
        words.extend(ds.neutral().iter().cloned());
        words.extend(ds.human().iter().cloned());
        words.sort();
        words.dedup();
        words.retain(|w| !drop.contains(&w.as_str()));
        let dim = 8;
        let mut state = 0x2545F4914F6CDD1Du64;
        let matrix = (0..words.len() * dim)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f32 / (1u64 << 53) as f32 - 0.5
            })
            .collect();
        Embedding::from_rows(words, matrix, dim).unwrap()
    }

    #[test]
    fn religion_stereotype_rows() {
        let ds = BiasDataset::builtin("religion").unwrap();
        let emb = covering_embedding(&ds, &[]);
        let table = build_long_table(&ds, &emb, MissingPolicy::Error).unwrap();
        assert_eq!(table.len(), 15 * (11 + 226 + 85));
        let stereo =
            table.filter_categories(|c| matches!(c, AssociationCategory::Associated | AssociationCategory::Different));
        assert_eq!(stereo.len(), 165);
        assert!(table.rows().iter().all(|r| (0.0..=2.0).contains(&r.distance)));
    }

    #[test]
    fn gender_categories() {
        let ds = BiasDataset::builtin("gender").unwrap();
        let emb = covering_embedding(&ds, &[]);
        let table = build_long_table(&ds, &emb, MissingPolicy::Error).unwrap();
        let cat = |p: &str, a: &str| {
            table
                .rows()
                .iter()
                .find(|r| r.protected == p && r.attribute == a)
                .unwrap()
                .category
        };
        assert_eq!(cat("he", "manager"), AssociationCategory::Associated);
        assert_eq!(cat("she", "manager"), AssociationCategory::Different);
        assert_eq!(cat("she", "nurse"), AssociationCategory::Associated);
        assert_eq!(cat("she", "ballpark"), AssociationCategory::Neutral);
        assert_eq!(cat("he", "youtube"), AssociationCategory::Human);
    }

    #[test]
    fn skip_policy_drops_rows() {
        let ds = BiasDataset::builtin("religion").unwrap();
        let full = build_long_table(&ds, &covering_embedding(&ds, &[]), MissingPolicy::Error).unwrap();
        let emb = covering_embedding(&ds, &["ballpark"]);
        assert!(matches!(
            build_long_table(&ds, &emb, MissingPolicy::Error),
            Err(DatasetError::Resolve(ResolveError::Missing { .. }))
        ));
        let table = build_long_table(&ds, &emb, MissingPolicy::Skip).unwrap();
        assert_eq!(table.len(), full.len() - 15);
        assert_eq!(table.skipped(), ["ballpark"]);
    }

    #[test]
    fn empty_category_after_skip() {
        let ds = BiasDataset::from_json("m", minimal_doc()).unwrap();
        let emb = Embedding::from_rows(
            vec!["p".into(), "a".into(), "n".into()],
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            2,
        )
        .unwrap();
        let err = build_long_table(&ds, &emb, MissingPolicy::Skip).unwrap_err();
        assert!(
            matches!(err, DatasetError::Resolve(ResolveError::EmptyAfterSkip { .. })),
            "{err}"
        );
    }

    #[test]
    fn rows_sorted_and_categories_recomputable() {
        let ds = BiasDataset::builtin("race").unwrap();
        let emb = covering_embedding(&ds, &[]);
        let table = build_long_table(&ds, &emb, MissingPolicy::Error).unwrap();
        assert_eq!(table.len(), 10 * (15 + 226 + 85));
        let mut sorted = table.rows().to_vec();
        sort_rows(&mut sorted);
        assert_eq!(sorted, table.rows());

        let class_of: HashMap<&str, &str> = ds
            .protected()
            .iter()
            .map(|p| (p.token.as_str(), p.class.as_str()))
            .collect();
        for r in table.rows() {
            let expected = if ds.neutral().contains(&r.attribute) {
                AssociationCategory::Neutral
            } else if ds.human().contains(&r.attribute) {
                AssociationCategory::Human
            } else {
                let set = ds
                    .attribute_sets()
                    .iter()
                    .find(|s| s.tokens.contains(&r.attribute))
                    .unwrap();
                BiasDataset::stereotype_category(class_of[r.protected.as_str()], &set.class)
            };
            assert_eq!(r.category, expected, "{r:?}");
        }
        let again = build_long_table(&ds, &emb, MissingPolicy::Error).unwrap();
        assert_eq!(again, table);
    }

    #[test]
    fn csv_round_trip() {
        let ds = BiasDataset::builtin("weat7").unwrap();
        let emb = covering_embedding(&ds, &[]);
        let table = build_long_table(&ds, &emb, MissingPolicy::Error).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("protected,attribute,category,distance\n"));
        let first = text.lines().nth(1).unwrap();
        assert_eq!(first.rsplit(',').next().unwrap().split('.').nth(1).unwrap().len(), 9);
        let back = LongTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), table.len());
        for (a, b) in back.rows().iter().zip(table.rows()) {
            assert!((a.distance - b.distance).abs() <= 5e-10);
            assert_eq!(
                (&a.protected, &a.attribute, a.category),
                (&b.protected, &b.attribute, b.category)
            );
        }
    }
}
