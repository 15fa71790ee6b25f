//! Triple dataset ingestion and the inverse-augmented knowledge graph.
//!
//! Datasets are directories with `train.txt`, `valid.txt`, and `test.txt`,
//! one `head<TAB>relation<TAB>tail` triple per line. Building a
//! [`KnowledgeGraph`] assigns dense ids in first-occurrence order
//! (train, then valid, then test), appends a reciprocal relation `r_reciprocal`
//! with id `raw_id + raw_relation_count` for every raw relation, augments
//! every split with `(t, r_reciprocal, h)`, and indexes all known-true tails
//! per `(head, relation)` for filtered evaluation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Suffix appended to a raw relation label to name its reciprocal.
pub const RECIPROCAL_SUFFIX: &str = "_reciprocal";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {fields}")]
    Malformed {
        path: PathBuf,
        line: usize,
        fields: usize,
    },
}

/// An id-level triple. Ids index into the graph's vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// A raw string-level triple as read from disk.
pub type RawTriple = (String, String, String);

/// Read one split file: one `head<TAB>relation<TAB>tail` per line.
///
/// Lines are whitespace-trimmed and empty lines skipped. A line with a
/// field count other than 3 is a parse error carrying its line number.
pub fn load_split(path: &Path) -> Result<Vec<RawTriple>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DatasetError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                fields: fields.len(),
            });
        }
        out.push((
            fields[0].trim().to_string(),
            fields[1].trim().to_string(),
            fields[2].trim().to_string(),
        ));
    }
    Ok(out)
}

/// Entity/relation vocabularies, augmented splits, and the filter index.
///
/// Immutable once built; safe to share across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_labels: Vec<String>,
    entity_ids: HashMap<String, usize>,
    /// Raw labels first, then their reciprocals in the same order.
    relation_labels: Vec<String>,
    relation_ids: HashMap<String, usize>,
    raw_relation_count: usize,
    /// Augmented splits: the raw triples in file order, then the reciprocal
    /// of each in the same order.
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    filter_index: HashMap<(usize, usize), HashSet<usize>>,
}

impl KnowledgeGraph {
    /// Build vocabularies, augment with reciprocal relations, and index
    /// known-true tails over all three splits.
    pub fn build(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Self {
        let mut entity_labels = Vec::new();
        let mut entity_ids = HashMap::new();
        let mut relation_labels = Vec::new();
        let mut relation_ids = HashMap::new();

        let intern = |labels: &mut Vec<String>, ids: &mut HashMap<String, usize>, s: &str| {
            if let Some(&id) = ids.get(s) {
                return id;
            }
            let id = labels.len();
            labels.push(s.to_string());
            ids.insert(s.to_string(), id);
            id
        };

        let mut splits = Vec::with_capacity(3);
        for raw in [train, valid, test] {
            let mut ids_split = Vec::with_capacity(raw.len());
            for (h, r, t) in raw {
                let h = intern(&mut entity_labels, &mut entity_ids, h);
                let r = intern(&mut relation_labels, &mut relation_ids, r);
                let t = intern(&mut entity_labels, &mut entity_ids, t);
                ids_split.push(Triple::new(h, r, t));
            }
            splits.push(ids_split);
        }

        let raw_relation_count = relation_labels.len();
        for r in 0..raw_relation_count {
            let label = format!("{}{}", relation_labels[r], RECIPROCAL_SUFFIX);
            relation_ids.insert(label.clone(), raw_relation_count + r);
            relation_labels.push(label);
        }

        let augment = |raw: &Vec<Triple>| -> Vec<Triple> {
            let mut out = raw.clone();
            out.extend(raw.iter().map(|t| {
                Triple::new(t.tail, t.relation + raw_relation_count, t.head)
            }));
            out
        };
        let test_s = augment(&splits.pop().unwrap());
        let valid_s = augment(&splits.pop().unwrap());
        let train_s = augment(&splits.pop().unwrap());

        let mut filter_index: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        for split in [&train_s, &valid_s, &test_s] {
            for t in split {
                filter_index
                    .entry((t.head, t.relation))
                    .or_default()
                    .insert(t.tail);
            }
        }

        Self {
            entity_labels,
            entity_ids,
            relation_labels,
            relation_ids,
            raw_relation_count,
            train: train_s,
            valid: valid_s,
            test: test_s,
            filter_index,
        }
    }

    /// Load `train.txt`, `valid.txt`, `test.txt` from a dataset directory.
    pub fn load_dir(dir: &Path) -> Result<Self, DatasetError> {
        let train = load_split(&dir.join("train.txt"))?;
        let valid = load_split(&dir.join("valid.txt"))?;
        let test = load_split(&dir.join("test.txt"))?;
        Ok(Self::build(&train, &valid, &test))
    }

    pub fn num_entities(&self) -> usize {
        self.entity_labels.len()
    }

    /// Relation count after augmentation (twice the raw count).
    pub fn num_relations(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn raw_relation_count(&self) -> usize {
        self.raw_relation_count
    }

    pub fn entity_label(&self, id: usize) -> &str {
        &self.entity_labels[id]
    }

    pub fn relation_label(&self, id: usize) -> &str {
        &self.relation_labels[id]
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entity_ids.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relation_ids.get(label).copied()
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entity_labels
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    /// All known-true tails for `(head, relation)` across every split;
    /// empty if the pair was never seen.
    pub fn known_tails(&self, head: usize, relation: usize) -> Option<&HashSet<usize>> {
        self.filter_index.get(&(head, relation))
    }

    /// Tails to exclude when ranking `(head, relation, true_tail)` in the
    /// filtered setting: every other known-true tail of the pair.
    pub fn candidate_filter(
        &self,
        head: usize,
        relation: usize,
        true_tail: usize,
    ) -> HashSet<usize> {
        match self.filter_index.get(&(head, relation)) {
            Some(tails) => {
                let mut out = tails.clone();
                out.remove(&true_tail);
                out
            }
            None => HashSet::new(),
        }
    }

    /// CRC32 over entity labels in id order, for checkpoint compatibility
    /// checks.
    pub fn entity_vocab_crc(&self) -> u32 {
        vocab_crc(&self.entity_labels)
    }

    pub fn relation_vocab_crc(&self) -> u32 {
        vocab_crc(&self.relation_labels)
    }

    /// Write a vocabulary as `id<TAB>label` lines.
    pub fn export_vocab(&self, labels: &[String], path: &Path) -> Result<(), DatasetError> {
        let file = fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        for (id, label) in labels.iter().enumerate() {
            writeln!(w, "{}\t{}", id, label).map_err(|source| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
        Ok(())
    }
}

fn vocab_crc(labels: &[String]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for label in labels {
        h.update(label.as_bytes());
        h.update(b"\n");
    }
    h.finalize()
}
