use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::SemanticGraph;

pub const UNK: &str = "<UNK>";
pub const DROP: &str = "<DROP>";
pub const BOUNDARY: &str = "<BOUNDARY>";
/// Label of the virtual ROOT → top-node edges.
pub const TOP_LABEL: &str = "<TOP>";

pub const UNK_INDEX: usize = 0;
pub const DROP_INDEX: usize = 1;
/// Character padding for words shorter than one window.
pub const BOUNDARY_INDEX: usize = 2;
pub const TOP_LABEL_INDEX: usize = 0;

pub const DEFAULT_MIN_COUNT: usize = 7;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed vocabulary file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Bidirectional symbol ↔ index map.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SymbolTable {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for SymbolTable {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols
    }
}

impl SymbolTable {
    fn with_reserved(reserved: &[&str]) -> Self {
        let mut t = SymbolTable::default();
        for r in reserved {
            t.push(r);
        }
        t
    }

    fn push(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        self.symbols.push(s.to_string());
        self.index.insert(s.to_string(), self.symbols.len() - 1);
        self.symbols.len() - 1
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Index of `s`, or the unknown index.
    pub fn lookup(&self, s: &str) -> usize {
        self.get(s).unwrap_or(UNK_INDEX)
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Frequency counter that remembers first-occurrence order.
struct Counter<'a> {
    counts: HashMap<&'a str, (usize, usize)>,
}

impl<'a> Counter<'a> {
    fn new() -> Self {
        Counter {
            counts: HashMap::new(),
        }
    }

    fn add(&mut self, s: &'a str) {
        let next = self.counts.len();
        self.counts.entry(s).or_insert((0, next)).0 += 1;
    }

    /// Symbols with count ≥ `min`, by descending count then first occurrence.
    fn ranked(&self, min: usize) -> Vec<&'a str> {
        let mut v: Vec<(&str, usize, usize)> = self
            .counts
            .iter()
            .filter(|(_, &(c, _))| c >= min)
            .map(|(&s, &(c, first))| (s, c, first))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        v.into_iter().map(|(s, _, _)| s).collect()
    }
}

fn table<'a>(reserved: &[&str], ranked: impl IntoIterator<Item = &'a str>) -> SymbolTable {
    let mut t = SymbolTable::with_reserved(reserved);
    for s in ranked {
        t.push(s);
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: SymbolTable,
    pub lemmas: SymbolTable,
    pub pos: SymbolTable,
    pub chars: SymbolTable,
    /// Edge labels; index 0 is the reserved top label. There is no "no edge" entry.
    pub labels: SymbolTable,
    pub min_count: usize,
}

impl Vocabulary {
    /// Words and lemmas need `min_count` training occurrences; tags,
    /// characters, and labels are kept regardless of frequency.
    pub fn build(train: &[SemanticGraph], min_count: usize) -> Result<Self, VocabError> {
        if train.iter().all(|g| g.is_empty()) {
            return Err(VocabError::EmptyCorpus);
        }
        let mut words = Counter::new();
        let mut lemmas = Counter::new();
        let mut pos = Counter::new();
        let mut labels = Counter::new();
        let mut char_strings: Vec<String> = Vec::new();
        for g in train {
            for t in g.tokens() {
                words.add(&t.form);
                lemmas.add(&t.lemma);
                pos.add(&t.pos);
                char_strings.extend(t.characters().map(String::from));
            }
        }
        let mut chars = Counter::new();
        for c in &char_strings {
            chars.add(c);
        }
        let edges: Vec<String> = train
            .iter()
            .flat_map(|g| g.edges().map(|e| e.label))
            .collect();
        for l in &edges {
            labels.add(l);
        }
        Ok(Vocabulary {
            words: table(&[UNK, DROP], words.ranked(min_count)),
            lemmas: table(&[UNK, DROP], lemmas.ranked(min_count)),
            pos: table(&[UNK, DROP], pos.ranked(1)),
            chars: table(&[UNK, DROP, BOUNDARY], chars.ranked(1)),
            labels: table(&[TOP_LABEL], labels.ranked(1)),
            min_count,
        })
    }

    pub fn char_ids(&self, form: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        form.chars()
            .map(|c| self.chars.lookup(c.encode_utf8(&mut buf)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let mut v: Vocabulary = serde_json::from_str(text)?;
        for t in [
            &mut v.words,
            &mut v.lemmas,
            &mut v.pos,
            &mut v.chars,
            &mut v.labels,
        ] {
            t.rebuild_index();
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
