use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;

use super::{LayerError, Result};
use crate::autodiff::{uniform, ParamId, ParamStore, Tape, Tensor, Var};

/// Row index of each pretrained token.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainedWords {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl PretrainedWords {
    /// Repeated tokens keep their first row.
    pub fn new(words: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            index.entry(w.clone()).or_insert(i);
        }
        PretrainedWords { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Row for `form`, falling back to its lowercase spelling.
    pub fn lookup(&self, form: &str) -> Option<usize> {
        self.index
            .get(form)
            .or_else(|| self.index.get(&form.to_lowercase()))
            .copied()
    }
}

/// Pretrained word vectors read from a text file.
#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    pub words: PretrainedWords,
    pub vectors: Tensor,
}

impl Pretrained {
    pub fn new(words: Vec<String>, vectors: Tensor) -> Result<Self> {
        if vectors.rank() != 2 || vectors.shape()[0] != words.len() {
            return Err(LayerError::PretrainedFormat {
                line: 0,
                msg: format!("{} words for a {:?} table", words.len(), vectors.shape()),
            });
        }
        Ok(Pretrained {
            words: PretrainedWords::new(words),
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn lookup(&self, form: &str) -> Option<usize> {
        self.words.lookup(form)
    }
}

/// Reads `token v1 … vd` lines. A leading `count dim` line (word2vec text
/// header) is skipped, as are blank lines.
pub fn read_pretrained<R: BufRead>(source: R) -> Result<Pretrained> {
    let mut words = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if n == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
            continue;
        }
        let parsed: Vec<f64> = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| LayerError::PretrainedFormat {
                line: line_no,
                msg: e.to_string(),
            })?;
        match dim {
            None if parsed.is_empty() => {
                return Err(LayerError::PretrainedFormat {
                    line: line_no,
                    msg: "no vector values".into(),
                })
            }
            None => dim = Some(parsed.len()),
            Some(d) if d != parsed.len() => {
                return Err(LayerError::PretrainedFormat {
                    line: line_no,
                    msg: format!("{} values where {d} were expected", parsed.len()),
                })
            }
            Some(_) => {}
        }
        words.push(token.to_string());
        data.extend(parsed);
    }
    let Some(dim) = dim else {
        return Err(LayerError::PretrainedFormat {
            line: 0,
            msg: "no vectors".into(),
        });
    };
    let vectors = Tensor::new(vec![words.len(), dim], data)?;
    Pretrained::new(words, vectors)
}

/// Whether tokens missing from the pretrained file share a learned row or a zero vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnkRow {
    #[default]
    Trainable,
    Zero,
}

/// Frozen pretrained table plus trainable unknown and `<DROP>` rows.
#[derive(Clone, Debug)]
pub struct PretrainedEmbedding {
    pub table: ParamId,
    /// Row 0 is the unknown vector, row 1 the drop vector.
    pub specials: ParamId,
    pub rows: usize,
    pub dim: usize,
    pub unk: UnkRow,
}

impl PretrainedEmbedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        vectors: Tensor,
        unk: UnkRow,
    ) -> Self {
        let (rows, dim) = (vectors.shape()[0], vectors.shape()[1]);
        let table = store.add(format!("{name}/table"), vectors, true);
        let mut init = uniform(rng, &[2, dim], (3.0 / dim as f64).sqrt());
        if unk == UnkRow::Zero {
            init.data_mut()[..dim].fill(0.0);
        }
        let specials = store.add(format!("{name}/specials"), init, false);
        PretrainedEmbedding {
            table,
            specials,
            rows,
            dim,
            unk,
        }
    }

    /// `ids[i]` is the pretrained row of token i, `None` when absent.
    pub fn embed(&self, tape: &mut Tape<'_>, ids: &[Option<usize>], drop: &[bool]) -> Result<Var> {
        if ids.len() != drop.len() {
            return Err(LayerError::MaskLength {
                ids: ids.len(),
                mask: drop.len(),
            });
        }
        if ids.is_empty() {
            return Err(LayerError::EmptySequence);
        }
        if let Some(id) = ids.iter().flatten().find(|&&id| id >= self.rows) {
            return Err(LayerError::IdOutOfRange {
                id: *id,
                rows: self.rows,
            });
        }
        let table = tape.param(self.table);
        let specials = tape.param(self.specials);
        let zero = tape.constant(Tensor::zeros(&[1, self.dim]));
        let picks: Vec<(usize, usize)> = ids
            .iter()
            .zip(drop)
            .map(|(&id, &d)| match (d, id) {
                (true, _) => (1, 1),
                (false, Some(r)) => (0, r),
                (false, None) if self.unk == UnkRow::Zero => (2, 0),
                (false, None) => (1, 0),
            })
            .collect();
        Ok(tape.select_rows(&[table, specials, zero], &picks)?)
    }
}
