use rand::Rng;

use super::{LayerError, Result};
use crate::autodiff::{uniform, ParamId, ParamStore, Tape, Var};
use crate::data::{DROP_INDEX, UNK_INDEX};

/// Trainable lookup table whose rows include learned unknown and `<DROP>` entries.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
    pub unk_row: usize,
    pub drop_row: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        rows: usize,
        dim: usize,
    ) -> Self {
        assert!(rows > DROP_INDEX, "table needs the reserved rows");
        let bound = (3.0 / dim as f64).sqrt();
        let table = store.add(name, uniform(rng, &[rows, dim], bound), false);
        EmbeddingTable {
            table,
            rows,
            dim,
            unk_row: UNK_INDEX,
            drop_row: DROP_INDEX,
        }
    }

    /// Rows of the table for `ids`, with the drop row wherever `drop` is set.
    pub fn embed(&self, tape: &mut Tape<'_>, ids: &[usize], drop: &[bool]) -> Result<Var> {
        if ids.len() != drop.len() {
            return Err(LayerError::MaskLength {
                ids: ids.len(),
                mask: drop.len(),
            });
        }
        if ids.is_empty() {
            return Err(LayerError::EmptySequence);
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.rows) {
            return Err(LayerError::IdOutOfRange {
                id,
                rows: self.rows,
            });
        }
        let rows: Vec<usize> = ids
            .iter()
            .zip(drop)
            .map(|(&id, &d)| if d { self.drop_row } else { id })
            .collect();
        let table = tape.param(self.table);
        Ok(tape.gather_rows(table, &rows)?)
    }
}
