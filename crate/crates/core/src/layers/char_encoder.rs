use rand::Rng;

use super::dropout::{apply_dropout, dropout_mask};
use super::embedding::EmbeddingTable;
use super::linear::Linear;
use super::lstm::{LstmDirection, LstmParams};
use super::{LayerError, Result};
use crate::autodiff::{uniform, ParamId, ParamStore, Tape, Var};
use crate::data::BOUNDARY_INDEX;

/// Number of stride-1 trigram windows over a word of `len` characters.
pub fn window_count(len: usize) -> usize {
    len.saturating_sub(2).max(1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CharDropout {
    pub ff: f64,
    pub recur: f64,
    pub linear: f64,
}

/// Word vectors from characters: trigram windows of character embeddings
/// feed a unidirectional LSTM whose final state is linearly projected.
#[derive(Clone, Debug)]
pub struct CharEncoder {
    pub embedding: EmbeddingTable,
    pub lstm: LstmParams,
    pub linear: Linear,
    /// Learned `1 × output` vector used for dropped words.
    pub drop_row: ParamId,
}

impl CharEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        chars: usize,
        char_dim: usize,
        hidden: usize,
        output: usize,
    ) -> Self {
        let embedding = EmbeddingTable::new(store, &format!("{name}/emb"), rng, chars, char_dim);
        let lstm = LstmParams::new(
            store,
            &format!("{name}/lstm"),
            rng,
            3 * char_dim,
            hidden,
            LstmDirection::Forward,
        );
        let linear = Linear::new(store, &format!("{name}/linear"), rng, hidden, output);
        let bound = (3.0 / output as f64).sqrt();
        let drop_row = store.add(format!("{name}/drop"), uniform(rng, &[1, output], bound), false);
        CharEncoder {
            embedding,
            lstm,
            linear,
            drop_row,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output
    }

    /// One row per word; words flagged in `drop` get the learned drop vector
    /// without running the LSTM.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        words: &[Vec<usize>],
        drop: &[bool],
        dropout: CharDropout,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if words.len() != drop.len() {
            return Err(LayerError::MaskLength {
                ids: words.len(),
                mask: drop.len(),
            });
        }
        if words.is_empty() {
            return Err(LayerError::EmptySequence);
        }
        if let Some(i) = words.iter().position(Vec::is_empty) {
            return Err(LayerError::EmptyWord(i));
        }
        let mut finals = Vec::new();
        let mut picks = Vec::with_capacity(words.len());
        for (chars, &dropped) in words.iter().zip(drop) {
            if dropped {
                picks.push((1, 0));
                continue;
            }
            picks.push((0, finals.len()));
            finals.push(self.word_state(tape, chars, dropout, training, rng)?);
        }
        let drop_row = tape.param(self.drop_row);
        if finals.is_empty() {
            return Ok(tape.select_rows(&[drop_row], &vec![(0, 0); words.len()])?);
        }
        let states = tape.concat(&finals, 0)?;
        let projected = self.linear.forward(tape, states)?;
        let projected = apply_dropout(tape, projected, dropout.linear, training, rng)?;
        Ok(tape.select_rows(&[projected, drop_row], &picks)?)
    }

    fn word_state<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        chars: &[usize],
        dropout: CharDropout,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let mut ids = chars.to_vec();
        ids.resize(ids.len().max(3), BOUNDARY_INDEX);
        let windows = window_count(chars.len());
        let emb = self.embedding.embed(tape, &ids, &vec![false; ids.len()])?;
        let shifted: Vec<Var> = (0..3)
            .map(|k| tape.narrow(emb, 0, k, windows))
            .collect::<std::result::Result<_, _>>()?;
        let x = tape.concat(&shifted, 1)?;
        let (im, rm) = if training {
            (
                (dropout.ff > 0.0).then(|| tape.constant(dropout_mask(rng, &[self.lstm.input], dropout.ff))),
                (dropout.recur > 0.0)
                    .then(|| tape.constant(dropout_mask(rng, &[self.lstm.hidden], dropout.recur))),
            )
        } else {
            (None, None)
        };
        let (_, last) = self.lstm.run(tape, x, im, rm, None)?;
        Ok(last)
    }
}
