use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::graph::SemanticGraph;

pub const DEFAULT_TOKEN_BUDGET: usize = 3000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("sentence {index} has {len} tokens, more than the batch budget of {budget}")]
    TooLong {
        index: usize,
        len: usize,
        budget: usize,
    },
}

/// Indices of the sentences in one minibatch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sentences: Vec<usize>,
    pub tokens: usize,
}

/// Groups sentences into batches of at most `budget` tokens.
///
/// Sentences are shuffled with `seed`, stably sorted by length so that
/// similar lengths share a batch, filled greedily, and the resulting
/// batches are shuffled again.
pub fn batch_by_tokens(
    graphs: &[SemanticGraph],
    budget: usize,
    seed: u64,
) -> Result<Vec<Batch>, BatchError> {
    let lengths: Vec<usize> = graphs.iter().map(SemanticGraph::len).collect();
    batch_lengths(&lengths, budget, seed)
}

pub fn batch_lengths(lengths: &[usize], budget: usize, seed: u64) -> Result<Vec<Batch>, BatchError> {
    if let Some((index, &len)) = lengths.iter().enumerate().find(|(_, &l)| l > budget) {
        return Err(BatchError::TooLong { index, len, budget });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| lengths[i]);

    let mut batches = Vec::new();
    let mut current = Batch {
        sentences: Vec::new(),
        tokens: 0,
    };
    for i in order {
        if current.tokens + lengths[i] > budget && !current.sentences.is_empty() {
            batches.push(std::mem::replace(
                &mut current,
                Batch {
                    sentences: Vec::new(),
                    tokens: 0,
                },
            ));
        }
        current.tokens += lengths[i];
        current.sentences.push(i);
    }
    if !current.sentences.is_empty() {
        batches.push(current);
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}
