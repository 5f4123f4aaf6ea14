use crate::autodiff::Tensor;
use crate::data::{Edge, SemanticGraph, SymbolTable, TOP_LABEL_INDEX};

/// A predicted edge by position (0 is the virtual ROOT) and label index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arc {
    pub head: usize,
    pub dependent: usize,
    pub label: usize,
}

/// Index of the largest value in `scores[range]`, first one on ties.
fn argmax(scores: &[f64], range: std::ops::Range<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in range {
        if best.is_none_or(|b| scores[k] > scores[b]) {
            best = Some(k);
        }
    }
    best
}

/// Keeps every cell with edge score ≥ 0 and labels it.
///
/// `edge` is `m × m` and `label` is `m × m × c`, rows indexing heads.
/// ROOT-row edges take the top label; other edges take the best non-top
/// label. Self-loops and edges into ROOT are never produced.
pub fn decode_factorized(edge: &Tensor, label: &Tensor) -> Vec<Arc> {
    let m = edge.shape()[0];
    let c = label.shape()[2];
    let mut arcs = Vec::new();
    for h in 0..m {
        for d in 1..m {
            if h == d || edge.get(&[h, d]) < 0.0 {
                continue;
            }
            let cell = &label.data()[(h * m + d) * c..(h * m + d + 1) * c];
            let l = if h == 0 {
                Some(TOP_LABEL_INDEX)
            } else {
                argmax(cell, 1..c)
            };
            if let Some(label) = l {
                arcs.push(Arc {
                    head: h,
                    dependent: d,
                    label,
                });
            }
        }
    }
    arcs
}

/// Single-labeler decoding over `c + 1` classes, the last meaning no edge.
pub fn decode_unfactorized(label: &Tensor) -> Vec<Arc> {
    let m = label.shape()[0];
    let classes = label.shape()[2];
    let null = classes - 1;
    let mut arcs = Vec::new();
    for h in 0..m {
        for d in 1..m {
            if h == d {
                continue;
            }
            let cell = &label.data()[(h * m + d) * classes..(h * m + d + 1) * classes];
            let best = if h == 0 {
                if cell[TOP_LABEL_INDEX] >= cell[null] {
                    TOP_LABEL_INDEX
                } else {
                    null
                }
            } else {
                argmax(cell, 1..classes).unwrap_or(null)
            };
            if best != null {
                arcs.push(Arc {
                    head: h,
                    dependent: d,
                    label: best,
                });
            }
        }
    }
    arcs
}

/// Builds the predicted graph over `sentence`'s tokens.
pub fn arcs_to_graph(sentence: &SemanticGraph, arcs: &[Arc], labels: &SymbolTable) -> SemanticGraph {
    let tops = arcs.iter().filter(|a| a.head == 0).map(|a| a.dependent);
    let edges = arcs
        .iter()
        .filter(|a| a.head != 0)
        .map(|a| Edge::new(a.head, a.dependent, labels.symbol(a.label)));
    SemanticGraph::new(sentence.id.clone(), sentence.tokens().to_vec(), edges, tops)
        .expect("decoded arcs are in range, unique, and loop-free")
}
