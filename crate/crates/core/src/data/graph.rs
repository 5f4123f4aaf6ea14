use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("token {position} has index {index}; indices must run 1..=n")]
    TokenIndex { position: usize, index: usize },
    #[error("token {0} has an empty form")]
    EmptyForm(usize),
    #[error("edge {head}->{dependent} is a self-loop")]
    SelfLoop { head: usize, dependent: usize },
    #[error("edge {head}->{dependent} appears twice")]
    DuplicateEdge { head: usize, dependent: usize },
    #[error("index {index} outside 1..={len}")]
    OutOfRange { index: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub pos: String,
    /// Opaque frame/sense column, passed through unchanged.
    pub frame: String,
}

impl Token {
    pub fn new(index: usize, form: &str, lemma: &str, pos: &str) -> Self {
        Token {
            index,
            form: form.to_string(),
            lemma: lemma.to_string(),
            pos: pos.to_string(),
            frame: "_".to_string(),
        }
    }

    pub fn characters(&self) -> impl Iterator<Item = char> + '_ {
        self.form.chars()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub head: usize,
    pub dependent: usize,
    pub label: String,
}

impl Edge {
    pub fn new(head: usize, dependent: usize, label: impl Into<String>) -> Self {
        Edge {
            head,
            dependent,
            label: label.into(),
        }
    }
}

/// A sentence with its labeled semantic dependency edges and top nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticGraph {
    pub id: Option<String>,
    tokens: Vec<Token>,
    edges: BTreeMap<(usize, usize), String>,
    tops: BTreeSet<usize>,
}

impl SemanticGraph {
    pub fn new(
        id: Option<String>,
        tokens: Vec<Token>,
        edges: impl IntoIterator<Item = Edge>,
        tops: impl IntoIterator<Item = usize>,
    ) -> Result<Self, GraphError> {
        for (pos, t) in tokens.iter().enumerate() {
            if t.index != pos + 1 {
                return Err(GraphError::TokenIndex {
                    position: pos + 1,
                    index: t.index,
                });
            }
            if t.form.is_empty() {
                return Err(GraphError::EmptyForm(t.index));
            }
        }
        let len = tokens.len();
        let in_range = |index: usize| {
            if index == 0 || index > len {
                Err(GraphError::OutOfRange { index, len })
            } else {
                Ok(())
            }
        };
        let mut map = BTreeMap::new();
        for e in edges {
            in_range(e.head)?;
            in_range(e.dependent)?;
            if e.head == e.dependent {
                return Err(GraphError::SelfLoop {
                    head: e.head,
                    dependent: e.dependent,
                });
            }
            if map.insert((e.head, e.dependent), e.label).is_some() {
                return Err(GraphError::DuplicateEdge {
                    head: e.head,
                    dependent: e.dependent,
                });
            }
        }
        let tops: BTreeSet<usize> = tops.into_iter().collect();
        for &t in &tops {
            in_range(t)?;
        }
        Ok(SemanticGraph {
            id,
            tokens,
            edges: map,
            tops,
        })
    }

    /// Same tokens, no edges or tops.
    pub fn unannotated(&self) -> SemanticGraph {
        SemanticGraph {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            edges: BTreeMap::new(),
            tops: BTreeSet::new(),
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Edges ordered by (head, dependent).
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges
            .iter()
            .map(|(&(h, d), l)| Edge::new(h, d, l.as_str()))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn label(&self, head: usize, dependent: usize) -> Option<&str> {
        self.edges.get(&(head, dependent)).map(String::as_str)
    }

    pub fn tops(&self) -> &BTreeSet<usize> {
        &self.tops
    }

    /// Whether `index` heads at least one edge.
    pub fn is_predicate(&self, index: usize) -> bool {
        self.edges.keys().any(|&(h, _)| h == index)
    }

    pub fn predicates(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.keys().map(|&(h, _)| h).collect();
        set.into_iter().collect()
    }

    /// A directed cycle as a list of token indices, if any. Iterative depth-first search.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        let n = self.tokens.len();
        let mut children = vec![Vec::new(); n + 1];
        for &(h, d) in self.edges.keys() {
            children[h].push(d);
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n + 1];
        let mut parent = vec![0usize; n + 1];
        for start in 1..=n {
            if state[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if let Some(&child) = children[node].get(*next) {
                    *next += 1;
                    match state[child] {
                        0 => {
                            state[child] = 1;
                            parent[child] = node;
                            stack.push((child, 0));
                        }
                        1 => {
                            let mut cycle = vec![child];
                            let mut cur = node;
                            while cur != child {
                                cycle.push(cur);
                                cur = parent[cur];
                            }
                            cycle.reverse();
                            return Some(cycle);
                        }
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn is_dag(&self) -> bool {
        self.find_cycle().is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(n: usize) -> Vec<Token> {
        (1..=n).map(|i| Token::new(i, "w", "w", "X")).collect()
    }

    #[test]
    fn rejects_invalid_edges() {
        assert_eq!(
            SemanticGraph::new(None, tokens(3), [Edge::new(2, 2, "a")], []),
            Err(GraphError::SelfLoop {
                head: 2,
                dependent: 2
            })
        );
        assert_eq!(
            SemanticGraph::new(None, tokens(3), [Edge::new(1, 2, "a"), Edge::new(1, 2, "b")], []),
            Err(GraphError::DuplicateEdge {
                head: 1,
                dependent: 2
            })
        );
        assert!(SemanticGraph::new(None, tokens(3), [Edge::new(1, 4, "a")], []).is_err());
        assert!(SemanticGraph::new(None, tokens(3), [], [0]).is_err());
    }

    #[test]
    fn rejects_bad_token_indices() {
        let mut t = tokens(2);
        t[1].index = 3;
        assert!(matches!(
            SemanticGraph::new(None, t, [], []),
            Err(GraphError::TokenIndex { .. })
        ));
    }

    #[test]
    fn detects_cycles() {
        let dag = SemanticGraph::new(
            None,
            tokens(4),
            [Edge::new(1, 2, "a"), Edge::new(1, 3, "a"), Edge::new(2, 3, "a"), Edge::new(3, 4, "a")],
            [1],
        )
        .unwrap();
        assert!(dag.is_dag());
        let cyclic = SemanticGraph::new(
            None,
            tokens(4),
            [Edge::new(1, 2, "a"), Edge::new(2, 3, "a"), Edge::new(3, 1, "a")],
            [],
        )
        .unwrap();
        let cycle = cyclic.find_cycle().unwrap();
        assert_eq!(cycle.len(), 3);
        for w in cycle.windows(2) {
            assert!(cyclic.label(w[0], w[1]).is_some());
        }
        assert!(cyclic.label(*cycle.last().unwrap(), cycle[0]).is_some());
    }
}
