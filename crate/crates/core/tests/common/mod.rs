#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;

use sdp_core::autodiff::Tensor;
use sdp_core::data::{Edge, SemanticGraph, Token};

pub const LABELS: &[&str] = &["ARG1", "ARG2", "BV", "compound", "_and_c", "loc"];
const FORMS: &[&str] = &["Mary", "wants", "to", "buy", "a", "book", ".", "É", "co-op", "3.5", "naïve", "#tag"];
const POS: &[&str] = &["NNP", "VBZ", "TO", "VB", "DT", "NN", ".", "JJ", "CD"];
const FRAMES: &[&str] = &["_", "v:e-i-p", "q:i-h-h", "n:x", "named:x-c", "p:e-u-i"];

/// A well-formed graph with `n` tokens, random edges (no self-loops), and random tops.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, density: f64) -> SemanticGraph {
    let tokens = (1..=n)
        .map(|i| {
            let form = *FORMS.choose(rng).unwrap();
            let mut t = Token::new(i, form, &form.to_lowercase(), POS.choose(rng).unwrap());
            t.frame = FRAMES.choose(rng).unwrap().to_string();
            t
        })
        .collect();
    let mut edges = Vec::new();
    for h in 1..=n {
        for d in 1..=n {
            if h != d && rng.random_bool(density) {
                edges.push(Edge::new(h, d, *LABELS.choose(rng).unwrap()));
            }
        }
    }
    let tops: Vec<usize> = (1..=n).filter(|_| rng.random_bool(0.25)).collect();
    let id = rng.random_bool(0.7).then(|| format!("2{:07}", rng.random_range(0..10_000_000)));
    SemanticGraph::new(id, tokens, edges, tops).unwrap()
}

/// Edge and label scores for `n` words plus ROOT, drawn from a coarse grid so
/// that exact zeros and tied labels occur often.
pub fn random_scores<R: Rng>(rng: &mut R, n: usize, classes: usize) -> (Tensor, Tensor) {
    let m = n + 1;
    let mut grid = |len: usize| -> Vec<f64> { (0..len).map(|_| f64::from(rng.random_range(-4i32..=4)) / 2.0).collect() };
    let edge = Tensor::new(vec![m, m], grid(m * m)).unwrap();
    let label = Tensor::new(vec![m, m, classes], grid(m * m * classes)).unwrap();
    (edge, label)
}

/// Labeled and unlabeled (gold, pred, correct) tallies by exhaustive cell scan.
#[derive(Debug, Default, PartialEq, Clone, Copy)]
pub struct Tally {
    pub gold: usize,
    pub pred: usize,
    pub correct: usize,
}

impl Tally {
    pub fn p(&self) -> f64 {
        if self.pred == 0 { 0.0 } else { self.correct as f64 / self.pred as f64 }
    }
    pub fn r(&self) -> f64 {
        if self.gold == 0 { 0.0 } else { self.correct as f64 / self.gold as f64 }
    }
    pub fn f(&self) -> f64 {
        let (p, r) = (self.p(), self.r());
        if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
    }
}

/// Label of cell (head, dependent), treating tops as ROOT cells labeled `<TOP>`.
fn cell(g: &SemanticGraph, h: usize, d: usize, tops: bool) -> Option<String> {
    if h == 0 {
        (tops && g.tops().contains(&d)).then(|| "<TOP>".to_string())
    } else {
        g.label(h, d).map(str::to_string)
    }
}

pub fn brute_score(gold: &[SemanticGraph], pred: &[SemanticGraph], tops: bool) -> (Tally, Tally, usize) {
    let (mut l, mut u, mut exact) = (Tally::default(), Tally::default(), 0);
    for (g, p) in gold.iter().zip(pred) {
        let n = g.len();
        let mut same = true;
        for h in 0..=n {
            for d in 1..=n {
                let (a, b) = (cell(g, h, d, tops), cell(p, h, d, tops));
                l.gold += usize::from(a.is_some());
                l.pred += usize::from(b.is_some());
                u.gold += usize::from(a.is_some());
                u.pred += usize::from(b.is_some());
                if a.is_some() && b.is_some() {
                    u.correct += 1;
                    l.correct += usize::from(a == b);
                }
                same &= a == b;
            }
        }
        exact += usize::from(same);
    }
    (l, u, exact)
}

/// Per-cell thresholding and argmax: `(head, dependent, label index)` in row-major order.
pub fn brute_decode(edge: &Tensor, label: &Tensor) -> Vec<(usize, usize, usize)> {
    let m = edge.shape()[0];
    let c = label.shape()[2];
    let mut out = Vec::new();
    for h in 0..m {
        for d in 1..m {
            if h == d || edge.get(&[h, d]) < 0.0 {
                continue;
            }
            if h == 0 {
                out.push((h, d, 0));
                continue;
            }
            let mut best = 1;
            for k in 2..c {
                if label.get(&[h, d, k]) > label.get(&[h, d, best]) {
                    best = k;
                }
            }
            out.push((h, d, best));
        }
    }
    out
}

/// Unfactorized: the last class means no edge; ROOT cells choose between top (0) and null.
pub fn brute_decode_unfactorized(label: &Tensor) -> Vec<(usize, usize, usize)> {
    let m = label.shape()[0];
    let classes = label.shape()[2];
    let null = classes - 1;
    let mut out = Vec::new();
    for h in 0..m {
        for d in 1..m {
            if h == d {
                continue;
            }
            let candidates: Vec<usize> = if h == 0 { vec![0, null] } else { (1..classes).collect() };
            let mut best = candidates[0];
            for &k in &candidates[1..] {
                if label.get(&[h, d, k]) > label.get(&[h, d, best]) {
                    best = k;
                }
            }
            if best != null {
                out.push((h, d, best));
            }
        }
    }
    out
}

fn ranks_of(pooled: &[f64]) -> Vec<f64> {
    pooled
        .iter()
        .map(|&x| {
            let below = pooled.iter().filter(|&&y| y < x).count() as f64;
            let equal = pooled.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided exact p-value by listing every way to assign |a| pooled positions to the first sample.
pub fn enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    if pooled.iter().all(|&x| x == pooled[0]) {
        return 1.0;
    }
    let ranks = ranks_of(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    let center = a.len() as f64 * (n as f64 + 1.0) / 2.0;
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let s: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        total += 1;
        hits += u64::from((s - center).abs() >= (w - center).abs());
    }
    hits as f64 / total as f64
}
