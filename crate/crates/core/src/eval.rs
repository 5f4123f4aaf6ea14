//! Labeled and unlabeled edge precision, recall, and F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{SemanticGraph, TOP_LABEL};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{gold} gold sentences but {pred} predicted")]
    Length { gold: usize, pred: usize },
    #[error("sentence {sentence}: {gold} gold tokens but {pred} predicted")]
    Misaligned {
        sentence: usize,
        gold: usize,
        pred: usize,
    },
}

/// Edge tallies; ratios with an empty denominator are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub gold: usize,
    pub pred: usize,
    pub correct: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.pred)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.pred += other.pred;
        self.correct += other.correct;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub sentences: usize,
    pub labeled: Counts,
    pub unlabeled: Counts,
    /// Sentences whose labeled edge sets match exactly.
    pub exact: usize,
    pub per_label: BTreeMap<String, Counts>,
    pub tops: Counts,
    /// Mean of per-sentence labeled F1.
    pub macro_lf1: f64,
}

impl EvalReport {
    pub fn lp(&self) -> f64 {
        self.labeled.precision()
    }
    pub fn lr(&self) -> f64 {
        self.labeled.recall()
    }
    pub fn lf(&self) -> f64 {
        self.labeled.f1()
    }
    pub fn up(&self) -> f64 {
        self.unlabeled.precision()
    }
    pub fn ur(&self) -> f64 {
        self.unlabeled.recall()
    }
    pub fn uf(&self) -> f64 {
        self.unlabeled.f1()
    }
    pub fn exact_match(&self) -> f64 {
        ratio(self.exact, self.sentences)
    }

    /// `KEY=value` lines: LP, LR, LF, UP, UR, UF, EM.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("LP", self.lp()),
            ("LR", self.lr()),
            ("LF", self.lf()),
            ("UP", self.up()),
            ("UR", self.ur()),
            ("UF", self.uf()),
            ("EM", self.exact_match()),
        ] {
            writeln!(out, "{k}={v:.6}").unwrap();
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<12} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}", "", "P", "R", "F1", "gold", "pred", "correct").unwrap();
        let mut row = |name: &str, c: &Counts| {
            writeln!(
                out,
                "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7} {:>7}",
                name,
                c.precision(),
                c.recall(),
                c.f1(),
                c.gold,
                c.pred,
                c.correct
            )
            .unwrap();
        };
        row("labeled", &self.labeled);
        row("unlabeled", &self.unlabeled);
        row("tops", &self.tops);
        for (label, c) in &self.per_label {
            row(label, c);
        }
        writeln!(out, "exact match  {:.4} ({} of {})", self.exact_match(), self.exact, self.sentences).unwrap();
        out
    }
}

type Labeled = BTreeSet<(usize, usize, String)>;

fn labeled_edges(g: &SemanticGraph, include_tops: bool) -> Labeled {
    let mut set: Labeled = g.edges().map(|e| (e.head, e.dependent, e.label)).collect();
    if include_tops {
        set.extend(g.tops().iter().map(|&t| (0, t, TOP_LABEL.to_string())));
    }
    set
}

fn counts<T: Ord>(gold: &BTreeSet<T>, pred: &BTreeSet<T>) -> Counts {
    Counts {
        gold: gold.len(),
        pred: pred.len(),
        correct: gold.intersection(pred).count(),
    }
}

/// Micro-averaged scores of `pred` against `gold`, sentence by sentence.
/// With `include_tops`, each top node counts as a ROOT edge with the top label.
pub fn evaluate(gold: &[SemanticGraph], pred: &[SemanticGraph], include_tops: bool) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Length {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut report = EvalReport {
        sentences: gold.len(),
        ..EvalReport::default()
    };
    let mut macro_sum = 0.0;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::Misaligned {
                sentence: i,
                gold: g.len(),
                pred: p.len(),
            });
        }
        let gl = labeled_edges(g, include_tops);
        let pl = labeled_edges(p, include_tops);
        let gu: BTreeSet<(usize, usize)> = gl.iter().map(|(h, d, _)| (*h, *d)).collect();
        let pu: BTreeSet<(usize, usize)> = pl.iter().map(|(h, d, _)| (*h, *d)).collect();
        let lc = counts(&gl, &pl);
        report.labeled.add(lc);
        report.unlabeled.add(counts(&gu, &pu));
        report.tops.add(counts(g.tops(), p.tops()));
        if gl == pl {
            report.exact += 1;
        }
        macro_sum += lc.f1();
        for (_, _, l) in &gl {
            report.per_label.entry(l.clone()).or_default().gold += 1;
        }
        for e @ (_, _, l) in &pl {
            let c = report.per_label.entry(l.clone()).or_default();
            c.pred += 1;
            if gl.contains(e) {
                c.correct += 1;
            }
        }
    }
    report.macro_lf1 = if gold.is_empty() { 0.0 } else { macro_sum / gold.len() as f64 };
    Ok(report)
}
