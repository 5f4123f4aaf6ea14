use crate::data::{SemanticGraph, SymbolTable, TOP_LABEL_INDEX};

/// Per-cell gold values and masks over the `m × m` head/dependent grid
/// (`m = n + 1`, row-major, rows are heads).
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub size: usize,
    pub edge_gold: Vec<f64>,
    pub edge_mask: Vec<bool>,
    pub label_gold: Vec<usize>,
    pub label_mask: Vec<bool>,
}

impl Targets {
    pub fn edge_cells(&self) -> usize {
        self.edge_mask.iter().filter(|&&m| m).count()
    }

    pub fn label_cells(&self) -> usize {
        self.label_mask.iter().filter(|&&m| m).count()
    }
}

/// Targets for the factorized parser: every cell whose dependent is a real
/// token is an edge example; label examples are the gold edges (top
/// designations included as ROOT edges). Edges whose label the vocabulary
/// lacks still count as edges but teach the labeler nothing.
pub fn factorized_targets(gold: &SemanticGraph, labels: &SymbolTable) -> Targets {
    let m = gold.len() + 1;
    let mut t = Targets {
        size: m,
        edge_gold: vec![0.0; m * m],
        edge_mask: (0..m * m).map(|cell| cell % m != 0).collect(),
        label_gold: vec![0; m * m],
        label_mask: vec![false; m * m],
    };
    for &d in gold.tops() {
        t.edge_gold[d] = 1.0;
        t.label_gold[d] = TOP_LABEL_INDEX;
        t.label_mask[d] = true;
    }
    for e in gold.edges() {
        let cell = e.head * m + e.dependent;
        t.edge_gold[cell] = 1.0;
        if let Some(l) = labels.get(&e.label) {
            t.label_gold[cell] = l;
            t.label_mask[cell] = true;
        }
    }
    t
}

/// Targets for the single labeler: class `labels.len()` means no edge.
/// Cells holding a label the vocabulary lacks are left out.
pub fn unfactorized_targets(gold: &SemanticGraph, labels: &SymbolTable) -> Targets {
    let m = gold.len() + 1;
    let null = labels.len();
    let mut t = Targets {
        size: m,
        edge_gold: Vec::new(),
        edge_mask: Vec::new(),
        label_gold: vec![null; m * m],
        label_mask: (0..m * m).map(|cell| cell % m != 0).collect(),
    };
    for &d in gold.tops() {
        t.label_gold[d] = TOP_LABEL_INDEX;
    }
    for e in gold.edges() {
        let cell = e.head * m + e.dependent;
        match labels.get(&e.label) {
            Some(l) => t.label_gold[cell] = l,
            None => t.label_mask[cell] = false,
        }
    }
    t
}
