//! Wilcoxon rank-sum test with midranks for ties.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Pooled sample sizes up to this use the exact null distribution.
pub const EXACT_LIMIT: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum RankSumError {
    #[error("each sample needs at least 2 values (got {a} and {b})")]
    TooFew { a: usize, b: usize },
    #[error("non-finite score {0}")]
    NonFinite(f64),
}

/// Alternative hypothesis about the first sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Tail {
    #[default]
    TwoSided,
    /// The first sample tends to be smaller.
    Less,
    /// The first sample tends to be larger.
    Greater,
}

impl FromStr for Tail {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "two-sided" => Ok(Tail::TwoSided),
            "less" => Ok(Tail::Less),
            "greater" => Ok(Tail::Greater),
            _ => Err(format!("unknown tail `{s}` (two-sided, less, greater)")),
        }
    }
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tail::TwoSided => "two-sided",
            Tail::Less => "less",
            Tail::Greater => "greater",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankSum {
    /// Sum of the first sample's ranks in the pooled ordering.
    pub w: f64,
    pub p: f64,
    pub method: Method,
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn rank_sum(a: &[f64], b: &[f64]) -> Result<RankSum, RankSumError> {
    rank_sum_with(a, b, Tail::TwoSided)
}

pub fn rank_sum_with(a: &[f64], b: &[f64], tail: Tail) -> Result<RankSum, RankSumError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(RankSumError::TooFew { a: a.len(), b: b.len() });
    }
    if let Some(&x) = a.iter().chain(b).find(|x| !x.is_finite()) {
        return Err(RankSumError::NonFinite(x));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    if pooled.iter().all(|&x| x == pooled[0]) {
        let method = if pooled.len() <= EXACT_LIMIT { Method::Exact } else { Method::Normal };
        return Ok(RankSum { w, p: 1.0, method });
    }
    if pooled.len() <= EXACT_LIMIT {
        Ok(RankSum {
            w,
            p: exact_p(&ranks, a.len(), tail),
            method: Method::Exact,
        })
    } else {
        Ok(RankSum {
            w,
            p: normal_p(&ranks, a.len(), w, tail),
            method: Method::Normal,
        })
    }
}

/// Null distribution of the doubled rank sum over every size-`na` subset,
/// by dynamic programming over (subset size, sum).
fn exact_p(ranks: &[f64], na: usize, tail: Tail) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r) as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![vec![0u64; max_sum + 1]; na + 1];
    counts[0][0] = 1;
    for &r in &doubled {
        for k in (1..=na).rev() {
            for s in (r..=max_sum).rev() {
                counts[k][s] += counts[k - 1][s - r];
            }
        }
    }
    let observed: usize = doubled[..na].iter().sum();
    let n = ranks.len();
    let center = (na * (n + 1)) as i64;
    let distance = (observed as i64 - center).abs();
    let dist = &counts[na];
    let total: u64 = dist.iter().sum();
    let hits: u64 = dist
        .iter()
        .enumerate()
        .filter(|&(s, _)| match tail {
            Tail::TwoSided => (s as i64 - center).abs() >= distance,
            Tail::Less => s <= observed,
            Tail::Greater => s >= observed,
        })
        .map(|(_, &c)| c)
        .sum();
    hits as f64 / total as f64
}

fn normal_p(ranks: &[f64], na: usize, w: f64, tail: Tail) -> f64 {
    let n = ranks.len() as f64;
    let (na, nb) = (na as f64, n - na as f64);
    let mean = na * (n + 1.0) / 2.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let sd = var.sqrt();
    let z = Normal::standard();
    let p = match tail {
        Tail::TwoSided => 2.0 * z.sf(((w - mean).abs() - 0.5).max(0.0) / sd),
        Tail::Less => z.cdf((w - mean + 0.5) / sd),
        Tail::Greater => z.sf((w - mean - 0.5) / sd),
    };
    p.min(1.0)
}

/// `p<.001`, otherwise three decimals without the leading zero.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "p<.001".to_string()
    } else {
        let s = format!("{p:.3}");
        format!("p={}", s.strip_prefix('0').unwrap_or(&s))
    }
}
