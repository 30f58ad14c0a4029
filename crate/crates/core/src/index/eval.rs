//! Recall@K and median rank.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 5] = [1, 2, 3, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    T2M,
    M2T,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::T2M => "T2M",
            Direction::M2T => "M2T",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T2M" => Ok(Direction::T2M),
            "M2T" => Ok(Direction::M2T),
            _ => Err(Error::InvalidConfig(format!("unknown direction `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub direction: Direction,
    /// `(K, percent of queries with a relevant item in the top K)`.
    pub recall: Vec<(usize, f64)>,
    pub median_rank: f64,
    pub queries: usize,
    /// 1-based rank of the first relevant item per query.
    pub ranks: Vec<usize>,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|&(_, r)| r)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["direction".to_string()];
        cols.extend(self.recall.iter().map(|(k, _)| format!("R@{k}")));
        cols.push("MedR".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.direction.to_string()];
        cols.extend(self.recall.iter().map(|(_, r)| format!("{r:.2}")));
        cols.push(format!("{}", self.median_rank));
        cols.join(",")
    }
}

/// Reports as CSV with one header.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        out.push_str(&first.csv_header());
        out.push('\n');
    }
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Median of the values, averaging the middle pair for even counts.
pub fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Scores ranked lists of ids against per-query relevant sets. A relevant
/// item missing from a ranking counts as ranked just past its end.
pub fn evaluate(
    rankings: &[Vec<String>],
    relevant: &[HashSet<String>],
    ks: &[usize],
    direction: Direction,
) -> Result<EvalReport> {
    if rankings.len() != relevant.len() {
        return Err(Error::DimensionMismatch {
            expected: rankings.len(),
            actual: relevant.len(),
            context: "relevance sets per query",
        });
    }
    if rankings.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("recall cutoffs must be positive".into()));
    }
    let mut ranks = Vec::with_capacity(rankings.len());
    for (q, (ranking, rel)) in rankings.iter().zip(relevant).enumerate() {
        if rel.is_empty() {
            return Err(Error::NoRelevantItem(format!("#{q}")));
        }
        let rank = ranking
            .iter()
            .position(|id| rel.contains(id))
            .map_or(ranking.len() + 1, |p| p + 1);
        ranks.push(rank);
    }
    let mut sorted_ks = ks.to_vec();
    sorted_ks.sort_unstable();
    sorted_ks.dedup();
    let n = ranks.len() as f64;
    let recall = sorted_ks
        .iter()
        .map(|&k| (k, 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    Ok(EvalReport {
        direction,
        recall,
        median_rank: median(&ranks),
        queries: ranks.len(),
        ranks,
    })
}
