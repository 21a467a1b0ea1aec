//! Reading a graph off the sparse estimate, and scoring it.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::SourceGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StructureRepr", into = "StructureRepr")]
pub struct RecoveredStructure {
    pub m: usize,
    pub edges: BTreeSet<(usize, usize)>,
    pub scores: BTreeMap<(usize, usize), f64>,
    pub threshold_used: f64,
}

#[derive(Serialize, Deserialize)]
struct StructureRepr {
    m: usize,
    edges: Vec<[usize; 2]>,
    scores: BTreeMap<String, f64>,
    threshold_used: f64,
}

impl From<RecoveredStructure> for StructureRepr {
    fn from(r: RecoveredStructure) -> Self {
        StructureRepr {
            m: r.m,
            edges: r.edges.iter().map(|&(i, j)| [i, j]).collect(),
            scores: r
                .scores
                .iter()
                .map(|(&(i, j), &v)| (format!("{i},{j}"), v))
                .collect(),
            threshold_used: r.threshold_used,
        }
    }
}

impl TryFrom<StructureRepr> for RecoveredStructure {
    type Error = Error;

    fn try_from(r: StructureRepr) -> Result<Self> {
        let graph = SourceGraph::new(r.m, r.edges.iter().map(|&[i, j]| (i, j)))?;
        let mut scores = BTreeMap::new();
        for (k, v) in r.scores {
            let (a, b) = k
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad score key {k:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad score key {k:?}: {e}")))
            };
            scores.insert((parse(a)?, parse(b)?), v);
        }
        Ok(RecoveredStructure {
            m: r.m,
            edges: graph.edges().clone(),
            scores,
            threshold_used: r.threshold_used,
        })
    }
}

impl RecoveredStructure {
    pub fn to_graph(&self) -> SourceGraph {
        SourceGraph::new(self.m, self.edges.iter().copied()).expect("edges validated on construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ThresholdStrategy {
    Fixed(f64),
    LargestGap,
    ExpectedEdges(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub exact_match: bool,
}

fn check_square(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {} x {}",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(())
}

/// Edges (i, j), i < j, with |S_ij| > T. Uses the upper triangle.
pub fn threshold_edges(s_hat: &DMatrix<f64>, threshold: f64) -> Result<RecoveredStructure> {
    check_square(s_hat)?;
    if threshold < 0.0 || threshold.is_nan() {
        return Err(Error::NegativeThreshold(threshold));
    }
    let m = s_hat.nrows();
    let mut edges = BTreeSet::new();
    let mut scores = BTreeMap::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let v = s_hat[(i, j)].abs();
            if v > threshold {
                edges.insert((i, j));
                scores.insert((i, j), v);
            }
        }
    }
    Ok(RecoveredStructure {
        m,
        edges,
        scores,
        threshold_used: threshold,
    })
}

fn off_diagonal_magnitudes(s_hat: &DMatrix<f64>) -> Vec<f64> {
    let m = s_hat.nrows();
    let mut mags: Vec<f64> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .map(|(i, j)| s_hat[(i, j)].abs())
        .collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags
}

pub fn select_threshold(s_hat: &DMatrix<f64>, strategy: ThresholdStrategy) -> Result<f64> {
    check_square(s_hat)?;
    let m = s_hat.nrows();
    if m < 2 {
        return Err(Error::ShapeMismatch("threshold selection needs m >= 2".into()));
    }
    match strategy {
        ThresholdStrategy::Fixed(t) => {
            if t < 0.0 || t.is_nan() {
                return Err(Error::NegativeThreshold(t));
            }
            Ok(t)
        }
        ThresholdStrategy::LargestGap => {
            let mut distinct = off_diagonal_magnitudes(s_hat);
            distinct.dedup();
            if distinct.len() == 1 {
                // all ties: keep every pair with a nonzero magnitude
                let v = distinct[0];
                return Ok((v - f64::EPSILON * v.max(1.0)).max(0.0));
            }
            let (hi, lo) = distinct
                .windows(2)
                .map(|w| (w[0], w[1]))
                .fold((distinct[0], distinct[1]), |best, cur| {
                    if cur.0 - cur.1 > best.0 - best.1 {
                        cur
                    } else {
                        best
                    }
                });
            Ok(0.5 * (hi + lo))
        }
        ThresholdStrategy::ExpectedEdges(k) => {
            let mags = off_diagonal_magnitudes(s_hat);
            if k >= mags.len() {
                return Err(Error::InvalidEdgeCount {
                    k,
                    pairs: mags.len(),
                });
            }
            if k == 0 {
                return Ok(mags[0]);
            }
            Ok(0.5 * (mags[k - 1] + mags[k]))
        }
    }
}

pub fn compare_structures(
    truth: &SourceGraph,
    estimate: &RecoveredStructure,
) -> Result<StructureMetrics> {
    if truth.m() != estimate.m {
        return Err(Error::ShapeMismatch(format!(
            "truth has m = {}, estimate has m = {}",
            truth.m(),
            estimate.m
        )));
    }
    Ok(compare_edge_sets(truth.edges(), &estimate.edges))
}

pub fn compare_edge_sets(
    truth: &BTreeSet<(usize, usize)>,
    estimate: &BTreeSet<(usize, usize)>,
) -> StructureMetrics {
    let tp = truth.intersection(estimate).count();
    let fp = estimate.len() - tp;
    let fn_ = truth.len() - tp;
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    StructureMetrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        edge_precision: ratio(tp, tp + fp),
        edge_recall: ratio(tp, tp + fn_),
        exact_match: fp == 0 && fn_ == 0,
    }
}
