//! Server-side aggregation rules.
//!
//! [`tnbs`] is two-sided norm-based screening: sort messages by l2 norm,
//! drop `floor((1 - p) / 2 * M)` from each end and average the middle. The
//! benchmarks are one-sided screening ([`nbs`]), [`krum`], [`multi_krum`],
//! coordinate-wise trimmed mean ([`coordinate_trimmed_mean`]), coordinate-wise
//! median ([`coordinate_median`]) and the plain [`mean`].
//!
//! Ties in norm or score are broken by ascending client id, and every
//! average is accumulated in ascending client-id order, so outcomes do not
//! depend on the order messages arrive in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::parallel::Execution;

/// Slack for floor/ceil of `fraction * count` products such as `0.2 * 20`.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no gradients to aggregate")]
    Empty,
    #[error("gradient of client {client_id} has dimension {found}, expected {expected}")]
    Dimension {
        client_id: usize,
        expected: usize,
        found: usize,
    },
    #[error("client id {0} appears more than once")]
    DuplicateId(usize),
    #[error("invalid rule parameter: {0}")]
    Parameter(String),
    #[error("krum needs n >= f + 3, got n = {n}, f = {f}")]
    TooFewForKrum { n: usize, f: usize },
    #[error("multi-krum needs 1 <= m <= n - f, got m = {m}, n = {n}, f = {f}")]
    MultiKrumM { m: usize, n: usize, f: usize },
    #[error("trimming {trim} per side leaves nothing of {n} values")]
    OverTrim { trim: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, AggregateError>;

/// One client's transmitted vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub client_id: usize,
    pub gradient: Vec<f64>,
}

impl ClientMessage {
    pub fn new(client_id: usize, gradient: Vec<f64>) -> Self {
        Self { client_id, gradient }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationOutcome {
    pub aggregate: Vec<f64>,
    /// Sorted ascending.
    pub kept: Vec<usize>,
    /// Sorted ascending.
    pub discarded: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AggregationRule {
    Mean,
    /// Keep the middle `keep` fraction by norm.
    Tnbs { keep: f64 },
    /// Drop the largest `1 - keep` fraction by norm.
    Nbs { keep: f64 },
    Krum { f: usize },
    MultiKrum { f: usize, m: usize },
    /// Trim `floor(beta * M)` values per side in every coordinate.
    Cwtm { beta: f64 },
    CwMedian,
}

impl AggregationRule {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationRule::Mean => "mean",
            AggregationRule::Tnbs { .. } => "tnbs",
            AggregationRule::Nbs { .. } => "nbs",
            AggregationRule::Krum { .. } => "krum",
            AggregationRule::MultiKrum { .. } => "multi_krum",
            AggregationRule::Cwtm { .. } => "cwtm",
            AggregationRule::CwMedian => "cw_median",
        }
    }

    /// Fraction of messages a norm screen keeps; 1 for rules without one.
    pub fn keep_fraction(&self) -> f64 {
        match *self {
            AggregationRule::Tnbs { keep } | AggregationRule::Nbs { keep } => keep,
            _ => 1.0,
        }
    }

    pub fn apply(&self, messages: &[ClientMessage]) -> Result<AggregationOutcome> {
        self.apply_with(messages, Execution::Sequential)
    }

    pub fn apply_with(&self, messages: &[ClientMessage], exec: Execution) -> Result<AggregationOutcome> {
        match *self {
            AggregationRule::Mean => mean(messages),
            AggregationRule::Tnbs { keep } => tnbs(messages, keep),
            AggregationRule::Nbs { keep } => nbs(messages, keep),
            AggregationRule::Krum { f } => krum_with(messages, f, exec),
            AggregationRule::MultiKrum { f, m } => multi_krum_with(messages, f, m, exec),
            AggregationRule::Cwtm { beta } => coordinate_trimmed_mean_with(messages, beta, exec),
            AggregationRule::CwMedian => coordinate_median_with(messages, exec),
        }
    }
}

/// Checks shape and id uniqueness; returns the dimension.
fn validate(messages: &[ClientMessage]) -> Result<usize> {
    let first = messages.first().ok_or(AggregateError::Empty)?;
    let d = first.gradient.len();
    let mut ids: Vec<usize> = Vec::with_capacity(messages.len());
    for m in messages {
        if m.gradient.len() != d {
            return Err(AggregateError::Dimension {
                client_id: m.client_id,
                expected: d,
                found: m.gradient.len(),
            });
        }
        ids.push(m.client_id);
    }
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(AggregateError::DuplicateId(w[0]));
    }
    Ok(d)
}

fn check_keep(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(AggregateError::Parameter(format!("keep fraction must lie in (0, 1], got {p}")))
    }
}

/// Mean of the messages at `positions`, summed in ascending client-id order,
/// plus the kept/discarded id lists.
fn outcome_from_positions(messages: &[ClientMessage], mut positions: Vec<usize>) -> AggregationOutcome {
    positions.sort_by_key(|&i| messages[i].client_id);
    let aggregate = linalg::mean(positions.iter().map(|&i| messages[i].gradient.as_slice()));
    let kept: Vec<usize> = positions.iter().map(|&i| messages[i].client_id).collect();
    let mut discarded: Vec<usize> = messages
        .iter()
        .map(|m| m.client_id)
        .filter(|id| kept.binary_search(id).is_err())
        .collect();
    discarded.sort_unstable();
    AggregationOutcome {
        aggregate,
        kept,
        discarded,
    }
}

/// Positions sorted by `(norm, client_id)` ascending.
fn norm_order(messages: &[ClientMessage]) -> Vec<usize> {
    let norms: Vec<f64> = messages.iter().map(|m| linalg::norm(&m.gradient)).collect();
    let mut order: Vec<usize> = (0..messages.len()).collect();
    order.sort_by(|&a, &b| {
        norms[a]
            .total_cmp(&norms[b])
            .then(messages[a].client_id.cmp(&messages[b].client_id))
    });
    order
}

/// Per-side trim count for a two-sided screen keeping fraction `p` of `n`.
pub fn tnbs_trim_count(n: usize, p: f64) -> usize {
    let k = (((1.0 - p) / 2.0) * n as f64 + COUNT_EPS).floor() as usize;
    if 2 * k >= n {
        (n - 1) / 2
    } else {
        k
    }
}

/// Number of largest-norm messages a one-sided screen drops.
pub fn nbs_drop_count(n: usize, p: f64) -> usize {
    let drop = ((1.0 - p) * n as f64 - COUNT_EPS).ceil().max(0.0) as usize;
    drop.min(n - 1)
}

pub fn tnbs(messages: &[ClientMessage], p: f64) -> Result<AggregationOutcome> {
    validate(messages)?;
    check_keep(p)?;
    let n = messages.len();
    let k = tnbs_trim_count(n, p);
    let order = norm_order(messages);
    Ok(outcome_from_positions(messages, order[k..n - k].to_vec()))
}

pub fn nbs(messages: &[ClientMessage], p: f64) -> Result<AggregationOutcome> {
    validate(messages)?;
    check_keep(p)?;
    let n = messages.len();
    let drop = nbs_drop_count(n, p);
    let order = norm_order(messages);
    Ok(outcome_from_positions(messages, order[..n - drop].to_vec()))
}

pub fn mean(messages: &[ClientMessage]) -> Result<AggregationOutcome> {
    validate(messages)?;
    Ok(outcome_from_positions(messages, (0..messages.len()).collect()))
}

/// Krum score of every message: sum of squared distances to its
/// `n - f - 2` nearest others.
pub fn krum_scores(messages: &[ClientMessage], f: usize, exec: Execution) -> Result<Vec<f64>> {
    validate(messages)?;
    let n = messages.len();
    if n < f + 3 {
        return Err(AggregateError::TooFewForKrum { n, f });
    }
    let neighbours = n - f - 2;
    Ok(exec.map_range(n, |i| {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| linalg::dist_sq(&messages[i].gradient, &messages[j].gradient))
            .collect();
        d.sort_by(f64::total_cmp);
        d[..neighbours].iter().sum()
    }))
}

fn score_order(messages: &[ClientMessage], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..messages.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(messages[a].client_id.cmp(&messages[b].client_id))
    });
    order
}

pub fn krum(messages: &[ClientMessage], f: usize) -> Result<AggregationOutcome> {
    krum_with(messages, f, Execution::Sequential)
}

pub fn krum_with(messages: &[ClientMessage], f: usize, exec: Execution) -> Result<AggregationOutcome> {
    multi_krum_with(messages, f, 1, exec)
}

pub fn multi_krum(messages: &[ClientMessage], f: usize, m: usize) -> Result<AggregationOutcome> {
    multi_krum_with(messages, f, m, Execution::Sequential)
}

pub fn multi_krum_with(
    messages: &[ClientMessage],
    f: usize,
    m: usize,
    exec: Execution,
) -> Result<AggregationOutcome> {
    let scores = krum_scores(messages, f, exec)?;
    let n = messages.len();
    if m == 0 || m > n - f {
        return Err(AggregateError::MultiKrumM { m, n, f });
    }
    let order = score_order(messages, &scores);
    Ok(outcome_from_positions(messages, order[..m].to_vec()))
}

/// Coordinate `j` of every message, ordered by client id.
fn column(messages: &[ClientMessage], by_id: &[usize], j: usize) -> Vec<f64> {
    by_id.iter().map(|&i| messages[i].gradient[j]).collect()
}

fn positions_by_id(messages: &[ClientMessage]) -> Vec<usize> {
    let mut by_id: Vec<usize> = (0..messages.len()).collect();
    by_id.sort_by_key(|&i| messages[i].client_id);
    by_id
}

fn all_kept(messages: &[ClientMessage], aggregate: Vec<f64>) -> AggregationOutcome {
    let mut kept: Vec<usize> = messages.iter().map(|m| m.client_id).collect();
    kept.sort_unstable();
    AggregationOutcome {
        aggregate,
        kept,
        discarded: Vec::new(),
    }
}

pub fn coordinate_trimmed_mean(messages: &[ClientMessage], beta: f64) -> Result<AggregationOutcome> {
    coordinate_trimmed_mean_with(messages, beta, Execution::Sequential)
}

pub fn coordinate_trimmed_mean_with(
    messages: &[ClientMessage],
    beta: f64,
    exec: Execution,
) -> Result<AggregationOutcome> {
    let d = validate(messages)?;
    if !(0.0..0.5).contains(&beta) {
        return Err(AggregateError::Parameter(format!("trim beta must lie in [0, 0.5), got {beta}")));
    }
    let n = messages.len();
    let trim = (beta * n as f64 + COUNT_EPS).floor() as usize;
    if 2 * trim >= n {
        return Err(AggregateError::OverTrim { trim, n });
    }
    let by_id = positions_by_id(messages);
    let aggregate = exec.map_range(d, |j| {
        let mut col = column(messages, &by_id, j);
        col.sort_by(f64::total_cmp);
        let kept = &col[trim..n - trim];
        kept.iter().sum::<f64>() / kept.len() as f64
    });
    Ok(all_kept(messages, aggregate))
}

pub fn coordinate_median(messages: &[ClientMessage]) -> Result<AggregationOutcome> {
    coordinate_median_with(messages, Execution::Sequential)
}

pub fn coordinate_median_with(messages: &[ClientMessage], exec: Execution) -> Result<AggregationOutcome> {
    let d = validate(messages)?;
    let n = messages.len();
    let by_id = positions_by_id(messages);
    let aggregate = exec.map_range(d, |j| {
        let mut col = column(messages, &by_id, j);
        col.sort_by(f64::total_cmp);
        if n % 2 == 1 {
            col[n / 2]
        } else {
            (col[n / 2 - 1] + col[n / 2]) / 2.0
        }
    });
    Ok(all_kept(messages, aggregate))
}
