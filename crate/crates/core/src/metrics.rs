//! Position-wise and aggregate trajectory metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{FutureTarget, RankedStepList};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("user {user}: {got} prediction steps or truths for horizon {expected}")]
    HorizonMismatch {
        user: usize,
        expected: usize,
        got: usize,
    },
    #[error("{preds} predictions for {truths} users")]
    UserCountMismatch { preds: usize, truths: usize },
    #[error("step {0} outside the horizon")]
    BadStep(usize),
}

/// "1st", "2nd", "3rd", "4th", ..., "11th", "21st".
pub fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

fn check(
    preds: &[Vec<RankedStepList>],
    truths: &[FutureTarget],
    j: usize,
) -> Result<usize, MetricError> {
    if preds.len() != truths.len() {
        return Err(MetricError::UserCountMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    let k = truths.first().map_or(0, FutureTarget::horizon);
    for (u, (p, t)) in preds.iter().zip(truths).enumerate() {
        if t.horizon() != k || p.len() != k {
            return Err(MetricError::HorizonMismatch {
                user: u,
                expected: k,
                got: if t.horizon() != k {
                    t.horizon()
                } else {
                    p.len()
                },
            });
        }
    }
    if j == 0 || (j > k && !truths.is_empty()) {
        return Err(MetricError::BadStep(j));
    }
    Ok(k)
}

fn step_mean(
    preds: &[Vec<RankedStepList>],
    truths: &[FutureTarget],
    j: usize,
    cutoff: usize,
    gain: impl Fn(usize) -> f64,
) -> Result<f64, MetricError> {
    check(preds, truths, j)?;
    if truths.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| match p[j - 1].rank_of(t.items[j - 1]) {
            Some(r) if r <= cutoff => gain(r),
            _ => 0.0,
        })
        .sum();
    Ok(total / truths.len() as f64)
}

/// Fraction of users whose step-`j` truth (1-based) is within the top `cutoff` of their
/// step-`j` list.
pub fn step_hr(
    preds: &[Vec<RankedStepList>],
    truths: &[FutureTarget],
    j: usize,
    cutoff: usize,
) -> Result<f64, MetricError> {
    step_mean(preds, truths, j, cutoff, |_| 1.0)
}

/// Mean of `1 / log2(rank + 1)` for hits within `cutoff`, 0 for misses.
pub fn step_ndcg(
    preds: &[Vec<RankedStepList>],
    truths: &[FutureTarget],
    j: usize,
    cutoff: usize,
) -> Result<f64, MetricError> {
    step_mean(preds, truths, j, cutoff, |r| 1.0 / ((r + 1) as f64).log2())
}

pub fn arithmetic_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `(prod xs)^(1/n)`, exactly 0 if any factor is 0. Never above the arithmetic mean.
pub fn geometric_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() || xs.contains(&0.0) {
        return 0.0;
    }
    let g = if xs.len() == 1 {
        xs[0]
    } else {
        (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
    };
    g.min(arithmetic_mean(xs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffReport {
    pub cutoff: usize,
    /// Index `j - 1` holds step `j`.
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub mhr: f64,
    pub mndcg: f64,
    pub shr: f64,
    pub sndcg: f64,
}

impl CutoffReport {
    /// Aggregates per-step values into the arithmetic and geometric means.
    pub fn aggregate(cutoff: usize, hr: Vec<f64>, ndcg: Vec<f64>) -> Self {
        Self {
            cutoff,
            mhr: arithmetic_mean(&hr),
            shr: geometric_mean(&hr),
            mndcg: arithmetic_mean(&ndcg),
            sndcg: geometric_mean(&ndcg),
            hr,
            ndcg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub users: usize,
    pub horizon: usize,
    pub cutoffs: Vec<CutoffReport>,
}

/// One reported number.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub cutoff: usize,
    pub position: Option<usize>,
    pub value: f64,
}

pub fn evaluate(
    preds: &[Vec<RankedStepList>],
    truths: &[FutureTarget],
    cutoffs: &[usize],
) -> Result<EvalReport, MetricError> {
    let k = check(preds, truths, 1).or_else(|e| match e {
        MetricError::BadStep(_) => Ok(0),
        e => Err(e),
    })?;
    let mut reports = Vec::with_capacity(cutoffs.len());
    for &c in cutoffs {
        let mut hr = Vec::with_capacity(k);
        let mut ndcg = Vec::with_capacity(k);
        for j in 1..=k {
            hr.push(step_hr(preds, truths, j, c)?);
            ndcg.push(step_ndcg(preds, truths, j, c)?);
        }
        reports.push(CutoffReport::aggregate(c, hr, ndcg));
    }
    Ok(EvalReport {
        users: truths.len(),
        horizon: k,
        cutoffs: reports,
    })
}

impl EvalReport {
    /// Aggregates first, then positions in step order, for each cutoff.
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for c in &self.cutoffs {
            let k = c.cutoff;
            for (name, value) in [
                ("MHR", c.mhr),
                ("MNDCG", c.mndcg),
                ("SHR", c.shr),
                ("SNDCG", c.sndcg),
            ] {
                rows.push(MetricRow {
                    name: format!("{name}@{k}"),
                    cutoff: k,
                    position: None,
                    value,
                });
            }
            for j in 0..c.hr.len() {
                for (name, value) in [("HR", c.hr[j]), ("NDCG", c.ndcg[j])] {
                    rows.push(MetricRow {
                        name: format!("{}_{name}@{k}", ordinal(j + 1)),
                        cutoff: k,
                        position: Some(j + 1),
                        value,
                    });
                }
            }
        }
        rows
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows()
            .into_iter()
            .find(|r| r.name == name)
            .map(|r| r.value)
    }

    /// `metric,K,position,value`; position is empty for aggregates.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "K", "position", "value"])?;
        for r in self.rows() {
            out.write_record([
                r.name,
                r.cutoff.to_string(),
                r.position.map(|p| p.to_string()).unwrap_or_default(),
                r.value.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Flat name-to-value object plus user count and horizon.
    pub fn to_json(&self) -> serde_json::Value {
        let metrics: serde_json::Map<String, serde_json::Value> = self
            .rows()
            .into_iter()
            .map(|r| (r.name, r.value.into()))
            .collect();
        serde_json::json!({
            "users": self.users,
            "horizon": self.horizon,
            "metrics": metrics,
        })
    }
}
