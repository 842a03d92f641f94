//! Operating curves and the detection equal error rate.
//!
//! Scores follow one polarity: higher means more attack-like, and a sample is
//! classified as an attack iff its score is at or above the threshold. At a
//! threshold `t`:
//!
//! * APCER(t) = share of attacks scored below `t`;
//! * BPCER(t) = share of bonafide samples scored at or above `t`.
//!
//! The D-EER is the rate where both coincide. When the two step curves cross
//! between adjacent operating points, the crossing is interpolated linearly
//! along the segment joining them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub bonafide: Vec<f64>,
    pub attack: Vec<f64>,
}

impl ScoreSet {
    pub fn new(bonafide: Vec<f64>, attack: Vec<f64>) -> Self {
        ScoreSet { bonafide, attack }
    }

    fn check(&self) -> Result<()> {
        if self.bonafide.is_empty() {
            return Err(Error::EmptyScores("bonafide"));
        }
        if self.attack.is_empty() {
            return Err(Error::EmptyScores("attack"));
        }
        if let Some(v) = self.bonafide.iter().chain(&self.attack).find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite score {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `−∞`, every distinct score in ascending order, `+∞`.
    pub thresholds: Vec<f64>,
    pub apcer: Vec<f64>,
    pub bpcer: Vec<f64>,
    // Exact counts behind the rates.
    attacks_below: Vec<usize>,
    bonafide_at_or_above: Vec<usize>,
    n_attack: usize,
    n_bonafide: usize,
}

pub fn roc(scores: &ScoreSet) -> Result<RocCurve> {
    scores.check()?;
    let mut all: Vec<(f64, bool)> = scores
        .bonafide
        .iter()
        .map(|&s| (s, false))
        .chain(scores.attack.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (na, nb) = (scores.attack.len(), scores.bonafide.len());
    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut attacks_below = vec![0];
    let mut bonafide_at_or_above = vec![nb];
    let (mut a_seen, mut b_seen) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        // Threshold v: everything strictly below v has been consumed.
        thresholds.push(v);
        attacks_below.push(a_seen);
        bonafide_at_or_above.push(nb - b_seen);
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                a_seen += 1;
            } else {
                b_seen += 1;
            }
            i += 1;
        }
    }
    thresholds.push(f64::INFINITY);
    attacks_below.push(na);
    bonafide_at_or_above.push(0);

    Ok(RocCurve {
        apcer: attacks_below.iter().map(|&a| a as f64 / na as f64).collect(),
        bpcer: bonafide_at_or_above.iter().map(|&b| b as f64 / nb as f64).collect(),
        thresholds,
        attacks_below,
        bonafide_at_or_above,
        n_attack: na,
        n_bonafide: nb,
    })
}

impl RocCurve {
    /// Error rates at an arbitrary threshold.
    pub fn rates_at(&self, threshold: f64) -> (f64, f64) {
        // The first listed threshold at or above `threshold` gives the same partition.
        let idx = self.thresholds.partition_point(|&t| t < threshold);
        (self.apcer[idx], self.bpcer[idx])
    }

    pub fn deer(&self) -> f64 {
        // Exact sign of APCER − BPCER via cross-multiplied counts.
        let sign = |i: usize| {
            let lhs = self.attacks_below[i] as u128 * self.n_bonafide as u128;
            let rhs = self.bonafide_at_or_above[i] as u128 * self.n_attack as u128;
            lhs.cmp(&rhs)
        };
        use std::cmp::Ordering::*;
        let first = (0..self.thresholds.len())
            .find(|&i| sign(i) != Less)
            .expect("the +inf sentinel has APCER 1 and BPCER 0");
        if sign(first) == Equal {
            return self.apcer[first];
        }
        let p = first - 1;
        let d0 = self.apcer[p] - self.bpcer[p];
        let d1 = self.apcer[first] - self.bpcer[first];
        let lambda = -d0 / (d1 - d0);
        self.apcer[p] + lambda * (self.apcer[first] - self.apcer[p])
    }
}

/// Detection equal error rate in `[0, 1]`.
pub fn deer(scores: &ScoreSet) -> Result<f64> {
    Ok(roc(scores)?.deer())
}

pub fn deer_of(bonafide: &[f64], attack: &[f64]) -> Result<f64> {
    deer(&ScoreSet::new(bonafide.to_vec(), attack.to_vec()))
}

/// Percent with two decimals, e.g. `0.067 → "6.70"`.
pub fn format_percent(rate: f64) -> String {
    format!("{:.2}", rate * 100.0)
}
