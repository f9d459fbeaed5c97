//! Temperature-scaled softmax and the two sharpness statistics used for
//! alignment: the maximum probability and the entropy (in nats).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where a logit row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic,
    Encoder {
        layer: usize,
        head: usize,
        row: usize,
    },
}

/// One pre-softmax logit row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
    provenance: Provenance,
}

impl LogitVector {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("logits must be finite".into()));
        }
        Ok(Self { values, provenance })
    }

    pub fn synthetic(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Provenance::Synthetic)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
    temperature: f64,
}

impl Distribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Maximum probability and entropy of one softmax row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub p_max: f64,
    pub entropy: f64,
    pub length: usize,
}

pub(crate) fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

/// `softmax(l / tau)` with the row maximum subtracted before exponentiation.
pub fn softmax_tau(logits: &LogitVector, tau: f64) -> Result<Distribution> {
    let probs = softmax_slice(logits.values(), tau)?;
    Ok(Distribution {
        probs,
        temperature: tau,
    })
}

pub fn softmax_slice(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    if logits.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs, tau);
    Ok(probs)
}

/// In-place variant for hot loops. `row` must be non-empty and `tau > 0`.
pub fn softmax_in_place(row: &mut [f64], tau: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inv_tau = tau.recip();
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) * inv_tau).exp();
        sum += *v;
    }
    let inv_sum = sum.recip();
    row.iter_mut().for_each(|v| *v *= inv_sum);
}

pub fn stats(dist: &Distribution) -> AttentionStats {
    let probs = dist.probs();
    let p_max = probs.iter().copied().fold(0.0, f64::max);
    let entropy = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    AttentionStats {
        p_max,
        entropy: entropy.max(0.0),
        length: probs.len(),
    }
}

/// Statistics of `softmax(logits / tau)` without materializing the
/// distribution.
///
/// With `z_i = (l_i - max) / tau` and `S = sum exp(z_i)`, the maximum
/// probability is `1 / S` and the entropy is `ln S - sum exp(z_i) z_i / S`.
pub fn row_stats(logits: &[f64], tau: f64) -> AttentionStats {
    debug_assert!(!logits.is_empty() && tau > 0.0);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inv_tau = tau.recip();
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for &l in logits {
        let z = (l - max) * inv_tau;
        let e = z.exp();
        sum += e;
        weighted += e * z;
    }
    AttentionStats {
        p_max: sum.recip(),
        entropy: (sum.ln() - weighted / sum).max(0.0),
        length: logits.len(),
    }
}

/// Statistics of a row that has already been normalized.
pub fn prob_row_stats(probs: &[f64]) -> AttentionStats {
    let mut p_max = 0.0f64;
    let mut entropy = 0.0;
    for &p in probs {
        p_max = p_max.max(p);
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    AttentionStats {
        p_max,
        entropy: entropy.max(0.0),
        length: probs.len(),
    }
}

pub fn zero_mean(logits: &LogitVector) -> LogitVector {
    let mean = mean(logits.values());
    LogitVector {
        values: logits.values().iter().map(|v| v - mean).collect(),
        provenance: logits.provenance(),
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Running sums of per-row statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StatsAccumulator {
    pub rows: usize,
    pub sum_p_max: f64,
    pub sum_entropy: f64,
}

impl StatsAccumulator {
    pub fn push(&mut self, s: &AttentionStats) {
        self.rows += 1;
        self.sum_p_max += s.p_max;
        self.sum_entropy += s.entropy;
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.rows += other.rows;
        self.sum_p_max += other.sum_p_max;
        self.sum_entropy += other.sum_entropy;
    }

    pub fn mean_p_max(&self) -> f64 {
        self.sum_p_max / self.rows as f64
    }

    pub fn mean_entropy(&self) -> f64 {
        self.sum_entropy / self.rows as f64
    }
}
