//! Gaussian logit model.
//!
//! Rows are sorted and averaged into one "average logit vector", which is
//! modelled as `N(0, sigma^2)` entries with a largest entry `l_max`. Under
//! that model the softmax denominator is `L e^{sigma^2 / (2 tau^2)}`, giving
//!
//! - `P_max ≈ e^{l_max/tau} / (L e^{sigma^2/(2 tau^2)})`
//! - `H ≈ ln L - sigma^2 / (2 tau^2)`
//!
//! and from those the two closed-form extrapolation temperatures. The
//! Monte-Carlo routines here measure how good those approximations are.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::log_baseline_tau;
use crate::encoder::{EncoderWeights, TokenId};
use crate::format::{parse_f64, parse_opt, parse_usize, sig6, sig6_opt};
use crate::softmax_stats::{check_temperature, mean, row_stats, zero_mean, LogitVector};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Average logit vector and Gaussian fit
// ---------------------------------------------------------------------------

/// Streaming elementwise sum of individually sorted rows.
#[derive(Debug, Clone, Default)]
pub struct SortedRowAccumulator {
    sum: Vec<f64>,
    rows: usize,
    scratch: Vec<f64>,
}

impl SortedRowAccumulator {
    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if self.rows == 0 {
            if row.is_empty() {
                return Err(Error::EmptyInput);
            }
            self.sum = vec![0.0; row.len()];
        } else if row.len() != self.sum.len() {
            return Err(Error::Shape(format!(
                "row of length {} among rows of length {}",
                row.len(),
                self.sum.len()
            )));
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(row);
        self.scratch.sort_by(f64::total_cmp);
        self.sum
            .iter_mut()
            .zip(&self.scratch)
            .for_each(|(s, v)| *s += v);
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Zero-meaned average of the sorted rows.
    pub fn finish(&self) -> Result<LogitVector> {
        if self.rows == 0 {
            return Err(Error::EmptyInput);
        }
        let n = self.rows as f64;
        let avg = LogitVector::synthetic(self.sum.iter().map(|s| s / n).collect())?;
        Ok(zero_mean(&avg))
    }
}

pub fn average_logit_vector(rows: &[LogitVector]) -> Result<LogitVector> {
    let mut acc = SortedRowAccumulator::default();
    for row in rows {
        acc.push(row.values())?;
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub sigma: f64,
    pub l_max: f64,
    pub length: usize,
    pub layer: String,
}

impl GaussianFit {
    pub fn new(sigma: f64, l_max: f64, length: usize) -> Self {
        Self {
            sigma,
            l_max,
            length,
            layer: "layer0".into(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Population standard deviation and maximum of a zero-meaned vector.
pub fn fit_gaussian(avg: &LogitVector) -> Result<GaussianFit> {
    let v = avg.values();
    if v.len() < 2 {
        return Err(Error::Precondition(
            "a Gaussian fit needs at least two entries".into(),
        ));
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(Error::Degenerate("constant vector has zero sigma".into()));
    }
    let l_max = v.iter().map(|x| x - m).fold(f64::NEG_INFINITY, f64::max);
    Ok(GaussianFit::new(sigma, l_max, v.len()))
}

/// Which encoder layers contribute rows to a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitScope {
    Layer(usize),
    AllLayers,
}

impl FitScope {
    fn label(self) -> String {
        match self {
            FitScope::Layer(l) => format!("layer{l}"),
            FitScope::AllLayers => "all".into(),
        }
    }
}

/// Fits the Gaussian model to the sorted-average logit vector of every
/// attention row in `scope`, pooled over all heads and sequences. All
/// sequences must share one length.
pub fn fit_encoder(
    weights: &EncoderWeights,
    sequences: &[Vec<TokenId>],
    tau: f64,
    scope: FitScope,
) -> Result<GaussianFit> {
    let mut fit = fit_gaussian(&encoder_average_vector(weights, sequences, tau, scope)?)?;
    fit.layer = scope.label();
    Ok(fit)
}

/// Zero-meaned sorted-average logit vector of every attention row in `scope`.
pub fn encoder_average_vector(
    weights: &EncoderWeights,
    sequences: &[Vec<TokenId>],
    tau: f64,
    scope: FitScope,
) -> Result<LogitVector> {
    let mut acc = SortedRowAccumulator::default();
    let mut failure = None;
    for tokens in sequences {
        let mut push = |row: &[f64]| {
            if failure.is_none() {
                if let Err(e) = acc.push(row) {
                    failure = Some(e);
                }
            }
        };
        match scope {
            FitScope::Layer(layer) => weights.for_each_layer_row(tokens, tau, layer, push)?,
            FitScope::AllLayers => {
                weights.forward_with(
                    tokens,
                    tau,
                    &mut |_: crate::encoder::RowId,
                          row: &[f64],
                          _: &crate::softmax_stats::AttentionStats| {
                        push(row)
                    },
                )?;
            }
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    acc.finish()
}

// ---------------------------------------------------------------------------
// Closed-form approximations
// ---------------------------------------------------------------------------

/// An approximation together with whether it left the range where the
/// model is meaningful (a probability above one, a negative entropy).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub out_of_model: bool,
}

fn check_model_args(length: usize, sigma: f64, tau: f64) -> Result<()> {
    if length == 0 {
        return Err(Error::EmptyLength);
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    check_temperature(tau)
}

pub fn approx_pmax(length: usize, sigma: f64, l_max: f64, tau: f64) -> Result<Estimate> {
    check_model_args(length, sigma, tau)?;
    let value = (l_max / tau - sigma * sigma / (2.0 * tau * tau)).exp() / length as f64;
    if value > 1.0 {
        log::warn!("max-probability approximation {value} exceeds 1");
    }
    Ok(Estimate {
        value,
        out_of_model: value > 1.0,
    })
}

pub fn approx_entropy(length: usize, sigma: f64, tau: f64) -> Result<Estimate> {
    check_model_args(length, sigma, tau)?;
    let value = (length as f64).ln() - sigma * sigma / (2.0 * tau * tau);
    if value < 0.0 {
        log::warn!("entropy approximation {value} is negative");
    }
    Ok(Estimate {
        value,
        out_of_model: value < 0.0,
    })
}

/// Coefficients of `A tau^2 - B tau + C = 0` for max-probability alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxProbQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MaxProbQuadratic {
    pub fn new(
        l_tr: usize,
        l_ex: usize,
        p_max_tr: f64,
        sigma_tr: f64,
        sigma_ex: f64,
    ) -> Result<Self> {
        if l_tr < 2 || l_ex < l_tr {
            return Err(Error::Domain(format!(
                "need L_ex >= L_tr >= 2, got L_tr = {l_tr}, L_ex = {l_ex}"
            )));
        }
        if !(p_max_tr > 0.0 && p_max_tr <= 1.0) {
            return Err(Error::Domain(format!(
                "p_max_tr must lie in (0, 1], got {p_max_tr}"
            )));
        }
        if !(sigma_tr > 0.0 && sigma_ex > 0.0) {
            return Err(Error::Domain("sigmas must be positive".into()));
        }
        let ln_p = p_max_tr.ln();
        Ok(Self {
            a: (l_ex as f64).ln() + ln_p,
            b: (l_tr as f64).ln() + ln_p + sigma_tr * sigma_tr / 2.0,
            c: sigma_ex * sigma_ex / 2.0,
        })
    }

    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    pub fn residual(&self, tau: f64) -> f64 {
        self.a * tau * tau - self.b * tau + self.c
    }

    pub fn larger_root(&self) -> Result<f64> {
        if !(self.a > 0.0) {
            return Err(Error::DegenerateCoefficient(self.a));
        }
        let disc = self.discriminant();
        if disc < 0.0 {
            return Err(Error::NoRealRoot { discriminant: disc });
        }
        let sqrt = disc.sqrt();
        // avoid cancellation when B < 0 via the product of roots C / A
        Ok(if self.b >= 0.0 {
            (self.b + sqrt) / (2.0 * self.a)
        } else {
            2.0 * self.c / (self.b - sqrt)
        })
    }
}

/// Temperature aligning the approximate maximum probability, taken as
/// the larger root of `A tau^2 - B tau + C = 0` with
/// `A = ln L_ex + ln P_tr`, `B = ln L_tr + ln P_tr + sigma_tr^2 / 2`,
/// `C = sigma_ex^2 / 2`.
pub fn solve_tau_maxprob(
    l_tr: usize,
    l_ex: usize,
    p_max_tr: f64,
    sigma_tr: f64,
    sigma_ex: f64,
) -> Result<f64> {
    MaxProbQuadratic::new(l_tr, l_ex, p_max_tr, sigma_tr, sigma_ex)?.larger_root()
}

/// Temperature aligning the approximate entropy:
/// `sigma_ex / sqrt(sigma_tr^2 + 2 ln(L_ex / L_tr))`.
pub fn solve_tau_entropy(l_tr: usize, l_ex: usize, sigma_tr: f64, sigma_ex: f64) -> Result<f64> {
    if l_tr < 1 || l_ex < l_tr {
        return Err(Error::Domain(format!(
            "need L_ex >= L_tr >= 1, got L_tr = {l_tr}, L_ex = {l_ex}"
        )));
    }
    if !(sigma_tr > 0.0 && sigma_ex > 0.0) {
        return Err(Error::Domain("sigmas must be positive".into()));
    }
    let ratio = l_ex as f64 / l_tr as f64;
    Ok(sigma_ex / (sigma_tr * sigma_tr + 2.0 * ratio.ln()).sqrt())
}

// ---------------------------------------------------------------------------
// Monte-Carlo oracles
// ---------------------------------------------------------------------------

const CHUNK: usize = 1 << 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectationReport {
    pub sigma: f64,
    pub tau: f64,
    pub samples: usize,
    pub exp_empirical: f64,
    pub exp_closed_form: f64,
    pub exp_rel_err: f64,
    pub lexp_empirical: f64,
    pub lexp_closed_form: f64,
    pub lexp_rel_err: f64,
}

/// Sample means of `e^{l/tau}` and `l e^l` for `l ~ N(0, sigma^2)` next to
/// their closed forms `e^{sigma^2/(2 tau^2)}` and `sigma^2 e^{sigma^2/2}`.
pub fn mc_oracle_expectations(
    sigma: f64,
    tau: f64,
    samples: usize,
    seed: u64,
) -> Result<ExpectationReport> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    check_temperature(tau)?;
    if samples == 0 {
        return Err(Error::EmptyInput);
    }
    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let (mut e, mut le) = (0.0, 0.0);
            for _ in 0..n {
                let l = sigma * rng.sample::<f64, _>(StandardNormal);
                e += (l / tau).exp();
                le += l * l.exp();
            }
            (e, le)
        })
        .collect();
    let (e, le) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = samples as f64;
    let exp_empirical = e / n;
    let lexp_empirical = le / n;
    let exp_closed_form = (sigma * sigma / (2.0 * tau * tau)).exp();
    let lexp_closed_form = sigma * sigma * (sigma * sigma / 2.0).exp();
    Ok(ExpectationReport {
        sigma,
        tau,
        samples,
        exp_empirical,
        exp_closed_form,
        exp_rel_err: (exp_empirical - exp_closed_form).abs() / exp_closed_form,
        lexp_empirical,
        lexp_closed_form,
        lexp_rel_err: (lexp_empirical - lexp_closed_form).abs() / lexp_closed_form,
    })
}

/// Exact softmax statistics of Gaussian rows against the approximations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityReport {
    pub length: usize,
    pub sigma: f64,
    pub tau: f64,
    pub replicates: usize,
    pub mc_mean_p_max: f64,
    /// Mean of the max-probability approximation, each replicate using its
    /// own largest (zero-meaned) logit.
    pub approx_mean_p_max: f64,
    pub p_max_rel_err: f64,
    pub mc_mean_entropy: f64,
    pub approx_entropy: f64,
    pub entropy_abs_err: f64,
}

/// Draws `replicates` zero-meaned `N(0, sigma^2)` rows of length `length`
/// and compares their mean softmax statistics at `tau` with the closed
/// forms. `entropy_formula` is normally [`approx_entropy`]'s value.
pub fn approximation_fidelity_with(
    length: usize,
    sigma: f64,
    tau: f64,
    replicates: usize,
    seed: u64,
    entropy_formula: fn(usize, f64, f64) -> f64,
) -> Result<FidelityReport> {
    check_model_args(length, sigma, tau)?;
    if replicates == 0 {
        return Err(Error::EmptyInput);
    }
    let per: Vec<(f64, f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut row: Vec<f64> = (0..length)
                .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let m = mean(&row);
            row.iter_mut().for_each(|v| *v -= m);
            let s = row_stats(&row, tau);
            let l_max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let approx = (l_max / tau - sigma * sigma / (2.0 * tau * tau)).exp() / length as f64;
            (s.p_max, s.entropy, approx)
        })
        .collect();
    let n = replicates as f64;
    let (p, h, a) = per.iter().fold((0.0, 0.0, 0.0), |(p, h, a), (x, y, z)| {
        (p + x, h + y, a + z)
    });
    let (mc_mean_p_max, mc_mean_entropy, approx_mean_p_max) = (p / n, h / n, a / n);
    let approx_h = entropy_formula(length, sigma, tau);
    Ok(FidelityReport {
        length,
        sigma,
        tau,
        replicates,
        mc_mean_p_max,
        approx_mean_p_max,
        p_max_rel_err: (approx_mean_p_max - mc_mean_p_max).abs() / mc_mean_p_max,
        mc_mean_entropy,
        approx_entropy: approx_h,
        entropy_abs_err: (approx_h - mc_mean_entropy).abs(),
    })
}

fn entropy_formula(length: usize, sigma: f64, tau: f64) -> f64 {
    (length as f64).ln() - sigma * sigma / (2.0 * tau * tau)
}

pub fn approximation_fidelity(
    length: usize,
    sigma: f64,
    tau: f64,
    replicates: usize,
    seed: u64,
) -> Result<FidelityReport> {
    approximation_fidelity_with(length, sigma, tau, replicates, seed, entropy_formula)
}

// ---------------------------------------------------------------------------
// QQ check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct QQReport {
    /// (theoretical, empirical) pairs sorted by theoretical quantile.
    pub points: Vec<(f64, f64)>,
    /// Pearson correlation of the points.
    pub linearity: f64,
}

/// Standard normal quantiles at plotting positions `(i - 0.5) / n`.
pub fn normal_quantiles(n: usize) -> Vec<f64> {
    let normal = Normal::standard();
    (1..=n)
        .map(|i| normal.inverse_cdf((i as f64 - 0.5) / n as f64))
        .collect()
}

fn pearson(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn qq_check(samples: &[f64]) -> Result<QQReport> {
    if samples.len() < 20 {
        return Err(Error::Precondition(format!(
            "QQ check needs at least 20 samples, got {}",
            samples.len()
        )));
    }
    let m = mean(samples);
    let sd = (samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("constant samples".into()));
    }
    let mut standardized: Vec<f64> = samples.iter().map(|x| (x - m) / sd).collect();
    standardized.sort_by(f64::total_cmp);
    let points: Vec<(f64, f64)> = normal_quantiles(samples.len())
        .into_iter()
        .zip(standardized)
        .collect();
    let linearity = pearson(&points);
    Ok(QQReport { points, linearity })
}

impl QQReport {
    /// CSV with columns `theoretical,empirical`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theoretical,empirical\n");
        for (t, e) in &self.points {
            out.push_str(&format!("{},{}\n", sig6(*t), sig6(*e)));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let points = csv::Reader::from_reader(text.as_bytes())
            .records()
            .map(|r| {
                let r = r?;
                Ok((parse_f64(&r[0])?, parse_f64(&r[1])?))
            })
            .collect::<Result<Vec<_>>>()?;
        if points.len() < 2 {
            return Err(Error::Parse("QQ table needs at least two points".into()));
        }
        let linearity = pearson(&points);
        Ok(Self { points, linearity })
    }
}

// ---------------------------------------------------------------------------
// Temperature curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureRow {
    pub l_ex: usize,
    pub tau_prop1: Option<f64>,
    pub tau_prop2: Option<f64>,
    pub tau_log: Option<f64>,
}

fn keep(cell: Result<f64>, what: &str, l_ex: usize) -> Option<f64> {
    cell.map_err(|e| log::debug!("{what} at L_ex = {l_ex}: {e}"))
        .ok()
}

/// Max-probability, entropy and log-baseline temperatures for every
/// extrapolation fit. Cells whose solver fails are left empty.
pub fn temperature_curve(
    train: &GaussianFit,
    p_max_tr: f64,
    ex_fits: &[GaussianFit],
) -> Vec<TemperatureRow> {
    ex_fits
        .iter()
        .map(|fit| {
            let l_ex = fit.length;
            TemperatureRow {
                l_ex,
                tau_prop1: keep(
                    solve_tau_maxprob(train.length, l_ex, p_max_tr, train.sigma, fit.sigma),
                    "max-probability temperature",
                    l_ex,
                ),
                tau_prop2: keep(
                    solve_tau_entropy(train.length, l_ex, train.sigma, fit.sigma),
                    "entropy temperature",
                    l_ex,
                ),
                tau_log: keep(log_baseline_tau(train.length, l_ex), "log baseline", l_ex),
            }
        })
        .collect()
}

/// CSV with columns `L_ex,tau_prop1,tau_prop2,tau_log`; absent cells empty.
pub fn curve_to_csv(rows: &[TemperatureRow]) -> String {
    let mut out = String::from("L_ex,tau_prop1,tau_prop2,tau_log\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.l_ex,
            sig6_opt(r.tau_prop1),
            sig6_opt(r.tau_prop2),
            sig6_opt(r.tau_log)
        ));
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<TemperatureRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| {
            let r = r?;
            Ok(TemperatureRow {
                l_ex: parse_usize(&r[0])?,
                tau_prop1: parse_opt(&r[1])?,
                tau_prop2: parse_opt(&r[2])?,
                tau_log: parse_opt(&r[3])?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Per-length analysis
// ---------------------------------------------------------------------------

/// Average attention statistics and Gaussian fit at one sequence length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub length: usize,
    pub p_max: f64,
    pub entropy: f64,
    pub sigma: f64,
    pub l_max: f64,
}

impl LengthReport {
    pub fn fit(&self) -> GaussianFit {
        GaussianFit::new(self.sigma, self.l_max, self.length)
    }
}

/// Statistics over all rows (every layer and head) plus a fit restricted to
/// `scope`, for each group of equal-length sequences.
pub fn analyze_lengths(
    weights: &EncoderWeights,
    sequences: &[Vec<TokenId>],
    tau: f64,
    scope: FitScope,
) -> Result<Vec<LengthReport>> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Vec<TokenId>>> = Default::default();
    for s in sequences {
        groups.entry(s.len()).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(length, seqs)| {
            let acc = crate::calibration::accumulate_all(weights, &seqs, tau)?;
            // A constant average vector (e.g. all logits equal) centres to
            // zeros, so its spread and maximum are both exactly zero.
            let (sigma, l_max) = match fit_encoder(weights, &seqs, tau, scope) {
                Ok(fit) => (fit.sigma, fit.l_max),
                Err(Error::Degenerate(msg)) => {
                    log::warn!("length {length}: {msg}; reporting sigma = 0");
                    (0.0, 0.0)
                }
                Err(e) => return Err(e),
            };
            Ok(LengthReport {
                length,
                p_max: acc.mean_p_max(),
                entropy: acc.mean_entropy(),
                sigma,
                l_max,
            })
        })
        .collect()
}

/// CSV with columns `length,p_max,entropy,sigma,l_max`.
pub fn reports_to_csv(reports: &[LengthReport]) -> String {
    let mut out = String::from("length,p_max,entropy,sigma,l_max\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.length,
            sig6(r.p_max),
            sig6(r.entropy),
            sig6(r.sigma),
            sig6(r.l_max)
        ));
    }
    out
}

pub fn reports_from_csv(text: &str) -> Result<Vec<LengthReport>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| {
            let r = r?;
            Ok(LengthReport {
                length: parse_usize(&r[0])?,
                p_max: parse_f64(&r[1])?,
                entropy: parse_f64(&r[2])?,
                sigma: parse_f64(&r[3])?,
                l_max: parse_f64(&r[4])?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Oracle suite
// ---------------------------------------------------------------------------

/// `n` seeded draws from `N(0, sigma^2)`.
pub fn gaussian_samples(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Length at which the approximation-fidelity checks run.
pub const ORACLE_LENGTH: usize = 4096;

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub sigma: f64,
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
    /// Entropy approximation under test; [`approx_entropy`]'s formula by default.
    pub entropy_formula: fn(usize, f64, f64) -> f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            tau: 1.0,
            samples: 1_000_000,
            seed: 0,
            entropy_formula,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub measured: f64,
    pub reference: f64,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &str, measured: f64, reference: f64, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            reference,
            error,
            tolerance,
            passed: error <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSuite {
    pub checks: Vec<OracleCheck>,
}

impl OracleSuite {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Monte-Carlo checks of every closed form against its tolerance:
/// `E[e^{l/tau}]` (1% relative), `E[l e^l]` (2% relative), the entropy
/// approximation (0.05 nats) and max-probability approximation (10%
/// relative) at `L = 4096`, and QQ linearity of Gaussian samples (>= 0.995).
pub fn run_oracle_suite(config: &OracleConfig) -> Result<OracleSuite> {
    let e = mc_oracle_expectations(config.sigma, config.tau, config.samples, config.seed)?;
    let replicates = (config.samples / ORACLE_LENGTH).clamp(16, 10_000);
    let f = approximation_fidelity_with(
        ORACLE_LENGTH,
        config.sigma,
        config.tau,
        replicates,
        config.seed.wrapping_add(1),
        config.entropy_formula,
    )?;
    let qq = qq_check(&gaussian_samples(
        config.samples.clamp(20, 10_000),
        1.0,
        config.seed.wrapping_add(2),
    ))?;
    Ok(OracleSuite {
        checks: vec![
            OracleCheck::new(
                "E[exp(l/tau)]",
                e.exp_empirical,
                e.exp_closed_form,
                e.exp_rel_err,
                0.01,
            ),
            OracleCheck::new(
                "E[l exp(l)]",
                e.lexp_empirical,
                e.lexp_closed_form,
                e.lexp_rel_err,
                0.02,
            ),
            OracleCheck::new(
                "entropy approximation",
                f.approx_entropy,
                f.mc_mean_entropy,
                f.entropy_abs_err,
                0.05,
            ),
            OracleCheck::new(
                "max-probability approximation",
                f.approx_mean_p_max,
                f.mc_mean_p_max,
                f.p_max_rel_err,
                0.10,
            ),
            OracleCheck::new("QQ linearity", qq.linearity, 1.0, 1.0 - qq.linearity, 0.005),
        ],
    })
}
