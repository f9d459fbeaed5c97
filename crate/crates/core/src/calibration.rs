//! Empirical temperature search.
//!
//! The average statistic (maximum probability or entropy) over every
//! softmax row at the training length and `tau = 1` is the target. The
//! same average at the extrapolation length is evaluated on the grid
//! `1.00, 0.95, ..., 0.50`, and the grid point closest to the target wins,
//! with ties going to the larger temperature.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderWeights, RowId, TokenId};
use crate::format::{parse_f64, sig6};
use crate::softmax_stats::{row_stats, AttentionStats, StatsAccumulator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentMode {
    MaxProb,
    Entropy,
}

impl AlignmentMode {
    pub fn select(self, acc: &StatsAccumulator) -> f64 {
        match self {
            AlignmentMode::MaxProb => acc.mean_p_max(),
            AlignmentMode::Entropy => acc.mean_entropy(),
        }
    }
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "maxprob" | "max-prob" => Ok(AlignmentMode::MaxProb),
            "ent" | "entropy" => Ok(AlignmentMode::Entropy),
            other => Err(Error::Parse(format!(
                "unknown alignment mode {other:?} (expected max or ent)"
            ))),
        }
    }
}

impl fmt::Display for AlignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignmentMode::MaxProb => "max",
            AlignmentMode::Entropy => "ent",
        })
    }
}

/// Anything that produces softmax rows whose statistics can be averaged.
pub trait StatSource: Sync {
    type Input: Sync;

    /// Sequence length of one input.
    fn input_len(&self, input: &Self::Input) -> usize;

    /// Sums of per-row statistics over every softmax row of one input.
    fn accumulate(&self, input: &Self::Input, tau: f64) -> Result<StatsAccumulator>;
}

impl StatSource for EncoderWeights {
    type Input = Vec<TokenId>;

    fn input_len(&self, input: &Vec<TokenId>) -> usize {
        input.len()
    }

    fn accumulate(&self, input: &Vec<TokenId>, tau: f64) -> Result<StatsAccumulator> {
        let mut acc = StatsAccumulator::default();
        self.forward_with(
            input,
            tau,
            &mut |_: RowId, _: &[f64], s: &AttentionStats| acc.push(s),
        )?;
        Ok(acc)
    }
}

/// Stand-in for an encoder that emits i.i.d. `N(0, sigma^2)` logit rows.
///
/// With `planted_max` set, one entry of every row is replaced by that
/// value, so the largest logit stays put as the length grows. Rows are
/// regenerated from the input seed on every call, so all temperatures see
/// the same logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLogitSource {
    pub sigma: f64,
    pub planted_max: Option<f64>,
    /// Rows per input; `None` means one row per position.
    pub rows_per_input: Option<usize>,
}

impl GaussianLogitSource {
    pub fn standard() -> Self {
        Self {
            sigma: 1.0,
            planted_max: None,
            rows_per_input: None,
        }
    }

    pub fn row(&self, rng: &mut ChaCha8Rng, length: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..length).map(|_| self.sigma * rng.sample::<f64, _>(StandardNormal)));
        if let Some(v) = self.planted_max {
            out[0] = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticInput {
    pub length: usize,
    pub seed: u64,
}

/// `count` inputs of one length with consecutive seeds.
pub fn synthetic_inputs(count: usize, length: usize, seed: u64) -> Vec<SyntheticInput> {
    (0..count as u64)
        .map(|i| SyntheticInput {
            length,
            seed: seed.wrapping_add(i),
        })
        .collect()
}

impl StatSource for GaussianLogitSource {
    type Input = SyntheticInput;

    fn input_len(&self, input: &SyntheticInput) -> usize {
        input.length
    }

    fn accumulate(&self, input: &SyntheticInput, tau: f64) -> Result<StatsAccumulator> {
        crate::softmax_stats::check_temperature(tau)?;
        if input.length == 0 {
            return Err(Error::EmptyLength);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
        let mut acc = StatsAccumulator::default();
        let mut row = Vec::with_capacity(input.length);
        for _ in 0..self.rows_per_input.unwrap_or(input.length) {
            self.row(&mut rng, input.length, &mut row);
            acc.push(&row_stats(&row, tau));
        }
        Ok(acc)
    }
}

/// Pooled statistics over all inputs, reduced in input order.
pub fn accumulate_all<S: StatSource>(
    source: &S,
    inputs: &[S::Input],
    tau: f64,
) -> Result<StatsAccumulator> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let parts = inputs
        .par_iter()
        .map(|input| source.accumulate(input, tau))
        .collect::<Result<Vec<_>>>()?;
    let mut total = StatsAccumulator::default();
    parts.iter().for_each(|p| total.merge(p));
    Ok(total)
}

/// Mean per-row statistic over every softmax row of every input.
pub fn find_s<S: StatSource>(
    source: &S,
    inputs: &[S::Input],
    tau: f64,
    mode: AlignmentMode,
) -> Result<f64> {
    Ok(mode.select(&accumulate_all(source, inputs, tau)?))
}

/// The eleven search temperatures, largest first.
pub fn tau_grid() -> Vec<f64> {
    (0..=10).map(|k| f64::from(20 - k) / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau: f64,
    pub stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau_ex: f64,
    pub mode: AlignmentMode,
    pub target_stat: f64,
    pub achieved_stat: f64,
    pub grid: Vec<GridPoint>,
    pub l_tr: usize,
    pub l_ex: usize,
    /// Whether the grid statistic moved monotonically with temperature.
    pub monotone: bool,
    /// Best of the winner and its two half-step neighbours, when refinement
    /// was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CalibrationOptions {
    pub refine: bool,
}

fn common_length<S: StatSource>(source: &S, inputs: &[S::Input], what: &str) -> Result<usize> {
    let first = inputs
        .first()
        .map(|i| source.input_len(i))
        .ok_or_else(|| Error::Precondition(format!("no {what} sequences")))?;
    if inputs.iter().any(|i| source.input_len(i) != first) {
        return Err(Error::Precondition(format!(
            "{what} sequences must share one length"
        )));
    }
    Ok(first)
}

/// Index of the grid point closest to `target`; earlier (larger tau) wins ties.
fn closest(grid: &[GridPoint], target: f64) -> usize {
    let mut best = 0;
    for (i, p) in grid.iter().enumerate().skip(1) {
        if (p.stat - target).abs() < (grid[best].stat - target).abs() {
            best = i;
        }
    }
    best
}

fn is_monotone(grid: &[GridPoint], mode: AlignmentMode) -> bool {
    const SLACK: f64 = 1e-12;
    grid.windows(2).all(|w| match mode {
        // grid runs from high to low temperature
        AlignmentMode::Entropy => w[1].stat <= w[0].stat + SLACK,
        AlignmentMode::MaxProb => w[1].stat >= w[0].stat - SLACK,
    })
}

pub fn calibrate<S: StatSource>(
    source: &S,
    short: &[S::Input],
    long: &[S::Input],
    mode: AlignmentMode,
) -> Result<CalibrationResult> {
    calibrate_with(source, short, long, mode, CalibrationOptions::default())
}

pub fn calibrate_with<S: StatSource>(
    source: &S,
    short: &[S::Input],
    long: &[S::Input],
    mode: AlignmentMode,
    options: CalibrationOptions,
) -> Result<CalibrationResult> {
    let l_tr = common_length(source, short, "short")?;
    let l_ex = common_length(source, long, "long")?;
    if l_ex <= l_tr {
        return Err(Error::Precondition(format!(
            "extrapolation length L_ex = {l_ex} must exceed training length L_tr = {l_tr}"
        )));
    }
    let target = find_s(source, short, 1.0, mode)?;
    let grid = tau_grid()
        .into_iter()
        .map(|tau| {
            Ok(GridPoint {
                tau,
                stat: find_s(source, long, tau, mode)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = grid[closest(&grid, target)];
    let monotone = is_monotone(&grid, mode);
    if !monotone {
        log::warn!("{mode} statistic is not monotone in temperature on the search grid");
    }

    let refined_tau = if options.refine {
        let mut candidates = vec![best];
        for tau in [best.tau + 0.025, best.tau - 0.025] {
            if (0.5..=1.0).contains(&tau) {
                candidates.push(GridPoint {
                    tau,
                    stat: find_s(source, long, tau, mode)?,
                });
            }
        }
        Some(candidates[closest(&candidates, target)].tau)
    } else {
        None
    };

    Ok(CalibrationResult {
        tau_ex: best.tau,
        mode,
        target_stat: target,
        achieved_stat: best.stat,
        grid,
        l_tr,
        l_ex,
        monotone,
        refined_tau,
    })
}

impl CalibrationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with columns `tau,stat`.
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("tau,stat\n");
        for p in &self.grid {
            out.push_str(&format!("{},{}\n", sig6(p.tau), sig6(p.stat)));
        }
        out
    }
}

pub fn grid_from_csv(text: &str) -> Result<Vec<GridPoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| {
            let r = r?;
            Ok(GridPoint {
                tau: parse_f64(&r[0])?,
                stat: parse_f64(&r[1])?,
            })
        })
        .collect()
}

/// Length-only temperature `log_{L_ex} L_tr = ln L_tr / ln L_ex`.
pub fn log_baseline_tau(l_tr: usize, l_ex: usize) -> Result<f64> {
    if l_tr < 2 || l_ex < 2 {
        return Err(Error::Domain(format!(
            "log baseline needs lengths of at least 2, got L_tr = {l_tr}, L_ex = {l_ex}"
        )));
    }
    Ok((l_tr as f64).ln() / (l_ex as f64).ln())
}
