//! Synthetic retrieval tasks and the needle attention model.
//!
//! The generators emit token-id sequences (ids `0..=254` for content,
//! `255` reserved as the marker). The needle model is a single logit `g`
//! competing with `L` junk logits drawn from `N(0, sigma^2)`; its softmax
//! probability shows attention dispersing as `L` grows, and recovering
//! when the temperature is lowered.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::solve_tau_entropy;
use crate::calibration::tau_grid;
use crate::encoder::TokenId;
use crate::format::{parse_f64, parse_usize, sig6};
use crate::softmax_stats::check_temperature;
use crate::{Error, Result};

pub const MARKER_TOKEN: TokenId = 255;
/// Content tokens are drawn from `0..CONTENT_VOCAB`.
pub const CONTENT_VOCAB: TokenId = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Passkey,
    Line,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub tokens: Vec<TokenId>,
    /// Half-open `[start, end)` range of the answer tokens.
    pub answer_span: (usize, usize),
    pub seed: u64,
}

impl SyntheticTask {
    pub fn answer(&self) -> &[TokenId] {
        &self.tokens[self.answer_span.0..self.answer_span.1]
    }
}

/// One JSON object per line; readable by [`crate::encoder::read_sequences`].
pub fn tasks_to_jsonl(tasks: &[SyntheticTask]) -> Result<String> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn tasks_from_jsonl(text: &str) -> Result<Vec<SyntheticTask>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Passkey tokens; never contains the marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passkey(Vec<TokenId>);

impl Passkey {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= CONTENT_VOCAB) {
            return Err(Error::Domain(format!(
                "passkey token {t} collides with the marker range"
            )));
        }
        Ok(Self(tokens))
    }

    /// Decimal digits of `value` as tokens `0..=9`.
    pub fn from_digits(value: u64) -> Self {
        Self(
            value
                .to_string()
                .bytes()
                .map(|b| TokenId::from(b - b'0'))
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }
}

/// Marker and passkey hidden at a random position inside uniform junk.
pub fn gen_passkey(passkey: &Passkey, junk_len: usize, seed: u64) -> SyntheticTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let junk: Vec<TokenId> = (0..junk_len)
        .map(|_| rng.random_range(0..CONTENT_VOCAB))
        .collect();
    let at = rng.random_range(0..=junk_len);
    let mut tokens = Vec::with_capacity(junk_len + 1 + passkey.0.len());
    tokens.extend_from_slice(&junk[..at]);
    tokens.push(MARKER_TOKEN);
    tokens.extend_from_slice(&passkey.0);
    tokens.extend_from_slice(&junk[at..]);
    SyntheticTask {
        kind: TaskKind::Passkey,
        tokens,
        answer_span: (at + 1, at + 1 + passkey.0.len()),
        seed,
    }
}

const KEY_SPACE: usize = (CONTENT_VOCAB as usize) * (CONTENT_VOCAB as usize);
const LINE_WIDTH: usize = 4;

/// `n_lines` groups of `[key0, key1, value0, value1]` with distinct keys,
/// followed by `[marker, key0, key1]` for the queried line.
pub fn gen_lines(n_lines: usize, seed: u64) -> Result<SyntheticTask> {
    if n_lines == 0 || n_lines > KEY_SPACE {
        return Err(Error::Domain(format!(
            "line count must be in 1..={KEY_SPACE}, got {n_lines}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = index::sample(&mut rng, KEY_SPACE, n_lines);
    let split = |k: usize| {
        [
            (k / CONTENT_VOCAB as usize) as TokenId,
            (k % CONTENT_VOCAB as usize) as TokenId,
        ]
    };
    let mut tokens = Vec::with_capacity(n_lines * LINE_WIDTH + 3);
    for k in keys.iter() {
        tokens.extend(split(k));
        tokens.push(rng.random_range(0..CONTENT_VOCAB));
        tokens.push(rng.random_range(0..CONTENT_VOCAB));
    }
    let query = rng.random_range(0..n_lines);
    tokens.push(MARKER_TOKEN);
    tokens.extend(split(keys.index(query)));
    let start = query * LINE_WIDTH + 2;
    Ok(SyntheticTask {
        kind: TaskKind::Line,
        tokens,
        answer_span: (start, start + 2),
        seed,
    })
}

// ---------------------------------------------------------------------------
// Needle model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeedleMode {
    ClosedForm,
    MonteCarlo { replicates: usize, seed: u64 },
}

/// Softmax probability of a needle logit `gap` among `length` junk logits.
///
/// The closed form replaces the junk part of the denominator by its mean
/// `L e^{sigma^2 / (2 tau^2)}`.
pub fn needle_pmax(gap: f64, sigma: f64, length: usize, tau: f64, mode: NeedleMode) -> Result<f64> {
    check_temperature(tau)?;
    if length == 0 {
        return Err(Error::EmptyLength);
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    match mode {
        NeedleMode::ClosedForm => {
            let log_ratio = (length as f64).ln() + sigma * sigma / (2.0 * tau * tau) - gap / tau;
            Ok(1.0 / (1.0 + log_ratio.exp()))
        }
        NeedleMode::MonteCarlo { replicates, seed } => {
            if replicates == 0 {
                return Err(Error::EmptyInput);
            }
            let total: f64 = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(r as u64);
                    let junk: Vec<f64> = (0..length)
                        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let max = junk.iter().copied().fold(gap, f64::max);
                    let needle = ((gap - max) / tau).exp();
                    let rest: f64 = junk.iter().map(|l| ((l - max) / tau).exp()).sum();
                    needle / (needle + rest)
                })
                .collect::<Vec<_>>()
                .iter()
                .sum();
            Ok(total / replicates as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeedlePolicy {
    /// `tau = 1` at every length.
    Fixed1,
    /// Entropy-aligned temperature relative to the first grid length.
    Prop2Aligned,
}

impl fmt::Display for NeedlePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeedlePolicy::Fixed1 => "fixed_1",
            NeedlePolicy::Prop2Aligned => "prop2_aligned",
        })
    }
}

impl FromStr for NeedlePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_1" => Ok(NeedlePolicy::Fixed1),
            "prop2_aligned" => Ok(NeedlePolicy::Prop2Aligned),
            other => Err(Error::Parse(format!("unknown needle policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeedlePoint {
    pub length: usize,
    pub tau: f64,
    pub p_needle: f64,
    pub policy: NeedlePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleCurve {
    pub gap: f64,
    pub junk_sigma: f64,
    pub train_length: usize,
    pub points: Vec<NeedlePoint>,
}

impl NeedleCurve {
    pub fn policy(&self, policy: NeedlePolicy) -> impl Iterator<Item = &NeedlePoint> {
        self.points.iter().filter(move |p| p.policy == policy)
    }

    /// CSV with columns `L,tau,p_needle,policy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,tau,p_needle,policy\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.length,
                sig6(p.tau),
                sig6(p.p_needle),
                p.policy
            ));
        }
        out
    }
}

pub fn needle_points_from_csv(text: &str) -> Result<Vec<NeedlePoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| {
            let r = r?;
            Ok(NeedlePoint {
                length: parse_usize(&r[0])?,
                tau: parse_f64(&r[1])?,
                p_needle: parse_f64(&r[2])?,
                policy: r[3].parse()?,
            })
        })
        .collect()
}

/// Closed-form needle probability along `lengths` under both temperature
/// policies. The first length is the training length.
pub fn dispersed_attention_demo(gap: f64, sigma: f64, lengths: &[usize]) -> Result<NeedleCurve> {
    let &train_length = lengths.first().ok_or(Error::EmptyInput)?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(
            "entropy alignment needs a positive junk sigma".into(),
        ));
    }
    let mut points = Vec::with_capacity(2 * lengths.len());
    for policy in [NeedlePolicy::Fixed1, NeedlePolicy::Prop2Aligned] {
        for &length in lengths {
            let tau = match policy {
                NeedlePolicy::Fixed1 => 1.0,
                NeedlePolicy::Prop2Aligned => {
                    solve_tau_entropy(train_length, length, sigma, sigma)?
                }
            };
            points.push(NeedlePoint {
                length,
                tau,
                p_needle: needle_pmax(gap, sigma, length, tau, NeedleMode::ClosedForm)?,
                policy,
            });
        }
    }
    Ok(NeedleCurve {
        gap,
        junk_sigma: sigma,
        train_length,
        points,
    })
}

/// Largest search-grid temperature below one at which the needle at
/// `l_ex` is at least as prominent as at `l_tr` with `tau = 1`.
pub fn achievable_correction(
    gap: f64,
    sigma: f64,
    l_tr: usize,
    l_ex: usize,
) -> Result<Option<f64>> {
    let target = needle_pmax(gap, sigma, l_tr, 1.0, NeedleMode::ClosedForm)?;
    for tau in tau_grid().into_iter().skip(1) {
        if needle_pmax(gap, sigma, l_ex, tau, NeedleMode::ClosedForm)? >= target {
            return Ok(Some(tau));
        }
    }
    Ok(None)
}
