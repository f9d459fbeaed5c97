//! Minimal instrumented T5-style encoder.
//!
//! Each layer is pre-norm self-attention followed by a pre-norm ReLU
//! feed-forward block, both with residual connections. Attention logits
//! are `Q Kᵀ + bias` with no `1/√d_kv` scaling, and one set of per-head
//! bucket tables is shared by every layer. Every softmax uses the same
//! global temperature, and every pre-softmax row can be observed through
//! a [`RowSink`].

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::rpe_bias::{BucketTable, OffsetBias, NUM_BUCKETS};
use crate::softmax_stats::{
    check_temperature, row_stats, softmax_in_place, AttentionStats, LogitVector, Provenance,
};
use crate::{Error, Result};

pub type TokenId = u32;

const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_kv: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            d_kv: 16,
            d_ff: 256,
            vocab_size: 256,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("d_kv", self.d_kv),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model != self.num_heads * self.d_kv {
            return Err(Error::Config(format!(
                "d_model ({}) must equal num_heads * d_kv ({} * {})",
                self.d_model, self.num_heads, self.d_kv
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Array1<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
    pub ffn_norm: Array1<f64>,
    pub ffn_in: Array2<f64>,
    pub ffn_out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub embedding: Array2<f64>,
    /// One table per head, shared by all layers.
    pub bias_tables: Vec<BucketTable>,
    pub layers: Vec<LayerWeights>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half_width: f64) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-half_width, half_width).expect("finite bounds");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Deterministic weights from `config.seed`.
///
/// Projections are uniform on `±1/√fan_in`; embeddings and bucket values
/// are standard normal; norm gains start at one.
pub fn init_encoder(config: &EncoderConfig) -> Result<EncoderWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d_model;
    let embedding = Array2::from_shape_vec(
        (config.vocab_size, d),
        normal_vec(&mut rng, config.vocab_size * d),
    )
    .expect("embedding shape");
    let bias_tables = (0..config.num_heads)
        .map(|h| BucketTable::new(normal_vec(&mut rng, NUM_BUCKETS), h))
        .collect::<Result<Vec<_>>>()?;
    let proj = 1.0 / (d as f64).sqrt();
    let ff = 1.0 / (config.d_ff as f64).sqrt();
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            attn_norm: Array1::ones(d),
            query: uniform_matrix(&mut rng, d, d, proj),
            key: uniform_matrix(&mut rng, d, d, proj),
            value: uniform_matrix(&mut rng, d, d, proj),
            output: uniform_matrix(&mut rng, d, d, proj),
            ffn_norm: Array1::ones(d),
            ffn_in: uniform_matrix(&mut rng, d, config.d_ff, proj),
            ffn_out: uniform_matrix(&mut rng, config.d_ff, d, ff),
        })
        .collect();
    Ok(EncoderWeights {
        config: config.clone(),
        embedding,
        bias_tables,
        layers,
    })
}

/// Identifies one attention row during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowId {
    pub layer: usize,
    pub head: usize,
    pub row: usize,
}

/// Observer for pre-softmax logit rows, called in (layer, head, row) order.
pub trait RowSink {
    fn row(&mut self, id: RowId, logits: &[f64], stats: &AttentionStats);
}

impl<F: FnMut(RowId, &[f64], &AttentionStats)> RowSink for F {
    fn row(&mut self, id: RowId, logits: &[f64], stats: &AttentionStats) {
        self(id, logits, stats)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub length: usize,
    /// Per-row statistics in (layer, head, row) order.
    pub row_stats: Vec<AttentionStats>,
    /// Raw pre-softmax rows, present only when recording was requested.
    pub logit_rows: Option<Vec<LogitVector>>,
    pub hidden_states: Array2<f64>,
}

impl ForwardTrace {
    pub fn mean_p_max(&self) -> f64 {
        self.row_stats.iter().map(|s| s.p_max).sum::<f64>() / self.row_stats.len() as f64
    }

    pub fn mean_entropy(&self) -> f64 {
        self.row_stats.iter().map(|s| s.entropy).sum::<f64>() / self.row_stats.len() as f64
    }
}

fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let scale = (ms + RMS_EPS).sqrt().recip();
        row.iter_mut()
            .zip(gain.iter())
            .for_each(|(v, g)| *v *= scale * g);
    }
    out
}

impl EncoderWeights {
    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.config.num_heads
    }

    pub fn embed(&self, tokens: &[TokenId]) -> Result<Array2<f64>> {
        let vocab = self.config.vocab_size;
        let mut x = Array2::zeros((tokens.len(), self.config.d_model));
        for (i, &t) in tokens.iter().enumerate() {
            if t as usize >= vocab {
                return Err(Error::Vocabulary { token: t, vocab });
            }
            x.row_mut(i).assign(&self.embedding.row(t as usize));
        }
        Ok(x)
    }

    /// Zeroes every query/key projection and bucket value so that all
    /// attention logits are equal.
    pub fn zero_attention_logits(&mut self) {
        for layer in &mut self.layers {
            layer.query.fill(0.0);
            layer.key.fill(0.0);
        }
        for table in &mut self.bias_tables {
            table.scale(0.0);
        }
    }

    /// Runs the encoder, reporting every pre-softmax row to `sink`, and
    /// returns the final hidden states.
    pub fn forward_with<S: RowSink + ?Sized>(
        &self,
        tokens: &[TokenId],
        tau: f64,
        sink: &mut S,
    ) -> Result<Array2<f64>> {
        check_temperature(tau)?;
        if tokens.is_empty() {
            return Err(Error::EmptyLength);
        }
        let len = tokens.len();
        let dk = self.config.d_kv;
        let mut x = self.embed(tokens)?;
        let biases = self
            .bias_tables
            .iter()
            .map(|t| OffsetBias::new(t, len))
            .collect::<Result<Vec<_>>>()?;

        for (layer_idx, layer) in self.layers.iter().enumerate() {
            let h = rms_norm(&x, &layer.attn_norm);
            let q = h.dot(&layer.query);
            let k = h.dot(&layer.key);
            let v = h.dot(&layer.value);
            let mut context = Array2::<f64>::zeros((len, self.config.d_model));
            for (head, bias) in biases.iter().enumerate() {
                let cols = s![.., head * dk..(head + 1) * dk];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t());
                for (m, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
                    let row = row.as_slice_mut().expect("standard layout");
                    row.iter_mut().zip(bias.row(m)).for_each(|(s, b)| *s += b);
                    let stats = row_stats(row, tau);
                    sink.row(
                        RowId {
                            layer: layer_idx,
                            head,
                            row: m,
                        },
                        row,
                        &stats,
                    );
                    softmax_in_place(row, tau);
                }
                context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            }
            x += &context.dot(&layer.output);

            let h = rms_norm(&x, &layer.ffn_norm);
            let mut inner = h.dot(&layer.ffn_in);
            inner.mapv_inplace(|a| a.max(0.0));
            x += &inner.dot(&layer.ffn_out);
        }
        Ok(x)
    }

    /// Forward pass with a single global temperature. Per-row statistics
    /// are always kept; raw rows only when `record` is set.
    pub fn forward(&self, tokens: &[TokenId], tau: f64, record: bool) -> Result<ForwardTrace> {
        let n_rows = self.num_layers() * self.num_heads() * tokens.len();
        let mut row_stats = Vec::with_capacity(n_rows);
        let mut logit_rows = record.then(|| Vec::with_capacity(n_rows));
        let hidden_states = self.forward_with(
            tokens,
            tau,
            &mut |id: RowId, logits: &[f64], stats: &AttentionStats| {
                row_stats.push(*stats);
                if let Some(rows) = logit_rows.as_mut() {
                    rows.push(
                        LogitVector::new(
                            logits.to_vec(),
                            Provenance::Encoder {
                                layer: id.layer,
                                head: id.head,
                                row: id.row,
                            },
                        )
                        .expect("finite logits"),
                    );
                }
            },
        )?;
        Ok(ForwardTrace {
            length: tokens.len(),
            row_stats,
            logit_rows,
            hidden_states,
        })
    }

    /// Pre-softmax rows of every sequence in (sequence, layer, head, row)
    /// order. Sequences are run lazily, one forward pass at a time.
    pub fn collect_logit_rows<'a>(
        &'a self,
        sequences: &'a [Vec<TokenId>],
        tau: f64,
    ) -> Result<impl Iterator<Item = Result<LogitVector>> + 'a> {
        if sequences.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(sequences.iter().flat_map(move |tokens| {
            let rows: Vec<Result<LogitVector>> = match self.forward(tokens, tau, true) {
                Ok(trace) => trace
                    .logit_rows
                    .expect("recorded")
                    .into_iter()
                    .map(Ok)
                    .collect(),
                Err(e) => vec![Err(e)],
            };
            rows
        }))
    }

    /// Calls `f` with every pre-softmax row of `layer`.
    pub fn for_each_layer_row<F: FnMut(&[f64])>(
        &self,
        tokens: &[TokenId],
        tau: f64,
        layer: usize,
        mut f: F,
    ) -> Result<()> {
        if layer >= self.num_layers() {
            return Err(Error::Precondition(format!(
                "layer {layer} out of range for {} layers",
                self.num_layers()
            )));
        }
        self.forward_with(
            tokens,
            tau,
            &mut |id: RowId, logits: &[f64], _: &AttentionStats| {
                if id.layer == layer {
                    f(logits)
                }
            },
        )?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    attn_norm: Vec<f64>,
    query: Vec<f64>,
    key: Vec<f64>,
    value: Vec<f64>,
    output: Vec<f64>,
    ffn_norm: Vec<f64>,
    ffn_in: Vec<f64>,
    ffn_out: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EncoderDoc {
    #[serde(flatten)]
    config: EncoderConfig,
    embedding: Vec<f64>,
    relative_attention_bias: Vec<Vec<f64>>,
    layers: Vec<LayerDoc>,
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn matrix(name: &str, data: Vec<f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let got = data.len();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|_| Error::Shape(format!("{name}: expected {rows}x{cols} values, got {got}")))
}

fn vector(name: &str, data: Vec<f64>, len: usize) -> Result<Array1<f64>> {
    if data.len() != len {
        return Err(Error::Shape(format!(
            "{name}: expected {len} values, got {}",
            data.len()
        )));
    }
    Ok(Array1::from(data))
}

impl EncoderWeights {
    /// Config fields plus flat row-major weight arrays.
    pub fn to_json(&self) -> Result<String> {
        let doc = EncoderDoc {
            config: self.config.clone(),
            embedding: flat(&self.embedding),
            relative_attention_bias: self
                .bias_tables
                .iter()
                .map(|t| t.values().to_vec())
                .collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    attn_norm: l.attn_norm.to_vec(),
                    query: flat(&l.query),
                    key: flat(&l.key),
                    value: flat(&l.value),
                    output: flat(&l.output),
                    ffn_norm: l.ffn_norm.to_vec(),
                    ffn_in: flat(&l.ffn_in),
                    ffn_out: flat(&l.ffn_out),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EncoderDoc = serde_json::from_str(text)?;
        let config = doc.config;
        config.validate()?;
        let d = config.d_model;
        if doc.relative_attention_bias.len() != config.num_heads {
            return Err(Error::Shape(format!(
                "expected {} bucket tables, got {}",
                config.num_heads,
                doc.relative_attention_bias.len()
            )));
        }
        if doc.layers.len() != config.num_layers {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                config.num_layers,
                doc.layers.len()
            )));
        }
        let bias_tables = doc
            .relative_attention_bias
            .into_iter()
            .enumerate()
            .map(|(h, v)| BucketTable::new(v, h))
            .collect::<Result<Vec<_>>>()?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                Ok(LayerWeights {
                    attn_norm: vector("attn_norm", l.attn_norm, d)?,
                    query: matrix("query", l.query, d, d)?,
                    key: matrix("key", l.key, d, d)?,
                    value: matrix("value", l.value, d, d)?,
                    output: matrix("output", l.output, d, d)?,
                    ffn_norm: vector("ffn_norm", l.ffn_norm, d)?,
                    ffn_in: matrix("ffn_in", l.ffn_in, d, config.d_ff)?,
                    ffn_out: matrix("ffn_out", l.ffn_out, config.d_ff, d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = Self {
            embedding: matrix("embedding", doc.embedding, config.vocab_size, d)?,
            config,
            bias_tables,
            layers,
        };
        weights.check_finite()?;
        Ok(weights)
    }

    fn check_finite(&self) -> Result<()> {
        let all_finite = |a: ArrayView1<f64>| a.iter().all(|v| v.is_finite());
        let ok = self.embedding.iter().all(|v| v.is_finite())
            && self.layers.iter().all(|l| {
                all_finite(l.attn_norm.view())
                    && all_finite(l.ffn_norm.view())
                    && [&l.query, &l.key, &l.value, &l.output, &l.ffn_in, &l.ffn_out]
                        .iter()
                        .all(|m| m.iter().all(|v| v.is_finite()))
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("weights must be finite".into()))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// Token sequences
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum SequenceLine {
    Tokens(Vec<TokenId>),
    Task { tokens: Vec<TokenId> },
}

/// Reads JSON-lines token sequences. Each non-blank line is either an
/// integer array or an object with a `tokens` array.
pub fn read_sequences<R: Read>(reader: R) -> Result<Vec<Vec<TokenId>>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SequenceLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        out.push(match parsed {
            SequenceLine::Tokens(t) | SequenceLine::Task { tokens: t } => t,
        });
    }
    Ok(out)
}

pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<Vec<TokenId>>> {
    read_sequences(std::fs::File::open(path)?)
}

pub fn sequences_to_jsonl(sequences: &[Vec<TokenId>]) -> Result<String> {
    let mut out = String::new();
    for seq in sequences {
        out.push_str(&serde_json::to_string(seq)?);
        out.push('\n');
    }
    Ok(out)
}

/// `count` sequences of i.i.d. uniform token ids below `vocab_size`.
pub fn random_sequences(
    count: usize,
    length: usize,
    vocab_size: usize,
    seed: u64,
) -> Vec<Vec<TokenId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..length)
                .map(|_| rng.random_range(0..vocab_size as TokenId))
                .collect()
        })
        .collect()
}
