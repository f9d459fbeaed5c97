//! T5 relative position bias.
//!
//! Each attention head owns 32 learnable scalars. The bias added to the
//! attention logit at `(m, n)` is the table entry selected by the bucketed
//! offset `m - n`:
//!
//! | offset `d = m - n` | bucket                                   |
//! |--------------------|------------------------------------------|
//! | `0 <= d < 8`       | `d`                                      |
//! | `-8 < d < 0`       | `-d + 16`                                |
//! | `d >= 8`           | `min(15, 8 + floor(ln(d/8)/ln(16) * 8))`  |
//! | `d <= -8`          | `min(31, 24 + floor(ln(-d/8)/ln(16) * 8))` |
//!
//! The formula as written never yields bucket 16: non-negative offsets land
//! in `0..=15` and negative offsets in `17..=31`. Reference implementations
//! that split the buckets symmetrically differ here; this module keeps the
//! formula verbatim and leaves `values[16]` unreachable.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::format::{parse_f64, parse_usize, sig6};
use crate::{Error, Result};

pub const NUM_BUCKETS: usize = 32;

/// Offsets below this magnitude get their own bucket.
const EXACT_RANGE: i64 = 8;
/// Log-spaced buckets saturate at this distance.
const MAX_DISTANCE: f64 = 128.0;

/// Bucket index for the query/key pair `(m, n)`.
pub fn bucket_index(m: usize, n: usize) -> usize {
    bucket_for_offset(m as i64 - n as i64)
}

/// Bucket index for a signed relative offset `m - n`.
pub fn bucket_for_offset(offset: i64) -> usize {
    if (0..EXACT_RANGE).contains(&offset) {
        offset as usize
    } else if offset < 0 && offset > -EXACT_RANGE {
        (16 - offset) as usize
    } else if offset >= EXACT_RANGE {
        (8 + log_bucket(offset)).min(15)
    } else {
        (24 + log_bucket(-offset)).min(31)
    }
}

fn log_bucket(distance: i64) -> usize {
    let exact = EXACT_RANGE as f64;
    let ratio = (distance as f64 / exact).ln() / (MAX_DISTANCE / exact).ln();
    (ratio * exact).floor() as usize
}

/// The 32 bias values of one attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    values: Vec<f64>,
    head_id: usize,
}

impl BucketTable {
    pub fn new(values: Vec<f64>, head_id: usize) -> Result<Self> {
        if values.len() != NUM_BUCKETS {
            return Err(Error::InvalidBucketTable(format!(
                "expected {NUM_BUCKETS} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidBucketTable(format!(
                "value at bucket {i} is not finite"
            )));
        }
        Ok(Self { values, head_id })
    }

    pub fn zeros(head_id: usize) -> Self {
        Self {
            values: vec![0.0; NUM_BUCKETS],
            head_id,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn head_id(&self) -> usize {
        self.head_id
    }

    /// Bias for the relative offset `m - n`.
    #[inline]
    pub fn bias_for_offset(&self, offset: i64) -> f64 {
        self.values[bucket_for_offset(offset)]
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Dense `L x L` bias matrix of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatrix {
    entries: Array2<f64>,
}

impl BiasMatrix {
    pub fn length(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.entries[[m, n]]
    }
}

pub fn build_bias_matrix(table: &BucketTable, length: usize) -> Result<BiasMatrix> {
    if length == 0 {
        return Err(Error::EmptyLength);
    }
    let entries =
        Array2::from_shape_fn((length, length), |(m, n)| table.values[bucket_index(m, n)]);
    Ok(BiasMatrix { entries })
}

/// Bias of one head indexed by offset rather than by `(m, n)`.
///
/// Every row of a bias matrix is a window onto the same `2L - 1` values,
/// so the encoder keeps this Toeplitz form instead of the dense matrix.
#[derive(Debug, Clone)]
pub struct OffsetBias {
    length: usize,
    by_offset: Vec<f64>,
}

impl OffsetBias {
    pub fn new(table: &BucketTable, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::EmptyLength);
        }
        let span = length as i64 - 1;
        let by_offset = (-span..=span)
            .rev()
            .map(|d| table.bias_for_offset(d))
            .collect();
        Ok(Self { length, by_offset })
    }

    /// Row `m` of the bias matrix: biases for keys `n = 0..L`.
    pub fn row(&self, m: usize) -> &[f64] {
        // stored by descending offset; row m starts at offset m
        let start = self.length - 1 - m;
        &self.by_offset[start..start + self.length]
    }
}

/// Row `m` of the bias matrix: the bias seen by query `m` at every key `n`.
pub fn bias_profile(table: &BucketTable, m: usize, length: usize) -> Result<Vec<f64>> {
    if m >= length {
        return Err(Error::IndexOutOfRange {
            position: m,
            length,
        });
    }
    Ok((0..length)
        .map(|n| table.values[bucket_index(m, n)])
        .collect())
}

/// CSV with columns `n,bias`.
pub fn profile_to_csv(profile: &[f64]) -> String {
    let mut out = String::from("n,bias\n");
    for (n, b) in profile.iter().enumerate() {
        out.push_str(&format!("{n},{}\n", sig6(*b)));
    }
    out
}

pub fn profile_from_csv(text: &str) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut profile = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let n = parse_usize(&record[0])?;
        if n != i {
            return Err(Error::Parse(format!("expected n = {i}, found {n}")));
        }
        profile.push(parse_f64(&record[1])?);
    }
    Ok(profile)
}

#[derive(Serialize, Deserialize)]
struct BucketTableDoc {
    relative_attention_bias: Vec<Vec<f64>>,
}

/// Serializes per-head tables as `{"relative_attention_bias": [[32 numbers], ...]}`.
pub fn tables_to_json(tables: &[BucketTable]) -> Result<String> {
    let doc = BucketTableDoc {
        relative_attention_bias: tables.iter().map(|t| t.values.clone()).collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Reads the `relative_attention_bias` key from any JSON document that has
/// it, including a full encoder weights file.
pub fn tables_from_json(text: &str) -> Result<Vec<BucketTable>> {
    let doc: BucketTableDoc = serde_json::from_str(text)?;
    doc.relative_attention_bias
        .into_iter()
        .enumerate()
        .map(|(head, values)| BucketTable::new(values, head))
        .collect()
}
