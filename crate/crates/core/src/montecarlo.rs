//! Seeded Monte-Carlo estimates of the same tail quantities, for `n` beyond
//! the reach of enumeration.
//!
//! Signs come from a counter-based stream: ChaCha8 keyed by the seed, with
//! sample `j` reading the words starting at position `j * words_per_sample`.
//! Any sub-range of sample indices can therefore be generated independently,
//! and estimates are merged from fixed 4096-sample chunks in index order, so
//! the result does not depend on how many workers ran the chunks.

use std::ops::Range;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::family::ProcessFamily;
use crate::numeric::NeumaierSum;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

const CHUNK: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("at least one sample is required")]
    ZeroSamples,
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub point_estimate: f64,
    pub ci95: (f64, f64),
    pub samples: u64,
    pub seed: u64,
}

impl McEstimate {
    fn from_count(count: u64, samples: u64, seed: u64) -> Self {
        McEstimate {
            point_estimate: count as f64 / samples as f64,
            ci95: wilson_interval(count, samples, Z95),
            samples,
            seed,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci95.0 <= p && p <= self.ci95.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub n: usize,
    pub thresholds: Vec<f64>,
    pub p_x: Vec<McEstimate>,
    pub p_y: Vec<McEstimate>,
    /// Sample mean of `X` with a normal-approximation 95% interval.
    pub ex: f64,
    pub ex_ci95: (f64, f64),
    pub samples: u64,
    pub seed: u64,
}

/// Counts accumulated over a range of sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct McPartial {
    pub samples: u64,
    pub cx: Vec<u64>,
    pub cy: Vec<u64>,
    sum_x: NeumaierSum,
    sum_x2: NeumaierSum,
}

impl McPartial {
    fn empty(k: usize) -> Self {
        McPartial {
            samples: 0,
            cx: vec![0; k],
            cy: vec![0; k],
            sum_x: NeumaierSum::new(),
            sum_x2: NeumaierSum::new(),
        }
    }

    pub fn merge(&mut self, other: &McPartial) {
        self.samples += other.samples;
        self.cx.iter_mut().zip(&other.cx).for_each(|(a, b)| *a += b);
        self.cy.iter_mut().zip(&other.cy).for_each(|(a, b)| *a += b);
        self.sum_x.merge(&other.sum_x);
        self.sum_x2.merge(&other.sum_x2);
    }
}

/// Path evaluator that only touches coefficients that change between
/// consecutive merged times.
struct SparsePaths {
    start: Vec<f64>,
    deltas: Vec<Vec<(usize, f64)>>,
}

impl SparsePaths {
    fn new(fam: &ProcessFamily) -> Self {
        let m = fam.merged_times().len();
        let deltas = (1..m)
            .map(|j| {
                fam.coeffs(j)
                    .iter()
                    .zip(fam.coeffs(j - 1))
                    .enumerate()
                    .filter(|(_, (a, b))| a != b)
                    .map(|(i, (a, b))| (i, a - b))
                    .collect()
            })
            .collect();
        SparsePaths { start: fam.coeffs(0).to_vec(), deltas }
    }

    /// Returns `(X, Y)` for the sign words `signs` (bit `i` of the whole
    /// bitstring set iff `eps_i = +1`).
    #[inline]
    fn eval(&self, signs: &[u64]) -> (f64, f64) {
        let sign = |i: usize| if signs[i / 64] >> (i % 64) & 1 == 1 { 1.0 } else { -1.0 };
        let mut s: f64 = self.start.iter().enumerate().map(|(i, a)| a * sign(i)).sum();
        let mut x = s;
        for d in &self.deltas {
            for &(i, da) in d {
                s += da * sign(i);
            }
            x = x.max(s);
        }
        (x, s)
    }
}

fn words_per_sample(n: usize) -> usize {
    n.div_ceil(64)
}

/// Runs samples `range` of the stream keyed by `seed`.
pub fn sample_range(
    fam: &ProcessFamily,
    thresholds: &[f64],
    seed: u64,
    range: Range<u64>,
) -> McPartial {
    let paths = SparsePaths::new(fam);
    let words = words_per_sample(fam.n());
    let mut part = McPartial::empty(thresholds.len());
    if range.is_empty() {
        return part;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // set_word_pos counts 32-bit words
    rng.set_word_pos(u128::from(range.start) * 2 * words as u128);
    let mut buf = vec![0u64; words];
    for _ in range {
        for w in buf.iter_mut() {
            *w = rng.next_u64();
        }
        let (x, y) = paths.eval(&buf);
        for (c, &u) in part.cx.iter_mut().zip(thresholds) {
            *c += u64::from(x >= u);
        }
        for (c, &u) in part.cy.iter_mut().zip(thresholds) {
            *c += u64::from(y >= u);
        }
        part.sum_x.add(x);
        part.sum_x2.add(x * x);
        part.samples += 1;
    }
    part
}

/// Merges chunk partials in index order. Chunk boundaries depend only on
/// `samples`.
fn run_chunked(fam: &ProcessFamily, thresholds: &[f64], samples: u64, seed: u64) -> McPartial {
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<McPartial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            sample_range(fam, thresholds, seed, lo..(lo + CHUNK).min(samples))
        })
        .collect();
    let mut acc = McPartial::empty(thresholds.len());
    for p in &parts {
        acc.merge(p);
    }
    acc
}

pub fn estimate_tails(
    fam: &ProcessFamily,
    thresholds: &[f64],
    samples: u64,
    seed: u64,
) -> Result<McReport, McError> {
    if samples == 0 {
        return Err(McError::ZeroSamples);
    }
    let acc = run_chunked(fam, thresholds, samples, seed);
    Ok(report_from(fam.n(), thresholds, &acc, seed))
}

fn report_from(n: usize, thresholds: &[f64], acc: &McPartial, seed: u64) -> McReport {
    let s = acc.samples;
    let nf = s as f64;
    let mean = acc.sum_x.value() / nf;
    let var = if s > 1 {
        ((acc.sum_x2.value() - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    let half = Z95 * (var / nf).sqrt();
    McReport {
        n,
        thresholds: thresholds.to_vec(),
        p_x: acc.cx.iter().map(|&c| McEstimate::from_count(c, s, seed)).collect(),
        p_y: acc.cy.iter().map(|&c| McEstimate::from_count(c, s, seed)).collect(),
        ex: mean,
        ex_ci95: (mean - half, mean + half),
        samples: s,
        seed,
    }
}
