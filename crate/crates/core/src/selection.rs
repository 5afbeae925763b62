//! Choosing which weight columns become trainable.
//!
//! Randomness comes from ChaCha8 keyed by a 64-bit seed: the 32-byte key is
//! four consecutive SplitMix64 outputs of the seed, little-endian. Bounded
//! integers are drawn by rejection from `next_u64` (see [`uniform_below`]),
//! so an index set depends only on `(d_in, r, seed)` and can be reproduced
//! outside this crate.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{IndexSet, Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    WeightNorm,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub rank: usize,
    pub seed: u64,
    /// Gradient-accumulation steps before a gradient-based selection.
    pub warmup_steps: usize,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank", "must be at least 1"));
        }
        if self.warmup_steps == 0 {
            return Err(Error::config("selection.warmup_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// One SplitMix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream for `seed`.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed for the `ordinal`-th consumer (e.g. a layer) of a base seed.
pub fn derive_seed(base: u64, ordinal: u64) -> u64 {
    let mut state = base ^ ordinal.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut state)
}

/// Uniform integer in `0..n` by rejection: draws `x = next_u64()` until
/// `x < 2^64 - (2^64 mod n)` and returns `x mod n`.
pub fn uniform_below(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0, "uniform_below(0)");
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n + 1) % n;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return (x % n) as usize;
        }
    }
}

fn check_rank(r: usize, domain: usize) -> Result<()> {
    if r == 0 || r > domain {
        return Err(Error::Argument(format!(
            "rank {r} must lie in 1..={domain}"
        )));
    }
    Ok(())
}

/// `r` distinct columns of `0..d_in`, uniform without replacement (partial
/// Fisher–Yates), returned sorted.
pub fn select_random(d_in: usize, r: usize, seed: u64) -> Result<IndexSet> {
    check_rank(r, d_in)?;
    if r == d_in {
        return IndexSet::full(d_in);
    }
    let mut rng = seeded_rng(seed);
    let mut pool: Vec<usize> = (0..d_in).collect();
    for i in 0..r {
        let j = i + uniform_below(&mut rng, d_in - i);
        pool.swap(i, j);
    }
    pool.truncate(r);
    IndexSet::from_unsorted(pool, d_in)
}

/// Indices of the `r` largest scores; equal scores prefer the lower index.
fn top_r(scores: &[f64], r: usize) -> Result<IndexSet> {
    check_rank(r, scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(r);
    IndexSet::from_unsorted(order, scores.len())
}

/// The `r` columns of `w` with the largest L2 norm.
pub fn select_by_weight_norm<T: Real>(w: &Matrix<T>, r: usize) -> Result<IndexSet> {
    let mut norms = vec![0.0f64; w.cols()];
    for i in 0..w.rows() {
        for (acc, v) in norms.iter_mut().zip(w.row(i)) {
            let v = v.as_f64();
            *acc += v * v;
        }
    }
    top_r(&norms, r)
}

/// Per-column sums of squared gradient norms over warmup steps, for one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradStats {
    pub column_sq_norms: Vec<f64>,
    pub steps_accumulated: usize,
}

impl GradStats {
    pub fn new(d_in: usize) -> Self {
        Self {
            column_sq_norms: vec![0.0; d_in],
            steps_accumulated: 0,
        }
    }

    pub fn accumulate<T: Real>(&mut self, g_w: &Matrix<T>) -> Result<()> {
        if g_w.cols() != self.column_sq_norms.len() {
            return Err(Error::shape(
                "accumulate_grad_stats",
                (g_w.rows(), self.column_sq_norms.len()),
                g_w.shape(),
            ));
        }
        for i in 0..g_w.rows() {
            for (acc, v) in self.column_sq_norms.iter_mut().zip(g_w.row(i)) {
                let v = v.as_f64();
                *acc += v * v;
            }
        }
        self.steps_accumulated += 1;
        Ok(())
    }
}

/// Adds each column's squared norm of `g_w` to `stats`. Weights must not be
/// updated while statistics are being gathered.
pub fn accumulate_grad_stats<T: Real>(mut stats: GradStats, g_w: &Matrix<T>) -> Result<GradStats> {
    stats.accumulate(g_w)?;
    Ok(stats)
}

/// The `r` columns with the largest accumulated gradient.
pub fn select_by_grad(stats: &GradStats, r: usize) -> Result<IndexSet> {
    if stats.steps_accumulated == 0 {
        return Err(Error::State(
            "gradient-based selection needs at least one accumulated step".into(),
        ));
    }
    top_r(&stats.column_sq_norms, r)
}
