use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Sixteen NormalFloat levels in `[-1, 1]`, ascending, containing an exact 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NF4Codebook {
    levels: [f64; 16],
}

/// Index of the exact-zero level.
pub const NF4_ZERO_CODE: u8 = 7;

impl NF4Codebook {
    pub fn levels(&self) -> &[f64; 16] {
        &self.levels
    }

    pub fn level(&self, code: u8) -> f64 {
        self.levels[code as usize]
    }

    /// Largest distance between adjacent levels.
    pub fn max_gap(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(0.0, f64::max)
    }

    /// Nearest level to `x`; on an exact tie the lower index wins.
    pub fn nearest(&self, x: f64) -> u8 {
        let mut best = 0u8;
        let mut best_dist = (x - self.levels[0]).abs();
        for (k, &level) in self.levels.iter().enumerate().skip(1) {
            let d = (x - level).abs();
            if d < best_dist {
                best = k as u8;
                best_dist = d;
            }
        }
        best
    }
}

/// The NF4 codebook, built from standard-normal quantiles.
///
/// With `δ = ½((1 − 1/30) + (1 − 1/32))`, the positive half is
/// `Φ⁻¹(p)` at the first 8 of 9 evenly spaced `p` from `δ` down to ½, the
/// negative half is `−Φ⁻¹(p)` at the first 7 of 8 evenly spaced `p` over the
/// same range, a zero level is added and everything is divided by the largest
/// value. This yields 7 negative levels, 0, and 8 positive levels, with both
/// ends at exactly ±1.
pub fn nf4_codebook() -> &'static NF4Codebook {
    static CODEBOOK: OnceLock<NF4Codebook> = OnceLock::new();
    CODEBOOK.get_or_init(|| {
        let normal = Normal::standard();
        let offset = 0.5 * ((1.0 - 1.0 / 30.0) + (1.0 - 1.0 / 32.0));
        let linspace = |count: usize| -> Vec<f64> {
            let step = (0.5 - offset) / (count - 1) as f64;
            (0..count - 1).map(|i| offset + i as f64 * step).collect()
        };
        let mut values: Vec<f64> = linspace(9).into_iter().map(|p| normal.inverse_cdf(p)).collect();
        values.extend(linspace(8).into_iter().map(|p| -normal.inverse_cdf(p)));
        values.push(0.0);
        values.sort_by(f64::total_cmp);
        let max = values[15];
        let mut levels = [0.0; 16];
        for (dst, v) in levels.iter_mut().zip(&values) {
            *dst = v / max;
        }
        // the extremes are ±Φ⁻¹(δ)/Φ⁻¹(δ); pin them so they are exact
        levels[0] = -1.0;
        levels[15] = 1.0;
        NF4Codebook { levels }
    })
}

/// Absmax scale as stored: the smallest `f32` not below `absmax`.
fn stored_scale(absmax: f64) -> f32 {
    let s = absmax as f32;
    if (s as f64) < absmax {
        s.next_up()
    } else {
        s
    }
}

/// Quantizes one block. Returns one code per value (not packed) and the
/// 32-bit absmax scale. Each code is the nearest level to `value / scale`;
/// an all-zero block gets scale 0 and the zero code everywhere.
pub fn quantize_block<T: Real>(vals: &[T]) -> (Vec<u8>, f32) {
    let absmax = vals.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    if absmax == 0.0 {
        return (vec![NF4_ZERO_CODE; vals.len()], 0.0);
    }
    let scale = stored_scale(absmax);
    let s = scale as f64;
    let book = nf4_codebook();
    let codes = vals.iter().map(|v| book.nearest(v.as_f64() / s)).collect();
    (codes, scale)
}

/// `codebook[code] · absmax` for each code.
pub fn dequantize_block<T: Real>(codes: &[u8], absmax: f32) -> Result<Vec<T>> {
    let book = nf4_codebook();
    codes
        .iter()
        .map(|&c| {
            if c > 15 {
                Err(Error::Decode(format!("invalid 4-bit code {c}")))
            } else {
                Ok(T::from_f64(book.level(c) * absmax as f64))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn test_codebook_shape() {
        let book = nf4_codebook();
        let levels = book.levels();
        assert_eq!(levels[0], -1.0);
        assert_eq!(levels[15], 1.0);
        assert_eq!(levels.iter().filter(|&&v| v == 0.0).count(), 1);
        assert_eq!(levels[NF4_ZERO_CODE as usize], 0.0);
        assert!(levels.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn test_nearest_tie_goes_low() {
        let book = nf4_codebook();
        let mid = 0.5 * (book.level(7) + book.level(8));
        assert_eq!(book.nearest(mid), 7);
        assert_eq!(book.nearest(2.0), 15);
        assert_eq!(book.nearest(-2.0), 0);
    }

    #[test]
    fn test_zero_block() {
        let (codes, s) = quantize_block(&[0.0f64; 5]);
        assert_eq!(s, 0.0);
        assert!(codes.iter().all(|&c| c == NF4_ZERO_CODE));
        let back: Vec<f64> = dequantize_block(&codes, 0.0).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn test_absmax_element_exact() {
        let vals = [0.1, -0.75, 0.3, 0.2];
        let (codes, s) = quantize_block(&vals);
        assert_eq!(s, 0.75);
        let back: Vec<f64> = dequantize_block(&codes, s).unwrap();
        assert_eq!(back[1], -0.75);
    }

    #[test]
    fn test_constant_block_exact() {
        for v in [0.625f64, -2.5, 3.0e-3f32 as f64] {
            let (codes, s) = quantize_block(&[v; 7]);
            let back: Vec<f64> = dequantize_block(&codes, s).unwrap();
            assert!(back.iter().all(|&b| b == v), "{v}: {back:?}");
        }
    }

    #[test]
    fn test_error_bound_random_blocks() {
        let gap = nf4_codebook().max_gap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let scale: f64 = rng.random_range(1e-3..10.0);
            let vals: Vec<f64> = (0..64).map(|_| rng.random_range(-scale..scale)).collect();
            let (codes, s) = quantize_block(&vals);
            let back: Vec<f64> = dequantize_block(&codes, s).unwrap();
            for (v, b) in vals.iter().zip(&back) {
                assert!((v - b).abs() <= s as f64 * gap / 2.0);
            }
        }
    }

    #[test]
    fn test_requantize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let all_codes: Vec<u8> = (0..16).collect();
        for _ in 0..100 {
            let scale = rng.random_range(1e-4f32..1e4);
            let vals: Vec<f64> = dequantize_block(&all_codes, scale).unwrap();
            let (codes, s) = quantize_block(&vals);
            assert_eq!(codes, all_codes);
            assert_eq!(s, scale);
        }
    }

    #[test]
    fn test_invalid_code() {
        assert!(matches!(dequantize_block::<f64>(&[3, 16], 1.0), Err(Error::Decode(_))));
    }
}
