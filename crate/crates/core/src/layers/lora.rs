use rand::Rng;

use super::cache::{ActivationCache, CacheTag};
use super::linear::{cached, check_grad, LinearParams, X_IN};
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Matrix, Real};

const X_MID: &str = "x_mid";

/// Low-rank adapter `scale · B A` added in parallel to a frozen weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoRAParams<T: Real = f64> {
    /// `r × d_in`
    pub a: Matrix<T>,
    /// `d_out × r`
    pub b: Matrix<T>,
    pub scale: T,
}

impl<T: Real> LoRAParams<T> {
    /// Fresh adapter: `A ~ U(-1/√d_in, 1/√d_in)`, `B = 0`, `scale = alpha / r`.
    pub fn init(d_in: usize, d_out: usize, rank: usize, alpha: f64, rng: &mut impl Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Argument("LoRA rank must be at least 1".into()));
        }
        let bound = 1.0 / (d_in as f64).sqrt();
        let a = Matrix::from_fn(rank, d_in, |_, _| T::from_f64(rng.random_range(-bound..bound)));
        Self::from_parts(a, Matrix::zeros(d_out, rank), T::from_f64(alpha / rank as f64))
    }

    pub fn from_parts(a: Matrix<T>, b: Matrix<T>, scale: T) -> Result<Self> {
        if a.rows() == 0 || a.rows() != b.cols() {
            return Err(Error::shape("LoRAParams", (b.rows(), a.rows()), b.shape()));
        }
        if !(scale > T::zero() && scale.is_finite()) {
            return Err(Error::Argument("LoRA scale must be positive".into()));
        }
        Ok(Self { a, b, scale })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }
}

/// Gradients produced by [`lora_backward`]. The frozen base weight gets none.
#[derive(Debug, Clone)]
pub struct LoraGrads<T: Real = f64> {
    pub g_in: Matrix<T>,
    pub g_a: Matrix<T>,
    pub g_b: Matrix<T>,
}

fn check_adapter<T: Real>(base: &LinearParams<T>, lp: &LoRAParams<T>, op: &'static str) -> Result<()> {
    if lp.a.cols() != base.d_in() {
        return Err(Error::shape(op, (lp.rank(), base.d_in()), lp.a.shape()));
    }
    if lp.b.rows() != base.d_out() {
        return Err(Error::shape(op, (base.d_out(), lp.rank()), lp.b.shape()));
    }
    Ok(())
}

/// `X_out = W X_in + scale · B (A X_in)`; train mode caches `X_in` and `X_mid = A X_in`.
pub fn lora_forward<T: Real>(
    base: &LinearParams<T>,
    lp: &LoRAParams<T>,
    x_in: &Matrix<T>,
    train: bool,
) -> Result<(Matrix<T>, ActivationCache<T>)> {
    check_adapter(base, lp, "lora_forward")?;
    if x_in.rows() != base.d_in() {
        return Err(Error::shape("lora_forward", (base.d_in(), x_in.cols()), x_in.shape()));
    }
    let base_out = matmul(&base.w, x_in)?;
    let x_mid = matmul(&lp.a, x_in)?;
    let adapter_out = matmul(&lp.b, &x_mid)?.scale(lp.scale)?;
    let x_out = base_out.add(&adapter_out)?;
    let mut cache = ActivationCache::empty(CacheTag::Lora);
    if train {
        cache.store(X_IN, x_in.clone());
        cache.store(X_MID, x_mid);
    }
    Ok((x_out, cache))
}

/// Gradients of the adapter and of the layer input. With
/// `∇X_mid = scale · Bᵀ ∇X_out`:
/// `∇X_in = Wᵀ ∇X_out + Aᵀ ∇X_mid`, `∇B = scale · ∇X_out X_midᵀ`, `∇A = ∇X_mid X_inᵀ`.
pub fn lora_backward<T: Real>(
    base: &LinearParams<T>,
    lp: &LoRAParams<T>,
    g_out: &Matrix<T>,
    cache: &ActivationCache<T>,
) -> Result<LoraGrads<T>> {
    check_adapter(base, lp, "lora_backward")?;
    let x_in = cached(cache, CacheTag::Lora, X_IN)?;
    let x_mid = cached(cache, CacheTag::Lora, X_MID)?;
    check_grad(g_out, base.d_out(), x_in.cols(), "lora_backward")?;

    let g_mid = matmul_tn(&lp.b, g_out)?.scale(lp.scale)?;
    let g_in = matmul_tn(&base.w, g_out)?.add(&matmul_tn(&lp.a, &g_mid)?)?;
    let g_b = matmul_nt(g_out, x_mid)?.scale(lp.scale)?;
    let g_a = matmul_nt(&g_mid, x_in)?;
    Ok(LoraGrads { g_in, g_a, g_b })
}

/// Folds the adapter into the base weight: `W + scale · B A`.
pub fn lora_merge<T: Real>(base: &LinearParams<T>, lp: &LoRAParams<T>) -> Result<LinearParams<T>> {
    check_adapter(base, lp, "lora_merge")?;
    let delta = matmul(&lp.b, &lp.a)?.scale(lp.scale)?;
    Ok(LinearParams::new(base.w.add(&delta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::linear::linear_forward;
    use crate::tensor::matmul_tn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn test_fresh_adapter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = LinearParams::new(random(5, 4, &mut rng));
        let lp = LoRAParams::<f64>::init(4, 5, 2, 32.0, &mut rng).unwrap();
        assert_eq!(lp.scale, 16.0);
        assert_eq!(lp.b, Matrix::zeros(5, 2));
        let x = random(4, 3, &mut rng);
        let (y_lora, _) = lora_forward(&base, &lp, &x, true).unwrap();
        let (y_base, _) = linear_forward(&base, &x, false).unwrap();
        assert!(y_lora.bitwise_eq(&y_base));
        assert!(LoRAParams::<f64>::init(4, 5, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn test_forward_hand_example() {
        let base = LinearParams::new(Matrix::zeros(2, 2));
        let lp = LoRAParams::from_parts(m(&[&[1.0, 0.0]]), m(&[&[2.0], &[0.0]]), 1.0).unwrap();
        let (y, cache) = lora_forward(&base, &lp, &m(&[&[3.0], &[9.0]]), true).unwrap();
        assert_eq!(cache.get(X_MID).unwrap(), &m(&[&[3.0]]));
        assert_eq!(y, m(&[&[6.0], &[0.0]]));
    }

    #[test]
    fn test_cache_bytes() {
        let base = LinearParams::new(Matrix::<f64>::zeros(1, 4096));
        let lp = LoRAParams::from_parts(Matrix::zeros(8, 4096), Matrix::zeros(1, 8), 1.0).unwrap();
        let (_, cache) = lora_forward(&base, &lp, &Matrix::zeros(4096, 1), true).unwrap();
        assert_eq!(cache.bytes(), 32832);
        let (_, cache) = lora_forward(&base, &lp, &Matrix::zeros(4096, 1), false).unwrap();
        assert_eq!(cache.bytes(), 0);
    }

    #[test]
    fn test_zero_b_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = LinearParams::new(random(3, 4, &mut rng));
        let lp = LoRAParams::<f64>::init(4, 3, 2, 4.0, &mut rng).unwrap();
        let x = random(4, 2, &mut rng);
        let g = random(3, 2, &mut rng);
        let (_, cache) = lora_forward(&base, &lp, &x, true).unwrap();
        let grads = lora_backward(&base, &lp, &g, &cache).unwrap();
        assert_eq!(grads.g_a, Matrix::zeros(2, 4));
        assert!(grads.g_in.bitwise_eq(&matmul_tn(&base.w, &g).unwrap()));
        let x_mid = cache.get(X_MID).unwrap();
        let expect_b = matmul_nt(&g, x_mid).unwrap().scale(lp.scale).unwrap();
        assert!(grads.g_b.bitwise_eq(&expect_b));
    }

    #[test]
    fn test_scale_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = LinearParams::new(random(3, 4, &mut rng));
        let lp = LoRAParams::from_parts(random(2, 4, &mut rng), random(3, 2, &mut rng), 0.75).unwrap();
        let lp2 = LoRAParams { scale: 1.5, ..lp.clone() };
        let x = random(4, 5, &mut rng);
        let g = random(3, 5, &mut rng);
        let (_, c1) = lora_forward(&base, &lp, &x, true).unwrap();
        let (_, c2) = lora_forward(&base, &lp2, &x, true).unwrap();
        let g1 = lora_backward(&base, &lp, &g, &c1).unwrap();
        let g2 = lora_backward(&base, &lp2, &g, &c2).unwrap();
        assert!(g2.g_a.bitwise_eq(&g1.g_a.scale(2.0).unwrap()));
        assert!(g2.g_b.bitwise_eq(&g1.g_b.scale(2.0).unwrap()));
        let base_part = matmul_tn(&base.w, &g).unwrap();
        let ad1 = g1.g_in.sub(&base_part).unwrap();
        let ad2 = g2.g_in.sub(&base_part).unwrap();
        assert!(ad2.max_abs_diff(&ad1.scale(2.0).unwrap()) <= 1e-14);
    }

    #[test]
    fn test_backward_requires_cache() {
        let base = LinearParams::new(Matrix::<f64>::zeros(2, 2));
        let lp = LoRAParams::from_parts(Matrix::zeros(1, 2), Matrix::zeros(2, 1), 1.0).unwrap();
        let (_, cache) = lora_forward(&base, &lp, &Matrix::zeros(2, 1), false).unwrap();
        assert!(matches!(
            lora_backward(&base, &lp, &Matrix::zeros(2, 1), &cache),
            Err(Error::State(_))
        ));
        let (_, full_cache) = linear_forward(&base, &Matrix::zeros(2, 1), true).unwrap();
        assert!(matches!(
            lora_backward(&base, &lp, &Matrix::zeros(2, 1), &full_cache),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn test_merge() {
        let base = LinearParams::new(Matrix::zeros(2, 2));
        let lp = LoRAParams::from_parts(m(&[&[1.0, 1.0]]), m(&[&[1.0], &[1.0]]), 1.0).unwrap();
        assert_eq!(lora_merge(&base, &lp).unwrap().w, m(&[&[1.0, 1.0], &[1.0, 1.0]]));

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base = LinearParams::new(random(8, 8, &mut rng));
        let fresh = LoRAParams::<f64>::init(8, 8, 2, 16.0, &mut rng).unwrap();
        assert!(lora_merge(&base, &fresh).unwrap().w.bitwise_eq(&base.w));

        let lp = LoRAParams::from_parts(random(2, 8, &mut rng), random(8, 2, &mut rng), 8.0).unwrap();
        let merged = lora_merge(&base, &lp).unwrap();
        let x = random(8, 3, &mut rng);
        let (y_m, _) = linear_forward(&merged, &x, false).unwrap();
        let (y_l, _) = lora_forward(&base, &lp, &x, false).unwrap();
        assert!(y_m.max_abs_diff(&y_l) <= 1e-10);
    }
}
