use super::cache::{ActivationCache, CacheTag};
use super::linear::{cached, check_grad};
use crate::error::{Error, Result};
use crate::tensor::{gather_rows, matmul, matmul_nt, matmul_tn, IndexSet, Matrix, Real};

const X_IN_PARTIAL: &str = "x_in_partial";

/// A weight whose columns at `idx` are trainable; the rest stay frozen.
///
/// `idx` is fixed at construction and never changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct PaCAParams<T: Real = f64> {
    pub(crate) w: Matrix<T>,
    idx: IndexSet,
}

impl<T: Real> PaCAParams<T> {
    pub fn new(w: Matrix<T>, idx: IndexSet) -> Result<Self> {
        if idx.domain() != w.cols() {
            return Err(Error::Argument(format!(
                "index set domain {} does not match d_in {}",
                idx.domain(),
                w.cols()
            )));
        }
        Ok(Self { w, idx })
    }

    pub fn w(&self) -> &Matrix<T> {
        &self.w
    }

    pub fn idx(&self) -> &IndexSet {
        &self.idx
    }

    pub fn rank(&self) -> usize {
        self.idx.len()
    }

    pub fn into_inner(self) -> (Matrix<T>, IndexSet) {
        (self.w, self.idx)
    }
}

/// Same product as the dense layer; train mode caches only the input rows at `idx`.
pub fn paca_forward<T: Real>(
    pp: &PaCAParams<T>,
    x_in: &Matrix<T>,
    train: bool,
) -> Result<(Matrix<T>, ActivationCache<T>)> {
    if pp.w.cols() != x_in.rows() {
        return Err(Error::shape(
            "paca_forward",
            (pp.w.cols(), x_in.cols()),
            x_in.shape(),
        ));
    }
    let x_out = matmul(&pp.w, x_in)?;
    let mut cache = ActivationCache::empty(CacheTag::Paca);
    if train {
        cache.store(X_IN_PARTIAL, gather_rows(x_in, &pp.idx)?);
    }
    Ok((x_out, cache))
}

/// Returns `(∇X_in, ∇P) = (Wᵀ ∇X_out, ∇X_out ᵖX_inᵀ)` with the full `W` in
/// the input gradient and `∇P` of shape `d_out × r`.
pub fn paca_backward<T: Real>(
    pp: &PaCAParams<T>,
    g_out: &Matrix<T>,
    cache: &ActivationCache<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let x_part = cached(cache, CacheTag::Paca, X_IN_PARTIAL)?;
    check_grad(g_out, pp.w.rows(), x_part.cols(), "paca_backward")?;
    let g_in = matmul_tn(&pp.w, g_out)?;
    let g_p = matmul_nt(g_out, x_part)?;
    Ok((g_in, g_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::linear::{linear_backward, linear_forward, LinearParams};
    use crate::tensor::gather_cols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn test_forward_matches_dense_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random(6, 5, &mut rng);
        let x = random(5, 4, &mut rng);
        let pp = PaCAParams::new(w.clone(), IndexSet::new(vec![1, 3], 5).unwrap()).unwrap();
        let (y_p, _) = paca_forward(&pp, &x, true).unwrap();
        let (y_l, _) = linear_forward(&LinearParams::new(w), &x, true).unwrap();
        assert!(y_p.bitwise_eq(&y_l));
    }

    #[test]
    fn test_cache_bytes() {
        let pp = PaCAParams::new(
            Matrix::<f64>::zeros(1, 4096),
            IndexSet::new((0..8).map(|i| i * 500).collect(), 4096).unwrap(),
        )
        .unwrap();
        let (_, cache) = paca_forward(&pp, &Matrix::zeros(4096, 1), true).unwrap();
        assert_eq!(cache.bytes(), 64);
        let (_, cache) = paca_forward(&pp, &Matrix::zeros(4096, 4), true).unwrap();
        assert_eq!(super::super::activation_bytes(&cache), 256);

        let full = PaCAParams::new(Matrix::<f64>::zeros(2, 7), IndexSet::full(7).unwrap()).unwrap();
        let (_, pc) = paca_forward(&full, &Matrix::zeros(7, 3), true).unwrap();
        let (_, fc) = linear_forward(&LinearParams::new(Matrix::<f64>::zeros(2, 7)), &Matrix::zeros(7, 3), true).unwrap();
        assert_eq!(pc.bytes(), fc.bytes());
    }

    #[test]
    fn test_partial_gradient_is_column_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random(6, 5, &mut rng);
        let x = random(5, 3, &mut rng);
        let g = random(6, 3, &mut rng);
        let idx = IndexSet::new(vec![0, 2, 4], 5).unwrap();
        let lin = LinearParams::new(w.clone());
        let (_, lc) = linear_forward(&lin, &x, true).unwrap();
        let (g_in_full, g_w) = linear_backward(&lin, &g, &lc).unwrap();
        let pp = PaCAParams::new(w, idx.clone()).unwrap();
        let (_, pc) = paca_forward(&pp, &x, true).unwrap();
        let (g_in, g_p) = paca_backward(&pp, &g, &pc).unwrap();
        assert!(g_p.max_abs_diff(&gather_cols(&g_w, &idx).unwrap()) <= 1e-12);
        assert!(g_in.bitwise_eq(&g_in_full));

        let (g_in0, g_p0) = paca_backward(&pp, &Matrix::zeros(6, 3), &pc).unwrap();
        assert_eq!(g_in0, Matrix::zeros(5, 3));
        assert_eq!(g_p0, Matrix::zeros(6, 3));
    }

    #[test]
    fn test_full_index_gradient_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = random(4, 6, &mut rng);
        let x = random(6, 5, &mut rng);
        let g = random(4, 5, &mut rng);
        let lin = LinearParams::new(w.clone());
        let (_, lc) = linear_forward(&lin, &x, true).unwrap();
        let (_, g_w) = linear_backward(&lin, &g, &lc).unwrap();
        let pp = PaCAParams::new(w, IndexSet::full(6).unwrap()).unwrap();
        let (_, pc) = paca_forward(&pp, &x, true).unwrap();
        let (_, g_p) = paca_backward(&pp, &g, &pc).unwrap();
        assert!(g_p.bitwise_eq(&g_w));
    }

    #[test]
    fn test_errors() {
        assert!(PaCAParams::new(Matrix::<f64>::zeros(2, 3), IndexSet::full(4).unwrap()).is_err());
        let pp = PaCAParams::new(Matrix::<f64>::zeros(2, 3), IndexSet::full(3).unwrap()).unwrap();
        assert!(paca_forward(&pp, &Matrix::zeros(2, 1), true).is_err());
        let (_, cache) = paca_forward(&pp, &Matrix::zeros(3, 1), false).unwrap();
        assert!(matches!(
            paca_backward(&pp, &Matrix::zeros(2, 1), &cache),
            Err(Error::State(_))
        ));
    }
}
