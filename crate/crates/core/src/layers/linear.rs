use super::cache::{ActivationCache, CacheTag};
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Matrix, Real};

/// Dense weight `W` of shape `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T: Real = f64> {
    pub w: Matrix<T>,
}

impl<T: Real> LinearParams<T> {
    pub fn new(w: Matrix<T>) -> Self {
        Self { w }
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }
}

pub(crate) const X_IN: &str = "x_in";

/// `X_out = W X_in`; in train mode the whole input is cached.
pub fn linear_forward<T: Real>(
    p: &LinearParams<T>,
    x_in: &Matrix<T>,
    train: bool,
) -> Result<(Matrix<T>, ActivationCache<T>)> {
    if p.w.cols() != x_in.rows() {
        return Err(Error::shape(
            "linear_forward",
            (p.w.cols(), x_in.cols()),
            x_in.shape(),
        ));
    }
    let x_out = matmul(&p.w, x_in)?;
    let mut cache = ActivationCache::empty(CacheTag::Full);
    if train {
        cache.store(X_IN, x_in.clone());
    }
    Ok((x_out, cache))
}

/// Returns `(∇X_in, ∇W) = (Wᵀ ∇X_out, ∇X_out X_inᵀ)`.
pub fn linear_backward<T: Real>(
    p: &LinearParams<T>,
    g_out: &Matrix<T>,
    cache: &ActivationCache<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let x_in = cached(cache, CacheTag::Full, X_IN)?;
    check_grad(g_out, p.w.rows(), x_in.cols(), "linear_backward")?;
    let g_in = matmul_tn(&p.w, g_out)?;
    let g_w = matmul_nt(g_out, x_in)?;
    Ok((g_in, g_w))
}

pub(crate) fn cached<'c, T: Real>(
    cache: &'c ActivationCache<T>,
    tag: CacheTag,
    name: &str,
) -> Result<&'c Matrix<T>> {
    if cache.tag() != tag {
        return Err(Error::State(format!(
            "expected a {tag:?} cache, got {:?}",
            cache.tag()
        )));
    }
    cache.get(name).ok_or_else(|| {
        Error::State(format!(
            "backward without train-mode forward (cache has no `{name}`)"
        ))
    })
}

pub(crate) fn check_grad<T: Real>(
    g_out: &Matrix<T>,
    d_out: usize,
    n: usize,
    op: &'static str,
) -> Result<()> {
    if g_out.shape() != (d_out, n) {
        return Err(Error::shape(op, (d_out, n), g_out.shape()));
    }
    Ok(())
}
