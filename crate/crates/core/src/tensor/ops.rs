use super::counter;
use super::{IndexSet, Matrix, Real};
use crate::error::{Error, Result};

/// `a · b`.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape("matmul", (a.cols(), b.cols()), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let av = a.as_slice();
    let bv = b.as_slice();
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let a_it = av[i * k + t];
            let b_row = &bv[t * n..(t + 1) * n];
            for (c_ij, &b_tj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_it * b_tj;
            }
        }
    }
    counter::record(m * k * n);
    let out = Matrix::from_raw(m, n, c);
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape("matmul_nt", (b.rows(), a.cols()), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut c = Vec::with_capacity(m * n);
    for i in 0..m {
        let a_row = a.row(i);
        for j in 0..n {
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b.row(j)) {
                acc = acc + x * y;
            }
            c.push(acc);
        }
    }
    counter::record(m * k * n);
    let out = Matrix::from_raw(m, n, c);
    out.ensure_finite("matmul_nt")?;
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(Error::shape("matmul_tn", (a.rows(), b.cols()), b.shape()));
    }
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut c = vec![T::zero(); m * n];
    for t in 0..k {
        let a_row = a.row(t);
        let b_row = b.row(t);
        for (i, &a_ti) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_ij, &b_tj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_ti * b_tj;
            }
        }
    }
    counter::record(m * k * n);
    let out = Matrix::from_raw(m, n, c);
    out.ensure_finite("matmul_tn")?;
    Ok(out)
}

pub fn transpose<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    let (m, n) = a.shape();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(a.get(i, j));
        }
    }
    Matrix::from_raw(n, m, out)
}

/// Rows of `x` at `idx`, in index order.
pub fn gather_rows<T: Real>(x: &Matrix<T>, idx: &IndexSet) -> Result<Matrix<T>> {
    if idx.domain() != x.rows() {
        return Err(Error::shape(
            "gather_rows",
            (idx.domain(), x.cols()),
            x.shape(),
        ));
    }
    let mut out = Vec::with_capacity(idx.len() * x.cols());
    for &i in idx.indices() {
        out.extend_from_slice(x.row(i));
    }
    Ok(Matrix::from_raw(idx.len(), x.cols(), out))
}

/// Columns of `w` at `idx`, in index order.
pub fn gather_cols<T: Real>(w: &Matrix<T>, idx: &IndexSet) -> Result<Matrix<T>> {
    if idx.domain() != w.cols() {
        return Err(Error::shape(
            "gather_cols",
            (w.rows(), idx.domain()),
            w.shape(),
        ));
    }
    let mut out = Vec::with_capacity(w.rows() * idx.len());
    for i in 0..w.rows() {
        let row = w.row(i);
        out.extend(idx.indices().iter().map(|&j| row[j]));
    }
    Ok(Matrix::from_raw(w.rows(), idx.len(), out))
}

/// `w[·][idx[j]] += coeff · delta[·][j]`; columns outside `idx` are not touched.
pub fn scatter_cols_add<T: Real>(
    w: &mut Matrix<T>,
    idx: &IndexSet,
    delta: &Matrix<T>,
    coeff: T,
) -> Result<()> {
    if idx.domain() != w.cols() {
        return Err(Error::shape(
            "scatter_cols_add",
            (w.rows(), idx.domain()),
            w.shape(),
        ));
    }
    if delta.shape() != (w.rows(), idx.len()) {
        return Err(Error::shape(
            "scatter_cols_add",
            (w.rows(), idx.len()),
            delta.shape(),
        ));
    }
    let cols = w.cols();
    let r = idx.len();
    let dv = delta.as_slice();
    let wv = w.as_mut_slice();
    for i in 0..delta.rows() {
        for (jj, &j) in idx.indices().iter().enumerate() {
            let cell = &mut wv[i * cols + j];
            *cell = *cell + coeff * dv[i * r + jj];
        }
    }
    for i in 0..delta.rows() {
        for &j in idx.indices() {
            if !wv[i * cols + j].is_finite() {
                return Err(Error::NonFinite("scatter_cols_add"));
            }
        }
    }
    Ok(())
}
