//! Hermitian matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Largest condition number accepted for an inner product.
pub const MAX_CONDITION: f64 = 1e12;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn diag(d: &[f64]) -> CMat {
    let n = d.len();
    let mut m = CMat::zeros(n, n);
    for (i, &v) in d.iter().enumerate() {
        m[(i, i)] = c(v);
    }
    m
}

pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn trace(a: &CMat) -> C64 {
    a.trace()
}

/// Real Frobenius pairing `Re tr(A B†)`, equal to `tr(AB)` for Hermitian arguments.
pub fn frob_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

pub fn frob_norm(a: &CMat) -> f64 {
    frob_inner(a, a).sqrt()
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(hermitize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

pub fn eigvals(a: &CMat) -> Vec<f64> {
    eigh(a).0
}

/// Operator norm of a Hermitian matrix.
pub fn op_norm(a: &CMat) -> f64 {
    eigvals(a).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn herm_apply(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = eigh(a);
    let mut scaled = vecs.clone();
    for (j, v) in vals.iter().enumerate() {
        let fv = f(*v);
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= fv;
        }
    }
    scaled * vecs.adjoint()
}

/// `exp(t A)` for Hermitian `A`.
pub fn expm_herm(a: &CMat, t: f64) -> CMat {
    herm_apply(a, |v| (t * v).exp())
}

pub fn condition_number(a: &CMat) -> f64 {
    let vals = eigvals(a);
    let lo = vals[0];
    let hi = vals[vals.len() - 1];
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Checks positivity and conditioning of a Hermitian matrix.
pub fn check_positive(a: &CMat) -> Result<f64> {
    let vals = eigvals(a);
    if vals[0] <= 0.0 {
        return Err(Error::NotPositive);
    }
    let cond = vals[vals.len() - 1] / vals[0];
    if cond > MAX_CONDITION {
        return Err(Error::Conditioning(cond));
    }
    Ok(cond)
}

/// Inverse Cholesky factor: `E = L⁻¹` where `H = L L†`, so `E H E† = I`.
pub fn inverse_cholesky(h: &CMat) -> Result<CMat> {
    check_positive(h)?;
    let chol = hermitize(h).cholesky().ok_or(Error::NotPositive)?;
    let l = chol.l();
    let n = l.nrows();
    l.solve_lower_triangular(&identity(n)).ok_or(Error::NotPositive)
}

/// Rescales a positive matrix to unit determinant.
pub fn unit_det(a: &CMat) -> CMat {
    let n = a.nrows() as f64;
    let logdet: f64 = eigvals(a).iter().map(|v| v.ln()).sum();
    a.scale((-logdet / n).exp())
}

/// Gaussian Hermitian matrix (GUE normalization: unit variance diagonal).
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = c(rng.sample(StandardNormal));
        for j in (i + 1)..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Random positive definite matrix `exp(s·G)` with `G` Gaussian Hermitian.
pub fn random_positive<R: Rng + ?Sized>(rng: &mut R, n: usize, spread: f64) -> CMat {
    let g = random_hermitian(rng, n);
    expm_herm(&g, spread / (n as f64).sqrt())
}

/// Traceless part `A − tr(A)/n · I`.
pub fn traceless(a: &CMat) -> CMat {
    let n = a.nrows();
    let t = a.trace() / c(n as f64);
    let mut out = a.clone();
    for i in 0..n {
        out[(i, i)] -= t;
    }
    out
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}
