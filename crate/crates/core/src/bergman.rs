//! Quantization maps between fiber metrics and inner products.
//!
//! Conventions used throughout the crate:
//!
//! * an inner product is the Gram matrix `H = (N+1)/V ∫ z z† e^{−phi} ω_h^n/n!`
//!   of the reference frame `z`;
//! * `E = L⁻¹` for the Cholesky factor `H = L L†`, so `ŝ = E z` is orthonormal
//!   and `K = H⁻¹ = E†E`;
//! * every spectral quantity (μ̄, `Q_k`, directions `A`) is expressed in the
//!   orthonormal basis `ŝ`;
//! * integrals against the Fubini–Study form use `ω_FS/k`, which lies in the
//!   class of `L` and has total volume `V`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{
    dot_conj, metric_from_potential, pullback_metric_with, FiberMetric, GridFn, KahlerData, SectionFrame,
};
use crate::linalg::{c, check_positive, hermitize, inverse_cholesky, CMat, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Hilb,
    Iterate,
    Loaded,
}

/// A point of the space of Hermitian inner products on `H⁰(M, L^k)`.
#[derive(Debug, Clone)]
pub struct InnerProduct {
    pub h: CMat,
    pub level_k: u32,
    pub provenance: Provenance,
    pub condition: f64,
}

impl InnerProduct {
    pub fn new(h: CMat, level_k: u32, provenance: Provenance) -> Result<Self> {
        let scale = h.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
        let asym = h.iter().zip(h.adjoint().iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()));
        if asym > 1e-12 * scale {
            return Err(Error::Validation(format!("inner product is not Hermitian (defect {asym:e})")));
        }
        let h = hermitize(&h);
        let condition = check_positive(&h)?;
        Ok(Self { h, level_k, provenance, condition })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Orthonormalizing factor `E` with `E H E† = I`.
    pub fn orthonormalizer(&self) -> Result<CMat> {
        inverse_cholesky(&self.h)
    }
}

/// `K = H⁻¹`, the matrix with `phi = log(z†Kz)` for `FS(H)`.
pub fn orthonormal_gram_inverse(h: &InnerProduct) -> Result<CMat> {
    let e = h.orthonormalizer()?;
    Ok(hermitize(&(e.adjoint() * e)))
}

pub fn fs(frame: &SectionFrame, h: &InnerProduct) -> Result<FiberMetric> {
    let k_mat = orthonormal_gram_inverse(h)?;
    let e = h.orthonormalizer()?;
    let (s_hat, _) = lifts(frame, &e, false);
    let phi = (0..frame.n_points())
        .map(|p| row(&s_hat, frame.dim, p).iter().map(|v| v.norm_sqr()).sum::<f64>().ln())
        .collect();
    Ok(FiberMetric { phi, algebraic: Some(k_mat) })
}

/// `ŝ = E z` and `∂ŝ = E ∂z`, row-major `P × dim` and `P × n × dim`.
pub(crate) fn lifts(frame: &SectionFrame, e: &CMat, with_derivatives: bool) -> (Vec<C64>, Vec<C64>) {
    let dim = frame.dim;
    let transform = |rows: &[C64]| -> Vec<C64> {
        let m = rows.len() / dim;
        let zt = DMatrix::from_row_slice(m, dim, rows);
        let out = zt * e.transpose();
        let mut flat = Vec::with_capacity(m * dim);
        for i in 0..m {
            for j in 0..dim {
                flat.push(out[(i, j)]);
            }
        }
        flat
    };
    let s = transform(&frame.z);
    let ds = if with_derivatives { transform(&frame.dz) } else { Vec::new() };
    (s, ds)
}

pub(crate) fn row(v: &[C64], dim: usize, p: usize) -> &[C64] {
    &v[p * dim..(p + 1) * dim]
}

/// `Σ_p m_p v_p v_p†` for rows `v_p` of a `P × dim` array.
pub(crate) fn weighted_gram(rows: &[C64], dim: usize, mass: &[f64]) -> CMat {
    let p = mass.len();
    let mut cols = CMat::zeros(dim, p);
    for q in 0..p {
        let s = mass[q].sqrt();
        for i in 0..dim {
            cols[(i, q)] = rows[q * dim + i] * s;
        }
    }
    hermitize(&(&cols * cols.adjoint()))
}

pub fn hilb(frame: &SectionFrame, h: &FiberMetric) -> Result<InnerProduct> {
    let kd = metric_from_potential(frame, h)?;
    let mass = hilb_mass(frame, h, &kd);
    let gram = weighted_gram(&frame.z, frame.dim, &mass);
    InnerProduct::new(gram, frame.level_k, Provenance::Hilb)
}

/// `(N+1)/V · e^{−phi} · vol(ω_h/k) · weight` per point.
fn hilb_mass(frame: &SectionFrame, h: &FiberMetric, kd: &KahlerData) -> Vec<f64> {
    let scale = (frame.level_k as f64).powi(kd.n as i32);
    let pref = frame.dim as f64 / frame.volume_v;
    (0..frame.n_points())
        .map(|p| pref * (-h.phi[p]).exp() * kd.vol_density[p] / scale * frame.grid.weights[p])
        .collect()
}

/// `Hilb ∘ FS`.
pub fn t_operator(frame: &SectionFrame, h: &InnerProduct) -> Result<InnerProduct> {
    let out = hilb(frame, &fs(frame, h)?)?;
    Ok(InnerProduct { provenance: Provenance::Iterate, ..out })
}

/// Pointwise and averaged moment maps in the `H`-orthonormal basis.
#[derive(Debug, Clone)]
pub struct MomentData {
    pub dim: usize,
    /// Unit lifts `u(p) = ŝ/|ŝ|`, so that `μ(p) = u u†`.
    pub u: Vec<C64>,
    /// Per-point mass of `ω_FS/k` (volume density times weight).
    pub mass: Vec<f64>,
    pub mu_bar: CMat,
    pub c_value: f64,
    /// `E` with `ŝ = E z`.
    pub e: CMat,
    /// Pulled-back Fubini–Study data of `ω_FS` (class `k`).
    pub kd: KahlerData,
}

impl MomentData {
    pub fn n_points(&self) -> usize {
        self.mass.len()
    }

    pub fn u_at(&self, p: usize) -> &[C64] {
        row(&self.u, self.dim, p)
    }

    pub fn mu_at(&self, p: usize) -> CMat {
        let u = nalgebra::DVector::from_row_slice(self.u_at(p));
        &u * u.adjoint()
    }

    /// Traceless part `M` of `μ̄ = c·I + M`.
    pub fn traceless(&self) -> CMat {
        let mut m = self.mu_bar.clone();
        for i in 0..self.dim {
            m[(i, i)] -= c(self.c_value);
        }
        m
    }

    pub fn volume(&self) -> f64 {
        self.mass.iter().sum()
    }
}

pub fn moment_data(frame: &SectionFrame, h: &InnerProduct) -> Result<MomentData> {
    moment_data_with(frame, h, false)
}

pub fn moment_data_with(frame: &SectionFrame, h: &InnerProduct, with_curvature: bool) -> Result<MomentData> {
    if h.dim() != frame.dim {
        return Err(Error::Dimension { expected: frame.dim, found: h.dim() });
    }
    moment_data_from_e(frame, &h.orthonormalizer()?, with_curvature)
}

/// Moment data for the frame `ŝ = E z` with an arbitrary invertible `E`.
pub fn moment_data_from_e(frame: &SectionFrame, e: &CMat, with_curvature: bool) -> Result<MomentData> {
    if e.nrows() != frame.dim {
        return Err(Error::Dimension { expected: frame.dim, found: e.nrows() });
    }
    let k_mat = hermitize(&(e.adjoint() * e));
    let kd = pullback_metric_with(frame, &k_mat, with_curvature)?;
    let (s_hat, _) = lifts(frame, e, false);
    let dim = frame.dim;
    let mut u = s_hat;
    for p in 0..frame.n_points() {
        let r = &mut u[p * dim..(p + 1) * dim];
        let norm = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for v in r.iter_mut() {
            *v /= norm;
        }
    }
    let scale = (frame.level_k as f64).powi(kd.n as i32);
    let mass: Vec<f64> = (0..frame.n_points()).map(|p| kd.vol_density[p] / scale * frame.grid.weights[p]).collect();
    let mu_bar = weighted_gram(&u, dim, &mass);
    let c_value = mu_bar.trace().re / dim as f64;
    Ok(MomentData { dim, u, mass, mu_bar, c_value, e: e.clone(), kd })
}

/// `H_k(A)(p) = tr(μ(p) A)`.
pub fn h_operator(md: &MomentData, a: &CMat) -> Result<GridFn> {
    if a.nrows() != md.dim {
        return Err(Error::Dimension { expected: md.dim, found: a.nrows() });
    }
    Ok(quadratic_form_rows(&md.u, md.dim, a))
}

fn quadratic_form_rows(rows: &[C64], dim: usize, a: &CMat) -> GridFn {
    let mut au = vec![c(0.0); dim];
    (0..rows.len() / dim)
        .map(|p| {
            let u = row(rows, dim, p);
            for i in 0..dim {
                let mut acc = c(0.0);
                for j in 0..dim {
                    acc += a[(i, j)] * u[j];
                }
                au[i] = acc;
            }
            dot_conj(u, &au).re
        })
        .collect()
}

/// Derivative of the Kempf–Ness functional along `ŝ_t = e^{t·dH} ŝ`.
pub fn aubin_yau_directional(frame: &SectionFrame, h: &InnerProduct, dh: &CMat) -> Result<f64> {
    let md = moment_data(frame, h)?;
    Ok(directional_from(&md, dh))
}

pub fn directional_from(md: &MomentData, dh: &CMat) -> f64 {
    (dh * &md.mu_bar).trace().re
}

/// Quantization data of a fixed fiber metric: the `Hilb_k(h)`-orthonormal
/// sections with their fiber norms and the `ω_h/k` measure.
#[derive(Debug, Clone)]
pub struct Quantizer {
    pub dim: usize,
    pub level_k: u32,
    pub volume_v: f64,
    pub hilb: InnerProduct,
    /// Rows `ŝ(p)·e^{−phi(p)/2}`.
    pub sections: Vec<C64>,
    /// Per-point mass of `ω_h/k`.
    pub mass: Vec<f64>,
    pub kd: KahlerData,
}

impl Quantizer {
    pub fn new(frame: &SectionFrame, h: &FiberMetric) -> Result<Self> {
        let kd = metric_from_potential(frame, h)?;
        let mass_h = hilb_mass(frame, h, &kd);
        let hilb = InnerProduct::new(weighted_gram(&frame.z, frame.dim, &mass_h), frame.level_k, Provenance::Hilb)?;
        let e = hilb.orthonormalizer()?;
        let (mut sections, _) = lifts(frame, &e, false);
        let dim = frame.dim;
        for p in 0..frame.n_points() {
            let f = (-h.phi[p] / 2.0).exp();
            for v in &mut sections[p * dim..(p + 1) * dim] {
                *v *= f;
            }
        }
        let scale = (frame.level_k as f64).powi(kd.n as i32);
        let mass = (0..frame.n_points()).map(|p| kd.vol_density[p] / scale * frame.grid.weights[p]).collect();
        Ok(Self { dim, level_k: frame.level_k, volume_v: frame.volume_v, hilb, sections, mass, kd })
    }

    /// `Q_k(f) = ∫ f ŝ ŝ† e^{−phi} ω_h^n/n!`.
    pub fn q(&self, f: &[f64]) -> CMat {
        let fm: Vec<f64> = self.mass.iter().zip(f).map(|(m, v)| m * v).collect();
        signed_gram(&self.sections, self.dim, &fm)
    }

    /// `H_k(A)` for the moment map of `FS(Hilb_k(h))`.
    pub fn h(&self, a: &CMat) -> GridFn {
        let raw = quadratic_form_rows(&self.sections, self.dim, a);
        raw.iter().zip(self.density()).map(|(v, d)| v / d).collect()
    }

    /// `Σ |ŝ_i|² e^{−phi}`: the Bergman density of `h`, mean one.
    pub fn density(&self) -> GridFn {
        (0..self.mass.len())
            .map(|p| row(&self.sections, self.dim, p).iter().map(|v| v.norm_sqr()).sum())
            .collect()
    }

    /// Berezin transform `(N+1)/V · H_k(Q_k(f))`.
    pub fn berezin(&self, f: &[f64]) -> GridFn {
        let pref = self.dim as f64 / self.volume_v;
        self.h(&self.q(f)).into_iter().map(|v| pref * v).collect()
    }
}

/// `Σ_p m_p v_p v_p†` for signed masses.
fn signed_gram(rows: &[C64], dim: usize, mass: &[f64]) -> CMat {
    let p = mass.len();
    let mut left = CMat::zeros(dim, p);
    let mut right = CMat::zeros(dim, p);
    for q in 0..p {
        for i in 0..dim {
            let v = rows[q * dim + i];
            left[(i, q)] = v * mass[q];
            right[(i, q)] = v;
        }
    }
    hermitize(&(&left * right.adjoint()))
}

pub fn q_operator(frame: &SectionFrame, h: &FiberMetric, f: &[f64]) -> Result<CMat> {
    Ok(Quantizer::new(frame, h)?.q(f))
}

pub fn bergman_density(frame: &SectionFrame, h: &FiberMetric) -> Result<GridFn> {
    Ok(Quantizer::new(frame, h)?.density())
}

/// `ρ̃_k = ρ⁻¹ · det(g + k⁻¹ ∂∂̄ log ρ) / det g` with `g` the metric of `ω_h/k`
/// and `ρ` the mean-one Bergman density.
pub fn rho_tilde(frame: &SectionFrame, h: &FiberMetric) -> Result<GridFn> {
    let qz = Quantizer::new(frame, h)?;
    rho_tilde_from(frame, &qz)
}

pub fn rho_tilde_from(frame: &SectionFrame, qz: &Quantizer) -> Result<GridFn> {
    let rho = qz.density();
    let log_rho: Vec<f64> = rho.iter().map(|v| v.ln()).collect();
    let hess = frame.grid.ddbar(&log_rho)?;
    let k = frame.level_k as f64;
    let n = qz.kd.n;
    let mut out = Vec::with_capacity(rho.len());
    for p in 0..rho.len() {
        let g = qz.kd.g_at(p).scale(1.0 / k);
        let mut corrected = g.clone();
        for a in 0..n {
            for b in 0..n {
                corrected[(a, b)] += hess[p * n * n + a * n + b] / k;
            }
        }
        let vals = crate::linalg::eigvals(&corrected);
        if !(vals[0] > 0.0) {
            return Err(Error::NotKahler { point: p, value: vals[0] });
        }
        let det_c: f64 = vals.iter().product();
        let det_g = qz.kd.detg[p] / k.powi(n as i32);
        out.push(det_c / det_g / rho[p]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_p1_backend;
    use crate::linalg::{diag, identity, max_abs_diff, random_positive};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn binom(k: u32, j: u32) -> f64 {
        (0..j).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
    }

    pub(crate) fn round_h(k: u32) -> InnerProduct {
        let d: Vec<f64> = (0..=k).map(|j| 1.0 / binom(k, j)).collect();
        InnerProduct::new(diag(&d), k, Provenance::Initial).unwrap()
    }

    #[test]
    fn gram_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = InnerProduct::new(random_positive(&mut rng, 5, 1.0), 4, Provenance::Initial).unwrap();
        let k = orthonormal_gram_inverse(&h).unwrap();
        assert!(max_abs_diff(&(k * &h.h), &identity(5)) < 1e-12);
        let d = InnerProduct::new(diag(&[1.0, 2.0, 4.0]), 2, Provenance::Initial).unwrap();
        assert!(max_abs_diff(&orthonormal_gram_inverse(&d).unwrap(), &diag(&[1.0, 0.5, 0.25])) < 1e-15);
    }

    #[test]
    fn fs_of_round_inner_product() {
        let k = 3;
        let frame = build_p1_backend(k, 32, 16).unwrap();
        let phi = fs(&frame, &round_h(k)).unwrap().phi;
        let expected = frame.round_potential();
        for (a, b) in phi.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        let scaled = InnerProduct::new(round_h(k).h.scale(2.0), k, Provenance::Initial).unwrap();
        let phi2 = fs(&frame, &scaled).unwrap().phi;
        for (a, b) in phi.iter().zip(&phi2) {
            assert!((b - a + 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hilb_of_round_metric_is_binomial() {
        for k in 1..=10 {
            let frame = build_p1_backend(k, 64, 128).unwrap();
            let h = hilb(&frame, &FiberMetric::from_potential(frame.round_potential())).unwrap();
            assert!(max_abs_diff(&h.h, &round_h(k).h) < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn round_is_balanced() {
        for k in [1, 4, 10] {
            let frame = build_p1_backend(k, 64, 128).unwrap();
            let md = moment_data(&frame, &round_h(k)).unwrap();
            let expected = identity(k as usize + 1).scale(2.0 * PI / (k + 1) as f64);
            assert!(max_abs_diff(&md.mu_bar, &expected) < 1e-10);
            let t = t_operator(&frame, &round_h(k)).unwrap();
            assert!(max_abs_diff(&t.h, &round_h(k).h) < 1e-10);
        }
    }

    #[test]
    fn moment_map_has_unit_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = build_p1_backend(4, 64, 128).unwrap();
        let h = InnerProduct::new(random_positive(&mut rng, 5, 1.0), 4, Provenance::Initial).unwrap();
        let md = moment_data(&frame, &h).unwrap();
        for p in (0..md.n_points()).step_by(37) {
            assert!((md.mu_at(p).trace().re - 1.0).abs() < 1e-13);
        }
        assert!((md.mu_bar.trace().re - 2.0 * PI).abs() < 1e-10, "{}", md.mu_bar.trace().re - 2.0 * PI);
        let ones = h_operator(&md, &identity(5)).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn hamiltonian_of_k1_rotation() {
        let frame = build_p1_backend(1, 32, 16).unwrap();
        let md = moment_data(&frame, &InnerProduct::new(identity(2), 1, Provenance::Initial).unwrap()).unwrap();
        let h = h_operator(&md, &diag(&[0.5, -0.5])).unwrap();
        let expected = frame.eval(|p| 0.5 * p[0].cos());
        for (a, b) in h.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn round_bergman_density_is_constant() {
        let frame = build_p1_backend(6, 64, 128).unwrap();
        let rho = bergman_density(&frame, &FiberMetric::from_potential(frame.round_potential())).unwrap();
        assert!(rho.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn q_of_constant_and_antipodal_symmetry() {
        let k = 4;
        let frame = build_p1_backend(k, 64, 128).unwrap();
        let h = FiberMetric::from_potential(frame.round_potential());
        let q1 = q_operator(&frame, &h, &vec![1.0; frame.n_points()]).unwrap();
        assert!(max_abs_diff(&q1, &identity(5).scale(2.0 * PI / 5.0)) < 1e-10);
        let f = frame.eval(|p| p[0].cos());
        let q = q_operator(&frame, &h, &f).unwrap();
        for j in 0..=k as usize {
            assert!((q[(j, j)] + q[(k as usize - j, k as usize - j)]).norm() < 1e-12);
        }
    }
}
