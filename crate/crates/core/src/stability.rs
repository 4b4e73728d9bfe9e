//! Energy profiles along one-parameter subgroups, tangential/normal
//! splitting of the fields `ξ_A`, eigenvalue diagnostics and destabilizers.
//!
//! Pointwise norms are Fubini–Study norms of `ω_FS = i∂∂̄ log|ŝ|²`. `L²`
//! norms integrate against `ω_FS^n/n!` (total volume `k^n V`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bergman::{lifts, moment_data_from_e, row, InnerProduct, MomentData};
use crate::error::{Error, Result};
use crate::geometry::{dot_conj, GridFn, KahlerData, SectionFrame};
use crate::linalg::{c, eigh, eigvals, expm_herm, frob_inner, op_norm, random_hermitian, traceless, CMat, C64};
use crate::symmetry::{project_s_t, project_vt, WeightDecomposition};

/// Largest admissible `|t|·‖A‖_op` along a one-parameter subgroup.
pub const T_RANGE_GUARD: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct TangentSplit {
    /// `‖ξ_A‖²`, `‖π_T ξ_A‖²`, `‖π_N ξ_A‖²` per point.
    pub xi_sq: GridFn,
    pub tangent_sq: GridFn,
    pub normal_sq: GridFn,
    /// Per-point mass of `ω_FS^n/n!`.
    pub mass: Vec<f64>,
}

impl TangentSplit {
    fn l2(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.mass).map(|(v, m)| v * m).sum()
    }

    pub fn xi_l2(&self) -> f64 {
        self.l2(&self.xi_sq)
    }

    pub fn tangent_l2(&self) -> f64 {
        self.l2(&self.tangent_sq)
    }

    pub fn normal_l2(&self) -> f64 {
        self.l2(&self.normal_sq)
    }

    /// Largest pointwise Pythagoras defect relative to `‖ξ‖²`.
    pub fn pythagoras_defect(&self) -> f64 {
        let scale = self.xi_sq.iter().fold(0.0_f64, |m, v| m.max(*v)).max(1e-300);
        (0..self.xi_sq.len())
            .map(|p| (self.xi_sq[p] - self.tangent_sq[p] - self.normal_sq[p]).abs())
            .fold(0.0, f64::max)
            / scale
    }
}

/// FS pairing `⟨x, y⟩ = (x†y|s|² − (x†s)(s†y))/|s|⁴` of lifts at `s`.
pub fn fs_pairing(s: &[C64], x: &[C64], y: &[C64]) -> C64 {
    let q = dot_conj(s, s).re;
    (dot_conj(x, y) * q - dot_conj(x, s) * dot_conj(s, y)) / (q * q)
}

/// Component of `x` orthogonal to `s`: the FS pairing becomes `x_h† y_h / |s|²`.
fn horizontal(s: &[C64], x: &[C64]) -> Vec<C64> {
    let coef = dot_conj(s, x) / dot_conj(s, s).re;
    x.iter().zip(s).map(|(xi, si)| xi - coef * si).collect()
}

fn mat_apply(a: &CMat, v: &[C64]) -> Vec<C64> {
    let mut out = vec![c(0.0); v.len()];
    crate::geometry::mat_vec(a, v, &mut out);
    out
}

/// Splits `ξ_A` for the orthonormal frame `ŝ = E z`.
pub fn xi_split_e(frame: &SectionFrame, e: &CMat, a: &CMat) -> Result<TangentSplit> {
    let dim = frame.dim;
    let n = frame.n_coords();
    let (s_hat, ds_hat) = lifts(frame, e, true);
    let md = moment_data_from_e(frame, e, false)?;
    let scale = (frame.level_k as f64).powi(n as i32);
    let mass: Vec<f64> = md.mass.iter().map(|m| m * scale).collect();
    let mut xi_sq = Vec::with_capacity(frame.n_points());
    let mut tangent_sq = Vec::with_capacity(frame.n_points());
    let mut normal_sq = Vec::with_capacity(frame.n_points());
    for p in 0..frame.n_points() {
        let s = row(&s_hat, dim, p);
        let q = dot_conj(s, s).re;
        let xi = horizontal(s, &mat_apply(a, s));
        let tangents: Vec<Vec<C64>> =
            (0..n).map(|b| horizontal(s, &ds_hat[(p * n + b) * dim..(p * n + b + 1) * dim])).collect();
        let mut gram = CMat::zeros(n, n);
        let mut rhs = CMat::zeros(n, 1);
        for b in 0..n {
            for a2 in 0..n {
                gram[(b, a2)] = dot_conj(&tangents[b], &tangents[a2]) / q;
            }
            rhs[(b, 0)] = dot_conj(&tangents[b], &xi) / q;
        }
        let vals = eigvals(&gram);
        if !(vals[0] > 1e-14 * vals[n - 1].max(1e-300)) {
            return Err(Error::Degenerate { point: p, value: vals[0] });
        }
        let coef = gram.clone().lu().solve(&rhs).ok_or(Error::Degenerate { point: p, value: vals[0] })?;
        let mut normal = xi.clone();
        for b in 0..n {
            for i in 0..dim {
                normal[i] -= coef[(b, 0)] * tangents[b][i];
            }
        }
        xi_sq.push(dot_conj(&xi, &xi).re / q);
        tangent_sq.push((rhs.adjoint() * &coef)[(0, 0)].re);
        normal_sq.push(dot_conj(&normal, &normal).re / q);
    }
    Ok(TangentSplit { xi_sq, tangent_sq, normal_sq, mass })
}

pub fn xi_split(frame: &SectionFrame, h: &InnerProduct, a: &CMat) -> Result<TangentSplit> {
    xi_split_e(frame, &h.orthonormalizer()?, a)
}

/// `H_A H_B + ⟨ξ_A, ξ_B⟩ − tr(ABμ)` at point `p` of the frame `ŝ = E z`,
/// with the first two terms evaluated from unnormalized lifts.
pub fn lem2_defect(frame: &SectionFrame, md: &MomentData, a: &CMat, b: &CMat, p: usize) -> C64 {
    let s: Vec<C64> = mat_apply(&md.e, frame.z_at(p));
    let q = dot_conj(&s, &s).re;
    let xa = mat_apply(a, &s);
    let xb = mat_apply(b, &s);
    let ha = dot_conj(&s, &xa).re / q;
    let hb = dot_conj(&s, &xb).re / q;
    let pair = fs_pairing(&s, &xa, &xb);
    let u = md.u_at(p);
    let ab = a * b;
    let tr = dot_conj(u, &mat_apply(&ab, u));
    c(ha * hb) + pair - tr
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyProfile {
    pub t: Vec<f64>,
    pub f: Vec<f64>,
    pub f_dot: Vec<f64>,
    pub f_ddot: Vec<f64>,
}

/// `f`, `ḟ`, `f̈` of the Kempf–Ness functional along `ŝ_t = e^{tA} ŝ`:
/// `ḟ = tr(A μ̄_t)` and `f̈ = 2 ∫ ‖π_N ξ_A‖² ω_t^n/n!` with `ω_t = ω_FS,t/k`.
pub fn f_derivatives(frame: &SectionFrame, h: &InnerProduct, a: &CMat, t_grid: &[f64]) -> Result<EnergyProfile> {
    if t_grid.windows(2).any(|w| w[0] >= w[1]) || !t_grid.iter().any(|t| *t == 0.0) {
        return Err(Error::Config("t grid must be strictly increasing and contain 0".into()));
    }
    let norm = op_norm(a);
    for t in t_grid {
        if t.abs() * norm > T_RANGE_GUARD {
            return Err(Error::RangeGuard(t.abs() * norm));
        }
    }
    let e0 = h.orthonormalizer()?;
    let k_n = (frame.level_k as f64).powi(frame.n_coords() as i32);
    let mut f_dot = Vec::with_capacity(t_grid.len());
    let mut f_ddot = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let e = expm_herm(a, t) * &e0;
        let md = moment_data_from_e(frame, &e, false)?;
        f_dot.push(frob_inner(a, &md.mu_bar));
        let split = xi_split_e(frame, &e, a)?;
        f_ddot.push(2.0 * split.normal_l2() / k_n);
    }
    let zero = t_grid.iter().position(|t| *t == 0.0).unwrap();
    let mut f = vec![0.0; t_grid.len()];
    for i in zero + 1..t_grid.len() {
        f[i] = f[i - 1] + 0.5 * (f_dot[i] + f_dot[i - 1]) * (t_grid[i] - t_grid[i - 1]);
    }
    for i in (0..zero).rev() {
        f[i] = f[i + 1] - 0.5 * (f_dot[i] + f_dot[i + 1]) * (t_grid[i + 1] - t_grid[i]);
    }
    Ok(EnergyProfile { t: t_grid.to_vec(), f, f_dot, f_ddot })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundSample {
    pub sample_id: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub level_k: u32,
    pub seed: u64,
    pub samples: Vec<BoundSample>,
    pub skipped: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Exact extremum of the ratio over the whole sampling subspace.
    pub exact: Option<f64>,
    /// `‖μ̄ − cI‖_op` at the base point.
    pub mu_traceless_op: f64,
}

fn summarize(level_k: u32, seed: u64, samples: Vec<BoundSample>, skipped: usize, exact: Option<f64>, mu_op: f64) -> BoundReport {
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.ratio).collect();
    sorted.sort_by(f64::total_cmp);
    let (min, max, median) = if sorted.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (sorted[0], sorted[sorted.len() - 1], sorted[sorted.len() / 2])
    };
    BoundReport { level_k, seed, samples, skipped, min, median, max, exact, mu_traceless_op: mu_op }
}

/// Real orthonormal (trace pairing) basis of `s_T ∩ V(T)⊥`.
pub fn vt_perp_basis(wd: &WeightDecomposition, vt: &[CMat]) -> Result<Vec<CMat>> {
    let dim = wd.dim();
    let mut out: Vec<CMat> = Vec::new();
    let push = |m: CMat, out: &mut Vec<CMat>| -> Result<()> {
        let st = project_s_t(&m, wd);
        let (_, mut v) = project_vt(&st, vt)?;
        for b in out.iter() {
            let coef = frob_inner(b, &v);
            v -= b.scale(coef);
        }
        let nrm = frob_inner(&v, &v).sqrt();
        if nrm > 1e-8 {
            out.push(v.scale(1.0 / nrm));
        }
        Ok(())
    };
    for i in 0..dim {
        for j in i..dim {
            if wd.index_to_block[i] != wd.index_to_block[j] {
                continue;
            }
            let mut m = CMat::zeros(dim, dim);
            if i == j {
                m[(i, i)] = c(1.0);
                push(m, &mut out)?;
            } else {
                m[(i, j)] = c(1.0);
                m[(j, i)] = c(1.0);
                push(m.clone(), &mut out)?;
                let mut m2 = CMat::zeros(dim, dim);
                m2[(i, j)] = C64::new(0.0, 1.0);
                m2[(j, i)] = C64::new(0.0, -1.0);
                push(m2, &mut out)?;
            }
        }
    }
    Ok(out)
}

/// Smallest value of `∫‖π_N ξ_A‖² / tr(A²)` over `span(basis)`, from the
/// generalized eigenproblem of the two quadratic forms.
pub fn min_normal_ratio(frame: &SectionFrame, e: &CMat, basis: &[CMat]) -> Result<f64> {
    let m = basis.len();
    if m == 0 {
        return Ok(f64::NAN);
    }
    let mut q = nalgebra::DMatrix::<f64>::zeros(m, m);
    let diag: Vec<f64> = basis.iter().map(|b| xi_split_e(frame, e, b).map(|s| s.normal_l2())).collect::<Result<_>>()?;
    for i in 0..m {
        q[(i, i)] = diag[i];
        for j in 0..i {
            let sum = &basis[i] + &basis[j];
            let v = xi_split_e(frame, e, &sum)?.normal_l2();
            let off = 0.5 * (v - diag[i] - diag[j]);
            q[(i, j)] = off;
            q[(j, i)] = off;
        }
    }
    // the basis is trace-orthonormal, so the denominator form is the identity
    let vals = nalgebra::SymmetricEigen::new(q).eigenvalues;
    Ok(vals.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Empirical `k²‖π_N ξ_A‖²_{L²} / tr(A²)` over random `A ∈ s_T ∩ V(T)⊥`.
pub fn eigenvalue_bound_report(
    frame: &SectionFrame,
    h: &InnerProduct,
    wd: &WeightDecomposition,
    vt: &[CMat],
    samples: usize,
    seed: u64,
    with_exact: bool,
) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = h.orthonormalizer()?;
    let k2 = (frame.level_k as f64).powi(2);
    let mut out = Vec::new();
    let mut skipped = 0;
    for id in 0..samples {
        let g = random_hermitian(&mut rng, frame.dim);
        let (_, a) = project_vt(&project_s_t(&g, wd), vt)?;
        let tr = frob_inner(&a, &a);
        if tr < 1e-20 {
            skipped += 1;
            continue;
        }
        let split = xi_split_e(frame, &e, &a)?;
        out.push(BoundSample { sample_id: id, ratio: k2 * split.normal_l2() / tr });
    }
    let exact = if with_exact {
        let basis = vt_perp_basis(wd, vt)?;
        Some(k2 * min_normal_ratio(frame, &e, &basis)?)
    } else {
        None
    };
    let md = moment_data_from_e(frame, &e, false)?;
    Ok(summarize(frame.level_k, seed, out, skipped, exact, op_norm(&md.traceless())))
}

/// Empirical `‖A‖²_F / (k ‖ξ_A‖²_{L²})` over random traceless Hermitian `A`.
pub fn norm_bound_report(frame: &SectionFrame, h: &InnerProduct, samples: usize, seed: u64) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = h.orthonormalizer()?;
    let k = frame.level_k as f64;
    let mut out = Vec::new();
    for id in 0..samples {
        let a = traceless(&random_hermitian(&mut rng, frame.dim));
        let split = xi_split_e(frame, &e, &a)?;
        out.push(BoundSample { sample_id: id, ratio: frob_inner(&a, &a) / (k * split.xi_l2()) });
    }
    let md = moment_data_from_e(frame, &e, false)?;
    Ok(summarize(frame.level_k, seed, out, 0, None, op_norm(&md.traceless())))
}

#[derive(Debug, Clone, Serialize)]
pub struct DistortionReport {
    /// Smallest pointwise eigenvalue of `ω̃` relative to `ω̃₀ = k·ω₀`.
    pub r_lower: f64,
    /// Largest pointwise eigenvalue.
    pub r_max: f64,
    /// `sup |λ − 1|`: C⁰ distance of `ω̃` from `ω̃₀` relative to `ω̃₀`.
    pub r_upper: f64,
    /// `sup |Δ₀ log(det ω̃/det ω̃₀)| / k`, when derivatives are available.
    pub c2_estimate: Option<f64>,
    pub gate: f64,
    pub passes: bool,
}

/// Compares `ω_FS(H)` with `k·ω₀` for a reference metric `ω₀` in the class of `L`.
pub fn distortion_report(frame: &SectionFrame, h: &InnerProduct, reference: &KahlerData, gate: f64) -> Result<DistortionReport> {
    let md = moment_data_from_e(frame, &h.orthonormalizer()?, false)?;
    distortion_between(frame, &md.kd, reference, frame.level_k as f64, gate)
}

pub fn distortion_between(frame: &SectionFrame, kd: &KahlerData, reference: &KahlerData, k: f64, gate: f64) -> Result<DistortionReport> {
    let n = kd.n;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut log_ratio = Vec::with_capacity(frame.n_points());
    for p in 0..frame.n_points() {
        let g = kd.g_at(p);
        let g0 = reference.g_at(p).scale(k);
        // eigenvalues of g0^{-1/2} g g0^{-1/2}
        let (vals0, vecs0) = eigh(&g0);
        let mut w = vecs0.clone();
        for (j, v) in vals0.iter().enumerate() {
            for i in 0..n {
                w[(i, j)] /= v.sqrt();
            }
        }
        let rel = eigvals(&(w.adjoint() * g * &w));
        lo = lo.min(rel[0]);
        hi = hi.max(rel[n - 1]);
        log_ratio.push(rel.iter().map(|v| v.ln()).sum::<f64>());
    }
    let r_upper = (hi - 1.0).abs().max((1.0 - lo).abs());
    let c2_estimate = if frame.grid.supports_derivatives() {
        let lap = crate::geometry::laplacian(&frame.grid, reference, &log_ratio)?;
        Some(lap.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / k)
    } else {
        None
    };
    let passes = lo >= 1.0 / gate && hi <= gate && r_upper <= gate;
    Ok(DistortionReport { r_lower: lo, r_max: hi, r_upper, c2_estimate, gate, passes })
}

#[derive(Debug, Clone, Serialize)]
pub struct Destabilizer {
    pub a: Vec<Vec<[f64; 2]>>,
    pub trace_a_sq: f64,
    /// Fitted slope of `f(t)`; equals `tr(A²)` for a certified direction.
    pub f_slope: f64,
    /// Fitted slope of `ḟ(t)`; zero along automorphism directions.
    pub f_dot_slope: f64,
    pub max_f_ddot: f64,
    pub fit_residual: f64,
    pub profile: EnergyProfile,
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let res = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).abs()).fold(0.0, f64::max);
    (slope, intercept, res)
}

/// Searches `V(T)` for a direction along which the Kempf–Ness functional is
/// affine with nonzero slope. The `V(T)` component of `μ̄ − cI` is tried
/// first; further candidates are random `V(T)` combinations.
pub fn destabilizer_scan(
    frame: &SectionFrame,
    h: &InnerProduct,
    wd: &WeightDecomposition,
    vt: &[CMat],
    budget: usize,
    seed: u64,
) -> Result<Option<Destabilizer>> {
    if budget == 0 {
        return Err(Error::Config("destabilizer budget must be at least 1".into()));
    }
    let e = h.orthonormalizer()?;
    let md = moment_data_from_e(frame, &e, false)?;
    let scale = crate::linalg::frob_norm(&md.mu_bar);
    let (b, _) = project_vt(&project_s_t(&md.traceless(), wd), vt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = vec![b];
    for _ in 1..budget {
        let g = random_hermitian(&mut rng, frame.dim);
        candidates.push(project_vt(&project_s_t(&g, wd), vt)?.0);
    }
    for a in candidates.into_iter().take(budget) {
        let tr = frob_inner(&a, &a);
        if tr.sqrt() < 1e-8 * scale {
            continue;
        }
        let slope0 = frob_inner(&a, &md.mu_bar);
        if slope0.abs() < 1e-8 * tr.sqrt() * scale {
            continue;
        }
        let norm = op_norm(&a);
        let t_max = 0.9 * T_RANGE_GUARD / norm;
        let t_grid: Vec<f64> = (-5..=5).map(|i| i as f64 * t_max.min(1.0) / 5.0).collect();
        let profile = f_derivatives(frame, h, &a, &t_grid)?;
        let (f_slope, _, fit_residual) = linear_fit(&profile.t, &profile.f);
        let (f_dot_slope, _, _) = linear_fit(&profile.t, &profile.f_dot);
        let max_f_ddot = profile.f_ddot.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_f_ddot < 1e-8 * tr {
            let a_out = (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| [a[(i, j)].re, a[(i, j)].im]).collect()).collect();
            return Ok(Some(Destabilizer { a: a_out, trace_a_sq: tr, f_slope, f_dot_slope, max_f_ddot, fit_residual, profile }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bergman::{moment_data, Provenance};
    use crate::geometry::build_p1_backend;
    use crate::linalg::{diag, identity, random_positive};
    use crate::symmetry::{vt_basis, weight_blocks};

    fn round(k: u32) -> InnerProduct {
        let d: Vec<f64> = (0..=k).map(|j| (0..j).fold(1.0, |acc, i| acc * (i + 1) as f64 / (k - i) as f64)).collect();
        InnerProduct::new(diag(&d), k, Provenance::Initial).unwrap()
    }

    #[test]
    fn identity_generates_no_field() {
        let frame = build_p1_backend(3, 32, 16).unwrap();
        let split = xi_split(&frame, &round(3), &identity(4)).unwrap();
        assert!(split.xi_sq.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn torus_field_is_tangent() {
        let frame = build_p1_backend(4, 64, 128).unwrap();
        let wd = weight_blocks(&frame).unwrap();
        let a = vt_basis(&wd)[0].clone();
        let split = xi_split(&frame, &round(4), &a).unwrap();
        assert!(split.normal_l2().abs().sqrt() < 1e-8, "normal part {}", split.normal_l2());
        assert!(split.xi_l2() > 1.0);
    }

    #[test]
    fn pythagoras_for_random_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame = build_p1_backend(4, 32, 16).unwrap();
        let h = InnerProduct::new(random_positive(&mut rng, 5, 1.0), 4, Provenance::Initial).unwrap();
        let a = random_hermitian(&mut rng, 5);
        let split = xi_split(&frame, &h, &a).unwrap();
        assert!(split.pythagoras_defect() < 1e-10);
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let frame = build_p1_backend(3, 64, 128).unwrap();
        let h = InnerProduct::new(random_positive(&mut rng, 4, 0.5), 3, Provenance::Initial).unwrap();
        let a = traceless(&random_hermitian(&mut rng, 4)).scale(0.3);
        let d = 1e-4;
        let prof = f_derivatives(&frame, &h, &a, &[-d, 0.0, d]).unwrap();
        let fd = (prof.f_dot[2] - prof.f_dot[0]) / (2.0 * d);
        assert!((fd - prof.f_ddot[1]).abs() < 1e-6 * fd.abs().max(1e-3), "{fd} {}", prof.f_ddot[1]);
    }

    #[test]
    fn lem2_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frame = build_p1_backend(3, 16, 8).unwrap();
        let h = InnerProduct::new(random_positive(&mut rng, 4, 1.0), 3, Provenance::Initial).unwrap();
        let md = moment_data(&frame, &h).unwrap();
        let a = random_hermitian(&mut rng, 4);
        let b = random_hermitian(&mut rng, 4);
        for p in [0, 17, 100] {
            assert!(lem2_defect(&frame, &md, &a, &b, p).norm() < 1e-12);
        }
    }

    #[test]
    fn balanced_point_has_no_destabilizer() {
        let frame = build_p1_backend(4, 64, 128).unwrap();
        let wd = weight_blocks(&frame).unwrap();
        let vt = vt_basis(&wd);
        assert!(destabilizer_scan(&frame, &round(4), &wd, &vt, 3, 1).unwrap().is_none());
        assert!(destabilizer_scan(&frame, &round(4), &wd, &vt, 0, 1).is_err());
    }

    #[test]
    fn distortion_gate() {
        let frame = build_p1_backend(4, 64, 128).unwrap();
        let reference = crate::geometry::pullback_metric(&frame.clone(), &identity(5)).unwrap();
        let one = build_p1_backend(1, 64, 128).unwrap();
        let reference1 = crate::geometry::pullback_metric(&one, &identity(2)).unwrap();
        assert_eq!(reference.g.len(), reference1.g.len());
        let good = distortion_report(&frame, &round(4), &reference1, 2.0).unwrap();
        assert!(good.passes && good.r_upper < 1e-10);
        let bad = InnerProduct::new(diag(&[1.0, 1e6, 1.0, 1.0, 1.0]), 4, Provenance::Initial).unwrap();
        assert!(!distortion_report(&frame, &bad, &reference1, 2.0).unwrap().passes);
    }
}
