//! Balanced and relatively balanced solvers.

use serde::{Deserialize, Serialize};

use crate::bergman::{moment_data, InnerProduct, MomentData, Provenance};
use crate::error::{Error, Result};
use crate::geometry::SectionFrame;
use crate::linalg::{c, eigvals, expm_herm, frob_norm, herm_apply, hermitize, op_norm, unit_det, CMat};
use crate::symmetry::{project_s_t, project_vt, WeightDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// `H ← T(H)`.
    Titer,
    /// Armijo descent on the Kempf–Ness functional.
    Descent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    /// Line search could not decrease the functional; the last iterate is kept.
    Stalled,
    Diverged,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: SolveMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 2000, mode: SolveMode::Titer }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub iteration: usize,
    pub balanced: f64,
    pub relative: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterates: usize,
    pub residual_history: Vec<ResidualRecord>,
    pub final_h: InnerProduct,
    /// `V(T)` component of `μ̄ − cI` at the last iterate (orthonormal basis).
    pub b_matrix: CMat,
    pub status: SolveStatus,
    pub message: Option<String>,
}

/// `‖μ̄ − cI‖_F / ‖μ̄‖_F`.
pub fn balanced_residual(md: &MomentData) -> f64 {
    frob_norm(&md.traceless()) / frob_norm(&md.mu_bar)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeResidual {
    /// `‖P_{V(T)⊥} P_{s_T}(μ̄ − cI)‖_F / ‖μ̄‖_F`.
    pub relative: f64,
    /// Size of the component of `μ̄ − cI` outside `s_T`.
    pub off_s_t: f64,
}

pub fn relative_residual(md: &MomentData, wd: &WeightDecomposition, basis: &[CMat]) -> Result<RelativeResidual> {
    let m = md.traceless();
    let st = project_s_t(&m, wd);
    let (_, perp) = project_vt(&st, basis)?;
    let scale = frob_norm(&md.mu_bar);
    Ok(RelativeResidual { relative: frob_norm(&perp) / scale, off_s_t: frob_norm(&(&m - &st)) / scale })
}

/// `(V(T) part, V(T)⊥ part)` of `P_{s_T}(μ̄ − cI)`.
fn split_gradient(md: &MomentData, wd: &WeightDecomposition, basis: &[CMat]) -> Result<(CMat, CMat)> {
    project_vt(&project_s_t(&md.traceless(), wd), basis)
}

/// Kempf–Ness functional difference between the metrics of two moment data
/// sets on the same frame: `(k/2)·(n+1)!⁻¹ ∫ φ Σ_j ω₀^j ∧ ω₁^{n−j}` with
/// `φ = k⁻¹ log(|ŝ₁|²/|ŝ₀|²)` and `ω_i = ω_FS,i/k`. The caller supplies
/// `φ` directly (computed stably from the step).
pub fn kempf_ness_difference(frame: &SectionFrame, md0: &MomentData, md1: &MomentData, phi: &[f64]) -> f64 {
    let k = frame.level_k as f64;
    let n = md0.kd.n;
    let mut acc = 0.0;
    for p in 0..frame.n_points() {
        let g0 = md0.kd.g_at(p).scale(1.0 / k);
        let g1 = md1.kd.g_at(p).scale(1.0 / k);
        let mixed: f64 = if n == 1 {
            g0[(0, 0)].re + g1[(0, 0)].re
        } else {
            mixed_volume_sum(&g0, &g1)
        };
        acc += frame.grid.weights[p] * phi[p] * mixed;
    }
    k * 2f64.powi(n as i32) / (2.0 * (n + 1) as f64) * acc
}

/// `Σ_j c_j / C(n, j)` for `det(s·g0 + g1) = Σ_j c_j s^j`.
fn mixed_volume_sum(g0: &CMat, g1: &CMat) -> f64 {
    let n = g0.nrows();
    // interpolate the degree-n polynomial at s = 0..n
    let samples: Vec<f64> = (0..=n)
        .map(|s| eigvals(&hermitize(&(g0.scale(s as f64) + g1))).iter().product())
        .collect();
    let mut vand = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
    for s in 0..=n {
        for j in 0..=n {
            vand[(s, j)] = (s as f64).powi(j as i32);
        }
    }
    let coef = vand.lu().solve(&nalgebra::DVector::from_vec(samples)).expect("Vandermonde is invertible");
    let mut binom = 1.0;
    let mut total = 0.0;
    for j in 0..=n {
        total += coef[j] / binom;
        binom = binom * (n - j) as f64 / (j + 1) as f64;
    }
    total
}

/// `H` after moving the orthonormal frame by `ŝ ← e^{−ηP} ŝ`, at unit determinant.
fn step_inner_product(h: &InnerProduct, md: &MomentData, p: &CMat, eta: f64) -> Result<InnerProduct> {
    let l = md.e.clone().try_inverse().ok_or(Error::NotPositive)?;
    let next = &l * expm_herm(p, 2.0 * eta) * l.adjoint();
    InnerProduct::new(unit_det(&hermitize(&next)), h.level_k, Provenance::Iterate)
}

/// Relative potential `k⁻¹ log(u† e^{−2ηP} u)` of the step, without cancellation.
fn step_potential(md: &MomentData, p: &CMat, eta: f64, k: f64) -> Vec<f64> {
    let m = herm_apply(p, |v| (-2.0 * eta * v).exp_m1());
    let dim = md.dim;
    (0..md.n_points())
        .map(|q| {
            let u = md.u_at(q);
            let mut acc = c(0.0);
            for i in 0..dim {
                for j in 0..dim {
                    acc += u[i].conj() * m[(i, j)] * u[j];
                }
            }
            acc.re.ln_1p() / k
        })
        .collect()
}

fn zero_small(p: &mut CMat) {
    for v in p.iter_mut() {
        if v.re.abs() < 1e-14 {
            v.re = 0.0;
        }
        if v.im.abs() < 1e-14 {
            v.im = 0.0;
        }
    }
}

struct Descent {
    armijo_c: f64,
    shrink: f64,
    max_backtracks: usize,
}

const DESCENT: Descent = Descent { armijo_c: 1e-4, shrink: 0.5, max_backtracks: 60 };

/// One Armijo step along `−P`; returns the accepted inner product. When the
/// functional change drops below its rounding level, the first step that
/// reduces `merit` (the norm of the projected gradient) is accepted instead.
fn armijo_step(
    frame: &SectionFrame,
    h: &InnerProduct,
    md: &MomentData,
    p: &CMat,
    merit: &dyn Fn(&MomentData) -> Result<f64>,
) -> Result<(InnerProduct, MomentData)> {
    let k = frame.level_k as f64;
    let norm_op = op_norm(p);
    let slope = frob_norm(p).powi(2);
    let mut eta = 1.0 / (k * norm_op);
    let current = frob_norm(p);
    let mut fallback = None;
    for _ in 0..DESCENT.max_backtracks {
        let candidate = step_inner_product(h, md, p, eta)?;
        let md1 = moment_data(frame, &candidate)?;
        let phi = step_potential(md, p, eta, k);
        let decrease = kempf_ness_difference(frame, md, &md1, &phi);
        if decrease <= -DESCENT.armijo_c * eta * slope {
            return Ok((candidate, md1));
        }
        // below rounding of the functional: accept a step that shrinks the gradient
        if fallback.is_none() && decrease.abs() < 1e-13 * frame.volume_v.max(1.0) {
            if merit(&md1)? < current {
                fallback = Some((candidate.clone(), md1.clone()));
            }
        }
        eta *= DESCENT.shrink;
    }
    fallback.ok_or_else(|| Error::Validation("line search failed to find a descent step".into()))
}

fn finish(
    h: InnerProduct,
    md: &MomentData,
    history: Vec<ResidualRecord>,
    status: SolveStatus,
    wd: Option<(&WeightDecomposition, &[CMat])>,
    message: Option<String>,
) -> Result<SolveReport> {
    let b_matrix = match wd {
        Some((wd, basis)) => split_gradient(md, wd, basis)?.0,
        None => CMat::zeros(md.dim, md.dim),
    };
    Ok(SolveReport { iterates: history.len().saturating_sub(1), residual_history: history, final_h: h, b_matrix, status, message })
}

/// Balanced solver from `h0`.
pub fn solve_balanced(frame: &SectionFrame, h0: &InnerProduct, opts: &SolveOptions) -> Result<SolveReport> {
    let mut h = InnerProduct::new(unit_det(&h0.h), h0.level_k, Provenance::Iterate)?;
    let mut history = Vec::new();
    let pref = frame.dim as f64 / frame.volume_v;
    for it in 0..=opts.max_iter {
        let md = match moment_data(frame, &h) {
            Ok(md) => md,
            Err(e) => return diverged(h, history, e),
        };
        let r = balanced_residual(&md);
        history.push(ResidualRecord { iteration: it, balanced: r, relative: r });
        if r < opts.tol {
            return finish(h, &md, history, SolveStatus::Converged, None, None);
        }
        if it == opts.max_iter {
            return finish(h, &md, history, SolveStatus::MaxIter, None, None);
        }
        let next = match opts.mode {
            SolveMode::Titer => {
                // E·T(H)·E† = (N+1)/V · μ̄
                let l = md.e.clone().try_inverse().ok_or(Error::NotPositive)?;
                let t = (&l * md.mu_bar.scale(pref) * l.adjoint()).map(|v| v);
                InnerProduct::new(unit_det(&hermitize(&t)), h.level_k, Provenance::Iterate)
            }
            SolveMode::Descent => {
                let mut p = md.traceless();
                zero_small(&mut p);
                armijo_step(frame, &h, &md, &p, &|m: &MomentData| Ok(frob_norm(&m.traceless()))).map(|(h, _)| h)
            }
        };
        h = match next {
            Ok(h) => h,
            Err(Error::Validation(msg)) => return finish(h, &md, history, SolveStatus::Stalled, None, Some(msg)),
            Err(e) => return diverged(h, history, e),
        };
    }
    unreachable!()
}

fn diverged(h: InnerProduct, history: Vec<ResidualRecord>, e: Error) -> Result<SolveReport> {
    let dim = h.dim();
    Ok(SolveReport {
        iterates: history.len(),
        residual_history: history,
        final_h: h,
        b_matrix: CMat::zeros(dim, dim),
        status: SolveStatus::Diverged,
        message: Some(e.to_string()),
    })
}

/// Projected descent for relatively balanced metrics.
pub fn solve_relative(
    frame: &SectionFrame,
    h0: &InnerProduct,
    wd: &WeightDecomposition,
    basis: &[CMat],
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let mut h = InnerProduct::new(unit_det(&h0.h), h0.level_k, Provenance::Iterate)?;
    let mut history = Vec::new();
    let mut md = moment_data(frame, &h)?;
    for it in 0..=opts.max_iter {
        let bal = balanced_residual(&md);
        let rel = relative_residual(&md, wd, basis)?;
        history.push(ResidualRecord { iteration: it, balanced: bal, relative: rel.relative });
        if rel.relative < opts.tol {
            return finish(h, &md, history, SolveStatus::Converged, Some((wd, basis)), None);
        }
        if it == opts.max_iter {
            return finish(h, &md, history, SolveStatus::MaxIter, Some((wd, basis)), None);
        }
        let (_, mut p) = split_gradient(&md, wd, basis)?;
        zero_small(&mut p);
        match armijo_step(frame, &h, &md, &p, &|m: &MomentData| Ok(frob_norm(&split_gradient(m, wd, basis)?.1))) {
            Ok((h1, md1)) => {
                h = h1;
                md = md1;
            }
            Err(Error::Validation(msg)) => {
                return finish(h, &md, history, SolveStatus::Stalled, Some((wd, basis)), Some(msg));
            }
            Err(e) => return diverged(h, history, e),
        }
    }
    unreachable!()
}

#[derive(Debug, Clone)]
pub struct OrbitMatch {
    pub t: Vec<f64>,
    /// `‖log K̂₁(t) − log K̂₂‖_F` for unit-determinant Gram inverses.
    pub distance: f64,
    /// Spectral distance between the two `μ̄`.
    pub mu_bar_distance: f64,
    pub converged: bool,
}

/// Matches `H2` against torus translates of `H1`. The torus acts on the
/// reference sections by `z ↦ e^{Σ t_i D_i} z`, i.e. `K ↦ e^{tD} K e^{tD}`
/// with `D_i` the centered weight matrices.
pub fn orbit_match(frame: &SectionFrame, h1: &InnerProduct, h2: &InnerProduct, wd: &WeightDecomposition) -> Result<OrbitMatch> {
    let basis = crate::symmetry::vt_basis(wd);
    let r = basis.len();
    let k1 = h1.h.clone().try_inverse().ok_or(Error::NotPositive)?;
    let k2 = h2.h.clone().try_inverse().ok_or(Error::NotPositive)?;
    let log_unit = |m: &CMat| herm_apply(&unit_det(&hermitize(m)), f64::ln);
    let target = log_unit(&k2);
    let translate = |t: &[f64]| -> CMat {
        let mut d = CMat::zeros(h1.dim(), h1.dim());
        for (b, ti) in basis.iter().zip(t) {
            d += b.scale(*ti);
        }
        let e = expm_herm(&d, 1.0);
        &e * &k1 * &e
    };
    let residual = |t: &[f64]| -> CMat { log_unit(&translate(t)) - &target };
    // initial guess from the diagonal of the log-difference
    let base = residual(&vec![0.0; r]);
    let mut t = vec![0.0; r];
    if r > 0 {
        let mut gram = nalgebra::DMatrix::<f64>::zeros(r, r);
        let mut rhs = nalgebra::DVector::<f64>::zeros(r);
        for i in 0..r {
            for j in 0..r {
                gram[(i, j)] = 2.0 * crate::linalg::frob_inner(&basis[i], &basis[j]) * 2.0;
            }
            rhs[i] = -2.0 * crate::linalg::frob_inner(&basis[i], &base);
        }
        if let Some(sol) = gram.clone().lu().solve(&rhs) {
            t = sol.iter().copied().collect();
        }
    }
    // Gauss–Newton with finite-difference Jacobian
    let mut converged = r == 0;
    for _ in 0..50 {
        if r == 0 {
            break;
        }
        let f0 = residual(&t);
        let h = 1e-6;
        let cols: Vec<CMat> = (0..r)
            .map(|i| {
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp[i] += h;
                tm[i] -= h;
                (residual(&tp) - residual(&tm)).scale(0.5 / h)
            })
            .collect();
        let mut jtj = nalgebra::DMatrix::<f64>::zeros(r, r);
        let mut jtf = nalgebra::DVector::<f64>::zeros(r);
        for i in 0..r {
            for j in 0..r {
                jtj[(i, j)] = crate::linalg::frob_inner(&cols[i], &cols[j]);
            }
            jtf[i] = crate::linalg::frob_inner(&cols[i], &f0);
        }
        let Some(delta) = jtj.lu().solve(&jtf) else { break };
        for i in 0..r {
            t[i] -= delta[i];
        }
        if delta.norm() < 1e-13 * (1.0 + t.iter().map(|v| v * v).sum::<f64>().sqrt()) {
            converged = true;
            break;
        }
    }
    let distance = frob_norm(&residual(&t));
    let md1 = moment_data(frame, h1)?;
    let md2 = moment_data(frame, h2)?;
    let s1 = eigvals(&md1.mu_bar);
    let s2 = eigvals(&md2.mu_bar);
    let mu_bar_distance = s1.iter().zip(&s2).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(OrbitMatch { t, distance, mu_bar_distance, converged })
}
