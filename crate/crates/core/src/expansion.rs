//! Asymptotic expansions in `k`: Berezin transform, density of states,
//! Hamiltonian normalization and the approximate solutions `F_l`.

use serde::Serialize;

use crate::bergman::{hilb, moment_data, moment_data_from_e, InnerProduct, MomentData, Quantizer};
use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::fit::{power_law_fit, richardson, weighted_pearson, weighted_slope, PowerFit};
use crate::geometry::{
    build_p1_backend, default_p1_resolution, laplacian, FiberMetric, GridFn, SectionFrame,
};
use crate::linalg::{frob_inner, hermitize, identity, op_norm, CMat};
use crate::symmetry::{hamiltonian_potential, hamiltonian_shift, lie_rep, vt_basis, weight_blocks};

/// A class-one potential perturbation as a function of the chart parameters.
pub type Perturbation<'a> = &'a dyn Fn(&[f64]) -> f64;

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionFit {
    pub observable: String,
    pub k_values: Vec<u32>,
    pub values: Vec<f64>,
    /// Spatial correlation of the rescaled profile with the comparison profile.
    pub correlations: Vec<Option<f64>>,
    /// Per-`k` least-squares constant against the comparison profile.
    pub constants: Vec<Option<f64>>,
    /// `None` when some value is not positive.
    pub fit: Option<PowerFit>,
}

impl ExpansionFit {
    fn new(observable: &str, k_values: Vec<u32>, values: Vec<f64>) -> Self {
        let n = k_values.len();
        let ks: Vec<f64> = k_values.iter().map(|k| *k as f64).collect();
        let fit = power_law_fit(&ks, &values).ok();
        Self { observable: observable.into(), k_values, values, correlations: vec![None; n], constants: vec![None; n], fit }
    }

    pub fn exponent(&self) -> Option<f64> {
        self.fit.map(|f| f.exponent)
    }

    /// Refit on a sub-range of `k`.
    pub fn refit(&self, k_min: u32, k_max: u32) -> Result<PowerFit> {
        let (ks, vs): (Vec<f64>, Vec<f64>) = self
            .k_values
            .iter()
            .zip(&self.values)
            .filter(|(k, _)| **k >= k_min && **k <= k_max)
            .map(|(k, v)| (*k as f64, *v))
            .unzip();
        power_law_fit(&ks, &vs)
    }

    pub fn at(&self, k: u32) -> Option<usize> {
        self.k_values.iter().position(|v| *v == k)
    }

    /// `k,value,profile_correlation` rows.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.k_values
            .iter()
            .zip(&self.values)
            .zip(&self.correlations)
            .map(|((k, v), c)| vec![k.to_string(), format!("{v:.17e}"), c.map(|c| format!("{c:.17e}")).unwrap_or_default()])
            .collect()
    }
}

/// ℙ¹ frames at the default resolution for each `k`.
pub fn p1_frames(ks: &[u32]) -> Result<Vec<SectionFrame>> {
    ks.iter()
        .map(|&k| {
            let (nt, np) = default_p1_resolution(k);
            build_p1_backend(k, nt, np)
        })
        .collect()
}

fn check_family(frames: &[SectionFrame], min: usize) -> Result<Vec<u32>> {
    if frames.len() < min {
        return Err(Error::Config(format!("need at least {min} values of k, got {}", frames.len())));
    }
    Ok(frames.iter().map(|f| f.level_k).collect())
}

fn perturbed(frame: &SectionFrame, psi: Perturbation) -> FiberMetric {
    FiberMetric::perturbed_round(frame, &frame.eval(psi))
}

fn weighted_rms(f: &[f64], mass: &[f64]) -> f64 {
    let total: f64 = mass.iter().sum();
    let mean = f.iter().zip(mass).map(|(v, m)| v * m).sum::<f64>() / total;
    (f.iter().zip(mass).map(|(v, m)| (v - mean).powi(2) * m).sum::<f64>() / total).sqrt()
}

/// Class-one Laplacian of `f` from the class-`k` metric data of `ω_h`.
fn class_one_laplacian(frame: &SectionFrame, qz: &Quantizer, f: &[f64]) -> Result<GridFn> {
    let k = frame.level_k as f64;
    Ok(laplacian(&frame.grid, &qz.kd, f)?.into_iter().map(|v| k * v).collect())
}

/// Berezin defect `B_k f − f` against the calibrated `q₁(f)/k`.
pub fn verify_hq(frames: &[SectionFrame], psi: Perturbation, f: Perturbation, cal: &Calibration) -> Result<ExpansionFit> {
    let ks = check_family(frames, 4)?;
    let mut values = Vec::new();
    let mut corr = Vec::new();
    let mut consts = Vec::new();
    for frame in frames {
        let qz = Quantizer::new(frame, &perturbed(frame, psi))?;
        let fv = frame.eval(f);
        let b = qz.berezin(&fv);
        let k = frame.level_k as f64;
        let defect: Vec<f64> = b.iter().zip(&fv).map(|(a, b)| k * (a - b)).collect();
        let lap = class_one_laplacian(frame, &qz, &fv)?;
        let target: Vec<f64> = lap.iter().map(|v| cal.gamma_q * v).collect();
        values.push(defect.iter().zip(&qz.mass).map(|(v, m)| v * v * m).sum::<f64>().sqrt() / k);
        let varies = weighted_rms(&target, &qz.mass) > 1e-12;
        corr.push(varies.then(|| weighted_pearson(&defect, &target, &qz.mass)));
        consts.push(varies.then(|| weighted_slope(&lap, &defect, &qz.mass)));
    }
    let mut out = ExpansionFit::new("berezin_defect_l2", ks, values);
    out.correlations = corr;
    out.constants = consts;
    Ok(out)
}

/// `k(ρ̃_k − 1)` against the calibrated `−S`; values are the RMS variation of `ρ̃_k`.
pub fn verify_tyz(frames: &[SectionFrame], psi: Perturbation, cal: &Calibration) -> Result<ExpansionFit> {
    let ks = check_family(frames, 1)?;
    let mut values = Vec::new();
    let mut corr = Vec::new();
    let mut consts = Vec::new();
    for frame in frames {
        let qz = Quantizer::new(frame, &perturbed(frame, psi))?;
        let rt = crate::bergman::rho_tilde_from(frame, &qz)?;
        let k = frame.level_k as f64;
        let profile: Vec<f64> = rt.iter().map(|v| k * (v - 1.0)).collect();
        let s = qz.kd.scalar_curv.clone().ok_or_else(|| Error::Unsupported("scalar curvature unavailable".into()))?;
        let minus_s: Vec<f64> = s.iter().map(|v| -k * v).collect();
        let target: Vec<f64> = minus_s.iter().map(|v| cal.gamma_a * v).collect();
        values.push(weighted_rms(&rt, &qz.mass));
        let varies = weighted_rms(&target, &qz.mass) > 1e-8;
        corr.push(varies.then(|| weighted_pearson(&profile, &target, &qz.mass)));
        consts.push(varies.then(|| weighted_slope(&minus_s, &profile, &qz.mass)));
    }
    let mut out = ExpansionFit::new("rho_tilde_variation", ks, values);
    out.correlations = corr;
    out.constants = consts;
    Ok(out)
}

/// Torus generator `index` in the `Hilb_k(h)`-orthonormal basis `ŝ = E z`.
fn generator_in_basis(frame: &SectionFrame, e: &CMat, index: usize) -> Result<CMat> {
    let wd = weight_blocks(frame)?;
    let a = lie_rep(&wd, index)?.a;
    let einv = e.clone().try_inverse().ok_or(Error::NotPositive)?;
    Ok(hermitize(&(e * a * einv)))
}

/// `c_A(k) = V⁻¹ ∫ H_k(A) ω` for the torus generator `index`.
pub fn c_a(frame: &SectionFrame, h: &FiberMetric, index: usize) -> Result<(f64, f64)> {
    let qz = Quantizer::new(frame, h)?;
    let e = qz.hilb.orthonormalizer()?;
    let a = generator_in_basis(frame, &e, index)?;
    let hk = qz.h(&a);
    let total: f64 = qz.mass.iter().sum();
    let c = hk.iter().zip(&qz.mass).map(|(v, m)| v * m).sum::<f64>() / total;
    Ok((c, frob_inner(&a, &a)))
}

/// `|c_A(k)| / tr(A²)^{1/2}` across `k`.
pub fn c_a_decay(frames: &[SectionFrame], psi: Perturbation, index: usize) -> Result<ExpansionFit> {
    let ks = check_family(frames, 2)?;
    let values = frames
        .iter()
        .map(|frame| c_a(frame, &perturbed(frame, psi), index).map(|(c, tr)| c.abs() / tr.sqrt()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpansionFit::new("c_A_ratio", ks, values))
}

/// Normalized class-one Hamiltonian `H_X` of torus generator `index` for `ω_h`,
/// from the Fubini–Study Hamiltonian of `h0` shifted by the potential difference.
pub fn hamiltonian_for(frame: &SectionFrame, h: &FiberMetric, h0: &InnerProduct, index: usize) -> Result<GridFn> {
    let md0 = moment_data(frame, h0)?;
    let a0 = generator_in_basis(frame, &md0.e, index)?;
    let base = hamiltonian_potential(&md0, &a0)?;
    let fs0 = crate::bergman::fs(frame, h0)?;
    let dphi: Vec<f64> = h.phi.iter().zip(&fs0.phi).map(|(a, b)| a - b).collect();
    let shifted = hamiltonian_shift(&frame.grid, &md0.kd, &base, &dphi)?;
    let kd = crate::geometry::metric_from_potential(frame, h)?;
    let k = frame.level_k as f64;
    let mean = crate::geometry::average(&frame.grid, &kd, &shifted);
    Ok(shifted.into_iter().map(|v| (v - mean) / k).collect())
}

/// `F_0 = H_X`, `F_1 = H_X − k⁻¹ q₁(H_X)`; `lap_hx` is the class-one Laplacian of `H_X`.
pub fn build_f_l(hx: &[f64], lap_hx: &[f64], l: u32, k: u32, cal: &Calibration) -> Result<GridFn> {
    match l {
        0 => Ok(hx.to_vec()),
        1 => Ok(hx.iter().zip(lap_hx).map(|(h, d)| h - cal.gamma_q * d / k as f64).collect()),
        _ => Err(Error::Unsupported(format!("F_{l} needs expansion terms beyond first order"))),
    }
}

/// Least-squares residual `min_c tr((M − cI)²)` and the optimal `c`.
pub fn identity_residual(m: &CMat) -> (f64, f64) {
    let n = m.nrows() as f64;
    let c = crate::linalg::trace(m).re / n;
    let d = m - identity(m.nrows()).scale(c);
    (frob_inner(&d, &d), c)
}

#[derive(Debug, Clone, Serialize)]
pub struct Thm2Report {
    pub orders: Vec<ExpansionFit>,
    /// `tr((Q_k(F_l) − k⁻¹A)²)` without the identity shift, per order.
    pub unshifted: Vec<Vec<f64>>,
}

/// `tr((Q_k(F_l) − k⁻¹A − c_k I)²)` for `l = 0, 1`, with `Q_k` normalized so `Q_k(1) = I`.
pub fn thm2_residual(frames: &[SectionFrame], psi: Perturbation, h0_of: &dyn Fn(&SectionFrame) -> Result<InnerProduct>, index: usize, cal: &Calibration) -> Result<Thm2Report> {
    let ks = check_family(frames, 2)?;
    let mut vals = vec![Vec::new(), Vec::new()];
    let mut raw = vec![Vec::new(), Vec::new()];
    for frame in frames {
        let h = perturbed(frame, psi);
        let qz = Quantizer::new(frame, &h)?;
        let e = qz.hilb.orthonormalizer()?;
        let a = generator_in_basis(frame, &e, index)?;
        let hx = hamiltonian_for(frame, &h, &h0_of(frame)?, index)?;
        let lap = class_one_laplacian(frame, &qz, &hx)?;
        let k = frame.level_k as f64;
        let pref = frame.dim as f64 / frame.volume_v;
        for l in 0..2u32 {
            let f = build_f_l(&hx, &lap, l, frame.level_k, cal)?;
            let m = qz.q(&f).scale(pref) - a.scale(1.0 / k);
            let (res, _) = identity_residual(&m);
            vals[l as usize].push(res);
            raw[l as usize].push(frob_inner(&m, &m));
        }
    }
    let orders = vals.into_iter().enumerate().map(|(l, v)| ExpansionFit::new(&format!("thm2_residual_l{l}"), ks.clone(), v)).collect();
    Ok(Thm2Report { orders, unshifted: raw })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivariantTrace {
    pub k_values: Vec<u32>,
    pub trace_sq: Vec<f64>,
    /// `∫ H_X² ω` of the class-one reference metric, per `k`.
    pub integral: Vec<f64>,
    /// `tr(A_k²) / (k^{n+2} ∫ H_X² ω)`.
    pub gamma_raw: Vec<f64>,
    /// Second-order Richardson estimate from the three values ending at each `k` (from the third on).
    pub gamma_extrapolated: Vec<Option<f64>>,
}

/// `tr(A_k²)` of torus generator `index` against its equivariant leading term.
/// `h0_of` gives the reference inner product at each level.
pub fn equivariant_trace_check(frames: &[SectionFrame], h0_of: &dyn Fn(&SectionFrame) -> Result<InnerProduct>, index: usize) -> Result<EquivariantTrace> {
    let ks = check_family(frames, 1)?;
    let mut trace_sq = Vec::new();
    let mut integral = Vec::new();
    let mut gamma_raw = Vec::new();
    for frame in frames {
        let wd = weight_blocks(frame)?;
        let a = lie_rep(&wd, index)?.a;
        let md = moment_data(frame, &h0_of(frame)?)?;
        let a_hat = generator_in_basis(frame, &md.e, index)?;
        let k = frame.level_k as f64;
        let hx: Vec<f64> = hamiltonian_potential(&md, &a_hat)?.into_iter().map(|v| v / k).collect();
        let int: f64 = hx.iter().zip(&md.mass).map(|(v, m)| v * v * m).sum();
        let tr = frob_inner(&a, &a);
        let n = frame.n_coords() as i32;
        trace_sq.push(tr);
        integral.push(int);
        gamma_raw.push(tr / k.powi(n + 2) / int);
    }
    let kf: Vec<f64> = ks.iter().map(|k| *k as f64).collect();
    let gamma_extrapolated = (0..ks.len())
        .map(|i| (i >= 2).then(|| richardson(&kf[i - 2..=i], &gamma_raw[i - 2..=i], 2).ok()).flatten())
        .collect();
    Ok(EquivariantTrace { k_values: ks, trace_sq, integral, gamma_raw, gamma_extrapolated })
}

/// `tr(A_k²)` on ℙ¹ for the centered weights.
pub fn p1_trace_closed_form(k: u32) -> f64 {
    let k = k as f64;
    k * (k + 1.0) * (k + 2.0) / 12.0
}

/// `‖M‖_op / D` for `μ̄ = D·I + M`.
pub fn moment_deviation_ratio(md: &MomentData) -> f64 {
    op_norm(&md.traceless()) / md.c_value
}

/// `‖μ̄ − cI‖_op / c` at `Hilb_k(h)` across `k`.
pub fn moment_deviation_decay(frames: &[SectionFrame], psi: Perturbation) -> Result<ExpansionFit> {
    let ks = check_family(frames, 2)?;
    let values = frames
        .iter()
        .map(|frame| {
            let hb = hilb(frame, &perturbed(frame, psi))?;
            Ok(moment_deviation_ratio(&moment_data(frame, &hb)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpansionFit::new("moment_deviation_ratio", ks, values))
}

#[derive(Debug, Clone, Serialize)]
pub struct Cor51Report {
    pub fit: ExpansionFit,
    /// `‖μ̄ − cI‖_op / c` before removing the `V(T)` part.
    pub raw: Vec<f64>,
}

/// `‖μ̄ − B(k) − c(k)I‖_op / c(k)` at `Hilb_k(h)`, with `B(k) ∈ V(T)` and `c(k)`
/// the least-squares choices.
pub fn cor51_residual(frames: &[SectionFrame], psi: Perturbation) -> Result<Cor51Report> {
    let ks = check_family(frames, 2)?;
    let mut values = Vec::new();
    let mut raw = Vec::new();
    for frame in frames {
        let hb = hilb(frame, &perturbed(frame, psi))?;
        let e = hb.orthonormalizer()?;
        let md = moment_data_from_e(frame, &e, false)?;
        let wd = weight_blocks(frame)?;
        let einv = e.clone().try_inverse().ok_or(Error::NotPositive)?;
        let basis: Vec<CMat> = vt_basis(&wd).into_iter().map(|b| hermitize(&(&e * b * &einv))).collect();
        let m = md.traceless();
        let (_, rest) = crate::symmetry::project_vt(&m, &basis)?;
        values.push(op_norm(&rest) / md.c_value);
        raw.push(op_norm(&m) / md.c_value);
    }
    Ok(Cor51Report { fit: ExpansionFit::new("cor51_residual", ks, values), raw })
}
