//! Discretized polarized manifolds: quadrature grids, holomorphic section
//! frames, pulled-back Fubini–Study data and differential operators.
//!
//! Every chart carries a holomorphic coordinate `w` per complex dimension.
//! Grid weights are the Lebesgue measure `dRe(w) dIm(w)` of the chart, so a
//! Kähler metric `g_{ab̄}` integrates with density `2^n det g` (the
//! Riemannian volume `ωⁿ/n!`).
//!
//! The ℙ¹ chart is `w = tan(θ/2) e^{iφ}` on a Gauss–Legendre(cos θ) × uniform(φ)
//! grid. Smooth functions on the sphere are differentiated spectrally in
//! `(cos θ, φ)`; potentials are split into the analytic reference part
//! `Σ log(1 + |w|²)` and a smooth remainder.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{c, eigvals, CMat, C64};
use crate::quadrature::{fourier_diff_matrices, gauss_legendre, legendre_diff_matrix, DiffMatrix};

/// Real function sampled on the grid points.
pub type GridFn = Vec<f64>;

#[derive(Debug, Clone)]
pub struct SphereChart {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Gauss–Legendre nodes in `x = cos θ`, ascending.
    pub x: Vec<f64>,
    dx: DiffMatrix,
    /// `∂_x (1 − x²) ∂_x` as one matrix, rows summing to zero.
    lx: DiffMatrix,
    dphi: DiffMatrix,
    dphi2: DiffMatrix,
}

#[derive(Debug, Clone)]
pub enum Chart {
    Sphere(SphereChart),
    Product(Box<ChartGrid>, Box<ChartGrid>),
    /// User-supplied points without neighbour topology.
    Sampled,
}

#[derive(Debug, Clone)]
pub struct ChartGrid {
    pub chart_id: usize,
    /// Complex dimension `n`.
    pub n_coords: usize,
    pub params: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Holomorphic chart coordinates per point (empty for sampled grids).
    pub coords: Vec<Vec<C64>>,
    /// Periodicity flag per real parameter axis.
    pub periodic: Vec<bool>,
    pub chart: Chart,
}

impl ChartGrid {
    pub fn sphere(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 2 || n_phi < 2 || n_phi % 2 != 0 {
            return Err(Error::Config(format!(
                "sphere grid needs n_theta ≥ 2 and even n_phi ≥ 2 (got {n_theta}×{n_phi})"
            )));
        }
        let (x, wx) = gauss_legendre(n_theta);
        let dx = legendre_diff_matrix(&x, &wx);
        let lx = legendre_operator(&dx, &x);
        let (dphi, dphi2) = fourier_diff_matrices(n_phi);
        let dphi_step = 2.0 * PI / n_phi as f64;
        let mut params = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let mut coords = Vec::with_capacity(n_theta * n_phi);
        for (xi, wi) in x.iter().zip(&wx) {
            let theta = xi.acos();
            let r = ((1.0 - xi) / (1.0 + xi)).sqrt();
            for j in 0..n_phi {
                let phi = dphi_step * j as f64;
                params.push(vec![theta, phi]);
                // dA(w) = (1 + |w|²)²/4 · d(cos θ) dφ
                weights.push(wi * dphi_step / ((1.0 + xi) * (1.0 + xi)));
                coords.push(vec![C64::from_polar(r, phi)]);
            }
        }
        Ok(Self {
            chart_id: 0,
            n_coords: 1,
            params,
            weights,
            coords,
            periodic: vec![false, true],
            chart: Chart::Sphere(SphereChart { n_theta, n_phi, x, dx, lx, dphi, dphi2 }),
        })
    }

    pub fn product(a: &ChartGrid, b: &ChartGrid) -> Self {
        let (pa, pb) = (a.len(), b.len());
        let mut params = Vec::with_capacity(pa * pb);
        let mut weights = Vec::with_capacity(pa * pb);
        let mut coords = Vec::with_capacity(pa * pb);
        for i in 0..pa {
            for j in 0..pb {
                params.push([a.params[i].as_slice(), b.params[j].as_slice()].concat());
                weights.push(a.weights[i] * b.weights[j]);
                if !a.coords.is_empty() && !b.coords.is_empty() {
                    coords.push([a.coords[i].as_slice(), b.coords[j].as_slice()].concat());
                }
            }
        }
        Self {
            chart_id: 0,
            n_coords: a.n_coords + b.n_coords,
            params,
            weights,
            coords,
            periodic: [a.periodic.as_slice(), b.periodic.as_slice()].concat(),
            chart: Chart::Product(Box::new(a.clone()), Box::new(b.clone())),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn supports_derivatives(&self) -> bool {
        match &self.chart {
            Chart::Sphere(_) => true,
            Chart::Product(a, b) => a.supports_derivatives() && b.supports_derivatives(),
            Chart::Sampled => false,
        }
    }

    /// `Σ_p f(p)·density(p)·weight(p)`, summed in index order.
    pub fn integrate(&self, f: &[f64], density: &[f64]) -> f64 {
        let mut acc = 0.0;
        for p in 0..self.len() {
            acc += f[p] * density[p] * self.weights[p];
        }
        acc
    }

    /// Reference potential `Σ_a log(1 + |w_a|²)`.
    pub fn reference_potential(&self) -> GridFn {
        self.coords
            .iter()
            .map(|w| w.iter().map(|wa| (1.0 + wa.norm_sqr()).ln()).sum())
            .collect()
    }

    /// `∂_a ∂_b̄ Σ_c log(1 + |w_c|²)` (diagonal), flattened `P × n × n`.
    pub fn reference_ddbar(&self) -> Vec<C64> {
        let n = self.n_coords;
        let mut out = vec![C64::new(0.0, 0.0); self.len() * n * n];
        for (p, w) in self.coords.iter().enumerate() {
            for a in 0..n {
                let s = 1.0 + w[a].norm_sqr();
                out[p * n * n + a * n + a] = c(1.0 / (s * s));
            }
        }
        out
    }

    fn require_derivatives(&self) -> Result<()> {
        if self.supports_derivatives() {
            Ok(())
        } else {
            Err(Error::Unsupported(
                "differential operators need a structured chart; sampled frames only support algebraic metrics".into(),
            ))
        }
    }

    /// Holomorphic and antiholomorphic first derivatives of a real function,
    /// each flattened `P × n`.
    pub fn d_holo(&self, f: &[f64]) -> Result<(Vec<C64>, Vec<C64>)> {
        self.require_derivatives()?;
        Ok(match &self.chart {
            Chart::Sphere(s) => sphere_d_holo(s, &self.coords, f),
            Chart::Product(a, b) => {
                let (pa, pb) = (a.len(), b.len());
                let (na, nb) = (a.n_coords, b.n_coords);
                let n = na + nb;
                let mut dw = vec![C64::new(0.0, 0.0); self.len() * n];
                let mut dwb = dw.clone();
                let mut slice = vec![0.0; pa];
                for j in 0..pb {
                    for i in 0..pa {
                        slice[i] = f[i * pb + j];
                    }
                    let (u, v) = a.d_holo(&slice)?;
                    for i in 0..pa {
                        for c in 0..na {
                            dw[(i * pb + j) * n + c] = u[i * na + c];
                            dwb[(i * pb + j) * n + c] = v[i * na + c];
                        }
                    }
                }
                for i in 0..pa {
                    let (u, v) = b.d_holo(&f[i * pb..(i + 1) * pb])?;
                    for j in 0..pb {
                        for c in 0..nb {
                            dw[(i * pb + j) * n + na + c] = u[j * nb + c];
                            dwb[(i * pb + j) * n + na + c] = v[j * nb + c];
                        }
                    }
                }
                (dw, dwb)
            }
            Chart::Sampled => unreachable!(),
        })
    }

    fn d_holo_complex(&self, f: &[C64]) -> Result<(Vec<C64>, Vec<C64>)> {
        let re: Vec<f64> = f.iter().map(|z| z.re).collect();
        let im: Vec<f64> = f.iter().map(|z| z.im).collect();
        let (a, b) = self.d_holo(&re)?;
        let (c2, d) = self.d_holo(&im)?;
        let i = C64::new(0.0, 1.0);
        Ok((
            a.iter().zip(&c2).map(|(x, y)| x + i * y).collect(),
            b.iter().zip(&d).map(|(x, y)| x + i * y).collect(),
        ))
    }

    /// Complex Hessian `∂_a ∂_b̄ f` of a smooth real function, flattened `P × n × n`.
    pub fn ddbar(&self, f: &[f64]) -> Result<Vec<C64>> {
        self.require_derivatives()?;
        Ok(match &self.chart {
            Chart::Sphere(s) => {
                let lap = sphere_laplacian(s, f);
                lap.iter()
                    .zip(&self.coords)
                    .map(|(l, w)| {
                        let q = 1.0 + w[0].norm_sqr();
                        c(l / (q * q))
                    })
                    .collect()
            }
            Chart::Product(a, b) => {
                let (pa, pb) = (a.len(), b.len());
                let (na, nb) = (a.n_coords, b.n_coords);
                let n = na + nb;
                let mut out = vec![C64::new(0.0, 0.0); self.len() * n * n];
                let mut slice = vec![0.0; pa];
                for j in 0..pb {
                    for i in 0..pa {
                        slice[i] = f[i * pb + j];
                    }
                    let h = a.ddbar(&slice)?;
                    for i in 0..pa {
                        for r in 0..na {
                            for s in 0..na {
                                out[(i * pb + j) * n * n + r * n + s] = h[i * na * na + r * na + s];
                            }
                        }
                    }
                }
                // ∂̄ along B, then ∂ along A.
                let mut dbar_b = vec![C64::new(0.0, 0.0); self.len() * nb];
                for i in 0..pa {
                    let h = b.ddbar(&f[i * pb..(i + 1) * pb])?;
                    let (_, v) = b.d_holo(&f[i * pb..(i + 1) * pb])?;
                    for j in 0..pb {
                        for r in 0..nb {
                            for s in 0..nb {
                                out[(i * pb + j) * n * n + (na + r) * n + na + s] =
                                    h[j * nb * nb + r * nb + s];
                            }
                            dbar_b[(i * pb + j) * nb + r] = v[j * nb + r];
                        }
                    }
                }
                let mut cslice = vec![C64::new(0.0, 0.0); pa];
                for j in 0..pb {
                    for s in 0..nb {
                        for i in 0..pa {
                            cslice[i] = dbar_b[(i * pb + j) * nb + s];
                        }
                        let (u, _) = a.d_holo_complex(&cslice)?;
                        for i in 0..pa {
                            for r in 0..na {
                                let v = u[i * na + r];
                                let p = i * pb + j;
                                out[p * n * n + r * n + na + s] = v;
                                out[p * n * n + (na + s) * n + r] = v.conj();
                            }
                        }
                    }
                }
                out
            }
            Chart::Sampled => unreachable!(),
        })
    }
}

fn sphere_d_holo(s: &SphereChart, coords: &[Vec<C64>], f: &[f64]) -> (Vec<C64>, Vec<C64>) {
    let (fx, fphi) = sphere_first(s, f);
    let i = C64::new(0.0, 1.0);
    let mut dw = Vec::with_capacity(f.len());
    let mut dwb = Vec::with_capacity(f.len());
    for (p, w) in coords.iter().enumerate() {
        let x = s.x[p / s.n_phi];
        let w = w[0];
        // ∂/∂|w|² = −(1 + x)²/2 · ∂/∂x
        let fr = -fx[p] * (1.0 + x) * (1.0 + x) / 2.0;
        dwb.push(w * fr + i * fphi[p] / (2.0 * w.conj()));
        dw.push(w.conj() * fr - i * fphi[p] / (2.0 * w));
    }
    (dw, dwb)
}

fn sphere_first(s: &SphereChart, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut fx = vec![0.0; f.len()];
    let mut fphi = vec![0.0; f.len()];
    for j in 0..s.n_phi {
        s.dx.apply_strided(f, j, s.n_phi, &mut fx);
    }
    for i in 0..s.n_theta {
        s.dphi.apply_strided(f, i * s.n_phi, 1, &mut fphi);
    }
    (fx, fphi)
}

fn legendre_operator(dx: &DiffMatrix, x: &[f64]) -> DiffMatrix {
    let n = dx.n;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for m in 0..n {
                acc += dx.data[i * n + m] * (1.0 - x[m] * x[m]) * dx.data[m * n + j];
            }
            data[i * n + j] = acc;
        }
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| data[i * n + j]).sum();
        data[i * n + i] = -off;
    }
    DiffMatrix { n, data }
}

/// Unit-sphere Laplacian `∂_x((1 − x²)∂_x f) + ∂²_φ f/(1 − x²)`.
fn sphere_laplacian(s: &SphereChart, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for j in 0..s.n_phi {
        s.lx.apply_strided(f, j, s.n_phi, &mut out);
    }
    let mut fpp = vec![0.0; f.len()];
    for i in 0..s.n_theta {
        s.dphi2.apply_strided(f, i * s.n_phi, 1, &mut fpp);
    }
    for (p, o) in out.iter_mut().enumerate() {
        let x = s.x[p / s.n_phi];
        *o += fpp[p] / (1.0 - x * x);
    }
    out
}

/// Evaluations of a basis of holomorphic sections on a grid.
#[derive(Debug, Clone)]
pub struct SectionFrame {
    pub level_k: u32,
    /// `N + 1`.
    pub dim: usize,
    pub grid: ChartGrid,
    /// Row-major `P × dim` section values in the reference trivialization.
    pub z: Vec<C64>,
    /// Row-major `P × n × dim` derivatives `∂z/∂w_a`.
    pub dz: Vec<C64>,
    /// Torus weight vector per basis index.
    pub torus_weights: Option<Vec<Vec<i64>>>,
    /// `V = ∫ ωⁿ` of the reference metric of `L`.
    pub volume_v: f64,
}

impl SectionFrame {
    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    pub fn n_coords(&self) -> usize {
        self.grid.n_coords
    }

    pub fn z_at(&self, p: usize) -> &[C64] {
        &self.z[p * self.dim..(p + 1) * self.dim]
    }

    pub fn dz_at(&self, p: usize, a: usize) -> &[C64] {
        let n = self.n_coords();
        let start = (p * n + a) * self.dim;
        &self.dz[start..start + self.dim]
    }

    /// Samples a function of the chart parameters.
    pub fn eval(&self, f: impl Fn(&[f64]) -> f64) -> GridFn {
        self.grid.params.iter().map(|p| f(p)).collect()
    }

    /// Potential `k·Σ log(1 + |w|²)` of the product round metric on `L^k`.
    pub fn round_potential(&self) -> GridFn {
        let k = self.level_k as f64;
        self.grid.reference_potential().into_iter().map(|v| k * v).collect()
    }

    /// Checks base-point-freeness and array shapes.
    pub fn validate(&self) -> Result<()> {
        let p = self.n_points();
        let n = self.n_coords();
        if self.z.len() != p * self.dim {
            return Err(Error::Dimension { expected: p * self.dim, found: self.z.len() });
        }
        if self.dz.len() != p * n * self.dim {
            return Err(Error::Dimension { expected: p * n * self.dim, found: self.dz.len() });
        }
        if let Some(w) = &self.torus_weights {
            if w.len() != self.dim {
                return Err(Error::Dimension { expected: self.dim, found: w.len() });
            }
        }
        for (i, w) in self.grid.weights.iter().enumerate() {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::Validation(format!("non-positive quadrature weight at point {i}")));
            }
        }
        for q in 0..p {
            if self.z_at(q).iter().all(|v| v.norm() == 0.0) {
                return Err(Error::ZeroSection { point: q });
            }
        }
        Ok(())
    }
}

fn check_p1_resolution(level_k: u32, n_theta: usize, n_phi: usize) -> Result<()> {
    if level_k < 1 {
        return Err(Error::Config("level_k must be at least 1".into()));
    }
    if n_theta < 16 {
        return Err(Error::Config(format!("n_theta = {n_theta} is below the minimum of 16")));
    }
    let nyquist = 2 * level_k as usize + 2;
    if n_phi < nyquist || n_phi % 2 != 0 {
        return Err(Error::Config(format!(
            "n_phi = {n_phi} under-resolves degree-{level_k} integrands (need an even value ≥ {nyquist})"
        )));
    }
    Ok(())
}

/// Default `(n_theta, n_phi)` for a ℙ¹ level.
pub fn default_p1_resolution(level_k: u32) -> (usize, usize) {
    if level_k <= 8 {
        (64, 128)
    } else if level_k <= 16 {
        (96, 192)
    } else {
        let n = 6 * level_k as usize;
        (n, 2 * n)
    }
}

/// `(ℙ¹, 𝒪(k))` with the monomial basis `w^j`, `j = 0..=k`.
pub fn build_p1_backend(level_k: u32, n_theta: usize, n_phi: usize) -> Result<SectionFrame> {
    let exps: Vec<u32> = (0..=level_k).collect();
    check_p1_resolution(level_k, n_theta, n_phi)?;
    monomial_frame(&exps, n_theta, n_phi)
}

/// ℙ¹ mapped by a sub-system of monomials `w^e` of `𝒪(max e)`.
///
/// The exponents must be distinct and contain `0`; the image is a rational
/// curve which is singular at `w = ∞` unless the exponents are consecutive
/// there. It is torus-invariant with weights `e`.
pub fn build_monomial_curve(exponents: &[u32], n_theta: usize, n_phi: usize) -> Result<SectionFrame> {
    let mut sorted = exponents.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != exponents.len() || sorted.first() != Some(&0) || sorted.len() < 2 {
        return Err(Error::Config("exponents must be distinct, include 0, and number at least 2".into()));
    }
    let level = *sorted.last().unwrap();
    check_p1_resolution(level, n_theta, n_phi)?;
    monomial_frame(exponents, n_theta, n_phi)
}

fn monomial_frame(exps: &[u32], n_theta: usize, n_phi: usize) -> Result<SectionFrame> {
    let grid = ChartGrid::sphere(n_theta, n_phi)?;
    let dim = exps.len();
    let level_k = *exps.iter().max().unwrap();
    let mut z = Vec::with_capacity(grid.len() * dim);
    let mut dz = Vec::with_capacity(grid.len() * dim);
    for w in &grid.coords {
        let w = w[0];
        for &e in exps {
            z.push(w.powu(e));
        }
        for &e in exps {
            dz.push(if e == 0 { c(0.0) } else { w.powu(e - 1) * e as f64 });
        }
    }
    let round_vol: Vec<f64> = grid
        .coords
        .iter()
        .map(|w| {
            let q = 1.0 + w[0].norm_sqr();
            2.0 / (q * q)
        })
        .collect();
    let ones = vec![1.0; grid.len()];
    let volume_v = grid.integrate(&ones, &round_vol);
    let frame = SectionFrame {
        level_k,
        dim,
        grid,
        z,
        dz,
        torus_weights: Some(exps.iter().map(|&e| vec![e as i64]).collect()),
        volume_v,
    };
    frame.validate()?;
    Ok(frame)
}

/// Segre product `(M₁ × M₂, L₁ ⊠ L₂)`; both factors must share `level_k`.
pub fn build_product_backend(a: &SectionFrame, b: &SectionFrame) -> Result<SectionFrame> {
    if a.level_k == 0 || b.level_k == 0 {
        return Err(Error::Config("degenerate polarization: factor with k = 0".into()));
    }
    if a.level_k != b.level_k {
        return Err(Error::Config(format!(
            "factor levels differ ({} vs {}); the product polarization needs a common k",
            a.level_k, b.level_k
        )));
    }
    a.validate()?;
    b.validate()?;
    let grid = ChartGrid::product(&a.grid, &b.grid);
    let (pa, pb) = (a.n_points(), b.n_points());
    let (na, nb) = (a.n_coords(), b.n_coords());
    let n = na + nb;
    let dim = a.dim * b.dim;
    let mut z = Vec::with_capacity(pa * pb * dim);
    let mut dz = vec![c(0.0); pa * pb * n * dim];
    for i in 0..pa {
        for j in 0..pb {
            let p = i * pb + j;
            let (za, zb) = (a.z_at(i), b.z_at(j));
            for x in za {
                for y in zb {
                    z.push(x * y);
                }
            }
            for c_ in 0..na {
                let da = a.dz_at(i, c_);
                let base = (p * n + c_) * dim;
                for (s, x) in da.iter().enumerate() {
                    for (t, y) in zb.iter().enumerate() {
                        dz[base + s * b.dim + t] = x * y;
                    }
                }
            }
            for c_ in 0..nb {
                let db = b.dz_at(j, c_);
                let base = (p * n + na + c_) * dim;
                for (s, x) in za.iter().enumerate() {
                    for (t, y) in db.iter().enumerate() {
                        dz[base + s * b.dim + t] = x * y;
                    }
                }
            }
        }
    }
    let torus_weights = match (&a.torus_weights, &b.torus_weights) {
        (Some(wa), Some(wb)) => {
            let mut out = Vec::with_capacity(dim);
            for x in wa {
                for y in wb {
                    out.push([x.as_slice(), y.as_slice()].concat());
                }
            }
            Some(out)
        }
        _ => None,
    };
    let frame = SectionFrame {
        level_k: a.level_k,
        dim,
        grid,
        z,
        dz,
        torus_weights,
        volume_v: a.volume_v * b.volume_v,
    };
    frame.validate()?;
    Ok(frame)
}

/// Fiber metric on `L^k`: squared norm of the reference frame is `e^{−phi}`.
#[derive(Debug, Clone)]
pub struct FiberMetric {
    pub phi: GridFn,
    /// Set when `phi = log(z†Kz) + const` for a known positive `K`; the
    /// metric is then evaluated algebraically instead of by differentiation.
    pub algebraic: Option<CMat>,
}

impl FiberMetric {
    pub fn from_potential(phi: GridFn) -> Self {
        Self { phi, algebraic: None }
    }

    /// Adds a gauge constant to the potential.
    pub fn shifted(&self, constant: f64) -> Self {
        Self {
            phi: self.phi.iter().map(|v| v + constant).collect(),
            algebraic: self.algebraic.as_ref().map(|k| k.scale(constant.exp())),
        }
    }

    /// `k·(Σ log(1 + |w|²) + ψ)` for a smooth perturbation `ψ` of the
    /// potential of `L`.
    pub fn perturbed_round(frame: &SectionFrame, psi: &[f64]) -> Self {
        let k = frame.level_k as f64;
        let phi = frame.round_potential().iter().zip(psi).map(|(r, p)| r + k * p).collect();
        Self::from_potential(phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSource {
    Pullback,
    Potential,
}

/// Pointwise Kähler data; `g` is flattened `P × n × n` with entry `(a, b) = g_{ab̄}`.
#[derive(Debug, Clone)]
pub struct KahlerData {
    pub n: usize,
    pub g: Vec<C64>,
    pub detg: Vec<f64>,
    /// Density of `ωⁿ/n!` against the grid weights.
    pub vol_density: Vec<f64>,
    pub scalar_curv: Option<GridFn>,
    pub source: MetricSource,
}

impl KahlerData {
    pub fn g_at(&self, p: usize) -> CMat {
        let n = self.n;
        CMat::from_row_slice(n, n, &self.g[p * n * n..(p + 1) * n * n])
    }

    fn g_inv_at(&self, p: usize) -> CMat {
        if self.n == 1 {
            CMat::from_element(1, 1, c(1.0 / self.g[p].re))
        } else {
            self.g_at(p).try_inverse().expect("positive metric is invertible")
        }
    }

    /// Multiplies the metric by `s > 0`.
    pub fn scaled(&self, s: f64) -> Self {
        let sn = s.powi(self.n as i32);
        Self {
            n: self.n,
            g: self.g.iter().map(|v| v * s).collect(),
            detg: self.detg.iter().map(|v| v * sn).collect(),
            vol_density: self.vol_density.iter().map(|v| v * sn).collect(),
            scalar_curv: self.scalar_curv.as_ref().map(|sc| sc.iter().map(|v| v / s).collect()),
            source: self.source,
        }
    }

    pub fn volume(&self, grid: &ChartGrid) -> f64 {
        grid.integrate(&vec![1.0; grid.len()], &self.vol_density)
    }

    /// Contraction `g^{ab̄} M_{ab̄}` of a flattened field of Hermitian matrices.
    pub fn trace_with(&self, m: &[C64]) -> GridFn {
        let n = self.n;
        (0..self.detg.len())
            .map(|p| {
                if n == 1 {
                    m[p].re / self.g[p].re
                } else {
                    let mm = CMat::from_row_slice(n, n, &m[p * n * n..(p + 1) * n * n]);
                    (self.g_inv_at(p) * mm).trace().re
                }
            })
            .collect()
    }
}

fn kahler_from_g(n: usize, g: Vec<C64>, source: MetricSource, degenerate: impl Fn(usize, f64) -> Error) -> Result<KahlerData> {
    let p = g.len() / (n * n);
    let mut detg = Vec::with_capacity(p);
    for q in 0..p {
        if n == 1 {
            let v = g[q].re;
            if !(v > 0.0) {
                return Err(degenerate(q, v));
            }
            detg.push(v);
        } else {
            let m = CMat::from_row_slice(n, n, &g[q * n * n..(q + 1) * n * n]);
            let vals = eigvals(&m);
            if !(vals[0] > 0.0) {
                return Err(degenerate(q, vals[0]));
            }
            detg.push(vals.iter().product());
        }
    }
    let factor = 2f64.powi(n as i32);
    let vol_density = detg.iter().map(|d| factor * d).collect();
    Ok(KahlerData { n, g, detg, vol_density, scalar_curv: None, source })
}

/// Pulls back the Fubini–Study metric of `K` (the Gram inverse of an inner
/// product): `g_{ab̄} = ∂_a ∂_b̄ log(z†Kz)`.
pub fn pullback_metric(frame: &SectionFrame, k_mat: &CMat) -> Result<KahlerData> {
    pullback_metric_with(frame, k_mat, true)
}

/// As [`pullback_metric`], optionally skipping the scalar curvature.
pub fn pullback_metric_with(frame: &SectionFrame, k_mat: &CMat, with_curvature: bool) -> Result<KahlerData> {
    let n = frame.n_coords();
    let dim = frame.dim;
    if k_mat.nrows() != dim {
        return Err(Error::Dimension { expected: dim, found: k_mat.nrows() });
    }
    let mut g = Vec::with_capacity(frame.n_points() * n * n);
    let mut kz = vec![c(0.0); dim];
    let mut kdz = vec![c(0.0); n * dim];
    for p in 0..frame.n_points() {
        let z = frame.z_at(p);
        mat_vec(k_mat, z, &mut kz);
        for a in 0..n {
            mat_vec(k_mat, frame.dz_at(p, a), &mut kdz[a * dim..(a + 1) * dim]);
        }
        let q = dot_conj(z, &kz).re;
        for a in 0..n {
            let za_k_z = dot_conj(z, &kdz[a * dim..(a + 1) * dim]); // z†K∂_a z
            for b in 0..n {
                let db = frame.dz_at(p, b);
                let db_k_da = dot_conj(db, &kdz[a * dim..(a + 1) * dim]); // (∂_b z)†K∂_a z
                let db_k_z = dot_conj(db, &kz); // (∂_b z)†Kz
                g.push((db_k_da * q - za_k_z * db_k_z) / (q * q));
            }
        }
    }
    let mut kd = kahler_from_g(n, g, MetricSource::Pullback, |point, value| Error::Degenerate { point, value })?;
    if with_curvature && frame.grid.supports_derivatives() {
        kd.scalar_curv = Some(scalar_curvature_field(&frame.grid, &kd)?);
    }
    Ok(kd)
}

/// `Σ conj(a_i) b_i`.
pub(crate) fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn mat_vec(m: &CMat, v: &[C64], out: &mut [C64]) {
    let n = v.len();
    for i in 0..m.nrows() {
        let mut acc = c(0.0);
        for j in 0..n {
            acc += m[(i, j)] * v[j];
        }
        out[i] = acc;
    }
}

/// Curvature form `i∂∂̄ phi` of a fiber metric on `L^k` (class `k·[ω]`).
pub fn metric_from_potential(frame: &SectionFrame, h: &FiberMetric) -> Result<KahlerData> {
    if let Some(k_mat) = &h.algebraic {
        return pullback_metric(frame, k_mat);
    }
    let grid = &frame.grid;
    if !grid.supports_derivatives() {
        return Err(Error::Unsupported("potential metrics need a structured chart".into()));
    }
    let k = frame.level_k as f64;
    let reference = grid.reference_potential();
    let smooth: Vec<f64> = h.phi.iter().zip(&reference).map(|(p, r)| p - k * r).collect();
    let mut g = grid.ddbar(&smooth)?;
    for (v, r) in g.iter_mut().zip(grid.reference_ddbar()) {
        *v += r * k;
    }
    for p in 0..grid.len() {
        let n = grid.n_coords;
        for a in 0..n {
            for b in 0..a {
                // enforce exact Hermitian symmetry
                let avg = (g[p * n * n + a * n + b] + g[p * n * n + b * n + a].conj()) * 0.5;
                g[p * n * n + a * n + b] = avg;
                g[p * n * n + b * n + a] = avg.conj();
            }
            g[p * n * n + a * n + a].im = 0.0;
        }
    }
    let mut kd = kahler_from_g(grid.n_coords, g, MetricSource::Potential, |point, value| Error::NotKahler { point, value })?;
    kd.scalar_curv = Some(scalar_curvature_field(grid, &kd)?);
    Ok(kd)
}

/// `g^{ab̄} ∂_a ∂_b̄ f`.
pub fn laplacian(grid: &ChartGrid, kd: &KahlerData, f: &[f64]) -> Result<GridFn> {
    let h = grid.ddbar(f)?;
    Ok(kd.trace_with(&h))
}

/// `S = −g^{ab̄} ∂_a ∂_b̄ log det g`.
pub fn scalar_curvature_field(grid: &ChartGrid, kd: &KahlerData) -> Result<GridFn> {
    let reference = grid.reference_potential();
    // det g ~ Π (1 + |w_a|²)^{-2} near each chart's point at infinity
    let smooth: Vec<f64> = kd.detg.iter().zip(&reference).map(|(d, r)| d.ln() + 2.0 * r).collect();
    let mut h = grid.ddbar(&smooth)?;
    for (v, r) in h.iter_mut().zip(grid.reference_ddbar()) {
        *v -= r * 2.0;
    }
    Ok(kd.trace_with(&h).into_iter().map(|v| -v).collect())
}

pub fn scalar_curvature(grid: &ChartGrid, kd: &mut KahlerData) -> Result<GridFn> {
    let s = scalar_curvature_field(grid, kd)?;
    kd.scalar_curv = Some(s.clone());
    Ok(s)
}

/// Riemannian gradient pairing `⟨∇f, ∇u⟩ = 2 Re g^{ab̄} ∂_a f ∂_b̄ u`.
pub fn gradient_pairing(grid: &ChartGrid, kd: &KahlerData, f: &[f64], u: &[f64]) -> Result<GridFn> {
    let n = kd.n;
    let (df, _) = grid.d_holo(f)?;
    let (_, dbu) = grid.d_holo(u)?;
    Ok((0..grid.len())
        .map(|p| {
            let ginv = kd.g_inv_at(p);
            let mut acc = c(0.0);
            for a in 0..n {
                for b in 0..n {
                    acc += ginv[(b, a)] * df[p * n + a] * dbu[p * n + b];
                }
            }
            2.0 * acc.re
        })
        .collect())
}

/// Weighted mean `∫ f dν / ∫ dν`.
pub fn average(grid: &ChartGrid, kd: &KahlerData, f: &[f64]) -> f64 {
    grid.integrate(f, &kd.vol_density) / kd.volume(grid)
}

pub fn identity_matrix_field(n: usize, p: usize) -> Vec<C64> {
    let id = DMatrix::<C64>::identity(n, n);
    (0..p).flat_map(|_| id.iter().copied().collect::<Vec<_>>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag, identity};

    #[test]
    fn p1_dimension_and_origin() {
        let f = build_p1_backend(3, 16, 8).unwrap();
        assert_eq!(f.dim, 4);
        let f = build_p1_backend(2, 16, 6).unwrap();
        // the last θ-row is nearest the north pole w = 0
        let z = f.z_at(f.n_points() - 1);
        assert!((z[0] - c(1.0)).norm() < 1e-15);
        assert!(z[1].norm() < 0.1 && z[2].norm() < 0.01);
    }

    #[test]
    fn p1_volume_is_two_pi() {
        let f = build_p1_backend(1, 64, 128).unwrap();
        assert!((f.volume_v - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn resolution_errors() {
        assert!(matches!(build_p1_backend(8, 64, 16), Err(Error::Config(_))));
        assert!(matches!(build_p1_backend(2, 8, 16), Err(Error::Config(_))));
        assert!(matches!(build_p1_backend(0, 32, 16), Err(Error::Config(_))));
    }

    #[test]
    fn pullback_round_and_projective_invariance() {
        let f = build_p1_backend(1, 64, 128).unwrap();
        let kd = pullback_metric(&f, &identity(2)).unwrap();
        assert!((kd.volume(&f.grid) - 2.0 * PI).abs() < 1e-10);
        let kd2 = pullback_metric(&f, &identity(2).scale(3.7)).unwrap();
        for (a, b) in kd.g.iter().zip(&kd2.g) {
            assert!((a - b).norm() <= 1e-15 * a.norm().max(1.0));
        }
        let f2 = build_p1_backend(2, 64, 128).unwrap();
        let kd = pullback_metric(&f2, &diag(&[1.0, 2.0, 1.0])).unwrap();
        assert!((kd.volume(&f2.grid) - 4.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn potential_matches_pullback() {
        let f = build_p1_backend(3, 64, 128).unwrap();
        let k_mat = diag(&[1.0, 0.5, 2.0, 1.5]);
        let alg = pullback_metric(&f, &k_mat).unwrap();
        let phi: Vec<f64> = (0..f.n_points())
            .map(|p| {
                let z = f.z_at(p);
                let mut kz = vec![c(0.0); 4];
                mat_vec(&k_mat, z, &mut kz);
                dot_conj(z, &kz).re.ln()
            })
            .collect();
        let numeric = metric_from_potential(&f, &FiberMetric::from_potential(phi.clone())).unwrap();
        let reference = f.grid.reference_ddbar();
        for ((a, b), r) in alg.g.iter().zip(&numeric.g).zip(&reference) {
            assert!((a - b).norm() < 1e-8 * r.re);
        }
        let shifted = metric_from_potential(&f, &FiberMetric::from_potential(phi.iter().map(|v| v + 5.0).collect())).unwrap();
        for ((a, b), r) in numeric.g.iter().zip(&shifted.g).zip(&reference) {
            assert!((a - b).norm() < 1e-8 * r.re);
        }
    }

    #[test]
    fn perturbed_potential_is_positive() {
        for k in 1..4 {
            let f = build_p1_backend(k, 32, 16).unwrap();
            let psi = f.eval(|p| 0.1 * p[0].cos() / k as f64);
            let h = FiberMetric::perturbed_round(&f, &psi);
            assert!(metric_from_potential(&f, &h).is_ok());
        }
        let f = build_p1_backend(1, 32, 16).unwrap();
        let psi = f.eval(|p| 0.8 * p[0].cos());
        let h = FiberMetric::perturbed_round(&f, &psi);
        assert!(matches!(metric_from_potential(&f, &h), Err(Error::NotKahler { .. })));
    }

    #[test]
    fn laplacian_of_cos_theta() {
        let f = build_p1_backend(1, 64, 128).unwrap();
        let kd = pullback_metric(&f, &identity(2)).unwrap();
        let ones = vec![1.0; f.n_points()];
        assert!(laplacian(&f.grid, &kd, &ones).unwrap().iter().all(|v| v.abs() < 1e-8));
        let u = f.eval(|p| p[0].cos());
        let lu = laplacian(&f.grid, &kd, &u).unwrap();
        let lambda = lu[5] / u[5];
        for (a, b) in lu.iter().zip(&u) {
            assert!((a - lambda * b).abs() < 1e-6 * b.abs().max(1e-3));
        }
        assert!((lambda + 2.0).abs() < 1e-8);
        assert!(f.grid.integrate(&lu, &kd.vol_density).abs() < 1e-10);
    }

    #[test]
    fn round_scalar_curvature_is_constant() {
        let f = build_p1_backend(2, 64, 128).unwrap();
        let kd = pullback_metric(&f, &diag(&[1.0, 0.5, 1.0]).try_inverse().unwrap()).unwrap();
        let s = kd.scalar_curv.clone().unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64;
        assert!(var.sqrt() / mean.abs() < 1e-6);
        // 2π·k·[ω] has Kähler scalar curvature 2/k
        assert!((mean - 1.0).abs() < 1e-8);
    }

    #[test]
    fn product_frame_shape_and_volume() {
        let a = build_p1_backend(1, 16, 8).unwrap();
        let p = build_product_backend(&a, &a).unwrap();
        assert_eq!(p.dim, 4);
        assert_eq!(p.n_coords(), 2);
        assert!((p.volume_v - 4.0 * PI * PI).abs() < 1e-10);
        let kd = pullback_metric(&p, &identity(4)).unwrap();
        assert!((kd.volume(&p.grid) - 4.0 * PI * PI).abs() < 1e-9);
        let s = kd.scalar_curv.unwrap();
        assert!(s.iter().all(|v| (v - 4.0).abs() < 1e-8));
    }

    #[test]
    fn product_rejects_mismatched_levels() {
        let a = build_p1_backend(1, 16, 8).unwrap();
        let b = build_p1_backend(2, 16, 8).unwrap();
        assert!(build_product_backend(&a, &b).is_err());
    }
}
