use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbal_core::balance::{solve_balanced, solve_relative, SolveMode, SolveOptions, SolveReport, SolveStatus};
use rbal_core::bergman::{hilb, InnerProduct, Provenance};
use rbal_core::calibration::Calibration;
use rbal_core::expansion::{
    c_a_decay, cor51_residual, equivariant_trace_check, moment_deviation_decay, p1_trace_closed_form, thm2_residual, verify_hq,
    verify_tyz, ExpansionFit,
};
use rbal_core::fit::power_law_fit;
use rbal_core::geometry::{
    build_monomial_curve, build_p1_backend, build_product_backend, default_p1_resolution, metric_from_potential,
    FiberMetric, SectionFrame,
};
use rbal_core::io::{fmt_f64, InnerProductFile, load_inner_product, load_sampled_variety, save_inner_product, save_sampled_variety, write_csv, write_json};
use rbal_core::linalg::{diag, identity, op_norm, random_hermitian, random_positive, traceless, CMat};
use rbal_core::stability::{destabilizer_scan, distortion_report, eigenvalue_bound_report, f_derivatives, norm_bound_report};
use rbal_core::symmetry::{decompose, vt_basis, weight_blocks, WeightDecomposition};
use serde_json::json;

use crate::config::{GeometryKind, Mode, Perturbation, Settings};

/// How a command ended, mapped onto the exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Observable {
    Hq,
    Tyz,
    Ca,
    Thm2,
    Eqrr,
    Cor51,
    /// `‖μ̄ − cI‖_op / c` at `Hilb_k(h)`.
    Moment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StabilityReport {
    Eig,
    Norm,
    Convexity,
    Destab,
    Distortion,
}

fn binom(k: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
}

fn round_p1(frame: &SectionFrame) -> rbal_core::Result<InnerProduct> {
    let k = frame.level_k;
    InnerProduct::new(diag(&(0..=k).map(|j| 1.0 / binom(k, j)).collect::<Vec<_>>()), k, Provenance::Initial)
}

pub fn build_frame(s: &Settings, k: Option<u32>) -> Result<SectionFrame> {
    let frame = match s.geometry {
        GeometryKind::P1 => {
            let k = k.ok_or_else(|| anyhow!("missing --k (or level_k in the config)"))?;
            let (nt, np) = s.grid.map(|g| (g[0], g[1])).unwrap_or_else(|| default_p1_resolution(k));
            build_p1_backend(k, nt, np)?
        }
        GeometryKind::Product => {
            let k = k.ok_or_else(|| anyhow!("missing --k (or level_k in the config)"))?;
            // the grid applies to each factor
            let (nt, np) = s.grid.map(|g| (g[0], g[1])).unwrap_or((24, 8 * k as usize + 8));
            let factor = build_p1_backend(k, nt, np)?;
            build_product_backend(&factor, &factor)?
        }
        GeometryKind::Curve => {
            let exps = s.exponents.as_ref().ok_or_else(|| anyhow!("--geometry curve needs --exponents"))?;
            let (nt, np) = s.grid.map(|g| (g[0], g[1])).unwrap_or((64, 128));
            build_monomial_curve(exps, nt, np)?
        }
        GeometryKind::File => {
            let path = s.frame_path.as_ref().ok_or_else(|| anyhow!("--geometry file needs --frame PATH"))?;
            let frame = load_sampled_variety(path).with_context(|| format!("loading {}", path.display()))?;
            if let Some(k) = k {
                if k != frame.level_k {
                    bail!("--k {k} does not match the frame's level {}", frame.level_k);
                }
            }
            frame
        }
    };
    Ok(frame)
}

/// Torus data for the frame, or a trivial torus when disabled.
fn torus(s: &Settings, frame: &SectionFrame) -> Result<(WeightDecomposition, Vec<CMat>)> {
    if s.torus {
        let wd = weight_blocks(frame).context("torus enabled but the frame has no torus weights")?;
        let basis = vt_basis(&wd);
        Ok((wd, basis))
    } else {
        Ok((decompose(&vec![Vec::new(); frame.dim])?, Vec::new()))
    }
}

fn start_point(s: &Settings, frame: &SectionFrame) -> Result<InnerProduct> {
    if let Some(path) = &s.input {
        let h = load_inner_product(path).with_context(|| format!("loading {}", path.display()))?;
        if h.dim() != frame.dim {
            bail!("input inner product has dimension {}, frame needs {}", h.dim(), frame.dim);
        }
        return Ok(h);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    Ok(InnerProduct::new(random_positive(&mut rng, frame.dim, 0.5), frame.level_k, Provenance::Initial)?)
}

fn solve_options(s: &Settings, default_mode: Mode) -> SolveOptions {
    let d = SolveOptions::default();
    SolveOptions { tol: s.tol.unwrap_or(d.tol), max_iter: s.max_iter.unwrap_or(d.max_iter), mode: s.mode.unwrap_or(default_mode).into() }
}

fn write_solve_artifacts(s: &Settings, command: &str, frame: &SectionFrame, opts: &SolveOptions, rep: &SolveReport) -> Result<Outcome> {
    let out = &s.out;
    save_inner_product(&out.join("H.json"), &rep.final_h, Some(s.seed))?;
    let last = rep.residual_history.last().copied();
    write_json(
        &out.join("report.json"),
        &json!({
            "command": command,
            "seed": s.seed,
            "settings": s,
            "level_k": frame.level_k,
            "dim": frame.dim,
            "options": opts,
            "status": rep.status,
            "iterates": rep.iterates,
            "balanced_residual": last.map(|r| r.balanced),
            "relative_residual": last.map(|r| r.relative),
            "condition_number": rbal_core::linalg::condition_number(&rep.final_h.h),
            "message": rep.message,
        }),
    )?;
    let rows: Vec<Vec<String>> = rep
        .residual_history
        .iter()
        .map(|r| vec![r.iteration.to_string(), fmt_f64(r.balanced), fmt_f64(r.relative), s.seed.to_string()])
        .collect();
    write_csv(&out.join("residuals.csv"), &["iteration", "balanced", "relative", "seed"], &rows)?;
    Ok(if rep.status == SolveStatus::Converged { Outcome::Success } else { Outcome::NotConverged })
}

pub fn balance(s: &Settings) -> Result<Outcome> {
    let k = if s.geometry == GeometryKind::P1 || s.geometry == GeometryKind::Product { Some(s.require_k()?) } else { s.level_k };
    let frame = build_frame(s, k)?;
    let opts = solve_options(s, Mode::Titer);
    let rep = solve_balanced(&frame, &start_point(s, &frame)?, &opts)?;
    write_solve_artifacts(s, "balance", &frame, &opts, &rep)
}

pub fn relative(s: &Settings) -> Result<Outcome> {
    let k = if s.geometry == GeometryKind::P1 || s.geometry == GeometryKind::Product { Some(s.require_k()?) } else { s.level_k };
    let frame = build_frame(s, k)?;
    let (wd, basis) = torus(s, &frame)?;
    let opts = solve_options(s, Mode::Descent);
    let rep = solve_relative(&frame, &start_point(s, &frame)?, &wd, &basis, &opts)?;
    let b = InnerProductFile { seed: Some(s.seed), ..InnerProductFile::from_matrix(frame.level_k, &rep.b_matrix) };
    write_json(&s.out.join("B_matrix.json"), &b)?;
    write_solve_artifacts(s, "relative", &frame, &opts, &rep)
}

fn default_psi(obs: Observable) -> Perturbation {
    match obs {
        // first-harmonic potentials are infinitesimal automorphisms of the round metric
        Observable::Hq | Observable::Tyz | Observable::Cor51 | Observable::Moment => Perturbation { harmonic: 2, amplitude: 0.1 },
        Observable::Ca | Observable::Thm2 => Perturbation { harmonic: 1, amplitude: 0.1 },
        Observable::Eqrr => Perturbation { harmonic: 0, amplitude: 0.0 },
    }
}

fn fit_json(fit: &ExpansionFit) -> serde_json::Value {
    json!({
        "observable": fit.observable,
        "k_values": fit.k_values,
        "values": fit.values,
        "exponent": fit.exponent(),
        "fit": fit.fit,
        "correlations": fit.correlations,
        "constants": fit.constants,
    })
}

fn series_rows(label: &str, fit: &ExpansionFit, seed: u64) -> Vec<Vec<String>> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    (0..fit.k_values.len())
        .map(|i| {
            vec![
                label.to_string(),
                fit.k_values[i].to_string(),
                fmt_f64(fit.values[i]),
                opt(fit.correlations[i]),
                opt(fit.constants[i]),
                seed.to_string(),
            ]
        })
        .collect()
}

const SERIES_HEADER: [&str; 6] = ["series", "k", "value", "correlation", "constant", "seed"];

pub fn expansion(s: &Settings, obs: Observable) -> Result<Outcome> {
    if s.geometry != GeometryKind::P1 {
        bail!("expansion observables are implemented for --geometry p1 only");
    }
    let [a, b] = s.k_range.ok_or_else(|| anyhow!("missing --k-range A:B"))?;
    if a == b {
        bail!("--k-range {a}:{b} has a single level; a decay fit needs at least two");
    }
    let ks: Vec<u32> = (a..=b).collect();
    let frames = ks.iter().map(|&k| build_frame(s, Some(k))).collect::<Result<Vec<_>>>()?;
    let psi_cfg = s.perturbation.unwrap_or_else(|| default_psi(obs));
    let psi = move |p: &[f64]| psi_cfg.eval(p);
    let cal = Calibration::default();
    let cos = |p: &[f64]| p[0].cos();
    let name = format!("{obs:?}").to_lowercase();
    let (body, rows, header): (serde_json::Value, Vec<Vec<String>>, Vec<&str>) = match obs {
        Observable::Hq | Observable::Tyz | Observable::Ca | Observable::Moment => {
            let fit = match obs {
                Observable::Hq => verify_hq(&frames, &psi, &cos, &cal)?,
                Observable::Tyz => verify_tyz(&frames, &psi, &cal)?,
                Observable::Ca => c_a_decay(&frames, &psi, 0)?,
                _ => moment_deviation_decay(&frames, &psi)?,
            };
            (fit_json(&fit), series_rows(&name, &fit, s.seed), SERIES_HEADER.to_vec())
        }
        Observable::Cor51 => {
            let rep = cor51_residual(&frames, &psi)?;
            let mut v = fit_json(&rep.fit);
            v["raw"] = json!(rep.raw);
            (v, series_rows(&name, &rep.fit, s.seed), SERIES_HEADER.to_vec())
        }
        Observable::Thm2 => {
            let rep = thm2_residual(&frames, &psi, &round_p1, 0, &cal)?;
            let orders: Vec<_> = rep.orders.iter().map(fit_json).collect();
            let exponent = rep.orders[0].exponent();
            let rows = rep.orders.iter().enumerate().flat_map(|(l, f)| series_rows(&format!("l{l}"), f, s.seed)).collect();
            (json!({ "observable": "thm2", "exponent": exponent, "orders": orders, "unshifted": rep.unshifted }), rows, SERIES_HEADER.to_vec())
        }
        Observable::Eqrr => {
            let rep = equivariant_trace_check(&frames, &round_p1, 0)?;
            let kf: Vec<f64> = rep.k_values.iter().map(|k| *k as f64).collect();
            let fit = power_law_fit(&kf, &rep.trace_sq)?;
            let rows = (0..rep.k_values.len())
                .map(|i| {
                    vec![
                        rep.k_values[i].to_string(),
                        fmt_f64(rep.trace_sq[i]),
                        fmt_f64(p1_trace_closed_form(rep.k_values[i])),
                        fmt_f64(rep.integral[i]),
                        fmt_f64(rep.gamma_raw[i]),
                        rep.gamma_extrapolated[i].map(fmt_f64).unwrap_or_default(),
                        s.seed.to_string(),
                    ]
                })
                .collect();
            let body = json!({
                "observable": "eqrr",
                "exponent": fit.exponent,
                "fit": fit,
                "trace": rep,
                "gamma_v_recorded": cal.gamma_v,
            });
            (body, rows, vec!["k", "trace_sq", "closed_form", "integral", "gamma_raw", "gamma_extrapolated", "seed"])
        }
    };
    let mut body = body;
    body["seed"] = json!(s.seed);
    body["perturbation"] = json!(psi_cfg);
    body["calibration"] = json!(cal);
    body["settings"] = json!(s);
    write_json(&s.out.join("fit.json"), &body)?;
    write_csv(&s.out.join("series.csv"), &header, &rows)?;
    Ok(Outcome::Success)
}

/// Balanced inner product for scanning reports: the input, the closed form on
/// ℙ¹, or a T-iteration solve otherwise.
fn balanced_base(s: &Settings, frame: &SectionFrame) -> Result<InnerProduct> {
    if let Some(path) = &s.input {
        return Ok(load_inner_product(path)?);
    }
    if s.geometry == GeometryKind::P1 {
        return Ok(round_p1(frame)?);
    }
    let h0 = InnerProduct::new(identity(frame.dim), frame.level_k, Provenance::Initial)?;
    let rep = solve_balanced(frame, &h0, &SolveOptions { tol: 1e-10, max_iter: 2000, mode: SolveMode::Titer })?;
    if rep.status != SolveStatus::Converged {
        bail!("base point did not balance: {:?}", rep.status);
    }
    Ok(rep.final_h)
}

pub fn stability(s: &Settings, report: StabilityReport) -> Result<Outcome> {
    let seed = s.seed;
    let mut body = json!({ "report": format!("{report:?}").to_lowercase(), "seed": seed, "settings": s });
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match report {
        StabilityReport::Eig | StabilityReport::Norm => {
            let samples = s.samples.unwrap_or(50);
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for k in s.levels()? {
                let frame = build_frame(s, Some(k))?;
                let h = balanced_base(s, &frame)?;
                let rep = if report == StabilityReport::Eig {
                    let (wd, vt) = torus(s, &frame)?;
                    eigenvalue_bound_report(&frame, &h, &wd, &vt, samples, seed, true)?
                } else {
                    norm_bound_report(&frame, &h, samples, seed)?
                };
                rows.push(vec![
                    k.to_string(),
                    fmt_f64(rep.min),
                    fmt_f64(rep.median),
                    fmt_f64(rep.max),
                    rep.exact.map(fmt_f64).unwrap_or_default(),
                    rep.skipped.to_string(),
                    seed.to_string(),
                ]);
                reports.push(rep);
            }
            let mins: Vec<f64> = reports.iter().map(|r| r.min).collect();
            body["recorded_min"] = json!(mins.iter().cloned().fold(f64::INFINITY, f64::min));
            body["band"] = json!(mins.iter().cloned().fold(0.0, f64::max) / mins.iter().cloned().fold(f64::INFINITY, f64::min));
            body["levels"] = json!(reports);
            (vec!["k", "min", "median", "max", "exact", "skipped", "seed"], rows)
        }
        StabilityReport::Convexity => {
            let samples = s.samples.unwrap_or(20);
            let t_grid: Vec<f64> = (-5..=5).map(|i| i as f64 * 0.2).collect();
            let mut rows = Vec::new();
            let mut worst = f64::INFINITY;
            for k in s.levels()? {
                let frame = build_frame(s, Some(k))?;
                let h = start_point(s, &frame)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                for d in 0..samples {
                    let a = traceless(&random_hermitian(&mut rng, frame.dim));
                    let a = a.scale(1.0 / op_norm(&a));
                    let prof = f_derivatives(&frame, &h, &a, &t_grid)?;
                    for i in 0..t_grid.len() {
                        worst = worst.min(prof.f_ddot[i]);
                        rows.push(vec![
                            k.to_string(),
                            d.to_string(),
                            fmt_f64(prof.t[i]),
                            fmt_f64(prof.f[i]),
                            fmt_f64(prof.f_dot[i]),
                            fmt_f64(prof.f_ddot[i]),
                            seed.to_string(),
                        ]);
                    }
                }
            }
            body["min_f_ddot"] = json!(worst);
            body["convex"] = json!(worst >= -1e-10);
            (vec!["k", "direction", "t", "f", "f_dot", "f_ddot", "seed"], rows)
        }
        StabilityReport::Destab => {
            let frame = build_frame(s, s.level_k)?;
            if !s.torus {
                bail!("destabilizer search needs --torus on");
            }
            let (wd, vt) = torus(s, &frame)?;
            let h = match &s.input {
                Some(p) => load_inner_product(p)?,
                None => {
                    let h0 = InnerProduct::new(identity(frame.dim), frame.level_k, Provenance::Initial)?;
                    let opts = SolveOptions { tol: s.tol.unwrap_or(1e-9), max_iter: s.max_iter.unwrap_or(3000), mode: SolveMode::Descent };
                    let rep = solve_relative(&frame, &h0, &wd, &vt, &opts)?;
                    body["base_status"] = json!(rep.status);
                    body["base_relative_residual"] = json!(rep.residual_history.last().map(|r| r.relative));
                    rep.final_h
                }
            };
            let found = destabilizer_scan(&frame, &h, &wd, &vt, s.samples.unwrap_or(8), seed)?;
            let rows = match &found {
                Some(d) => (0..d.profile.t.len())
                    .map(|i| {
                        vec![
                            fmt_f64(d.profile.t[i]),
                            fmt_f64(d.profile.f[i]),
                            fmt_f64(d.profile.f_dot[i]),
                            fmt_f64(d.profile.f_ddot[i]),
                            seed.to_string(),
                        ]
                    })
                    .collect(),
                None => Vec::new(),
            };
            body["result"] = match found {
                Some(d) => json!({ "destabilizer": d }),
                None => json!("none"),
            };
            (vec!["t", "f", "f_dot", "f_ddot", "seed"], rows)
        }
        StabilityReport::Distortion => {
            if !matches!(s.geometry, GeometryKind::P1 | GeometryKind::Product) {
                bail!("distortion needs a reference metric; available for p1 and product geometries");
            }
            let gate = s.gate.unwrap_or(2.0);
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for k in s.levels()? {
                let frame = build_frame(s, Some(k))?;
                let round = FiberMetric::from_potential(frame.round_potential());
                let reference = metric_from_potential(&frame, &round)?.scaled(1.0 / k as f64);
                let h = match &s.input {
                    Some(p) => load_inner_product(p)?,
                    None => hilb(&frame, &round)?,
                };
                let rep = distortion_report(&frame, &h, &reference, gate)?;
                rows.push(vec![
                    k.to_string(),
                    fmt_f64(rep.r_lower),
                    fmt_f64(rep.r_max),
                    fmt_f64(rep.r_upper),
                    rep.c2_estimate.map(fmt_f64).unwrap_or_default(),
                    rep.passes.to_string(),
                    seed.to_string(),
                ]);
                reports.push(rep);
            }
            body["levels"] = json!(reports);
            (vec!["k", "r_lower", "r_max", "r_upper", "c2_estimate", "passes", "seed"], rows)
        }
    };
    write_json(&s.out.join("report.json"), &body)?;
    write_csv(&s.out.join("series.csv"), &header, &rows)?;
    Ok(Outcome::Success)
}

pub fn export_frame(s: &Settings) -> Result<Outcome> {
    let frame = build_frame(s, s.level_k)?;
    let path = s.out.join("frame.json");
    save_sampled_variety(&path, &frame, Some(s.seed))?;
    write_json(
        &s.out.join("report.json"),
        &json!({ "command": "export-frame", "seed": s.seed, "settings": s, "level_k": frame.level_k, "dim": frame.dim, "points": frame.n_points() }),
    )?;
    Ok(Outcome::Success)
}
