//! Regression checks for the recorded calibration constants.

use rbal_core::calibration::Calibration;
use rbal_core::expansion::{equivariant_trace_check, p1_frames, verify_hq, verify_tyz};
use rbal_core::bergman::{InnerProduct, Provenance};
use rbal_core::geometry::SectionFrame;
use rbal_core::linalg::diag;

fn round_h(frame: &SectionFrame) -> rbal_core::Result<InnerProduct> {
    let k = frame.level_k;
    let d: Vec<f64> = (0..=k).map(|j| (0..j).fold(1.0, |a, i| a * (i + 1) as f64 / (k - i) as f64)).collect();
    InnerProduct::new(diag(&d), k, Provenance::Initial)
}

#[test]
fn gamma_q_slopes_follow_k_over_k_plus_2_on_round() {
    let frames = p1_frames(&[4, 8, 12, 16]).unwrap();
    let zero = |_: &[f64]| 0.0;
    let cos = |p: &[f64]| p[0].cos();
    let fit = verify_hq(&frames, &zero, &cos, &Calibration::default()).unwrap();
    for (k, c) in fit.k_values.iter().zip(&fit.constants) {
        let k = *k as f64;
        assert!((c.unwrap() - k / (k + 2.0)).abs() < 1e-9, "k = {k}: {c:?}");
    }
}

#[test]
fn gamma_a_is_stable_across_perturbation_strength() {
    let frames = p1_frames(&[16]).unwrap();
    let cal = Calibration::default();
    for eps in [0.1, 0.05] {
        let psi = move |p: &[f64]| eps * p[0].cos().powi(2);
        let fit = verify_tyz(&frames, &psi, &cal).unwrap();
        let c = fit.constants[0].unwrap();
        assert!((c - cal.gamma_a).abs() / cal.gamma_a < 0.05, "eps = {eps}: constant {c}");
    }
}

#[test]
fn gamma_v_matches_richardson_limit() {
    let frames = p1_frames(&(4..=10).collect::<Vec<_>>()).unwrap();
    let rep = equivariant_trace_check(&frames, &round_h, 0).unwrap();
    let g = rep.gamma_extrapolated.last().unwrap().unwrap();
    let cal = Calibration::default();
    assert!((g - cal.gamma_v).abs() < 1e-9, "{g}");
}
