use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbal_core::balance::{balanced_residual, solve_balanced, solve_relative, SolveMode, SolveOptions, SolveStatus};
use rbal_core::bergman::{moment_data, t_operator, InnerProduct, Provenance};
use rbal_core::geometry::{build_monomial_curve, build_p1_backend, build_product_backend};
use rbal_core::linalg::{identity, random_positive};
use rbal_core::symmetry::{vt_basis, weight_blocks};

#[test]
fn descent_reaches_balanced_from_random_full_start() {
    let frame = build_p1_backend(3, 64, 128).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let h0 = InnerProduct::new(random_positive(&mut rng, 4, 1.0), 3, Provenance::Initial).unwrap();
    let opts = SolveOptions { tol: 1e-9, max_iter: 2000, mode: SolveMode::Descent };
    let rep = solve_balanced(&frame, &h0, &opts).unwrap();
    assert_eq!(rep.status, SolveStatus::Converged, "{:?}", rep.message);
    assert!(balanced_residual(&moment_data(&frame, &rep.final_h).unwrap()) < 1e-9);
}

#[test]
fn balanced_point_is_fixed_by_t_up_to_scale() {
    let frame = build_p1_backend(2, 64, 128).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let h0 = InnerProduct::new(random_positive(&mut rng, 3, 0.5), 2, Provenance::Initial).unwrap();
    let rep = solve_balanced(&frame, &h0, &SolveOptions { tol: 1e-11, max_iter: 400, mode: SolveMode::Titer }).unwrap();
    let t = t_operator(&frame, &rep.final_h).unwrap();
    let ratio = t.h[(0, 0)].re / rep.final_h.h[(0, 0)].re;
    let dev = (&t.h - rep.final_h.h.scale(ratio)).norm() / t.h.norm();
    assert!(dev < 1e-9, "{dev}");
}

#[test]
fn residual_history_is_recorded_every_iteration() {
    let frame = build_p1_backend(2, 32, 16).unwrap();
    let h0 = InnerProduct::new(identity(3), 2, Provenance::Initial).unwrap();
    let rep = solve_balanced(&frame, &h0, &SolveOptions { tol: 1e-10, max_iter: 300, mode: SolveMode::Titer }).unwrap();
    assert_eq!(rep.residual_history.len(), rep.iterates + 1);
    assert!(rep.residual_history.first().unwrap().balanced > rep.residual_history.last().unwrap().balanced);
}

#[test]
fn max_iter_is_reported_not_hidden() {
    let frame = build_p1_backend(4, 32, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let h0 = InnerProduct::new(random_positive(&mut rng, 5, 2.0), 4, Provenance::Initial).unwrap();
    let rep = solve_balanced(&frame, &h0, &SolveOptions { tol: 1e-14, max_iter: 2, mode: SolveMode::Titer }).unwrap();
    assert_eq!(rep.status, SolveStatus::MaxIter);
    assert_eq!(rep.iterates, 2);
}

#[test]
fn product_of_lines_balances() {
    let a = build_p1_backend(1, 32, 8).unwrap();
    let frame = build_product_backend(&a, &a).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let h0 = InnerProduct::new(random_positive(&mut rng, 4, 0.3), 1, Provenance::Initial).unwrap();
    // the coarse product grid leaves a quadrature floor near 1e-7
    let rep = solve_balanced(&frame, &h0, &SolveOptions { tol: 1e-6, max_iter: 500, mode: SolveMode::Titer }).unwrap();
    assert_eq!(rep.status, SolveStatus::Converged);
}

#[test]
fn unstable_curve_leaves_a_vt_component() {
    let frame = build_monomial_curve(&[0, 1, 3], 64, 128).unwrap();
    let wd = weight_blocks(&frame).unwrap();
    let vt = vt_basis(&wd);
    let h0 = InnerProduct::new(identity(3), 1, Provenance::Initial).unwrap();
    let rep = solve_relative(&frame, &h0, &wd, &vt, &SolveOptions { tol: 1e-8, max_iter: 3000, mode: SolveMode::Descent }).unwrap();
    assert!(rep.residual_history.last().unwrap().relative < 1e-8);
    assert!(rep.b_matrix.norm() > 0.1);
}
