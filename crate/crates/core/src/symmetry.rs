//! Torus weight decomposition, the subspaces `s_T ⊃ V(T)`, and Hamiltonians.

use crate::bergman::{h_operator, MomentData};
use crate::error::{Error, Result};
use crate::geometry::{gradient_pairing, ChartGrid, GridFn, KahlerData, SectionFrame};
use crate::linalg::{c, diag, eigh, frob_inner, traceless, CMat, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightDecomposition {
    /// Distinct raw characters, lexicographically ordered.
    pub characters: Vec<Vec<i64>>,
    pub block_sizes: Vec<usize>,
    pub index_to_block: Vec<usize>,
    pub torus_rank: usize,
}

impl WeightDecomposition {
    pub fn dim(&self) -> usize {
        self.index_to_block.len()
    }

    /// Characters shifted so that `Σ n_i χ_i = 0`.
    pub fn centered_characters(&self) -> Vec<Vec<f64>> {
        let total = self.dim() as f64;
        let mean: Vec<f64> = (0..self.torus_rank)
            .map(|r| {
                self.characters.iter().zip(&self.block_sizes).map(|(ch, &n)| ch[r] as f64 * n as f64).sum::<f64>() / total
            })
            .collect();
        self.characters.iter().map(|ch| ch.iter().zip(&mean).map(|(x, m)| *x as f64 - m).collect()).collect()
    }

    /// Weight vector of basis index `i`.
    pub fn weight_of(&self, i: usize) -> &[i64] {
        &self.characters[self.index_to_block[i]]
    }
}

pub fn weight_blocks(frame: &SectionFrame) -> Result<WeightDecomposition> {
    let weights = frame
        .torus_weights
        .as_ref()
        .ok_or_else(|| Error::Validation("frame carries no torus weights".into()))?;
    decompose(weights)
}

pub fn decompose(weights: &[Vec<i64>]) -> Result<WeightDecomposition> {
    let rank = weights.first().map(|w| w.len()).unwrap_or(0);
    if weights.iter().any(|w| w.len() != rank) {
        return Err(Error::Validation("torus weight vectors have inconsistent lengths".into()));
    }
    let mut characters: Vec<Vec<i64>> = weights.to_vec();
    characters.sort();
    characters.dedup();
    let index_to_block: Vec<usize> =
        weights.iter().map(|w| characters.binary_search(w).expect("character present")).collect();
    let mut block_sizes = vec![0; characters.len()];
    for &b in &index_to_block {
        block_sizes[b] += 1;
    }
    Ok(WeightDecomposition { characters, block_sizes, index_to_block, torus_rank: rank })
}

/// Orthogonal projection onto block-diagonal traceless Hermitian matrices.
pub fn project_s_t(m: &CMat, wd: &WeightDecomposition) -> CMat {
    let n = m.nrows();
    let mut out = (m + m.adjoint()).scale(0.5);
    for i in 0..n {
        for j in 0..n {
            if wd.index_to_block[i] != wd.index_to_block[j] {
                out[(i, j)] = c(0.0);
            }
        }
    }
    traceless(&out)
}

#[derive(Debug, Clone)]
pub struct HermitianDirection {
    pub a: CMat,
    pub in_s_t: bool,
    pub in_vt: bool,
    pub in_vt_perp: bool,
}

impl HermitianDirection {
    /// Computes membership flags with a relative tolerance of `1e-10`.
    pub fn classify(a: CMat, wd: &WeightDecomposition, basis: &[CMat]) -> Result<Self> {
        let norm = frob_inner(&a, &a).sqrt();
        let tol = 1e-10 * norm.max(1e-300);
        let st = project_s_t(&a, wd);
        let in_s_t = frob_dist(&st, &a) <= tol;
        let (vt, perp) = project_vt(&st, basis)?;
        let in_vt = in_s_t && frob_dist(&vt, &a) <= tol;
        let in_vt_perp = in_s_t && frob_dist(&perp, &a) <= tol;
        Ok(Self { a, in_s_t, in_vt, in_vt_perp })
    }
}

fn frob_dist(a: &CMat, b: &CMat) -> f64 {
    let d = a - b;
    frob_inner(&d, &d).sqrt()
}

/// Centered diagonal weight matrix of torus generator `index`.
pub fn lie_rep(wd: &WeightDecomposition, index: usize) -> Result<HermitianDirection> {
    if index >= wd.torus_rank {
        return Err(Error::Config(format!("generator index {index} ≥ torus rank {}", wd.torus_rank)));
    }
    let centered = wd.centered_characters();
    let d: Vec<f64> = (0..wd.dim()).map(|i| centered[wd.index_to_block[i]][index]).collect();
    Ok(HermitianDirection { a: diag(&d), in_s_t: true, in_vt: true, in_vt_perp: false })
}

/// Generator matrices spanning `V(T)`.
pub fn vt_basis(wd: &WeightDecomposition) -> Vec<CMat> {
    (0..wd.torus_rank).map(|i| lie_rep(wd, i).expect("index in range").a).collect()
}

/// Splits `A` into its `span(basis)` component and the trace-orthogonal remainder.
pub fn project_vt(a: &CMat, basis: &[CMat]) -> Result<(CMat, CMat)> {
    let m = basis.len();
    if m == 0 {
        return Ok((CMat::zeros(a.nrows(), a.ncols()), a.clone()));
    }
    let mut gram = CMat::zeros(m, m);
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            gram[(i, j)] = c(frob_inner(&basis[i], &basis[j]));
        }
        rhs[i] = frob_inner(&basis[i], a);
    }
    let (vals, vecs) = eigh(&gram);
    let top = vals[m - 1];
    if !(vals[0] > 1e-12 * top) {
        return Err(Error::RankDeficient(format!("V(T) Gram matrix has eigenvalue {:e}", vals[0])));
    }
    // coefficients = Gram⁻¹ rhs via the eigendecomposition
    let mut coef = vec![0.0; m];
    for (l, lam) in vals.iter().enumerate() {
        let proj: f64 = (0..m).map(|i| vecs[(i, l)].re * rhs[i]).sum();
        for i in 0..m {
            coef[i] += vecs[(i, l)].re * proj / lam;
        }
    }
    let mut vt = CMat::zeros(a.nrows(), a.ncols());
    for (b, w) in basis.iter().zip(&coef) {
        vt += b.scale(*w);
    }
    let perp = a - &vt;
    Ok((vt, perp))
}

/// Normalized Hamiltonian `H_k(A)` minus its `ω_FS/k` average.
pub fn hamiltonian_potential(md: &MomentData, a: &CMat) -> Result<GridFn> {
    let h = h_operator(md, a)?;
    let mean = h.iter().zip(&md.mass).map(|(v, m)| v * m).sum::<f64>() / md.volume();
    Ok(h.into_iter().map(|v| v - mean).collect())
}

/// Hamiltonian of the same field for `ω + i∂∂̄φ`: `H + ½⟨∇H, ∇φ⟩_ω`, for
/// `φ` invariant under the field.
pub fn hamiltonian_shift(grid: &ChartGrid, kd: &KahlerData, h: &[f64], phi: &[f64]) -> Result<GridFn> {
    let pairing = gradient_pairing(grid, kd, h, phi)?;
    Ok(h.iter().zip(pairing).map(|(a, b)| a + 0.5 * b).collect())
}

/// Relative sup-norm defect of `∂̄H = ι_X ω` for the torus field
/// `X = Σ_a χ_a w_a ∂_a`, where `χ` gives the weight of each chart coordinate.
pub fn hamiltonian_residual(grid: &ChartGrid, kd: &KahlerData, h: &[f64], chi: &[f64]) -> Result<f64> {
    let n = kd.n;
    if chi.len() != n {
        return Err(Error::Dimension { expected: n, found: chi.len() });
    }
    let (_, dbar) = grid.d_holo(h)?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for p in 0..grid.len() {
        let w = &grid.coords[p];
        for b in 0..n {
            let mut contraction = C64::new(0.0, 0.0);
            for a in 0..n {
                contraction += w[a] * chi[a] * kd.g[p * n * n + a * n + b];
            }
            worst = worst.max((dbar[p * n + b] - contraction).norm());
            scale = scale.max(contraction.norm());
        }
    }
    Ok(worst / scale.max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_p1_backend, build_product_backend, metric_from_potential, FiberMetric};
    use crate::linalg::random_hermitian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p1_blocks_and_generator() {
        let f = build_p1_backend(2, 16, 6).unwrap();
        let wd = weight_blocks(&f).unwrap();
        assert_eq!(wd.characters, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(wd.block_sizes, vec![1, 1, 1]);
        let a = lie_rep(&wd, 0).unwrap().a;
        assert_eq!(a, diag(&[-1.0, 0.0, 1.0]));
        assert!(lie_rep(&wd, 1).is_err());
    }

    #[test]
    fn product_blocks() {
        let a = build_p1_backend(1, 16, 4).unwrap();
        let p = build_product_backend(&a, &a).unwrap();
        let wd = weight_blocks(&p).unwrap();
        assert_eq!(wd.characters.len(), 4);
        assert_eq!(wd.torus_rank, 2);
        let centered = wd.centered_characters();
        for r in 0..2 {
            let s: f64 = centered.iter().zip(&wd.block_sizes).map(|(ch, n)| ch[r] * *n as f64).sum();
            assert!(s.abs() < 1e-15);
        }
        let basis = vt_basis(&wd);
        assert!(((&basis[0] * &basis[1]) - (&basis[1] * &basis[0])).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wd = decompose(&[vec![0], vec![1], vec![1], vec![2]]).unwrap();
        let m = random_hermitian(&mut rng, 4);
        let n = random_hermitian(&mut rng, 4);
        let pm = project_s_t(&m, &wd);
        assert!(frob_dist(&project_s_t(&pm, &wd), &pm) < 1e-14);
        assert!(frob_inner(&(&m - &pm), &project_s_t(&n, &wd)).abs() < 1e-12);
        assert!(pm[(1, 2)].norm() > 0.0 && pm[(0, 1)].norm() == 0.0);
        let basis = vt_basis(&wd);
        let (vt, perp) = project_vt(&pm, &basis).unwrap();
        assert!(frob_inner(&vt, &perp).abs() < 1e-12);
        let total = frob_inner(&pm, &pm);
        assert!((frob_inner(&vt, &vt) + frob_inner(&perp, &perp) - total).abs() < 1e-12 * total);
    }

    #[test]
    fn hand_computed_perp() {
        let wd = decompose(&[vec![0], vec![1], vec![2]]).unwrap();
        let a = diag(&[1.0, -2.0, 1.0]);
        let (vt, perp) = project_vt(&a, &vt_basis(&wd)).unwrap();
        assert!(frob_inner(&vt, &vt) < 1e-28);
        assert!(frob_dist(&perp, &a) < 1e-15);
        let dir = HermitianDirection::classify(a, &wd, &vt_basis(&wd)).unwrap();
        assert!(dir.in_s_t && dir.in_vt_perp && !dir.in_vt);
    }

    #[test]
    fn rank_deficient_basis() {
        let b = diag(&[1.0, -1.0]);
        assert!(matches!(project_vt(&b, &[b.clone(), b.scale(2.0)]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn shifted_hamiltonian_for_perturbed_metric() {
        let frame = build_p1_backend(1, 64, 128).unwrap();
        let round = metric_from_potential(&frame, &FiberMetric::from_potential(frame.round_potential())).unwrap();
        let h = frame.eval(|p| -p[0].cos() / 2.0);
        assert!(hamiltonian_residual(&frame.grid, &round, &h, &[1.0]).unwrap() < 1e-10);
        let phi = frame.eval(|p| 0.1 * p[0].cos());
        let hs = hamiltonian_shift(&frame.grid, &round, &h, &phi).unwrap();
        let perturbed = metric_from_potential(&frame, &FiberMetric::perturbed_round(&frame, &phi)).unwrap();
        assert!(hamiltonian_residual(&frame.grid, &perturbed, &hs, &[1.0]).unwrap() < 1e-6);
        assert!(hamiltonian_residual(&frame.grid, &perturbed, &h, &[1.0]).unwrap() > 1e-2);
        let unchanged = hamiltonian_shift(&frame.grid, &round, &h, &vec![3.0; frame.n_points()]).unwrap();
        assert!(unchanged.iter().zip(&h).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
