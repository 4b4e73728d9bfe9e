//! Gauss–Legendre rules and spectral differentiation matrices.

use std::f64::consts::PI;

/// Gauss–Legendre nodes (ascending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub fn legendre(n: usize, x: f64) -> f64 {
    legendre_with_derivative(n, x).0
}

/// Dense row-major square matrix.
#[derive(Debug, Clone)]
pub struct DiffMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DiffMatrix {
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(f).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Applies the matrix along a strided axis of a flattened array.
    pub fn apply_strided(&self, f: &[f64], offset: usize, stride: usize, out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (j, a) in row.iter().enumerate() {
                acc += a * f[offset + j * stride];
            }
            out[offset + i * stride] = acc;
        }
    }
}

/// Collocation derivative matrix on Gauss–Legendre nodes, via the
/// closed-form barycentric weights `(-1)^j sqrt((1 - x_j²) w_j)`.
pub fn legendre_diff_matrix(nodes: &[f64], weights: &[f64]) -> DiffMatrix {
    let n = nodes.len();
    let bary: Vec<f64> = (0..n)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            s * ((1.0 - nodes[j] * nodes[j]) * weights[j]).sqrt()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                data[i * n + j] = v;
                diag -= v;
            }
        }
        data[i * n + i] = diag;
    }
    DiffMatrix { n, data }
}

/// First and second Fourier derivative matrices on `n` (even) equispaced
/// points of [0, 2π).
pub fn fourier_diff_matrices(n: usize) -> (DiffMatrix, DiffMatrix) {
    let h = 2.0 * PI / n as f64;
    let mut d1 = vec![0.0; n * n];
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let m = i as isize - j as isize;
            if m == 0 {
                d2[i * n + j] = -PI * PI / (3.0 * h * h) - 1.0 / 6.0;
            } else {
                let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let half = m as f64 * h / 2.0;
                d1[i * n + j] = 0.5 * sign / half.tan();
                d2[i * n + j] = -0.5 * sign / (half.sin() * half.sin());
            }
        }
    }
    // negative-sum diagonal: constants are annihilated to rounding
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| d2[i * n + j]).sum();
        d2[i * n + i] = -off;
    }
    (DiffMatrix { n, data: d1 }, DiffMatrix { n, data: d2 })
}
