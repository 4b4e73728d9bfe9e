//! Convention constants linking the expansion coefficients to this crate's
//! operators. `Δ` is `g^{ab̄}∂_a∂_b̄` and `S = −Δ log det g`, both for the
//! class-one metric.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `q₁(f) = γ_q · Δf`.
    pub gamma_q: f64,
    /// `a₁ = γ_a · (−S)` up to an additive constant.
    pub gamma_a: f64,
    /// `lim tr(A_k²)/k^{n+2} = γ_V · ∫ H_X² ωⁿ/n!`.
    pub gamma_v: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { gamma_q: 1.0, gamma_a: 0.5, gamma_v: 1.0 / (2.0 * std::f64::consts::PI) }
    }
}
