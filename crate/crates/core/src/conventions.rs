//! Normalization constants, fixed once and used everywhere.
//!
//! The upstairs space is C^d with the section norm ⟨1,1⟩ = e^{−|z|²} and the
//! Kähler form ω = i Σ dz_i ∧ dz̄_i. Everything downstream hangs off that one
//! choice:
//!
//! * the Riemannian metric is twice the Euclidean metric of R^{2d}, so the
//!   Liouville measure is 2^d times Lebesgue measure on C^d = R^{2d};
//! * in action coordinates q_i = |z_i|², Lebesgue measure on C^d pushes to
//!   π^d dq times the torus average;
//! * the reduced Liouville measure on the quotient pushes forward under the
//!   moment chart to (2π)^n dσ, with dσ Lebesgue on the moment polytope and
//!   n its dimension;
//! * the stored orbit-volume function is V(q) = (2π)^m √det Γ(q) with
//!   Γ_ab(q) = Σ_i α_ia α_ib ℓ_i(q); the Riemannian volume of the torus orbit
//!   through a level-set point over q is 2^{m/2} V(q).
//!
//! The Legendre-transform module lets x_i be log|z_i|² (so the flat potential
//! is F(x) = Σ e^{x_i} = |z|²); an alternative convention found in the wild
//! halves x and squares the pointwise monomial norm ρ. The conversion
//! exponent between the two ρ's is stored here and tested against both
//! displays rather than silently folded in.

pub const PI: f64 = core::f64::consts::PI;
pub const TAU: f64 = 2.0 * PI;

/// Liouville measure on C^d is `2^d` times Lebesgue: per-coordinate factor.
pub const LIOUVILLE_PER_COORD: f64 = 2.0;

/// Lebesgue on C pushes to π dq on the action half-line (per coordinate).
pub const ACTION_PUSHFORWARD_PER_COORD: f64 = PI;

/// Reduced Liouville measure = (2π)^n dσ in moment coordinates.
#[inline]
pub fn reduced_measure_factor(n_downstairs: usize) -> f64 {
    crate::fmath::powi(TAU, n_downstairs as i32)
}

/// Stored orbit-volume normalization: V(q) = (2π)^m √det Γ(q).
#[inline]
pub fn orbit_volume_prefactor(m_torus: usize) -> f64 {
    crate::fmath::powi(TAU, m_torus as i32)
}

/// Riemannian orbit volume / stored V(q) = 2^{m/2}.
#[inline]
pub fn riemannian_orbit_factor(m_torus: usize) -> f64 {
    crate::fmath::powf(2.0, m_torus as f64 / 2.0)
}

/// The alternative Legendre convention's pointwise monomial norm is the
/// square of this module's: log ρ_alt = LEGENDRE_RHO_EXPONENT · log ρ.
pub const LEGENDRE_RHO_EXPONENT: f64 = 2.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_compose() {
        assert_eq!(reduced_measure_factor(0), 1.0);
        assert!((reduced_measure_factor(2) - TAU * TAU).abs() < 1e-15);
        assert!((riemannian_orbit_factor(2) - 2.0).abs() < 1e-15);
        let r1 = riemannian_orbit_factor(1);
        assert!((r1 * r1 - 2.0).abs() < 1e-15);
    }
}
