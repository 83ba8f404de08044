//! Digamma and the posterior expectations consumed by the E-step.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::math;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// B_{2k} / (2k) for k = 1..7.
const ASYMPTOTIC: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

const SHIFT_THRESHOLD: f64 = 6.0;

/// The digamma function ψ(x) for x > 0.
///
/// Shifts the argument above 6 with ψ(x) = ψ(x+1) − 1/x, then evaluates
/// ψ(x) ≈ ln x − 1/(2x) − Σ B_{2k}/(2k x^{2k}) through x⁻¹⁴.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(alloc::format!("digamma needs a finite x > 0, got {x}")));
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    // Horner in 1/z² from the highest-order term down.
    let mut series = 0.0;
    for &c in ASYMPTOTIC.iter().rev() {
        series = (series + c) * inv2;
    }
    Ok(acc + math::ln(z) - 0.5 / z - series)
}

/// `E[log π_k] = ψ(α_k) − ψ(Σ α)`.
pub fn expect_log_mixture_weights(alpha: &[f64]) -> Result<Vec<f64>> {
    if let Some(a) = alpha.iter().find(|&&a| !(a > 0.0)) {
        return Err(Error::Domain(alloc::format!("Dirichlet concentration must be > 0, got {a}")));
    }
    let total = digamma(alpha.iter().sum())?;
    alpha.iter().map(|&a| Ok(digamma(a)? - total)).collect()
}

/// `E[log |Λ|] = Σ_{d=1}^{D} ψ((ν + 1 − d)/2) + D log 2 + log |Δ|` for a
/// Wishart with `dof` degrees of freedom and scale `Δ`.
pub fn expect_log_det_precision(dof: f64, scale: &SquareMatrix) -> Result<f64> {
    let d = scale.dim();
    if !(dof > d as f64 - 1.0) {
        return Err(Error::Domain(alloc::format!(
            "Wishart degrees of freedom must exceed D - 1 = {}, got {dof}",
            d as f64 - 1.0
        )));
    }
    let log_det = scale.cholesky()?.log_det();
    let mut acc = d as f64 * core::f64::consts::LN_2 + log_det;
    for i in 1..=d {
        acc += digamma((dof + 1.0 - i as f64) / 2.0)?;
    }
    Ok(acc)
}

/// `E[(x − μ)ᵀ Λ (x − μ)] = D/γ + ν (x − υ)ᵀ Δ (x − υ)`.
pub fn expect_quadratic(
    x: &[f64],
    mean: &[f64],
    precision_scale: f64,
    dof: f64,
    scale: &SquareMatrix,
) -> Result<f64> {
    if !(precision_scale > 0.0) {
        return Err(Error::Domain(alloc::format!(
            "precision scaling must be > 0, got {precision_scale}"
        )));
    }
    check_dims(x, mean, scale)?;
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    Ok(scale.dim() as f64 / precision_scale + dof * scale.quadratic_form(&diff))
}

/// `E[log N(x | μ, Λ⁻¹)] = −D/2 log 2π + ½ E[log |Λ|] − ½ E[(x − μ)ᵀ Λ (x − μ)]`
/// under the Normal-Wishart posterior `(υ, γ, ν, Δ)`.
pub fn expect_log_gaussian(
    x: &[f64],
    mean: &[f64],
    precision_scale: f64,
    dof: f64,
    scale: &SquareMatrix,
) -> Result<f64> {
    let d = scale.dim() as f64;
    let log_det = expect_log_det_precision(dof, scale)?;
    let quad = expect_quadratic(x, mean, precision_scale, dof, scale)?;
    Ok(-0.5 * d * LN_2PI + 0.5 * log_det - 0.5 * quad)
}

fn check_dims(x: &[f64], mean: &[f64], scale: &SquareMatrix) -> Result<()> {
    if x.len() != scale.dim() || mean.len() != scale.dim() {
        return Err(crate::error::invalid!(
            "dimension mismatch: x has {}, mean has {}, scale is {}x{}",
            x.len(),
            mean.len(),
            scale.dim(),
            scale.dim()
        ));
    }
    Ok(())
}

pub(crate) fn ln_2pi() -> f64 {
    LN_2PI
}
