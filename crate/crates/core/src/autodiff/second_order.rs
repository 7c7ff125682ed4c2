//! Second-order products from central differences of first-order gradients.

use crate::error::{Error, Result};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Default step `1e-4 · (1 + ‖θ‖)`.
pub fn default_step(theta: &[f64]) -> f64 {
    1e-4 * (1.0 + norm(theta))
}

/// `(g(θ + h·u) − g(θ − h·u)) / 2h · ‖v‖` with `u = v / ‖v‖`, where `g` is
/// any gradient map. Normalizing the direction keeps the probe at distance
/// `h` from `θ` whatever the scale of `v`.
fn central_difference<G>(grad: G, theta: &[f64], v: &[f64], eps: Option<f64>) -> Result<Vec<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if theta.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} entries, parameters have {}",
            v.len(),
            theta.len()
        )));
    }
    let h = eps.unwrap_or_else(|| default_step(theta));
    let scale = 1.0 + norm(theta);
    if !(h > 0.0) || h < 1e3 * f64::EPSILON * scale {
        return Err(Error::StepUnderflow(h));
    }
    let vn = norm(v);
    if vn == 0.0 {
        // The output length is that of the gradient, which may differ from θ.
        let g = grad(theta)?;
        return Ok(vec![0.0; g.len()]);
    }
    if !vn.is_finite() {
        return Err(Error::InvalidParameter {
            name: "v",
            reason: "direction is not finite".into(),
        });
    }
    let shifted = |sign: f64| -> Vec<f64> {
        theta
            .iter()
            .zip(v)
            .map(|(t, d)| t + sign * h * d / vn)
            .collect()
    };
    let (plus, minus) = rayon::join(|| grad(&shifted(1.0)), || grad(&shifted(-1.0)));
    let (plus, minus) = (plus?, minus?);
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) / (2.0 * h) * vn)
        .collect())
}

/// Hessian-vector product `∇²_θ L · v` from a gradient map `θ ↦ ∇_θ L`.
pub fn hvp<G>(grad_theta: G, theta: &[f64], v: &[f64], eps: Option<f64>) -> Result<Vec<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    central_difference(grad_theta, theta, v, eps)
}

/// Mixed product `(∂²L/∂α∂θ) · v` from a map `θ ↦ ∇_α L(θ, α)` at fixed `α`.
pub fn mixed_vjp<G>(grad_alpha: G, theta: &[f64], v: &[f64], eps: Option<f64>) -> Result<Vec<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    central_difference(grad_alpha, theta, v, eps)
}
