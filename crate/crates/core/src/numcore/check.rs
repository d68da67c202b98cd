//! Centered finite differences, used as an independent gradient oracle.

use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` for every coordinate of `theta`.
pub fn finite_difference<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h} must be positive")));
    }
    let mut point = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(&point);
        point[i] = orig - h;
        let down = f(&point);
        point[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!("objective not finite around coordinate {i}")));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Finite-difference gradient of a loss over every entry of a parameter set.
pub fn finite_difference_params<F>(mut loss: F, params: &ParamSet, h: f64) -> Result<Gradients>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let theta = params.flatten();
    let mut scratch = params.clone();
    let mut failure = None;
    let flat = finite_difference(
        |t| {
            scratch.assign_flat(t).expect("same layout");
            match loss(&scratch) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &theta,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let flat = flat?;
    let mut grads = params.zeros_like();
    let mut offset = 0;
    for t in 0..grads.len() {
        let m = grads.get_mut(crate::numcore::ParamId(t));
        let n = m.len();
        m.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(grads)
}

/// `|a − g| / max(|a|, |g|, 1e−8)`.
pub fn relative_error(a: f64, g: f64) -> f64 {
    (a - g).abs() / a.abs().max(g.abs()).max(1e-8)
}

/// Largest [`relative_error`] over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &g)| relative_error(a, g))
        .fold(0.0, f64::max)
}
