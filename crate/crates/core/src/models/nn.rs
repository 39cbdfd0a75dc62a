//! Feedforward networks and the power reparameterization that makes a
//! network with positively homogeneous activations homogeneous in its
//! parameters.

use super::{Activation, ModelFamily, ModelSpec, ParamVector};
use crate::error::{Error, Result};

pub(super) fn forward(dim: usize, widths: &[usize], activation: Activation, theta: &[f64], x: &[f64]) -> f64 {
    let mut input = x.to_vec();
    let mut out = Vec::new();
    let mut prev = dim;
    let mut at = 0;
    let last = widths.len() - 1;
    for (l, &m) in widths.iter().enumerate() {
        let weights = &theta[at..at + m * prev];
        let bias = &theta[at + m * prev..at + m * prev + m];
        at += m * (prev + 1);
        out.clear();
        for r in 0..m {
            let pre = super::dot(&weights[r * prev..(r + 1) * prev], &input) + bias[r];
            out.push(if l == last { pre } else { activation.apply(pre) });
        }
        std::mem::swap(&mut input, &mut out);
        prev = m;
    }
    input[0]
}

#[inline]
fn signed_pow(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// Apply `exponent(layer, is_bias)` entrywise with sign preservation.
fn map_layers(spec: &ModelSpec, data: &[f64], exponent: impl Fn(usize, bool) -> f64) -> Vec<f64> {
    let ModelFamily::FeedforwardNn { widths, .. } = &spec.family else {
        unreachable!()
    };
    let mut out = Vec::with_capacity(data.len());
    let mut prev = spec.dim;
    let mut at = 0;
    for (l, &m) in widths.iter().enumerate() {
        let layer = l + 1;
        let we = exponent(layer, false);
        let be = exponent(layer, true);
        out.extend(data[at..at + m * prev].iter().map(|&a| signed_pow(a, we)));
        out.extend(data[at + m * prev..at + m * (prev + 1)].iter().map(|&b| signed_pow(b, be)));
        at += m * (prev + 1);
        prev = m;
    }
    out
}

fn homogeneous_network(spec: &ModelSpec, theta: &ParamVector) -> Result<usize> {
    theta.check_matches(spec)?;
    match &spec.family {
        ModelFamily::FeedforwardNn { widths, activation } => {
            if !activation.is_positively_homogeneous() {
                return Err(Error::Unsupported(format!(
                    "activation {activation:?} is not positively homogeneous"
                )));
            }
            Ok(widths.len())
        }
        _ => Err(Error::Unsupported(format!(
            "reparameterization is defined for feedforward networks, not {}",
            spec.name()
        ))),
    }
}

/// The map `T`: weights `a ↦ sign(a)|a|^L`, layer-`ℓ` biases `b ↦ sign(b)|b|^{L/ℓ}`.
pub fn nn_reparam(spec: &ModelSpec, theta: &ParamVector) -> Result<ParamVector> {
    let depth = homogeneous_network(spec, theta)? as f64;
    let data = map_layers(spec, &theta.data, |l, bias| if bias { depth / l as f64 } else { depth });
    Ok(ParamVector {
        layout: theta.layout.clone(),
        data,
    })
}

/// Inverse of [`nn_reparam`].
pub fn nn_reparam_inverse(spec: &ModelSpec, c: &ParamVector) -> Result<ParamVector> {
    let depth = homogeneous_network(spec, c)? as f64;
    let data = map_layers(spec, &c.data, |l, bias| if bias { l as f64 / depth } else { 1.0 / depth });
    Ok(ParamVector {
        layout: c.layout.clone(),
        data,
    })
}

/// Evaluate the reparameterized network `g(x, C)`, which equals
/// `f(x, T⁻¹(C))` and satisfies `g(x, λC) = λ g(x, C)` for `λ >= 0`.
pub fn predict_reparameterized(spec: &ModelSpec, c: &ParamVector, x: &[f64]) -> Result<f64> {
    let inner = nn_reparam_inverse(spec, c)?;
    super::predict(spec, &inner, x)
}
