//! Difference-of-convex splitting of a single regression loss
//! `ℓ(θ) = L(|f(x, θ) − y|) = φ(θ) − ψ(θ)`.
//!
//! Parameter-linear families give a convex loss, so `ψ ≡ 0`. For piecewise
//! affine models under the absolute loss, with `g = max_i (a_iᵀx + b_i)` and
//! `h = max_j (c_jᵀx + d_j)`,
//! `|g − h − y| = 2 max(g, h + y) − (g + h) − y`, giving
//! `φ = 2 max(g, h + y) − y` and `ψ = g + h`.
//!
//! With a positive temperature every max is replaced by its log-sum-exp
//! upper bound, which the inner solver uses as a smooth surrogate.

use super::{ModelFamily, ModelSpec, ParamVector};
use crate::error::{Error, Result};
use crate::losses::LossSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct DcParts {
    pub phi: f64,
    pub phi_subgrad: Vec<f64>,
    pub psi: f64,
    pub psi_subgrad: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Split {
    ParameterLinear(LossSpec),
    PiecewiseAbsolute { convex_pieces: usize, concave_pieces: usize },
}

/// Evaluates `φ`, `ψ` and their (sub)gradients for one `(model, loss)` pair.
#[derive(Debug, Clone)]
pub(crate) struct DcEvaluator {
    spec: ModelSpec,
    split: Split,
}

#[derive(Debug, Default, Clone)]
pub(crate) struct DcScratch {
    feats: Vec<f64>,
    pieces: Vec<f64>,
    weights: Vec<f64>,
    pub(crate) grad_phi: Vec<f64>,
    pub(crate) grad_psi: Vec<f64>,
}

impl DcScratch {
    pub(crate) fn new(q: usize) -> Self {
        Self {
            feats: Vec::with_capacity(q),
            pieces: Vec::new(),
            weights: Vec::new(),
            grad_phi: vec![0.0; q],
            grad_psi: vec![0.0; q],
        }
    }
}

/// `max_k z_k` (lowest index on ties) or `tau * log Σ exp(z_k / tau)`, writing
/// the selection weights into `z`.
#[inline]
fn soft_max_in_place(z: &mut [f64], tau: f64) -> f64 {
    let (mut m, mut arg) = (f64::NEG_INFINITY, 0);
    for (k, &v) in z.iter().enumerate() {
        if v > m {
            m = v;
            arg = k;
        }
    }
    if tau <= 0.0 {
        z.iter_mut().for_each(|v| *v = 0.0);
        z[arg] = 1.0;
        return m;
    }
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = ((*v - m) / tau).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
    m + tau * total.ln()
}

impl DcEvaluator {
    pub(crate) fn new(spec: &ModelSpec, loss: LossSpec) -> Result<Self> {
        spec.validate()?;
        loss.validate()?;
        let split = match (&spec.family, loss) {
            (ModelFamily::Linear | ModelFamily::Polynomial { .. } | ModelFamily::Logarithmic, loss) => {
                Split::ParameterLinear(loss)
            }
            (
                ModelFamily::PiecewiseAffine {
                    convex_pieces,
                    concave_pieces,
                },
                LossSpec::Absolute,
            ) => Split::PiecewiseAbsolute {
                convex_pieces: *convex_pieces,
                concave_pieces: *concave_pieces,
            },
            (_, loss) => {
                return Err(Error::UnsupportedCombination {
                    model: spec.name().to_string(),
                    loss: loss.name().to_string(),
                })
            }
        };
        Ok(Self {
            spec: spec.clone(),
            split,
        })
    }

    pub(crate) fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Returns `(φ, ψ)` and leaves their gradients in `scratch`.
    pub(crate) fn eval(&self, theta: &[f64], x: &[f64], y: f64, tau: f64, scratch: &mut DcScratch) -> (f64, f64) {
        match self.split {
            Split::ParameterLinear(loss) => {
                self.spec.features(x, &mut scratch.feats);
                let r = super::dot(theta, &scratch.feats) - y;
                let (phi, slope) = match loss {
                    LossSpec::Absolute if tau > 0.0 => {
                        let a = r.abs();
                        (a + tau * (-2.0 * a / tau).exp().ln_1p(), (r / tau).tanh())
                    }
                    LossSpec::Absolute => (r.abs(), if r >= 0.0 { 1.0 } else { -1.0 }),
                    _ => (loss.value(r.abs()), loss.derivative(r.abs()) * r.signum()),
                };
                for (g, f) in scratch.grad_phi.iter_mut().zip(&scratch.feats) {
                    *g = slope * f;
                }
                scratch.grad_psi.iter_mut().for_each(|g| *g = 0.0);
                (phi, 0.0)
            }
            Split::PiecewiseAbsolute {
                convex_pieces,
                concave_pieces,
            } => {
                let p = x.len();
                let stride = p + 1;
                let total = convex_pieces + concave_pieces;
                scratch.pieces.clear();
                for block in theta.chunks_exact(stride).take(total) {
                    scratch.pieces.push(super::dot(&block[..p], x) + block[p]);
                }
                // ψ = g + h
                let mut pieces = std::mem::take(&mut scratch.pieces);
                let mut w = std::mem::take(&mut scratch.weights);
                w.clear();
                w.extend_from_slice(&pieces);
                let g = soft_max_in_place(&mut w[..convex_pieces], tau);
                let h = soft_max_in_place(&mut w[convex_pieces..], tau);
                write_block_grad(&mut scratch.grad_psi, &w, x);
                scratch.weights = w;
                // φ = 2 max(g, h + y) − y over all pieces jointly
                pieces[convex_pieces..].iter_mut().for_each(|v| *v += y);
                let m = soft_max_in_place(&mut pieces, tau);
                pieces.iter_mut().for_each(|v| *v *= 2.0);
                write_block_grad(&mut scratch.grad_phi, &pieces, x);
                scratch.pieces = pieces;
                (2.0 * m - y, g + h)
            }
        }
    }
}

#[inline]
fn write_block_grad(grad: &mut [f64], weights: &[f64], x: &[f64]) {
    let p = x.len();
    for (block, &w) in grad.chunks_exact_mut(p + 1).zip(weights) {
        for (g, xi) in block[..p].iter_mut().zip(x) {
            *g = w * xi;
        }
        block[p] = w;
    }
}

/// Exact DC split of the loss at one data point, with subgradients.
pub fn dc_components(spec: &ModelSpec, loss: LossSpec, x: &[f64], y: f64, theta: &ParamVector) -> Result<DcParts> {
    let eval = DcEvaluator::new(spec, loss)?;
    theta.check_matches(spec)?;
    spec.check_input(x)?;
    let mut scratch = DcScratch::new(spec.param_len());
    let (phi, psi) = eval.eval(&theta.data, x, y, 0.0, &mut scratch);
    Ok(DcParts {
        phi,
        phi_subgrad: scratch.grad_phi,
        psi,
        psi_subgrad: scratch.grad_psi,
    })
}
