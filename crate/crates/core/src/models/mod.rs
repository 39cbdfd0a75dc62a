//! Regression families, their flat parameter layouts and diagnostics.

mod dc;
mod nn;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};

pub use dc::{dc_components, DcParts};
pub(crate) use dc::{DcEvaluator, DcScratch};
pub use nn::{nn_reparam, nn_reparam_inverse, predict_reparameterized};

/// Lower bound on the scale coefficient of exponential and power models.
pub const POSITIVE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Identity,
    /// Not positively homogeneous; usable for prediction only.
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        match *self {
            Activation::Relu => t.max(0.0),
            Activation::LeakyRelu { slope } => {
                if t >= 0.0 {
                    t
                } else {
                    slope * t
                }
            }
            Activation::Identity => t,
            Activation::Tanh => t.tanh(),
        }
    }

    pub fn is_positively_homogeneous(&self) -> bool {
        !matches!(self, Activation::Tanh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelFamily {
    /// `θ₁ᵀx + θ₀`, layout `[θ₁, θ₀]`.
    Linear,
    /// `max_i (a_iᵀx + b_i) − max_j (c_jᵀx + d_j)`, layout
    /// `[a_1, b_1, …, a_I, b_I, c_1, d_1, …, c_J, d_J]`.
    PiecewiseAffine { convex_pieces: usize, concave_pieces: usize },
    /// All monomials of total degree `<= degree`, ordered by total degree and
    /// then lexicographically (largest exponent of `x_1` first).
    Polynomial { degree: usize },
    /// `θ₀ exp(θ₁ᵀx)`, layout `[θ₁, θ₀]`, `θ₀ >= POSITIVE_FLOOR`.
    Exponential,
    /// `θ₀ + Σ θ_i ln x_i`, layout `[θ₀, θ_1, …, θ_p]`.
    Logarithmic,
    /// `θ₀ Π x_i^{θ_i}`, layout `[θ₀, θ_1, …, θ_p]`, `θ₀ >= POSITIVE_FLOOR`.
    Power,
    /// Layers `ℓ = 1..L` with `widths[ℓ-1]` neurons; the hidden layers use
    /// `activation`, the output layer is affine. Layout per layer: `A^(ℓ)`
    /// row-major, then `b^(ℓ)`.
    FeedforwardNn { widths: Vec<usize>, activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub family: ModelFamily,
    /// Attribute dimension `p`.
    pub dim: usize,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, dim: usize) -> Result<Self> {
        let spec = Self { family, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(dim: usize) -> Self {
        Self {
            family: ModelFamily::Linear,
            dim,
        }
    }

    pub fn piecewise_affine(dim: usize, convex_pieces: usize, concave_pieces: usize) -> Self {
        Self {
            family: ModelFamily::PiecewiseAffine {
                convex_pieces,
                concave_pieces,
            },
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("attribute dimension must be at least 1"));
        }
        match &self.family {
            ModelFamily::PiecewiseAffine {
                convex_pieces,
                concave_pieces,
            } if *convex_pieces == 0 || *concave_pieces == 0 => {
                Err(Error::domain("piecewise affine piece counts must be at least 1"))
            }
            ModelFamily::FeedforwardNn { widths, activation } => {
                if widths.is_empty() || widths.contains(&0) {
                    return Err(Error::domain("network layer widths must be nonempty and >= 1"));
                }
                if widths[widths.len() - 1] != 1 {
                    return Err(Error::domain("final network layer must have width 1"));
                }
                if let Activation::LeakyRelu { slope } = activation {
                    if !slope.is_finite() {
                        return Err(Error::domain("leaky relu slope must be finite"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            ModelFamily::Linear => "linear",
            ModelFamily::PiecewiseAffine { .. } => "piecewise_affine",
            ModelFamily::Polynomial { .. } => "polynomial",
            ModelFamily::Exponential => "exponential",
            ModelFamily::Logarithmic => "logarithmic",
            ModelFamily::Power => "power",
            ModelFamily::FeedforwardNn { .. } => "feedforward_nn",
        }
    }

    /// Number of scalar parameters.
    pub fn param_len(&self) -> usize {
        let p = self.dim;
        match &self.family {
            ModelFamily::Linear | ModelFamily::Exponential => p + 1,
            ModelFamily::Logarithmic | ModelFamily::Power => p + 1,
            ModelFamily::PiecewiseAffine {
                convex_pieces,
                concave_pieces,
            } => (convex_pieces + concave_pieces) * (p + 1),
            ModelFamily::Polynomial { degree } => binomial(degree + p, p),
            ModelFamily::FeedforwardNn { widths, .. } => {
                let mut prev = p;
                widths
                    .iter()
                    .map(|&m| {
                        let n = m * (prev + 1);
                        prev = m;
                        n
                    })
                    .sum()
            }
        }
    }

    /// Whether `f(x, θ)` is linear in `θ`.
    pub fn is_parameter_linear(&self) -> bool {
        matches!(
            self.family,
            ModelFamily::Linear | ModelFamily::Polynomial { .. } | ModelFamily::Logarithmic
        )
    }

    /// Named parameter blocks and the slices they occupy.
    pub fn layout(&self) -> Vec<(String, Range<usize>)> {
        let p = self.dim;
        match &self.family {
            ModelFamily::Linear | ModelFamily::Exponential => {
                vec![("theta1".into(), 0..p), ("theta0".into(), p..p + 1)]
            }
            ModelFamily::Logarithmic | ModelFamily::Power => {
                vec![("theta0".into(), 0..1), ("theta1".into(), 1..p + 1)]
            }
            ModelFamily::PiecewiseAffine {
                convex_pieces,
                concave_pieces,
            } => {
                let mut out = Vec::new();
                let mut at = 0;
                for i in 0..*convex_pieces {
                    out.push((format!("a{}", i + 1), at..at + p));
                    out.push((format!("b{}", i + 1), at + p..at + p + 1));
                    at += p + 1;
                }
                for j in 0..*concave_pieces {
                    out.push((format!("c{}", j + 1), at..at + p));
                    out.push((format!("d{}", j + 1), at + p..at + p + 1));
                    at += p + 1;
                }
                out
            }
            ModelFamily::Polynomial { .. } => vec![("coefficients".into(), 0..self.param_len())],
            ModelFamily::FeedforwardNn { widths, .. } => {
                let mut out = Vec::new();
                let mut at = 0;
                let mut prev = p;
                for (l, &m) in widths.iter().enumerate() {
                    out.push((format!("A{}", l + 1), at..at + m * prev));
                    at += m * prev;
                    out.push((format!("b{}", l + 1), at..at + m));
                    at += m;
                    prev = m;
                }
                out
            }
        }
    }

    /// Monomial exponents for the polynomial family in layout order.
    pub fn monomials(&self) -> Vec<Vec<u32>> {
        match self.family {
            ModelFamily::Polynomial { degree } => monomial_exponents(self.dim, degree),
            _ => Vec::new(),
        }
    }

    /// Feature map `φ(x)` with `f(x, θ) = θᵀφ(x)` for parameter-linear families.
    pub(crate) fn features(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self.family {
            ModelFamily::Linear => {
                out.extend_from_slice(x);
                out.push(1.0);
            }
            ModelFamily::Logarithmic => {
                out.push(1.0);
                out.extend(x.iter().map(|v| v.ln()));
            }
            ModelFamily::Polynomial { degree } => {
                for e in monomial_exponents(self.dim, degree) {
                    out.push(e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product());
                }
            }
            _ => unreachable!("features() called on a non parameter-linear family"),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::contract(format!(
                "attribute vector has length {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        if matches!(self.family, ModelFamily::Logarithmic | ModelFamily::Power) && x.iter().any(|v| *v <= 0.0)
        {
            return Err(Error::domain(format!("{} model requires all attributes > 0", self.name())));
        }
        Ok(())
    }

    /// Evaluate the family formula on raw parameter data. No layout or domain checks.
    pub(crate) fn eval_raw(&self, theta: &[f64], x: &[f64]) -> f64 {
        let p = self.dim;
        match &self.family {
            ModelFamily::Linear => dot(&theta[..p], x) + theta[p],
            ModelFamily::PiecewiseAffine {
                convex_pieces,
                concave_pieces,
            } => {
                let (g, _) = max_affine(&theta[..convex_pieces * (p + 1)], x);
                let (h, _) = max_affine(&theta[convex_pieces * (p + 1)..][..concave_pieces * (p + 1)], x);
                g - h
            }
            ModelFamily::Polynomial { degree } => monomial_exponents(p, *degree)
                .iter()
                .zip(theta)
                .map(|(e, c)| c * e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product::<f64>())
                .sum(),
            ModelFamily::Exponential => theta[p] * dot(&theta[..p], x).exp(),
            ModelFamily::Logarithmic => theta[0] + theta[1..].iter().zip(x).map(|(t, v)| t * v.ln()).sum::<f64>(),
            ModelFamily::Power => theta[0] * theta[1..].iter().zip(x).map(|(t, v)| v.powf(*t)).product::<f64>(),
            ModelFamily::FeedforwardNn { widths, activation } => nn::forward(p, widths, *activation, theta, x),
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Exponent tuples of total degree `0..=degree`, graded, and within a degree
/// lexicographically descending.
fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(rest: u32, slots: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            prefix.push(rest);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=rest).rev() {
            prefix.push(k);
            fill(rest - k, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=degree as u32 {
        fill(d, dim, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `max_k (w_kᵀx + c_k)` over consecutive `(w_k, c_k)` blocks of `params`,
/// returning the value and the lowest maximizing index.
#[inline]
pub(crate) fn max_affine(params: &[f64], x: &[f64]) -> (f64, usize) {
    let stride = x.len() + 1;
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (k, block) in params.chunks_exact(stride).enumerate() {
        let v = dot(&block[..x.len()], x) + block[x.len()];
        if v > best {
            best = v;
            arg = k;
        }
    }
    (best, arg)
}

/// Flat parameter vector tagged with the family it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Family name, e.g. `piecewise_affine`.
    pub layout: String,
    pub data: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: &ModelSpec, data: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if data.len() != spec.param_len() {
            return Err(Error::contract(format!(
                "{} model with p = {} needs {} parameters, got {}",
                spec.name(),
                spec.dim,
                spec.param_len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("parameters must be finite"));
        }
        let scale = match spec.family {
            ModelFamily::Exponential => Some(data[spec.dim]),
            ModelFamily::Power => Some(data[0]),
            _ => None,
        };
        if let Some(s) = scale {
            if s < POSITIVE_FLOOR {
                return Err(Error::domain(format!(
                    "scale coefficient {s} below the admissible floor {POSITIVE_FLOOR}"
                )));
            }
        }
        Ok(Self {
            layout: spec.name().to_string(),
            data,
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            layout: spec.name().to_string(),
            data: vec![0.0; spec.param_len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn check_matches(&self, spec: &ModelSpec) -> Result<()> {
        if self.layout != spec.name() || self.data.len() != spec.param_len() {
            return Err(Error::contract(format!(
                "parameter vector ({}, len {}) does not match {} model (len {})",
                self.layout,
                self.data.len(),
                spec.name(),
                spec.param_len()
            )));
        }
        Ok(())
    }
}

pub fn predict(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> Result<f64> {
    theta.check_matches(spec)?;
    spec.check_input(x)?;
    Ok(spec.eval_raw(&theta.data, x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityReport {
    /// `max |f(x, aθ) − a f(x, θ)|` over the tested grid.
    pub max_deviation: f64,
    /// `(a, index into xs, deviation)` for the worst violation, if any.
    pub witness: Option<(f64, usize, f64)>,
    pub passed: bool,
}

/// Deviations below `HOMOGENEITY_TOL * max(1, |a f(x, θ)|)` count as equality.
pub const HOMOGENEITY_TOL: f64 = 1e-9;

/// Sampled check of `f(x, aθ) = a f(x, θ)` for `a >= 0`.
pub fn check_positive_homogeneity(
    spec: &ModelSpec,
    theta: &ParamVector,
    scales: &[f64],
    xs: &[Vec<f64>],
) -> Result<HomogeneityReport> {
    theta.check_matches(spec)?;
    if scales.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::domain("scales must be finite and nonnegative"));
    }
    for x in xs {
        spec.check_input(x)?;
    }
    let mut max_deviation: f64 = 0.0;
    let mut witness = None;
    let mut worst_excess = 0.0;
    let mut scaled = theta.data.clone();
    for &a in scales {
        for (v, t) in scaled.iter_mut().zip(&theta.data) {
            *v = a * t;
        }
        for (i, x) in xs.iter().enumerate() {
            let target = a * spec.eval_raw(&theta.data, x);
            let dev = (spec.eval_raw(&scaled, x) - target).abs();
            max_deviation = max_deviation.max(dev);
            let excess = dev / (HOMOGENEITY_TOL * target.abs().max(1.0));
            if excess > 1.0 && excess > worst_excess {
                worst_excess = excess;
                witness = Some((a, i, dev));
            }
        }
    }
    Ok(HomogeneityReport {
        max_deviation,
        passed: witness.is_none(),
        witness,
    })
}

/// Project a direction onto the admissible cone of the family (the scale
/// coefficient of exponential and power models must be nonnegative).
fn project_to_cone(spec: &ModelSpec, theta: &mut [f64]) {
    match spec.family {
        ModelFamily::Exponential => theta[spec.dim] = theta[spec.dim].max(0.0),
        ModelFamily::Power => theta[0] = theta[0].max(0.0),
        _ => {}
    }
}

fn random_unit(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Monte-Carlo lower bound on `sup_{‖θ‖=1} P(|f(X, θ)| < δ)` under `data`.
///
/// Half of the directions are Gaussian on the sphere (projected onto the
/// admissible cone, resampled when the projection vanishes). For
/// parameter-linear families the other half are elemental directions:
/// unit vectors orthogonal to the features of `q − 1` randomly chosen data
/// points, which find hyperplanes the data concentrates on.
pub fn probabilistic_condition_estimate(
    spec: &ModelSpec,
    data: &DataSet,
    delta: f64,
    num_dirs: usize,
    seed: u64,
) -> Result<f64> {
    spec.validate()?;
    if num_dirs == 0 {
        return Err(Error::domain("num_dirs must be at least 1"));
    }
    if data.dim() != spec.dim {
        return Err(Error::contract("data dimension does not match the model"));
    }
    for i in 0..data.len() {
        spec.check_input(data.x(i))?;
    }
    let q = spec.param_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass = |theta: &[f64]| -> f64 {
        (0..data.len())
            .filter(|&i| spec.eval_raw(theta, data.x(i)).abs() < delta)
            .map(|i| data.weight(i))
            .sum()
    };
    let mut best: f64 = 0.0;
    let mut feats = Vec::with_capacity(q);
    for d in 0..num_dirs {
        let theta = if spec.is_parameter_linear() && d % 2 == 1 && q > 1 {
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(q - 1);
            for _ in 0..q - 1 {
                let i = rng.random_range(0..data.len());
                spec.features(data.x(i), &mut feats);
                let mut v = feats.clone();
                for b in &basis {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
                let n = dot(&v, &v).sqrt();
                if n > 1e-10 {
                    basis.push(v.into_iter().map(|x| x / n).collect());
                }
            }
            let mut g = random_unit(&mut rng, q);
            for b in &basis {
                let c = dot(&g, b);
                g.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let n = dot(&g, &g).sqrt();
            if n < 1e-12 {
                continue;
            }
            g.into_iter().map(|x| x / n).collect()
        } else {
            loop {
                let mut v = random_unit(&mut rng, q);
                project_to_cone(spec, &mut v);
                let n = dot(&v, &v).sqrt();
                if n > 1e-12 {
                    break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
                }
            }
        };
        best = best.max(mass(&theta));
    }
    Ok(best.min(1.0))
}
