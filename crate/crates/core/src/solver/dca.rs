//! Difference-of-convex form of the empirical In-CVaR objective.
//!
//! With rank weights `ω^(γ)` (the mass each point receives in the top
//! `1 − γ` tail of the loss distribution) and the per-point split
//! `ℓ_i = φ_i − ψ_i`,
//!
//! `U_γ(θ) = max_ω Σ_i ω_i φ_i(θ) + (w_i − ω_i) ψ_i(θ)`
//!
//! is convex because every coefficient is nonnegative, and
//! `(β − α) · In-CVaR = U_α − U_β`.

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::{DcEvaluator, DcScratch, ModelFamily, ModelSpec, ParamVector};
use crate::risk::{in_cvar, TrimLevels, WeightedLossSample};

/// Affine function `value + ⟨slope, θ − anchor⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMinorant {
    pub anchor: Vec<f64>,
    pub value: f64,
    pub slope: Vec<f64>,
}

impl AffineMinorant {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.value
            + self
                .slope
                .iter()
                .zip(theta.iter().zip(&self.anchor))
                .map(|(s, (t, a))| s * (t - a))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaDecomposition {
    /// `U_α(θ) / (β − α)`.
    pub u: f64,
    /// `U_β(θ) / (β − α)`.
    pub v: f64,
    /// Supporting hyperplane of `v` at `θ`.
    pub minorant: AffineMinorant,
}

/// Per-point DC values at a fixed `θ`.
pub(crate) struct PointTerms {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    /// Row-major `n × q`.
    pub grad_phi: Vec<f64>,
    pub grad_psi: Vec<f64>,
}

impl PointTerms {
    pub fn losses(&self) -> Vec<f64> {
        self.phi.iter().zip(&self.psi).map(|(a, b)| (a - b).max(0.0)).collect()
    }
}

/// A dataset paired with a supported `(model, loss)` split and trim levels.
pub(crate) struct Problem<'a> {
    pub data: &'a DataSet,
    pub eval: DcEvaluator,
    pub loss: LossSpec,
    pub levels: TrimLevels,
    pub q: usize,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a DataSet, spec: &ModelSpec, loss: LossSpec, levels: TrimLevels) -> Result<Self> {
        let eval = DcEvaluator::new(spec, loss)?;
        if data.dim() != spec.dim {
            return Err(Error::contract(format!(
                "data has dimension {}, model expects {}",
                data.dim(),
                spec.dim
            )));
        }
        if matches!(spec.family, ModelFamily::Logarithmic)
            && (0..data.len()).any(|i| data.x(i).iter().any(|v| *v <= 0.0))
        {
            return Err(Error::domain("logarithmic model requires positive attributes"));
        }
        Ok(Self {
            data,
            eval,
            loss,
            levels,
            q: spec.param_len(),
        })
    }

    pub fn terms(&self, theta: &[f64], tau: f64, scratch: &mut DcScratch) -> PointTerms {
        let n = self.data.len();
        let q = self.q;
        let mut out = PointTerms {
            phi: Vec::with_capacity(n),
            psi: Vec::with_capacity(n),
            grad_phi: vec![0.0; n * q],
            grad_psi: vec![0.0; n * q],
        };
        for i in 0..n {
            let (phi, psi) = self.eval.eval(theta, self.data.x(i), self.data.y(i), tau, scratch);
            out.phi.push(phi);
            out.psi.push(psi);
            out.grad_phi[i * q..(i + 1) * q].copy_from_slice(&scratch.grad_phi);
            out.grad_psi[i * q..(i + 1) * q].copy_from_slice(&scratch.grad_psi);
        }
        out
    }

    /// Per-point losses `L(|f(x_i, θ) − y_i|)` evaluated through the model.
    pub fn losses(&self, theta: &[f64]) -> Vec<f64> {
        let spec = self.eval.spec();
        (0..self.data.len())
            .map(|i| self.loss.value((spec.eval_raw(theta, self.data.x(i)) - self.data.y(i)).abs()))
            .collect()
    }

    /// In-CVaR of the losses at `θ`.
    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        let losses = self.losses(theta);
        if losses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                message: "non-finite loss".into(),
                theta: theta.to_vec(),
            });
        }
        let sample = WeightedLossSample::new(losses, self.data.weights().to_vec())?;
        Ok(in_cvar(&sample, self.levels))
    }

    /// Mass each point receives in the top `1 − γ` tail, ties broken by
    /// point index.
    pub fn rank_weights(&self, losses: &[f64], gamma: f64) -> Vec<f64> {
        let mut order: Vec<usize> = (0..losses.len()).collect();
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        let mut out = vec![0.0; losses.len()];
        let mut cum = 0.0;
        let last = order.len() - 1;
        for (rank, &i) in order.iter().enumerate() {
            let lower = cum;
            cum += self.data.weight(i);
            let upper = if rank == last { 1.0 } else { cum };
            out[i] = (upper - lower.max(gamma)).max(0.0).min(self.data.weight(i));
        }
        out
    }

    /// `U_γ` at the terms' `θ` for the given rank weights.
    pub fn u_value(&self, terms: &PointTerms, omega: &[f64]) -> f64 {
        (0..terms.phi.len())
            .map(|i| omega[i] * terms.phi[i] + (self.data.weight(i) - omega[i]) * terms.psi[i])
            .sum()
    }

    /// A subgradient of `U_γ` for the given rank weights.
    pub fn u_subgradient(&self, terms: &PointTerms, omega: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut g = vec![0.0; q];
        for i in 0..terms.phi.len() {
            let (a, b) = (omega[i], self.data.weight(i) - omega[i]);
            let gp = &terms.grad_phi[i * q..(i + 1) * q];
            let gs = &terms.grad_psi[i * q..(i + 1) * q];
            for k in 0..q {
                g[k] += a * gp[k] + b * gs[k];
            }
        }
        g
    }

    /// `u`, `v` and the affine minorant of `v` at `θ`.
    pub fn decompose(&self, theta: &[f64], scratch: &mut DcScratch) -> DcaDecomposition {
        let terms = self.terms(theta, 0.0, scratch);
        let losses = terms.losses();
        let width = self.levels.width();
        let omega_a = self.rank_weights(&losses, self.levels.alpha());
        let omega_b = self.rank_weights(&losses, self.levels.beta());
        let u = self.u_value(&terms, &omega_a) / width;
        let v = self.u_value(&terms, &omega_b) / width;
        let slope = self
            .u_subgradient(&terms, &omega_b)
            .into_iter()
            .map(|g| g / width)
            .collect();
        DcaDecomposition {
            u,
            v,
            minorant: AffineMinorant {
                anchor: theta.to_vec(),
                value: v,
                slope,
            },
        }
    }
}

/// Split the In-CVaR objective at `θ` into `u − v` with `u`, `v` convex,
/// and linearize `v`.
pub fn dca_decomposition(
    data: &DataSet,
    spec: &ModelSpec,
    loss: LossSpec,
    levels: TrimLevels,
    theta: &ParamVector,
) -> Result<DcaDecomposition> {
    theta.check_matches(spec)?;
    let problem = Problem::new(data, spec, loss, levels)?;
    let mut scratch = DcScratch::new(problem.q);
    Ok(problem.decompose(&theta.data, &mut scratch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::objective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> DataSet {
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        DataSet::new(xs, ys, raw.iter().map(|w| w / total).collect()).unwrap()
    }

    #[test]
    fn two_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = ModelSpec::piecewise_affine(1, 2, 2);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let data = random_instance(&mut rng, n);
            let a = rng.random_range(0.0..0.5);
            let b = rng.random_range(a + 0.01..=1.0f64).min(1.0);
            let levels = TrimLevels::new(a, b).unwrap();
            let theta = ParamVector::new(&spec, (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let d = dca_decomposition(&data, &spec, LossSpec::Absolute, levels, &theta).unwrap();
            let obj = objective(&data, &spec, LossSpec::Absolute, levels, &theta).unwrap();
            assert!((d.u - d.v - obj).abs() <= 1e-10 * (1.0 + obj), "{} vs {obj}", d.u - d.v);
        }
    }

    #[test]
    fn no_trimming_gives_mean_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_instance(&mut rng, 25);
        let spec = ModelSpec::piecewise_affine(1, 2, 2);
        let theta = ParamVector::new(&spec, (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let d = dca_decomposition(&data, &spec, LossSpec::Absolute, TrimLevels::expectation(), &theta).unwrap();
        let mut scratch = DcScratch::new(8);
        let p = Problem::new(&data, &spec, LossSpec::Absolute, TrimLevels::expectation()).unwrap();
        let t = p.terms(&theta.data, 0.0, &mut scratch);
        let psi_avg: f64 = (0..data.len()).map(|i| data.weight(i) * t.psi[i]).sum();
        let mean: f64 = p.losses(&theta.data).iter().zip(data.weights()).map(|(l, w)| l * w).sum();
        assert!((d.v - psi_avg).abs() < 1e-10);
        assert!((d.u - d.v - mean).abs() < 1e-10);
    }

    #[test]
    fn minorant_supports_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = ModelSpec::piecewise_affine(1, 2, 2);
        let levels = TrimLevels::new(0.1, 0.85).unwrap();
        for _ in 0..10 {
            let data = random_instance(&mut rng, 30);
            let theta = ParamVector::new(&spec, (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let d = dca_decomposition(&data, &spec, LossSpec::Absolute, levels, &theta).unwrap();
            for _ in 0..100 {
                let other =
                    ParamVector::new(&spec, (0..8).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
                let e = dca_decomposition(&data, &spec, LossSpec::Absolute, levels, &other).unwrap();
                assert!(e.v - d.minorant.eval(&other.data) >= -1e-8);
            }
        }
    }
}
