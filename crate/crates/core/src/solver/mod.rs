//! Multi-start DCA for `min_θ In-CVaR_α^β(L(|f(X, θ) − Y|))` on a finite dataset.
//!
//! Each outer step linearizes `v` at the current iterate and minimizes the
//! convex surrogate `u(θ) − ⟨s, θ⟩`. The surrogate is written with an
//! auxiliary threshold `t`,
//!
//! `U_α(θ) = min_t (1 − α) t + Σ_i w_i max(φ_i(θ) − t, ψ_i(θ))`,
//!
//! which is jointly convex in `(θ, t)`. The inner solver minimizes a
//! log-sum-exp softening of it with L-BFGS and the step is kept only if the
//! exact surrogate decreases, so the objective trace is monotone.

mod dca;
mod lbfgs;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::{dot, DcScratch, ModelSpec, ParamVector};
use crate::risk::TrimLevels;
use crate::seeding;

pub use dca::{dca_decomposition, AffineMinorant, DcaDecomposition};
use dca::Problem;
use lbfgs::{minimize, LbfgsOptions};

/// Smallest admissible `β − α`.
pub const MIN_LEVEL_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub restarts: usize,
    pub max_outer_iters: usize,
    /// Stop once `(obj_t − obj_{t+1}) / max(1, obj_t)` falls below this.
    pub outer_tol: f64,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    /// Radius of the ball around zero that initial points are drawn from.
    pub init_scale: f64,
    pub seed: u64,
    /// Softening temperature relative to the current objective value; zero
    /// disables smoothing and uses subgradient steps only.
    pub smoothing_eps: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_outer_iters: 200,
            outer_tol: 1e-8,
            inner_max_iters: 100,
            inner_tol: 1e-6,
            init_scale: 1.0,
            seed: 0,
            smoothing_eps: 1e-3,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_outer_iters == 0 || self.inner_max_iters == 0 {
            return Err(Error::domain("restarts and iteration limits must be at least 1"));
        }
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::domain("tolerances must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::domain("init_scale must be finite and nonnegative"));
        }
        if !(self.smoothing_eps >= 0.0 && self.smoothing_eps.is_finite()) {
            return Err(Error::domain("smoothing_eps must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TolReached,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub best_theta: ParamVector,
    pub best_objective: f64,
    /// Objective after every accepted outer step, one list per restart.
    pub trace: Vec<Vec<f64>>,
    /// Termination of the best restart.
    pub termination: Termination,
    pub restart_terminations: Vec<Termination>,
    pub restart_index_of_best: usize,
}

/// In-CVaR of the per-point losses at `θ`.
pub fn objective(
    data: &DataSet,
    spec: &ModelSpec,
    loss: LossSpec,
    levels: TrimLevels,
    theta: &ParamVector,
) -> Result<f64> {
    theta.check_matches(spec)?;
    spec.validate()?;
    loss.validate()?;
    if data.dim() != spec.dim {
        return Err(Error::contract("data dimension does not match the model"));
    }
    let mut losses = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let f = crate::models::predict(spec, theta, data.x(i))?;
        losses.push(crate::losses::eval_loss(loss, (f - data.y(i)).abs()).map_err(|_| {
            Error::NumericalFailure {
                message: format!("non-finite residual at point {i}"),
                theta: theta.data.clone(),
            }
        })?);
    }
    let sample = crate::risk::WeightedLossSample::new(losses, data.weights().to_vec())?;
    Ok(crate::risk::in_cvar(&sample, levels))
}

/// The linearized subproblem `u(θ) − ⟨s, θ⟩` around one iterate.
struct Surrogate<'p, 'd> {
    problem: &'p Problem<'d>,
    slope: Vec<f64>,
}

impl Surrogate<'_, '_> {
    fn width(&self) -> f64 {
        self.problem.levels.width()
    }

    /// Exact value, up to the constant dropped from the minorant.
    fn value(&self, theta: &[f64], scratch: &mut DcScratch) -> f64 {
        let terms = self.problem.terms(theta, 0.0, scratch);
        let omega = self.problem.rank_weights(&terms.losses(), self.problem.levels.alpha());
        self.problem.u_value(&terms, &omega) / self.width() - dot(&self.slope, theta)
    }

    fn subgradient(&self, theta: &[f64], scratch: &mut DcScratch) -> Vec<f64> {
        let terms = self.problem.terms(theta, 0.0, scratch);
        let omega = self.problem.rank_weights(&terms.losses(), self.problem.levels.alpha());
        let w = self.width();
        self.problem
            .u_subgradient(&terms, &omega)
            .into_iter()
            .zip(&self.slope)
            .map(|(g, s)| g / w - s)
            .collect()
    }

    /// Smoothed surrogate over `z = (θ, t)`, or over `θ` alone when `α = 0`.
    fn smoothed(&self, z: &[f64], grad: &mut [f64], tau: f64, scratch: &mut DcScratch) -> f64 {
        let problem = self.problem;
        let q = problem.q;
        let alpha = problem.levels.alpha();
        let inv_w = 1.0 / self.width();
        let theta = &z[..q];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        if alpha == 0.0 {
            for i in 0..problem.data.len() {
                let wi = problem.data.weight(i) * inv_w;
                let (phi, _) = problem.eval.eval(theta, problem.data.x(i), problem.data.y(i), tau, scratch);
                total += wi * phi;
                for (g, d) in grad.iter_mut().zip(&scratch.grad_phi) {
                    *g += wi * d;
                }
            }
        } else {
            let t = z[q];
            total += (1.0 - alpha) * t * inv_w;
            let mut dt = (1.0 - alpha) * inv_w;
            for i in 0..problem.data.len() {
                let wi = problem.data.weight(i) * inv_w;
                let (phi, psi) = problem.eval.eval(theta, problem.data.x(i), problem.data.y(i), tau, scratch);
                let a = phi - t;
                let (m, pa) = soft_max2(a, psi, tau);
                total += wi * m;
                dt -= wi * pa;
                let pb = 1.0 - pa;
                for k in 0..q {
                    grad[k] += wi * (pa * scratch.grad_phi[k] + pb * scratch.grad_psi[k]);
                }
            }
            grad[q] = dt;
        }
        for (g, s) in grad.iter_mut().zip(&self.slope) {
            *g -= s;
        }
        total - dot(&self.slope, theta)
    }
}

/// `max(a, b)` or its softening, with the weight on `a`.
#[inline]
fn soft_max2(a: f64, b: f64, tau: f64) -> (f64, f64) {
    if tau <= 0.0 {
        return if a >= b { (a, 1.0) } else { (b, 0.0) };
    }
    let d = (a - b) / tau;
    let m = a.max(b);
    let pa = 1.0 / (1.0 + (-d).exp());
    (m + tau * (-d.abs()).exp().ln_1p(), pa)
}

struct RestartOutcome {
    theta: Vec<f64>,
    objective: f64,
    trace: Vec<f64>,
    termination: Termination,
}

fn random_start(q: usize, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dot(&dir, &dir).sqrt().max(1e-300);
    let r = radius * rng.random::<f64>().powf(1.0 / q as f64);
    dir.into_iter().map(|d| d * r / norm).collect()
}

/// Minimize the exact surrogate from `theta` and return a point with a
/// strictly smaller surrogate value, if one is found.
fn inner_step(
    surrogate: &Surrogate,
    theta: &[f64],
    objective: f64,
    config: &SolveConfig,
    scratch: &mut DcScratch,
) -> Option<Vec<f64>> {
    let problem = surrogate.problem;
    let q = problem.q;
    let start_value = surrogate.value(theta, scratch);
    let opts = LbfgsOptions {
        max_iters: config.inner_max_iters,
        grad_tol: config.inner_tol,
        memory: 10,
    };

    if config.smoothing_eps > 0.0 {
        let mut z0 = theta.to_vec();
        if problem.levels.alpha() > 0.0 {
            // the optimal threshold for the exact surrogate is VaR_α of the losses
            let losses = problem.losses(theta);
            let sample = crate::risk::WeightedLossSample::new(losses, problem.data.weights().to_vec()).ok()?;
            z0.push(crate::risk::var_at(&sample, problem.levels.alpha()).ok()?);
        }
        let mut tau = config.smoothing_eps * objective.max(1e-12);
        let mut z = z0;
        for _ in 0..=5 {
            // each retry warm-starts from the previous smoothed minimizer
            z = minimize(z, opts, |z, g| surrogate.smoothed(z, g, tau, scratch)).x;
            let candidate = z[..q].to_vec();
            if candidate.iter().all(|v| v.is_finite()) && surrogate.value(&candidate, scratch) < start_value {
                return Some(candidate);
            }
            if !z.iter().all(|v| v.is_finite()) {
                break;
            }
            tau *= 0.5;
        }
    }

    // subgradient step with Armijo backtracking on the exact surrogate
    let g = surrogate.subgradient(theta, scratch);
    let gg = dot(&g, &g);
    if !(gg > 0.0 && gg.is_finite()) {
        return None;
    }
    let mut step = 0.1 * (1.0 + dot(theta, theta).sqrt()) / gg.sqrt();
    for _ in 0..60 {
        let candidate: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t - step * d).collect();
        if surrogate.value(&candidate, scratch) < start_value - 1e-4 * step * gg {
            return Some(candidate);
        }
        step *= 0.5;
    }
    None
}

fn run_restart(problem: &Problem, config: &SolveConfig, restart: usize) -> Result<RestartOutcome> {
    let mut rng = seeding::stream(&[config.seed, restart as u64]);
    let mut scratch = DcScratch::new(problem.q);
    let mut theta = random_start(problem.q, config.init_scale, &mut rng);
    let mut obj = problem.objective(&theta)?;
    let mut trace = vec![obj];
    let mut termination = Termination::MaxIters;

    for _ in 0..config.max_outer_iters {
        let decomposition = problem.decompose(&theta, &mut scratch);
        let surrogate = Surrogate {
            problem,
            slope: decomposition.minorant.slope,
        };
        let Some(next) = inner_step(&surrogate, &theta, obj, config, &mut scratch) else {
            termination = Termination::TolReached;
            break;
        };
        let next_obj = problem.objective(&next)?;
        // the exact surrogate majorizes the objective, so this only guards roundoff
        if next_obj > obj {
            termination = Termination::TolReached;
            break;
        }
        let decrease = (obj - next_obj) / obj.max(1.0);
        theta = next;
        obj = next_obj;
        trace.push(obj);
        if decrease < config.outer_tol {
            termination = Termination::TolReached;
            break;
        }
    }
    Ok(RestartOutcome {
        theta,
        objective: obj,
        trace,
        termination,
    })
}

/// Fit by multi-start DCA and return the best restart.
pub fn fit_incvar(
    data: &DataSet,
    spec: &ModelSpec,
    loss: LossSpec,
    levels: TrimLevels,
    config: &SolveConfig,
) -> Result<SolveReport> {
    config.validate()?;
    if levels.width() < MIN_LEVEL_WIDTH {
        return Err(Error::domain(format!(
            "beta - alpha = {} is below {MIN_LEVEL_WIDTH}",
            levels.width()
        )));
    }
    let problem = Problem::new(data, spec, loss, levels)?;
    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(&problem, config, r))
        .collect::<Result<_>>()?;

    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    Ok(SolveReport {
        best_theta: ParamVector::new(spec, outcomes[best].theta.clone())?,
        best_objective: outcomes[best].objective,
        termination: outcomes[best].termination,
        restart_terminations: outcomes.iter().map(|o| o.termination).collect(),
        trace: outcomes.into_iter().map(|o| o.trace).collect(),
        restart_index_of_best: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::in_cvar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn objective_examples() {
        let spec = ModelSpec::linear(1);
        let xs: Vec<Vec<f64>> = (1..=5).map(|i| vec![i as f64]).collect();
        // constant predictor 0 against responses 1..5 gives losses 1..5
        let ys: Vec<f64> = (1..=5).map(|i| i as f64).collect();
        let data = DataSet::uniform(xs, ys).unwrap();
        let zero = ParamVector::zeros(&spec);
        let v = objective(&data, &spec, LossSpec::Absolute, TrimLevels::new(0.2, 0.8).unwrap(), &zero).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        let exact = ParamVector::new(&spec, vec![1.0, 0.0]).unwrap();
        let v = objective(&data, &spec, LossSpec::Squared, TrimLevels::new(0.3, 0.6).unwrap(), &exact).unwrap();
        assert_eq!(v, 0.0);
        let mean = objective(&data, &spec, LossSpec::Squared, TrimLevels::expectation(), &zero).unwrap();
        assert!((mean - 11.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = SolveConfig::default();
        assert!(c.validate().is_ok());
        c.restarts = 0;
        assert!(c.validate().is_err());
        let c = SolveConfig {
            outer_tol: 0.0,
            ..SolveConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn degenerate_levels_rejected() {
        let data = DataSet::uniform(vec![vec![0.0]], vec![0.0]).unwrap();
        let levels = TrimLevels::new(0.5, 0.5 + 1e-12).unwrap();
        let r = fit_incvar(&data, &ModelSpec::linear(1), LossSpec::Absolute, levels, &SolveConfig::default());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn unsupported_combination_rejected() {
        let data = DataSet::uniform(vec![vec![0.0]], vec![0.0]).unwrap();
        let r = fit_incvar(
            &data,
            &ModelSpec::piecewise_affine(1, 2, 2),
            LossSpec::Squared,
            TrimLevels::expectation(),
            &SolveConfig::default(),
        );
        assert!(matches!(r, Err(Error::UnsupportedCombination { .. })));
    }

    #[test]
    fn single_point_is_interpolated() {
        let data = DataSet::uniform(vec![vec![1.5]], vec![-2.0]).unwrap();
        let config = SolveConfig {
            restarts: 3,
            ..SolveConfig::default()
        };
        for (spec, loss) in [
            (ModelSpec::linear(1), LossSpec::Squared),
            (ModelSpec::linear(1), LossSpec::Absolute),
            (ModelSpec::piecewise_affine(1, 2, 2), LossSpec::Absolute),
        ] {
            let r = fit_incvar(&data, &spec, loss, TrimLevels::new(0.0, 1.0).unwrap(), &config).unwrap();
            assert!(r.best_objective <= 1e-6, "{spec:?} {loss:?}: {}", r.best_objective);
        }
    }

    #[test]
    fn reported_objective_is_consistent_and_traces_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| (x[0] - 1.0).abs() + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let data = DataSet::uniform(xs, ys).unwrap();
        let spec = ModelSpec::piecewise_affine(1, 2, 2);
        let levels = TrimLevels::new(0.05, 0.9).unwrap();
        let config = SolveConfig {
            restarts: 4,
            ..SolveConfig::default()
        };
        let r = fit_incvar(&data, &spec, LossSpec::Absolute, levels, &config).unwrap();
        for t in &r.trace {
            for w in t.windows(2) {
                assert!(w[1] <= w[0] + 1e-8);
            }
        }
        let losses: Vec<f64> = (0..data.len())
            .map(|i| (crate::models::predict(&spec, &r.best_theta, data.x(i)).unwrap() - data.y(i)).abs())
            .collect();
        let direct = in_cvar(&crate::risk::WeightedLossSample::uniform(losses).unwrap(), levels);
        assert!((direct - r.best_objective).abs() <= 1e-9);
    }

    #[test]
    fn surrogate_is_tight_at_linearization_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let ys: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data = DataSet::uniform(xs, ys).unwrap();
        let spec = ModelSpec::piecewise_affine(1, 2, 2);
        let levels = TrimLevels::new(0.1, 0.8).unwrap();
        let problem = Problem::new(&data, &spec, LossSpec::Absolute, levels).unwrap();
        let mut scratch = DcScratch::new(8);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d = problem.decompose(&theta, &mut scratch);
            let obj = problem.objective(&theta).unwrap();
            let surrogate_at_anchor = d.u - d.minorant.eval(&theta);
            assert!((surrogate_at_anchor - obj).abs() <= 1e-10 * (1.0 + obj));
        }
    }
}
