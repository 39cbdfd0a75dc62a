//! Limited-memory BFGS with backtracking Armijo line search, used for the
//! smoothed convex subproblems.

use std::collections::VecDeque;

use crate::models::dot;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsOptions {
    pub max_iters: usize,
    /// Stop when `‖∇f‖ <= grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    pub memory: usize,
}

pub(crate) struct LbfgsResult {
    pub x: Vec<f64>,
}

/// Minimize `f`, which returns the value and writes the gradient.
pub(crate) fn minimize<F>(x0: Vec<f64>, opts: LbfgsOptions, mut f: F) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    let mut alphas = vec![0.0; opts.memory];
    let mut stalls = 0;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let gnorm = dot(&grad, &grad).sqrt();
        if !gnorm.is_finite() || gnorm <= opts.grad_tol * (1.0 + value.abs()) {
            break;
        }
        iterations += 1;

        // two-loop recursion
        dir.copy_from_slice(&grad);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alphas[k] = a;
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        }
        let gamma = history
            .back()
            .map_or(1.0 / gnorm.max(1e-300), |(s, y, _)| dot(s, y) / dot(y, y));
        dir.iter_mut().for_each(|d| *d *= gamma);
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alphas[k] - b) * si);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g / gnorm);
            slope = -gnorm;
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut value_new = value;
        for _ in 0..60 {
            x_new.iter_mut().zip(&x).zip(&dir).for_each(|((xn, xi), d)| *xn = xi + step * d);
            value_new = f(&x_new, &mut grad_new);
            if value_new.is_finite() && value_new <= value + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let decrease = value - value_new;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        value = value_new;
        if decrease <= 1e-15 * (1.0 + value.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    LbfgsResult { x }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let opts = LbfgsOptions {
            max_iters: 500,
            grad_tol: 1e-12,
            memory: 8,
        };
        let r = minimize(vec![-1.2, 1.0], opts, |x, g| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        });
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let opts = LbfgsOptions {
            max_iters: 1000,
            grad_tol: 1e-14,
            memory: 8,
        };
        let scales = [1.0, 1e2, 1e4, 1e6];
        let r = minimize(vec![1.0; 4], opts, |x, g| {
            let mut v = 0.0;
            for i in 0..4 {
                g[i] = scales[i] * (x[i] - i as f64);
                v += 0.5 * scales[i] * (x[i] - i as f64).powi(2);
            }
            v
        });
        for i in 0..4 {
            assert!((r.x[i] - i as f64).abs() < 1e-8);
        }
    }
}
