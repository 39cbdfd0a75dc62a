//! Loss functions applied to absolute residuals, and sampled diagnostics for
//! the growth conditions the breakdown analysis places on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Absolute,
    Squared,
    Huber { delta: f64 },
}

impl LossSpec {
    pub fn huber(delta: f64) -> Result<Self> {
        let spec = LossSpec::Huber { delta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Huber { delta } if !(delta.is_finite() && delta > 0.0) => {
                Err(Error::domain(format!("huber delta must be positive, got {delta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Absolute => "absolute",
            LossSpec::Squared => "squared",
            LossSpec::Huber { .. } => "huber",
        }
    }

    /// Loss at residual magnitude `t`, without input validation.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            LossSpec::Absolute => t,
            LossSpec::Squared => t * t,
            LossSpec::Huber { delta } => {
                if t <= delta {
                    0.5 * t * t
                } else {
                    delta * (t - 0.5 * delta)
                }
            }
        }
    }

    /// Derivative with respect to `t >= 0`. At the Huber knee the quadratic
    /// branch is used.
    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            LossSpec::Absolute => 1.0,
            LossSpec::Squared => 2.0 * t,
            LossSpec::Huber { delta } => t.min(delta),
        }
    }
}

impl std::fmt::Display for LossSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossSpec::Huber { delta } => write!(f, "huber(delta={delta})"),
            other => f.write_str(other.name()),
        }
    }
}

pub fn eval_loss(spec: LossSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!("loss argument must be finite and >= 0, got {t}")));
    }
    Ok(spec.value(t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    /// Largest observed `L(s t) / L(t) - s^k`.
    pub max_margin: f64,
    /// `(s, t)` attaining `max_margin` when it is positive.
    pub counterexample: Option<(f64, f64)>,
    pub samples: usize,
}

impl GrowthReport {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Search for violations of `L(s t) / L(t) <= s^k` over `s ∈ [0, 1]`, `t > T`.
///
/// `t` is drawn log-uniformly over `(T, 1e6 T]`. A positive margin is reported
/// as a counterexample; the check never fails with an error for that reason.
pub fn check_c1_growth(
    spec: LossSpec,
    k: f64,
    t_floor: f64,
    num_samples: usize,
    seed: u64,
) -> Result<GrowthReport> {
    spec.validate()?;
    if !(k > 1.0 && k.is_finite()) {
        return Err(Error::domain(format!("growth exponent must exceed 1, got {k}")));
    }
    if !(t_floor > 0.0 && t_floor.is_finite()) {
        return Err(Error::domain(format!("threshold T must be positive, got {t_floor}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_margin = f64::NEG_INFINITY;
    let mut arg = (0.0, t_floor);
    for _ in 0..num_samples {
        let s: f64 = rng.random::<f64>();
        let u: f64 = 1.0 - rng.random::<f64>();
        let t = t_floor * 10f64.powf(6.0 * u);
        let margin = spec.value(s * t) / spec.value(t) - s.powf(k);
        if margin > max_margin {
            max_margin = margin;
            arg = (s, t);
        }
    }
    // roundoff in the ratio for exact power laws
    let counterexample = (max_margin > 1e-12).then_some(arg);
    Ok(GrowthReport {
        max_margin,
        counterexample,
        samples: num_samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingReport {
    /// `table[i][j] = L(s_j t_i) / L(t_i)`, `None` where `s_j t_i` exceeds the cap.
    pub table: Vec<Vec<Option<f64>>>,
    /// Largest admissible ratio in the row of the largest `t`.
    pub tail_ratio: f64,
    pub passed: bool,
}

pub const C2_TOLERANCE: f64 = 1e-3;

/// Tabulate `L(s t) / L(t)` along the joint limit `t → ∞`, `s → 0` with
/// `s t <= cap`, and pass when the last row stays below [`C2_TOLERANCE`].
pub fn check_c2_vanishing(
    spec: LossSpec,
    t_grid: &[f64],
    s_grid: &[f64],
    cap: f64,
) -> Result<VanishingReport> {
    spec.validate()?;
    if t_grid.is_empty() || s_grid.is_empty() {
        return Err(Error::domain("t and s grids must be nonempty"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(Error::domain("t grid must be positive and increasing"));
    }
    if s_grid.windows(2).any(|w| w[1] >= w[0]) || s_grid.iter().any(|s| *s <= 0.0) {
        return Err(Error::domain("s grid must be positive and decreasing"));
    }
    let table: Vec<Vec<Option<f64>>> = t_grid
        .iter()
        .map(|&t| {
            s_grid
                .iter()
                .map(|&s| (s * t <= cap).then(|| spec.value(s * t) / spec.value(t)))
                .collect()
        })
        .collect();
    let tail_ratio = table[table.len() - 1]
        .iter()
        .flatten()
        .copied()
        .fold(f64::NAN, f64::max);
    let passed = tail_ratio.is_finite() && tail_ratio < C2_TOLERANCE;
    Ok(VanishingReport {
        table,
        tail_ratio,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KINDS: [LossSpec; 3] = [
        LossSpec::Absolute,
        LossSpec::Squared,
        LossSpec::Huber { delta: 1.0 },
    ];

    #[test]
    fn huber_branches() {
        let h = LossSpec::huber(1.0).unwrap();
        assert_eq!(eval_loss(h, 0.5).unwrap(), 0.125);
        assert_eq!(eval_loss(h, 2.0).unwrap(), 1.5);
        for k in KINDS {
            assert_eq!(eval_loss(k, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(eval_loss(LossSpec::Absolute, -1.0).is_err());
        assert!(eval_loss(LossSpec::Squared, f64::INFINITY).is_err());
        assert!(LossSpec::huber(0.0).is_err());
        assert!(eval_loss(LossSpec::Huber { delta: -2.0 }, 1.0).is_err());
    }

    #[test]
    fn losses_diverge() {
        for k in KINDS {
            for m in [1.0, 1e3, 1e9] {
                let mut t = 1.0;
                while k.value(t) <= m {
                    t *= 2.0;
                    assert!(t < 1e300);
                }
            }
        }
    }

    #[test]
    fn huber_is_smooth_at_knee() {
        let delta = 1.3;
        let h = LossSpec::Huber { delta };
        let step = 1e-7;
        let left = (h.value(delta) - h.value(delta - step)) / step;
        let right = (h.value(delta + step) - h.value(delta)) / step;
        assert!((left - right).abs() < 1e-6);
        assert_eq!(h.derivative(delta), delta);
    }

    #[test]
    fn c1_examples() {
        let sq = check_c1_growth(LossSpec::Squared, 2.0, 3.0, 2000, 7).unwrap();
        assert!(sq.max_margin <= 1e-12 && sq.holds());
        let abs = check_c1_growth(LossSpec::Absolute, 2.0, 1.0, 2000, 7).unwrap();
        assert!(!abs.holds());
        let (s, _) = abs.counterexample.unwrap();
        assert!(s > s * s);
        let hub = check_c1_growth(LossSpec::Huber { delta: 1.0 }, 2.0, 10.0, 2000, 7).unwrap();
        assert!(!hub.holds());
        assert!(check_c1_growth(LossSpec::Squared, 1.0, 1.0, 10, 0).is_err());
    }

    #[test]
    fn c2_examples() {
        let t_grid: Vec<f64> = (0..=6).map(|e| 10f64.powi(e)).collect();
        let s_grid: Vec<f64> = (0..=12).map(|e| 10f64.powi(-e)).collect();
        let abs = check_c2_vanishing(LossSpec::Absolute, &t_grid, &s_grid, 1.0).unwrap();
        assert!(abs.passed);
        assert!(abs.tail_ratio <= 1e-6);
        let sq = check_c2_vanishing(LossSpec::Squared, &t_grid, &s_grid, 1.0).unwrap();
        assert!(sq.passed);
        assert!((sq.table[2][3].unwrap() - 1e-6).abs() < 1e-18);
        let hub = check_c2_vanishing(LossSpec::Huber { delta: 1.0 }, &t_grid, &s_grid, 1.0).unwrap();
        assert!(hub.passed);
        assert!(check_c2_vanishing(LossSpec::Absolute, &[], &s_grid, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn nondecreasing(a in 0.0f64..1e4, b in 0.0f64..1e4, delta in 0.01f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for k in [LossSpec::Absolute, LossSpec::Squared, LossSpec::Huber { delta }] {
                prop_assert!(k.value(lo) <= k.value(hi));
            }
        }

        #[test]
        fn convex_midpoint(a in 0.0f64..100.0, b in 0.0f64..100.0, delta in 0.01f64..10.0) {
            for k in [LossSpec::Squared, LossSpec::Huber { delta }] {
                let mid = k.value(0.5 * (a + b));
                let avg = 0.5 * (k.value(a) + k.value(b));
                prop_assert!(mid <= avg + 1e-12 * (1.0 + avg));
            }
        }
    }
}
