//! Synthetic generators, the `T̄` breakdown indicator and the contamination,
//! level and perturbation sweeps over piecewise-affine ℓ1 regression.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, DataSet};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::{predict, ModelSpec, ParamVector};
use crate::risk::TrimLevels;
use crate::seeding::{derive_seed, label_tag, stream};
use crate::solver::{fit_incvar, SolveConfig};

pub const NOMINAL_SIZE: usize = 200;
pub const CONTAMINATION_SIZE: usize = 200;
pub const PERTURBED_SIZE: usize = 1000;
pub const NOISE_SIGMA: f64 = 0.05;
/// Floor applied to `|f|` before taking `log10` in `T̄`.
pub const TBAR_FLOOR: f64 = 1e-12;

/// The two-piece-minus-two-piece model fitted in every sweep.
pub fn experiment_spec() -> ModelSpec {
    ModelSpec::piecewise_affine(1, 2, 2)
}

/// Noise-free parameter of the nominal generator,
/// `max{−x + 1, −2} − max{−x + 3, −2x + 2}`.
pub fn theta_star() -> ParamVector {
    ParamVector::new(&experiment_spec(), vec![-1.0, 1.0, 0.0, -2.0, -1.0, 3.0, -2.0, 2.0])
        .expect("fixed parameter is valid")
}

fn nominal_mean(x: f64) -> f64 {
    (-x + 1.0).max(-2.0) - (-x + 3.0).max(-2.0 * x + 2.0)
}

fn contamination_mean(x: f64) -> f64 {
    (100.0 * x + 200.0).max(300.0 * x - 400.0) - (200.0 * x - 100.0).max(400.0 * x + 100.0)
}

fn perturbation_mean(x: f64, k: f64) -> f64 {
    k * ((x + 2.0).max(3.0 * x - 4.0) - (2.0 * x - 1.0).max(4.0 * x + 1.0))
}

fn sample_curve(n: usize, x_std: f64, sigma: f64, mean: fn(f64) -> f64, rng: &mut impl Rng) -> Result<DataSet> {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = x_std * rng.sample::<f64, _>(StandardNormal);
        let xi: f64 = rng.sample(StandardNormal);
        xs.push(vec![x]);
        ys.push(mean(x) + sigma * xi);
    }
    DataSet::uniform(xs, ys)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain("noise_sigma must be finite and nonnegative"));
    }
    Ok(())
}

/// Nominal law: `X ~ N(0, 1)` with the nominal curve plus `sigma·ξ`.
pub fn gen_nominal_with(n: usize, sigma: f64, seed: u64) -> Result<DataSet> {
    check_sigma(sigma)?;
    sample_curve(n, 1.0, sigma, nominal_mean, &mut stream(&[seed, label_tag("nominal")]))
}

pub fn gen_nominal(seed: u64) -> Result<DataSet> {
    gen_nominal_with(NOMINAL_SIZE, NOISE_SIGMA, seed)
}

/// Contaminating law: `X ~ N(0, 4·10⁴)` with a steep piecewise-affine curve.
pub fn gen_contamination_with(n: usize, sigma: f64, seed: u64) -> Result<DataSet> {
    check_sigma(sigma)?;
    sample_curve(n, 200.0, sigma, contamination_mean, &mut stream(&[seed, label_tag("contamination")]))
}

pub fn gen_contamination(seed: u64) -> Result<DataSet> {
    gen_contamination_with(CONTAMINATION_SIZE, NOISE_SIGMA, seed)
}

/// The design grid `x = 0, 10, …, 1990` with responses scaled by `k`.
pub fn perturbation_grid(k: f64, sigma: f64, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    (0..200)
        .map(|j| {
            let x = 10.0 * j as f64;
            let xi: f64 = rng.sample(StandardNormal);
            [x, perturbation_mean(x, k) + sigma * xi]
        })
        .collect()
}

/// `n` draws from `D_k`: a draw from `nominal` with probability `1 − 1/k`,
/// otherwise from the scaled grid law, each shifted by `δ/k` with `δ`
/// uniform in the unit disk.
pub fn gen_perturbed_from(nominal: &DataSet, k: u32, n: usize, sigma: f64, seed: u64) -> Result<DataSet> {
    if k == 0 {
        return Err(Error::domain("perturbation index k must be at least 1"));
    }
    if nominal.dim() != 1 {
        return Err(Error::domain("perturbation needs a one-dimensional nominal dataset"));
    }
    check_sigma(sigma)?;
    let kf = k as f64;
    let mut rng = stream(&[seed, label_tag("perturbed"), k as u64]);
    let grid = perturbation_grid(kf, sigma, &mut rng);
    let pick = WeightedIndex::new(nominal.weights()).map_err(|e| Error::domain(e.to_string()))?;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let [x, y] = if rng.random::<f64>() < 1.0 - 1.0 / kf {
            let i = pick.sample(&mut rng);
            [nominal.x(i)[0], nominal.y(i)]
        } else {
            grid[rng.random_range(0..grid.len())]
        };
        let r = rng.random::<f64>().sqrt() / kf;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        xs.push(vec![x + r * angle.cos()]);
        ys.push(y + r * angle.sin());
    }
    DataSet::uniform(xs, ys)
}

pub fn gen_perturbed(k: u32, seed: u64) -> Result<DataSet> {
    gen_perturbed_from(&gen_nominal(seed)?, k, PERTURBED_SIZE, NOISE_SIGMA, seed)
}

/// The evaluation grid `x = −100 + 0.1 i`, `i = 0, …, 1999`.
pub fn tbar_grid() -> impl Iterator<Item = f64> {
    (0..2000).map(|i| -100.0 + 0.1 * i as f64)
}

/// Mean of `log10 max(|f(x)|, 1e-12)` over [`tbar_grid`].
pub fn tbar(spec: &ModelSpec, theta: &ParamVector) -> Result<f64> {
    if spec.dim != 1 {
        return Err(Error::domain("T-bar is defined for one-dimensional models"));
    }
    let mut total = 0.0;
    for x in tbar_grid() {
        total += predict(spec, theta, &[x])?.abs().max(TBAR_FLOOR).log10();
    }
    Ok(total / 2000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Grid over the contamination fraction `ε`.
    ContaminationSweep,
    /// Grid over `β` at fixed `α` and `ε`.
    LevelSweepBeta,
    /// Grid over `α` at fixed `β` and `ε`.
    LevelSweepAlpha,
    /// Grid over the perturbation index `k`.
    PerturbationSweep,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::ContaminationSweep => "contamination_sweep",
            Scenario::LevelSweepBeta => "level_sweep_beta",
            Scenario::LevelSweepAlpha => "level_sweep_alpha",
            Scenario::PerturbationSweep => "perturbation_sweep",
        }
    }

    pub fn grid_param(self) -> &'static str {
        match self {
            Scenario::ContaminationSweep => "eps",
            Scenario::LevelSweepBeta => "beta",
            Scenario::LevelSweepAlpha => "alpha",
            Scenario::PerturbationSweep => "k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Incvar,
    Expectation,
    Cvar,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Incvar, Estimator::Expectation, Estimator::Cvar];

    pub fn tag(self) -> &'static str {
        match self {
            Estimator::Incvar => "incvar",
            Estimator::Expectation => "expectation",
            Estimator::Cvar => "cvar",
        }
    }
}

fn default_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// `ε` values, `β` values, `α` values or `k` values depending on the scenario.
    pub grid: Vec<f64>,
    #[serde(default = "default_levels")]
    pub levels: TrimLevels,
    #[serde(default = "default_gamma")]
    pub gamma_cvar: f64,
    /// Contamination fraction used by the level sweeps.
    #[serde(default = "default_contamination")]
    pub contamination: f64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_n_nominal")]
    pub n_nominal: usize,
    #[serde(default = "default_n_contam")]
    pub n_contam: usize,
    #[serde(default = "default_n_perturbed")]
    pub n_perturbed: usize,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
}

fn default_levels() -> TrimLevels {
    TrimLevels::new(0.05, 0.95).expect("valid default levels")
}
fn default_gamma() -> f64 {
    0.5
}
fn default_contamination() -> f64 {
    0.05
}
fn default_n_nominal() -> usize {
    NOMINAL_SIZE
}
fn default_n_contam() -> usize {
    CONTAMINATION_SIZE
}
fn default_n_perturbed() -> usize {
    PERTURBED_SIZE
}
fn default_sigma() -> f64 {
    NOISE_SIGMA
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, grid: Vec<f64>) -> Self {
        Self {
            scenario,
            grid,
            levels: default_levels(),
            gamma_cvar: default_gamma(),
            contamination: default_contamination(),
            estimators: default_estimators(),
            solver: SolveConfig::default(),
            master_seed: 0,
            n_nominal: NOMINAL_SIZE,
            n_contam: CONTAMINATION_SIZE,
            n_perturbed: PERTURBED_SIZE,
            noise_sigma: NOISE_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::domain("grid must be nonempty"));
        }
        if self.grid.iter().any(|v| !v.is_finite()) || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("grid must be finite and strictly increasing"));
        }
        if self.estimators.is_empty() {
            return Err(Error::domain("at least one estimator is required"));
        }
        if !(0.0..1.0).contains(&self.gamma_cvar) {
            return Err(Error::domain("gamma_cvar must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return Err(Error::domain("contamination must lie in [0, 1]"));
        }
        if self.n_nominal == 0 || self.n_contam == 0 || self.n_perturbed == 0 {
            return Err(Error::domain("sample sizes must be positive"));
        }
        check_sigma(self.noise_sigma)?;
        self.solver.validate()?;
        for &g in &self.grid {
            match self.scenario {
                Scenario::ContaminationSweep if !(0.0..=1.0).contains(&g) => {
                    return Err(Error::domain(format!("contamination {g} outside [0, 1]")));
                }
                Scenario::LevelSweepBeta => {
                    TrimLevels::new(self.levels.alpha(), g)?;
                }
                Scenario::LevelSweepAlpha => {
                    TrimLevels::new(g, self.levels.beta())?;
                }
                Scenario::PerturbationSweep if !(g >= 1.0 && g.fract() == 0.0 && g <= u32::MAX as f64) => {
                    return Err(Error::domain(format!("perturbation index {g} must be a positive integer")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn levels_for(&self, estimator: Estimator, grid_value: f64) -> Result<TrimLevels> {
        match estimator {
            Estimator::Expectation => Ok(TrimLevels::expectation()),
            Estimator::Cvar => TrimLevels::new(self.gamma_cvar, 1.0),
            Estimator::Incvar => match self.scenario {
                Scenario::LevelSweepBeta => TrimLevels::new(self.levels.alpha(), grid_value),
                Scenario::LevelSweepAlpha => TrimLevels::new(grid_value, self.levels.beta()),
                _ => Ok(self.levels),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid_value: f64,
    pub estimator: Estimator,
    pub tbar: f64,
    pub tbar_true: f64,
    pub objective: f64,
    pub seconds: f64,
    pub failed: bool,
    pub theta: Vec<f64>,
    pub seed: u64,
}

impl SweepRow {
    pub fn deviation(&self) -> f64 {
        (self.tbar - self.tbar_true).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub config: ScenarioConfig,
    pub version: String,
    /// Seed of the dataset shared by all cells (nominal and contamination draws).
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

impl SweepResult {
    pub fn row(&self, grid_value: f64, estimator: Estimator) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && (r.grid_value - grid_value).abs() < 1e-12)
    }

    pub fn series(&self, estimator: Estimator) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.estimator == estimator).collect()
    }
}

/// Dataset of one grid cell.
pub fn cell_dataset(config: &ScenarioConfig, grid_index: usize) -> Result<DataSet> {
    let data_seed = derive_seed(&[config.master_seed, label_tag("data")]);
    let nominal = gen_nominal_with(config.n_nominal, config.noise_sigma, data_seed)?;
    let value = config.grid[grid_index];
    match config.scenario {
        Scenario::PerturbationSweep => {
            let seed = derive_seed(&[config.master_seed, label_tag(config.scenario.name()), grid_index as u64]);
            gen_perturbed_from(&nominal, value as u32, config.n_perturbed, config.noise_sigma, seed)
        }
        _ => {
            let eps = match config.scenario {
                Scenario::ContaminationSweep => value,
                _ => config.contamination,
            };
            let contamination = gen_contamination_with(config.n_contam, config.noise_sigma, data_seed)?;
            nominal.mixture(&contamination, eps)
        }
    }
}

/// Fit every estimator on every grid cell. Cells run in parallel and are
/// merged by grid index, then estimator.
pub fn run_sweep(config: &ScenarioConfig) -> Result<SweepResult> {
    config.validate()?;
    let spec = experiment_spec();
    let tbar_true = tbar(&spec, &theta_star())?;
    let datasets: Vec<DataSet> = (0..config.grid.len())
        .map(|i| cell_dataset(config, i))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, Estimator)> = (0..config.grid.len())
        .flat_map(|i| config.estimators.iter().map(move |e| (i, *e)))
        .collect();

    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(i, estimator)| -> Result<SweepRow> {
            let grid_value = config.grid[i];
            let levels = config.levels_for(estimator, grid_value)?;
            let seed = derive_seed(&[
                config.master_seed,
                label_tag(config.scenario.name()),
                i as u64,
                label_tag(estimator.tag()),
            ]);
            let solver = SolveConfig {
                seed,
                ..config.solver.clone()
            };
            let start = Instant::now();
            let fit = fit_incvar(&datasets[i], &spec, LossSpec::Absolute, levels, &solver);
            let seconds = start.elapsed().as_secs_f64();
            let mut row = SweepRow {
                grid_value,
                estimator,
                tbar: f64::NAN,
                tbar_true,
                objective: f64::NAN,
                seconds,
                failed: true,
                theta: Vec::new(),
                seed,
            };
            match fit {
                Ok(report) => {
                    row.tbar = tbar(&spec, &report.best_theta)?;
                    row.objective = report.best_objective;
                    row.theta = report.best_theta.data;
                    row.failed = false;
                }
                Err(Error::NumericalFailure { .. }) => {}
                Err(e) => return Err(e),
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    Ok(SweepResult {
        rows,
        metadata: SweepMetadata {
            config: config.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            data_seed: derive_seed(&[config.master_seed, label_tag("data")]),
        },
    })
}

pub const CSV_HEADER: &str = "scenario,grid_param,grid_value,estimator,tbar,tbar_true,objective,seconds,failed";

/// The sweep table. Wall-clock seconds vary between runs, so they are only
/// written when `include_seconds` is set; otherwise the column is empty and
/// the output is byte-deterministic.
pub fn to_csv(result: &SweepResult, include_seconds: bool) -> String {
    let scenario = result.metadata.config.scenario;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("writing to memory");
    for r in &result.rows {
        let seconds = if include_seconds { fmt_f64(r.seconds) } else { String::new() };
        w.write_record([
            scenario.name().to_string(),
            scenario.grid_param().to_string(),
            fmt_f64(r.grid_value),
            r.estimator.tag().to_string(),
            fmt_f64(r.tbar),
            fmt_f64(r.tbar_true),
            fmt_f64(r.objective),
            seconds,
            r.failed.to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("ascii output")
}

/// Line plot of `T̄` against the grid value, one polyline per estimator and
/// a dashed reference line at `T̄(θ*)`.
pub fn to_svg(result: &SweepResult) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let scenario = result.metadata.config.scenario;
    let finite: Vec<&SweepRow> = result.rows.iter().filter(|r| r.tbar.is_finite()).collect();
    let tbar_true = result.rows.first().map_or(0.0, |r| r.tbar_true);
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (tbar_true, tbar_true);
    for r in &finite {
        x0 = x0.min(r.grid_value);
        x1 = x1.max(r.grid_value);
        y0 = y0.min(r.tbar);
        y1 = y1.max(r.tbar);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{M} {M} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let labels = [
        (M, H - M + 18.0, format!("{x0:.4}"), "start"),
        (W - M, H - M + 18.0, format!("{x1:.4}"), "end"),
        (W / 2.0, H - 10.0, scenario.grid_param().to_string(), "middle"),
        (M - 6.0, H - M, format!("{y0:.3}"), "end"),
        (M - 6.0, M + 4.0, format!("{y1:.3}"), "end"),
        (W / 2.0, 20.0, format!("T-bar, {}", scenario.name()), "middle"),
    ];
    for (x, y, text, anchor) in labels {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="12" text-anchor="{anchor}">{text}</text>"#
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{M}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        y = py(tbar_true),
        r = W - M
    );
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];
    for (k, estimator) in Estimator::ALL.iter().enumerate() {
        let pts: Vec<String> = finite
            .iter()
            .filter(|r| r.estimator == *estimator)
            .map(|r| format!("{:.2},{:.2}", px(r.grid_value), py(r.tbar)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"><title>{}</title></polyline>"#,
            pts.join(" "),
            colors[k],
            estimator.tag()
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" fill="{c}">{t}</text>"#,
            x = W - M - 90.0,
            y = M + 16.0 * k as f64,
            c = colors[k],
            t = estimator.tag()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write `<stem>.csv` and `<stem>.svg` into `dir`.
pub fn emit(result: &SweepResult, dir: &Path, stem: &str, include_seconds: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), to_csv(result, include_seconds))?;
    std::fs::write(dir.join(format!("{stem}.svg")), to_svg(result))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelFamily;

    #[test]
    fn generator_formulas() {
        assert_eq!(nominal_mean(0.0), -2.0);
        assert_eq!(contamination_mean(0.0), 100.0);
        let spec = experiment_spec();
        let star = theta_star();
        for x in [-5.0, -1.0, 0.0, 1.7, 3.0, 8.0] {
            assert_eq!(predict(&spec, &star, &[x]).unwrap(), nominal_mean(x));
        }
    }

    #[test]
    fn noise_free_generators_follow_their_curves() {
        let d = gen_nominal_with(50, 0.0, 3).unwrap();
        for i in 0..d.len() {
            assert_eq!(d.y(i), nominal_mean(d.x(i)[0]));
        }
        let g = gen_contamination_with(50, 0.0, 3).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.y(i), contamination_mean(g.x(i)[0]));
        }
    }

    #[test]
    fn generator_sizes_and_determinism() {
        let a = gen_nominal(11).unwrap();
        assert_eq!(a.len(), 200);
        assert!(a.weights().iter().all(|w| (*w - 1.0 / 200.0).abs() < 1e-15));
        assert_eq!(a, gen_nominal(11).unwrap());
        assert_ne!(a, gen_nominal(12).unwrap());
        let g = gen_contamination(11).unwrap();
        assert_eq!(g.len(), 200);
        assert_eq!(g, gen_contamination(11).unwrap());
    }

    #[test]
    fn perturbation_construction() {
        let mut rng = stream(&[1]);
        let grid = perturbation_grid(3.0, 0.0, &mut rng);
        assert_eq!(grid.len(), 200);
        assert_eq!(grid[0][0], 0.0);
        assert_eq!(grid[199][0], 1990.0);
        assert!(grid.windows(2).all(|w| w[1][0] - w[0][0] == 10.0));
        assert_eq!(grid[1][1], 3.0 * ((12.0f64).max(26.0) - (19.0f64).max(41.0)));

        let nominal = gen_nominal(4).unwrap();
        for k in [1, 2, 5, 20] {
            let d = gen_perturbed_from(&nominal, k, PERTURBED_SIZE, NOISE_SIGMA, 9).unwrap();
            assert_eq!(d.len(), 1000);
            // every point lies within 1/k of a nominal or grid point
            let grid = perturbation_grid(k as f64, NOISE_SIGMA, &mut stream(&[9, label_tag("perturbed"), k as u64]));
            for i in 0..d.len() {
                let z = d.joint(i);
                let near = (0..nominal.len())
                    .map(|j| nominal.joint(j))
                    .chain(grid.iter().map(|g| g.to_vec()))
                    .map(|p| ((p[0] - z[0]).powi(2) + (p[1] - z[1]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(near <= 1.0 / k as f64 + 1e-12);
            }
        }
        assert!(gen_perturbed(0, 1).is_err());
    }

    #[test]
    fn tbar_examples() {
        let spec = ModelSpec::linear(1);
        let one = ParamVector::new(&spec, vec![0.0, 1.0]).unwrap();
        assert!(tbar(&spec, &one).unwrap().abs() < 1e-15);
        assert_eq!(tbar(&spec, &ParamVector::zeros(&spec)).unwrap(), -12.0);
        let ident = ParamVector::new(&spec, vec![1.0, 0.0]).unwrap();
        let oracle: f64 = (0..2000)
            .map(|i| {
                let x = -100.0 + 0.1 * i as f64;
                x.abs().max(1e-12).log10()
            })
            .sum::<f64>()
            / 2000.0;
        assert!((tbar(&spec, &ident).unwrap() - oracle).abs() < 1e-12);
        let quad = ModelSpec::new(ModelFamily::Polynomial { degree: 2 }, 2).unwrap();
        assert!(tbar(&quad, &ParamVector::zeros(&quad)).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ScenarioConfig::new(Scenario::ContaminationSweep, vec![0.0, 0.05]);
        assert!(c.validate().is_ok());
        c.grid.clear();
        assert!(c.validate().is_err());
        c.grid = vec![0.05, 0.01];
        assert!(c.validate().is_err());
        let c = ScenarioConfig::new(Scenario::PerturbationSweep, vec![1.5]);
        assert!(c.validate().is_err());
        let c = ScenarioConfig::new(Scenario::LevelSweepBeta, vec![0.9, 1.2]);
        assert!(c.validate().is_err());
        let c = ScenarioConfig::new(Scenario::LevelSweepAlpha, vec![0.0, 0.95]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn contaminated_cells_are_exact_mixtures() {
        let c = ScenarioConfig::new(Scenario::ContaminationSweep, vec![0.0, 0.03, 0.1]);
        for i in 0..3 {
            let d = cell_dataset(&c, i).unwrap();
            assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // mixtures concatenate supports, nominal points first
            if i > 0 {
                let contaminated: f64 = d.weights()[200..].iter().sum();
                assert!((contaminated - c.grid[i]).abs() < 1e-12);
            }
        }
        assert_eq!(cell_dataset(&c, 0).unwrap().len(), 200);
    }

    #[test]
    fn small_sweep_is_deterministic_and_well_formed() {
        let mut c = ScenarioConfig::new(Scenario::ContaminationSweep, vec![0.0, 0.02]);
        c.solver.restarts = 2;
        c.solver.max_outer_iters = 5;
        let a = run_sweep(&c).unwrap();
        let b = run_sweep(&c).unwrap();
        assert_eq!(a.rows.len(), 6);
        assert_eq!(to_csv(&a, false), to_csv(&b, false));
        assert_eq!(to_svg(&a), to_svg(&b));
        let csv = to_csv(&a, false);
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        assert_eq!(csv.lines().count(), 7);
        assert!(a.rows.iter().all(|r| r.tbar.is_finite() && !r.failed));
        assert_eq!(to_svg(&a).matches("<polyline").count(), 3);
    }
}
