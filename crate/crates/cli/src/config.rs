//! JSON run configurations. Every file carries a top-level `schema` string
//! that must match the subcommand, and the remaining fields are checked with
//! full field paths before anything runs.

use std::path::{Path, PathBuf};

use incvar_core::experiments::{ScenarioConfig, NOISE_SIGMA, NOMINAL_SIZE, CONTAMINATION_SIZE, PERTURBED_SIZE};
use incvar_core::{LossSpec, ModelSpec, SolveConfig, TrimLevels};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const FIT_SCHEMA: &str = "incvar.fit/1";
pub const SWEEP_SCHEMA: &str = "incvar.sweep/1";
pub const PROKHOROV_SCHEMA: &str = "incvar.prokhorov/1";
pub const GEN_SCHEMA: &str = "incvar.gen/1";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Dataset CSV, relative to the config file.
    pub data: PathBuf,
    pub model: ModelSpec,
    pub loss: LossSpec,
    pub levels: TrimLevels,
    #[serde(default)]
    pub solver: SolveConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProkhorovConfig {
    pub p: PathBuf,
    pub q: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Nominal,
    Contamination,
    Perturbed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub kind: GenKind,
    /// Perturbation index, only for `perturbed`.
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma() -> f64 {
    NOISE_SIGMA
}

impl GenConfig {
    pub fn size(&self) -> usize {
        self.n.unwrap_or(match self.kind {
            GenKind::Nominal => NOMINAL_SIZE,
            GenKind::Contamination => CONTAMINATION_SIZE,
            GenKind::Perturbed => PERTURBED_SIZE,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        match (self.kind, self.k) {
            (GenKind::Perturbed, None) => return Err("k: required for kind `perturbed`".into()),
            (GenKind::Perturbed, Some(0)) => return Err("k: must be at least 1".into()),
            (GenKind::Nominal | GenKind::Contamination, Some(_)) => {
                return Err("k: only meaningful for kind `perturbed`".into())
            }
            _ => {}
        }
        if self.n == Some(0) {
            return Err("n: must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err("noise_sigma: must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn stem(&self) -> String {
        match self.kind {
            GenKind::Nominal => "nominal".into(),
            GenKind::Contamination => "contamination".into(),
            GenKind::Perturbed => format!("perturbed_k{}", self.k.unwrap_or(0)),
        }
    }
}

/// Read `path`, check its `schema` tag against `expected` and decode the rest.
pub fn load<T: DeserializeOwned>(path: &Path, expected: &str) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| format!("{}: top level must be an object", path.display()))?;
    match obj.remove("schema") {
        Some(serde_json::Value::String(s)) if s == expected => {}
        Some(other) => return Err(format!("schema: expected \"{expected}\", found {other}")),
        None => return Err(format!("schema: missing, expected \"{expected}\"")),
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let at = e.path().to_string();
        let at = if at == "." { "(root)".to_string() } else { at };
        format!("{at}: {}", e.inner())
    })
}

pub fn load_fit(path: &Path) -> Result<FitConfig, String> {
    let cfg: FitConfig = load(path, FIT_SCHEMA)?;
    cfg.model.validate().map_err(|e| format!("model: {e}"))?;
    cfg.loss.validate().map_err(|e| format!("loss: {e}"))?;
    cfg.solver.validate().map_err(|e| format!("solver: {e}"))?;
    Ok(cfg)
}

pub fn load_sweep(path: &Path) -> Result<ScenarioConfig, String> {
    let cfg: ScenarioConfig = load(path, SWEEP_SCHEMA)?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn load_prokhorov(path: &Path) -> Result<ProkhorovConfig, String> {
    load(path, PROKHOROV_SCHEMA)
}

pub fn load_gen(path: &Path) -> Result<GenConfig, String> {
    let cfg: GenConfig = load(path, GEN_SCHEMA)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Resolve `file` against the directory holding the config.
pub fn relative_to(config: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        return file.to_path_buf();
    }
    config.parent().map_or_else(|| file.to_path_buf(), |dir| dir.join(file))
}
