//! Layered configuration: bundled defaults, then an optional user file, then
//! `--set key=value` overrides. Layers may only replace keys that already
//! exist in the defaults.

use std::path::{Path, PathBuf};

use misslik::em::EmConfig;
use misslik::experiments::{Family, PopulationSource, PopulationSpec, SweepConfig};
use misslik::io::read_params_json;
use misslik::mi::MiConfig;
use misslik::missingness::{Mechanism, MechanismKind, DEFAULT_SLOPE_MAGNITUDE};
use misslik::{Error, GaussianParams, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub em: EmConfig,
    pub population: PopulationConfig,
    pub ampute: MechanismConfig,
    pub fit: FitConfig,
    pub impute: ImputeConfig,
    pub sweep: SweepSection,
    pub check: CheckSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub source: String,
    pub path: String,
    pub population_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub mechanism: MechanismKind,
    pub target_col: usize,
    pub driver_col: usize,
    pub psi: f64,
    pub slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub uncertainty_resamples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeConfig {
    pub num_imputations: usize,
    pub write_completed: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Range { start: usize, end: usize, step: usize },
    List(Vec<usize>),
}

impl Grid {
    pub fn values(&self) -> Result<Vec<usize>> {
        match self {
            Grid::List(v) => Ok(v.clone()),
            Grid::Range { start, end, step } => {
                if *step == 0 {
                    return Err(Error::InvalidConfig("grid step must be positive".into()));
                }
                Ok((*start..=*end).step_by(*step).collect())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub n_grid: Grid,
    pub psi_grid: Vec<f64>,
    pub mechanisms: Vec<MechanismKind>,
    pub target_col: usize,
    pub driver_col: usize,
    pub slope_magnitude: f64,
    pub replicates: usize,
    pub bootstrap_b: usize,
    pub num_imputations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub family: Family,
    pub loglik_sup: SweepParams,
    pub ml_vs_mi: SweepParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Lemma1,
    Theorem2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma1Config {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub alt_pattern: String,
    pub k_max: usize,
    pub grid_mean_offsets: Vec<f64>,
    pub grid_scales: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem2Config {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub mechanism: MechanismKind,
    pub target_col: usize,
    pub driver_col: usize,
    pub psi: f64,
    pub slope: f64,
    pub n: usize,
    pub replicates: usize,
    pub grid_mean_offsets: Vec<f64>,
    pub grid_scales: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    pub kind: CheckKind,
    pub lemma1: Lemma1Config,
    pub theorem2: Theorem2Config,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

/// Overlays `layer` on `base`, failing on keys `base` does not have.
fn merge(base: &mut Table, layer: Table, prefix: &str) -> Result<()> {
    for (key, value) in layer {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(invalid(format!("unknown config key `{path}`"))),
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l, &path)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{spec}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let slot = cur
            .get_mut(*part)
            .ok_or_else(|| invalid(format!("unknown config key `{}`", key.trim())))?;
        if last {
            *slot = parse_value(raw.trim());
            return Ok(());
        }
        cur = slot
            .as_table_mut()
            .ok_or_else(|| invalid(format!("`{}` is not a table", parts[..=i].join("."))))?;
    }
    unreachable!("split always yields at least one part")
}

/// Resolves the layered config into its final table.
pub fn resolve_table(config_path: Option<&Path>, overrides: &[String]) -> Result<Table> {
    let mut table: Table = toml::from_str(DEFAULT_CONFIG).map_err(|e| invalid(e.to_string()))?;
    if let Some(p) = config_path {
        let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        let layer: Table = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        merge(&mut table, layer, "")?;
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(table)
}

pub fn load(config_path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let table = resolve_table(config_path, overrides)?;
    Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))
}

pub fn params_from(mean: &[f64], covariance: &[Vec<f64>]) -> Result<GaussianParams> {
    let m = mean.len();
    if covariance.len() != m || covariance.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("covariance must be square and match the mean".into()));
    }
    let flat: Vec<f64> = covariance.iter().flatten().copied().collect();
    GaussianParams::from_slices(mean, &flat)
}

/// `base` shifted by every offset (same shift on every coordinate) and with
/// covariance scaled by every factor.
pub fn theta_grid(base: &GaussianParams, offsets: &[f64], scales: &[f64]) -> Result<Vec<GaussianParams>> {
    let mut out = Vec::new();
    for &o in offsets {
        for &s in scales {
            if s <= 0.0 {
                return Err(invalid("grid scales must be positive"));
            }
            let mean = base.mean().add_scalar(o);
            out.push(GaussianParams::new(mean, base.cov() * s)?);
        }
    }
    Ok(out)
}

fn slope_or_default(kind: MechanismKind, slope: f64) -> f64 {
    if slope != 0.0 {
        return slope;
    }
    match kind {
        MechanismKind::Mnar => DEFAULT_SLOPE_MAGNITUDE,
        _ => -DEFAULT_SLOPE_MAGNITUDE,
    }
}

pub fn mechanism(kind: MechanismKind, target: usize, driver: usize, psi: f64, slope: f64) -> Mechanism {
    let m = Mechanism::of_kind(kind, target, driver, psi);
    match kind {
        MechanismKind::Mcar => m,
        _ => m.with_slope(slope_or_default(kind, slope)),
    }
}

impl MechanismConfig {
    pub fn build(&self) -> Mechanism {
        mechanism(self.mechanism, self.target_col, self.driver_col, self.psi, self.slope)
    }
}

impl Theorem2Config {
    pub fn build_mechanism(&self) -> Mechanism {
        mechanism(self.mechanism, self.target_col, self.driver_col, self.psi, self.slope)
    }
}

impl Config {
    pub fn population_spec(&self) -> Result<PopulationSpec> {
        let p = &self.population;
        let source = match p.source.as_str() {
            "bundled" => PopulationSource::Bundled,
            "csv" => PopulationSource::CsvMoments {
                path: PathBuf::from(&p.path),
            },
            "params" => PopulationSource::Explicit {
                params: read_params_json(Path::new(&p.path))?.0,
            },
            other => return Err(invalid(format!("unknown population source `{other}`"))),
        };
        Ok(PopulationSpec {
            source,
            population_size: p.population_size,
            seed: p.seed,
        })
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let family = self.sweep.family;
        let p = match family {
            Family::LoglikSup => &self.sweep.loglik_sup,
            Family::MlVsMi => &self.sweep.ml_vs_mi,
        };
        let cfg = SweepConfig {
            family,
            n_grid: p.n_grid.values()?,
            psi_grid: p.psi_grid.clone(),
            mechanisms: p.mechanisms.clone(),
            target_col: p.target_col,
            driver_col: p.driver_col,
            slope_magnitude: p.slope_magnitude,
            replicates: p.replicates,
            bootstrap_b: p.bootstrap_b,
            mi: MiConfig {
                num_imputations: p.num_imputations,
                em: self.em.clone(),
                seed: self.seed,
            },
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
