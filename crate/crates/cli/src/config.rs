//! Experiment configuration: a sectioned TOML file, dotted-key overrides and
//! validation against the model types.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use plmx::field::{EvolveOptions, FieldState, Record, StepPolicy};
use plmx::mixing::{stationary::time_grid, BoundConstants, NoiseClass, Provenance, StationaryOptions};
use plmx::scalar::ScalarModel;
use plmx::{ModelParams, NoiseSpec};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Scalar,
    #[default]
    Field,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub p: f64,
    pub dim: usize,
    pub length: f64,
    pub n_grid: usize,
    pub dt: f64,
    pub eps_reg: f64,
    pub r_order: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        let d = ModelParams::default();
        Self {
            p: d.p,
            dim: d.dim,
            length: d.length,
            n_grid: d.n_grid,
            dt: d.dt,
            eps_reg: d.eps_reg,
            r_order: d.r_order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Field noise: coefficients `b_k` of the sine modes.
    pub coeffs: Vec<f64>,
    /// Scalar noise intensity `sigma`.
    pub scale: f64,
    /// Overrides the noise class inferred from the coefficients.
    pub class: Option<String>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            coeffs: Vec::new(),
            scale: 1.0,
            class: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialDatum {
    Constant { value: f64 },
    /// `amplitude * e_mode`, modes counted from 1.
    Sine { amplitude: f64, mode: usize },
    /// Nodal values: the last column of a field CSV.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Fixed,
    #[default]
    Stability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_end: f64,
    /// Uniform output grid size when `times` is absent.
    pub points: usize,
    pub times: Option<Vec<f64>>,
    pub eps_grid: Option<Vec<f64>>,
    pub policy: PolicyKind,
    pub safety: f64,
    pub dt_max: Option<f64>,
    /// Stop here and write a checkpoint; must be one of the output times.
    pub checkpoint_at: Option<f64>,
    pub lm_order: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            points: 51,
            times: None,
            eps_grid: None,
            policy: PolicyKind::Stability,
            safety: 0.25,
            dt_max: None,
            checkpoint_at: None,
            lm_order: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub resamples: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_paths: 100,
            seed: 0,
            resamples: plmx::mixing::BOOTSTRAP_RESAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lambda: f64,
    pub c_big: f64,
    pub c_lower: f64,
    pub c_coupling: f64,
    pub lambda_noise: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    /// Reference sample size; defaults to `ensemble.n_paths`.
    pub n_reference: Option<usize>,
    pub chains: usize,
    pub floor_fraction: f64,
    pub burn_factor: f64,
    pub probe_horizon: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        let d = StationaryOptions::default();
        Self {
            n_reference: None,
            chains: d.chains,
            floor_fraction: d.floor_fraction,
            burn_factor: d.burn_factor,
            probe_horizon: d.probe_horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisintegrationConfig {
    pub instances: usize,
    /// Support size of the measure compared against the mixture.
    pub support: usize,
    pub components: usize,
    pub component_size: usize,
    pub dim: usize,
    pub orders: Vec<f64>,
}

impl Default for DisintegrationConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            support: 4,
            components: 3,
            component_size: 3,
            dim: 2,
            orders: vec![1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub params: ParamsConfig,
    pub noise: NoiseConfig,
    pub x0: Option<InitialDatum>,
    pub schedule: ScheduleConfig,
    pub ensemble: EnsembleConfig,
    pub outputs: OutputConfig,
    pub bounds: Option<BoundsConfig>,
    pub stationary: StationaryConfig,
    pub disintegration: DisintegrationConfig,
}

fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(msg.to_string())
}

/// Sets `key` (dotted path) in `table`; the value is read as a TOML literal,
/// falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(format!("override `{assignment}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("override `{key}`: `{part}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads `path` (or starts empty), applies overrides in order and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| config_error(e.to_string().trim_end()))?;
    cfg.validate()?;
    if cfg.model == ModelKind::Field && cfg.params.p < 2.0 && cfg.params.eps_reg == 0.0 {
        cfg.params.eps_reg = plmx::field::default_eps_reg(&cfg.field_x0()?);
    }
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        self.model_params().validate().map_err(config_error)?;
        let s = &self.schedule;
        if !(s.t_end >= 0.0) || !s.t_end.is_finite() {
            return Err(config_error(format!("schedule.t_end must be finite and >= 0, got {}", s.t_end)));
        }
        if let Some(t) = &s.times {
            if t.is_empty() || t.windows(2).any(|w| w[1] <= w[0]) || t[0] < 0.0 {
                return Err(config_error("schedule.times must be non-empty, non-negative and increasing"));
            }
        } else if s.points < 2 {
            return Err(config_error("schedule.points must be >= 2"));
        }
        if let Some(e) = &s.eps_grid {
            if e.iter().any(|v| !(*v > 0.0)) {
                return Err(config_error("schedule.eps_grid entries must be > 0"));
            }
        }
        if !(s.safety > 0.0) {
            return Err(config_error("schedule.safety must be > 0"));
        }
        if let Some(c) = s.checkpoint_at {
            if !self.output_times().contains(&c) {
                return Err(config_error(format!("schedule.checkpoint_at = {c} is not an output time")));
            }
        }
        if self.ensemble.n_paths == 0 {
            return Err(config_error("ensemble.n_paths must be > 0"));
        }
        if !(self.noise.scale >= 0.0) || !self.noise.scale.is_finite() {
            return Err(config_error("noise.scale must be finite and >= 0"));
        }
        let params = self.model_params();
        if self.model == ModelKind::Field {
            self.noise_spec().validate(&params).map_err(config_error)?;
        }
        if let Some(c) = &self.noise.class {
            parse_noise_class(c)?;
        }
        if let Some(InitialDatum::File { path }) = &self.x0 {
            if !path.exists() {
                return Err(config_error(format!("x0 file {} does not exist", path.display())));
            }
        }
        if let Some(InitialDatum::Sine { mode, .. }) = &self.x0 {
            if *mode == 0 || *mode > params.n_nodes() {
                return Err(config_error(format!("x0.mode must be in 1..={}", params.n_nodes())));
            }
        }
        if let Some(b) = &self.bounds {
            if !(b.lambda > 0.0) {
                return Err(config_error("bounds.lambda must be > 0"));
            }
        }
        let d = &self.disintegration;
        if d.support == 0 || d.components == 0 || d.component_size == 0 || d.dim == 0 {
            return Err(config_error("disintegration sizes must be > 0"));
        }
        if d.orders.iter().any(|r| !(*r >= 1.0)) {
            return Err(config_error("disintegration.orders must be >= 1"));
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        let p = &self.params;
        ModelParams {
            p: p.p,
            dim: p.dim,
            length: p.length,
            n_grid: p.n_grid,
            dt: p.dt,
            eps_reg: p.eps_reg,
            r_order: p.r_order,
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        match self.model {
            ModelKind::Field => NoiseSpec::new(self.noise.coeffs.clone()),
            ModelKind::Scalar => NoiseSpec::new(vec![self.noise.scale]),
        }
    }

    pub fn scalar_model(&self) -> ScalarModel {
        ScalarModel {
            p: self.params.p,
            dt: self.params.dt,
            noise_scale: self.noise.scale,
        }
    }

    pub fn output_times(&self) -> Vec<f64> {
        match &self.schedule.times {
            Some(t) => t.clone(),
            None => time_grid(self.schedule.t_end, self.schedule.points),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.output_times().last().copied().unwrap_or(0.0)
    }

    pub fn evolve_options(&self, record: Record) -> EvolveOptions {
        let s = &self.schedule;
        EvolveOptions {
            policy: match s.policy {
                PolicyKind::Fixed => StepPolicy::Fixed,
                PolicyKind::Stability => StepPolicy::Stability {
                    safety: s.safety,
                    dt_max: s.dt_max.unwrap_or(f64::INFINITY),
                },
            },
            record,
            lm_order: s.lm_order,
            ..Default::default()
        }
    }

    pub fn stationary_options(&self) -> StationaryOptions {
        let s = &self.stationary;
        StationaryOptions {
            chains: s.chains,
            floor_fraction: s.floor_fraction,
            burn_factor: s.burn_factor,
            probe_horizon: s.probe_horizon,
        }
    }

    fn datum(&self) -> Result<&InitialDatum, Failure> {
        self.x0.as_ref().ok_or_else(|| config_error("this subcommand needs an [x0] section"))
    }

    pub fn scalar_x0(&self) -> Result<f64, Failure> {
        match self.datum()? {
            InitialDatum::Constant { value } => Ok(*value),
            _ => Err(config_error("scalar models take x0 of kind \"constant\"")),
        }
    }

    pub fn field_x0(&self) -> Result<FieldState, Failure> {
        let params = Arc::new(self.model_params());
        let x0 = match self.datum()? {
            InitialDatum::Constant { value } => FieldState::from_fn(params, |_, _| *value),
            InitialDatum::Sine { amplitude, mode } => FieldState::from_mode(params, mode - 1, *amplitude),
            InitialDatum::File { path } => {
                let v = plmx::io::read_field_values(path).map_err(config_error)?;
                FieldState::from_values(params, v).map_err(config_error)?
            }
        };
        Ok(x0)
    }

    pub fn noise_class(&self) -> Result<NoiseClass, Failure> {
        if let Some(c) = &self.noise.class {
            return parse_noise_class(c);
        }
        Ok(match self.model {
            ModelKind::Scalar if self.noise.scale == 0.0 => NoiseClass::Zero,
            ModelKind::Scalar => NoiseClass::NonDegenerate,
            ModelKind::Field => {
                let params = self.model_params();
                let active = self.noise.coeffs.iter().filter(|b| **b != 0.0).count();
                if active == 0 {
                    NoiseClass::Zero
                } else if active == params.n_nodes() {
                    NoiseClass::NonDegenerate
                } else {
                    NoiseClass::Degenerate
                }
            }
        })
    }

    pub fn user_constants(&self) -> Option<BoundConstants> {
        self.bounds.as_ref().map(|b| BoundConstants {
            lambda: b.lambda,
            c_big: b.c_big,
            c_lower: b.c_lower,
            c_coupling: b.c_coupling,
            lambda_noise: b.lambda_noise,
            provenance: Provenance::UserSupplied,
        })
    }

    /// Run identity for checkpoints: everything that shapes the paths except
    /// the end time.
    pub fn run_hash(&self) -> u64 {
        let extra = format!(
            "{:?}|{:?}|{}|{}|{:?}|{:?}|{}",
            self.model,
            self.x0,
            self.ensemble.n_paths,
            self.noise.scale,
            self.schedule.policy,
            self.schedule.dt_max,
            self.schedule.safety
        );
        plmx::io::params_hash(&self.model_params(), &self.noise_spec(), &extra)
    }

    /// Tag of the rate-table row covering this experiment. Statements for
    /// degenerate noise cover every nonzero noise, so they back up the
    /// other classes.
    pub fn source_tag(&self) -> Result<&'static str, Failure> {
        if self.model == ModelKind::Scalar {
            return Ok(if self.noise.scale == 0.0 { "scalar-closed-form-flow" } else { "scalar-exponential-ergodicity" });
        }
        let rows = plmx::mixing::rate_table().mixing;
        let (p, dim) = (self.params.p, self.params.dim);
        let class = self.noise_class()?;
        let mut hits = plmx::mixing::tables::matching_rows(&rows, p, dim, class);
        if hits.is_empty() && class != NoiseClass::Zero {
            hits = plmx::mixing::tables::matching_rows(&rows, p, dim, NoiseClass::Degenerate);
        }
        Ok(hits.first().map_or("unlisted", |&i| rows[i].source))
    }
}

pub fn parse_noise_class(s: &str) -> Result<NoiseClass, Failure> {
    match s {
        "0" | "zero" => Ok(NoiseClass::Zero),
        "degenerate" => Ok(NoiseClass::Degenerate),
        "degenerate regular" | "degenerate-regular" => Ok(NoiseClass::DegenerateRegular),
        "non-degenerate" | "nondegenerate" => Ok(NoiseClass::NonDegenerate),
        other => Err(config_error(format!("unknown noise class `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_nest() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "params.p = 4").unwrap();
        apply_override(&mut t, "model=scalar").unwrap();
        apply_override(&mut t, "schedule.eps_grid=[0.5, 0.25]").unwrap();
        let cfg: ExperimentConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.params.p, 4.0);
        assert_eq!(cfg.model, ModelKind::Scalar);
        assert_eq!(cfg.schedule.eps_grid, Some(vec![0.5, 0.25]));
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let t: toml::Table = toml::from_str("[params]\np = 3.0\nbogus = 1\n").unwrap();
        assert!(toml::Value::Table(t).try_into::<ExperimentConfig>().is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.params.p = 0.5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.schedule.checkpoint_at = Some(0.123);
        assert!(c.validate().is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let mut c = ExperimentConfig::default();
        c.x0 = Some(InitialDatum::Sine { amplitude: 1.0, mode: 1 });
        c.schedule.eps_grid = Some(vec![0.1]);
        let text = toml::to_string(&c).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
