//! Experiment configuration files (TOML).
//!
//! Every field is either required or has a documented default. Plant
//! parameters are never defaulted silently: `plant.params` must be the string
//! `"nominal"` or a full parameter table.
//!
//! ```toml
//! t_end = 200.0
//! output_dir = "fig1a"
//!
//! [plant]
//! params = "nominal"
//! variant = "scaled"
//!
//! [reference]
//! waveform = "trig"
//! period = 100.0
//!
//! [gains]
//! gamma = 150.0
//! epsilon = 0.001
//! eta = 1.0
//!
//! [integrator]
//! method = "rk4"
//! dt = 2e-5
//!
//! [initial]
//! delta_x = [0.05, 0.01]
//! u0 = [0.0, 0.0]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ESGains;
use crate::integrate::{max_step_for, IntegratorConfig, LoopOptions, Method};
use crate::plant::{CstrModel, CstrParams, ModelVariant};
use crate::reference::{EvalMode, ReferenceSpec, ShootingSettings, Waveform};

/// A rejected configuration, anchored to a source location when one is known.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub message: String,
    /// Dotted key path of the offending field.
    pub key: Option<String>,
    /// 1-based line and column.
    pub location: Option<(usize, usize)>,
    pub file: Option<PathBuf>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}", file.display())?;
            if let Some((l, c)) = self.location {
                write!(f, ":{l}:{c}")?;
            }
            write!(f, ": ")?;
        } else if let Some((l, c)) = self.location {
            write!(f, "line {l}, column {c}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "`{k}`: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            key: Some(key.to_string()),
            location: None,
            file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NamedParams {
    #[serde(rename = "nominal")]
    Nominal,
}

/// `"nominal"` or an explicit table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsChoice {
    Named(NamedParams),
    Explicit(CstrParams),
}

impl ParamsChoice {
    pub fn resolve(&self) -> CstrParams {
        match self {
            ParamsChoice::Named(NamedParams::Nominal) => CstrParams::NOMINAL,
            ParamsChoice::Explicit(p) => *p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub params: ParamsChoice,
    /// Defaults to the scaled model.
    #[serde(default)]
    pub variant: ModelVariant,
}

fn default_orbit_tol() -> f64 {
    1e-10
}

fn default_shooting_dt() -> f64 {
    1e-3
}

fn default_eval() -> EvalMode {
    EvalMode::CoIntegrate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub waveform: Waveform,
    pub period: f64,
    /// Defaults to the lower input bounds `(u1_min, u2_min)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<[f64; 2]>,
    /// How `x*(t)` is evaluated in post-processing. Default `"co-integrate"`.
    #[serde(default = "default_eval")]
    pub evaluation: EvalMode,
    /// Shooting defect tolerance, default `1e-10`.
    #[serde(default = "default_orbit_tol")]
    pub orbit_tol: f64,
    /// Shooting start, default the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit_guess: Option<[f64; 2]>,
    /// RK4 step of the shooting integrator, default `1e-3`.
    #[serde(default = "default_shooting_dt")]
    pub shooting_dt: f64,
}

impl ReferenceSection {
    pub fn spec(&self, params: &CstrParams) -> ReferenceSpec {
        ReferenceSpec {
            waveform: self.waveform,
            period: self.period,
            amplitudes: self.amplitudes.unwrap_or([params.u1_min, params.u2_min]),
        }
    }

    pub fn shooting(&self) -> ShootingSettings {
        ShootingSettings {
            integrator: IntegratorConfig::rk4(self.shooting_dt),
            ..ShootingSettings::default()
        }
    }
}

/// Initial conditions: absolute values or offsets from the reference at `t = 0`.
///
/// Exactly one of `x0`/`delta_x` and one of `u0`/`delta_u` must be given.
/// Offsets are taken from `x*(0)` and `u*(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_x: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_u: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Bound level for the tracking report, default `0.5`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Settling window; defaults to one reference period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

fn default_rho() -> f64 {
    0.5
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            window: None,
        }
    }
}

/// Axes of a gain sweep. A missing axis keeps the base value from `[gains]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta: Vec<f64>,
    /// Scale the RK4 step with each cell as `ηε / steps_per_dither`. Default: keep `dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_dither: Option<f64>,
}

/// Provenance written into manifests; ignored when a manifest is run again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub tool_version: String,
    pub x_star_0: [f64; 2],
    pub x0: [f64; 2],
    pub u0: [f64; 2],
    pub orbit_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub t_end: f64,
    /// Output directory, relative to the output root. Defaults to the config file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantSection,
    pub reference: ReferenceSection,
    pub gains: ESGains,
    pub integrator: IntegratorConfig,
    pub initial: InitialSection,
    #[serde(default)]
    pub options: LoopOptions,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

impl ExperimentConfig {
    /// Parse and validate; errors carry line and column where possible.
    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let location = e.span().map(|s| line_col(src, s.start));
            ConfigError {
                message: e.message().trim().to_string(),
                key: None,
                location,
                file: None,
            }
        })?;
        cfg.validate().map_err(|mut e| {
            if let Some(key) = &e.key {
                e.location = locate_key(src, key);
            }
            e
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            message: format!("cannot read config: {e}"),
            key: None,
            location: None,
            file: Some(path.to_path_buf()),
        })?;
        Self::from_toml_str(&src).map_err(|mut e| {
            e.file = Some(path.to_path_buf());
            e
        })
    }

    pub fn to_toml_string(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn model(&self) -> CstrModel {
        CstrModel {
            params: self.plant.params.resolve(),
            variant: self.plant.variant,
        }
    }

    pub fn reference_spec(&self) -> ReferenceSpec {
        self.reference.spec(&self.plant.params.resolve())
    }

    pub fn window(&self) -> f64 {
        self.analysis.window.unwrap_or(self.reference.period)
    }

    /// Every check that does not need a simulation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(key, format!("must be positive and finite, got {v}")))
            }
        };
        positive("t_end", self.t_end)?;

        let params = self.plant.params.resolve();
        params
            .validate()
            .map_err(|e| ConfigError::new("plant.params", e.to_string()))?;

        positive("reference.period", self.reference.period)?;
        positive("reference.orbit_tol", self.reference.orbit_tol)?;
        positive("reference.shooting_dt", self.reference.shooting_dt)?;
        if let EvalMode::DenseGrid { step } = self.reference.evaluation {
            positive("reference.evaluation", step)?;
        }
        self.reference_spec()
            .validate(&params)
            .map_err(|e| ConfigError::new("reference.amplitudes", e.to_string()))?;

        positive("gains.gamma", self.gains.gamma)?;
        positive("gains.epsilon", self.gains.epsilon)?;
        positive("gains.eta", self.gains.eta)?;
        if self.gains.n_u != 2 {
            return Err(ConfigError::new("gains.n_u", "the CSTR has exactly 2 inputs"));
        }
        self.gains
            .validate()
            .map_err(|e| ConfigError::new("gains.h_floor", e.to_string()))?;

        self.integrator
            .validate()
            .map_err(|e| ConfigError::new("integrator", e))?;
        if let Method::Rk4 { dt } = self.integrator.method {
            let sweeps_dt = self.sweep.as_ref().is_some_and(|s| s.steps_per_dither.is_some());
            let ceiling = max_step_for(&self.gains);
            if !sweeps_dt && dt > ceiling * (1.0 + 1e-12) {
                return Err(ConfigError::new(
                    "integrator.dt",
                    format!("{dt:e} exceeds the dither resolution limit ηε/50 = {ceiling:e}"),
                ));
            }
        }

        let i = &self.initial;
        match (i.x0.is_some(), i.delta_x.is_some()) {
            (true, true) => return Err(ConfigError::new("initial.delta_x", "give x0 or delta_x, not both")),
            (false, false) => return Err(ConfigError::new("initial", "one of x0 or delta_x is required")),
            _ => {}
        }
        match (i.u0.is_some(), i.delta_u.is_some()) {
            (true, true) => return Err(ConfigError::new("initial.delta_u", "give u0 or delta_u, not both")),
            (false, false) => return Err(ConfigError::new("initial", "one of u0 or delta_u is required")),
            _ => {}
        }
        for (key, v) in [
            ("initial.x0", i.x0),
            ("initial.delta_x", i.delta_x),
            ("initial.u0", i.u0),
            ("initial.delta_u", i.delta_u),
        ] {
            if let Some(v) = v {
                if !v.iter().all(|c| c.is_finite()) {
                    return Err(ConfigError::new(key, "entries must be finite"));
                }
            }
        }
        if let Some(x0) = i.x0 {
            if x0[0] <= -1.0 || x0[1] <= -1.0 {
                return Err(ConfigError::new("initial.x0", "x0 must satisfy x1 > -1 and x2 > -1"));
            }
        }

        if !(self.analysis.rho >= 0.0 && self.analysis.rho.is_finite()) {
            return Err(ConfigError::new("analysis.rho", "must be nonnegative"));
        }
        if let Some(w) = self.analysis.window {
            positive("analysis.window", w)?;
        }
        if self.options.samples_per_period == 0 {
            return Err(ConfigError::new("options.samples_per_period", "must be at least 1"));
        }

        if let Some(s) = &self.sweep {
            for (key, axis) in [("sweep.gamma", &s.gamma), ("sweep.epsilon", &s.epsilon), ("sweep.eta", &s.eta)] {
                for &v in axis {
                    positive(key, v)?;
                }
            }
            if let Some(n) = s.steps_per_dither {
                if !(n >= 50.0 && n.is_finite()) {
                    return Err(ConfigError::new("sweep.steps_per_dither", "must be at least 50"));
                }
            }
        }
        Ok(())
    }

    /// The Cartesian product of the sweep axes in `γ`-major order.
    pub fn sweep_cells(&self) -> Vec<ESGains> {
        let axes = self.sweep.clone().unwrap_or_default();
        let or_base = |axis: &Vec<f64>, base: f64| if axis.is_empty() { vec![base] } else { axis.clone() };
        let mut out = Vec::new();
        for g in or_base(&axes.gamma, self.gains.gamma) {
            for e in or_base(&axes.epsilon, self.gains.epsilon) {
                for n in or_base(&axes.eta, self.gains.eta) {
                    out.push(ESGains {
                        gamma: g,
                        epsilon: e,
                        eta: n,
                        ..self.gains
                    });
                }
            }
        }
        out
    }

    /// Integrator for one sweep cell.
    pub fn cell_integrator(&self, gains: &ESGains) -> IntegratorConfig {
        match (self.sweep.as_ref().and_then(|s| s.steps_per_dither), self.integrator.method) {
            (Some(n), Method::Rk4 { .. }) => IntegratorConfig {
                method: Method::Rk4 {
                    dt: gains.eta * gains.epsilon / n,
                },
                event_times: self.integrator.event_times.clone(),
            },
            _ => self.integrator.clone(),
        }
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Find the source location of a dotted key, falling back to its deepest present parent.
fn locate_key(src: &str, key: &str) -> Option<(usize, usize)> {
    let root = toml::de::DeTable::parse(src).ok()?;
    let mut table = root.get_ref();
    let mut found = None;
    for part in key.split('.') {
        let Some((k, v)) = table.get_key_value(part) else { break };
        found = Some(k.span().start);
        match v.get_ref().as_table() {
            Some(t) => table = t,
            None => break,
        }
    }
    found.map(|o| line_col(src, o))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
t_end = 200.0

[plant]
params = "nominal"

[reference]
waveform = "trig"
period = 100.0

[gains]
gamma = 150.0
epsilon = 0.001
eta = 1.0

[integrator]
method = "rk4"
dt = 2e-5

[initial]
delta_x = [0.05, 0.01]
u0 = [0.0, 0.0]
"#;

    #[test]
    fn base_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(c.model(), CstrModel::nominal());
        assert_eq!(c.reference_spec(), ReferenceSpec::nominal(Waveform::Trig, &CstrParams::NOMINAL));
        assert_eq!(c.gains, ESGains::nominal());
        assert_eq!(c.window(), 100.0);
        assert_eq!(c.options, LoopOptions::default());
        assert_eq!(c.sweep_cells(), vec![ESGains::nominal()]);
    }

    #[test]
    fn nonpositive_epsilon_is_located() {
        let src = BASE.replace("epsilon = 0.001", "epsilon = 0.0");
        let e = ExperimentConfig::from_toml_str(&src).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("gains.epsilon"));
        assert_eq!(e.location.map(|l| l.0), Some(13));
        assert!(e.to_string().starts_with("line 13, column 1: `gains.epsilon`"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let src = BASE.replace("eta = 1.0", "eta = 1.0\ngama = 3.0");
        let e = ExperimentConfig::from_toml_str(&src).unwrap_err();
        assert!(e.message.contains("gama"), "{e}");
        assert_eq!(e.location.map(|l| l.0), Some(15));

        let src = BASE.replace("dt = 2e-5", "dt = 2e-5\nstep = 1");
        assert!(ExperimentConfig::from_toml_str(&src).is_err());
    }

    #[test]
    fn plant_parameters_are_never_implicit() {
        let src = BASE.replace("params = \"nominal\"\n", "");
        assert!(ExperimentConfig::from_toml_str(&src).is_err());
        let src = BASE.replace("\"nominal\"", "\"defaults\"");
        assert!(ExperimentConfig::from_toml_str(&src).is_err());
    }

    #[test]
    fn explicit_parameter_table() {
        let table = toml::to_string(&CstrParams::NOMINAL).unwrap();
        let src = BASE.replace(
            "params = \"nominal\"\n",
            &format!("variant = \"unscaled\"\n\n[plant.params]\n{table}"),
        );
        let c = ExperimentConfig::from_toml_str(&src).unwrap();
        assert_eq!(c.plant.params.resolve(), CstrParams::NOMINAL);
        assert_eq!(c.plant.variant, ModelVariant::Unscaled);
    }

    #[test]
    fn initial_condition_exclusivity() {
        let both = BASE.replace("u0 = [0.0, 0.0]", "u0 = [0.0, 0.0]\ndelta_u = [0.1, 0.0]");
        assert_eq!(
            ExperimentConfig::from_toml_str(&both).unwrap_err().key.as_deref(),
            Some("initial.delta_u")
        );
        let none = BASE.replace("u0 = [0.0, 0.0]", "");
        assert!(ExperimentConfig::from_toml_str(&none).is_err());
    }

    #[test]
    fn coarse_rk4_step_rejected() {
        let src = BASE.replace("dt = 2e-5", "dt = 1e-4");
        let e = ExperimentConfig::from_toml_str(&src).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("integrator.dt"));
    }

    #[test]
    fn sweep_cells_and_scaled_steps() {
        let src = format!("{BASE}\n[sweep]\nepsilon = [1e-4, 1e-3, 1e-2]\neta = [1.0, 5.0]\nsteps_per_dither = 50.0\n");
        let c = ExperimentConfig::from_toml_str(&src).unwrap();
        let cells = c.sweep_cells();
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[1].epsilon, cells[1].eta), (1e-4, 5.0));
        assert_eq!(c.cell_integrator(&cells[5]), IntegratorConfig::rk4(5.0 * 1e-2 / 50.0));
    }

    #[test]
    fn serialization_round_trip() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
