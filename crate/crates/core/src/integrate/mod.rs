//! Closed-loop, open-loop and reduced-system simulations.
//!
//! The closed loop is integrated as one coupled ODE in
//! `(x, u, x*) ∈ ℝ⁶`: the plant, the controller state and a copy of the
//! plant driven by `u*(t)` that generates the reference curve with the same
//! mesh and accuracy as the plant itself.

pub mod ode;

use std::time::Instant;

use nalgebra::{SVector, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{dither_period, es_rhs_into, reduced_rate, ControllerError, ESGains};
use crate::plant::{
    cstr_rhs, steady_state_from, CstrModel, InputVec, NewtonSettings, Plant, PlantError, StateVec,
};
use crate::reference::{reference_input, reference_input_on, ReferenceTrajectory};
pub use ode::{IntegratorConfig, Method, OdeError, Segment, StepStats};
use ode::{Flow, OdeSystem};

/// Minimum number of steps per dither period `ηε`.
pub const STEPS_PER_DITHER_PERIOD: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Setup(String),
    #[error("adaptive step underflow (stiffness) at t = {t}, step {h:e}")]
    Stiff { t: f64, h: f64 },
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("steady-state map failed at t = {t} for u = ({u1}, {u2}): {source}")]
    SteadyState { t: f64, u1: f64, u2: f64, source: PlantError },
}

/// Joint right-hand-side failure inside a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopFault {
    Plant(PlantError),
    Controller(ControllerError),
}

impl From<PlantError> for LoopFault {
    fn from(e: PlantError) -> Self {
        LoopFault::Plant(e)
    }
}

impl From<ControllerError> for LoopFault {
    fn from(e: ControllerError) -> Self {
        LoopFault::Controller(e)
    }
}

impl std::fmt::Display for LoopFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoopFault::Plant(e) => e.fmt(f),
            LoopFault::Controller(e) => e.fmt(f),
        }
    }
}

/// What drives the plant input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    /// The extremum-seeking law.
    #[default]
    Es,
    /// Controller off: `u(t) = u*(t)`.
    Pinned,
}

/// Run options beyond the integrator itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopOptions {
    #[serde(default)]
    pub mode: ControllerMode,
    /// Clamp the applied input to the admissible box (the controller state is not clamped).
    #[serde(default)]
    pub clamp_inputs: bool,
    #[serde(default = "default_samples_per_period")]
    pub samples_per_period: usize,
}

fn default_samples_per_period() -> usize {
    2000
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            mode: ControllerMode::Es,
            clamp_inputs: false,
            samples_per_period: default_samples_per_period(),
        }
    }
}

/// One stored point of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: StateVec,
    pub u: InputVec,
    pub x_star: StateVec,
}

impl Sample {
    /// Cost `y = ‖x − x*‖²`, always recomputed from the stored states.
    pub fn y(&self) -> f64 {
        (self.x - self.x_star).norm_squared()
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    DomainExit { t: f64, x1: f64, x2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub t_end: f64,
    pub integrator: IntegratorConfig,
    pub gains: ESGains,
    pub options: LoopOptions,
    pub stats: StepStats,
    pub wall_time_s: f64,
    pub termination: Termination,
}

/// Sampled closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.meta.termination == Termination::Completed
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

struct ClosedLoop<'a> {
    model: &'a CstrModel,
    reference: &'a ReferenceTrajectory,
    gains: &'a ESGains,
    options: LoopOptions,
    rate: [f64; 2],
}

impl ClosedLoop<'_> {
    fn applied_input(&self, t: f64, u: InputVec, seg: Segment) -> InputVec {
        let u = match self.options.mode {
            ControllerMode::Es => u,
            ControllerMode::Pinned => reference_input_on(t, &self.reference.spec, seg),
        };
        if self.options.clamp_inputs {
            self.model.params.clamp_input(&u)
        } else {
            u
        }
    }
}

impl OdeSystem<6> for ClosedLoop<'_> {
    type Error = LoopFault;

    fn rhs(&mut self, t: f64, s: &Vector6<f64>, seg: Segment) -> Result<Vector6<f64>, LoopFault> {
        let x = StateVec::new(s[0], s[1]);
        let u = InputVec::new(s[2], s[3]);
        let xs = StateVec::new(s[4], s[5]);
        let dx = cstr_rhs(&x, &self.applied_input(t, u, seg), self.model)?;
        let dxs = cstr_rhs(&xs, &reference_input_on(t, &self.reference.spec, seg), self.model)?;
        match self.options.mode {
            ControllerMode::Es => es_rhs_into(t, (x - xs).norm_squared(), self.gains, &mut self.rate)?,
            ControllerMode::Pinned => self.rate = [0.0; 2],
        }
        Ok(Vector6::new(dx[0], dx[1], self.rate[0], self.rate[1], dxs[0], dxs[1]))
    }
}

/// Output times `kΔ` on `[0, t_end]` plus `t_end`, with `Δ = T / samples_per_period`.
fn output_grid(period: f64, samples_per_period: usize, t_end: f64) -> Vec<f64> {
    let dt = period / samples_per_period.max(1) as f64;
    let n = ((t_end / dt) + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    if t_end - out[n] > 1e-9 * dt {
        out.push(t_end);
    }
    out
}

/// Step-size ceiling `ηε / 50` for the given gains.
pub fn max_step_for(gains: &ESGains) -> f64 {
    dither_period(gains) / STEPS_PER_DITHER_PERIOD
}

fn check_mesh(icfg: &IntegratorConfig, gains: &ESGains) -> Result<IntegratorConfig, SimError> {
    icfg.validate().map_err(SimError::Setup)?;
    let ceiling = max_step_for(gains);
    match icfg.method {
        Method::Rk4 { dt } => {
            if dt > ceiling * (1.0 + 1e-12) {
                return Err(SimError::Setup(format!(
                    "RK4 step {dt:e} exceeds the dither resolution limit ηε/50 = {ceiling:e}"
                )));
            }
            Ok(icfg.clone())
        }
        Method::Rkf45 {
            abs_tol,
            rel_tol,
            dt_min,
            dt_max,
        } => {
            let dt_max = dt_max.min(ceiling);
            if dt_min > dt_max {
                return Err(SimError::Setup(format!(
                    "dt_min {dt_min:e} exceeds the capped dt_max {dt_max:e}"
                )));
            }
            Ok(IntegratorConfig {
                method: Method::Rkf45 {
                    abs_tol,
                    rel_tol,
                    dt_min,
                    dt_max,
                },
                event_times: icfg.event_times.clone(),
            })
        }
    }
}

fn map_ode_error<E: std::fmt::Display>(e: OdeError<E>) -> SimError {
    match e {
        OdeError::StepUnderflow { t, h } => SimError::Stiff { t, h },
        OdeError::Config(msg) => SimError::Setup(msg),
        other => SimError::Integration(other.to_string()),
    }
}

/// Simulate plant, controller and reference curve together from `(x0, u0)` at `t = 0`.
///
/// Leaving the state domain ends the run with a partial trajectory whose
/// termination is [`Termination::DomainExit`].
#[allow(clippy::too_many_arguments)]
pub fn integrate_closed_loop(
    x0: &StateVec,
    u0: &InputVec,
    reference: &ReferenceTrajectory,
    gains: &ESGains,
    model: &CstrModel,
    icfg: &IntegratorConfig,
    t_end: f64,
    options: &LoopOptions,
) -> Result<Trajectory, SimError> {
    gains.validate().map_err(|e| SimError::Setup(e.to_string()))?;
    if gains.n_u != model.dims().n_u {
        return Err(SimError::Setup(format!(
            "controller has {} channels, plant has {} inputs",
            gains.n_u,
            model.dims().n_u
        )));
    }
    if !model.in_domain(x0) {
        return Err(SimError::Setup(format!("x0 = ({}, {}) is outside the domain", x0[0], x0[1])));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(SimError::Setup(format!("t_end must be positive, got {t_end}")));
    }
    let icfg = check_mesh(icfg, gains)?;
    let started = Instant::now();
    let pinned = options.mode == ControllerMode::Pinned;
    let u_init = if pinned { reference.input(0.0) } else { *u0 };
    let y0 = Vector6::new(
        x0[0],
        x0[1],
        u_init[0],
        u_init[1],
        reference.x_star_0[0],
        reference.x_star_0[1],
    );
    let mut sys = ClosedLoop {
        model,
        reference,
        gains,
        options: *options,
        rate: [0.0; 2],
    };
    let outputs = output_grid(reference.period(), options.samples_per_period, t_end);
    let breakpoints = reference.spec.breakpoints(0.0, t_end);
    let mut samples = Vec::with_capacity(outputs.len());
    let spec = reference.spec;
    let result = ode::integrate(&mut sys, y0, 0.0, t_end, &icfg, &breakpoints, &outputs, |t, s| {
        let u = if pinned {
            reference_input(t, &spec)
        } else {
            InputVec::new(s[2], s[3])
        };
        samples.push(Sample {
            t,
            x: StateVec::new(s[0], s[1]),
            u,
            x_star: StateVec::new(s[4], s[5]),
        });
        Flow::Continue
    });
    let (stats, termination) = match result {
        Ok(out) => (out.stats, Termination::Completed),
        Err(OdeError::Rhs {
            t,
            source: LoopFault::Plant(PlantError::Domain { x1, x2 }),
        }) => (StepStats::default(), Termination::DomainExit { t, x1, x2 }),
        Err(e) => return Err(map_ode_error(e)),
    };
    Ok(Trajectory {
        samples,
        meta: TrajectoryMeta {
            t_end,
            integrator: icfg,
            gains: *gains,
            options: *options,
            stats,
            wall_time_s: started.elapsed().as_secs_f64(),
            termination,
        },
    })
}

/// Generic sampled time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<V> {
    pub t: Vec<f64>,
    pub values: Vec<V>,
    pub stats: StepStats,
}

impl<V: Copy> TimeSeries<V> {
    pub fn last(&self) -> Option<(f64, V)> {
        Some((*self.t.last()?, *self.values.last()?))
    }
}

struct ConstantInput<'a> {
    model: &'a CstrModel,
    u: InputVec,
}

impl OdeSystem<2> for ConstantInput<'_> {
    type Error = PlantError;

    fn rhs(&mut self, _t: f64, x: &StateVec, _seg: Segment) -> Result<StateVec, PlantError> {
        cstr_rhs(x, &self.u, self.model)
    }
}

/// Open-loop run with a frozen input, sampled every `output_interval`.
pub fn integrate_plant_constant_u(
    x0: &StateVec,
    u: &InputVec,
    model: &CstrModel,
    icfg: &IntegratorConfig,
    t_end: f64,
    output_interval: f64,
) -> Result<TimeSeries<StateVec>, SimError> {
    if !model.in_domain(x0) {
        return Err(SimError::Setup(format!("x0 = ({}, {}) is outside the domain", x0[0], x0[1])));
    }
    if !(output_interval > 0.0) {
        return Err(SimError::Setup("output interval must be positive".into()));
    }
    let outputs = output_grid(output_interval, 1, t_end);
    let mut sys = ConstantInput { model, u: *u };
    let mut series = TimeSeries {
        t: Vec::with_capacity(outputs.len()),
        values: Vec::with_capacity(outputs.len()),
        stats: StepStats::default(),
    };
    let out = ode::integrate(&mut sys, *x0, 0.0, t_end, icfg, &[], &outputs, |t, x| {
        series.t.push(t);
        series.values.push(*x);
        Flow::Continue
    })
    .map_err(map_ode_error)?;
    series.stats = out.stats;
    Ok(series)
}

/// State of the reduced system: `ū` and the reference curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedPoint {
    pub u_bar: InputVec,
    pub x_star: StateVec,
}

struct Reduced<'a> {
    model: &'a CstrModel,
    reference: &'a ReferenceTrajectory,
    gains: &'a ESGains,
    x_star_window: StateVec,
    warm: StateVec,
    newton: NewtonSettings,
}

impl Reduced<'_> {
    fn steady_state(&mut self, u: &InputVec) -> Result<StateVec, PlantError> {
        let x = steady_state_from(u, &self.warm, self.model, &self.newton)
            .or_else(|_| steady_state_from(u, &StateVec::zeros(), self.model, &self.newton))?;
        self.warm = x;
        Ok(x)
    }
}

impl OdeSystem<4> for Reduced<'_> {
    type Error = ControllerError;

    fn rhs(&mut self, t: f64, s: &Vector4<f64>, seg: Segment) -> Result<Vector4<f64>, ControllerError> {
        let u = InputVec::new(s[0], s[1]);
        let xs = StateVec::new(s[2], s[3]);
        let ell = self.steady_state(&u).map_err(|source| ControllerError::Cost {
            u1: u[0],
            u2: u[1],
            source,
        })?;
        let y_t = (ell - xs).norm_squared();
        let y_m = (ell - self.x_star_window).norm_squared();
        let du = reduced_rate(t, y_t, y_m, self.gains)?;
        let dxs = cstr_rhs(&xs, &reference_input_on(t, &self.reference.spec, seg), self.model)
            .map_err(|source| ControllerError::Cost {
                u1: u[0],
                u2: u[1],
                source,
            })?;
        Ok(Vector4::new(du[0], du[1], dxs[0], dxs[1]))
    }
}

/// Integrate the reduced system from `ū(0) = u0` over `[0, t_end]`.
///
/// The phase cost is frozen at the start `t_m = mηε` of each averaging
/// window. Samples are stored `samples_per_window` times per window.
pub fn integrate_reduced(
    u0: &InputVec,
    reference: &ReferenceTrajectory,
    gains: &ESGains,
    model: &CstrModel,
    icfg: &IntegratorConfig,
    t_end: f64,
    samples_per_window: usize,
) -> Result<TimeSeries<ReducedPoint>, SimError> {
    gains.validate().map_err(|e| SimError::Setup(e.to_string()))?;
    let icfg = check_mesh(icfg, gains)?;
    if !(t_end > 0.0) {
        return Err(SimError::Setup(format!("t_end must be positive, got {t_end}")));
    }
    let window = dither_period(gains);
    let n_windows = ((t_end / window) - 1e-9).ceil().max(1.0) as usize;
    let mut sys = Reduced {
        model,
        reference,
        gains,
        x_star_window: reference.x_star_0,
        warm: StateVec::zeros(),
        newton: NewtonSettings::default(),
    };
    let mut state = Vector4::new(u0[0], u0[1], reference.x_star_0[0], reference.x_star_0[1]);
    let mut series = TimeSeries {
        t: vec![0.0],
        values: vec![ReducedPoint {
            u_bar: *u0,
            x_star: reference.x_star_0,
        }],
        stats: StepStats::default(),
    };
    let per = samples_per_window.max(1);
    for m in 0..n_windows {
        let a = m as f64 * window;
        let b = ((m + 1) as f64 * window).min(t_end);
        if b <= a {
            break;
        }
        sys.x_star_window = StateVec::new(state[2], state[3]);
        let outputs: Vec<f64> = (1..=per).map(|k| a + (b - a) * k as f64 / per as f64).collect();
        let breakpoints = reference.spec.breakpoints(a, b);
        let out = ode::integrate(&mut sys, state, a, b, &icfg, &breakpoints, &outputs, |t, s| {
            series.t.push(t);
            series.values.push(ReducedPoint {
                u_bar: InputVec::new(s[0], s[1]),
                x_star: StateVec::new(s[2], s[3]),
            });
            Flow::Continue
        })
        .map_err(|e| match e {
            OdeError::Rhs {
                t,
                source: ControllerError::Cost { u1, u2, source },
            } => SimError::SteadyState { t, u1, u2, source },
            other => map_ode_error(other),
        })?;
        state = out.y;
        merge_stats(&mut series.stats, &out.stats);
    }
    Ok(series)
}

fn merge_stats(acc: &mut StepStats, s: &StepStats) {
    if acc.accepted == 0 {
        *acc = *s;
        return;
    }
    acc.min_step = acc.min_step.min(s.min_step);
    acc.max_step = acc.max_step.max(s.max_step);
    acc.accepted += s.accepted;
    acc.rejected += s.rejected;
    acc.rhs_evals += s.rhs_evals;
}

/// Full closed-loop `u` over `[0, t_end]` without storing a trajectory; used
/// for pairwise comparisons with the reduced system.
pub fn closed_loop_final(
    x0: &StateVec,
    u0: &InputVec,
    reference: &ReferenceTrajectory,
    gains: &ESGains,
    model: &CstrModel,
    icfg: &IntegratorConfig,
    t_end: f64,
) -> Result<(StateVec, InputVec), SimError> {
    let icfg = check_mesh(icfg, gains)?;
    let mut sys = ClosedLoop {
        model,
        reference,
        gains,
        options: LoopOptions::default(),
        rate: [0.0; 2],
    };
    let y0 = Vector6::new(
        x0[0],
        x0[1],
        u0[0],
        u0[1],
        reference.x_star_0[0],
        reference.x_star_0[1],
    );
    let y: SVector<f64, 6> = ode::flow(&mut sys, y0, 0.0, t_end, &icfg, &reference.spec.breakpoints(0.0, t_end))
        .map_err(map_ode_error)?;
    Ok((StateVec::new(y[0], y[1]), InputVec::new(y[2], y[3])))
}
