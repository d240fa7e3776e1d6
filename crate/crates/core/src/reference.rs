//! Reference input programs `u*(t)` and the periodic state curve `x*(t)` they induce.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::ode::{self, IntegratorConfig, OdeError, OdeSystem, Segment};
use crate::plant::{cstr_rhs, CstrModel, CstrParams, InputVec, PlantError, StateVec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("invalid reference: {0}")]
    Invalid(String),
    #[error("reference integration failed: {0}")]
    Integration(#[from] OdeError<PlantError>),
    #[error("periodic-orbit shooting did not converge after {iterations} iterations (defect {defect:e})")]
    ShootingFailed { iterations: usize, defect: f64 },
    #[error("periodic orbit leaves the state domain at t = {t}")]
    OrbitOutsideDomain { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Waveform {
    /// `a_j sin(2πt/T)`
    Trig,
    /// `a_j sign(sin(2πt/T))`, with `sign(0) = 0`
    BangBang,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub waveform: Waveform,
    pub period: f64,
    pub amplitudes: [f64; 2],
}

impl ReferenceSpec {
    /// Amplitudes `a_j = u_j^min` and period 100.
    pub fn nominal(waveform: Waveform, params: &CstrParams) -> Self {
        Self {
            waveform,
            period: 100.0,
            amplitudes: [params.u1_min, params.u2_min],
        }
    }

    pub fn validate(&self, params: &CstrParams) -> Result<(), ReferenceError> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(ReferenceError::Invalid(format!(
                "period must be positive, got {}",
                self.period
            )));
        }
        let [a1, a2] = self.amplitudes;
        let fits = |a: f64, lo: f64, hi: f64| a.is_finite() && a.abs() <= (-lo).min(hi) + 1e-15;
        if !fits(a1, params.u1_min, params.u1_max) || !fits(a2, params.u2_min, params.u2_max) {
            return Err(ReferenceError::Invalid(format!(
                "amplitudes ({a1}, {a2}) exceed the input box"
            )));
        }
        Ok(())
    }

    /// Discontinuity times `kT/2` of the bang-bang program inside `[t0, t1]`.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self.waveform {
            Waveform::Trig => Vec::new(),
            Waveform::BangBang => {
                let half = 0.5 * self.period;
                let first = (t0 / half).ceil() as i64;
                let last = (t1 / half).floor() as i64;
                (first..=last).map(|k| k as f64 * half).collect()
            }
        }
    }
}

/// Unit-amplitude waveform at phase `p ∈ [0, 1)`.
fn unit_wave(waveform: Waveform, p: f64) -> f64 {
    // reflect the second half so that w(p + 1/2) = −w(p)
    let (q, sign) = if p < 0.5 { (p, 1.0) } else { (p - 0.5, -1.0) };
    match waveform {
        Waveform::Trig => sign * (2.0 * PI * q).sin(),
        Waveform::BangBang => {
            if q == 0.0 {
                0.0
            } else {
                sign
            }
        }
    }
}

fn phase(t: f64, period: f64) -> f64 {
    let p = (t / period).rem_euclid(1.0);
    if p >= 1.0 {
        0.0
    } else {
        p
    }
}

/// The reference input `u*(t)`.
pub fn reference_input(t: f64, spec: &ReferenceSpec) -> InputVec {
    let w = unit_wave(spec.waveform, phase(t, spec.period));
    InputVec::new(spec.amplitudes[0] * w, spec.amplitudes[1] * w)
}

/// `u*(t)` for a step confined to `seg`: bang-bang inputs take the value of
/// the segment interior, so stage evaluations at a switching instant see the
/// correct one-sided limit.
pub fn reference_input_on(t: f64, spec: &ReferenceSpec, seg: Segment) -> InputVec {
    match spec.waveform {
        Waveform::Trig => reference_input(t, spec),
        Waveform::BangBang => reference_input(seg.midpoint(), spec),
    }
}

/// The plant driven by `u*(t)`.
pub(crate) struct ForcedPlant<'a> {
    pub model: &'a CstrModel,
    pub spec: &'a ReferenceSpec,
}

impl OdeSystem<2> for ForcedPlant<'_> {
    type Error = PlantError;

    fn rhs(&mut self, t: f64, y: &Vector2<f64>, seg: Segment) -> Result<Vector2<f64>, PlantError> {
        cstr_rhs(y, &reference_input_on(t, self.spec, seg), self.model)
    }
}

/// Period map `Φ_T(x₀)` of the forced plant.
pub fn period_map(
    x0: &StateVec,
    spec: &ReferenceSpec,
    model: &CstrModel,
    cfg: &IntegratorConfig,
) -> Result<StateVec, ReferenceError> {
    forced_flow(x0, 0.0, spec.period, spec, model, cfg)
}

pub(crate) fn forced_flow(
    x0: &StateVec,
    t0: f64,
    t1: f64,
    spec: &ReferenceSpec,
    model: &CstrModel,
    cfg: &IntegratorConfig,
) -> Result<StateVec, ReferenceError> {
    let mut sys = ForcedPlant { model, spec };
    Ok(ode::flow(&mut sys, *x0, t0, t1, cfg, &spec.breakpoints(t0, t1))?)
}

/// Controls for the shooting solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingSettings {
    pub integrator: IntegratorConfig,
    pub fd_step: f64,
    pub max_iter: usize,
}

impl Default for ShootingSettings {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::rk4(1e-3),
            fd_step: 1e-7,
            max_iter: 30,
        }
    }
}

/// Converged periodic initial condition and its shooting diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicOrbit {
    pub x0: StateVec,
    /// `‖Φ_T(x₀) − x₀‖`
    pub defect: f64,
    pub iterations: usize,
    /// Monodromy estimate `∂Φ_T/∂x₀` at the solution.
    pub monodromy: Matrix2<f64>,
}

/// Newton iteration on `x₀ ↦ Φ_T(x₀) − x₀` with a central-difference monodromy.
pub fn find_periodic_orbit(
    spec: &ReferenceSpec,
    model: &CstrModel,
    x_guess: &StateVec,
    tol: f64,
    settings: &ShootingSettings,
) -> Result<PeriodicOrbit, ReferenceError> {
    if !model_in_domain(x_guess) {
        return Err(ReferenceError::Invalid(format!(
            "initial guess ({}, {}) is outside the domain",
            x_guess[0], x_guess[1]
        )));
    }
    let cfg = &settings.integrator;
    let mut x = *x_guess;
    let mut defect_vec = period_map(&x, spec, model, cfg)? - x;
    let mut defect = defect_vec.norm();
    let mut monodromy = Matrix2::identity();
    for it in 0..settings.max_iter {
        monodromy = finite_difference_monodromy(&x, spec, model, cfg, settings.fd_step)?;
        if defect <= tol {
            return Ok(PeriodicOrbit {
                x0: x,
                defect,
                iterations: it,
                monodromy,
            });
        }
        let jac = monodromy - Matrix2::identity();
        let Some(step) = jac.lu().solve(&(-defect_vec)) else {
            break;
        };
        // halve until the defect decreases; the map is nearly affine so this rarely triggers
        let mut lambda = 1.0;
        let mut next = None;
        for _ in 0..20 {
            let trial = x + step * lambda;
            if model_in_domain(&trial) {
                let d = period_map(&trial, spec, model, cfg)? - trial;
                if d.norm() < defect || lambda < 1e-5 {
                    next = Some((trial, d));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((xn, dn)) = next else { break };
        x = xn;
        defect_vec = dn;
        defect = dn.norm();
    }
    if defect <= tol {
        return Ok(PeriodicOrbit {
            x0: x,
            defect,
            iterations: settings.max_iter,
            monodromy,
        });
    }
    Err(ReferenceError::ShootingFailed {
        iterations: settings.max_iter,
        defect,
    })
}

fn model_in_domain(x: &StateVec) -> bool {
    x[0] > -1.0 && x[1] > -1.0
}

fn finite_difference_monodromy(
    x: &StateVec,
    spec: &ReferenceSpec,
    model: &CstrModel,
    cfg: &IntegratorConfig,
    h: f64,
) -> Result<Matrix2<f64>, ReferenceError> {
    let mut m = Matrix2::zeros();
    for k in 0..2 {
        let mut xp = *x;
        let mut xm = *x;
        xp[k] += h;
        xm[k] -= h;
        let col = (period_map(&xp, spec, model, cfg)? - period_map(&xm, spec, model, cfg)?) / (2.0 * h);
        m.set_column(k, &col);
    }
    Ok(m)
}

/// How [`reference_state`] produces `x*(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvalMode {
    /// Integrate the forced plant from `x*(0)`.
    CoIntegrate,
    /// Cubic Hermite interpolation of a precomputed one-period grid.
    DenseGrid { step: f64 },
}

/// Nodes of `x*` over one period. Node slopes come from the vector field at evaluation time.
#[derive(Debug, Clone, PartialEq)]
struct DenseGrid {
    times: Vec<f64>,
    states: Vec<StateVec>,
}

/// An immutable reference curve: program, periodic initial condition and evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub spec: ReferenceSpec,
    pub model: CstrModel,
    pub x_star_0: StateVec,
    pub mode: EvalMode,
    /// Integrator used for co-integration and grid construction.
    pub integrator: IntegratorConfig,
    grid: Option<DenseGrid>,
}

impl ReferenceTrajectory {
    pub fn new(
        spec: ReferenceSpec,
        model: CstrModel,
        x_star_0: StateVec,
        mode: EvalMode,
        integrator: IntegratorConfig,
    ) -> Result<Self, ReferenceError> {
        spec.validate(&model.params)?;
        let grid = match mode {
            EvalMode::CoIntegrate => None,
            EvalMode::DenseGrid { step } => {
                if !(step > 0.0 && step <= spec.period) {
                    return Err(ReferenceError::Invalid(format!("grid step {step} out of range")));
                }
                Some(build_grid(&spec, &model, &x_star_0, step, &integrator)?)
            }
        };
        Ok(Self {
            spec,
            model,
            x_star_0,
            mode,
            integrator,
            grid,
        })
    }

    /// Shoot for the periodic orbit from `guess`, then build the evaluator.
    pub fn solve(
        spec: ReferenceSpec,
        model: CstrModel,
        guess: &StateVec,
        tol: f64,
        mode: EvalMode,
        settings: &ShootingSettings,
    ) -> Result<(Self, PeriodicOrbit), ReferenceError> {
        spec.validate(&model.params)?;
        let orbit = find_periodic_orbit(&spec, &model, guess, tol, settings)?;
        let me = Self::new(spec, model, orbit.x0, mode, settings.integrator.clone())?;
        Ok((me, orbit))
    }

    pub fn period(&self) -> f64 {
        self.spec.period
    }

    pub fn input(&self, t: f64) -> InputVec {
        reference_input(t, &self.spec)
    }

    /// Sample `x*` on `n` equally spaced points of one period; errors if any leaves `D`.
    pub fn check_containment(&self, n: usize) -> Result<(), ReferenceError> {
        let dt = self.spec.period / n as f64;
        let mut x = self.x_star_0;
        for k in 0..n {
            let t0 = k as f64 * dt;
            if !model_in_domain(&x) {
                return Err(ReferenceError::OrbitOutsideDomain { t: t0 });
            }
            x = forced_flow(&x, t0, t0 + dt, &self.spec, &self.model, &self.integrator)
                .map_err(|_| ReferenceError::OrbitOutsideDomain { t: t0 })?;
        }
        Ok(())
    }

    /// Export `t, xs1, xs2, us1, us2` over one period with `n` intervals.
    pub fn write_csv<W: Write>(&self, out: W, n: usize) -> Result<(), crate::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "xs1", "xs2", "us1", "us2"])?;
        let dt = self.spec.period / n as f64;
        let mut x = self.x_star_0;
        for k in 0..=n {
            let t = k as f64 * dt;
            if k > 0 {
                x = forced_flow(&x, t - dt, t, &self.spec, &self.model, &self.integrator)?;
            }
            let u = self.input(t);
            w.write_record(
                [t, x[0], x[1], u[0], u[1]]
                    .iter()
                    .map(|v| crate::export::fmt_f64(*v)),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn build_grid(
    spec: &ReferenceSpec,
    model: &CstrModel,
    x0: &StateVec,
    step: f64,
    cfg: &IntegratorConfig,
) -> Result<DenseGrid, ReferenceError> {
    let n = ((spec.period / step) - 1e-9).ceil().max(1.0) as usize;
    let h = spec.period / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = *x0;
    times.push(0.0);
    states.push(x);
    for k in 1..=n {
        let t0 = (k - 1) as f64 * h;
        let t1 = if k == n { spec.period } else { k as f64 * h };
        x = forced_flow(&x, t0, t1, spec, model, cfg)?;
        times.push(t1);
        states.push(x);
    }
    Ok(DenseGrid { times, states })
}

/// Evaluate `x*(t)` for `t ≥ 0`.
pub fn reference_state(t: f64, reference: &ReferenceTrajectory) -> Result<StateVec, ReferenceError> {
    if t < 0.0 {
        return Err(ReferenceError::Invalid(format!("negative time {t}")));
    }
    match (&reference.mode, &reference.grid) {
        (EvalMode::DenseGrid { .. }, Some(grid)) => Ok(interpolate(grid, reference, t)),
        _ => {
            if t == 0.0 {
                return Ok(reference.x_star_0);
            }
            forced_flow(
                &reference.x_star_0,
                0.0,
                t,
                &reference.spec,
                &reference.model,
                &reference.integrator,
            )
        }
    }
}

fn interpolate(grid: &DenseGrid, reference: &ReferenceTrajectory, t: f64) -> StateVec {
    let period = reference.spec.period;
    let tau = phase(t, period) * period;
    let n = grid.times.len() - 1;
    let h = period / n as f64;
    let i = ((tau / h).floor() as usize).min(n - 1);
    let (t0, t1) = (grid.times[i], grid.times[i + 1]);
    let (x0, x1) = (grid.states[i], grid.states[i + 1]);
    let seg = Segment { start: t0, end: t1 };
    // bang-bang switches fall on nodes only when the grid is aligned; the
    // segment midpoint picks the interior input either way
    let d0 = cstr_rhs(&x0, &reference_input_on(t0, &reference.spec, seg), &reference.model)
        .unwrap_or_else(|_| StateVec::zeros());
    let d1 = cstr_rhs(&x1, &reference_input_on(t1, &reference.spec, seg), &reference.model)
        .unwrap_or_else(|_| StateVec::zeros());
    let hh = t1 - t0;
    let s = ((tau - t0) / hh).clamp(0.0, 1.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    x0 * h00 + d0 * (h10 * hh) + x1 * h01 + d1 * (h11 * hh)
}
