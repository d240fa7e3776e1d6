//! Explicit Runge–Kutta drivers with forced mesh points.
//!
//! Both engines step on `SVector<f64, N>` states. The driver splits
//! `[t0, t_end]` at every breakpoint (input discontinuities) and output
//! time, so no step straddles a discontinuity and every output is a mesh
//! point. The right-hand side receives the discontinuity-free [`Segment`]
//! the current step lives in, which lets piecewise inputs pick the correct
//! one-sided value at segment ends.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Interval between two consecutive discontinuities of the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

pub trait OdeSystem<const N: usize> {
    type Error;

    fn rhs(&mut self, t: f64, y: &SVector<f64, N>, seg: Segment)
        -> Result<SVector<f64, N>, Self::Error>;
}

/// Integration scheme and its step controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Method {
    /// Classical fourth-order Runge–Kutta with step at most `dt`.
    Rk4 { dt: f64 },
    /// Runge–Kutta–Fehlberg 4(5), advancing with the fifth-order solution.
    Rkf45 {
        abs_tol: f64,
        rel_tol: f64,
        dt_min: f64,
        dt_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(flatten)]
    pub method: Method,
    /// Mandatory mesh points in addition to those the caller supplies.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub event_times: Vec<f64>,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self {
            method: Method::Rk4 { dt },
            event_times: Vec::new(),
        }
    }

    pub fn rkf45(abs_tol: f64, rel_tol: f64, dt_min: f64, dt_max: f64) -> Self {
        Self {
            method: Method::Rkf45 {
                abs_tol,
                rel_tol,
                dt_min,
                dt_max,
            },
            event_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.method {
            Method::Rk4 { dt } => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(format!("dt must be positive, got {dt}"));
                }
            }
            Method::Rkf45 {
                abs_tol,
                rel_tol,
                dt_min,
                dt_max,
            } => {
                if !(abs_tol > 0.0 && rel_tol > 0.0) {
                    return Err("tolerances must be positive".into());
                }
                if !(dt_min > 0.0 && dt_max >= dt_min && dt_max.is_finite()) {
                    return Err(format!(
                        "need dt_max >= dt_min > 0, got dt_min = {dt_min}, dt_max = {dt_max}"
                    ));
                }
            }
        }
        if self.event_times.iter().any(|t| !t.is_finite()) {
            return Err("event times must be finite".into());
        }
        Ok(())
    }

    /// Largest step the scheme can take.
    pub fn max_step(&self) -> f64 {
        match self.method {
            Method::Rk4 { dt } => dt,
            Method::Rkf45 { dt_max, .. } => dt_max,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
    pub min_step: f64,
    pub max_step: f64,
}

impl StepStats {
    fn record(&mut self, h: f64) {
        if self.accepted == 0 {
            self.min_step = h;
            self.max_step = h;
        } else {
            self.min_step = self.min_step.min(h);
            self.max_step = self.max_step.max(h);
        }
        self.accepted += 1;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError<E> {
    #[error("right-hand side failed at t = {t}: {source}")]
    Rhs { t: f64, source: E },
    #[error("step size underflow at t = {t}: required step {h:e} below dt_min")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
}

/// What the output callback wants the driver to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Outcome of a driven integration.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeOutcome<const N: usize> {
    pub t: f64,
    pub y: SVector<f64, N>,
    pub stats: StepStats,
    pub stopped_early: bool,
}

/// Sorted, deduplicated points strictly inside `(t0, t_end)`.
fn interior_points(points: impl IntoIterator<Item = f64>, t0: f64, t_end: f64) -> Vec<f64> {
    let span = (t_end - t0).abs().max(1.0);
    let mut pts: Vec<f64> = points
        .into_iter()
        .filter(|&p| p > t0 + 1e-12 * span && p < t_end - 1e-12 * span)
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * span);
    pts
}

/// Integrate from `t0` to `t_end`, stepping exactly onto every breakpoint and
/// output time and calling `observe` at each output time (and at `t0`).
///
/// `breakpoints` are discontinuities of the right-hand side; `outputs` are
/// sample times. Returning [`Flow::Stop`] from `observe` ends the run early.
pub fn integrate<S, F, const N: usize>(
    sys: &mut S,
    y0: SVector<f64, N>,
    t0: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    breakpoints: &[f64],
    outputs: &[f64],
    mut observe: F,
) -> Result<OdeOutcome<N>, OdeError<S::Error>>
where
    S: OdeSystem<N>,
    F: FnMut(f64, &SVector<f64, N>) -> Flow,
{
    cfg.validate().map_err(OdeError::Config)?;
    if !(t_end > t0) {
        return Err(OdeError::Config(format!("need t_end > t0, got [{t0}, {t_end}]")));
    }
    let disc = interior_points(
        breakpoints.iter().chain(cfg.event_times.iter()).copied(),
        t0,
        t_end,
    );
    let span = (t_end - t0).abs().max(1.0);
    let output_set = interior_points(outputs.iter().copied(), t0, t_end);
    let mesh = interior_points(disc.iter().chain(output_set.iter()).copied(), t0, t_end);
    let wants_end = outputs.iter().any(|&o| (o - t_end).abs() <= 1e-12 * span);

    let mut stats = StepStats::default();
    let mut y = y0;
    let mut t = t0;
    let mut h_prev: Option<f64> = None;
    if outputs.iter().any(|&o| (o - t0).abs() <= 1e-12 * span) && observe(t0, &y) == Flow::Stop {
        return Ok(OdeOutcome {
            t,
            y,
            stats,
            stopped_early: true,
        });
    }

    let mut seg_idx = 0usize;
    let mut out_idx = 0usize;
    let stops = mesh.iter().copied().chain(std::iter::once(t_end));
    for stop in stops {
        while seg_idx < disc.len() && disc[seg_idx] <= t + 1e-12 * span {
            seg_idx += 1;
        }
        let seg = Segment {
            start: if seg_idx == 0 { t0 } else { disc[seg_idx - 1] },
            end: disc.get(seg_idx).copied().unwrap_or(t_end),
        };
        y = match cfg.method {
            Method::Rk4 { dt } => rk4_span(sys, y, t, stop, dt, seg, &mut stats)?,
            Method::Rkf45 {
                abs_tol,
                rel_tol,
                dt_min,
                dt_max,
            } => rkf45_span(
                sys,
                y,
                t,
                stop,
                Rkf45Controls {
                    abs_tol,
                    rel_tol,
                    dt_min,
                    dt_max,
                },
                seg,
                &mut stats,
                &mut h_prev,
            )?,
        };
        t = stop;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t });
        }
        let is_output = if stop == t_end {
            wants_end
        } else {
            while out_idx < output_set.len() && output_set[out_idx] < stop - 1e-12 * span {
                out_idx += 1;
            }
            out_idx < output_set.len() && (output_set[out_idx] - stop).abs() <= 1e-12 * span
        };
        if is_output && observe(t, &y) == Flow::Stop {
            return Ok(OdeOutcome {
                t,
                y,
                stats,
                stopped_early: true,
            });
        }
    }
    Ok(OdeOutcome {
        t,
        y,
        stats,
        stopped_early: false,
    })
}

/// Integrate without any outputs; returns the state at `t_end`.
pub fn flow<S, const N: usize>(
    sys: &mut S,
    y0: SVector<f64, N>,
    t0: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    breakpoints: &[f64],
) -> Result<SVector<f64, N>, OdeError<S::Error>>
where
    S: OdeSystem<N>,
{
    if t_end == t0 {
        return Ok(y0);
    }
    integrate(sys, y0, t0, t_end, cfg, breakpoints, &[], |_, _| Flow::Continue).map(|o| o.y)
}

fn eval<S, const N: usize>(
    sys: &mut S,
    t: f64,
    y: &SVector<f64, N>,
    seg: Segment,
    stats: &mut StepStats,
) -> Result<SVector<f64, N>, OdeError<S::Error>>
where
    S: OdeSystem<N>,
{
    stats.rhs_evals += 1;
    sys.rhs(t, y, seg).map_err(|source| OdeError::Rhs { t, source })
}

/// Classical RK4 over `[a, b]` with `ceil((b − a)/dt)` equal steps.
fn rk4_span<S, const N: usize>(
    sys: &mut S,
    mut y: SVector<f64, N>,
    a: f64,
    b: f64,
    dt: f64,
    seg: Segment,
    stats: &mut StepStats,
) -> Result<SVector<f64, N>, OdeError<S::Error>>
where
    S: OdeSystem<N>,
{
    let len = b - a;
    let n = ((len / dt) - 1e-9).ceil().max(1.0) as u64;
    let h = len / n as f64;
    for k in 0..n {
        let t = a + k as f64 * h;
        let t_next = if k + 1 == n { b } else { a + (k + 1) as f64 * h };
        let th = t + 0.5 * h;
        let k1 = eval(sys, t, &y, seg, stats)?;
        let k2 = eval(sys, th, &(y + k1 * (0.5 * h)), seg, stats)?;
        let k3 = eval(sys, th, &(y + k2 * (0.5 * h)), seg, stats)?;
        let k4 = eval(sys, t_next, &(y + k3 * h), seg, stats)?;
        y += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        stats.record(h);
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy)]
struct Rkf45Controls {
    abs_tol: f64,
    rel_tol: f64,
    dt_min: f64,
    dt_max: f64,
}

// Fehlberg tableau
const C2: f64 = 1.0 / 4.0;
const C3: f64 = 3.0 / 8.0;
const C4: f64 = 12.0 / 13.0;
const A21: f64 = 1.0 / 4.0;
const A31: f64 = 3.0 / 32.0;
const A32: f64 = 9.0 / 32.0;
const A41: f64 = 1932.0 / 2197.0;
const A42: f64 = -7200.0 / 2197.0;
const A43: f64 = 7296.0 / 2197.0;
const A51: f64 = 439.0 / 216.0;
const A52: f64 = -8.0;
const A53: f64 = 3680.0 / 513.0;
const A54: f64 = -845.0 / 4104.0;
const A61: f64 = -8.0 / 27.0;
const A62: f64 = 2.0;
const A63: f64 = -3544.0 / 2565.0;
const A64: f64 = 1859.0 / 4104.0;
const A65: f64 = -11.0 / 40.0;
// fifth-order weights
const B1: f64 = 16.0 / 135.0;
const B3: f64 = 6656.0 / 12825.0;
const B4: f64 = 28561.0 / 56430.0;
const B5: f64 = -9.0 / 50.0;
const B6: f64 = 2.0 / 55.0;
// fifth minus fourth order
const E1: f64 = 1.0 / 360.0;
const E3: f64 = -128.0 / 4275.0;
const E4: f64 = -2197.0 / 75240.0;
const E5: f64 = 1.0 / 50.0;
const E6: f64 = 2.0 / 55.0;

#[allow(clippy::too_many_arguments)]
fn rkf45_span<S, const N: usize>(
    sys: &mut S,
    mut y: SVector<f64, N>,
    a: f64,
    b: f64,
    ctl: Rkf45Controls,
    seg: Segment,
    stats: &mut StepStats,
    h_prev: &mut Option<f64>,
) -> Result<SVector<f64, N>, OdeError<S::Error>>
where
    S: OdeSystem<N>,
{
    let mut t = a;
    let mut h = h_prev.unwrap_or((ctl.dt_max).min(0.01 * (b - a).max(ctl.dt_min)));
    h = h.clamp(ctl.dt_min, ctl.dt_max);
    while t < b {
        let remaining = b - t;
        let last = h >= remaining * (1.0 - 1e-12);
        let step = if last { remaining } else { h };
        let k1 = eval(sys, t, &y, seg, stats)?;
        let k2 = eval(sys, t + C2 * step, &(y + k1 * (A21 * step)), seg, stats)?;
        let k3 = eval(sys, t + C3 * step, &(y + (k1 * A31 + k2 * A32) * step), seg, stats)?;
        let k4 = eval(
            sys,
            t + C4 * step,
            &(y + (k1 * A41 + k2 * A42 + k3 * A43) * step),
            seg,
            stats,
        )?;
        let k5 = eval(
            sys,
            t + step,
            &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * step),
            seg,
            stats,
        )?;
        let k6 = eval(
            sys,
            t + 0.5 * step,
            &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * step),
            seg,
            stats,
        )?;
        let y_new = y + (k1 * B1 + k3 * B3 + k4 * B4 + k5 * B5 + k6 * B6) * step;
        let err = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6) * step;
        let mut err_norm: f64 = 0.0;
        for i in 0..N {
            let scale = ctl.abs_tol + ctl.rel_tol * y[i].abs().max(y_new[i].abs());
            err_norm = err_norm.max(err[i].abs() / scale);
        }
        if !err_norm.is_finite() {
            err_norm = f64::INFINITY;
        }
        let factor = if err_norm == 0.0 {
            5.0
        } else {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err_norm <= 1.0 {
            t = if last { b } else { t + step };
            y = y_new;
            stats.record(step);
            // a step shortened to hit the segment end does not grow the next one
            h = if !last {
                step * factor
            } else if factor < 1.0 {
                h.min(step * factor)
            } else {
                h
            }
            .min(ctl.dt_max);
        } else {
            stats.rejected += 1;
            if step <= ctl.dt_min * (1.0 + 1e-12) {
                return Err(OdeError::StepUnderflow { t, h: step * factor });
            }
            h = (step * factor).max(ctl.dt_min);
        }
    }
    *h_prev = Some(h.max(ctl.dt_min));
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector1, Vector2};
    use std::convert::Infallible;

    struct Decay;
    impl OdeSystem<1> for Decay {
        type Error = Infallible;
        fn rhs(&mut self, _t: f64, y: &Vector1<f64>, _s: Segment) -> Result<Vector1<f64>, Infallible> {
            Ok(-*y)
        }
    }

    struct Linear(Matrix2<f64>);
    impl OdeSystem<2> for Linear {
        type Error = Infallible;
        fn rhs(&mut self, _t: f64, y: &Vector2<f64>, _s: Segment) -> Result<Vector2<f64>, Infallible> {
            Ok(self.0 * y)
        }
    }

    /// `ẏ = sign(sin(πt))`, evaluated on the segment midpoint.
    struct Square;
    impl OdeSystem<1> for Square {
        type Error = Infallible;
        fn rhs(&mut self, _t: f64, _y: &Vector1<f64>, s: Segment) -> Result<Vector1<f64>, Infallible> {
            Ok(Vector1::new((std::f64::consts::PI * s.midpoint()).sin().signum()))
        }
    }

    #[test]
    fn rk4_fourth_order_on_decay() {
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                let y = flow(&mut Decay, Vector1::new(1.0), 0.0, 2.0, &IntegratorConfig::rk4(dt), &[]).unwrap();
                (y[0] - (-2.0f64).exp()).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 3.8 && order < 4.2, "order {order}");
        }
    }

    #[test]
    fn rkf45_meets_tolerance_on_linear_system() {
        let a = Matrix2::new(-2.0, 1.0, -1.0, -2.0);
        // e^{At} for A = -2I + J with J a rotation generator
        let t_end = 3.0f64;
        let exact = Vector2::new(
            (-2.0 * t_end).exp() * t_end.cos(),
            -(-2.0 * t_end).exp() * t_end.sin(),
        );
        let cfg = IntegratorConfig::rkf45(1e-9, 1e-9, 1e-8, 0.5);
        let y = flow(&mut Linear(a), Vector2::new(1.0, 0.0), 0.0, t_end, &cfg, &[]).unwrap();
        assert!((y - exact).abs().max() < 1e-8, "{y} vs {exact}");
    }

    #[test]
    fn breakpoints_keep_piecewise_input_exact() {
        // integral of the square wave over [0, 3] is 1
        let out = integrate(
            &mut Square,
            Vector1::new(0.0),
            0.0,
            3.0,
            &IntegratorConfig::rk4(0.3),
            &[1.0, 2.0],
            &[],
            |_, _| Flow::Continue,
        )
        .unwrap();
        assert!((out.y[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn outputs_are_mesh_points() {
        let mut seen = Vec::new();
        let outs: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let out = integrate(
            &mut Decay,
            Vector1::new(1.0),
            0.0,
            1.0,
            &IntegratorConfig::rk4(0.03),
            &[],
            &outs,
            |t, y| {
                seen.push((t, y[0]));
                Flow::Continue
            },
        )
        .unwrap();
        assert_eq!(seen.len(), 11);
        assert_eq!(seen[0], (0.0, 1.0));
        assert!(out.stats.max_step <= 0.03);
        for (k, (t, _)) in seen.iter().enumerate() {
            assert!((t - k as f64 * 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn observer_can_stop() {
        let outs = [0.5, 1.0, 1.5];
        let out = integrate(
            &mut Decay,
            Vector1::new(1.0),
            0.0,
            2.0,
            &IntegratorConfig::rk4(0.01),
            &[],
            &outs,
            |t, _| if t >= 1.0 { Flow::Stop } else { Flow::Continue },
        )
        .unwrap();
        assert!(out.stopped_early);
        assert!((out.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn underflow_is_reported() {
        struct Blowup;
        impl OdeSystem<1> for Blowup {
            type Error = Infallible;
            fn rhs(&mut self, _t: f64, y: &Vector1<f64>, _s: Segment) -> Result<Vector1<f64>, Infallible> {
                Ok(Vector1::new(y[0] * y[0]))
            }
        }
        let cfg = IntegratorConfig::rkf45(1e-10, 1e-10, 1e-6, 0.1);
        let err = flow(&mut Blowup, Vector1::new(1.0), 0.0, 2.0, &cfg, &[]).unwrap_err();
        assert!(matches!(err, OdeError::StepUnderflow { .. } | OdeError::NonFinite { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::rk4(0.0).validate().is_err());
        assert!(IntegratorConfig::rkf45(1e-6, 1e-6, 1e-3, 1e-4).validate().is_err());
        assert!(IntegratorConfig::rkf45(0.0, 1e-6, 1e-6, 1e-4).validate().is_err());
        assert!(IntegratorConfig::rkf45(1e-6, 1e-6, 1e-6, 1e-4).validate().is_ok());
    }
}
