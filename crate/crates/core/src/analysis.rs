//! Tracking reports, assumption probes and sweep tables.
//!
//! Two error signals are computed for every run:
//!
//! - the steady-curve error `e(t) = ‖x(t) − ℓ(u*(t))‖ + ‖u(t) − u*(t)‖`, which is
//!   what the practical-stability bound talks about;
//! - the orbit error `‖x(t) − x*(t)‖ + ‖u(t) − u*(t)‖`, which is what the cost
//!   `y` measures.
//!
//! They differ because the forced periodic orbit `x*` is not the curve of
//! equilibria `ℓ(u*(t))`.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{dither_period, ESGains};
use crate::export::fmt_f64;
use crate::integrate::{closed_loop_final, integrate_reduced, IntegratorConfig, Sample, Trajectory};
use crate::plant::{steady_state_from, CstrModel, CstrParams, InputVec, NewtonSettings, PlantError, StateVec};
use crate::reference::{reference_input, reference_state, ReferenceError, ReferenceSpec, ReferenceTrajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("trajectory spans {span} but at least {needed} is required")]
    TooShort { span: f64, needed: f64 },
    #[error("steady-state solve failed along u*(t) at t = {t}: {source}")]
    SteadyState { t: f64, source: PlantError },
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("empty sample grid: {0}")]
    EmptyGrid(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Memoized `ℓ(u)` keyed by the exact bits of `u`, with a warm-started Newton.
///
/// Reference inputs repeat from period to period, so most lookups after the
/// first period are hits.
#[derive(Debug, Clone)]
pub struct SteadyCurveCache {
    model: CstrModel,
    newton: NewtonSettings,
    warm: StateVec,
    map: HashMap<(u64, u64), StateVec>,
}

impl SteadyCurveCache {
    pub fn new(model: CstrModel) -> Self {
        Self {
            model,
            newton: NewtonSettings::default(),
            warm: StateVec::zeros(),
            map: HashMap::new(),
        }
    }

    pub fn get(&mut self, u: &InputVec) -> Result<StateVec, PlantError> {
        let key = (u[0].to_bits(), u[1].to_bits());
        if let Some(x) = self.map.get(&key) {
            return Ok(*x);
        }
        let x = steady_state_from(u, &self.warm, &self.model, &self.newton)
            .or_else(|_| steady_state_from(u, &StateVec::zeros(), &self.model, &self.newton))?;
        self.warm = x;
        self.map.insert(key, x);
        Ok(x)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Settling summary of one error signal against a level `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSummary {
    /// Earliest sample time after which the signal stays below `ρ` for a full window.
    pub t_f: Option<f64>,
    /// Largest value on `[t_f, t_end]`, or on the whole run when `t_f` is absent.
    pub sup_after_tf: f64,
    /// The signal stays below `ρ` on all of `[t_f, t_end]`.
    pub bound_satisfied: bool,
    /// Value at the last sample.
    pub final_value: f64,
}

/// Tracking performance of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub rho: f64,
    pub window: f64,
    /// Settling time of the steady-curve error.
    pub t_f: Option<f64>,
    pub sup_error_after_tf: f64,
    pub bound_satisfied: bool,
    /// The same analysis for the orbit error (distance to `x*` instead of `ℓ(u*)`).
    pub orbit: SignalSummary,
    pub mean_sqrt_cost_per_period: Vec<f64>,
}

/// Per-sample error signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    /// `‖x − ℓ(u*)‖ + ‖u − u*‖`
    pub steady: f64,
    /// `‖x − x*‖ + ‖u − u*‖`
    pub orbit: f64,
}

/// Evaluate both error signals at every stored sample.
pub fn error_series(
    traj: &Trajectory,
    spec: &ReferenceSpec,
    cache: &mut SteadyCurveCache,
) -> Result<Vec<ErrorSample>, AnalysisError> {
    traj.samples
        .iter()
        .map(|s| {
            let us = reference_input(s.t, spec);
            let ell = cache
                .get(&us)
                .map_err(|source| AnalysisError::SteadyState { t: s.t, source })?;
            let du = (s.u - us).norm();
            Ok(ErrorSample {
                t: s.t,
                steady: (s.x - ell).norm() + du,
                orbit: (s.x - s.x_star).norm() + du,
            })
        })
        .collect()
}

fn summarize(t: &[f64], e: &[f64], rho: f64, window: f64) -> SignalSummary {
    let n = t.len();
    let t_end = t[n - 1];
    // next_bad[i]: index of the first violation at or after i
    let mut next_bad = vec![n; n + 1];
    for i in (0..n).rev() {
        next_bad[i] = if e[i] > rho { i } else { next_bad[i + 1] };
    }
    let mut t_f = None;
    let mut start = 0;
    for i in 0..n {
        if t[i] + window > t_end * (1.0 + 1e-12) {
            break;
        }
        let nb = next_bad[i];
        if nb == n || t[nb] > t[i] + window {
            t_f = Some(t[i]);
            start = i;
            break;
        }
    }
    let sup = e[start..].iter().copied().fold(0.0, f64::max);
    SignalSummary {
        t_f,
        sup_after_tf: sup,
        bound_satisfied: t_f.is_some() && next_bad[start] == n,
        final_value: e[n - 1],
    }
}

/// Settling analysis of a closed-loop run against the level `rho`.
///
/// `window` is the trailing window over which the bound must hold for `t_f`
/// to count; one reference period is the usual choice.
pub fn tracking_report(
    traj: &Trajectory,
    reference: &ReferenceTrajectory,
    rho: f64,
    window: f64,
) -> Result<TrackingReport, AnalysisError> {
    if !(rho >= 0.0) || !(window > 0.0) {
        return Err(AnalysisError::Invalid(format!("rho = {rho}, window = {window}")));
    }
    let span = match (traj.samples.first(), traj.samples.last()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0.0,
    };
    if span < 2.0 * window * (1.0 - 1e-12) {
        return Err(AnalysisError::TooShort {
            span,
            needed: 2.0 * window,
        });
    }
    let mut cache = SteadyCurveCache::new(reference.model);
    let series = error_series(traj, &reference.spec, &mut cache)?;
    let t: Vec<f64> = series.iter().map(|s| s.t).collect();
    let steady: Vec<f64> = series.iter().map(|s| s.steady).collect();
    let orbit: Vec<f64> = series.iter().map(|s| s.orbit).collect();
    let main = summarize(&t, &steady, rho, window);
    Ok(TrackingReport {
        rho,
        window,
        t_f: main.t_f,
        sup_error_after_tf: main.sup_after_tf,
        bound_satisfied: main.bound_satisfied,
        orbit: summarize(&t, &orbit, rho, window),
        mean_sqrt_cost_per_period: per_period_cost(&traj.samples, reference.period()),
    })
}

/// Mean of `√y` over each full period `[kT, (k+1)T)` covered by the samples.
pub fn per_period_cost(samples: &[Sample], period: f64) -> Vec<f64> {
    let Some(last) = samples.last() else {
        return Vec::new();
    };
    let n_full = ((last.t / period) + 1e-9).floor() as usize;
    let mut sums = vec![0.0; n_full];
    let mut counts = vec![0usize; n_full];
    for s in samples {
        let k = (s.t / period).floor() as usize;
        if k < n_full {
            sums[k] += s.y().sqrt();
            counts[k] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect()
}

/// `sup ‖u*(t₁) − u*(t₂)‖` in closed form: twice the amplitude norm for both waveforms.
pub fn reference_diameter(spec: &ReferenceSpec) -> f64 {
    2.0 * spec.amplitudes[0].hypot(spec.amplitudes[1])
}

/// Options for [`probe_assumption3`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Also estimate the gradient and Hessian constants by finite differences.
    pub derivatives: bool,
    /// Central-difference step in `u`.
    pub fd_step: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            derivatives: false,
            fd_step: 1e-5,
        }
    }
}

/// Sampled constants for the output-map assumption on the concrete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionProbe {
    /// `min √h(t, ℓ(u)) / ‖u − u*(t)‖` over the grid.
    pub alpha11_hat: f64,
    /// `max √h(t, ℓ(u)) / ‖u − u*(t)‖` over the grid.
    pub alpha12_hat: f64,
    /// `min ‖∇ᵤh‖ / √h`, when derivatives were requested.
    pub alpha21_hat: Option<f64>,
    /// `max ‖∇ᵤh‖ / √h`, when derivatives were requested.
    pub alpha22_hat: Option<f64>,
    /// `max ‖∂²h/∂u²‖₂`, when derivatives were requested.
    pub alpha3_hat: Option<f64>,
    /// Largest difference quotient of `√h` in `x` over pairs of grid states.
    pub l_h_hat: f64,
    /// `max ‖u*(t₁) − u*(t₂)‖` over pairs of grid times.
    pub nu_hat: f64,
    pub n_u_points: usize,
    pub n_t_points: usize,
    /// Grid pairs skipped because `‖u − u*(t)‖ < 1e−9`.
    pub excluded: usize,
}

/// `n1 × n2` tensor grid over the admissible input box, corners included.
pub fn input_box_grid(params: &CstrParams, n1: usize, n2: usize) -> Vec<InputVec> {
    let lin = |lo: f64, hi: f64, n: usize, k: usize| {
        if n <= 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            out.push(InputVec::new(
                lin(params.u1_min, params.u1_max, n1, i),
                lin(params.u2_min, params.u2_max, n2, j),
            ));
        }
    }
    out
}

/// `n` equally spaced times `kT/n`, `k = 0..n`.
pub fn period_grid(period: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| period * k as f64 / n as f64).collect()
}

/// Probe the output-map constants on a `u × t` grid.
///
/// `h(t, x) = ‖x − x*(t)‖²`, so `√h` is 1-Lipschitz in `x` and `l_h_hat ≤ 1`
/// up to rounding. `alpha11_hat` is a finding about the model: `√h` vanishes at
/// the input that makes `x*(t)` an equilibrium, which is not `u*(t)`.
pub fn probe_assumption3(
    reference: &ReferenceTrajectory,
    u_grid: &[InputVec],
    t_grid: &[f64],
    options: &ProbeOptions,
) -> Result<AssumptionProbe, AnalysisError> {
    if u_grid.is_empty() {
        return Err(AnalysisError::EmptyGrid("u-grid"));
    }
    if t_grid.is_empty() {
        return Err(AnalysisError::EmptyGrid("t-grid"));
    }
    let mut cache = SteadyCurveCache::new(reference.model);
    let ell: Vec<StateVec> = u_grid
        .iter()
        .map(|u| cache.get(u).map_err(|source| AnalysisError::SteadyState { t: f64::NAN, source }))
        .collect::<Result<_, _>>()?;

    let mut a11 = f64::INFINITY;
    let mut a12 = 0.0f64;
    let mut l_h = 0.0f64;
    let mut excluded = 0;
    let (mut a21, mut a22, mut a3) = (f64::INFINITY, 0.0f64, 0.0f64);

    for &t in t_grid {
        let xs = reference_state(t, reference)?;
        let us = reference_input(t, &reference.spec);
        let sqrt_h: Vec<f64> = ell.iter().map(|x| (x - xs).norm()).collect();
        for (k, u) in u_grid.iter().enumerate() {
            let d = (u - us).norm();
            if d < 1e-9 {
                excluded += 1;
                continue;
            }
            let r = sqrt_h[k] / d;
            a11 = a11.min(r);
            a12 = a12.max(r);
        }
        for a in 0..ell.len() {
            for b in (a + 1)..ell.len() {
                let dx = (ell[a] - ell[b]).norm();
                if dx > 1e-12 {
                    l_h = l_h.max((sqrt_h[a] - sqrt_h[b]).abs() / dx);
                }
            }
        }
        if options.derivatives {
            for (k, u) in u_grid.iter().enumerate() {
                let (grad, hess) = cost_derivatives(u, &xs, options.fd_step, &mut cache)?;
                if sqrt_h[k] > 1e-9 {
                    let q = grad.norm() / sqrt_h[k];
                    a21 = a21.min(q);
                    a22 = a22.max(q);
                }
                a3 = a3.max(spectral_norm(&hess));
            }
        }
    }

    let mut nu = 0.0f64;
    let us: Vec<InputVec> = t_grid.iter().map(|&t| reference_input(t, &reference.spec)).collect();
    for a in 0..us.len() {
        for b in (a + 1)..us.len() {
            nu = nu.max((us[a] - us[b]).norm());
        }
    }

    let opt = |v: f64| options.derivatives.then_some(v);
    Ok(AssumptionProbe {
        alpha11_hat: if a11.is_finite() { a11 } else { 0.0 },
        alpha12_hat: a12,
        alpha21_hat: opt(if a21.is_finite() { a21 } else { 0.0 }),
        alpha22_hat: opt(a22),
        alpha3_hat: opt(a3),
        l_h_hat: l_h,
        nu_hat: nu,
        n_u_points: u_grid.len(),
        n_t_points: t_grid.len(),
        excluded,
    })
}

fn spectral_norm(m: &Matrix2<f64>) -> f64 {
    m.singular_values().max()
}

/// Central-difference gradient and Hessian of `u ↦ ‖ℓ(u) − x*‖²`.
fn cost_derivatives(
    u: &InputVec,
    xs: &StateVec,
    h: f64,
    cache: &mut SteadyCurveCache,
) -> Result<(InputVec, Matrix2<f64>), AnalysisError> {
    let mut cost = |v: InputVec| {
        cache
            .get(&v)
            .map(|x| (x - xs).norm_squared())
            .map_err(|source| AnalysisError::SteadyState { t: f64::NAN, source })
    };
    let c0 = cost(*u)?;
    let e = [InputVec::new(h, 0.0), InputVec::new(0.0, h)];
    let mut grad = InputVec::zeros();
    let mut hess = Matrix2::zeros();
    for i in 0..2 {
        let cp = cost(u + e[i])?;
        let cm = cost(u - e[i])?;
        grad[i] = (cp - cm) / (2.0 * h);
        hess[(i, i)] = (cp - 2.0 * c0 + cm) / (h * h);
    }
    let cpp = cost(u + e[0] + e[1])?;
    let cpm = cost(u + e[0] - e[1])?;
    let cmp = cost(u - e[0] + e[1])?;
    let cmm = cost(u - e[0] - e[1])?;
    let off = (cpp - cpm - cmp + cmm) / (4.0 * h * h);
    hess[(0, 1)] = off;
    hess[(1, 0)] = off;
    Ok((grad, hess))
}

/// `‖u(ηε) − ū(ηε)‖` after one averaging window, full closed loop against the
/// reduced system, both started from `(x0, u0)` with `steps_per_window` RK4 steps.
pub fn reduced_deviation(
    x0: &StateVec,
    u0: &InputVec,
    reference: &ReferenceTrajectory,
    gains: &ESGains,
    steps_per_window: usize,
) -> Result<f64, crate::Error> {
    let window = dither_period(gains);
    let icfg = IntegratorConfig::rk4(window / steps_per_window.max(50) as f64);
    let (_, u_full) = closed_loop_final(x0, u0, reference, gains, &reference.model, &icfg, window)?;
    let red = integrate_reduced(u0, reference, gains, &reference.model, &icfg, window, 1)?;
    let (_, last) = red.last().expect("reduced series holds its initial point");
    Ok((u_full - last.u_bar).norm())
}

/// One sampled initial input of a contraction probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionSample {
    pub u0: [f64; 2],
    /// `‖u⁰ − u*(0)‖`
    pub d0: f64,
    /// `‖ū(ηε) − u*(ηε)‖`
    pub d1: f64,
    /// `√h(0, ℓ(u⁰))`
    pub cost0: f64,
    /// `√h(ηε, ℓ(ū(ηε)))`
    pub cost1: f64,
}

impl ContractionSample {
    pub fn contracts(&self) -> bool {
        self.d1 < self.d0
    }

    /// Contraction measured by the cost instead of the distance to `u*`.
    pub fn cost_decreases(&self) -> bool {
        self.cost1 < self.cost0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionProbe {
    pub rho_prime: f64,
    pub seed: u64,
    pub samples: Vec<ContractionSample>,
}

impl ContractionProbe {
    pub fn fraction_contracting(&self) -> f64 {
        self.samples.iter().filter(|s| s.contracts()).count() as f64 / self.samples.len().max(1) as f64
    }

    pub fn fraction_cost_decreasing(&self) -> f64 {
        self.samples.iter().filter(|s| s.cost_decreases()).count() as f64 / self.samples.len().max(1) as f64
    }

    pub fn failures(&self) -> impl Iterator<Item = &ContractionSample> {
        self.samples.iter().filter(|s| !s.contracts())
    }
}

/// Sample `n` inputs uniformly in the admissible box with `‖u⁰ − u*(0)‖ ≥ ρ′`
/// and integrate the reduced system over one window from each.
pub fn contraction_probe(
    reference: &ReferenceTrajectory,
    gains: &ESGains,
    rho_prime: f64,
    n: usize,
    seed: u64,
    steps_per_window: usize,
) -> Result<ContractionProbe, crate::Error> {
    let p = reference.model.params;
    let us0 = reference.input(0.0);
    let window = dither_period(gains);
    let icfg = IntegratorConfig::rk4(window / steps_per_window.max(50) as f64);
    let mut cache = SteadyCurveCache::new(reference.model);
    let xs0 = reference.x_star_0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut draws = 0usize;
    while samples.len() < n {
        draws += 1;
        if draws > 1000 * n.max(1) {
            return Err(AnalysisError::Invalid(format!("ρ′ = {rho_prime} excludes almost all of the input box")).into());
        }
        let u0 = InputVec::new(rng.random_range(p.u1_min..p.u1_max), rng.random_range(p.u2_min..p.u2_max));
        let d0 = (u0 - us0).norm();
        if d0 < rho_prime {
            continue;
        }
        let red = integrate_reduced(&u0, reference, gains, &reference.model, &icfg, window, 1)?;
        let (t1, last) = red.last().expect("reduced series holds its initial point");
        let ell0 = cache.get(&u0).map_err(|source| AnalysisError::SteadyState { t: 0.0, source })?;
        let ell1 = cache
            .get(&last.u_bar)
            .map_err(|source| AnalysisError::SteadyState { t: t1, source })?;
        samples.push(ContractionSample {
            u0: u0.into(),
            d0,
            d1: (last.u_bar - reference.input(t1)).norm(),
            cost0: (ell0 - xs0).norm(),
            cost1: (ell1 - last.x_star).norm(),
        });
    }
    Ok(ContractionProbe {
        rho_prime,
        seed,
        samples,
    })
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Completed(TrackingReport),
    DomainExit { t: f64 },
    Failed(String),
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub status: String,
    pub bound_satisfied: Option<bool>,
    pub t_f: Option<f64>,
    pub sup_error_after_tf: Option<f64>,
    pub final_mean_sqrt_cost: Option<f64>,
    /// `ν / (γ² ρ)`: below this ε the one-window contraction argument cannot apply.
    pub epsilon_theory_min: f64,
    /// Final cost is more than twice the best cell with the same `(γ, η)` and larger ε.
    pub degraded: bool,
}

/// Aggregate table for a gain sweep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "gamma",
    "epsilon",
    "eta",
    "status",
    "bound_satisfied",
    "t_f",
    "sup_error_after_tf",
    "final_mean_sqrt_cost",
    "epsilon_theory_min",
    "degraded",
];

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_HEADER)?;
        let num = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                fmt_f64(r.gamma),
                fmt_f64(r.epsilon),
                fmt_f64(r.eta),
                r.status.clone(),
                r.bound_satisfied.map(|b| b.to_string()).unwrap_or_default(),
                num(r.t_f),
                num(r.sup_error_after_tf),
                num(r.final_mean_sqrt_cost),
                fmt_f64(r.epsilon_theory_min),
                r.degraded.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tabulate sweep cells in input order.
///
/// `nu` is the reference diameter (see [`reference_diameter`]).
pub fn sweep_summary(results: &[(ESGains, CellOutcome)], nu: f64) -> SweepTable {
    let mut rows: Vec<SweepRow> = results
        .iter()
        .map(|(g, outcome)| {
            let mut row = SweepRow {
                gamma: g.gamma,
                epsilon: g.epsilon,
                eta: g.eta,
                status: String::new(),
                bound_satisfied: None,
                t_f: None,
                sup_error_after_tf: None,
                final_mean_sqrt_cost: None,
                epsilon_theory_min: f64::NAN,
                degraded: false,
            };
            match outcome {
                CellOutcome::Completed(rep) => {
                    row.status = "ok".into();
                    row.bound_satisfied = Some(rep.bound_satisfied);
                    row.t_f = rep.t_f;
                    row.sup_error_after_tf = Some(rep.sup_error_after_tf);
                    row.final_mean_sqrt_cost = rep.mean_sqrt_cost_per_period.last().copied();
                    row.epsilon_theory_min = nu / (g.gamma * g.gamma * rep.rho);
                }
                CellOutcome::DomainExit { t } => row.status = format!("domain-exit at t={t}"),
                CellOutcome::Failed(msg) => row.status = format!("failed: {msg}"),
            }
            row
        })
        .collect();

    for i in 0..rows.len() {
        let Some(ci) = rows[i].final_mean_sqrt_cost else { continue };
        let degraded = rows.iter().any(|r| {
            r.gamma == rows[i].gamma
                && r.eta == rows[i].eta
                && r.epsilon > rows[i].epsilon
                && r.final_mean_sqrt_cost.is_some_and(|c| ci > 2.0 * c)
        });
        rows[i].degraded = degraded;
    }
    SweepTable { rows }
}

/// Write `t,steady_error,orbit_error`.
pub fn write_error_csv<W: Write>(series: &[ErrorSample], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "steady_error", "orbit_error"])?;
    for s in series {
        w.write_record([fmt_f64(s.t), fmt_f64(s.steady), fmt_f64(s.orbit)])?;
    }
    w.flush()?;
    Ok(())
}
