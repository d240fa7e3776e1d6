//! The extremum-seeking law and its reduced (steady-state) counterpart.
//!
//! Channel `j = 1..n_u` obeys
//!
//! ```text
//! u̇_j = (2γ / (η√ε)) · √(π j y) · sin(ln y + 2π j t / (ηε))
//! ```
//!
//! where `y ≥ 0` is the only plant information the controller sees. The
//! right-hand side extends continuously to `y = 0` with value zero; below
//! `h_floor` it is set to zero to keep `ln y` out of trouble.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{InputVec, PlantError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("cost must be nonnegative, got {0}")]
    NegativeCost(f64),
    #[error("invalid controller gains: {0}")]
    InvalidGains(String),
    #[error("cost evaluation failed at u = ({u1}, {u2}): {source}")]
    Cost { u1: f64, u2: f64, source: PlantError },
}

fn default_h_floor() -> f64 {
    1e-12
}

/// Controller parameters `(γ, ε, η)`, channel count and the log guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ESGains {
    pub gamma: f64,
    pub epsilon: f64,
    pub eta: f64,
    #[serde(default = "default_n_u")]
    pub n_u: usize,
    #[serde(default = "default_h_floor")]
    pub h_floor: f64,
}

fn default_n_u() -> usize {
    2
}

impl ESGains {
    pub fn new(gamma: f64, epsilon: f64, eta: f64, n_u: usize) -> Result<Self, ControllerError> {
        let g = Self {
            gamma,
            epsilon,
            eta,
            n_u,
            h_floor: default_h_floor(),
        };
        g.validate()?;
        Ok(g)
    }

    /// γ = 150, ε = 0.001, η = 1 on two channels.
    pub fn nominal() -> Self {
        Self {
            gamma: 150.0,
            epsilon: 0.001,
            eta: 1.0,
            n_u: 2,
            h_floor: default_h_floor(),
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ControllerError::InvalidGains(format!("{name} must be positive, got {v}")))
            }
        };
        positive("gamma", self.gamma)?;
        positive("epsilon", self.epsilon)?;
        positive("eta", self.eta)?;
        if self.n_u == 0 {
            return Err(ControllerError::InvalidGains("n_u must be at least 1".into()));
        }
        if !(self.h_floor >= 0.0 && self.h_floor.is_finite()) {
            return Err(ControllerError::InvalidGains(format!(
                "h_floor must be nonnegative, got {}",
                self.h_floor
            )));
        }
        Ok(())
    }

    /// `2γ / (η√ε)`
    pub fn amplitude(&self) -> f64 {
        2.0 * self.gamma / (self.eta * self.epsilon.sqrt())
    }

    /// Base dither angular frequency `2π / (ηε)`.
    pub fn base_frequency(&self) -> f64 {
        2.0 * PI / (self.eta * self.epsilon)
    }

    /// `εγ²`, the per-window contraction coefficient of the averaged dynamics.
    pub fn contraction_coefficient(&self) -> f64 {
        self.epsilon * self.gamma * self.gamma
    }

    /// Upper bound on `‖u̇‖` for a given cost value.
    pub fn rate_bound(&self, y: f64) -> f64 {
        let n = self.n_u as f64;
        self.amplitude() * (PI * y * n * (n + 1.0) / 2.0).sqrt()
    }
}

/// The averaging window `ηε`.
pub fn dither_period(gains: &ESGains) -> f64 {
    gains.eta * gains.epsilon
}

/// Controller rate for a cost sample, written into `out` (length `n_u`).
pub fn es_rhs_into(t: f64, y: f64, gains: &ESGains, out: &mut [f64]) -> Result<(), ControllerError> {
    if y < 0.0 || y.is_nan() {
        return Err(ControllerError::NegativeCost(y));
    }
    if y <= gains.h_floor || y == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let amp = gains.amplitude();
    let ln_y = y.ln();
    let omega_t = 2.0 * PI * t / (gains.eta * gains.epsilon);
    for (k, v) in out.iter_mut().enumerate() {
        let j = (k + 1) as f64;
        *v = amp * (PI * j * y).sqrt() * (ln_y + j * omega_t).sin();
    }
    Ok(())
}

/// Controller rate `u̇` for a cost sample `y = h(t, x)`.
pub fn es_rhs(t: f64, y: f64, gains: &ESGains) -> Result<Vec<f64>, ControllerError> {
    let mut out = vec![0.0; gains.n_u];
    es_rhs_into(t, y, gains, &mut out)?;
    Ok(out)
}

/// Rate of the reduced system, where the cost is evaluated on the steady-state map.
///
/// `cost(t, ū)` must return `h(t, ℓ(ū))`. The amplitude uses the cost at `t`,
/// the phase uses the cost frozen at the window start `t_m`.
pub fn reduced_rhs<F>(
    t: f64,
    u_bar: &InputVec,
    t_m: f64,
    mut cost: F,
    gains: &ESGains,
) -> Result<InputVec, ControllerError>
where
    F: FnMut(f64, &InputVec) -> Result<f64, PlantError>,
{
    let wrap = |source| ControllerError::Cost {
        u1: u_bar[0],
        u2: u_bar[1],
        source,
    };
    let y_t = cost(t, u_bar).map_err(wrap)?;
    let y_m = if t_m == t { y_t } else { cost(t_m, u_bar).map_err(wrap)? };
    reduced_rate(t, y_t, y_m, gains)
}

/// Reduced rate from the two cost values (amplitude cost, phase cost).
pub(crate) fn reduced_rate(t: f64, y_t: f64, y_m: f64, gains: &ESGains) -> Result<InputVec, ControllerError> {
    for y in [y_t, y_m] {
        if y < 0.0 || y.is_nan() {
            return Err(ControllerError::NegativeCost(y));
        }
    }
    if y_t <= gains.h_floor || y_m <= gains.h_floor || y_t == 0.0 || y_m == 0.0 {
        return Ok(InputVec::zeros());
    }
    let amp = gains.amplitude();
    let ln_y = y_m.ln();
    let omega_t = 2.0 * PI * t / (gains.eta * gains.epsilon);
    let mut r = InputVec::zeros();
    for k in 0..2 {
        let j = (k + 1) as f64;
        r[k] = amp * (PI * j * y_t).sqrt() * (ln_y + j * omega_t).sin();
    }
    Ok(r)
}
