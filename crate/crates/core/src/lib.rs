//! Model-free extremum-seeking tracking of periodic reference curves.
//!
//! The crate simulates a dynamic extremum-seeking controller that steers a
//! plant `ẋ = f(x, u)` along a time-varying reference curve `x*(t)` while
//! measuring only the scalar cost `y = ‖x − x*(t)‖²`. The plant instance is a
//! two-state nonisothermal CSTR (see [`plant`]).
//!
//! Layout:
//!
//! - [`plant`]: the CSTR vector field, its Jacobian, spectra and steady-state map
//! - [`reference`]: reference programs `u*(t)` and the periodic orbit they induce
//! - [`controller`]: the extremum-seeking law and its reduced counterpart
//! - [`integrate`]: RK4/RKF45 engines and the coupled closed-loop simulation
//! - [`analysis`]: tracking reports, assumption probes and sweep tables
//! - [`config`], [`experiment`]: config files, single runs and sweeps
//! - [`verify`]: self-check suites with measured values and tolerances
//!
//! The guide in `book/` walks through the model and the experiments; its code
//! listings are compiled as doctests of this crate.

// `!(a > b)` is used on purpose so that NaN is rejected; oracle literals keep
// every digit they were computed with.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::too_many_arguments)]

pub mod analysis;
pub mod config;
pub mod controller;
pub mod experiment;
pub mod export;
pub mod integrate;
pub mod plant;
pub mod reference;
pub mod verify;

use thiserror::Error;

pub use controller::{dither_period, es_rhs, reduced_rhs, ESGains};
pub use integrate::{
    integrate_closed_loop, integrate_plant_constant_u, integrate_reduced, ControllerMode,
    IntegratorConfig, LoopOptions, Trajectory,
};
pub use plant::{
    cstr_jacobian, cstr_rhs, spectral_info, steady_state_map, steady_state_stability, CstrModel,
    CstrParams, InputVec, ModelVariant, SpectralInfo, StateVec,
};
pub use reference::{
    find_periodic_orbit, reference_input, reference_state, EvalMode, ReferenceSpec,
    ReferenceTrajectory, Waveform,
};

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Plant(#[from] plant::PlantError),
    #[error(transparent)]
    Reference(#[from] reference::ReferenceError),
    #[error(transparent)]
    Controller(#[from] controller::ControllerError),
    #[error(transparent)]
    Sim(#[from] integrate::SimError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl From<integrate::OdeError<plant::PlantError>> for Error {
    fn from(e: integrate::OdeError<plant::PlantError>) -> Self {
        Error::Reference(e.into())
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    pub mod quickstart {}
    #[doc = include_str!("../../../book/src/plant.md")]
    pub mod plant {}
    #[doc = include_str!("../../../book/src/reference.md")]
    pub mod reference {}
    #[doc = include_str!("../../../book/src/controller.md")]
    pub mod controller {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub mod analysis {}
}
