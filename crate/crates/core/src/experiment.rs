//! Single runs and sweep cells driven by an [`ExperimentConfig`].
//!
//! A run writes these files into its output directory:
//!
//! | file | contents |
//! |---|---|
//! | `trajectory.csv` | `t,x1,x2,u1,u2,xs1,xs2,y` |
//! | `trajectory.meta.toml` | integrator, gains, step statistics, termination |
//! | `reference.csv` | one period of `x*` and `u*` |
//! | `period_cost.csv` | mean `√y` per reference period |
//! | `errors.csv` | steady-curve and orbit error signals |
//! | `report.toml` | tracking report |
//! | `manifest.toml` | fully resolved config, re-runnable as is |

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{error_series, tracking_report, write_error_csv, CellOutcome, SteadyCurveCache, TrackingReport};
use crate::config::{
    AnalysisSection, ExperimentConfig, InitialSection, ManifestInfo, NamedParams, ParamsChoice, PlantSection,
    ReferenceSection,
};
use crate::controller::ESGains;
use crate::export::{fmt_f64, write_trajectory_csv};
use crate::integrate::{integrate_closed_loop, IntegratorConfig, LoopOptions, Termination, Trajectory};
use crate::plant::{CstrModel, InputVec, ModelVariant, StateVec};
use crate::reference::{EvalMode, PeriodicOrbit, ReferenceTrajectory, Waveform};
use crate::Error;

/// Version string recorded in manifests.
pub const TOOL_VERSION: &str = concat!("esctrack ", env!("CARGO_PKG_VERSION"));

/// Rows of the per-period trajectory sampling used by the bundled configs.
const TRAJECTORY_CSV_REFERENCE_ROWS: usize = 2000;

/// The closed-loop setup behind the two bundled figures: nominal gains and
/// parameters, `x0 = x*(0) + (0.05, 0.01)`, `u0 = 0`, two reference periods.
pub fn fig1_config(waveform: Waveform) -> ExperimentConfig {
    let gains = ESGains::nominal();
    ExperimentConfig {
        t_end: 200.0,
        output_dir: Some(
            match waveform {
                Waveform::Trig => "fig1a",
                Waveform::BangBang => "fig1b",
            }
            .into(),
        ),
        plant: PlantSection {
            params: ParamsChoice::Named(NamedParams::Nominal),
            variant: ModelVariant::Scaled,
        },
        reference: ReferenceSection {
            waveform,
            period: 100.0,
            amplitudes: None,
            evaluation: EvalMode::CoIntegrate,
            orbit_tol: 1e-10,
            orbit_guess: None,
            shooting_dt: 1e-3,
        },
        gains,
        integrator: IntegratorConfig::rk4(2e-5),
        initial: InitialSection {
            x0: None,
            delta_x: Some([0.05, 0.01]),
            u0: Some([0.0, 0.0]),
            delta_u: None,
        },
        options: LoopOptions::default(),
        analysis: AnalysisSection {
            rho: 0.3,
            window: None,
        },
        sweep: None,
        manifest: None,
    }
}

/// Reference curve and initial conditions resolved from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: CstrModel,
    pub reference: ReferenceTrajectory,
    pub orbit: PeriodicOrbit,
    pub x0: StateVec,
    pub u0: InputVec,
}

/// Shoot for the periodic orbit and resolve `x0`, `u0`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, Error> {
    cfg.validate()?;
    let model = cfg.model();
    let spec = cfg.reference_spec();
    let guess = cfg.reference.orbit_guess.map_or(StateVec::zeros(), StateVec::from);
    let (reference, orbit) = ReferenceTrajectory::solve(
        spec,
        model,
        &guess,
        cfg.reference.orbit_tol,
        cfg.reference.evaluation,
        &cfg.reference.shooting(),
    )?;
    let i = &cfg.initial;
    let x0 = match (i.x0, i.delta_x) {
        (Some(x), _) => StateVec::from(x),
        (None, Some(d)) => reference.x_star_0 + StateVec::from(d),
        (None, None) => unreachable!("validated"),
    };
    let u0 = match (i.u0, i.delta_u) {
        (Some(u), _) => InputVec::from(u),
        (None, Some(d)) => reference.input(0.0) + InputVec::from(d),
        (None, None) => unreachable!("validated"),
    };
    Ok(Prepared {
        model,
        reference,
        orbit,
        x0,
        u0,
    })
}

/// The config with every default spelled out, plus provenance.
pub fn resolved_manifest(cfg: &ExperimentConfig, prep: &Prepared) -> ExperimentConfig {
    let mut m = cfg.clone();
    m.plant.params = ParamsChoice::Explicit(cfg.plant.params.resolve());
    m.reference.amplitudes = Some(prep.reference.spec.amplitudes);
    m.analysis.window = Some(cfg.window());
    m.manifest = Some(ManifestInfo {
        tool_version: TOOL_VERSION.to_string(),
        x_star_0: prep.reference.x_star_0.into(),
        x0: prep.x0.into(),
        u0: prep.u0.into(),
        orbit_defect: prep.orbit.defect,
    });
    m
}

/// Result of a single configured run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub trajectory: Trajectory,
    /// Absent when the run left the domain or is shorter than two windows.
    pub report: Option<TrackingReport>,
    pub manifest: ExperimentConfig,
}

/// Run the closed loop with the config's own gains.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, Error> {
    let prepared = prepare(cfg)?;
    run_prepared(cfg, prepared, &cfg.gains, &cfg.integrator)
}

fn run_prepared(
    cfg: &ExperimentConfig,
    prepared: Prepared,
    gains: &ESGains,
    icfg: &IntegratorConfig,
) -> Result<RunOutput, Error> {
    let trajectory = integrate_closed_loop(
        &prepared.x0,
        &prepared.u0,
        &prepared.reference,
        gains,
        &prepared.model,
        icfg,
        cfg.t_end,
        &cfg.options,
    )?;
    let window = cfg.window();
    let report = if trajectory.completed() && cfg.t_end >= 2.0 * window {
        Some(tracking_report(&trajectory, &prepared.reference, cfg.analysis.rho, window)?)
    } else {
        None
    };
    let mut manifest = resolved_manifest(cfg, &prepared);
    manifest.gains = *gains;
    manifest.integrator = icfg.clone();
    manifest.sweep = None;
    Ok(RunOutput {
        prepared,
        trajectory,
        report,
        manifest,
    })
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    std::fs::write(path, toml::to_string(value)?)?;
    Ok(())
}

/// Write every artifact of a run into `dir` (created if missing).
pub fn write_run_artifacts(out: &RunOutput, dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    write_trajectory_csv(&out.trajectory, BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    write_toml(&dir.join("trajectory.meta.toml"), &out.trajectory.meta)?;
    out.prepared.reference.write_csv(
        BufWriter::new(File::create(dir.join("reference.csv"))?),
        TRAJECTORY_CSV_REFERENCE_ROWS,
    )?;

    let mut cache = SteadyCurveCache::new(out.prepared.model);
    let series = error_series(&out.trajectory, &out.prepared.reference.spec, &mut cache)?;
    write_error_csv(&series, BufWriter::new(File::create(dir.join("errors.csv"))?))?;

    let costs = crate::analysis::per_period_cost(&out.trajectory.samples, out.prepared.reference.period());
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("period_cost.csv"))?));
    w.write_record(["period", "mean_sqrt_cost"])?;
    for (k, c) in costs.iter().enumerate() {
        w.write_record([k.to_string(), fmt_f64(*c)])?;
    }
    w.flush()?;

    if let Some(rep) = &out.report {
        write_toml(&dir.join("report.toml"), rep)?;
    }
    std::fs::write(dir.join("manifest.toml"), out.manifest.to_toml_string()?)?;
    Ok(())
}

/// One sweep cell: its outcome for the table and the run for artifacts.
pub fn run_cell(cfg: &ExperimentConfig, prepared: &Prepared, gains: &ESGains) -> (CellOutcome, Option<RunOutput>) {
    let icfg = cfg.cell_integrator(gains);
    match run_prepared(cfg, prepared.clone(), gains, &icfg) {
        Ok(out) => {
            let outcome = match (out.trajectory.meta.termination, &out.report) {
                (Termination::DomainExit { t, .. }, _) => CellOutcome::DomainExit { t },
                (Termination::Completed, Some(r)) => CellOutcome::Completed(r.clone()),
                (Termination::Completed, None) => CellOutcome::Failed("run shorter than two analysis windows".into()),
            };
            (outcome, Some(out))
        }
        Err(e) => (CellOutcome::Failed(e.to_string()), None),
    }
}

/// Directory name of a sweep cell, e.g. `cell-003_g150_e0.001_n1`.
pub fn cell_dir_name(index: usize, gains: &ESGains) -> String {
    format!("cell-{index:03}_g{}_e{}_n{}", gains.gamma, gains.epsilon, gains.eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config() -> ExperimentConfig {
        let mut c = fig1_config(Waveform::Trig);
        c.t_end = 0.5;
        c.gains = ESGains::new(1.0, 0.05, 1.0, 2).unwrap();
        c.integrator = IntegratorConfig::rk4(1e-3);
        c.options.samples_per_period = 1000;
        c
    }

    #[test]
    fn fig1_configs_validate() {
        fig1_config(Waveform::Trig).validate().unwrap();
        fig1_config(Waveform::BangBang).validate().unwrap();
    }

    #[test]
    fn prepare_resolves_offsets() {
        let c = short_config();
        let p = prepare(&c).unwrap();
        assert_eq!(p.x0, p.reference.x_star_0 + StateVec::new(0.05, 0.01));
        assert_eq!(p.u0, InputVec::zeros());
        assert!(p.orbit.defect <= 1e-10);
    }

    #[test]
    fn short_run_has_no_report_and_writes_artifacts() {
        let c = short_config();
        let out = run(&c).unwrap();
        assert!(out.report.is_none());
        assert!(out.trajectory.completed());
        let dir = tempfile::tempdir().unwrap();
        write_run_artifacts(&out, dir.path()).unwrap();
        for f in ["trajectory.csv", "trajectory.meta.toml", "reference.csv", "errors.csv", "period_cost.csv", "manifest.toml"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let m = ExperimentConfig::from_path(&dir.path().join("manifest.toml")).unwrap();
        assert_eq!(m.plant.params.resolve(), c.plant.params.resolve());
        assert_eq!(m.manifest.unwrap().x0, <[f64; 2]>::from(out.prepared.x0));
    }

    #[test]
    fn cell_names() {
        assert_eq!(cell_dir_name(3, &ESGains::nominal()), "cell-003_g150_e0.001_n1");
    }
}
