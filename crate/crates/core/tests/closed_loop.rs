use esctrack::analysis::{contraction_probe, reduced_deviation, tracking_report};
use esctrack::export::{read_trajectory_csv, write_trajectory_csv};
use esctrack::reference::ShootingSettings;
use esctrack::{
    integrate_closed_loop, integrate_plant_constant_u, steady_state_map, ControllerMode, CstrModel, ESGains,
    EvalMode, InputVec, IntegratorConfig, LoopOptions, ReferenceSpec, ReferenceTrajectory, StateVec, Waveform,
};

fn trig_reference() -> ReferenceTrajectory {
    let model = CstrModel::nominal();
    let spec = ReferenceSpec::nominal(Waveform::Trig, &model.params);
    let (r, _) = ReferenceTrajectory::solve(
        spec,
        model,
        &StateVec::zeros(),
        1e-10,
        EvalMode::CoIntegrate,
        &ShootingSettings::default(),
    )
    .unwrap();
    r
}

#[test]
fn plant_at_rest_stays_at_rest() {
    let model = CstrModel::nominal();
    let cfg = IntegratorConfig::rk4(1e-2);
    let s = integrate_plant_constant_u(&StateVec::zeros(), &InputVec::zeros(), &model, &cfg, 50.0, 10.0).unwrap();
    for x in &s.values {
        assert_eq!(*x, StateVec::zeros());
    }
}

#[test]
fn constant_input_settles_on_the_steady_state_map() {
    let model = CstrModel::nominal();
    let cfg = IntegratorConfig::rkf45(1e-10, 1e-10, 1e-8, 0.5);
    for u in [InputVec::new(0.5, 0.02), InputVec::new(-1.0, -0.05)] {
        let s = integrate_plant_constant_u(&StateVec::zeros(), &u, &model, &cfg, 100.0, 100.0).unwrap();
        let (_, x) = s.last().unwrap();
        let ell = steady_state_map(&u, &model, 1e-12, 50).unwrap();
        assert!((x - ell).norm() < 1e-7, "u = {u:?}: {x:?} vs {ell:?}");
    }
}

#[test]
fn pinned_controller_follows_the_orbit() {
    let r = trig_reference();
    let opts = LoopOptions {
        mode: ControllerMode::Pinned,
        ..LoopOptions::default()
    };
    let traj = integrate_closed_loop(
        &r.x_star_0,
        &r.input(0.0),
        &r,
        &ESGains::new(1.0, 0.05, 1.0, 2).unwrap(),
        &r.model,
        &IntegratorConfig::rk4(1e-3),
        100.0,
        &opts,
    )
    .unwrap();
    assert!(traj.completed());
    let worst = traj.samples.iter().map(|s| s.y().sqrt()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "max |x - x*| = {worst}");
    for s in &traj.samples {
        assert_eq!(s.u, r.input(s.t));
    }
    let rep = tracking_report(&traj, &r, 1e-6, 20.0).unwrap();
    assert_eq!(rep.orbit.t_f, Some(0.0));
    assert!(rep.orbit.bound_satisfied);
}

#[test]
fn closed_loop_csv_round_trips_exactly() {
    let r = trig_reference();
    let gains = ESGains::new(1.0, 0.05, 1.0, 2).unwrap();
    let opts = LoopOptions {
        samples_per_period: 500,
        ..LoopOptions::default()
    };
    let traj = integrate_closed_loop(
        &(r.x_star_0 + StateVec::new(0.05, 0.01)),
        &InputVec::zeros(),
        &r,
        &gains,
        &r.model,
        &IntegratorConfig::rk4(1e-3),
        5.0,
        &opts,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&traj, &mut buf).unwrap();
    let back = read_trajectory_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), traj.samples.len());
    for (a, b) in back.iter().zip(&traj.samples) {
        let expected = [b.t, b.x[0], b.x[1], b.u[0], b.u[1], b.x_star[0], b.x_star[1], b.y()];
        assert_eq!(*a, expected);
    }
}

#[test]
fn repeated_runs_are_bitwise_equal() {
    let r = trig_reference();
    let gains = ESGains::new(5.0, 0.01, 1.0, 2).unwrap();
    let run = || {
        integrate_closed_loop(
            &(r.x_star_0 + StateVec::new(0.05, 0.01)),
            &InputVec::zeros(),
            &r,
            &gains,
            &r.model,
            &IntegratorConfig::rk4(2e-4),
            3.0,
            &LoopOptions::default(),
        )
        .unwrap()
        .samples
    };
    assert_eq!(run(), run());
}

#[test]
fn reduced_deviation_shrinks_with_eta() {
    let model = CstrModel::nominal();
    let mut spec = ReferenceSpec::nominal(Waveform::Trig, &model.params);
    spec.amplitudes = [0.0, 0.0];
    let r = ReferenceTrajectory::new(spec, model, StateVec::zeros(), EvalMode::CoIntegrate, IntegratorConfig::rk4(1e-2))
        .unwrap();
    let u0 = InputVec::new(0.1, 0.01);
    let x0 = steady_state_map(&u0, &model, 1e-12, 50).unwrap();
    let d: Vec<f64> = [1.0, 4.0]
        .into_iter()
        .map(|eta| reduced_deviation(&x0, &u0, &r, &ESGains::new(0.1, 10.0, eta, 2).unwrap(), 500).unwrap())
        .collect();
    assert!(d[0] > 0.0 && d[1] < d[0], "{d:?}");
}

#[test]
fn contraction_probe_is_seeded() {
    let r = trig_reference();
    let gains = ESGains::new(10.0, 0.005, 1.0, 2).unwrap();
    let a = contraction_probe(&r, &gains, 0.1, 8, 7, 200).unwrap();
    let b = contraction_probe(&r, &gains, 0.1, 8, 7, 200).unwrap();
    assert_eq!(a.samples.len(), 8);
    assert_eq!(a.samples, b.samples);
    for s in &a.samples {
        assert!(s.d0 >= 0.1);
        assert!(r.model.params.input_in_box(&InputVec::from(s.u0)));
    }
    let c = contraction_probe(&r, &gains, 0.1, 8, 8, 200).unwrap();
    assert_ne!(a.samples[0].u0, c.samples[0].u0);
}
