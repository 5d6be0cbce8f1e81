use pfc_core::diagnostics::{lyapunov_value, monitor, Verdict};
use pfc_core::frames::Vec3;
use pfc_core::metrics::{collisions, evaluate};
use pfc_core::pfc::PfcGains;
use pfc_core::scenario::{builtin, run, ControllerKind, PlantKind, Scenario, TargetSpec, BUILTIN_NAMES};
use pfc_core::Error;

fn hover_at(target: Vec3, start: Vec3, plant: PlantKind, controller: ControllerKind) -> Scenario {
    let mut s = builtin("static-target").unwrap();
    s.name = "hold".into();
    s.controller = controller;
    s.plant.kind = plant;
    s.standoff = 0.0;
    s.flags.face_target = false;
    s.target = TargetSpec::StaticPoint { position: target };
    s.start.position = start;
    s
}

#[test]
fn lyapunov_passes_on_lag_plant() {
    let sc = builtin("static-target").unwrap();
    assert!(sc.obstacles.is_empty() && sc.random_obstacles.is_none());
    let log = run(&sc).unwrap();
    let report = monitor(&log, &sc.gains).unwrap();
    assert_eq!(report.verdict, Verdict::Pass, "{report:?}");
    assert_eq!(report.excluded_steps, 0);
    assert_eq!(report.checked_steps, log.records.len() - 1);
}

#[test]
fn kinematic_pfc_decays_exponentially() {
    let target = Vec3::new(0.0, 0.0, -1.0);
    let mut sc = hover_at(
        target,
        Vec3::new(0.5, 0.3, -1.2),
        PlantKind::Kinematic,
        ControllerKind::Pfc,
    );
    sc.sim.dt = 0.001;
    sc.sim.t_end = 5.0;
    let log = run(&sc).unwrap();
    let report = monitor(&log, &sc.gains).unwrap();
    assert_eq!(report.verdict, Verdict::Pass);
    assert!(log.records.iter().all(|r| !r.saturated));

    let l0 = report.samples[0].l;
    let lambda1 = sc.gains.lambda1;
    for s in &report.samples {
        let expected = l0 * (-2.0 * lambda1 * s.t).exp();
        assert!(
            ((s.l - expected) / expected).abs() < 0.01,
            "t = {}: {} vs {}",
            s.t,
            s.l,
            expected
        );
    }
    assert!(report.samples.windows(2).all(|w| w[1].l < w[0].l));
}

#[test]
fn drone_parked_on_target_has_zero_energy() {
    let target = Vec3::new(1.0, 2.0, -1.0);
    for plant in [PlantKind::Kinematic, PlantKind::Lag, PlantKind::Full] {
        let mut sc = hover_at(target, target, plant, ControllerKind::Epfc);
        sc.sim.t_end = 2.0;
        let log = run(&sc).unwrap();
        let report = monitor(&log, &sc.gains).unwrap();
        assert!(report.samples.iter().all(|s| s.l == 0.0), "{plant:?}");
    }
}

#[test]
fn lyapunov_value_vanishes_only_at_equilibrium() {
    let g = PfcGains::default();
    assert_eq!(
        lyapunov_value(&Vec3::zeros(), &Vec3::zeros(), g.lambda1, g.lambda2),
        0.0
    );
    assert!(lyapunov_value(&Vec3::new(1e-5, 0.0, 0.0), &Vec3::zeros(), g.lambda1, g.lambda2) > 0.0);
    assert!(lyapunov_value(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 1e-5), g.lambda1, g.lambda2) > 0.0);
}

#[test]
fn repulsive_steps_are_excluded() {
    let sc = builtin("static-target-obstacle").unwrap();
    let log = run(&sc).unwrap();
    let report = monitor(&log, &sc.gains).unwrap();
    assert!(report.excluded_steps > 0);
    assert!(!report.excluded_intervals.is_empty());
    for span in &report.excluded_intervals {
        assert!(span[0] < span[1]);
    }
    let gated: usize = log.records.iter().filter(|r| r.gates() != 0).count();
    assert!(report.excluded_steps >= gated.saturating_sub(1));
}

#[test]
fn empty_log_is_an_error() {
    let sc = builtin("static-target").unwrap();
    let mut log = run(&sc).unwrap();
    log.records.clear();
    assert!(matches!(monitor(&log, &sc.gains), Err(Error::EmptyLog)));
}

#[test]
fn sim_course_visits_every_waypoint() {
    let sc = builtin("sim-course").unwrap();
    let log = run(&sc).unwrap();
    let TargetSpec::Waypoints { waypoints, advance } = &sc.target else {
        unreachable!()
    };
    assert_eq!(log.events.len(), waypoints.len());
    assert!(log.completed_at.is_some());
    for (i, w) in waypoints.iter().enumerate() {
        let closest = log
            .records
            .iter()
            .filter(|r| r.waypoint == i)
            .map(|r| (r.state.p - w.position).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(closest <= advance.acquisition_radius, "waypoint {i}: {closest}");
    }
    assert_eq!(collisions(&log, &log.obstacles), 0);
}

#[test]
fn multi_obstacle_fields_are_crossed_cleanly() {
    for seed in 0..8 {
        let mut sc = builtin("multi-obstacle").unwrap();
        sc.sim.seed = seed;
        let log = run(&sc).unwrap();
        assert!(log.obstacles.len() >= 6);
        assert_eq!(log.events.len(), 4, "seed {seed}");
        let m = evaluate(&sc, &log).unwrap();
        assert_eq!(m.collisions, 0, "seed {seed}");
    }
}

#[test]
fn seeds_change_the_field() {
    let mut a = builtin("multi-obstacle").unwrap();
    let b = a.clone();
    a.sim.seed = 1;
    assert_ne!(a.resolve_obstacles().unwrap(), b.resolve_obstacles().unwrap());
    assert_eq!(b.resolve_obstacles().unwrap(), b.resolve_obstacles().unwrap());
}

#[test]
fn runs_are_deterministic() {
    for name in ["sim-course", "dynamic-square"] {
        let mut sc = builtin(name).unwrap();
        sc.plant.kind = PlantKind::Full;
        sc.sim.t_end = 20.0;
        assert_eq!(run(&sc).unwrap(), run(&sc).unwrap());
    }
}

#[test]
fn every_builtin_runs_on_every_plant() {
    for name in BUILTIN_NAMES {
        for plant in [PlantKind::Kinematic, PlantKind::Lag, PlantKind::Full] {
            for controller in [ControllerKind::Pfc, ControllerKind::Epfc] {
                let mut sc = builtin(name).unwrap().with_controller(controller);
                sc.plant.kind = plant;
                sc.sim.t_end = 5.0;
                let log = run(&sc).unwrap();
                assert_eq!(log.records.len(), 1001, "{name} {plant:?}");
                let m = evaluate(&sc, &log).unwrap();
                assert!(m.non_finite_field().is_none());
            }
        }
    }
}

#[test]
fn time_grid_is_exact() {
    let mut sc = builtin("static-target").unwrap();
    sc.sim.t_end = 1.0;
    let log = run(&sc).unwrap();
    for (k, r) in log.records.iter().enumerate() {
        assert_eq!(r.t, k as f64 * sc.sim.dt);
    }
    sc.sim.t_end = 0.0;
    assert_eq!(run(&sc).unwrap().records.len(), 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = builtin("sim-course").unwrap();
    let mut s = base.clone();
    s.sim.dt = 0.0;
    assert!(matches!(run(&s), Err(Error::Validation { .. })));
    let mut s = base.clone();
    s.gains.lambda1 = -1.0;
    assert!(matches!(run(&s), Err(Error::Validation { .. })));
    let mut s = base.clone();
    s.params.m = f64::NAN;
    assert!(matches!(run(&s), Err(Error::Validation { .. })));
    let mut s = base;
    s.target = TargetSpec::Waypoints {
        waypoints: Vec::new(),
        advance: Default::default(),
    };
    assert!(matches!(run(&s), Err(Error::Validation { .. })));
}

#[test]
fn blow_up_aborts_with_numeric_error() {
    let mut sc = builtin("static-target").unwrap();
    sc.plant.kind = PlantKind::Full;
    sc.params.g = 1e308;
    let err = run(&sc).unwrap_err();
    assert!(
        matches!(err, Error::NumericAbort { .. } | Error::GimbalLock { .. }),
        "{err:?}"
    );
}
