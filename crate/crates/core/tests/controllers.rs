use std::f64::consts::PI;

use pfc_core::dynamics::{velocity_plant_step, RigidBodyState, VelocityPlantConfig};
use pfc_core::epfc::{
    closing_rate, closing_repulsive, epfc_command, epfc_terms, to_body_frame, velocity_attractive,
    velocity_attractive_potential, velocity_repulsive, velocity_repulsive_potential, yaw_to_face_target, Kinematics,
};
use pfc_core::frames::Vec3;
use pfc_core::pfc::{
    attractive_potential, attractive_velocity, pfc_command, pfc_terms, repulsive_potential, repulsive_velocity,
    Obstacle, PfcGains, GATE_CLOSING, GATE_REP_POSITION, GATE_REP_VELOCITY,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn neg_gradient(f: impl Fn(&Vec3) -> f64, x: &Vec3) -> Vec3 {
    Vec3::from_fn(|i, _| {
        let mut up = *x;
        let mut down = *x;
        up[i] += H;
        down[i] -= H;
        -(f(&up) - f(&down)) / (2.0 * H)
    })
}

fn rel_err(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

#[test]
fn velocity_terms_are_negative_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = PfcGains::default();
    for _ in 0..200 {
        let anchor = Vec3::from_fn(|_, _| rng.gen_range(-5.0..5.0));
        let x = anchor + unit(&mut rng) * rng.gen_range(0.3..g.p_star - 0.1);

        let att = attractive_velocity(&x, &anchor, g.lambda1);
        let num = neg_gradient(|p| attractive_potential(p, &anchor, g.lambda1), &x);
        assert!(rel_err(&att, &num) < 1e-6);

        let rep = repulsive_velocity(&x, &anchor, g.eta1, g.p_star, g.eps_p);
        let num = neg_gradient(|p| repulsive_potential(p, &anchor, g.eta1), &x);
        assert!(rel_err(&rep, &num) < 1e-6, "{rep} vs {num}");

        let vatt = velocity_attractive(&x, &anchor, g.lambda2);
        let num = neg_gradient(|v| velocity_attractive_potential(v, &anchor, g.lambda2), &x);
        assert!(rel_err(&vatt, &num) < 1e-6);

        let vrep = velocity_repulsive(&x, &anchor, g.eta2, g.eps_v);
        let num = neg_gradient(|v| velocity_repulsive_potential(v, &anchor, g.eta2), &x);
        assert!(rel_err(&vrep, &num) < 1e-6, "{vrep} vs {num}");
    }
}

#[test]
fn hand_evaluations() {
    assert_eq!(attractive_velocity(&Vec3::x(), &Vec3::zeros(), 1.0), -Vec3::x());
    assert_eq!(
        repulsive_velocity(&Vec3::x(), &Vec3::zeros(), 1.0, 2.0, 1e-3),
        Vec3::x()
    );
    assert_eq!(
        repulsive_velocity(&(Vec3::x() * 2.01), &Vec3::zeros(), 1.0, 2.0, 1e-3),
        Vec3::zeros()
    );
    assert_eq!(
        velocity_attractive(&Vec3::x(), &Vec3::zeros(), 2.0),
        Vec3::new(-2.0, 0.0, 0.0)
    );
    assert_eq!(
        velocity_repulsive(&Vec3::new(2.0, 0.0, 0.0), &Vec3::x(), 1.0, 1e-3),
        Vec3::x()
    );
    let r = closing_rate(
        &Vec3::x(),
        &Vec3::zeros(),
        &Vec3::new(-2.0, 0.0, 0.0),
        &Vec3::zeros(),
        1e-3,
    );
    assert_eq!(r, -2.0);
    let c = closing_repulsive(
        &Vec3::new(2.0, 0.0, 0.0),
        &Vec3::zeros(),
        &-Vec3::x(),
        &Vec3::zeros(),
        1.0,
        1e-3,
    );
    assert_eq!(c, Vec3::x());
}

#[test]
fn mirrored_obstacles_cancel_laterally() {
    let g = PfcGains::default();
    let p_d = Vec3::new(0.0, 0.0, -1.0);
    let p_t = Vec3::new(4.0, 0.0, -1.0);
    let obstacles = [
        Obstacle::fixed(Vec3::new(1.5, 0.7, -1.0)),
        Obstacle::fixed(Vec3::new(1.5, -0.7, -1.0)),
    ];
    let t = pfc_terms(&p_d, &p_t, &obstacles, &g);
    assert!(t.raw.y.abs() < 1e-12);

    let between = [Obstacle::fixed(Vec3::new(2.0, 0.0, -1.0))];
    let with = pfc_terms(&p_d, &p_t, &between, &g).raw;
    let without = attractive_velocity(&p_d, &p_t, g.lambda1);
    assert!(with.x < without.x);
}

#[test]
fn epfc_without_obstacles_is_pd() {
    let g = PfcGains::default();
    let drone = Kinematics::new(Vec3::new(0.3, -0.2, -1.0), Vec3::new(0.1, 0.05, 0.0));
    let target = Kinematics::new(Vec3::new(0.5, 0.0, -1.0), Vec3::zeros());
    let raw = epfc_terms(&drone, &target, &[], &g).raw;
    let pd = -(drone.p - target.p) * g.lambda1 - drone.v * g.lambda2;
    assert!((raw - pd).amax() < 1e-15);
    let rest = Kinematics::new(target.p, Vec3::zeros());
    assert_eq!(epfc_command(&rest, &target, &[], &g), Vec3::zeros());
}

#[test]
fn receding_drone_ignores_obstacles() {
    let g = PfcGains::default();
    let drone = Kinematics::new(Vec3::new(2.0, 0.0, -1.0), Vec3::new(0.5, 0.1, 0.0));
    let target = Kinematics::new(Vec3::new(5.0, 0.0, -1.0), Vec3::zeros());
    let obstacles = [Obstacle::fixed(Vec3::new(1.0, 0.0, -1.0))];
    let t = epfc_terms(&drone, &target, &obstacles, &g);
    assert_eq!(t.gates, 0);
    assert_eq!(t.command, epfc_command(&drone, &target, &[], &g));
}

#[test]
fn body_frame_and_heading() {
    assert_eq!(to_body_frame(&Vec3::new(1.0, 2.0, 3.0), 0.0), Vec3::new(1.0, 2.0, 3.0));
    let b = to_body_frame(&Vec3::x(), PI / 2.0);
    assert!((b - Vec3::new(0.0, -1.0, 0.0)).amax() < 1e-15);

    let o = Vec3::zeros();
    assert_eq!(yaw_to_face_target(&o, &Vec3::x(), 1.0, 1e-3), (0.0, false));
    assert_eq!(yaw_to_face_target(&o, &Vec3::y(), 1.0, 1e-3), (PI / 2.0, false));
    let (psi, _) = yaw_to_face_target(&o, &Vec3::new(-1.0, -1.0, 0.0), 0.0, 1e-3);
    assert!((psi + 3.0 * PI / 4.0).abs() < 1e-15);
    assert_eq!(
        yaw_to_face_target(&o, &Vec3::new(0.0, 0.0, -2.0), 0.7, 1e-3),
        (0.7, true)
    );
}

/// Random drone/obstacle/target configurations with frequent exact coincidences.
fn fuzz_case(rng: &mut ChaCha8Rng) -> (Kinematics, Kinematics, Vec<Obstacle>) {
    let pick = |rng: &mut ChaCha8Rng, scale: f64| Vec3::from_fn(|_, _| rng.gen_range(-scale..scale));
    let p_d = pick(rng, 6.0);
    let v_d = pick(rng, 2.0);
    let target = Kinematics::new(
        pick(rng, 6.0),
        if rng.gen_bool(0.5) {
            Vec3::zeros()
        } else {
            pick(rng, 1.0)
        },
    );
    let n = rng.gen_range(0..4);
    let obstacles = (0..n)
        .map(|_| {
            let position = match rng.gen_range(0..4) {
                0 => p_d,
                1 => p_d + pick(rng, 1e-4),
                _ => pick(rng, 6.0),
            };
            let velocity = match rng.gen_range(0..4) {
                0 => Vec3::zeros(),
                1 => v_d,
                2 => v_d + pick(rng, 1e-4),
                _ => pick(rng, 2.0),
            };
            Obstacle {
                position,
                velocity,
                radius: 0.25,
            }
        })
        .collect();
    (Kinematics::new(p_d, v_d), target, obstacles)
}

#[test]
fn fuzz_totality_and_gates() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = PfcGains::default();
    for _ in 0..100_000 {
        let (drone, target, obstacles) = fuzz_case(&mut rng);
        let e = epfc_terms(&drone, &target, &obstacles, &g);
        let p = pfc_terms(&drone.p, &target.p, &obstacles, &g);
        for v in [e.command, e.raw, p.command, p.raw] {
            assert!(v.iter().all(|x| x.is_finite()), "{drone:?} {target:?} {obstacles:?}");
        }
        assert!(e.command.norm() <= g.v_cmd_max * (1.0 + 1e-12));

        for o in &obstacles {
            let single = epfc_terms(&drone, &target, std::slice::from_ref(o), &g);
            let r = (drone.p - o.position).norm();
            let r_dot = closing_rate(&drone.p, &o.position, &drone.v, &o.velocity, g.eps_p);
            if r > g.p_star || r_dot >= 0.0 {
                assert_eq!(single.rep_p, Vec3::zeros());
                assert_eq!(single.close, Vec3::zeros());
                assert_eq!(single.gates & (GATE_REP_POSITION | GATE_CLOSING), 0);
            }
            if o.velocity == Vec3::zeros() {
                assert_eq!(single.rep_v, Vec3::zeros());
                assert_eq!(single.gates & GATE_REP_VELOCITY, 0);
            }
            if single.gates == 0 {
                assert_eq!(single.raw, single.att_p + single.att_v);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decomposition_is_exact(
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (drone, target, obstacles) = fuzz_case(&mut rng);
        let g = PfcGains {
            gate_position_repulsion_on_recede: false,
            ..PfcGains::default()
        };
        let e = epfc_terms(&drone, &target, &obstacles, &g);
        let p = pfc_terms(&drone.p, &target.p, &obstacles, &g);
        prop_assert_eq!(e.raw, p.raw + (e.att_v + e.rep_v + e.close));
    }

    #[test]
    fn pfc_without_obstacles_is_attraction(
        px in -5.0f64..5.0, py in -5.0f64..5.0, tx in -5.0f64..5.0, ty in -5.0f64..5.0,
    ) {
        let g = PfcGains { v_cmd_max: 1e9, ..PfcGains::default() };
        let p_d = Vec3::new(px, py, -1.0);
        let p_t = Vec3::new(tx, ty, -1.0);
        prop_assert_eq!(pfc_command(&p_d, &p_t, &[], &g), attractive_velocity(&p_d, &p_t, g.lambda1));
    }

    #[test]
    fn lag_plant_tracking_settles_monotonically(
        x in -3.0f64..3.0, y in -3.0f64..3.0, z in -1.0f64..1.0,
    ) {
        let g = PfcGains::default();
        let cfg = VelocityPlantConfig::default();
        let target = Kinematics::new(Vec3::new(0.0, 0.0, -1.0), Vec3::zeros());
        let mut s = RigidBodyState::at(Vec3::new(x, y, -1.0 + z));
        let mut errors = Vec::new();
        for _ in 0..4000 {
            let cmd = epfc_command(&Kinematics::new(s.p, s.v), &target, &[], &g);
            s = velocity_plant_step(&s, &cmd, 0.0, &cfg, 0.005);
            errors.push(s.p - target.p);
        }
        for axis in 0..3 {
            let e: Vec<f64> = errors.iter().map(|v| v[axis]).filter(|v| v.abs() > 1e-9).collect();
            let flips: Vec<usize> = (1..e.len()).filter(|&k| e[k].signum() != e[k - 1].signum()).collect();
            prop_assert!(flips.len() <= 1, "axis {} flips {}", axis, flips.len());
            let tail = flips.last().copied().unwrap_or(0);
            let mut peak_seen = false;
            for k in tail + 1..e.len() {
                if e[k].abs() < e[k - 1].abs() {
                    peak_seen = true;
                } else {
                    prop_assert!(!peak_seen || e[k].abs() <= e[k - 1].abs() + 1e-12);
                }
            }
        }
    }
}
