use wheelleg::estimator::gravity_compensate;
use wheelleg::gait::{GaitKind, GaitSchedule, NUM_LEGS};
use wheelleg::kinematics::{contact_position, contact_velocity, BaseAttitude, Vec3};
use wheelleg::sim::{generate, Plateau, Profile, Scenario, SimError, SlipEvent, Terrain};

fn trot_and_drive(duration: f64) -> Scenario {
    let mut s = Scenario { duration, gait: GaitSchedule::preset(GaitKind::Trot), ..Scenario::default() };
    s.commands.step_x = Profile::new(vec![(0.0, 0.3), (1.0, 0.1)], 0.4).unwrap();
    s.commands.step_y = Profile::new(vec![(0.0, 0.0), (0.5, 0.1)], 0.4).unwrap();
    s.commands.drive = Profile::new(vec![(0.0, 0.0), (0.3, 0.8)], 0.5).unwrap();
    s.commands.yaw_rate = Profile::new(vec![(0.0, 0.0), (0.8, 0.4)], 0.5).unwrap();
    s
}

#[test]
fn forward_kinematics_reproduces_truth_feet() {
    let s = trot_and_drive(2.0);
    let out = generate(&s).unwrap();
    let mut worst: f64 = 0.0;
    for tr in &out.truth {
        for leg in 0..NUM_LEGS {
            let g = &s.robot.legs[leg];
            let p = tr.position + tr.rotation * (g.hip_offset + contact_position(g, &tr.joints[leg]));
            worst = worst.max((p - tr.contacts[leg]).amax());
        }
    }
    assert!(worst < 1e-9, "FK mismatch {worst}");
}

#[test]
fn stance_wheels_roll_without_slip() {
    let s = trot_and_drive(2.0);
    let out = generate(&s).unwrap();
    let mut checked = 0;
    for tr in &out.truth {
        for leg in 0..NUM_LEGS {
            if !tr.in_contact[leg] {
                continue;
            }
            checked += 1;
            // The contact point moves only with the driving share of the body motion.
            assert!((tr.contact_velocities[leg] - tr.drive_velocity).amax() < 1e-9, "t={} leg={leg}", tr.t);
            // Joint and wheel rates reproduce that motion.
            let att = BaseAttitude::from_rotation(tr.rotation, Vec3::new(0.0, 0.0, tr.yaw_rate));
            let ck = contact_velocity(&s.robot.legs[leg], &tr.joints[leg], &att);
            assert!((tr.velocity + ck.pdot_cp_k - tr.drive_velocity).amax() < 1e-9, "t={} leg={leg}", tr.t);
            // Wheel spin carries the drive; the sideways tube roll from ab/ad
            // motion is not part of the oracle's rolling model.
            let g = &s.robot.legs[leg];
            let tube_roll = tr.rotation * Vec3::new(0.0, g.b_end * tr.joints[leg].qdot[0], 0.0);
            assert!((ck.pdot_cp_w - tube_roll - tr.drive_velocity).amax() < 1e-9, "t={} leg={leg}", tr.t);
        }
    }
    assert!(checked > 4000);
}

#[test]
fn truth_rates_match_finite_differences() {
    let s = trot_and_drive(1.5);
    let out = generate(&s).unwrap();
    let dt = s.dt;
    let mut worst_v: f64 = 0.0;
    let mut worst_a: f64 = 0.0;
    let mut worst_foot: f64 = 0.0;
    for w in out.truth.windows(3) {
        let v_fd = (w[2].position - w[0].position) / (2.0 * dt);
        let a_fd = (w[2].velocity - w[0].velocity) / (2.0 * dt);
        worst_v = worst_v.max((v_fd - w[1].velocity).amax());
        worst_a = worst_a.max((a_fd - w[1].acceleration).amax());
        for leg in 0..NUM_LEGS {
            let f_fd = (w[2].contacts[leg] - w[0].contacts[leg]) / (2.0 * dt);
            worst_foot = worst_foot.max((f_fd - w[1].contact_velocities[leg]).amax());
        }
    }
    assert!(worst_v < 1e-5, "velocity {worst_v}");
    assert!(worst_a < 1e-3, "acceleration {worst_a}");
    assert!(worst_foot < 1e-3, "foot velocity {worst_foot}");
}

#[test]
fn imu_integrates_to_the_body_trajectory() {
    let s = trot_and_drive(2.0);
    let out = generate(&s).unwrap();
    let dt = s.dt;
    let mut p = out.initial.position;
    let mut v = out.initial.velocity;
    let mut worst: f64 = 0.0;
    for w in out.sensors.windows(2) {
        let u0 = gravity_compensate(&w[0].accel, &w[0].rotation);
        let u1 = gravity_compensate(&w[1].accel, &w[1].rotation);
        let v_next = v + (u0 + u1) * (0.5 * dt);
        p += (v + v_next) * (0.5 * dt);
        v = v_next;
    }
    let last = out.truth.last().unwrap();
    worst = worst.max((p - last.position).amax()).max((v - last.velocity).amax());
    assert!(worst < 1e-5, "dead-reckoning drift {worst}");
}

#[test]
fn stance_feet_rest_on_the_terrain() {
    let mut s = Scenario { duration: 3.0, gait: GaitSchedule::preset(GaitKind::Trot), ..Scenario::default() };
    s.commands.step_x = Profile::new(vec![(0.0, 0.5), (1.0, 0.0)], 0.3).unwrap();
    s.terrain = Terrain::new(vec![Plateau { x_start: 0.42, x_end: 3.0, height: 0.08 }]).unwrap();
    let out = generate(&s).unwrap();
    for tr in &out.truth {
        for leg in 0..NUM_LEGS {
            if tr.in_contact[leg] {
                let z = tr.contacts[leg].z;
                assert!(z.abs() < 1e-12 || (z - 0.08).abs() < 1e-12, "t={} leg={leg} z={z}", tr.t);
            } else {
                assert!(tr.contacts[leg].z >= -1e-12);
            }
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let mut s = trot_and_drive(0.5);
    s.noise.sigma_accel = 0.05;
    s.noise.sigma_joint_vel = 0.01;
    s.noise.wheel_encoder_ppr = Some(84);
    let a = generate(&s).unwrap();
    let b = generate(&s).unwrap();
    assert_eq!(a.sensors, b.sensors);
    assert_eq!(a.truth, b.truth);
    s.seed += 1;
    let c = generate(&s).unwrap();
    assert_ne!(a.sensors, c.sensors);
    assert_eq!(a.truth, c.truth);
}

#[test]
fn accelerometer_noise_has_the_configured_spread() {
    let mut s = Scenario { duration: 20.0, ..Scenario::default() };
    let clean = generate(&s).unwrap();
    s.noise.sigma_accel = 0.05;
    let noisy = generate(&s).unwrap();
    let resid: Vec<f64> =
        clean.sensors.iter().zip(&noisy.sensors).flat_map(|(c, n)| (n.accel - c.accel).iter().copied().collect::<Vec<_>>()).collect();
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-3, "mean {mean}");
    assert!((sd / 0.05 - 1.0).abs() < 0.02, "sd {sd}");
}

#[test]
fn slip_moves_only_the_slipping_foot() {
    let mut s = Scenario { duration: 1.0, ..Scenario::default() };
    s.noise.slip_events = vec![SlipEvent { t: 0.4, duration: 0.2, leg: 2, velocity: 0.1 }];
    let slip = generate(&s).unwrap();
    let still = generate(&Scenario { duration: 1.0, ..Scenario::default() }).unwrap();
    let k = slip.truth.len() - 1;
    let moved: Vec<f64> = (0..NUM_LEGS).map(|l| (slip.truth[k].contacts[l] - still.truth[k].contacts[l]).norm()).collect();
    assert!(moved[2] > 0.01, "{moved:?}");
    for l in [0, 1, 3] {
        assert!(moved[l] < 1e-12, "{moved:?}");
    }
}

#[test]
fn unreachable_body_height_reports_the_leg_and_time() {
    let s = Scenario { body_height: 0.8, duration: 0.1, ..Scenario::default() };
    match generate(&s) {
        Err(SimError::IkFailure { t, leg, .. }) => {
            assert_eq!(t, 0.0);
            assert_eq!(leg, 0);
        }
        other => panic!("expected an IK failure, got {other:?}"),
    }
}

#[test]
fn pure_drive_moves_the_body_by_the_drive_integral() {
    let mut s = Scenario { duration: 2.0, ..Scenario::default() };
    s.commands.drive = Profile::new(vec![(0.0, 0.0), (0.5, 1.0)], 0.5).unwrap();
    let out = generate(&s).unwrap();
    for tr in out.truth.iter().step_by(97) {
        let expected = s.commands.drive.integral(tr.t);
        assert!((tr.position.x - expected).abs() < 1e-9);
        assert!((tr.drive_position - Vec3::new(expected, 0.0, 0.0)).amax() < 1e-9);
        assert_eq!(tr.velocity, tr.drive_velocity);
    }
}
