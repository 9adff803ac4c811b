//! Monte-Carlo checks of the moving-horizon estimator and of parameter
//! identification.

mod common;

use canalnav_core::dynamics::{measure, NoiseSpec};
use canalnav_core::sim::{ident_experiment, IdentExperimentConfig};
use canalnav_core::{ControlInput, Disturbance, HydroParams, MheConfig, MovingHorizonEstimator, Pose, VesselModel, VesselState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> VesselModel {
    VesselModel::new(HydroParams::identified(), Default::default()).unwrap()
}

/// Truth and estimate for every sample of a constant-input run.
fn track(q0: VesselState, u: ControlInput, samples: usize, seed: u64, noise: NoiseSpec) -> Vec<(VesselState, VesselState)> {
    let m = model();
    let mut mhe = MovingHorizonEstimator::new(MheConfig::for_model(m)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = q0;
    (0..samples)
        .map(|k| {
            if k > 0 {
                q = m.advance(&q, &u, &Disturbance::none(), 0.1, 4).unwrap();
            }
            mhe.push(measure(&q, &u, &noise, &mut rng), u, k as f64 * 0.1).unwrap();
            (q, mhe.estimate().unwrap().estimate)
        })
        .collect()
}

#[test]
fn stationary_smoothing_beats_raw_measurements_over_many_windows() {
    // 25 independent runs, scored once each window is full
    let errors: Vec<f64> = (0..25)
        .flat_map(|seed| {
            track(VesselState::at_rest(Pose::new(3.0, -4.0, 1.0)), ControlInput::zero(), 60, seed, NoiseSpec::default())
                .into_iter()
                .skip(20)
                .map(|(q, e)| q.pose.distance_to(&e.pose))
                .collect::<Vec<_>>()
        })
        .collect();
    let rms = common::rms(errors);
    assert!(rms < 0.02, "position RMS {rms}");
}

#[test]
fn unmeasured_surge_is_recovered_within_five_percent() {
    for (u_true, seed) in [(0.4, 1), (0.8, 2), (1.2, 3)] {
        let f = HydroParams::identified().xu * u_true / 2.0;
        let run = track(
            VesselState::from_vector(&nalgebra::Vector6::new(0.0, 0.0, -0.4, u_true, 0.0, 0.0)),
            ControlInput::new(f, f, 0.0, 0.0),
            200,
            seed,
            NoiseSpec::default(),
        );
        for (q, e) in &run[40..] {
            assert!((e.vel.u - q.vel.u).abs() <= 0.05 * q.vel.u, "u = {u_true}: {} vs {}", e.vel.u, q.vel.u);
        }
    }
}

#[test]
fn estimate_converges_within_one_window_from_a_wrong_prior() {
    // bootstrap assumes rest while the vessel is already cruising
    let u_true = 0.8;
    let f = HydroParams::identified().xu * u_true / 2.0;
    let run = track(
        VesselState::from_vector(&nalgebra::Vector6::new(0.0, 0.0, 0.0, u_true, 0.0, 0.0)),
        ControlInput::new(f, f, 0.0, 0.0),
        40,
        4,
        NoiseSpec::default(),
    );
    let (q0, e0) = run[1];
    assert!((e0.vel.u - q0.vel.u).abs() > 0.1, "the prior should start off");
    let (q, e) = run[20];
    assert!((e.vel.u - q.vel.u).abs() < 0.05 * u_true, "after 2 s: {} vs {}", e.vel.u, q.vel.u);
}

#[test]
fn noiseless_tracking_is_exact() {
    let run = track(
        VesselState::at_rest(Pose::new(1.0, 1.0, 0.0)),
        ControlInput::new(10.0, 6.0, 4.0, -4.0),
        50,
        0,
        NoiseSpec::none(),
    );
    let (q, e) = run[49];
    assert!((q.as_vector() - e.as_vector()).amax() < 1e-6);
}

#[test]
fn identification_is_within_ten_percent_for_every_seed() {
    for seed in 1..=5 {
        let cfg = IdentExperimentConfig {
            sigma_v: 0.02,
            seed,
            ..Default::default()
        };
        let (rep, data) = ident_experiment(&cfg).unwrap();
        assert_eq!((rep.trials, data.len()), (5, 5));
        assert!(data.iter().all(|d| (d.len() as f64 * d.sample_period - 150.0).abs() <= 0.2));
        assert!(rep.max_relative_error <= 0.10, "seed {seed}: {:?}", rep.relative_error);
    }
}
