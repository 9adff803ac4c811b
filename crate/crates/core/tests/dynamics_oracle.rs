//! Vessel model and RK4 against an independently written reference ODE.

mod common;

use canalnav_core::angle::angle_diff;
use canalnav_core::{ControlInput, Disturbance, HydroParams, Pose, VesselModel, VesselState};
use nalgebra::{Vector4, Vector6};
use proptest::prelude::*;

fn model() -> VesselModel {
    VesselModel::new(HydroParams::identified(), Default::default()).unwrap()
}

fn state_strategy() -> impl Strategy<Value = Vector6<f64>> {
    (
        -10.0..10.0f64,
        -10.0..10.0f64,
        -3.0..3.0f64,
        -1.5..1.5f64,
        -0.5..0.5f64,
        -0.5..0.5f64,
    )
        .prop_map(|(x, y, p, u, v, r)| Vector6::new(x, y, p, u, v, r))
}

fn forces() -> impl Strategy<Value = [f64; 4]> {
    proptest::array::uniform4(-50.0..50.0f64)
}

fn state_error(a: &Vector6<f64>, b: &Vector6<f64>) -> f64 {
    let mut e = a - b;
    e[2] = angle_diff(a[2], b[2]);
    e.amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn derivative_matches_matrix_form(q in state_strategy(), f in forces()) {
        let m = model();
        let ours = m.derivative_vec(&q, &Vector4::from(f), &Disturbance::none());
        let oracle = common::vessel_rhs(&HydroParams::identified(), &q, &f);
        prop_assert!((ours - oracle).amax() <= 1e-12 * (1.0 + oracle.amax()));
    }

    #[test]
    fn rk4_local_error_is_fifth_order(q in state_strategy(), f in forces()) {
        let m = model();
        let p = HydroParams::identified();
        let e = |h: f64| {
            let ours = m.rk4_vec(&q, &Vector4::from(f), &Disturbance::none(), h);
            state_error(&ours, &common::reference_trajectory(&p, &q, &f, h, 64))
        };
        let (e1, e2) = (e(0.2), e(0.1));
        // local error ~ h⁵: halving the step shrinks it about 32×
        prop_assume!(e1 > 1e-11);
        prop_assert!(e2 < e1 / 16.0, "{e1:e} -> {e2:e}");
    }

    #[test]
    fn trajectories_are_equivariant_under_rigid_motion(
        q in state_strategy(), f in forces(), tx in -20.0..20.0f64, ty in -20.0..20.0f64, th in -3.0..3.0f64,
    ) {
        // body-frame dynamics: moving the start pose moves the whole trajectory
        let m = model();
        let t = Pose::new(tx, ty, th);
        let s0 = VesselState::from_vector(&q);
        let mut moved = s0;
        moved.pose = t.compose(&s0.pose);
        let u = ControlInput::from_slice(&f);
        let a = m.advance(&s0, &u, &Disturbance::none(), 2.0 / 5.0, 8).unwrap();
        let b = m.advance(&moved, &u, &Disturbance::none(), 2.0 / 5.0, 8).unwrap();
        let expect = t.compose(&a.pose);
        prop_assert!(expect.distance_to(&b.pose) < 1e-9);
        prop_assert!(angle_diff(expect.psi, b.pose.psi).abs() < 1e-9);
        prop_assert!((a.vel.u - b.vel.u).abs() < 1e-12 && (a.vel.v - b.vel.v).abs() < 1e-12 && (a.vel.r - b.vel.r).abs() < 1e-12);
    }
}

#[test]
fn halving_the_step_cuts_global_error_sixteenfold() {
    let m = model();
    let p = HydroParams::identified();
    let q0 = Vector6::new(1.0, -1.0, 0.5, 0.6, -0.1, 0.1);
    let f = [25.0, 5.0, -10.0, 12.0];
    let t_end = 6.4;
    let truth = common::reference_trajectory(&p, &q0, &f, t_end, 64_000);
    let err = |h: f64| {
        let mut q = q0;
        for _ in 0..(t_end / h).round() as usize {
            q = m.rk4_vec(&q, &Vector4::from(f), &Disturbance::none(), h);
        }
        state_error(&q, &truth)
    };
    for h in [0.4, 0.2, 0.1] {
        let ratio = err(h) / err(h / 2.0);
        assert!((ratio - 16.0).abs() < 3.0, "h = {h}: ratio {ratio}");
    }
}

#[test]
fn constant_forcing_reaches_analytic_steady_state() {
    let m = model();
    let p = HydroParams::identified();
    let f = [12.0, 12.0, 0.0, 0.0];
    let mut s = VesselState::at_rest(Pose::identity());
    for _ in 0..1200 {
        s = m.advance(&s, &ControlInput::from_slice(&f), &Disturbance::none(), 0.1, 2).unwrap();
    }
    // surge drag balances thrust: Xu·u = f1 + f2
    assert!((s.vel.u - 24.0 / p.xu).abs() < 1e-6, "{}", s.vel.u);
    assert!(s.vel.v.abs() < 1e-12 && s.vel.r.abs() < 1e-12);
}
