//! Receding-horizon tracking controller.
//!
//! The optimal control problem is condensed by single shooting: the decision
//! vector holds the `N` thruster commands, predicted states come from RK4
//! rollouts of the vessel model, and the only hard constraints left are the
//! thruster force boxes. State bounds enter as quadratic penalties.

use nalgebra::{DMatrix, DVector, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::dynamics::{
    ControlInput, Disturbance, Matrix6, Matrix6x4, VesselModel, VesselState, MAX_LINEAR_SPEED,
    MAX_YAW_RATE,
};
use crate::solver::{solve_bounded_nls, Bounds, LeastSquares, NlsOptions, SolverError, Termination};

const NQ: usize = 6;
const NU: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reference window has {states} states and {controls} controls, expected {expected_states} and {expected_controls}")]
    ReferenceSize {
        states: usize,
        controls: usize,
        expected_states: usize,
        expected_controls: usize,
    },
    #[error("state estimate is not finite")]
    NonFiniteState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub wq: [f64; 6],
    pub wu: [f64; 4],
    pub wn: [f64; 6],
    pub u_min: [f64; 4],
    pub u_max: [f64; 4],
    pub model: VesselModel,
    /// Soft state bounds; infinite entries are not penalised.
    pub state_min: [f64; 6],
    pub state_max: [f64; 6],
    pub state_penalty: f64,
    /// SQP iterations per control cycle.
    pub max_sqp_iterations: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self::for_model(VesselModel::default())
    }
}

impl NmpcConfig {
    /// Experiment weights: 4 s horizon at 10 Hz and ±50 N per thruster.
    pub fn for_model(model: VesselModel) -> Self {
        let inf = f64::INFINITY;
        Self {
            horizon: 40,
            dt: 0.1,
            wq: [200.0, 200.0, 100.0, 10.0, 10.0, 10.0],
            wu: [1.0; 4],
            wn: [1000.0, 1000.0, 500.0, 50.0, 50.0, 150.0],
            u_min: [-50.0; 4],
            u_max: [50.0; 4],
            model,
            state_min: [-inf, -inf, -inf, -MAX_LINEAR_SPEED, -MAX_LINEAR_SPEED, -MAX_YAW_RATE],
            state_max: [inf, inf, inf, MAX_LINEAR_SPEED, MAX_LINEAR_SPEED, MAX_YAW_RATE],
            state_penalty: 1e4,
            max_sqp_iterations: 3,
        }
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        let bad = |m: &str| Err(NmpcError::InvalidConfig(m.to_string()));
        if self.horizon < 2 {
            return bad("horizon must be at least 2 steps");
        }
        if !(self.dt > 0.0 && self.dt <= crate::dynamics::MAX_STEP) {
            return bad("dt must lie in (0, 0.5]");
        }
        let all = self.wq.iter().chain(&self.wu).chain(&self.wn);
        if all.clone().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be finite and non-negative");
        }
        if self.wq[..3].iter().chain(&self.wn[..3]).any(|w| *w <= 0.0) {
            return bad("position and heading weights must be positive");
        }
        if (0..NU).any(|i| !(self.u_min[i] < self.u_max[i])) {
            return bad("u_min must be below u_max");
        }
        if (0..NQ).any(|i| !(self.state_min[i] < self.state_max[i])) {
            return bad("state_min must be below state_max");
        }
        if self.max_sqp_iterations == 0 {
            return bad("max_sqp_iterations must be positive");
        }
        self.model
            .params
            .validate()
            .and(self.model.geometry.validate())
            .map_err(|e| NmpcError::InvalidConfig(e.to_string()))
    }

    fn penalised_components(&self) -> Vec<usize> {
        (0..NQ)
            .filter(|&i| self.state_min[i].is_finite() || self.state_max[i].is_finite())
            .collect()
    }

    pub fn clamp_control(&self, u: &ControlInput) -> ControlInput {
        let a = u.as_array();
        ControlInput::from_slice(&[
            a[0].clamp(self.u_min[0], self.u_max[0]),
            a[1].clamp(self.u_min[1], self.u_max[1]),
            a[2].clamp(self.u_min[2], self.u_max[2]),
            a[3].clamp(self.u_min[3], self.u_max[3]),
        ])
    }
}

/// State and control references over one horizon: `N + 1` states, `N` controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceWindow {
    pub states: Vec<VesselState>,
    pub controls: Vec<ControlInput>,
}

impl ReferenceWindow {
    /// Holds a single state for the whole horizon with zero control references.
    pub fn stationary(state: VesselState, horizon: usize) -> Self {
        Self {
            states: vec![state; horizon + 1],
            controls: vec![ControlInput::zero(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    pub first: ControlInput,
    pub controls: Vec<ControlInput>,
    /// Predicted states `q_0 … q_N`, `q_0` being the estimate.
    pub predicted: Vec<VesselState>,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
    /// True when the solver failed and the warm start was applied instead.
    pub degraded: bool,
    /// Number of commanded forces sitting on a bound.
    pub active_bounds: usize,
    /// True when a soft state bound is violated along the prediction.
    pub penalty_active: bool,
}

/// Drops the first control and repeats the last one.
pub fn shift_warm_start(prev: &[ControlInput]) -> Vec<ControlInput> {
    match prev.len() {
        0 => Vec::new(),
        n => {
            let mut out = prev[1..].to_vec();
            out.push(prev[n - 1]);
            out
        }
    }
}

/// The condensed tracking problem for one control cycle.
pub struct TrackingProblem<'a> {
    cfg: &'a NmpcConfig,
    q0: Vector6<f64>,
    refs: &'a ReferenceWindow,
    sqrt_wq: Vector6<f64>,
    sqrt_wn: Vector6<f64>,
    sqrt_wu: Vector4<f64>,
    penalised: Vec<usize>,
}

impl<'a> TrackingProblem<'a> {
    pub fn new(
        cfg: &'a NmpcConfig,
        q_hat: &VesselState,
        refs: &'a ReferenceWindow,
    ) -> Result<Self, NmpcError> {
        cfg.validate()?;
        let n = cfg.horizon;
        if refs.states.len() != n + 1 || refs.controls.len() != n {
            return Err(NmpcError::ReferenceSize {
                states: refs.states.len(),
                controls: refs.controls.len(),
                expected_states: n + 1,
                expected_controls: n,
            });
        }
        let q0 = q_hat.as_vector();
        if q0.iter().any(|v| !v.is_finite()) {
            return Err(NmpcError::NonFiniteState);
        }
        Ok(Self {
            cfg,
            q0,
            refs,
            sqrt_wq: Vector6::from_iterator(cfg.wq.iter().map(|w| w.sqrt())),
            sqrt_wn: Vector6::from_iterator(cfg.wn.iter().map(|w| w.sqrt())),
            sqrt_wu: Vector4::from_iterator(cfg.wu.iter().map(|w| w.sqrt())),
            penalised: cfg.penalised_components(),
        })
    }

    pub fn num_residuals(&self) -> usize {
        let n = self.cfg.horizon;
        NQ * n + NU * n + self.penalised.len() * n
    }

    pub fn bounds(&self) -> Bounds {
        let n = self.cfg.horizon;
        Bounds::new(
            DVector::from_iterator(NU * n, (0..n).flat_map(|_| self.cfg.u_min)),
            DVector::from_iterator(NU * n, (0..n).flat_map(|_| self.cfg.u_max)),
        )
    }

    /// Objective value, including the constant stage term at `k = 0`.
    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        let r = self.rollout(x, false).0;
        0.5 * r.norm_squared() + self.initial_stage_cost()
    }

    fn initial_stage_cost(&self) -> f64 {
        let e = state_error(&self.q0, &self.refs.states[0]);
        0.5 * (0..NQ).map(|i| self.cfg.wq[i] * e[i] * e[i]).sum::<f64>()
    }

    pub fn predict(&self, x: &DVector<f64>) -> Vec<VesselState> {
        let model = &self.cfg.model;
        let none = Disturbance::none();
        let mut q = self.q0;
        let mut out = vec![VesselState::from_vector(&q)];
        for k in 0..self.cfg.horizon {
            let u = Vector4::from_column_slice(&x.as_slice()[NU * k..NU * k + NU]);
            q = model.rk4_vec(&q, &u, &none, self.cfg.dt);
            out.push(VesselState::from_vector(&q));
        }
        out
    }

    fn rollout(&self, x: &DVector<f64>, with_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let cfg = self.cfg;
        let n = cfg.horizon;
        let none = Disturbance::none();
        let m = self.num_residuals();
        let mut r = DVector::zeros(m);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(m, NU * n));

        let mut states = Vec::with_capacity(n + 1);
        let mut a_mats: Vec<Matrix6> = Vec::with_capacity(n);
        let mut b_mats: Vec<Matrix6x4> = Vec::with_capacity(n);
        let mut q = self.q0;
        states.push(q);
        for k in 0..n {
            let u = Vector4::from_column_slice(&x.as_slice()[NU * k..NU * k + NU]);
            if with_jacobian {
                let (next, a, b) = cfg.model.rk4_with_jacobians(&q, &u, &none, cfg.dt);
                a_mats.push(a);
                b_mats.push(b);
                q = next;
            } else {
                q = cfg.model.rk4_vec(&q, &u, &none, cfg.dt);
            }
            states.push(q);
        }

        // residual rows: states q_1..q_N, then controls, then soft bounds
        let control_row0 = NQ * n;
        let penalty_row0 = control_row0 + NU * n;
        let np = self.penalised.len();
        for k in 1..=n {
            let w = if k == n { &self.sqrt_wn } else { &self.sqrt_wq };
            let e = state_error(&states[k], &self.refs.states[k]);
            for i in 0..NQ {
                r[NQ * (k - 1) + i] = w[i] * e[i];
            }
            for (c, &i) in self.penalised.iter().enumerate() {
                let v = states[k][i];
                let viol = (v - cfg.state_max[i]).max(0.0) + (v - cfg.state_min[i]).min(0.0);
                r[penalty_row0 + np * (k - 1) + c] = cfg.state_penalty.sqrt() * viol;
            }
        }
        for k in 0..n {
            let uref = self.refs.controls[k].as_array();
            for i in 0..NU {
                r[control_row0 + NU * k + i] = self.sqrt_wu[i] * (x[NU * k + i] - uref[i]);
            }
        }

        if let Some(jac) = jac.as_mut() {
            for k in 0..n {
                for i in 0..NU {
                    jac[(control_row0 + NU * k + i, NU * k + i)] = self.sqrt_wu[i];
                }
            }
            // sensitivity of q_k with respect to u_j, propagated forward for each j
            let sqrt_pen = cfg.state_penalty.sqrt();
            for j in 0..n {
                let mut s: Matrix6x4 = b_mats[j];
                for k in (j + 1)..=n {
                    if k > j + 1 {
                        s = a_mats[k - 1] * s;
                    }
                    let w = if k == n { &self.sqrt_wn } else { &self.sqrt_wq };
                    for i in 0..NQ {
                        for c in 0..NU {
                            jac[(NQ * (k - 1) + i, NU * j + c)] = w[i] * s[(i, c)];
                        }
                    }
                    for (p, &i) in self.penalised.iter().enumerate() {
                        let v = states[k][i];
                        if v > cfg.state_max[i] || v < cfg.state_min[i] {
                            for c in 0..NU {
                                jac[(penalty_row0 + np * (k - 1) + p, NU * j + c)] = sqrt_pen * s[(i, c)];
                            }
                        }
                    }
                }
            }
        }
        (r, jac)
    }

    fn penalty_active(&self, x: &DVector<f64>) -> bool {
        let np = self.penalised.len();
        if np == 0 {
            return false;
        }
        let r = self.rollout(x, false).0;
        let start = (NQ + NU) * self.cfg.horizon;
        r.rows(start, np * self.cfg.horizon).iter().any(|v| *v != 0.0)
    }
}

impl LeastSquares for TrackingProblem<'_> {
    fn num_params(&self) -> usize {
        NU * self.cfg.horizon
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        let r = self.rollout(x, false).0;
        if r.iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(SolverError::Evaluation("non-finite prediction".into()))
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, SolverError> {
        Ok(self.linearize(x)?.1)
    }

    fn linearize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), SolverError> {
        let (r, j) = self.rollout(x, true);
        if r.iter().all(|v| v.is_finite()) {
            Ok((r, j.expect("jacobian requested")))
        } else {
            Err(SolverError::Evaluation("non-finite prediction".into()))
        }
    }
}

fn state_error(q: &Vector6<f64>, reference: &VesselState) -> Vector6<f64> {
    let r = reference.as_vector();
    let mut e = q - r;
    e[2] = wrap_angle(e[2]);
    e
}

fn flatten(controls: &[ControlInput]) -> DVector<f64> {
    DVector::from_iterator(NU * controls.len(), controls.iter().flat_map(|c| c.as_array()))
}

fn unflatten(x: &DVector<f64>) -> Vec<ControlInput> {
    x.as_slice().chunks(NU).map(ControlInput::from_slice).collect()
}

/// Solves one tracking problem from `q_hat`.
///
/// `warm` seeds the control sequence (typically [`shift_warm_start`] of the
/// previous solution). If the solver fails the projected warm start is
/// returned with `degraded` set; this function never panics on solver
/// trouble.
pub fn solve_tracking(
    q_hat: &VesselState,
    refs: &ReferenceWindow,
    warm: Option<&[ControlInput]>,
    cfg: &NmpcConfig,
) -> Result<NmpcSolution, NmpcError> {
    let problem = TrackingProblem::new(cfg, q_hat, refs)?;
    let n = cfg.horizon;
    let guess: Vec<ControlInput> = match warm {
        Some(w) if w.len() == n => w.iter().map(|u| cfg.clamp_control(u)).collect(),
        _ => vec![cfg.clamp_control(&ControlInput::zero()); n],
    };
    let x0 = flatten(&guess);
    let opts = NlsOptions {
        max_iterations: cfg.max_sqp_iterations,
        ..NlsOptions::default()
    };
    let bounds = problem.bounds();
    let (x, iterations, termination, degraded) =
        match solve_bounded_nls(&problem, &x0, &bounds, &opts) {
            Ok(rep) => (rep.x, rep.iterations, Some(rep.termination), false),
            Err(e) => {
                log::warn!("nmpc solve failed ({e}); applying warm start");
                (x0, 0, None, true)
            }
        };
    let controls = unflatten(&x);
    let active_bounds = x
        .iter()
        .zip(bounds.lower.iter().zip(bounds.upper.iter()))
        .filter(|(v, (lo, hi))| **v <= **lo || **v >= **hi)
        .count();
    let penalty_active = problem.penalty_active(&x);
    if penalty_active {
        log::debug!("nmpc soft state bound active");
    }
    Ok(NmpcSolution {
        first: controls[0],
        predicted: problem.predict(&x),
        cost: problem.cost(&x),
        controls,
        iterations,
        termination,
        degraded,
        active_bounds,
        penalty_active,
    })
}

/// Stateful controller that keeps the previous solution as warm start.
#[derive(Debug, Clone)]
pub struct NmpcController {
    cfg: NmpcConfig,
    previous: Option<Vec<ControlInput>>,
}

impl NmpcController {
    pub fn new(cfg: NmpcConfig) -> Result<Self, NmpcError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            previous: None,
        })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn solve(
        &mut self,
        q_hat: &VesselState,
        refs: &ReferenceWindow,
    ) -> Result<NmpcSolution, NmpcError> {
        let warm = self.previous.as_deref().map(shift_warm_start);
        let sol = solve_tracking(q_hat, refs, warm.as_deref(), &self.cfg)?;
        self.previous = Some(sol.controls.clone());
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{BodyVelocity, Pose};
    use crate::solver::jacobian_fd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> NmpcConfig {
        NmpcConfig::default()
    }

    fn converged_cfg() -> NmpcConfig {
        NmpcConfig {
            max_sqp_iterations: 50,
            ..cfg()
        }
    }

    #[test]
    fn default_weights_and_bounds() {
        let c = cfg();
        assert_eq!(c.wq, [200.0, 200.0, 100.0, 10.0, 10.0, 10.0]);
        assert_eq!(c.wn, [1000.0, 1000.0, 500.0, 50.0, 50.0, 150.0]);
        assert_eq!(c.wu, [1.0; 4]);
        assert_eq!((c.u_min, c.u_max), ([-50.0; 4], [50.0; 4]));
        assert!((c.horizon as f64 * c.dt - 4.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.horizon = 1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.u_min[2] = 60.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.wq[0] = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn shift_semantics() {
        let a = ControlInput::new(1.0, 0.0, 0.0, 0.0);
        let b = ControlInput::new(2.0, 0.0, 0.0, 0.0);
        let c = ControlInput::new(3.0, 0.0, 0.0, 0.0);
        assert_eq!(shift_warm_start(&[a, b, c]), vec![b, c, c]);
        assert_eq!(shift_warm_start(&[a; 5]), vec![a; 5]);
        assert!(shift_warm_start(&[]).is_empty());
    }

    #[test]
    fn rest_on_stationary_reference_needs_no_thrust() {
        let q = VesselState::at_rest(Pose::new(2.0, 3.0, 0.4));
        let refs = ReferenceWindow::stationary(q, 40);
        let sol = solve_tracking(&q, &refs, None, &cfg()).unwrap();
        assert!(sol.first.max_abs() < 1e-6, "{:?}", sol.first);
        assert!(!sol.degraded);
    }

    #[test]
    fn forward_step_commands_forward_thrust() {
        let q = VesselState::default();
        let refs = ReferenceWindow::stationary(VesselState::at_rest(Pose::new(1.0, 0.0, 0.0)), 40);
        let sol = solve_tracking(&q, &refs, None, &converged_cfg()).unwrap();
        assert!(sol.first.f1 + sol.first.f2 > 0.0);
        assert!(sol.controls.iter().all(|u| u.max_abs() <= 50.0));
    }

    #[test]
    fn lateral_step_uses_sway_thrusters() {
        let q = VesselState::default();
        let refs = ReferenceWindow::stationary(VesselState::at_rest(Pose::new(0.0, 1.0, 0.0)), 40);
        let sol = solve_tracking(&q, &refs, None, &converged_cfg()).unwrap();
        let fu = sol.first.f1 + sol.first.f2;
        let fv = sol.first.f3 + sol.first.f4;
        assert!(fv.abs() > 5.0 * fu.abs(), "surge {fu}, sway {fv}");
        assert!(fv > 0.0);
    }

    #[test]
    fn reference_size_is_checked() {
        let q = VesselState::default();
        let refs = ReferenceWindow::stationary(q, 10);
        assert!(matches!(
            solve_tracking(&q, &refs, None, &cfg()),
            Err(NmpcError::ReferenceSize { .. })
        ));
    }

    #[test]
    fn predicted_states_satisfy_dynamics() {
        let q = VesselState::new(Pose::new(0.0, 0.0, 0.2), BodyVelocity::new(0.4, 0.0, 0.0));
        let refs = ReferenceWindow::stationary(VesselState::at_rest(Pose::new(2.0, 1.0, 0.0)), 40);
        let c = cfg();
        let sol = solve_tracking(&q, &refs, None, &c).unwrap();
        for k in 0..40 {
            let next = c
                .model
                .step_rk4(&sol.predicted[k], &sol.controls[k], &Disturbance::none(), c.dt)
                .unwrap();
            assert!((next.as_vector() - sol.predicted[k + 1].as_vector()).amax() < 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = cfg();
        let q = VesselState::new(Pose::new(0.3, -0.2, 3.0), BodyVelocity::new(0.5, 0.1, -0.2));
        let refs = ReferenceWindow::stationary(VesselState::at_rest(Pose::new(3.0, 1.0, -3.0)), 40);
        let p = TrackingProblem::new(&c, &q, &refs).unwrap();
        let x = DVector::from_fn(160, |_, _| rng.random_range(-40.0..40.0));
        let (_, ja) = p.linearize(&x).unwrap();
        let jf = jacobian_fd(|x| p.residuals(x).unwrap(), &x, 1e-4);
        let scale = ja.amax();
        assert!((&ja - &jf).amax() <= 1e-6 * scale);
    }

    #[test]
    fn warm_start_saves_iterations() {
        let c = converged_cfg();
        let model = c.model;
        let mut q = VesselState::default();
        let path = |s: f64| VesselState::new(Pose::new(s, 0.2 * s.sin(), 0.0), BodyVelocity::new(0.6, 0.0, 0.0));
        let window = |t0: f64| ReferenceWindow {
            states: (0..=40).map(|k| path(0.6 * (t0 + 0.1 * k as f64))).collect(),
            controls: vec![ControlInput::zero(); 40],
        };
        let first = solve_tracking(&q, &window(0.0), None, &c).unwrap();
        q = model.step_rk4(&q, &first.first, &Disturbance::none(), 0.1).unwrap();
        let refs = window(0.1);
        let cold = solve_tracking(&q, &refs, None, &c).unwrap();
        let warm = solve_tracking(&q, &refs, Some(&shift_warm_start(&first.controls)), &c).unwrap();
        assert!(warm.iterations < cold.iterations, "warm {} cold {}", warm.iterations, cold.iterations);
    }

    #[test]
    fn controller_keeps_warm_start_between_cycles() {
        let mut ctl = NmpcController::new(cfg()).unwrap();
        let q = VesselState::default();
        let refs = ReferenceWindow::stationary(VesselState::at_rest(Pose::new(0.5, 0.0, 0.0)), 40);
        let a = ctl.solve(&q, &refs).unwrap();
        assert!(ctl.previous.as_ref() == Some(&a.controls));
        let b = ctl.solve(&q, &refs).unwrap();
        assert!(!b.degraded && b.controls.len() == 40);
    }
}
