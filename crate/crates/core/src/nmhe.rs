//! Moving-horizon state estimation.
//!
//! Over a sliding window of `M` measurements the estimator fits the
//! window-initial state so that the model-propagated trajectory explains the
//! measurements, anchored by an arrival cost on the prior `q̄`. The model is a
//! hard constraint (no process-noise decision variables), so the decision
//! vector is the 6-dimensional initial state.
//!
//! Buffer convention: the control stored with measurement `k` is the one that
//! drove the vessel from `t_{k-1}` to `t_k`; it is also what the thrust
//! channels of `z_k` measure.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SMatrix, Vector4, Vector6};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::dynamics::{
    output, ControlInput, Disturbance, Matrix6, Measurement, Pose, VesselModel, VesselState,
    MAX_LINEAR_SPEED, MAX_YAW_RATE,
};
use crate::solver::{solve_bounded_nls, Bounds, LeastSquares, NlsOptions, SolverError, Termination};

const NQ: usize = 6;
const NZ: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmheError {
    #[error("timestamp {t} is not newer than the last buffered sample at {last}")]
    NonMonotonic { t: f64, last: f64 },
    #[error("timestamp spacing {spacing} deviates from dt = {dt} by more than 10%")]
    IrregularSpacing { spacing: f64, dt: f64 },
    #[error("measurement buffer is empty")]
    Empty,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MheConfig {
    pub window: usize,
    pub dt: f64,
    /// Diagonal of the arrival-cost weight `P_L`.
    pub arrival_weight: [f64; 6],
    /// Diagonal of the measurement weight `R_T`.
    pub measurement_weight: [f64; 8],
    pub state_min: [f64; 6],
    pub state_max: [f64; 6],
    pub state_penalty: f64,
    pub model: VesselModel,
    pub solver: NlsOptions,
}

impl Default for MheConfig {
    fn default() -> Self {
        Self::for_model(VesselModel::default())
    }
}

impl MheConfig {
    /// Experiment weights: inverse variances of the sensor and prior errors.
    pub fn for_model(model: VesselModel) -> Self {
        let inv = |v: f64| 1.0 / v;
        let inf = f64::INFINITY;
        Self {
            window: 20,
            dt: 0.1,
            arrival_weight: [1.0, 1.0, 1.0, 0.1, 0.1, 1.0].map(inv),
            measurement_weight: [0.0005, 0.0005, 0.0005, 0.0001, 1.0, 1.0, 1.0, 1.0].map(inv),
            state_min: [-inf, -inf, -inf, -MAX_LINEAR_SPEED, -MAX_LINEAR_SPEED, -MAX_YAW_RATE],
            state_max: [inf, inf, inf, MAX_LINEAR_SPEED, MAX_LINEAR_SPEED, MAX_YAW_RATE],
            state_penalty: 1e6,
            model,
            solver: NlsOptions {
                max_iterations: 20,
                kkt_tol: 1e-9,
                step_tol: 1e-10,
                ..NlsOptions::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), NmheError> {
        let bad = |m: &str| Err(NmheError::InvalidConfig(m.to_string()));
        if self.window < 2 {
            return bad("window must hold at least 2 samples");
        }
        if !(self.dt > 0.0 && self.dt <= crate::dynamics::MAX_STEP) {
            return bad("dt must lie in (0, 0.5]");
        }
        if self
            .arrival_weight
            .iter()
            .chain(&self.measurement_weight)
            .any(|w| !(*w > 0.0 && w.is_finite()))
        {
            return bad("weights must be positive and finite");
        }
        if (0..NQ).any(|i| !(self.state_min[i] < self.state_max[i])) {
            return bad("state_min must be below state_max");
        }
        self.model
            .params
            .validate()
            .and(self.model.geometry.validate())
            .map_err(|e| NmheError::InvalidConfig(e.to_string()))
    }

    fn decision_bounds(&self) -> Bounds {
        Bounds::new(
            DVector::from_column_slice(&self.state_min),
            DVector::from_column_slice(&self.state_max),
        )
    }

    fn clamp_state(&self, q: &Vector6<f64>) -> Vector6<f64> {
        Vector6::from_fn(|i, _| q[i].clamp(self.state_min[i], self.state_max[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferEntry {
    pub t: f64,
    pub z: Measurement,
    pub u: ControlInput,
}

/// Fixed-capacity ring of timestamped measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBuffer {
    capacity: usize,
    dt: f64,
    entries: VecDeque<BufferEntry>,
}

impl MeasurementBuffer {
    pub fn new(capacity: usize, dt: f64) -> Self {
        Self {
            capacity: capacity.max(1),
            dt,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn front(&self) -> Option<&BufferEntry> {
        self.entries.front()
    }

    pub fn back(&self) -> Option<&BufferEntry> {
        self.entries.back()
    }

    /// Appends a sample, evicting the oldest when full. On error the buffer
    /// is left unchanged.
    pub fn push(&mut self, z: Measurement, u: ControlInput, t: f64) -> Result<(), NmheError> {
        if let Some(last) = self.entries.back() {
            if !(t > last.t) {
                return Err(NmheError::NonMonotonic { t, last: last.t });
            }
            let spacing = t - last.t;
            if (spacing - self.dt).abs() > 0.1 * self.dt {
                return Err(NmheError::IrregularSpacing {
                    spacing,
                    dt: self.dt,
                });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(BufferEntry { t, z, u });
        Ok(())
    }

    /// Copy of the current window.
    pub fn snapshot(&self) -> Vec<BufferEntry> {
        self.entries.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    /// Estimate at the newest measurement time.
    pub estimate: VesselState,
    /// Smoothed trajectory over the window, oldest first.
    pub trajectory: Vec<VesselState>,
    /// Prior for the window starting one sample later.
    pub prior_next: VesselState,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
    /// True when the solver failed and the previous estimate was dead-reckoned.
    pub fallback: bool,
}

/// The single-shooting estimation problem over one window.
pub struct WindowProblem<'a> {
    cfg: &'a MheConfig,
    window: &'a [BufferEntry],
    prior: Vector6<f64>,
    sqrt_p: Vector6<f64>,
    sqrt_r: SMatrix<f64, 8, 1>,
    penalised: Vec<usize>,
}

impl<'a> WindowProblem<'a> {
    pub fn new(cfg: &'a MheConfig, window: &'a [BufferEntry], prior: &VesselState) -> Self {
        Self {
            cfg,
            window,
            prior: prior.as_vector(),
            sqrt_p: Vector6::from_iterator(cfg.arrival_weight.iter().map(|w| w.sqrt())),
            sqrt_r: SMatrix::<f64, 8, 1>::from_iterator(cfg.measurement_weight.iter().map(|w| w.sqrt())),
            penalised: (0..NQ)
                .filter(|&i| cfg.state_min[i].is_finite() || cfg.state_max[i].is_finite())
                .collect(),
        }
    }

    fn num_residuals(&self) -> usize {
        NQ + (NZ + self.penalised.len()) * self.window.len()
    }

    /// Window trajectory propagated from `x0`.
    pub fn propagate(&self, x0: &DVector<f64>) -> Vec<Vector6<f64>> {
        let none = Disturbance::none();
        let mut q = Vector6::from_column_slice(x0.as_slice());
        q[2] = wrap_angle(q[2]);
        let mut out = Vec::with_capacity(self.window.len());
        out.push(q);
        for e in &self.window[1..] {
            q = self.cfg.model.rk4_vec(&q, &e.u.as_vector(), &none, self.cfg.dt);
            out.push(q);
        }
        out
    }

    fn evaluate(&self, x0: &DVector<f64>, with_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let cfg = self.cfg;
        let none = Disturbance::none();
        let m = self.num_residuals();
        let mut r = DVector::zeros(m);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(m, NQ));

        let mut e0 = Vector6::from_column_slice(x0.as_slice()) - self.prior;
        e0[2] = wrap_angle(e0[2]);
        for i in 0..NQ {
            r[i] = self.sqrt_p[i] * e0[i];
            if let Some(j) = jac.as_mut() {
                j[(i, i)] = self.sqrt_p[i];
            }
        }

        let np = self.penalised.len();
        let pen_row0 = NQ + NZ * self.window.len();
        let sqrt_pen = cfg.state_penalty.sqrt();
        let mut q = Vector6::from_column_slice(x0.as_slice());
        let mut phi = Matrix6::identity();
        for (k, entry) in self.window.iter().enumerate() {
            if k > 0 {
                let u: Vector4<f64> = entry.u.as_vector();
                if with_jacobian {
                    let (next, a, _) = cfg.model.rk4_with_jacobians(&q, &u, &none, cfg.dt);
                    phi = a * phi;
                    q = next;
                } else {
                    q = cfg.model.rk4_vec(&q, &u, &none, cfg.dt);
                }
            }
            let h = output(&VesselState::from_vector(&q), &entry.u).0;
            let row = NQ + NZ * k;
            for i in 0..NZ {
                let mut d = entry.z.0[i] - h[i];
                if i == 2 {
                    d = wrap_angle(d);
                }
                r[row + i] = self.sqrt_r[i] * d;
            }
            if let Some(j) = jac.as_mut() {
                // h picks x, y, psi, r from the state; thrust channels do not depend on it
                for (zi, qi) in [(0, 0), (1, 1), (2, 2), (3, 5)] {
                    for c in 0..NQ {
                        j[(row + zi, c)] = -self.sqrt_r[zi] * phi[(qi, c)];
                    }
                }
            }
            for (p, &i) in self.penalised.iter().enumerate() {
                let v = q[i];
                let viol = (v - cfg.state_max[i]).max(0.0) + (v - cfg.state_min[i]).min(0.0);
                r[pen_row0 + np * k + p] = sqrt_pen * viol;
                if viol != 0.0 {
                    if let Some(j) = jac.as_mut() {
                        for c in 0..NQ {
                            j[(pen_row0 + np * k + p, c)] = sqrt_pen * phi[(i, c)];
                        }
                    }
                }
            }
        }
        (r, jac)
    }
}

impl LeastSquares for WindowProblem<'_> {
    fn num_params(&self) -> usize {
        NQ
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        let r = self.evaluate(x, false).0;
        if r.iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(SolverError::Evaluation("non-finite window residual".into()))
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, SolverError> {
        Ok(self.linearize(x)?.1)
    }

    fn linearize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), SolverError> {
        let (r, j) = self.evaluate(x, true);
        if r.iter().all(|v| v.is_finite()) {
            Ok((r, j.expect("jacobian requested")))
        } else {
            Err(SolverError::Evaluation("non-finite window residual".into()))
        }
    }
}

/// Solves one window given an explicit prior for its first sample.
pub fn estimate(
    window: &[BufferEntry],
    prior: &VesselState,
    guess: Option<&VesselState>,
    cfg: &MheConfig,
) -> Result<EstimateReport, NmheError> {
    cfg.validate()?;
    if window.is_empty() {
        return Err(NmheError::Empty);
    }
    let problem = WindowProblem::new(cfg, window, prior);
    let bounds = cfg.decision_bounds();
    let x0 = bounds.project(&DVector::from_column_slice(
        guess.unwrap_or(prior).as_vector().as_slice(),
    ));
    let rep = solve_bounded_nls(&problem, &x0, &bounds, &cfg.solver).map_err(|e| {
        NmheError::InvalidConfig(format!("estimation failed: {e}"))
    })?;
    let traj: Vec<VesselState> = problem
        .propagate(&rep.x)
        .iter()
        .map(|q| VesselState::from_vector(&cfg.clamp_state(q)))
        .collect();
    let estimate = *traj.last().expect("non-empty window");
    let prior_next = if traj.len() > 1 { traj[1] } else { traj[0] };
    Ok(EstimateReport {
        estimate,
        prior_next,
        trajectory: traj,
        cost: rep.cost,
        iterations: rep.iterations,
        termination: Some(rep.termination),
        fallback: false,
    })
}

/// Stateful estimator: owns the buffer and the arrival-cost prior.
#[derive(Debug, Clone)]
pub struct MovingHorizonEstimator {
    cfg: MheConfig,
    buffer: MeasurementBuffer,
    /// Prior state and the timestamp it refers to.
    prior: Option<(f64, VesselState)>,
    last: Option<EstimateReport>,
}

impl MovingHorizonEstimator {
    pub fn new(cfg: MheConfig) -> Result<Self, NmheError> {
        cfg.validate()?;
        let buffer = MeasurementBuffer::new(cfg.window, cfg.dt);
        Ok(Self {
            cfg,
            buffer,
            prior: None,
            last: None,
        })
    }

    pub fn config(&self) -> &MheConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &MeasurementBuffer {
        &self.buffer
    }

    /// Overrides the prior for the current window start.
    pub fn set_prior(&mut self, prior: VesselState) {
        if let Some(front) = self.buffer.front() {
            self.prior = Some((front.t, prior));
        }
    }

    pub fn push(&mut self, z: Measurement, u: ControlInput, t: f64) -> Result<(), NmheError> {
        self.buffer.push(z, u, t)?;
        if self.prior.is_none() {
            // bootstrap: first measured pose, zero velocity
            self.prior = Some((t, VesselState::at_rest(Pose::new(z.x(), z.y(), z.psi()))));
        }
        Ok(())
    }

    /// Estimates the state at the newest buffered sample. Works on partial
    /// windows while the buffer fills.
    pub fn estimate(&mut self) -> Result<EstimateReport, NmheError> {
        let window = self.buffer.snapshot();
        let front_t = window.first().ok_or(NmheError::Empty)?.t;
        let (prior_t, mut prior) = self.prior.expect("set on first push");
        if prior_t != front_t {
            // window slid forward: take the smoothed state of the previous fit
            if let Some(prev) = &self.last {
                let offset = ((front_t - prior_t) / self.cfg.dt).round() as usize;
                if let Some(q) = prev.trajectory.get(offset) {
                    prior = *q;
                }
            }
        }
        self.prior = Some((front_t, prior));

        let guess = prior;
        match estimate(&window, &prior, Some(&guess), &self.cfg) {
            Ok(rep) => {
                self.last = Some(rep.clone());
                Ok(rep)
            }
            Err(e) => {
                log::warn!("nmhe fallback to dead reckoning: {e}");
                let last_u = window.last().expect("non-empty").u;
                let base = self
                    .last
                    .as_ref()
                    .map(|r| r.estimate)
                    .unwrap_or(prior);
                let q = self
                    .cfg
                    .model
                    .step_rk4(&base, &last_u, &Disturbance::none(), self.cfg.dt)
                    .unwrap_or(base);
                Ok(EstimateReport {
                    estimate: q,
                    trajectory: vec![q],
                    prior_next: prior,
                    cost: f64::NAN,
                    iterations: 0,
                    termination: None,
                    fallback: true,
                })
            }
        }
    }
}
