//! Grey-box identification of the hydrodynamic parameters.
//!
//! The velocity subsystem is rolled forward under the recorded thruster
//! forces and the mismatch against recorded body velocities,
//! `Σ εᵀ w ε`, is minimised inside a parameter box with the bounded
//! Gauss-Newton SQP. Parameters are optimised in units of the initial guess so
//! that added masses (~10² kg) and drag terms share one scale.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector4, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dynamics::{
    BodyVelocity, ControlInput, Disturbance, DynamicsError, HydroParams, ThrusterGeometry,
    VesselModel, VesselState,
};
use crate::solver::{solve_bounded_nls, Bounds, LeastSquares, NlsOptions, SolveReport, SolverError};

/// Minimum number of samples per dataset.
pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One recorded trial: thruster forces and body velocities on a fixed grid.
///
/// `controls[k]` acts over `[t_k, t_k+1)` and `velocities[k]` is sampled at
/// `t_k`, so `velocities[0]` coincides with `initial_velocity` when the data
/// are noiseless.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentDataset {
    pub sample_period: f64,
    pub controls: Vec<ControlInput>,
    pub velocities: Vec<BodyVelocity>,
    pub initial_velocity: BodyVelocity,
}

impl IdentDataset {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn validate(&self) -> Result<(), SysIdError> {
        if !(self.sample_period > 0.0) {
            return Err(SysIdError::InvalidDataset(format!(
                "sample period must be positive, got {}",
                self.sample_period
            )));
        }
        if self.controls.len() != self.velocities.len() {
            return Err(SysIdError::InvalidDataset(format!(
                "{} control samples but {} velocity samples",
                self.controls.len(),
                self.velocities.len()
            )));
        }
        if self.velocities.len() < MIN_SAMPLES {
            return Err(SysIdError::InvalidDataset(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                self.velocities.len()
            )));
        }
        Ok(())
    }

    /// Writes `t,f1,f2,f3,f4,u,v,r` with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SysIdError> {
        writeln!(w, "t,f1,f2,f3,f4,u,v,r")?;
        for (k, (c, v)) in self.controls.iter().zip(&self.velocities).enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                k as f64 * self.sample_period,
                c.f1,
                c.f2,
                c.f3,
                c.f4,
                v.u,
                v.v,
                v.r
            )?;
        }
        Ok(())
    }

    /// Reads the CSV layout of [`IdentDataset::write_csv`]. The sample period
    /// is taken from the first two timestamps and the initial velocity from
    /// the first row.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, SysIdError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| SysIdError::Csv("empty file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "f1", "f2", "f3", "f4", "u", "v", "r"] {
            return Err(SysIdError::Csv(format!("unexpected header {header:?}")));
        }
        let mut times = Vec::new();
        let mut controls = Vec::new();
        let mut velocities = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| SysIdError::Csv(format!("row {}: {e}", i + 2)))?;
            if vals.len() != 8 {
                return Err(SysIdError::Csv(format!("row {} has {} columns", i + 2, vals.len())));
            }
            times.push(vals[0]);
            controls.push(ControlInput::from_slice(&vals[1..5]));
            velocities.push(BodyVelocity::new(vals[5], vals[6], vals[7]));
        }
        if times.len() < 2 {
            return Err(SysIdError::Csv("need at least two rows".into()));
        }
        let ds = IdentDataset {
            sample_period: times[1] - times[0],
            initial_velocity: velocities[0],
            controls,
            velocities,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentConfig {
    pub lower: HydroParams,
    pub upper: HydroParams,
    pub init: HydroParams,
    /// Positive-definite 3×3 weight on the velocity error.
    pub weight: Matrix3<f64>,
    /// Optional payload mass added to `m11` and `m22`; zero disables it.
    pub payload: f64,
    pub solver: NlsOptions,
}

impl Default for IdentConfig {
    fn default() -> Self {
        Self {
            lower: HydroParams::new(50.0, 50.0, 5.0, 5.0, 5.0, 2.0),
            upper: HydroParams::new(500.0, 500.0, 200.0, 400.0, 400.0, 100.0),
            init: HydroParams::new(120.0, 120.0, 40.0, 60.0, 100.0, 30.0),
            weight: Matrix3::identity(),
            payload: 0.0,
            solver: NlsOptions {
                kkt_tol: 1e-10,
                step_tol: 1e-10,
                ..NlsOptions::default()
            },
        }
    }
}

impl IdentConfig {
    fn validate(&self) -> Result<(), SysIdError> {
        let (lo, init, hi) = (self.lower.to_array(), self.init.to_array(), self.upper.to_array());
        for i in 0..6 {
            if !(lo[i] > 0.0 && lo[i] <= init[i] && init[i] <= hi[i]) {
                return Err(SysIdError::InvalidConfig(format!(
                    "{} must satisfy 0 < lower <= init <= upper",
                    HydroParams::NAMES[i]
                )));
            }
        }
        if self.weight.cholesky().is_none() {
            return Err(SysIdError::InvalidConfig("weight matrix is not positive definite".into()));
        }
        if !(self.payload >= 0.0) {
            return Err(SysIdError::InvalidConfig("payload must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IdentResult {
    pub params: HydroParams,
    /// Velocity RMSE per channel `(u, v, r)` at the solution.
    pub rmse: [f64; 3],
    pub cost: f64,
    /// Condition number of the Gauss-Newton Hessian in scaled coordinates.
    pub hessian_condition: f64,
    pub converged: bool,
    pub report: SolveReport,
}

/// Rolls the velocity subsystem forward from the dataset's initial velocity.
pub fn simulate_velocity(
    xi: &HydroParams,
    geom: &ThrusterGeometry,
    dataset: &IdentDataset,
) -> Result<Vec<BodyVelocity>, SysIdError> {
    dataset.validate()?;
    let model = VesselModel::new(*xi, *geom)?;
    if !(dataset.sample_period <= crate::dynamics::MAX_STEP) {
        return Err(DynamicsError::InvalidStep(dataset.sample_period).into());
    }
    Ok(rollout(&model, dataset))
}

fn rollout(model: &VesselModel, dataset: &IdentDataset) -> Vec<BodyVelocity> {
    let v0 = dataset.initial_velocity;
    let mut q = Vector6::new(0.0, 0.0, 0.0, v0.u, v0.v, v0.r);
    let mut out = Vec::with_capacity(dataset.len());
    out.push(v0);
    let none = Disturbance::none();
    for c in dataset.controls.iter().take(dataset.len() - 1) {
        let u = Vector4::new(c.f1, c.f2, c.f3, c.f4);
        q = model.rk4_vec(&q, &u, &none, dataset.sample_period);
        out.push(BodyVelocity::new(q[3], q[4], q[5]));
    }
    out
}

struct FitProblem<'a> {
    datasets: &'a [IdentDataset],
    geometry: ThrusterGeometry,
    scale: [f64; 6],
    payload: f64,
    sqrt_w: Matrix3<f64>,
    total: usize,
}

impl FitProblem<'_> {
    fn params(&self, theta: &DVector<f64>) -> HydroParams {
        let mut p = [0.0; 6];
        for i in 0..6 {
            p[i] = theta[i] * self.scale[i];
        }
        p[0] += self.payload;
        p[1] += self.payload;
        HydroParams::from_array(p)
    }
}

impl LeastSquares for FitProblem<'_> {
    fn num_params(&self) -> usize {
        6
    }

    fn residuals(&self, theta: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        let model = VesselModel::new(self.params(theta), self.geometry)
            .map_err(|e| SolverError::Evaluation(e.to_string()))?;
        let mut r = DVector::zeros(3 * self.total);
        let mut row = 0;
        for ds in self.datasets {
            for (vm, vs) in rollout(&model, ds).iter().zip(&ds.velocities) {
                let e = self.sqrt_w * (vs.as_vector() - vm.as_vector());
                r[row] = e[0];
                r[row + 1] = e[1];
                r[row + 2] = e[2];
                row += 3;
            }
        }
        Ok(r)
    }
}

/// Fits hydrodynamic parameters to one or more recorded trials.
///
/// Each trial is rolled out from its own initial velocity. Solver trouble
/// (iteration cap, stalled line search) does not raise an error: the best
/// iterate is returned with `converged == false`.
pub fn identify(
    datasets: &[IdentDataset],
    geom: &ThrusterGeometry,
    cfg: &IdentConfig,
) -> Result<IdentResult, SysIdError> {
    if datasets.is_empty() {
        return Err(SysIdError::InvalidDataset("no datasets".into()));
    }
    for ds in datasets {
        ds.validate()?;
        if ds.sample_period > crate::dynamics::MAX_STEP {
            return Err(DynamicsError::InvalidStep(ds.sample_period).into());
        }
    }
    cfg.validate()?;
    geom.validate()?;

    let scale = cfg.init.to_array();
    // row-wise square root: εᵀwε = ‖Lᵀε‖² with w = LLᵀ
    let chol = cfg.weight.cholesky().expect("validated above");
    let problem = FitProblem {
        datasets,
        geometry: *geom,
        scale,
        payload: cfg.payload,
        sqrt_w: chol.l().transpose(),
        total: datasets.iter().map(IdentDataset::len).sum(),
    };
    let lo = cfg.lower.to_array();
    let hi = cfg.upper.to_array();
    let bounds = Bounds::new(
        DVector::from_iterator(6, (0..6).map(|i| lo[i] / scale[i])),
        DVector::from_iterator(6, (0..6).map(|i| hi[i] / scale[i])),
    );
    let x0 = DVector::from_element(6, 1.0);
    let report = solve_bounded_nls(&problem, &x0, &bounds, &cfg.solver)?;
    let converged = report.termination.is_converged();
    if !converged {
        log::warn!(
            "identification stopped with {:?} after {} iterations",
            report.termination,
            report.iterations
        );
    }
    let mut params = problem.params(&report.x);
    params.m11 -= cfg.payload;
    params.m22 -= cfg.payload;

    let jac = problem.jacobian(&report.x)?;
    let hessian_condition = condition_number(&jac.tr_mul(&jac));

    let model = VesselModel::new(problem.params(&report.x), *geom)?;
    let mut sq = [0.0; 3];
    for ds in datasets {
        for (vm, vs) in rollout(&model, ds).iter().zip(&ds.velocities) {
            sq[0] += (vs.u - vm.u).powi(2);
            sq[1] += (vs.v - vm.v).powi(2);
            sq[2] += (vs.r - vm.r).powi(2);
        }
    }
    let n = problem.total as f64;
    Ok(IdentResult {
        params,
        rmse: sq.map(|s| (s / n).sqrt()),
        cost: report.cost,
        hessian_condition,
        converged,
        report,
    })
}

fn condition_number(h: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Sinusoidal excitation for one identification trial.
///
/// All four thrusters are driven with distinct periods and phases so that
/// surge, sway and yaw are excited together (the Coriolis coupling is what
/// makes `m11` and `m22` separable from the drag terms). Forces stay inside
/// ±45 N.
pub fn sinusoidal_controls(trial: usize, duration: f64, dt: f64) -> Vec<ControlInput> {
    let n = (duration / dt).round() as usize;
    let k = trial as f64;
    let periods = [
        17.0 + 3.0 * k,
        11.0 + 2.0 * k,
        7.0 + 1.5 * k,
        13.0 + 2.5 * k,
    ];
    let phases = [0.0, 1.3 + 0.4 * k, 2.1 + 0.7 * k, 0.6 + 0.9 * k];
    let amps = [22.0, 22.0, 18.0, 18.0];
    let offsets = [12.0, 8.0, 3.0, -3.0];
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let f: Vec<f64> = (0..4)
                .map(|j| {
                    let w = std::f64::consts::TAU / periods[j];
                    (offsets[j] + amps[j] * (w * t + phases[j]).sin()
                        + 0.35 * amps[j] * (2.7 * w * t + 0.5 * phases[j]).sin())
                    .clamp(-45.0, 45.0)
                })
                .collect();
            ControlInput::from_slice(&f)
        })
        .collect()
}

/// Records a trial on the true plant: the plant is integrated with `substeps`
/// RK4 steps per sample and velocities are corrupted with Gaussian noise of
/// standard deviation `sigma_v` on every channel.
pub fn record_trial<R: Rng + ?Sized>(
    plant: &VesselModel,
    controls: &[ControlInput],
    dt: f64,
    substeps: usize,
    sigma_v: f64,
    rng: &mut R,
) -> Result<IdentDataset, SysIdError> {
    let noise = if sigma_v > 0.0 {
        Some(Normal::new(0.0, sigma_v).map_err(|e| SysIdError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut q = VesselState::default();
    let mut velocities = Vec::with_capacity(controls.len());
    for c in controls {
        let mut v = q.vel;
        if let Some(n) = &noise {
            v.u += n.sample(rng);
            v.v += n.sample(rng);
            v.r += n.sample(rng);
        }
        velocities.push(v);
        q = plant.advance(&q, c, &Disturbance::none(), dt, substeps)?;
    }
    Ok(IdentDataset {
        sample_period: dt,
        controls: controls.to_vec(),
        velocities,
        initial_velocity: BodyVelocity::default(),
    })
}
