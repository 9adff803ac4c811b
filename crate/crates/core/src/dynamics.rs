//! Planar 3-DOF vessel model.
//!
//! State `q = [x, y, psi, u, v, r]`: inertial pose plus body-frame surge, sway
//! and yaw rate. The kinematics rotate body velocities into the inertial frame
//! and the kinetics are
//!
//! ```text
//! M v_dot = B f + tau_env - C(v) v - D v
//! ```
//!
//! with diagonal `M`, linear diagonal drag `D`, skew-symmetric Coriolis
//! matrix `C(v)` and the four-thruster allocation matrix `B`.

use nalgebra::{Matrix3, SMatrix, Vector3, Vector4, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;

pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix6x4 = SMatrix<f64, 6, 4>;
pub type Vector8 = SMatrix<f64, 8, 1>;

/// Sanity limits on body velocities used by the simulator: `|u|, |v| <= 5 m/s`.
pub const MAX_LINEAR_SPEED: f64 = 5.0;
/// `|r| <= 3 rad/s`.
pub const MAX_YAW_RATE: f64 = 3.0;
/// Largest accepted integration step.
pub const MAX_STEP: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("hydrodynamic parameter {name} must be strictly positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("thruster arm {name} must be strictly positive, got {value}")]
    InvalidGeometry { name: &'static str, value: f64 },
    #[error("integration step must lie in (0, {MAX_STEP}] s, got {0}")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.psi)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// SE(2) composition `self ∘ delta`, with `delta` expressed in `self`'s frame.
    pub fn compose(&self, delta: &Pose) -> Pose {
        let (s, c) = self.psi.sin_cos();
        Pose::new(
            self.x + c * delta.x - s * delta.y,
            self.y + s * delta.x + c * delta.y,
            self.psi + delta.psi,
        )
    }

    pub fn inverse(&self) -> Pose {
        let (s, c) = self.psi.sin_cos();
        Pose::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.psi,
        )
    }

    /// Relative pose `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

impl BodyVelocity {
    pub fn new(u: f64, v: f64, r: f64) -> Self {
        Self { u, v, r }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.r)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite() && self.r.is_finite()
    }

    pub fn within_sanity_limits(&self) -> bool {
        self.u.abs() <= MAX_LINEAR_SPEED
            && self.v.abs() <= MAX_LINEAR_SPEED
            && self.r.abs() <= MAX_YAW_RATE
    }

    /// Clamps onto the simulator sanity box.
    pub fn clamped(&self) -> Self {
        Self::new(
            self.u.clamp(-MAX_LINEAR_SPEED, MAX_LINEAR_SPEED),
            self.v.clamp(-MAX_LINEAR_SPEED, MAX_LINEAR_SPEED),
            self.r.clamp(-MAX_YAW_RATE, MAX_YAW_RATE),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VesselState {
    pub pose: Pose,
    pub vel: BodyVelocity,
}

impl VesselState {
    pub fn new(pose: Pose, vel: BodyVelocity) -> Self {
        Self { pose, vel }
    }

    pub fn at_rest(pose: Pose) -> Self {
        Self::new(pose, BodyVelocity::default())
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.pose.x,
            self.pose.y,
            self.pose.psi,
            self.vel.u,
            self.vel.v,
            self.vel.r,
        )
    }

    /// Builds a state from `[x, y, psi, u, v, r]`, wrapping the heading.
    pub fn from_vector(q: &Vector6<f64>) -> Self {
        Self::new(
            Pose::new(q[0], q[1], q[2]),
            BodyVelocity::new(q[3], q[4], q[5]),
        )
    }
}

/// Thruster forces in newtons: left, right, anterior, rear.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
}

impl ControlInput {
    pub fn new(f1: f64, f2: f64, f3: f64, f4: f64) -> Self {
        Self { f1, f2, f3, f4 }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.f1, self.f2, self.f3, self.f4)
    }

    pub fn from_slice(f: &[f64]) -> Self {
        Self::new(f[0], f[1], f[2], f[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.f1, self.f2, self.f3, self.f4]
    }

    pub fn max_abs(&self) -> f64 {
        self.as_array().iter().fold(0.0, |m, f| m.max(f.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneralizedForce {
    pub tau_u: f64,
    pub tau_v: f64,
    pub tau_r: f64,
}

impl GeneralizedForce {
    pub fn new(tau_u: f64, tau_v: f64, tau_r: f64) -> Self {
        Self {
            tau_u,
            tau_v,
            tau_r,
        }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.tau_u, self.tau_v, self.tau_r)
    }
}

/// Hydrodynamic parameters: added mass and inertia plus linear drag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydroParams {
    pub m11: f64,
    pub m22: f64,
    pub m33: f64,
    pub xu: f64,
    pub yv: f64,
    pub nr: f64,
}

impl HydroParams {
    pub const NAMES: [&'static str; 6] = ["m11", "m22", "m33", "Xu", "Yv", "Nr"];

    pub fn new(m11: f64, m22: f64, m33: f64, xu: f64, yv: f64, nr: f64) -> Self {
        Self {
            m11,
            m22,
            m33,
            xu,
            yv,
            nr,
        }
    }

    /// Parameters identified for the full-scale prototype hull.
    pub fn identified() -> Self {
        Self::new(172.0, 188.0, 24.0, 38.0, 168.0, 16.0)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.m11, self.m22, self.m33, self.xu, self.yv, self.nr]
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, value) in Self::NAMES.iter().zip(self.to_array()) {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DynamicsError::NonPositiveParameter { name, value });
            }
        }
        Ok(())
    }

    pub fn mass_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.m11, self.m22, self.m33))
    }

    pub fn drag_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.xu, self.yv, self.nr))
    }

    /// Coriolis and centripetal matrix `C(v)`.
    pub fn coriolis(&self, vel: &BodyVelocity) -> Matrix3<f64> {
        let (u, v) = (vel.u, vel.v);
        Matrix3::new(
            0.0,
            0.0,
            -self.m22 * v,
            0.0,
            0.0,
            self.m11 * u,
            self.m22 * v,
            -self.m11 * u,
            0.0,
        )
    }

    /// Kinetic energy `½ vᵀ M v`.
    pub fn kinetic_energy(&self, vel: &BodyVelocity) -> f64 {
        0.5 * (self.m11 * vel.u * vel.u + self.m22 * vel.v * vel.v + self.m33 * vel.r * vel.r)
    }
}

impl Default for HydroParams {
    fn default() -> Self {
        Self::identified()
    }
}

/// Lever arms of the thruster pairs.
///
/// `a` separates the left/right surge thrusters, `b` separates the
/// anterior/rear sway thrusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrusterGeometry {
    pub a: f64,
    pub b: f64,
}

impl ThrusterGeometry {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(DynamicsError::InvalidGeometry {
                name: "a",
                value: self.a,
            });
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(DynamicsError::InvalidGeometry {
                name: "b",
                value: self.b,
            });
        }
        Ok(())
    }

    /// The 3×4 allocation matrix mapping thruster forces to `τ`.
    pub fn allocation_matrix(&self) -> SMatrix<f64, 3, 4> {
        let (ha, hb) = (0.5 * self.a, 0.5 * self.b);
        SMatrix::<f64, 3, 4>::new(
            1.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 1.0, //
            ha, -ha, hb, -hb,
        )
    }
}

impl Default for ThrusterGeometry {
    fn default() -> Self {
        Self::new(0.8, 1.6)
    }
}

/// Environmental force and torque, body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub tau_env: GeneralizedForce,
}

impl Disturbance {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(tau_u: f64, tau_v: f64, tau_r: f64) -> Self {
        Self {
            tau_env: GeneralizedForce::new(tau_u, tau_v, tau_r),
        }
    }
}

/// Maps thruster forces to body-frame force and yaw moment.
pub fn allocate(u: &ControlInput, geom: &ThrusterGeometry) -> GeneralizedForce {
    let (ha, hb) = (0.5 * geom.a, 0.5 * geom.b);
    GeneralizedForce::new(
        u.f1 + u.f2,
        u.f3 + u.f4,
        ha * (u.f1 - u.f2) + hb * (u.f3 - u.f4),
    )
}

/// Body-to-inertial rotation `T(ψ)`.
pub fn body_to_inertial(pose: &Pose) -> Matrix3<f64> {
    let (s, c) = pose.psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Measurement vector `[x, y, psi, r, f1, f2, f3, f4]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement(pub [f64; 8]);

impl Measurement {
    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn y(&self) -> f64 {
        self.0[1]
    }
    pub fn psi(&self) -> f64 {
        self.0[2]
    }
    pub fn r(&self) -> f64 {
        self.0[3]
    }
    pub fn forces(&self) -> ControlInput {
        ControlInput::from_slice(&self.0[4..8])
    }
    pub fn as_vector(&self) -> Vector8 {
        Vector8::from_column_slice(&self.0)
    }
}

/// Per-channel standard deviations of the additive sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub sigma_pos: f64,
    pub sigma_psi: f64,
    pub sigma_r: f64,
    pub sigma_f: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma_pos: 0.0,
            sigma_psi: 0.0,
            sigma_r: 0.0,
            sigma_f: 0.0,
        }
    }

    pub fn sigmas(&self) -> [f64; 8] {
        let (p, h, r, f) = (self.sigma_pos, self.sigma_psi, self.sigma_r, self.sigma_f);
        [p, p, h, r, f, f, f, f]
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_pos: 0.02,
            sigma_psi: 0.02,
            sigma_r: 0.01,
            sigma_f: 1.0,
        }
    }
}

/// Noise-free output map `h(q, u)`.
pub fn output(q: &VesselState, u: &ControlInput) -> Measurement {
    Measurement([
        q.pose.x, q.pose.y, q.pose.psi, q.vel.r, u.f1, u.f2, u.f3, u.f4,
    ])
}

/// Samples a measurement with additive zero-mean Gaussian noise.
pub fn measure<R: Rng + ?Sized>(
    q: &VesselState,
    u: &ControlInput,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Measurement {
    let mut z = output(q, u).0;
    for (zi, sigma) in z.iter_mut().zip(noise.sigmas()) {
        if sigma > 0.0 {
            // sigma > 0 and finite, so construction cannot fail
            let n = Normal::new(0.0, sigma).expect("valid sigma");
            *zi += n.sample(rng);
        }
    }
    z[2] = wrap_angle(z[2]);
    Measurement(z)
}

/// The plant/prediction model: hydrodynamic parameters plus thruster layout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VesselModel {
    pub params: HydroParams,
    pub geometry: ThrusterGeometry,
}

impl VesselModel {
    pub fn new(params: HydroParams, geometry: ThrusterGeometry) -> Result<Self, DynamicsError> {
        params.validate()?;
        geometry.validate()?;
        Ok(Self { params, geometry })
    }

    /// Continuous-time derivative on the raw 6-vector.
    pub fn derivative_vec(
        &self,
        q: &Vector6<f64>,
        u: &Vector4<f64>,
        dist: &Disturbance,
    ) -> Vector6<f64> {
        let p = &self.params;
        let g = &self.geometry;
        let (psi, su, sv, r) = (q[2], q[3], q[4], q[5]);
        let (s, c) = psi.sin_cos();
        let tau_u = u[0] + u[1] + dist.tau_env.tau_u;
        let tau_v = u[2] + u[3] + dist.tau_env.tau_v;
        let tau_r = 0.5 * g.a * (u[0] - u[1]) + 0.5 * g.b * (u[2] - u[3]) + dist.tau_env.tau_r;
        Vector6::new(
            su * c - sv * s,
            su * s + sv * c,
            r,
            (tau_u + p.m22 * sv * r - p.xu * su) / p.m11,
            (tau_v - p.m11 * su * r - p.yv * sv) / p.m22,
            (tau_r - (p.m22 - p.m11) * su * sv - p.nr * r) / p.m33,
        )
    }

    /// Continuous-time Jacobians `(∂f/∂q, ∂f/∂u)`.
    pub fn derivative_jacobians(&self, q: &Vector6<f64>) -> (Matrix6, Matrix6x4) {
        let p = &self.params;
        let g = &self.geometry;
        let (psi, su, sv, r) = (q[2], q[3], q[4], q[5]);
        let (s, c) = psi.sin_cos();
        let mut fq = Matrix6::zeros();
        fq[(0, 2)] = -su * s - sv * c;
        fq[(0, 3)] = c;
        fq[(0, 4)] = -s;
        fq[(1, 2)] = su * c - sv * s;
        fq[(1, 3)] = s;
        fq[(1, 4)] = c;
        fq[(2, 5)] = 1.0;
        fq[(3, 3)] = -p.xu / p.m11;
        fq[(3, 4)] = p.m22 * r / p.m11;
        fq[(3, 5)] = p.m22 * sv / p.m11;
        fq[(4, 3)] = -p.m11 * r / p.m22;
        fq[(4, 4)] = -p.yv / p.m22;
        fq[(4, 5)] = -p.m11 * su / p.m22;
        let k = (p.m22 - p.m11) / p.m33;
        fq[(5, 3)] = -k * sv;
        fq[(5, 4)] = -k * su;
        fq[(5, 5)] = -p.nr / p.m33;

        let mut fu = Matrix6x4::zeros();
        fu[(3, 0)] = 1.0 / p.m11;
        fu[(3, 1)] = 1.0 / p.m11;
        fu[(4, 2)] = 1.0 / p.m22;
        fu[(4, 3)] = 1.0 / p.m22;
        fu[(5, 0)] = 0.5 * g.a / p.m33;
        fu[(5, 1)] = -0.5 * g.a / p.m33;
        fu[(5, 2)] = 0.5 * g.b / p.m33;
        fu[(5, 3)] = -0.5 * g.b / p.m33;
        (fq, fu)
    }

    pub fn derivative(&self, q: &VesselState, u: &ControlInput, dist: &Disturbance) -> Vector6<f64> {
        self.derivative_vec(&q.as_vector(), &u.as_vector(), dist)
    }

    /// One classical RK4 step with zero-order-hold control, on the raw vector.
    /// The heading is renormalised.
    pub fn rk4_vec(
        &self,
        q: &Vector6<f64>,
        u: &Vector4<f64>,
        dist: &Disturbance,
        dt: f64,
    ) -> Vector6<f64> {
        let k1 = self.derivative_vec(q, u, dist);
        let k2 = self.derivative_vec(&(q + k1 * (0.5 * dt)), u, dist);
        let k3 = self.derivative_vec(&(q + k2 * (0.5 * dt)), u, dist);
        let k4 = self.derivative_vec(&(q + k3 * dt), u, dist);
        let mut next = q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        next[2] = wrap_angle(next[2]);
        next
    }

    /// RK4 step returning the discrete Jacobians `(∂q⁺/∂q, ∂q⁺/∂u)`.
    pub fn rk4_with_jacobians(
        &self,
        q: &Vector6<f64>,
        u: &Vector4<f64>,
        dist: &Disturbance,
        dt: f64,
    ) -> (Vector6<f64>, Matrix6, Matrix6x4) {
        let h2 = 0.5 * dt;
        let eye = Matrix6::identity();

        let k1 = self.derivative_vec(q, u, dist);
        let (a1, b1) = self.derivative_jacobians(q);
        let dk1q = a1;
        let dk1u = b1;

        let q2 = q + k1 * h2;
        let k2 = self.derivative_vec(&q2, u, dist);
        let (a2, b2) = self.derivative_jacobians(&q2);
        let dk2q = a2 * (eye + dk1q * h2);
        let dk2u = a2 * (dk1u * h2) + b2;

        let q3 = q + k2 * h2;
        let k3 = self.derivative_vec(&q3, u, dist);
        let (a3, b3) = self.derivative_jacobians(&q3);
        let dk3q = a3 * (eye + dk2q * h2);
        let dk3u = a3 * (dk2u * h2) + b3;

        let q4 = q + k3 * dt;
        let k4 = self.derivative_vec(&q4, u, dist);
        let (a4, b4) = self.derivative_jacobians(&q4);
        let dk4q = a4 * (eye + dk3q * dt);
        let dk4u = a4 * (dk3u * dt) + b4;

        let w = dt / 6.0;
        let mut next = q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * w;
        next[2] = wrap_angle(next[2]);
        let jq = eye + (dk1q + dk2q * 2.0 + dk3q * 2.0 + dk4q) * w;
        let ju = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * w;
        (next, jq, ju)
    }

    pub fn step_rk4(
        &self,
        q: &VesselState,
        u: &ControlInput,
        dist: &Disturbance,
        dt: f64,
    ) -> Result<VesselState, DynamicsError> {
        check_step(dt)?;
        Ok(VesselState::from_vector(&self.rk4_vec(
            &q.as_vector(),
            &u.as_vector(),
            dist,
            dt,
        )))
    }

    /// Advances over `dt` using `substeps` equal RK4 steps.
    pub fn advance(
        &self,
        q: &VesselState,
        u: &ControlInput,
        dist: &Disturbance,
        dt: f64,
        substeps: usize,
    ) -> Result<VesselState, DynamicsError> {
        check_step(dt)?;
        let n = substeps.max(1);
        let h = dt / n as f64;
        let uv = u.as_vector();
        let mut x = q.as_vector();
        for _ in 0..n {
            x = self.rk4_vec(&x, &uv, dist, h);
        }
        Ok(VesselState::from_vector(&x))
    }
}

fn check_step(dt: f64) -> Result<(), DynamicsError> {
    if dt > 0.0 && dt <= MAX_STEP {
        Ok(())
    } else {
        Err(DynamicsError::InvalidStep(dt))
    }
}

/// Free-function form of [`VesselModel::derivative`] with parameter validation.
pub fn derivative(
    q: &VesselState,
    u: &ControlInput,
    xi: &HydroParams,
    geom: &ThrusterGeometry,
    dist: &Disturbance,
) -> Result<Vector6<f64>, DynamicsError> {
    let model = VesselModel::new(*xi, *geom)?;
    Ok(model.derivative(q, u, dist))
}

/// Free-function form of [`VesselModel::step_rk4`].
pub fn step_rk4(
    q: &VesselState,
    u: &ControlInput,
    dt: f64,
    xi: &HydroParams,
    geom: &ThrusterGeometry,
    dist: &Disturbance,
) -> Result<VesselState, DynamicsError> {
    VesselModel::new(*xi, *geom)?.step_rk4(q, u, dist, dt)
}
