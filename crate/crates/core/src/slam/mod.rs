//! SE(2) pose-graph SLAM back-end.
//!
//! Nodes are keyframe poses; factors are relative poses (odometry and loop
//! closures), position-only GPS fixes and a single prior on node 0. The
//! graph is re-optimised in batch by Gauss–Newton after each insertion,
//! falling back to Levenberg damping when a step fails. Linear systems are
//! solved with an envelope Cholesky under reverse Cuthill–McKee ordering,
//! which keeps loop-shaped graphs nearly banded.
//!
//! Relative-pose errors follow the usual convention
//! `e = log(Z⁻¹ · (X_i⁻¹ X_j))` with wrapped heading; the reported cost is
//! `Σ eᵀ Ω e`.

mod envelope;

use std::io::Write;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::dynamics::Pose;

pub use self::envelope::{reverse_cuthill_mckee, EnvelopeMatrix};

/// Equatorial radius used by the tangent-plane conversion.
pub const EARTH_RADIUS: f64 = 6_378_137.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlamError {
    #[error("information matrix is not symmetric positive definite")]
    SingularInformation,
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("invalid factor: {0}")]
    InvalidFactor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub pose: Pose,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelKind {
    Odometry,
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPoseFactor {
    pub from: usize,
    pub to: usize,
    pub delta: Pose,
    pub info: Matrix3<f64>,
    pub kind: RelKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFactor {
    pub node: usize,
    pub position: Vector2<f64>,
    pub info: Matrix2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorFactor {
    pub pose: Pose,
    pub info: Matrix3<f64>,
}

/// Keyframe admission thresholds (strict).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeGate {
    pub distance: f64,
    pub angle: f64,
}

impl Default for KeyframeGate {
    fn default() -> Self {
        Self {
            distance: 1.0,
            angle: 10f64.to_radians(),
        }
    }
}

impl KeyframeGate {
    pub fn admits(&self, last: &Pose, current: &Pose) -> bool {
        last.distance_to(current) > self.distance
            || wrap_angle(current.psi - last.psi).abs() > self.angle
    }
}

/// True iff the motion since `last` exceeds 1 m or 10°.
pub fn should_add_keyframe(last: &Pose, current: &Pose) -> bool {
    KeyframeGate::default().admits(last, current)
}

/// Latitude/longitude origin of the local tangent plane (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

impl GeoOrigin {
    /// Local `(x north, y east)` in meters for a fix in degrees.
    pub fn to_local(&self, lat: f64, lon: f64) -> (f64, f64) {
        let dlat = (lat - self.lat).to_radians();
        let dlon = (lon - self.lon).to_radians();
        (
            EARTH_RADIUS * dlat,
            EARTH_RADIUS * self.lat.to_radians().cos() * dlon,
        )
    }
}

fn check_spd<const D: usize>(info: &SMatrix<f64, D, D>) -> Result<(), SlamError> {
    let sym = (info - info.transpose()).amax() <= 1e-9 * (1.0 + info.amax());
    if sym && info.iter().all(|v| v.is_finite()) && info.cholesky().is_some() {
        Ok(())
    } else {
        Err(SlamError::SingularInformation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    /// Stop once the cost decrease falls below `tol · (1 + cost)`.
    pub tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Steps that needed Levenberg damping.
    pub damped_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    nodes: Vec<GraphNode>,
    relative: Vec<RelPoseFactor>,
    gps: Vec<GpsFactor>,
    prior: PriorFactor,
}

const PRIOR_INFO: f64 = 1e6;

impl PoseGraph {
    /// Seeds node 0 at `pose` with a stiff prior.
    pub fn new(pose: Pose, timestamp: f64) -> Self {
        Self::with_prior(pose, timestamp, Matrix3::from_diagonal_element(PRIOR_INFO))
            .expect("diagonal prior is positive definite")
    }

    pub fn with_prior(pose: Pose, timestamp: f64, info: Matrix3<f64>) -> Result<Self, SlamError> {
        check_spd(&info)?;
        Ok(Self {
            nodes: vec![GraphNode {
                id: 0,
                pose,
                timestamp,
            }],
            relative: Vec::new(),
            gps: Vec::new(),
            prior: PriorFactor { pose, info },
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&GraphNode> {
        self.nodes.get(id)
    }

    pub fn last(&self) -> &GraphNode {
        self.nodes.last().expect("graph always holds node 0")
    }

    pub fn relative_factors(&self) -> &[RelPoseFactor] {
        &self.relative
    }

    pub fn gps_factors(&self) -> &[GpsFactor] {
        &self.gps
    }

    pub fn prior(&self) -> &PriorFactor {
        &self.prior
    }

    pub fn loop_count(&self) -> usize {
        self.relative.iter().filter(|f| f.kind == RelKind::Loop).count()
    }

    /// Overwrites a node estimate (e.g. to perturb an initialisation).
    pub fn set_pose(&mut self, id: usize, pose: Pose) -> Result<(), SlamError> {
        self.nodes.get_mut(id).ok_or(SlamError::UnknownNode(id))?.pose = pose;
        Ok(())
    }

    /// Appends a node at `last ∘ delta` linked by an odometry factor.
    pub fn add_keyframe(&mut self, delta: Pose, info: Matrix3<f64>, timestamp: f64) -> Result<usize, SlamError> {
        check_spd(&info)?;
        let prev = *self.last();
        let id = self.nodes.len();
        self.nodes.push(GraphNode {
            id,
            pose: prev.pose.compose(&delta),
            timestamp,
        });
        self.relative.push(RelPoseFactor {
            from: prev.id,
            to: id,
            delta,
            info,
            kind: RelKind::Odometry,
        });
        Ok(id)
    }

    /// Attaches a local-frame position fix to a node.
    pub fn add_gps(&mut self, node: usize, position: (f64, f64), info: Matrix2<f64>) -> Result<(), SlamError> {
        if node >= self.nodes.len() {
            return Err(SlamError::UnknownNode(node));
        }
        check_spd(&info)?;
        self.gps.push(GpsFactor {
            node,
            position: Vector2::new(position.0, position.1),
            info,
        });
        Ok(())
    }

    /// Converts a latitude/longitude fix to the tangent plane and attaches it.
    pub fn add_gps_geodetic(
        &mut self,
        node: usize,
        lat: f64,
        lon: f64,
        origin: &GeoOrigin,
        info: Matrix2<f64>,
    ) -> Result<(), SlamError> {
        self.add_gps(node, origin.to_local(lat, lon), info)
    }

    /// Adds a loop-closure factor between two non-consecutive nodes.
    pub fn add_loop(&mut self, from: usize, to: usize, delta: Pose, info: Matrix3<f64>) -> Result<(), SlamError> {
        let n = self.nodes.len();
        if from >= n {
            return Err(SlamError::UnknownNode(from));
        }
        if to >= n {
            return Err(SlamError::UnknownNode(to));
        }
        if from.abs_diff(to) < 2 {
            return Err(SlamError::InvalidFactor(
                "loop closures must join non-consecutive nodes".into(),
            ));
        }
        check_spd(&info)?;
        self.relative.push(RelPoseFactor {
            from,
            to,
            delta,
            info,
            kind: RelKind::Loop,
        });
        Ok(())
    }

    /// Oldest node within `radius` of node `new_id`, ignoring the most recent
    /// `exclude` nodes before it, or `None` if the last closure is younger
    /// than `cooldown` nodes.
    pub fn detect_loop(&self, new_id: usize, cfg: &LoopConfig) -> Option<usize> {
        let new = self.nodes.get(new_id)?;
        let recent = self
            .relative
            .iter()
            .filter(|f| f.kind == RelKind::Loop)
            .map(|f| f.to.max(f.from))
            .max();
        if recent.is_some_and(|r| new_id < r + cfg.cooldown) {
            return None;
        }
        let limit = new_id.checked_sub(cfg.exclusion())?;
        self.nodes[..limit]
            .iter()
            .find(|n| n.pose.distance_to(&new.pose) <= cfg.radius)
            .map(|n| n.id)
    }

    /// Queries `registration(from, to)` for the relative pose and, if it
    /// succeeds, adds the closure. Returns whether a factor was added.
    pub fn close_loop<F>(&mut self, from: usize, to: usize, info: Matrix3<f64>, registration: F) -> Result<bool, SlamError>
    where
        F: FnOnce(usize, usize) -> Option<Pose>,
    {
        if from >= self.nodes.len() || to >= self.nodes.len() {
            return Err(SlamError::UnknownNode(from.max(to)));
        }
        match registration(from, to) {
            Some(delta) => {
                self.add_loop(from, to, delta, info)?;
                Ok(true)
            }
            None => {
                log::info!("registration declined loop {from} -> {to}");
                Ok(false)
            }
        }
    }

    fn relative_error(f: &RelPoseFactor, xi: &Pose, xj: &Pose) -> Vector3<f64> {
        let (si, ci) = xi.psi.sin_cos();
        let (dx, dy) = (xj.x - xi.x, xj.y - xi.y);
        let (lx, ly) = (ci * dx + si * dy, -si * dx + ci * dy);
        let (sz, cz) = f.delta.psi.sin_cos();
        let (ex, ey) = (lx - f.delta.x, ly - f.delta.y);
        Vector3::new(
            cz * ex + sz * ey,
            -sz * ex + cz * ey,
            wrap_angle(xj.psi - xi.psi - f.delta.psi),
        )
    }

    fn relative_jacobians(f: &RelPoseFactor, xi: &Pose, xj: &Pose) -> (Matrix3<f64>, Matrix3<f64>) {
        let (si, ci) = xi.psi.sin_cos();
        let (sz, cz) = f.delta.psi.sin_cos();
        let rzt = Matrix2::new(cz, sz, -sz, cz);
        let rit = Matrix2::new(ci, si, -si, ci);
        let drit = Matrix2::new(-si, ci, -ci, -si);
        let d = Vector2::new(xj.x - xi.x, xj.y - xi.y);
        let rr = rzt * rit;
        let dpsi = rzt * drit * d;
        let mut a = Matrix3::zeros();
        let mut b = Matrix3::zeros();
        a.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-rr));
        a[(0, 2)] = dpsi[0];
        a[(1, 2)] = dpsi[1];
        a[(2, 2)] = -1.0;
        b.fixed_view_mut::<2, 2>(0, 0).copy_from(&rr);
        b[(2, 2)] = 1.0;
        (a, b)
    }

    fn prior_error(&self, x0: &Pose) -> Vector3<f64> {
        let p = &self.prior.pose;
        Vector3::new(x0.x - p.x, x0.y - p.y, wrap_angle(x0.psi - p.psi))
    }

    fn cost_of(&self, poses: &[Pose]) -> f64 {
        let mut c = 0.0;
        let e = self.prior_error(&poses[0]);
        c += e.dot(&(self.prior.info * e));
        for f in &self.relative {
            let e = Self::relative_error(f, &poses[f.from], &poses[f.to]);
            c += e.dot(&(f.info * e));
        }
        for g in &self.gps {
            let p = &poses[g.node];
            let e = Vector2::new(p.x, p.y) - g.position;
            c += e.dot(&(g.info * e));
        }
        c
    }

    /// Total weighted squared error of the current estimates.
    pub fn cost(&self) -> f64 {
        let poses: Vec<Pose> = self.nodes.iter().map(|n| n.pose).collect();
        self.cost_of(&poses)
    }

    /// Node ordering (`pos[node]`) and envelope row starts.
    fn structure(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for f in &self.relative {
            if f.from != f.to {
                adj[f.from].push(f.to);
                adj[f.to].push(f.from);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let mut first_block: Vec<usize> = (0..n).collect();
        for v in 0..n {
            for &w in &adj[v] {
                let (pv, pw) = (pos[v], pos[w]);
                if pw < pv {
                    first_block[pv] = first_block[pv].min(pw);
                }
            }
        }
        let first = (0..3 * n).map(|r| 3 * first_block[r / 3]).collect();
        (pos, first)
    }

    /// Normal equations at `poses`: `(H, b)` with `b = Σ Jᵀ Ω e`.
    fn assemble(&self, poses: &[Pose], pos: &[usize], first: &[usize]) -> (EnvelopeMatrix, Vec<f64>) {
        let n = poses.len();
        let mut h = EnvelopeMatrix::new(first.to_vec());
        let mut b = vec![0.0; 3 * n];

        fn add_diag(h: &mut EnvelopeMatrix, p: usize, m: &Matrix3<f64>) {
            for r in 0..3 {
                for c in 0..=r {
                    h.add(3 * p + r, 3 * p + c, m[(r, c)]);
                }
            }
        }
        fn add_off(h: &mut EnvelopeMatrix, pr: usize, pc: usize, m: &Matrix3<f64>) {
            for r in 0..3 {
                for c in 0..3 {
                    h.add(3 * pr + r, 3 * pc + c, m[(r, c)]);
                }
            }
        }
        let mut add_b = |p: usize, v: &Vector3<f64>| {
            for k in 0..3 {
                b[3 * p + k] += v[k];
            }
        };

        let e0 = self.prior_error(&poses[0]);
        add_diag(&mut h, pos[0], &self.prior.info);
        add_b(pos[0], &(self.prior.info * e0));

        for f in &self.relative {
            let (xi, xj) = (&poses[f.from], &poses[f.to]);
            let e = Self::relative_error(f, xi, xj);
            let (a, bj) = Self::relative_jacobians(f, xi, xj);
            let at_o = a.transpose() * f.info;
            let bt_o = bj.transpose() * f.info;
            let (pi, pj) = (pos[f.from], pos[f.to]);
            add_diag(&mut h, pi, &(at_o * a));
            add_diag(&mut h, pj, &(bt_o * bj));
            if pi > pj {
                add_off(&mut h, pi, pj, &(at_o * bj));
            } else {
                add_off(&mut h, pj, pi, &(bt_o * a));
            }
            add_b(pi, &(at_o * e));
            add_b(pj, &(bt_o * e));
        }
        for g in &self.gps {
            let p = &poses[g.node];
            let e = Vector2::new(p.x, p.y) - g.position;
            let mut m = Matrix3::zeros();
            m.fixed_view_mut::<2, 2>(0, 0).copy_from(&g.info);
            add_diag(&mut h, pos[g.node], &m);
            let ge = g.info * e;
            add_b(pos[g.node], &Vector3::new(ge[0], ge[1], 0.0));
        }
        (h, b)
    }

    /// Batch Gauss–Newton over all node poses. Accepted steps never increase
    /// the cost; after `max_iterations` the best iterate is kept and the
    /// report is flagged as not converged.
    pub fn optimize(&mut self, opts: &OptimizeOptions) -> OptimizeReport {
        let n = self.nodes.len();
        let (pos, first) = self.structure();
        let mut poses: Vec<Pose> = self.nodes.iter().map(|n| n.pose).collect();
        let initial_cost = self.cost_of(&poses);
        let mut cost = initial_cost;
        let mut lambda = 0.0f64;
        let mut iterations = 0;
        let mut damped_steps = 0;
        let mut converged = false;

        while iterations < opts.max_iterations {
            iterations += 1;
            let (h0, b) = self.assemble(&poses, &pos, &first);
            let mut accepted = None;
            for _attempt in 0..12 {
                let mut h = h0.clone();
                if lambda > 0.0 {
                    for r in 0..3 * n {
                        let d = h.get(r, r);
                        h.add(r, r, lambda * d.max(1e-9));
                    }
                }
                if h.factor().is_ok() {
                    let step = h.solve(&b);
                    let trial: Vec<Pose> = poses
                        .iter()
                        .enumerate()
                        .map(|(v, p)| {
                            let k = 3 * pos[v];
                            Pose::new(p.x - step[k], p.y - step[k + 1], p.psi - step[k + 2])
                        })
                        .collect();
                    let c = self.cost_of(&trial);
                    let max_step = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
                    if c.is_finite() && c <= cost {
                        accepted = Some((trial, c, max_step));
                        break;
                    }
                    if max_step < 1e-12 {
                        // no representable progress left
                        accepted = Some((poses.clone(), cost, 0.0));
                        break;
                    }
                }
                lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
            }
            let Some((trial, c, max_step)) = accepted else {
                converged = true;
                break;
            };
            if lambda > 0.0 {
                damped_steps += 1;
                lambda = if lambda < 1e-8 { 0.0 } else { lambda * 0.1 };
            }
            let decrease = cost - c;
            poses = trial;
            cost = c;
            if decrease <= opts.tol * (1.0 + cost) || max_step < 1e-12 {
                converged = true;
                break;
            }
        }
        for (node, p) in self.nodes.iter_mut().zip(poses) {
            node.pose = p;
        }
        if !converged {
            log::warn!("pose graph optimisation hit {} iterations", opts.max_iterations);
        }
        OptimizeReport {
            iterations,
            initial_cost,
            final_cost: cost,
            converged,
            damped_steps,
        }
    }

    /// Plain-text export: `VERTEX_SE2`, `EDGE_SE2` (upper-triangular
    /// information), `EDGE_SE2_XY` for GPS fixes and a `FIX` line for node 0.
    pub fn write_g2o<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in &self.nodes {
            writeln!(w, "VERTEX_SE2 {} {:.9} {:.9} {:.9}", n.id, n.pose.x, n.pose.y, n.pose.psi)?;
        }
        writeln!(w, "FIX 0")?;
        for f in &self.relative {
            let i = &f.info;
            writeln!(
                w,
                "EDGE_SE2 {} {} {:.9} {:.9} {:.9} {} {} {} {} {} {}",
                f.from, f.to, f.delta.x, f.delta.y, f.delta.psi,
                i[(0, 0)], i[(0, 1)], i[(0, 2)], i[(1, 1)], i[(1, 2)], i[(2, 2)]
            )?;
        }
        for g in &self.gps {
            let i = &g.info;
            writeln!(
                w,
                "EDGE_SE2_XY {} {:.9} {:.9} {} {} {}",
                g.node, g.position[0], g.position[1], i[(0, 0)], i[(0, 1)], i[(1, 1)]
            )?;
        }
        Ok(())
    }
}

/// Loop-search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub radius: f64,
    /// Sub-keyframe window size; the `2·m_sub` most recent nodes are excluded.
    pub m_sub: usize,
    /// Minimum number of nodes between consecutive closures.
    pub cooldown: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            radius: 15.0,
            m_sub: 12,
            cooldown: 12,
        }
    }
}

impl LoopConfig {
    pub fn exclusion(&self) -> usize {
        2 * self.m_sub
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlamConfig {
    pub gate: KeyframeGate,
    pub loops: LoopConfig,
    /// Diagonals of the odometry, GPS and loop information matrices.
    pub odom_info: [f64; 3],
    pub gps_info: [f64; 2],
    pub loop_info: [f64; 3],
    pub use_gps: bool,
    pub use_loops: bool,
    pub optimize: OptimizeOptions,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            gate: KeyframeGate::default(),
            loops: LoopConfig::default(),
            odom_info: [100.0, 100.0, 400.0],
            gps_info: [25.0, 25.0],
            loop_info: [400.0, 400.0, 1600.0],
            use_gps: true,
            use_loops: true,
            optimize: OptimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyframeEvent {
    pub node: usize,
    pub loop_closed: Option<usize>,
    pub gps_attached: bool,
    pub report: OptimizeReport,
    /// Wall-clock optimisation time, milliseconds.
    pub solve_ms: f64,
}

/// Keyframe pipeline on top of a [`PoseGraph`]: gates odometry, attaches
/// GPS, searches for and closes loops, and re-optimises.
#[derive(Debug, Clone)]
pub struct SlamSession {
    cfg: SlamConfig,
    graph: PoseGraph,
    last_key_odom: Pose,
}

impl SlamSession {
    /// `map_pose` seeds node 0; `odom` is the odometry reading at that instant.
    pub fn new(cfg: SlamConfig, map_pose: Pose, odom: Pose, t: f64) -> Self {
        Self {
            cfg,
            graph: PoseGraph::new(map_pose, t),
            last_key_odom: odom,
        }
    }

    pub fn config(&self) -> &SlamConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    /// Current pose estimate: the last keyframe plus odometry since.
    pub fn estimate(&self, odom: &Pose) -> Pose {
        self.graph.last().pose.compose(&self.last_key_odom.between(odom))
    }

    /// Feeds one odometry reading. A keyframe is created when the gate
    /// admits the motion since the previous one.
    pub fn update<F>(
        &mut self,
        t: f64,
        odom: &Pose,
        gps: Option<(f64, f64)>,
        registration: F,
    ) -> Result<Option<KeyframeEvent>, SlamError>
    where
        F: FnOnce(usize, usize) -> Option<Pose>,
    {
        if !self.cfg.gate.admits(&self.last_key_odom, odom) {
            return Ok(None);
        }
        let delta = self.last_key_odom.between(odom);
        let node = self
            .graph
            .add_keyframe(delta, Matrix3::from_diagonal(&Vector3::from(self.cfg.odom_info)), t)?;
        self.last_key_odom = *odom;
        let mut gps_attached = false;
        if self.cfg.use_gps {
            if let Some(p) = gps {
                self.graph
                    .add_gps(node, p, Matrix2::from_diagonal(&Vector2::from(self.cfg.gps_info)))?;
                gps_attached = true;
            }
        }
        let mut loop_closed = None;
        if self.cfg.use_loops {
            if let Some(old) = self.graph.detect_loop(node, &self.cfg.loops) {
                let info = Matrix3::from_diagonal(&Vector3::from(self.cfg.loop_info));
                if self.graph.close_loop(old, node, info, registration)? {
                    loop_closed = Some(old);
                }
            }
        }
        let start = Instant::now();
        let report = self.graph.optimize(&self.cfg.optimize);
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Some(KeyframeEvent {
            node,
            loop_closed,
            gps_attached,
            report,
            solve_ms,
        }))
    }
}

/// Simulated odometry front-end: integrates true motion increments with a
/// multiplicative scale bias and random-walk noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryModel {
    /// Fractional scale error on translation and rotation increments.
    pub bias: f64,
    /// Translation noise, m per √m travelled.
    pub trans_noise: f64,
    /// Heading noise, rad per √m travelled.
    pub rot_noise: f64,
}

impl Default for OdometryModel {
    fn default() -> Self {
        Self {
            bias: 0.01,
            trans_noise: 0.005,
            rot_noise: 0.001,
        }
    }
}

impl OdometryModel {
    /// Corrupts one true increment.
    pub fn corrupt<R: Rng + ?Sized>(&self, delta: &Pose, rng: &mut R) -> Pose {
        let d = delta.x.hypot(delta.y);
        let s = d.sqrt();
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let k = 1.0 + self.bias;
        Pose::new(
            k * delta.x + self.trans_noise * s * n(),
            k * delta.y + self.trans_noise * s * n(),
            k * delta.psi + self.rot_noise * s * n(),
        )
    }
}
