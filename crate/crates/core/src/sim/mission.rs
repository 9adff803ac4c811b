//! Closed-loop mission runner.

use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::metrics::{ChannelRmse, MetricsReport, RmsAccumulator, TimingReport, TimingStats};
use super::{Scenario, SimError};
use crate::angle::wrap_angle;
use crate::dynamics::{
    body_to_inertial, measure, ControlInput, Disturbance, Pose, VesselModel, VesselState,
};
use crate::nmhe::{MheConfig, MovingHorizonEstimator};
use crate::nmpc::{NmpcConfig, NmpcController, ReferenceWindow};
use crate::planner::{plan, reference_window_from, OccupancyGrid, PlannedPath};
use crate::slam::{PoseGraph, SlamSession};

/// Position and heading tolerance for a goal, and how long they must hold.
pub const GOAL_RADIUS: f64 = 0.3;
pub const GOAL_HEADING: f64 = 0.2;
pub const GOAL_HOLD: f64 = 1.0;
/// Transient excluded from the tracking metrics after each new goal.
pub const SETTLE_TIME: f64 = 2.0;

/// Independent random streams, one per noise source.
mod stream {
    pub const SENSORS: u64 = 1;
    pub const GPS: u64 = 2;
    pub const ODOMETRY: u64 = 3;
    pub const DISTURBANCE: u64 = 4;
    pub const REGISTRATION: u64 = 5;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub t: f64,
    pub truth: VesselState,
    pub estimate: VesselState,
    pub reference: VesselState,
    pub forces: ControlInput,
    pub goal: usize,
    pub on_track: bool,
    pub nmpc_iterations: usize,
    pub nmpc_cost: f64,
    pub nmpc_degraded: bool,
    pub active_bounds: usize,
    pub mhe_iterations: usize,
    pub mhe_fallback: bool,
    pub slam_pose: Pose,
    pub slam_nodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MissionLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "t,x,y,psi,u,v,r,x_hat,y_hat,psi_hat,u_hat,v_hat,r_hat,\
x_ref,y_ref,psi_ref,u_ref,f1,f2,f3,f4,goal,on_track,nmpc_iter,nmpc_cost,nmpc_degraded,\
active_bounds,mhe_iter,mhe_fallback,slam_x,slam_y,slam_psi,slam_nodes";

impl MissionLog {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.rows {
            let q = r.truth.as_vector();
            let e = r.estimate.as_vector();
            let f = r.forces.as_array();
            write!(w, "{:.2}", r.t)?;
            for v in q.iter().chain(e.iter()) {
                write!(w, ",{v:.6}")?;
            }
            write!(
                w,
                ",{:.6},{:.6},{:.6},{:.6}",
                r.reference.pose.x, r.reference.pose.y, r.reference.pose.psi, r.reference.vel.u
            )?;
            for v in f {
                write!(w, ",{v:.6}")?;
            }
            writeln!(
                w,
                ",{},{},{},{:.6e},{},{},{},{},{:.6},{:.6},{:.6},{}",
                r.goal,
                u8::from(r.on_track),
                r.nmpc_iterations,
                r.nmpc_cost,
                u8::from(r.nmpc_degraded),
                r.active_bounds,
                r.mhe_iterations,
                u8::from(r.mhe_fallback),
                r.slam_pose.x,
                r.slam_pose.y,
                r.slam_pose.psi,
                r.slam_nodes
            )?;
        }
        Ok(())
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct MissionOutput {
    pub log: MissionLog,
    pub metrics: MetricsReport,
    pub timing: TimingReport,
    pub graph: PoseGraph,
    /// True keyframe poses, indexed like the graph nodes.
    pub keyframe_truth: Vec<Pose>,
    pub paths: Vec<PlannedPath>,
    pub grid: OccupancyGrid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the scenario duration.
    pub ticks: Option<usize>,
}

struct GoalTracker {
    index: usize,
    path: Option<PlannedPath>,
    progress: f64,
    settle_until: f64,
    hold_since: Option<f64>,
    reached: Vec<f64>,
}

/// Runs a scenario closed-loop. Configuration problems are reported before
/// the first tick; solver trouble inside the loop is logged and counted.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<MissionOutput, SimError> {
    let raw_grid = scenario.load_grid()?;
    scenario.validate(&raw_grid)?;
    let grid = raw_grid.inflated(scenario.inflation);
    let dt = scenario.dt;
    let ticks = opts.ticks.unwrap_or_else(|| scenario.ticks());

    let plant = VesselModel::new(scenario.plant, Default::default())?;
    let model = VesselModel::new(scenario.controller_model(), Default::default())?;
    let mut nmpc_cfg = NmpcConfig::for_model(model);
    nmpc_cfg.dt = dt;
    nmpc_cfg.horizon = scenario.controller.horizon;
    nmpc_cfg.max_sqp_iterations = scenario.controller.max_sqp_iterations;
    let horizon = nmpc_cfg.horizon;
    let mut controller = NmpcController::new(nmpc_cfg)?;
    let mut mhe_cfg = MheConfig::for_model(model);
    mhe_cfg.dt = dt;
    mhe_cfg.window = scenario.estimator.window;
    let mut estimator = MovingHorizonEstimator::new(mhe_cfg)?;
    let mut planner_cfg = scenario.planner;
    planner_cfg.dt = dt;

    let mut rng_sensors = rng_for(scenario.seed, stream::SENSORS);
    let mut rng_gps = rng_for(scenario.seed, stream::GPS);
    let mut rng_odom = rng_for(scenario.seed, stream::ODOMETRY);
    let mut rng_dist = rng_for(scenario.seed, stream::DISTURBANCE);
    let mut rng_reg = rng_for(scenario.seed, stream::REGISTRATION);

    let ds = &scenario.disturbance;
    let gust_a = (-dt / ds.gust_tau).exp();
    let gust_b = (1.0 - gust_a * gust_a).sqrt();
    let mut gust = Vector3::zeros();

    let mut q = scenario.initial_state;
    let mut u_prev = ControlInput::zero();
    let mut odom = Pose::identity();
    let mut slam: Option<SlamSession> = None;
    let mut keyframe_truth: Vec<Pose> = Vec::new();
    let mut goals = GoalTracker {
        index: 0,
        path: None,
        progress: 0.0,
        settle_until: 0.0,
        hold_since: None,
        reached: Vec::new(),
    };
    let mut paths = Vec::new();

    let mut log = MissionLog::default();
    let mut pos_acc = RmsAccumulator::default();
    let mut head_acc = RmsAccumulator::default();
    let mut est_acc = [RmsAccumulator::default(); 6];
    let mut meas_acc = RmsAccumulator::default();
    let mut timing = TimingStats::default();
    let (mut violations, mut max_force, mut degraded, mut fallbacks) = (0usize, 0.0f64, 0usize, 0usize);
    let mut plan_failures = 0usize;
    let (u_min, u_max) = (controller.config().u_min, controller.config().u_max);

    for k in 0..ticks {
        let t = k as f64 * dt;
        let tick_start = Instant::now();

        // plant: apply the previous command over [t - dt, t]
        let clock = Instant::now();
        if k > 0 {
            let rot = body_to_inertial(&q.pose);
            let env = rot.transpose() * Vector3::new(ds.force[0], ds.force[1], 0.0)
                + Vector3::new(0.0, 0.0, ds.moment)
                + gust;
            let dist = Disturbance::new(env[0], env[1], env[2]);
            let prev = q.pose;
            q = plant.advance(&q, &u_prev, &dist, dt, scenario.plant_substeps)?;
            for i in 0..3 {
                gust[i] = gust_a * gust[i] + ds.gust_sigma[i] * gust_b * gauss(&mut rng_dist);
            }
            odom = odom.compose(&scenario.odometry.corrupt(&prev.between(&q.pose), &mut rng_odom));
        }
        timing.plant.push(clock.elapsed());

        // sensors
        let clock = Instant::now();
        let z = measure(&q, &u_prev, &scenario.noise, &mut rng_sensors);
        let gps_fix = scenario.gps.available(t).then(|| {
            (
                q.pose.x + scenario.gps.sigma * gauss(&mut rng_gps),
                q.pose.y + scenario.gps.sigma * gauss(&mut rng_gps),
            )
        });
        timing.sensors.push(clock.elapsed());

        // estimator
        let clock = Instant::now();
        estimator.push(z, u_prev, t)?;
        let est = estimator.estimate()?;
        let q_hat = est.estimate;
        if est.fallback {
            fallbacks += 1;
        }
        timing.nmhe.push(clock.elapsed());

        // SLAM back-end
        let clock = Instant::now();
        let session = slam.get_or_insert_with(|| {
            keyframe_truth.push(q.pose);
            SlamSession::new(scenario.slam, Pose::new(z.x(), z.y(), z.psi()), odom, t)
        });
        let truth_now = q.pose;
        let reg_sigma = scenario.registration_sigma;
        let truth_nodes = &keyframe_truth;
        let rng = &mut rng_reg;
        if let Some(ev) = session.update(t, &odom, gps_fix, |from, _to| {
            let d = truth_nodes[from].between(&truth_now);
            Some(Pose::new(
                d.x + reg_sigma[0] * gauss(rng),
                d.y + reg_sigma[1] * gauss(rng),
                d.psi + reg_sigma[2] * gauss(rng),
            ))
        })? {
            keyframe_truth.push(q.pose);
            timing.slam_optimize.push_ms(ev.solve_ms);
        }
        let slam_pose = session.estimate(&odom);
        let slam_nodes = session.graph().len();
        timing.slam.push(clock.elapsed());

        // planner
        let clock = Instant::now();
        let refs = reference_for(
            &mut goals,
            scenario,
            &grid,
            &planner_cfg,
            &q_hat,
            t,
            horizon,
            &mut paths,
            &mut plan_failures,
        );
        timing.planner.push(clock.elapsed());

        // controller
        let clock = Instant::now();
        let (u, sol_stats) = match controller.solve(&q_hat, &refs) {
            Ok(sol) => {
                if sol.degraded {
                    degraded += 1;
                }
                (sol.first, (sol.iterations, sol.cost, sol.degraded, sol.active_bounds))
            }
            Err(e) => {
                log::warn!("t={t:.1}: controller failed ({e}); holding zero thrust");
                degraded += 1;
                controller.reset();
                (ControlInput::zero(), (0, f64::NAN, true, 0))
            }
        };
        timing.nmpc.push(clock.elapsed());
        timing.tick.push(tick_start.elapsed());

        for (i, f) in u.as_array().into_iter().enumerate() {
            max_force = max_force.max(f.abs());
            if f > u_max[i] || f < u_min[i] {
                violations += 1;
            }
        }

        let reference = refs.states[0];
        let on_track = goals.path.is_some() && t >= goals.settle_until && goals.index < scenario.goals.len();
        if on_track {
            pos_acc.push(truth_now.distance_to(&reference.pose));
            head_acc.push(wrap_angle(truth_now.psi - reference.pose.psi));
        }
        let qv = q.as_vector();
        let ev = q_hat.as_vector();
        for i in 0..6 {
            let d = ev[i] - qv[i];
            est_acc[i].push(if i == 2 { wrap_angle(d) } else { d });
        }
        meas_acc.push(q.pose.distance_to(&Pose::new(z.x(), z.y(), 0.0)));

        log.rows.push(LogRow {
            t,
            truth: q,
            estimate: q_hat,
            reference,
            forces: u,
            goal: goals.index,
            on_track,
            nmpc_iterations: sol_stats.0,
            nmpc_cost: sol_stats.1,
            nmpc_degraded: sol_stats.2,
            active_bounds: sol_stats.3,
            mhe_iterations: est.iterations,
            mhe_fallback: est.fallback,
            slam_pose,
            slam_nodes,
        });
        u_prev = u;
    }

    let slam = slam.expect("at least one tick");
    let graph = slam.graph().clone();
    let slam_return_error = return_error(&graph, &keyframe_truth);
    let slam_rmse = {
        let mut a = RmsAccumulator::default();
        for (n, tr) in graph.nodes().iter().zip(&keyframe_truth) {
            a.push(n.pose.distance_to(tr));
        }
        a.rms()
    };
    let metrics = MetricsReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        ticks,
        dt,
        position_rmse: pos_acc.rms(),
        heading_rmse: head_acc.rms(),
        on_track_samples: pos_acc.count(),
        estimation_rmse: ChannelRmse::from_accumulators(&est_acc),
        measurement_position_rms: meas_acc.rms(),
        slam_return_error,
        slam_position_rmse: slam_rmse,
        slam_nodes: graph.len(),
        loop_closures: graph.loop_count(),
        goals_total: scenario.goals.len(),
        goals_reached: goals.reached.len(),
        goal_times: goals.reached.clone(),
        force_violations: violations,
        max_abs_force: max_force,
        nmpc_degraded_solves: degraded,
        mhe_fallbacks: fallbacks,
        plan_failures,
    };
    Ok(MissionOutput {
        log,
        metrics,
        timing: timing.report(),
        graph,
        keyframe_truth,
        paths,
        grid,
    })
}

/// Relative translation error between the first and last keyframe.
pub fn return_error(graph: &PoseGraph, truth: &[Pose]) -> f64 {
    let n = graph.len().min(truth.len());
    if n < 2 {
        return 0.0;
    }
    let est = graph.nodes()[0].pose.between(&graph.nodes()[n - 1].pose);
    let tru = truth[0].between(&truth[n - 1]);
    (est.x - tru.x).hypot(est.y - tru.y)
}

#[allow(clippy::too_many_arguments)]
fn reference_for(
    goals: &mut GoalTracker,
    scenario: &Scenario,
    grid: &OccupancyGrid,
    cfg: &crate::planner::PlannerConfig,
    q_hat: &VesselState,
    t: f64,
    horizon: usize,
    paths: &mut Vec<PlannedPath>,
    failures: &mut usize,
) -> ReferenceWindow {
    let dt = scenario.dt;
    if goals.index >= scenario.goals.len() {
        // mission complete: hold the final goal
        let hold = match &goals.path {
            Some(p) => VesselState::at_rest(p.goal()),
            None => VesselState::at_rest(q_hat.pose),
        };
        return ReferenceWindow::stationary(hold, horizon);
    }
    let goal = scenario.goals[goals.index];
    if goals.path.is_none() || scenario.replan_every_tick {
        match plan(grid, &q_hat.pose, (goal[0], goal[1]), cfg) {
            Ok(p) => {
                if goals.path.is_none() {
                    goals.settle_until = t + SETTLE_TIME;
                    paths.push(p.clone());
                }
                goals.path = Some(p);
                goals.progress = 0.0;
            }
            Err(e) => {
                *failures += 1;
                log::warn!("t={t:.1}: planning to goal {} failed: {e}", goals.index);
                if goals.path.is_none() {
                    return ReferenceWindow::stationary(VesselState::at_rest(q_hat.pose), horizon);
                }
            }
        }
    }
    let path = goals.path.as_ref().expect("planned above");
    let s = path.project(
        q_hat.pose.x,
        q_hat.pose.y,
        goals.progress - 0.5,
        goals.progress + 2.0,
    );
    goals.progress = s;
    let refs = reference_window_from(path, s, horizon, dt);

    let gp = path.goal();
    let near = q_hat.pose.distance_to(&gp) < GOAL_RADIUS
        && wrap_angle(q_hat.pose.psi - gp.psi).abs() < GOAL_HEADING;
    if near {
        let since = *goals.hold_since.get_or_insert(t);
        if t - since >= GOAL_HOLD - 1e-9 {
            goals.reached.push((t * 10.0).round() / 10.0);
            goals.index += 1;
            goals.hold_since = None;
            if goals.index < scenario.goals.len() {
                goals.path = None;
            }
        }
    } else {
        goals.hold_since = None;
    }
    refs
}
