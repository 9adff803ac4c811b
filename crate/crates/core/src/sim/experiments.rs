//! Offline experiments: parameter identification, SLAM ablation, sweeps.

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::mission::{run, RunOptions};
use super::{MetricsReport, Scenario, SimError};
use crate::dynamics::{HydroParams, Pose, ThrusterGeometry, VesselModel};
use crate::slam::{OdometryModel, PoseGraph, SlamConfig, SlamSession};
use crate::sysid::{identify, record_trial, sinusoidal_controls, IdentConfig, IdentDataset};

#[derive(Debug, Clone)]
pub struct IdentExperimentConfig {
    pub trials: usize,
    pub duration: f64,
    pub dt: f64,
    /// RK4 substeps per sample when recording on the plant.
    pub substeps: usize,
    /// Velocity measurement noise, m/s (rad/s for yaw rate).
    pub sigma_v: f64,
    pub seed: u64,
    pub truth: HydroParams,
    pub ident: IdentConfig,
}

impl Default for IdentExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 5,
            duration: 150.0,
            dt: 0.1,
            substeps: 4,
            sigma_v: 0.0,
            seed: 1,
            truth: HydroParams::identified(),
            ident: IdentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentExperimentReport {
    pub truth: HydroParams,
    pub init: HydroParams,
    pub identified: HydroParams,
    /// `|ξ̂ − ξ| / ξ` per parameter, in `HydroParams::NAMES` order.
    pub relative_error: [f64; 6],
    pub max_relative_error: f64,
    pub rmse: [f64; 3],
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub hessian_condition: f64,
    pub trials: usize,
    pub samples: usize,
    pub sigma_v: f64,
}

/// Records sinusoidal trials on the true plant and identifies them jointly.
pub fn ident_experiment(cfg: &IdentExperimentConfig) -> Result<(IdentExperimentReport, Vec<IdentDataset>), SimError> {
    let plant = VesselModel::new(cfg.truth, ThrusterGeometry::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let datasets = (0..cfg.trials)
        .map(|k| {
            let controls = sinusoidal_controls(k, cfg.duration, cfg.dt);
            record_trial(&plant, &controls, cfg.dt, cfg.substeps, cfg.sigma_v, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = identify_datasets(&datasets, cfg.truth, &cfg.ident)?;
    Ok((
        IdentExperimentReport {
            sigma_v: cfg.sigma_v,
            ..report
        },
        datasets,
    ))
}

/// Identifies recorded datasets and scores them against `truth`.
pub fn identify_datasets(
    datasets: &[IdentDataset],
    truth: HydroParams,
    ident: &IdentConfig,
) -> Result<IdentExperimentReport, SimError> {
    let res = identify(datasets, &ThrusterGeometry::default(), ident)?;
    let (t, p) = (truth.to_array(), res.params.to_array());
    let rel: [f64; 6] = std::array::from_fn(|i| (p[i] - t[i]).abs() / t[i]);
    Ok(IdentExperimentReport {
        truth,
        init: ident.init,
        identified: res.params,
        relative_error: rel,
        max_relative_error: rel.iter().copied().fold(0.0, f64::max),
        rmse: res.rmse,
        cost: res.cost,
        iterations: res.report.iterations,
        converged: res.converged,
        hessian_condition: res.hessian_condition,
        trials: datasets.len(),
        samples: datasets.iter().map(IdentDataset::len).sum(),
        sigma_v: 0.0,
    })
}

/// Poses along a counter-clockwise rounded square of the given perimeter,
/// starting and ending at the origin heading east.
pub fn rounded_square(perimeter: f64, corner_radius: f64, spacing: f64) -> Vec<Pose> {
    let arc = FRAC_PI_2 * corner_radius;
    let straight = perimeter / 4.0 - arc;
    assert!(straight > 0.0, "corner radius too large for the perimeter");
    let n = (perimeter / spacing).round() as usize;
    (0..=n)
        .map(|k| {
            let s = (k as f64 * spacing).min(perimeter);
            pose_on_square(s, straight, corner_radius)
        })
        .collect()
}

fn pose_on_square(s: f64, straight: f64, r: f64) -> Pose {
    let side = straight + FRAC_PI_2 * r;
    let k = ((s / side).floor() as usize).min(3);
    let local = s - k as f64 * side;
    // start of side k and its heading
    let mut p = Pose::identity();
    for _ in 0..k {
        p = p.compose(&Pose::new(straight, 0.0, 0.0));
        p = p.compose(&Pose::new(r, r, FRAC_PI_2));
    }
    if local <= straight {
        p.compose(&Pose::new(local, 0.0, 0.0))
    } else {
        let a = (local - straight) / r;
        p.compose(&Pose::new(straight, 0.0, 0.0))
            .compose(&Pose::new(r * a.sin(), r * (1.0 - a.cos()), a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlamExperimentConfig {
    pub perimeter: f64,
    pub corner_radius: f64,
    /// Odometry sample spacing along the trajectory, meters.
    pub spacing: f64,
    pub odometry: OdometryModel,
    pub gps_sigma: f64,
    /// GPS alternates `gps_on` meters available, `gps_off` meters missing.
    pub gps_on: f64,
    pub gps_off: f64,
    pub registration_sigma: [f64; 3],
    pub seed: u64,
    pub slam: SlamConfig,
}

impl Default for SlamExperimentConfig {
    fn default() -> Self {
        Self {
            perimeter: 500.0,
            corner_radius: 5.0,
            spacing: 0.1,
            odometry: OdometryModel::default(),
            gps_sigma: 0.2,
            gps_on: 25.0,
            gps_off: 25.0,
            registration_sigma: [0.05, 0.05, 0.005],
            seed: 1,
            slam: SlamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationResult {
    pub name: String,
    pub use_gps: bool,
    pub use_loops: bool,
    /// Relative translation error between the first and last keyframe.
    pub return_error: f64,
    /// Absolute position error over the optimised keyframes.
    pub max_abs_error: f64,
    pub rms_abs_error: f64,
    /// Absolute error of the newest keyframe right after insertion.
    pub max_online_error: f64,
    pub nodes: usize,
    pub loop_closures: usize,
    pub gps_factors: usize,
    #[serde(skip)]
    pub online_error: Vec<(f64, f64)>,
    #[serde(skip)]
    pub solve_ms: Vec<f64>,
    #[serde(skip)]
    pub graph: Option<PoseGraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlamAblationReport {
    pub perimeter: f64,
    pub results: Vec<AblationResult>,
}

impl SlamAblationReport {
    pub fn get(&self, name: &str) -> Option<&AblationResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

/// Drives one SLAM configuration along the synthetic loop. The odometry,
/// GPS and registration noise streams depend only on the seed, so every
/// configuration sees the same measurements.
pub fn run_slam_loop(cfg: &SlamExperimentConfig, use_gps: bool, use_loops: bool, name: &str) -> AblationResult {
    let truth = rounded_square(cfg.perimeter, cfg.corner_radius, cfg.spacing);
    let mut slam_cfg = cfg.slam;
    slam_cfg.use_gps = use_gps;
    slam_cfg.use_loops = use_loops;
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(k);
        r
    };
    let (mut rng_odom, mut rng_gps, mut rng_reg) = (stream(3), stream(2), stream(5));
    let n = |r: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(r) };

    let mut odom = truth[0];
    let mut session = SlamSession::new(slam_cfg, truth[0], odom, 0.0);
    let mut node_truth = vec![truth[0]];
    let mut online = Vec::new();
    let mut solve_ms = Vec::new();
    for k in 1..truth.len() {
        let d = truth[k - 1].between(&truth[k]);
        odom = odom.compose(&cfg.odometry.corrupt(&d, &mut rng_odom));
        let s = k as f64 * cfg.spacing;
        let fix_noise = (n(&mut rng_gps), n(&mut rng_gps));
        let gps = (s % (cfg.gps_on + cfg.gps_off) < cfg.gps_on).then(|| {
            (
                truth[k].x + cfg.gps_sigma * fix_noise.0,
                truth[k].y + cfg.gps_sigma * fix_noise.1,
            )
        });
        let reg_noise = [n(&mut rng_reg), n(&mut rng_reg), n(&mut rng_reg)];
        let sig = cfg.registration_sigma;
        let tk = truth[k];
        let nt = &node_truth;
        let ev = session
            .update(s, &odom, gps, |from, _| {
                let d = nt[from].between(&tk);
                Some(Pose::new(
                    d.x + sig[0] * reg_noise[0],
                    d.y + sig[1] * reg_noise[1],
                    d.psi + sig[2] * reg_noise[2],
                ))
            })
            .expect("diagonal information matrices are valid");
        if let Some(ev) = ev {
            node_truth.push(tk);
            solve_ms.push(ev.solve_ms);
            online.push((s, session.graph().last().pose.distance_to(&tk)));
        }
    }
    let g = session.graph();
    let errors: Vec<f64> = g
        .nodes()
        .iter()
        .zip(&node_truth)
        .map(|(a, b)| a.pose.distance_to(b))
        .collect();
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    AblationResult {
        name: name.to_string(),
        use_gps,
        use_loops,
        return_error: super::mission::return_error(g, &node_truth),
        max_abs_error: errors.iter().copied().fold(0.0, f64::max),
        rms_abs_error: rms,
        max_online_error: online.iter().map(|o| o.1).fold(0.0, f64::max),
        nodes: g.len(),
        loop_closures: g.loop_count(),
        gps_factors: g.gps_factors().len(),
        online_error: online,
        solve_ms,
        graph: Some(g.clone()),
    }
}

/// The four ablation configurations on the synthetic loop.
pub fn slam_experiment(cfg: &SlamExperimentConfig) -> SlamAblationReport {
    let configs = [
        ("odometry", false, false),
        ("gps", true, false),
        ("loop", false, true),
        ("both", true, true),
    ];
    SlamAblationReport {
        perimeter: cfg.perimeter,
        results: configs
            .iter()
            .map(|&(name, gps, lp)| run_slam_loop(cfg, gps, lp, name))
            .collect(),
    }
}

/// Parses `start:end:count` (inclusive, evenly spaced) or a comma list.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, SimError> {
    let bad = || SimError::Scenario(format!("bad range `{spec}`; use start:end:count or a,b,c"));
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(bad());
        };
        let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        match n {
            0 => Err(bad()),
            1 => Ok(vec![a]),
            _ => Ok((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()),
        }
    } else {
        spec.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

/// Returns a copy of `base` with the dotted JSON field `param` set to `value`
/// (e.g. `noise.sigma_pos`, `disturbance.force.0`, `seed`).
pub fn with_override(base: &Scenario, param: &str, value: f64) -> Result<Scenario, SimError> {
    let mut doc = serde_json::to_value(base).map_err(|e| SimError::Scenario(e.to_string()))?;
    let mut slot = &mut doc;
    for key in param.split('.') {
        slot = match slot {
            serde_json::Value::Object(m) => m.get_mut(key),
            serde_json::Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| SimError::Scenario(format!("unknown scenario field `{param}`")))?;
    }
    *slot = match slot {
        serde_json::Value::Number(n) if n.is_u64() || n.is_i64() => {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(SimError::Scenario(format!("`{param}` takes non-negative integers")));
            }
            serde_json::Value::from(value as u64)
        }
        serde_json::Value::Number(_) => serde_json::Value::from(value),
        serde_json::Value::Bool(_) => serde_json::Value::Bool(value != 0.0),
        _ => return Err(SimError::Scenario(format!("`{param}` is not numeric"))),
    };
    let mut s: Scenario = serde_json::from_value(doc).map_err(|e| SimError::Scenario(e.to_string()))?;
    s.base_dir = base.base_dir.clone();
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: MetricsReport,
}

/// Runs `base` once per value of `param`.
pub fn sweep(base: &Scenario, param: &str, values: &[f64], opts: &RunOptions) -> Result<Vec<SweepPoint>, SimError> {
    values
        .iter()
        .map(|&v| {
            let s = with_override(base, param, v)?;
            Ok(SweepPoint {
                value: v,
                metrics: run(&s, opts)?.metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounded_square_is_closed_and_smooth() {
        let p = rounded_square(500.0, 5.0, 0.1);
        assert_eq!(p.len(), 5001);
        let last = p.last().unwrap();
        assert!(last.distance_to(&p[0]) < 1e-9, "{last:?}");
        assert!(crate::angle::wrap_angle(last.psi).abs() < 1e-9);
        for w in p.windows(2) {
            assert!((w[0].distance_to(&w[1]) - 0.1).abs() < 1e-3);
        }
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_range("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("a,b").is_err());
    }

    #[test]
    fn overrides() {
        let base = Scenario::river();
        let s = with_override(&base, "noise.sigma_pos", 0.05).unwrap();
        assert_eq!(s.noise.sigma_pos, 0.05);
        let s = with_override(&base, "disturbance.force.1", 2.0).unwrap();
        assert_eq!(s.disturbance.force, [1.0, 2.0]);
        let s = with_override(&base, "controller.horizon", 20.0).unwrap();
        assert_eq!(s.controller.horizon, 20);
        assert!(with_override(&base, "controller.horizon", 2.5).is_err());
        assert!(with_override(&base, "nope", 1.0).is_err());
        assert!(with_override(&base, "name", 1.0).is_err());
    }
}
