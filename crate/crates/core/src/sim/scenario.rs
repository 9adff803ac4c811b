//! Scenario files.
//!
//! A scenario is one JSON document. Only `name`, `goals` and `duration` are
//! required; everything else falls back to the defaults below. Relative map
//! paths resolve against the scenario file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{maps, SimError};
use crate::dynamics::{HydroParams, NoiseSpec, Pose, VesselState};
use crate::planner::{OccupancyGrid, PlannerConfig};
use crate::slam::{OdometryModel, SlamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    /// Name of a built-in map (`river`, `open`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// 8-bit PGM occupancy image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pgm: Option<PathBuf>,
    /// Resolution/origin sidecar; defaults to the PGM path with `.txt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<PathBuf>,
}

impl Default for MapSpec {
    fn default() -> Self {
        Self {
            builtin: Some("river".into()),
            pgm: None,
            sidecar: None,
        }
    }
}

/// Environmental forcing: a constant inertial-frame force plus first-order
/// Gauss–Markov gusts on each body-frame channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSpec {
    /// Constant inertial force (N) along x and y.
    pub force: [f64; 2],
    /// Constant yaw moment (N·m).
    pub moment: f64,
    /// Stationary standard deviations of the gust process (N, N, N·m).
    pub gust_sigma: [f64; 3],
    /// Gust correlation time, seconds.
    pub gust_tau: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            force: [0.0; 2],
            moment: 0.0,
            gust_sigma: [0.0; 3],
            gust_tau: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpsSpec {
    pub sigma: f64,
    /// `[start, end)` intervals in seconds with no fix.
    pub dropouts: Vec<[f64; 2]>,
}

impl Default for GpsSpec {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            dropouts: Vec::new(),
        }
    }
}

impl GpsSpec {
    pub fn available(&self, t: f64) -> bool {
        !self.dropouts.iter().any(|d| t >= d[0] && t < d[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSpec {
    pub horizon: usize,
    pub max_sqp_iterations: usize,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            horizon: 40,
            max_sqp_iterations: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    pub window: usize,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self { window: 20 }
    }
}

fn default_dt() -> f64 {
    0.1
}
fn default_substeps() -> usize {
    4
}
fn default_inflation() -> f64 {
    1.0
}
fn default_registration() -> [f64; 3] {
    [0.05, 0.05, 0.005]
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub map: MapSpec,
    /// Ordered goal positions in inertial meters.
    pub goals: Vec<[f64; 2]>,
    #[serde(default)]
    pub initial_state: VesselState,
    /// Parameters of the simulated plant.
    #[serde(default = "HydroParams::identified")]
    pub plant: HydroParams,
    /// Controller/estimator model; defaults to the plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<HydroParams>,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub gps: GpsSpec,
    #[serde(default)]
    pub odometry: OdometryModel,
    /// Loop-registration noise (m, m, rad).
    #[serde(default = "default_registration")]
    pub registration_sigma: [f64; 3],
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Mission length in seconds.
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub plant_substeps: usize,
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Obstacle inflation radius for planning, meters.
    #[serde(default = "default_inflation")]
    pub inflation: f64,
    /// Re-plan from the current estimate on every tick instead of once per goal.
    #[serde(default)]
    pub replan_every_tick: bool,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub slam: SlamConfig,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| SimError::Scenario(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_json(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// The multi-goal river mission used by the acceptance runs.
    pub fn river() -> Self {
        Self {
            name: "river".into(),
            map: MapSpec::default(),
            goals: vec![[26.0, 9.0], [54.0, 28.0], [84.0, 20.0], [92.0, 12.0]],
            initial_state: VesselState::at_rest(Pose::new(6.0, 8.0, 0.0)),
            plant: HydroParams::identified(),
            model: None,
            disturbance: DisturbanceSpec {
                force: [1.0, -1.5],
                moment: 0.0,
                gust_sigma: [1.0, 1.0, 0.3],
                gust_tau: 5.0,
            },
            noise: NoiseSpec::default(),
            gps: GpsSpec {
                sigma: 0.2,
                dropouts: vec![[60.0, 90.0], [180.0, 210.0]],
            },
            odometry: OdometryModel::default(),
            registration_sigma: default_registration(),
            seed: 7,
            duration: 300.0,
            dt: 0.1,
            plant_substeps: 4,
            planner: PlannerConfig::default(),
            inflation: 1.0,
            replan_every_tick: false,
            controller: ControllerSpec::default(),
            estimator: EstimatorSpec::default(),
            slam: SlamConfig::default(),
            base_dir: None,
        }
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn controller_model(&self) -> HydroParams {
        self.model.unwrap_or(self.plant)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn load_grid(&self) -> Result<OccupancyGrid, SimError> {
        match (&self.map.builtin, &self.map.pgm) {
            (_, Some(pgm)) => {
                let side = self.map.sidecar.as_ref().map(|s| self.resolve(s));
                Ok(OccupancyGrid::load(self.resolve(pgm), side.as_deref())?)
            }
            (Some(name), None) => maps::builtin(name)
                .ok_or_else(|| SimError::Scenario(format!("unknown built-in map `{name}`"))),
            (None, None) => Err(SimError::Scenario("map needs `builtin` or `pgm`".into())),
        }
    }

    /// Checks everything that can be checked before the loop starts.
    pub fn validate(&self, grid: &OccupancyGrid) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if !(self.dt > 0.0 && self.dt <= crate::dynamics::MAX_STEP) {
            return bad(format!("dt = {} must lie in (0, 0.5]", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if self.goals.is_empty() {
            return bad("at least one goal is required".into());
        }
        if self.plant_substeps == 0 {
            return bad("plant_substeps must be at least 1".into());
        }
        if !(self.inflation >= 0.0) || !(self.gps.sigma >= 0.0) {
            return bad("inflation and GPS sigma must be non-negative".into());
        }
        if self.registration_sigma.iter().any(|s| !(*s >= 0.0)) {
            return bad("registration sigmas must be non-negative".into());
        }
        let noise = [self.noise.sigma_pos, self.noise.sigma_psi, self.noise.sigma_r, self.noise.sigma_f];
        if noise.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise sigmas must be finite and non-negative".into());
        }
        if self.disturbance.gust_tau <= 0.0 {
            return bad("gust_tau must be positive".into());
        }
        self.plant.validate().map_err(|e| SimError::Scenario(format!("plant: {e}")))?;
        self.controller_model()
            .validate()
            .map_err(|e| SimError::Scenario(format!("model: {e}")))?;
        let p = &self.initial_state.pose;
        if !grid.is_free_point(p.x, p.y) {
            return bad(format!("initial position ({}, {}) is not on a free cell", p.x, p.y));
        }
        for (k, g) in self.goals.iter().enumerate() {
            if !grid.is_free_point(g[0], g[1]) {
                return bad(format!("goal {k} ({}, {}) is not on a free cell", g[0], g[1]));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_json(r#"{"name": "m", "goals": [[10, 5]], "duration": 20}"#).unwrap();
        assert_eq!(s.dt, 0.1);
        assert_eq!(s.ticks(), 200);
        assert_eq!(s.controller.horizon, 40);
        assert_eq!(s.map.builtin.as_deref(), Some("river"));
        assert_eq!(s.controller_model(), HydroParams::identified());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(Scenario::from_json(r#"{"name": "m", "goals": [], "duration": 1, "colour": 3}"#).is_err());
    }

    #[test]
    fn river_round_trips_and_validates() {
        let s = Scenario::river();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        s.validate(&s.load_grid().unwrap()).unwrap();
    }

    #[test]
    fn blocked_goal_is_a_configuration_error() {
        let mut s = Scenario::river();
        s.goals.push([45.0, 20.0]);
        assert!(s.validate(&s.load_grid().unwrap()).is_err());
    }

    #[test]
    fn gps_dropouts() {
        let g = GpsSpec {
            sigma: 0.2,
            dropouts: vec![[1.0, 2.0]],
        };
        assert!(g.available(0.5) && !g.available(1.0) && g.available(2.0));
    }
}
