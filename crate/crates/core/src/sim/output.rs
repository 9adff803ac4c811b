//! Output files of a run: CSV log, JSON metrics, pose graph and
//! gnuplot-ready data.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::experiments::{IdentExperimentReport, SlamAblationReport, SweepPoint};
use super::mission::MissionOutput;
use super::SimError;
use crate::sysid::IdentDataset;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, SimError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes every artefact of a mission into `dir`; returns the file paths.
pub fn write_mission(dir: &Path, out: &MissionOutput) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir)?;
    out.log.write_csv(create(dir, "mission_log.csv")?)?;
    fs::write(dir.join("metrics.json"), out.metrics.to_json())?;
    fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&out.timing).expect("timing serialises") + "\n",
    )?;
    out.graph.write_g2o(create(dir, "graph.g2o")?)?;

    let mut w = create(dir, "trajectory.dat")?;
    writeln!(w, "# t x y psi x_hat y_hat psi_hat x_ref y_ref psi_ref slam_x slam_y")?;
    for r in &out.log.rows {
        writeln!(
            w,
            "{:.2} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.t,
            r.truth.pose.x,
            r.truth.pose.y,
            r.truth.pose.psi,
            r.estimate.pose.x,
            r.estimate.pose.y,
            r.estimate.pose.psi,
            r.reference.pose.x,
            r.reference.pose.y,
            r.reference.pose.psi,
            r.slam_pose.x,
            r.slam_pose.y
        )?;
    }
    w.flush()?;

    let mut w = create(dir, "tracking_error.dat")?;
    writeln!(w, "# t position_error heading_error on_track")?;
    for r in &out.log.rows {
        writeln!(
            w,
            "{:.2} {:.6} {:.6} {}",
            r.t,
            r.truth.pose.distance_to(&r.reference.pose),
            crate::angle::angle_diff(r.truth.pose.psi, r.reference.pose.psi),
            u8::from(r.on_track)
        )?;
    }
    w.flush()?;

    let mut w = create(dir, "forces.dat")?;
    writeln!(w, "# t f1 f2 f3 f4")?;
    for r in &out.log.rows {
        let f = r.forces.as_array();
        writeln!(w, "{:.2} {:.6} {:.6} {:.6} {:.6}", r.t, f[0], f[1], f[2], f[3])?;
    }
    w.flush()?;

    let mut w = create(dir, "paths.dat")?;
    writeln!(w, "# x y psi  (one block per planned path)")?;
    for p in &out.paths {
        for wp in &p.waypoints {
            writeln!(w, "{:.6} {:.6} {:.6}", wp.x, wp.y, wp.psi)?;
        }
        writeln!(w)?;
        writeln!(w)?;
    }
    w.flush()?;

    let mut w = create(dir, "keyframes.dat")?;
    writeln!(w, "# id x y psi x_true y_true psi_true")?;
    for (n, t) in out.graph.nodes().iter().zip(&out.keyframe_truth) {
        writeln!(
            w,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            n.id, n.pose.x, n.pose.y, n.pose.psi, t.x, t.y, t.psi
        )?;
    }
    w.flush()?;

    let mut w = create(dir, "obstacles.dat")?;
    writeln!(w, "# x y of blocked cell centres (inflated grid)")?;
    let g = &out.grid;
    for j in 0..g.height {
        for i in 0..g.width {
            if !g.is_free((i, j)) {
                let (x, y) = g.cell_center((i, j));
                writeln!(w, "{x:.3} {y:.3}")?;
            }
        }
    }
    w.flush()?;

    Ok([
        "mission_log.csv",
        "metrics.json",
        "timing.json",
        "graph.g2o",
        "trajectory.dat",
        "tracking_error.dat",
        "forces.dat",
        "paths.dat",
        "keyframes.dat",
        "obstacles.dat",
    ]
    .iter()
    .map(|n| dir.join(n))
    .collect())
}

pub fn write_ident(dir: &Path, report: &IdentExperimentReport, datasets: &[IdentDataset]) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("ident.json"),
        serde_json::to_string_pretty(report).expect("report serialises") + "\n",
    )?;
    for (k, ds) in datasets.iter().enumerate() {
        ds.write_csv(create(dir, &format!("ident_trial_{}.csv", k + 1))?)?;
    }
    Ok(())
}

pub fn write_slam_ablation(dir: &Path, report: &SlamAblationReport) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("slam_ablation.json"),
        serde_json::to_string_pretty(report).expect("report serialises") + "\n",
    )?;
    for r in &report.results {
        let mut w = create(dir, &format!("slam_{}_error.dat", r.name))?;
        writeln!(w, "# distance_m online_abs_error_m")?;
        for (s, e) in &r.online_error {
            writeln!(w, "{s:.2} {e:.6}")?;
        }
        w.flush()?;
        if let Some(g) = &r.graph {
            g.write_g2o(create(dir, &format!("slam_{}.g2o", r.name))?)?;
        }
    }
    Ok(())
}

pub fn write_sweep(dir: &Path, param: &str, points: &[SweepPoint]) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    let mut w = create(dir, "sweep.csv")?;
    writeln!(
        w,
        "{param},position_rmse,heading_rmse,est_x,est_y,est_psi,est_u,slam_return_error,goals_reached,force_violations,degraded"
    )?;
    for p in points {
        let m = &p.metrics;
        let e = &m.estimation_rmse;
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            p.value,
            m.position_rmse,
            m.heading_rmse,
            e.x,
            e.y,
            e.psi,
            e.u,
            m.slam_return_error,
            m.goals_reached,
            m.force_violations,
            m.nmpc_degraded_solves
        )?;
    }
    w.flush()?;
    let mut w = create(dir, "sweep.dat")?;
    writeln!(w, "# {param} position_rmse heading_rmse")?;
    for p in points {
        writeln!(w, "{} {:.6} {:.6}", p.value, p.metrics.position_rmse, p.metrics.heading_rmse)?;
    }
    w.flush()?;
    fs::write(
        dir.join("sweep.json"),
        serde_json::to_string_pretty(points).expect("sweep serialises") + "\n",
    )?;
    Ok(())
}
