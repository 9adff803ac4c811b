//! Grid path planning and reference generation.
//!
//! A* runs 8-connected on an occupancy grid (no corner cutting) with the
//! Euclidean heuristic. Path costs are accumulated as integer counts of
//! straight and diagonal moves, so two searches reaching the same cell with
//! the same move mix agree bit-for-bit.
//!
//! The cell path is optionally shortcut-smoothed, resampled at cruise-speed
//! spacing (`u_ref · dt`) and given rate-limited tangent headings. The NMPC
//! consumes it through [`reference_window`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::dynamics::{BodyVelocity, ControlInput, Pose, VesselState};
use crate::nmpc::ReferenceWindow;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no path to the goal")]
    NoPath,
    #[error("point ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfGrid { x: f64, y: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("map file: {0}")]
    Map(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column/row index, `(i, j)` with `i` along x.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Inertial position of the lower-left corner of cell (0, 0).
    pub origin: (f64, f64),
    /// Row-major from the bottom row; `true` = free.
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(
        resolution: f64,
        width: usize,
        height: usize,
        origin: (f64, f64),
        cells: Vec<bool>,
    ) -> Result<Self, PlannerError> {
        let g = Self {
            resolution,
            width,
            height,
            origin,
            cells,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn empty(resolution: f64, width: usize, height: usize, origin: (f64, f64)) -> Self {
        Self {
            resolution,
            width,
            height,
            origin,
            cells: vec![true; width * height],
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(PlannerError::InvalidGrid("resolution must be positive".into()));
        }
        if self.width == 0 || self.height == 0 || self.cells.len() != self.width * self.height {
            return Err(PlannerError::InvalidGrid(format!(
                "{}x{} grid with {} cells",
                self.width,
                self.height,
                self.cells.len()
            )));
        }
        Ok(())
    }

    fn index(&self, c: Cell) -> usize {
        c.1 * self.width + c.0
    }

    pub fn in_bounds(&self, i: isize, j: isize) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height && self.cells[self.index(c)]
    }

    pub fn set_free(&mut self, c: Cell, free: bool) {
        let k = self.index(c);
        self.cells[k] = free;
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<Cell> {
        let fi = ((x - self.origin.0) / self.resolution).floor();
        let fj = ((y - self.origin.1) / self.resolution).floor();
        if fi.is_finite() && fj.is_finite() && self.in_bounds(fi as isize, fj as isize) {
            Some((fi as usize, fj as usize))
        } else {
            None
        }
    }

    pub fn cell_center(&self, c: Cell) -> (f64, f64) {
        (
            self.origin.0 + (c.0 as f64 + 0.5) * self.resolution,
            self.origin.1 + (c.1 as f64 + 0.5) * self.resolution,
        )
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        self.world_to_cell(x, y).is_some_and(|c| self.is_free(c))
    }

    /// Blocks every cell within `radius` meters of a blocked cell.
    pub fn inflated(&self, radius: f64) -> Self {
        let k = (radius / self.resolution).ceil() as isize;
        let r2 = (radius / self.resolution).powi(2);
        let mut out = self.clone();
        for j in 0..self.height {
            for i in 0..self.width {
                if self.cells[self.index((i, j))] {
                    continue;
                }
                for dj in -k..=k {
                    for di in -k..=k {
                        let (ni, nj) = (i as isize + di, j as isize + dj);
                        if self.in_bounds(ni, nj) && (di * di + dj * dj) as f64 <= r2 {
                            out.set_free((ni as usize, nj as usize), false);
                        }
                    }
                }
            }
        }
        out
    }

    /// Nearest free cell by breadth-first search within `max_cells` rings.
    pub fn nearest_free(&self, c: Cell, max_cells: usize) -> Option<Cell> {
        if self.is_free(c) {
            return Some(c);
        }
        let mut best: Option<(usize, Cell)> = None;
        let m = max_cells as isize;
        for dj in -m..=m {
            for di in -m..=m {
                let (ni, nj) = (c.0 as isize + di, c.1 as isize + dj);
                if self.in_bounds(ni, nj) {
                    let n = (ni as usize, nj as usize);
                    let d2 = (di * di + dj * dj) as usize;
                    if self.is_free(n) && best.is_none_or(|(b, _)| d2 < b) {
                        best = Some((d2, n));
                    }
                }
            }
        }
        best.map(|(_, n)| n)
    }

    /// Free line of sight between two points, sampled at a quarter cell.
    pub fn line_of_sight(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / (0.25 * self.resolution)).ceil().max(1.0) as usize;
        (0..=n).all(|k| {
            let t = k as f64 / n as f64;
            self.is_free_point(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        })
    }

    /// Reads an 8-bit PGM (P2 or P5). Pixels ≥ 128 are free; the top image
    /// row is the highest y.
    pub fn from_pgm(
        pgm: impl AsRef<Path>,
        resolution: f64,
        origin: (f64, f64),
    ) -> Result<Self, PlannerError> {
        let bytes = fs::read(pgm)?;
        let (w, h, pixels) = parse_pgm(&bytes)?;
        let mut cells = vec![false; w * h];
        for row in 0..h {
            let j = h - 1 - row;
            for i in 0..w {
                cells[j * w + i] = pixels[row * w + i] >= 128;
            }
        }
        Self::new(resolution, w, h, origin, cells)
    }

    /// Loads a PGM plus its plain-text sidecar holding `resolution <m>` and
    /// `origin <x> <y>` lines; defaults to `<map>.txt`.
    pub fn load(pgm: impl AsRef<Path>, sidecar: Option<&Path>) -> Result<Self, PlannerError> {
        let pgm = pgm.as_ref();
        let side: PathBuf = sidecar
            .map(Path::to_path_buf)
            .unwrap_or_else(|| pgm.with_extension("txt"));
        let (res, origin) = parse_sidecar(&fs::read_to_string(&side)?)?;
        Self::from_pgm(pgm, res, origin)
    }

    /// Writes the grid as binary PGM (free = 255, blocked = 0) and sidecar.
    pub fn save(&self, pgm: impl AsRef<Path>) -> Result<(), PlannerError> {
        let pgm = pgm.as_ref();
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for row in 0..self.height {
            let j = self.height - 1 - row;
            for i in 0..self.width {
                out.push(if self.cells[j * self.width + i] { 255 } else { 0 });
            }
        }
        fs::write(pgm, out)?;
        fs::write(
            pgm.with_extension("txt"),
            format!(
                "resolution {}\norigin {} {}\n",
                self.resolution, self.origin.0, self.origin.1
            ),
        )?;
        Ok(())
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), PlannerError> {
    let bad = |m: &str| PlannerError::Map(m.to_string());
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| bad("empty file"))?;
    let mut num = |what: &str| -> Result<usize, PlannerError> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let scale = |v: usize| (v * 255 / maxval).min(255) as u8;
    let pixels = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let start = pos + 1;
            let data = bytes
                .get(start..start + w * h)
                .ok_or_else(|| bad("truncated raster"))?;
            data.iter().map(|&v| scale(v as usize)).collect()
        }
        "P2" => (0..w * h)
            .map(|_| num("pixel").map(scale))
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err(bad("not a P2/P5 PGM")),
    };
    Ok((w, h, pixels))
}

fn parse_sidecar(text: &str) -> Result<(f64, (f64, f64)), PlannerError> {
    let mut res = None;
    let mut origin = None;
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").replace([':', '=', ','], " ");
        let mut it = line.split_whitespace();
        let key = match it.next() {
            Some(k) => k.to_ascii_lowercase(),
            None => continue,
        };
        let vals: Vec<f64> = it.filter_map(|v| v.parse().ok()).collect();
        match (key.as_str(), vals.as_slice()) {
            ("resolution", [r, ..]) => res = Some(*r),
            ("origin", [x, y, ..]) => origin = Some((*x, *y)),
            _ => {}
        }
    }
    match (res, origin) {
        (Some(r), Some(o)) => Ok((r, o)),
        _ => Err(PlannerError::Map("sidecar needs `resolution` and `origin`".into())),
    }
}

/// Path cost in move counts; the metric value is `straight + √2·diagonal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MoveCount {
    pub straight: u32,
    pub diagonal: u32,
}

impl MoveCount {
    pub fn value(&self) -> f64 {
        self.straight as f64 + SQRT_2 * self.diagonal as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellPath {
    pub cells: Vec<Cell>,
    /// Cost in meters.
    pub cost: f64,
    pub moves: MoveCount,
    pub expanded: usize,
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on f; ties prefer deeper nodes, then lower index
        o.f.total_cmp(&self.f)
            .then(self.g.total_cmp(&o.g))
            .then(o.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

pub(crate) const NEIGHBOURS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Admissible moves from `c`: diagonals need both adjacent orthogonal cells free.
pub fn neighbours(grid: &OccupancyGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    NEIGHBOURS.iter().filter_map(move |&(di, dj)| {
        let (ni, nj) = (c.0 as isize + di, c.1 as isize + dj);
        if !grid.in_bounds(ni, nj) {
            return None;
        }
        let n = (ni as usize, nj as usize);
        if !grid.is_free(n) {
            return None;
        }
        let diagonal = di != 0 && dj != 0;
        if diagonal
            && !(grid.is_free((ni as usize, c.1)) && grid.is_free((c.0, nj as usize)))
        {
            return None;
        }
        Some((n, diagonal))
    })
}

/// A* between two free cells.
pub fn astar_cells(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<CellPath, PlannerError> {
    grid.validate()?;
    if !grid.is_free(start) || !grid.is_free(goal) {
        return Err(PlannerError::NoPath);
    }
    let n = grid.cells.len();
    let mut g: Vec<Option<MoveCount>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let h = |c: Cell| {
        let (dx, dy) = (c.0 as f64 - goal.0 as f64, c.1 as f64 - goal.1 as f64);
        (dx * dx + dy * dy).sqrt()
    };
    let s = grid.index(start);
    g[s] = Some(MoveCount::default());
    let mut open = BinaryHeap::new();
    open.push(Open {
        f: h(start),
        g: 0.0,
        idx: s,
    });
    let mut expanded = 0;
    let goal_idx = grid.index(goal);
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        expanded += 1;
        if idx == goal_idx {
            break;
        }
        let c = (idx % grid.width, idx / grid.width);
        let gc = g[idx].expect("queued nodes have a cost");
        for (nb, diagonal) in neighbours(grid, c) {
            let ni = grid.index(nb);
            if closed[ni] {
                continue;
            }
            let mut cand = gc;
            if diagonal {
                cand.diagonal += 1;
            } else {
                cand.straight += 1;
            }
            if g[ni].is_none_or(|old| cand.value() < old.value()) {
                g[ni] = Some(cand);
                parent[ni] = idx;
                open.push(Open {
                    f: cand.value() + h(nb),
                    g: cand.value(),
                    idx: ni,
                });
            }
        }
    }
    if !closed[goal_idx] {
        return Err(PlannerError::NoPath);
    }
    let mut cells = vec![goal];
    let mut k = goal_idx;
    while k != s {
        k = parent[k];
        cells.push((k % grid.width, k / grid.width));
    }
    cells.reverse();
    let moves = g[goal_idx].expect("goal reached");
    Ok(CellPath {
        cells,
        cost: moves.value() * grid.resolution,
        moves,
        expanded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub cruise_speed: f64,
    pub dt: f64,
    pub smoothing: bool,
    /// Heading-rate limit used when assigning waypoint headings.
    pub max_yaw_rate: f64,
    /// Search radius (m) for a free start cell when the start is blocked.
    pub start_snap_radius: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 0.6,
            dt: 0.1,
            smoothing: true,
            max_yaw_rate: 0.5,
            start_snap_radius: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn spacing(&self) -> f64 {
        self.cruise_speed * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    /// Resampled waypoints with headings, start first.
    pub waypoints: Vec<Pose>,
    pub cruise_speed: f64,
    pub spacing: f64,
    /// Cumulative arc length at each waypoint.
    pub arc: Vec<f64>,
}

impl PlannedPath {
    /// Builds a path from a polyline: resampling, then headings.
    pub fn from_polyline(points: &[(f64, f64)], cfg: &PlannerConfig) -> Self {
        Self::from_polyline_with_heading(points, cfg, None)
    }

    /// As [`from_polyline`](Self::from_polyline), with headings ramping from
    /// `start_heading` (the vessel's current heading) under the same rate limit.
    pub fn from_polyline_with_heading(
        points: &[(f64, f64)],
        cfg: &PlannerConfig,
        start_heading: Option<f64>,
    ) -> Self {
        let spacing = cfg.spacing();
        let pts = resample(points, spacing);
        let max_step = cfg.max_yaw_rate * cfg.dt;
        let mut headings = rate_limited_headings(&pts, max_step);
        if let Some(h0) = start_heading {
            headings[0] = wrap_angle(h0);
            for k in 1..headings.len() {
                let d = wrap_angle(headings[k] - headings[k - 1]).clamp(-max_step, max_step);
                headings[k] = wrap_angle(headings[k - 1] + d);
            }
        }
        let mut arc = Vec::with_capacity(pts.len());
        let mut s = 0.0;
        for (k, p) in pts.iter().enumerate() {
            if k > 0 {
                let q = pts[k - 1];
                s += ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            }
            arc.push(s);
        }
        Self {
            waypoints: pts
                .iter()
                .zip(headings)
                .map(|(p, h)| Pose::new(p.0, p.1, h))
                .collect(),
            cruise_speed: cfg.cruise_speed,
            spacing,
            arc,
        }
    }

    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    pub fn goal(&self) -> Pose {
        *self.waypoints.last().expect("non-empty path")
    }

    /// Arc length of the closest point to `(x, y)`, searched over `[s_lo, s_hi]`.
    pub fn project(&self, x: f64, y: f64, s_lo: f64, s_hi: f64) -> f64 {
        let w = &self.waypoints;
        if w.len() == 1 {
            return 0.0;
        }
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..w.len() - 1 {
            if self.arc[k + 1] < s_lo || self.arc[k] > s_hi {
                continue;
            }
            let (ax, ay) = (w[k].x, w[k].y);
            let (dx, dy) = (w[k + 1].x - ax, w[k + 1].y - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (ax + t * dx, ay + t * dy);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            if d2 < best.0 {
                best = (d2, self.arc[k] + t * (self.arc[k + 1] - self.arc[k]));
            }
        }
        best.1.clamp(s_lo.max(0.0), s_hi.min(self.length()))
    }

    /// Interpolated pose at arc length `s`, clamped to the path.
    pub fn pose_at(&self, s: f64) -> Pose {
        let w = &self.waypoints;
        if s <= 0.0 || w.len() == 1 {
            return w[0];
        }
        if s >= self.length() {
            return self.goal();
        }
        let k = self.arc.partition_point(|&a| a <= s).saturating_sub(1).min(w.len() - 2);
        let seg = self.arc[k + 1] - self.arc[k];
        let t = if seg > 0.0 { (s - self.arc[k]) / seg } else { 0.0 };
        let dpsi = wrap_angle(w[k + 1].psi - w[k].psi);
        Pose::new(
            w[k].x + t * (w[k + 1].x - w[k].x),
            w[k].y + t * (w[k + 1].y - w[k].y),
            w[k].psi + t * dpsi,
        )
    }
}

fn resample(points: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    let mut out = vec![points[0]];
    // distance still to travel before the next sample
    let mut need = spacing;
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let mut pos = 0.0;
        while len - pos >= need - 1e-12 {
            pos += need;
            let t = pos / len;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            need = spacing;
        }
        need -= len - pos;
    }
    let last = *points.last().expect("non-empty");
    let tail = out.last().expect("non-empty");
    if (tail.0 - last.0).hypot(tail.1 - last.1) > 1e-9 {
        out.push(last);
    }
    out
}

/// Tangent headings, rate-limited forwards and backwards and averaged, so
/// consecutive headings differ by at most `max_step`.
fn rate_limited_headings(pts: &[(f64, f64)], max_step: f64) -> Vec<f64> {
    let n = pts.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut raw: Vec<f64> = (0..n)
        .map(|k| {
            let (a, b) = if k + 1 < n { (pts[k], pts[k + 1]) } else { (pts[k - 1], pts[k]) };
            (b.1 - a.1).atan2(b.0 - a.0)
        })
        .collect();
    for k in 1..n {
        raw[k] = raw[k - 1] + wrap_angle(raw[k] - raw[k - 1]);
    }
    let limit = |prev: f64, target: f64| prev + (target - prev).clamp(-max_step, max_step);
    let mut fwd = raw.clone();
    for k in 1..n {
        fwd[k] = limit(fwd[k - 1], raw[k]);
    }
    let mut bwd = raw.clone();
    for k in (0..n - 1).rev() {
        bwd[k] = limit(bwd[k + 1], raw[k]);
    }
    fwd.iter().zip(&bwd).map(|(a, b)| wrap_angle(0.5 * (a + b))).collect()
}

/// Greedy line-of-sight shortcutting over a polyline.
pub fn shortcut(grid: &OccupancyGrid, points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut anchor = 0;
    while anchor < points.len() - 1 {
        let mut next = anchor + 1;
        while next + 1 < points.len() && grid.line_of_sight(points[anchor], points[next + 1]) {
            next += 1;
        }
        out.push(points[next]);
        anchor = next;
    }
    out
}

/// Plans from `start` to `goal` and converts the result to a path.
pub fn plan(
    grid: &OccupancyGrid,
    start: &Pose,
    goal: (f64, f64),
    cfg: &PlannerConfig,
) -> Result<PlannedPath, PlannerError> {
    let sc = grid
        .world_to_cell(start.x, start.y)
        .ok_or(PlannerError::OutOfGrid { x: start.x, y: start.y })?;
    let gc = grid
        .world_to_cell(goal.0, goal.1)
        .ok_or(PlannerError::OutOfGrid { x: goal.0, y: goal.1 })?;
    let snap = (cfg.start_snap_radius / grid.resolution).ceil() as usize;
    let sc = grid.nearest_free(sc, snap).ok_or(PlannerError::NoPath)?;
    let cells = astar_cells(grid, sc, gc)?;

    let mut pts: Vec<(f64, f64)> = cells.cells.iter().map(|&c| grid.cell_center(c)).collect();
    pts[0] = (start.x, start.y);
    let last = pts.len() - 1;
    pts[last] = goal;
    if pts.len() == 1 {
        pts.push(goal);
    }
    if cfg.smoothing {
        pts = shortcut(grid, &pts);
    }
    Ok(PlannedPath::from_polyline_with_heading(&pts, cfg, Some(start.psi)))
}

/// [`plan`] with the default configuration.
pub fn astar(grid: &OccupancyGrid, start: &Pose, goal: (f64, f64)) -> Result<PlannedPath, PlannerError> {
    plan(grid, start, goal, &PlannerConfig::default())
}

/// `N + 1` reference states from the projection of `q_hat` onto `path`,
/// spaced `cruise_speed · dt` in arc length; samples past the end hold the
/// goal at rest. Control references are zero.
pub fn reference_window(path: &PlannedPath, q_hat: &VesselState, horizon: usize, dt: f64) -> ReferenceWindow {
    let s0 = path.project(q_hat.pose.x, q_hat.pose.y, 0.0, f64::INFINITY);
    reference_window_from(path, s0, horizon, dt)
}

/// Reference window starting at arc length `s0`.
pub fn reference_window_from(path: &PlannedPath, s0: f64, horizon: usize, dt: f64) -> ReferenceWindow {
    let len = path.length();
    let step = path.cruise_speed * dt;
    let goal = path.goal();
    let sample = |k: usize| {
        let s = s0 + k as f64 * step;
        (s < len - 1e-9).then(|| path.pose_at(s))
    };
    let states = (0..=horizon)
        .map(|k| match sample(k) {
            Some(p) => {
                let next = sample(k + 1).unwrap_or(goal);
                let r = wrap_angle(next.psi - p.psi) / dt;
                VesselState::new(p, BodyVelocity::new(path.cruise_speed, 0.0, r))
            }
            None => VesselState::at_rest(goal),
        })
        .collect();
    ReferenceWindow {
        states,
        controls: vec![ControlInput::zero(); horizon],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_path_on_empty_grid() {
        let g = OccupancyGrid::empty(0.25, 50, 50, (-1.0, -1.0));
        let p = astar(&g, &Pose::identity(), (10.0, 0.0)).unwrap();
        assert!((p.length() - 10.0).abs() <= 0.25);
        assert!(p.waypoints.iter().all(|w| w.psi.abs() < 1e-9 && w.y.abs() < 1e-9));
        for w in p.waypoints.windows(2) {
            assert!(w[0].distance_to(&w[1]) <= 0.06 + 1e-9);
        }
    }

    #[test]
    fn wall_with_gap_routes_through_gap() {
        let mut g = OccupancyGrid::empty(1.0, 20, 20, (0.0, 0.0));
        for j in 0..20 {
            if j != 15 {
                g.set_free((10, j), false);
            }
        }
        let cp = astar_cells(&g, (2, 2), (18, 2)).unwrap();
        assert!(cp.cells.contains(&(10, 15)));
        // the gap can only be entered and left straight (no corner cutting)
        let octile = |a: (i32, i32), b: (i32, i32)| {
            let (dx, dy) = ((a.0 - b.0).abs(), (a.1 - b.1).abs());
            (dx.max(dy) - dx.min(dy)) as f64 + SQRT_2 * dx.min(dy) as f64
        };
        let expect = octile((2, 2), (9, 15)) + 2.0 + octile((11, 15), (18, 2));
        assert!((cp.cost - expect).abs() < 1e-12);
    }

    #[test]
    fn blocked_goal_and_outside_points() {
        let mut g = OccupancyGrid::empty(0.5, 10, 10, (0.0, 0.0));
        g.set_free((8, 8), false);
        assert!(matches!(astar(&g, &Pose::new(1.0, 1.0, 0.0), (4.1, 4.1)), Err(PlannerError::NoPath)));
        assert!(matches!(
            astar(&g, &Pose::new(1.0, 1.0, 0.0), (40.0, 1.0)),
            Err(PlannerError::OutOfGrid { .. })
        ));
    }

    #[test]
    fn corners_are_not_cut() {
        let mut g = OccupancyGrid::empty(1.0, 3, 3, (0.0, 0.0));
        g.set_free((1, 0), false);
        let cp = astar_cells(&g, (0, 0), (2, 1)).unwrap();
        // diagonal (0,0)->(1,1) would clip the blocked (1,0) corner
        assert_eq!(cp.cells[1], (0, 1));
    }

    #[test]
    fn headings_are_rate_limited() {
        let g = OccupancyGrid::empty(0.25, 80, 80, (0.0, 0.0));
        let cfg = PlannerConfig {
            smoothing: false,
            ..PlannerConfig::default()
        };
        let p = plan(&g, &Pose::new(1.0, 1.0, 0.0), (15.0, 6.0), &cfg).unwrap();
        for w in p.waypoints.windows(2) {
            assert!(wrap_angle(w[1].psi - w[0].psi).abs() <= 0.05 + 1e-12);
        }
        // starting against the path direction still ramps within the limit
        let p = plan(&g, &Pose::new(1.0, 1.0, 3.0), (15.0, 6.0), &cfg).unwrap();
        assert!((p.waypoints[0].psi - 3.0).abs() < 1e-12);
        for w in p.waypoints.windows(2) {
            assert!(wrap_angle(w[1].psi - w[0].psi).abs() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn reference_window_on_straight_path() {
        let cfg = PlannerConfig::default();
        let path = PlannedPath::from_polyline(&[(0.0, 0.0), (10.0, 0.0)], &cfg);
        let w = reference_window(&path, &VesselState::at_rest(Pose::new(2.0, 1.0, 0.3)), 40, 0.1);
        assert_eq!(w.states.len(), 41);
        assert_eq!(w.controls.len(), 40);
        // projection, not the estimate
        assert!((w.states[0].pose.x - 2.0).abs() < 1e-9 && w.states[0].pose.y.abs() < 1e-12);
        for (k, s) in w.states.iter().enumerate() {
            assert!((s.pose.x - (2.0 + 0.06 * k as f64)).abs() < 1e-9);
            assert!(s.pose.psi.abs() < 1e-12);
            assert!((s.vel.u - 0.6).abs() < 1e-12 && s.vel.v == 0.0);
        }
    }

    #[test]
    fn reference_window_holds_goal() {
        let cfg = PlannerConfig::default();
        let path = PlannedPath::from_polyline(&[(0.0, 0.0), (3.0, 4.0)], &cfg);
        let goal = path.goal();
        let w = reference_window(&path, &VesselState::at_rest(goal), 40, 0.1);
        for s in &w.states {
            assert_eq!(s.pose, goal);
            assert_eq!(s.vel, BodyVelocity::default());
        }
        let near = reference_window(&path, &VesselState::at_rest(Pose::new(2.7, 3.6, 0.0)), 40, 0.1);
        assert!(near.states[0].vel.u > 0.0);
        assert_eq!(near.states[40].pose, goal);
        assert_eq!(near.states[40].vel, BodyVelocity::default());
    }

    #[test]
    fn pgm_round_trip_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = OccupancyGrid::empty(0.5, 7, 4, (-1.0, 2.0));
        g.set_free((0, 0), false);
        g.set_free((6, 3), false);
        let path = dir.path().join("map.pgm");
        g.save(&path).unwrap();
        let back = OccupancyGrid::load(&path, None).unwrap();
        assert_eq!(back, g);

        let ascii = dir.path().join("a.pgm");
        fs::write(&ascii, "P2\n# comment\n3 2\n15\n15 0 8\n7 15 15\n").unwrap();
        fs::write(dir.path().join("a.txt"), "resolution: 1.0\norigin: 0, 0\n").unwrap();
        let a = OccupancyGrid::load(&ascii, None).unwrap();
        // bottom row first
        assert_eq!(a.cells, vec![false, true, true, true, false, true]);
    }

    #[test]
    fn inflation_blocks_neighbourhood() {
        let mut g = OccupancyGrid::empty(0.5, 9, 9, (0.0, 0.0));
        g.set_free((4, 4), false);
        let inf = g.inflated(1.0);
        assert!(!inf.is_free((4, 6)) && !inf.is_free((6, 4)));
        assert!(inf.is_free((6, 6)) && inf.is_free((4, 7)));
    }
}
