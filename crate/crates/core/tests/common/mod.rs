//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use canalnav_core::planner::OccupancyGrid;
use canalnav_core::solver::BoxQp;
use canalnav_core::HydroParams;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::Rng;

// ---------------------------------------------------------------- dynamics

/// Vessel right-hand side written in matrix form, `M ν̇ = τ − C(ν)ν − Dν`.
pub fn vessel_rhs(p: &HydroParams, q: &Vector6<f64>, f: &[f64; 4]) -> Vector6<f64> {
    let (a, b) = (0.8, 1.6);
    let nu = Vector3::new(q[3], q[4], q[5]);
    let m = Matrix3::from_diagonal(&Vector3::new(p.m11, p.m22, p.m33));
    let d = Matrix3::from_diagonal(&Vector3::new(p.xu, p.yv, p.nr));
    let c = Matrix3::new(
        0.0, 0.0, -p.m22 * nu[1],
        0.0, 0.0, p.m11 * nu[0],
        p.m22 * nu[1], -p.m11 * nu[0], 0.0,
    );
    let tau = Vector3::new(f[0] + f[1], f[2] + f[3], a / 2.0 * (f[0] - f[1]) + b / 2.0 * (f[2] - f[3]));
    let nu_dot = m.try_inverse().unwrap() * (tau - c * nu - d * nu);
    let (s, co) = q[2].sin_cos();
    Vector6::new(
        co * nu[0] - s * nu[1],
        s * nu[0] + co * nu[1],
        nu[2],
        nu_dot[0],
        nu_dot[1],
        nu_dot[2],
    )
}

/// Fifth-order Dormand–Prince with fixed tiny steps, used as ground truth.
pub fn reference_trajectory(p: &HydroParams, q0: &Vector6<f64>, f: &[f64; 4], t_end: f64, steps: usize) -> Vector6<f64> {
    let h = t_end / steps as f64;
    let rhs = |q: &Vector6<f64>| vessel_rhs(p, q, f);
    let mut q = *q0;
    for _ in 0..steps {
        let k1 = rhs(&q);
        let k2 = rhs(&(q + h * (k1 / 5.0)));
        let k3 = rhs(&(q + h * (k1 * (3.0 / 40.0) + k2 * (9.0 / 40.0))));
        let k4 = rhs(&(q + h * (k1 * (44.0 / 45.0) - k2 * (56.0 / 15.0) + k3 * (32.0 / 9.0))));
        let k5 = rhs(
            &(q + h
                * (k1 * (19372.0 / 6561.0) - k2 * (25360.0 / 2187.0) + k3 * (64448.0 / 6561.0)
                    - k4 * (212.0 / 729.0))),
        );
        let k6 = rhs(
            &(q + h
                * (k1 * (9017.0 / 3168.0) - k2 * (355.0 / 33.0) + k3 * (46732.0 / 5247.0) + k4 * (49.0 / 176.0)
                    - k5 * (5103.0 / 18656.0))),
        );
        q += h
            * (k1 * (35.0 / 384.0) + k3 * (500.0 / 1113.0) + k4 * (125.0 / 192.0) - k5 * (2187.0 / 6784.0)
                + k6 * (11.0 / 84.0));
    }
    q
}

/// Least-squares slope of `log e` against `log h`.
pub fn observed_order(steps: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------- planner

#[derive(PartialEq)]
struct Item {
    cost: f64,
    idx: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.total_cmp(&self.cost)
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Dijkstra over the 8-connected grid with the same no-corner-cutting rule.
/// Returns `(straight, diagonal)` move counts of an optimal path and the
/// number of settled cells when the goal was settled.
pub fn dijkstra(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<((u32, u32), usize)> {
    let (w, h) = (grid.width, grid.height);
    let free = |i: isize, j: isize| i >= 0 && j >= 0 && (i as usize) < w && (j as usize) < h && grid.is_free((i as usize, j as usize));
    if !free(start.0 as isize, start.1 as isize) || !free(goal.0 as isize, goal.1 as isize) {
        return None;
    }
    let mut best: Vec<Option<(u32, u32)>> = vec![None; w * h];
    let mut done = vec![false; w * h];
    let val = |m: (u32, u32)| m.0 as f64 + std::f64::consts::SQRT_2 * m.1 as f64;
    let s = start.1 * w + start.0;
    best[s] = Some((0, 0));
    let mut heap = BinaryHeap::from([Item { cost: 0.0, idx: s }]);
    let mut settled = 0;
    while let Some(Item { idx, .. }) = heap.pop() {
        if done[idx] {
            continue;
        }
        done[idx] = true;
        settled += 1;
        let (i, j) = ((idx % w) as isize, (idx / w) as isize);
        if (i as usize, j as usize) == goal {
            return Some((best[idx].unwrap(), settled));
        }
        let cur = best[idx].unwrap();
        for di in -1..=1isize {
            for dj in -1..=1isize {
                if (di, dj) == (0, 0) || !free(i + di, j + dj) {
                    continue;
                }
                let diag = di != 0 && dj != 0;
                if diag && !(free(i + di, j) && free(i, j + dj)) {
                    continue;
                }
                let n = ((j + dj) as usize) * w + (i + di) as usize;
                let cand = if diag { (cur.0, cur.1 + 1) } else { (cur.0 + 1, cur.1) };
                if best[n].is_none_or(|b| val(cand) < val(b)) {
                    best[n] = Some(cand);
                    heap.push(Item { cost: val(cand), idx: n });
                }
            }
        }
    }
    None
}

/// Random grid with independent obstacles; start and goal corners are kept free.
pub fn random_grid<R: Rng>(rng: &mut R, w: usize, h: usize, density: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::empty(1.0, w, h, (0.0, 0.0));
    for j in 0..h {
        for i in 0..w {
            if rng.random::<f64>() < density {
                g.set_free((i, j), false);
            }
        }
    }
    g.set_free((0, 0), true);
    g.set_free((w - 1, h - 1), true);
    g
}

// ---------------------------------------------------------------- QP

/// Exhaustive enumeration of the 3ⁿ lower/upper/free activity patterns.
/// Each pattern fixes the bounded variables, solves the free block by SVD
/// and keeps the feasible KKT point with the smallest objective.
pub fn qp_by_enumeration(p: &BoxQp) -> (DVector<f64>, f64) {
    let n = p.g.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut pattern = vec![0u8; n];
        let mut c = code;
        for v in pattern.iter_mut() {
            *v = (c % 3) as u8;
            c /= 3;
        }
        let mut x = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 2).collect();
        for i in 0..n {
            match pattern[i] {
                0 => x[i] = p.lb[i],
                1 => x[i] = p.ub[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| p.h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                -p.g[i] - (0..n).filter(|j| pattern[*j] != 2).map(|j| p.h[(i, j)] * x[j]).sum::<f64>()
            });
            let svd = hff.clone().svd(true, true);
            let Ok(xf) = svd.solve(&rhs, 1e-12) else { continue };
            if (&hff * &xf - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
                continue;
            }
            for (a, &i) in free.iter().enumerate() {
                x[i] = xf[a];
            }
        }
        let feasible = (0..n).all(|i| x[i] >= p.lb[i] - 1e-12 && x[i] <= p.ub[i] + 1e-12);
        if !feasible {
            continue;
        }
        let grad = &p.h * &x + &p.g;
        let kkt = (0..n).all(|i| match pattern[i] {
            0 => grad[i] >= -1e-9,
            1 => grad[i] <= 1e-9,
            _ => true,
        });
        if !kkt {
            continue;
        }
        let obj = 0.5 * x.dot(&(&p.h * &x)) + p.g.dot(&x);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((x, obj));
        }
    }
    best.expect("a bounded convex QP always has a KKT point")
}

// ---------------------------------------------------------------- geodesy

/// Great-circle distance on a sphere of radius 6378137 m.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6378137.0 * a.sqrt().asin()
}

// ---------------------------------------------------------------- misc

pub fn rms(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x * x;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}
