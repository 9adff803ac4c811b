//! Built-in occupancy maps.

use crate::planner::OccupancyGrid;

/// A 120 m × 40 m canal reach at 0.25 m: quay walls along both banks, an
/// island mid-stream, a bridge with a 12 m navigable span and a row of moored
/// boats near the far end.
pub fn river() -> OccupancyGrid {
    let res = 0.25;
    let (w, h) = (480, 160);
    let mut g = OccupancyGrid::empty(res, w, h, (0.0, 0.0));
    let blocked = |x: f64, y: f64| -> bool {
        // banks, with a small inlet on the south side
        let south = if (64.0..72.0).contains(&x) { 1.0 } else { 3.0 };
        if y < south || y > 37.0 {
            return true;
        }
        let island = (38.0..52.0).contains(&x) && (16.0..24.0).contains(&y);
        let bridge = (79.0..81.5).contains(&x) && !(14.0..26.0).contains(&y);
        let moored = (100.0..108.0).contains(&x) && y > 33.0;
        island || bridge || moored
    };
    for j in 0..h {
        for i in 0..w {
            let (x, y) = g.cell_center((i, j));
            if blocked(x, y) {
                g.set_free((i, j), false);
            }
        }
    }
    g
}

/// Looks up a built-in map by name.
pub fn builtin(name: &str) -> Option<OccupancyGrid> {
    match name {
        "river" => Some(river()),
        "open" => Some(OccupancyGrid::empty(0.25, 400, 400, (-50.0, -50.0))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn river_layout() {
        let g = river();
        assert!(g.is_free_point(6.0, 8.0));
        assert!(!g.is_free_point(45.0, 20.0));
        assert!(!g.is_free_point(80.0, 5.0));
        assert!(g.is_free_point(80.0, 20.0));
        assert!(!g.is_free_point(10.0, 38.0));
        assert!(builtin("nope").is_none());
    }
}
