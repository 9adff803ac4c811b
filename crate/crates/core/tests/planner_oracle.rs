//! Grid search against a plain Dijkstra reference, map loading and the
//! geometric guarantees of planned paths.

mod common;

use std::io::Write;

use canalnav_core::planner::{astar_cells, plan, reference_window, OccupancyGrid, PlannerConfig, PlannerError};
use canalnav_core::sim::maps;
use canalnav_core::{Pose, VesselState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn astar_cost_equals_dijkstra(
        seed in 0u64..u64::MAX,
        w in 5usize..40,
        h in 5usize..40,
        density in 0.0..0.45f64,
        s in (0usize..40, 0usize..40),
        t in (0usize..40, 0usize..40),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = common::random_grid(&mut rng, w, h, density);
        let (s, t) = ((s.0 % w, s.1 % h), (t.0 % w, t.1 % h));
        g.set_free(s, true);
        g.set_free(t, true);
        match (common::dijkstra(&g, s, t), astar_cells(&g, s, t)) {
            (Some((moves, settled)), Ok(p)) => {
                prop_assert_eq!((p.moves.straight, p.moves.diagonal), moves);
                prop_assert!(p.expanded <= settled, "A* expanded {} > Dijkstra {}", p.expanded, settled);
                prop_assert_eq!(p.cells.first(), Some(&s));
                prop_assert_eq!(p.cells.last(), Some(&t));
                // the returned cells form an admissible chain with the reported cost
                let (mut straight, mut diagonal) = (0, 0);
                for pair in p.cells.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    let (di, dj) = (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize);
                    prop_assert!(di.abs() <= 1 && dj.abs() <= 1 && (di, dj) != (0, 0));
                    prop_assert!(g.is_free(b));
                    if di != 0 && dj != 0 {
                        prop_assert!(g.is_free((b.0, a.1)) && g.is_free((a.0, b.1)), "corner cut at {:?}", a);
                        diagonal += 1;
                    } else {
                        straight += 1;
                    }
                }
                prop_assert_eq!((straight, diagonal), moves);
            }
            (None, Err(PlannerError::NoPath)) => {}
            (d, a) => prop_assert!(false, "dijkstra {:?} vs astar {:?}", d, a.map(|p| p.moves)),
        }
    }
}

#[test]
fn ascii_pgm_with_sidecar_loads_with_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("dock.pgm");
    let mut f = std::fs::File::create(&pgm).unwrap();
    // top row is the largest y; 127 is occupied, 128 free
    writeln!(f, "P2\n# dock\n4 3\n255\n0 127 128 255\n255 255 255 255\n255 0 255 10").unwrap();
    std::fs::write(dir.path().join("dock.txt"), "resolution 0.5\norigin -1 2\n").unwrap();
    let g = OccupancyGrid::load(&pgm, None).unwrap();
    assert_eq!((g.width, g.height, g.resolution, g.origin), (4, 3, 0.5, (-1.0, 2.0)));
    let top: Vec<bool> = (0..4).map(|i| g.is_free((i, 2))).collect();
    assert_eq!(top, [false, false, true, true]);
    assert!(!g.is_free((1, 0)) && !g.is_free((3, 0)) && g.is_free((2, 0)));
    assert!(g.is_free_point(-0.9, 2.1) && !g.is_free_point(-0.4, 2.1));

    let side = dir.path().join("other.cfg");
    std::fs::write(&side, "resolution 2\norigin 0 0\n").unwrap();
    assert_eq!(OccupancyGrid::load(&pgm, Some(&side)).unwrap().resolution, 2.0);
    assert!(OccupancyGrid::load(dir.path().join("missing.pgm"), None).is_err());
}

#[test]
fn river_paths_stay_in_free_water() {
    let grid = maps::river().inflated(1.0);
    let cfg = PlannerConfig::default();
    let start = Pose::new(6.0, 8.0, 0.0);
    for goal in [(26.0, 9.0), (54.0, 28.0), (84.0, 20.0), (92.0, 12.0)] {
        let p = plan(&grid, &start, goal, &cfg).unwrap();
        for pair in p.waypoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            assert!(grid.line_of_sight((a.x, a.y), (b.x, b.y)), "segment {a:?} -> {b:?} leaves free water");
            assert!((a.distance_to(&b) - cfg.spacing()).abs() <= cfg.spacing() + 1e-9);
            assert!(canalnav_core::angle::angle_diff(b.psi, a.psi).abs() <= cfg.max_yaw_rate * cfg.dt + 1e-9);
        }
        let g = p.goal();
        assert!((g.x - goal.0).hypot(g.y - goal.1) < 1e-9);
        // every reference sample lies on the path
        let refs = reference_window(&p, &VesselState::at_rest(start), 40, 0.1);
        for r in &refs.states {
            assert!(grid.is_free_point(r.pose.x, r.pose.y));
        }
    }
}
