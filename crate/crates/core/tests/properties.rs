//! Property tests for structural invariants.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_mesh;
use tripatch::edges::{point_segment_distance, simplify_polyline, Polyline};
use tripatch::ingest::{DepthMap, Intrinsics};
use tripatch::metrics::evaluate;
use tripatch::patchcloud::{face_id_map, params_to_plane, Patch};

fn point() -> impl Strategy<Value = [f64; 2]> {
    [0.0..100.0f64, 0.0..100.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn simplification_stays_within_eps(pts in prop::collection::vec(point(), 2..60), eps in 0.0..5.0f64) {
        let s = simplify_polyline(&Polyline::open(pts.clone()), eps);
        prop_assert_eq!(s.points[0], pts[0]);
        prop_assert_eq!(*s.points.last().unwrap(), *pts.last().unwrap());
        for p in &pts {
            let d = s
                .points
                .windows(2)
                .map(|w| point_segment_distance(*p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(d <= eps + 1e-9, "point {:?} is {} from the chain", p, d);
        }
    }

    #[test]
    fn plane_normal_ignores_positive_scale(
        abc in [-0.5..0.5f64, -0.5..0.5f64, 0.6..2.0f64],
        exp in -30i32..30,
    ) {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 40.0).unwrap();
        let tri = [[10.0, 10.0], [80.0, 15.0], [40.0, 70.0]];
        let scale = 2f64.powi(exp);
        let (n, _) = params_to_plane(&Patch { tri, abc }, &k).unwrap();
        let (m, _) = params_to_plane(&Patch { tri, abc: abc.map(|c| c * scale) }, &k).unwrap();
        prop_assert_eq!(n, m);
    }

    #[test]
    fn delta_accuracies_are_monotone(pairs in prop::collection::vec((0.1..10.0f64, prop_oneof![Just(0.0), 0.01..10.0f64]), 1..64)) {
        let n = pairs.len();
        let gt = DepthMap::new(n, 1, pairs.iter().map(|p| p.0).collect()).unwrap();
        let pred = DepthMap::new(n, 1, pairs.iter().map(|p| p.1).collect()).unwrap();
        if let Ok(r) = evaluate(&pred, &gt) {
            prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Euler characteristic of a disk and an exact pixel partition.
    #[test]
    fn meshes_partition_the_frame(seed in any::<u64>(), points in 0usize..12, segments in 0usize..8) {
        let (w, h) = (40, 30);
        let mesh = random_mesh(&mut ChaCha8Rng::seed_from_u64(seed), w, h, points, segments);
        let (v, e, f) = (mesh.vertices.len() as i64, mesh.edges().len() as i64, mesh.num_faces() as i64);
        prop_assert_eq!(v - e + f, 1);
        let ids = face_id_map(&mesh).unwrap();
        prop_assert_eq!(ids.region_sizes(mesh.num_faces()).iter().sum::<usize>(), w * h);
        for y in 0..h {
            for x in 0..w {
                let t = mesh.triangle(ids.get(x, y).unwrap());
                let c = [x as f64 + 0.5, y as f64 + 0.5];
                let side = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                let s = [side(t[0], t[1]), side(t[1], t[2]), side(t[2], t[0])];
                let tol = 1e-9;
                prop_assert!(s.iter().all(|&d| d >= -tol) || s.iter().all(|&d| d <= tol), "pixel ({}, {}) outside its face", x, y);
            }
        }
    }
}
