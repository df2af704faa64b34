//! End-to-end checks of the `tripatch` binary.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{scene_box, Scene};
use tripatch::ingest::{load_depth, save_depth, save_image, DepthMap, Image2D, Intrinsics};
use tripatch::patchcloud::PatchCloud;
use tripatch::render::{rasterize_mesh3d, rasterize_patches, read_obj};

fn tripatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tripatch"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(scene: &Scene) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        save_image(&scene.image(), root.join("image.png")).unwrap();
        save_depth(&scene.depth(), root.join("depth.png"), 0.001).unwrap();
        tripatch::json::write_file(&scene.k, root.join("k.json")).unwrap();
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn fit(&self, extra: &[&str]) -> Output {
        let (img, depth, k) = (
            self.path("image.png"),
            self.path("depth.png"),
            self.path("k.json"),
        );
        let (out, trace) = (self.path("cloud.json"), self.path("trace.csv"));
        let mut args = vec![
            "fit",
            "--image",
            p(&img),
            "--depth",
            p(&depth),
            "--intrinsics",
            p(&k),
            "--out",
            p(&out),
            "--trace",
            p(&trace),
        ];
        args.extend_from_slice(extra);
        tripatch(&args)
    }
}

#[test]
fn missing_input_is_exit_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = tripatch(&[
        "mesh",
        "--image",
        p(&dir.path().join("nope.png")),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(tripatch(&["mesh", "--bogus"]).status.code(), Some(1));
    assert_eq!(tripatch(&["--help"]).status.code(), Some(0));
}

#[test]
fn constant_image_gives_two_faces() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("flat.png");
    save_image(&Image2D::from_fn_gray(32, 24, |_, _| 0.5).unwrap(), &img).unwrap();
    let out = tripatch(&[
        "mesh",
        "--image",
        p(&img),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("vertices: 4") && stdout.contains("faces: 2"),
        "{stdout}"
    );
}

#[test]
fn zero_normal_weight_reports_zero_normal_loss() {
    let fx = Fixture::new(&scene_box(48, 36));
    let out = fx.fit(&["--lambda-n", "0", "--iterations", "20"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(fx.path("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iteration,L_sum,L_depth,L_normal"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r[3] == 0.0 && r[1] == r[2]));
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]));
}

#[test]
fn mismatched_depth_size_is_rejected() {
    let fx = Fixture::new(&scene_box(48, 36));
    save_depth(&scene_box(24, 18).depth(), fx.path("depth.png"), 0.001).unwrap();
    let out = fx.fit(&["--iterations", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!fx.path("cloud.json").exists());
}

#[test]
fn eval_without_common_pixels_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred.png"), dir.path().join("gt.png"));
    save_depth(
        &DepthMap::from_fn(8, 8, |x, _| if x < 4 { 2.0 } else { 0.0 }).unwrap(),
        &pred,
        0.001,
    )
    .unwrap();
    save_depth(
        &DepthMap::from_fn(8, 8, |x, _| if x >= 4 { 2.0 } else { 0.0 }).unwrap(),
        &gt,
        0.001,
    )
    .unwrap();
    let out = tripatch(&[
        "eval",
        "--pred",
        p(&pred),
        "--gt",
        p(&gt),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn baseline_on_constant_depth_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (depth, k, out_depth) = (
        dir.path().join("d.png"),
        dir.path().join("k.json"),
        dir.path().join("b.png"),
    );
    save_depth(
        &DepthMap::from_fn(20, 16, |_, _| 1.5).unwrap(),
        &depth,
        0.001,
    )
    .unwrap();
    tripatch::json::write_file(&Intrinsics::new(20.0, 20.0, 10.0, 8.0).unwrap(), &k).unwrap();
    let out = tripatch(&[
        "baseline",
        "--depth",
        p(&depth),
        "--intrinsics",
        p(&k),
        "--faces",
        "2",
        "--out",
        p(&out_depth),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let b = load_depth(&out_depth, 0.001).unwrap();
    assert!(b.data().iter().all(|&d| d == 0.0 || (d - 1.5).abs() < 1e-9));
    assert!(b.data().iter().filter(|&&d| d > 0.0).count() > 0);
}

#[test]
fn exported_obj_renders_like_the_cloud() {
    let fx = Fixture::new(&scene_box(48, 36));
    assert!(fx.fit(&["--iterations", "50"]).status.success());
    let (cloud_path, obj, pred) = (
        fx.path("cloud.json"),
        fx.path("cloud.obj"),
        fx.path("pred.png"),
    );
    assert!(
        tripatch(&["export", "--patches", p(&cloud_path), "--out", p(&obj)])
            .status
            .success()
    );
    assert!(tripatch(&[
        "render",
        "--patches",
        p(&cloud_path),
        "--out-depth",
        p(&pred)
    ])
    .status
    .success());

    let cloud = PatchCloud::load(&cloud_path).unwrap();
    let (direct, _, _) = rasterize_patches(&cloud).unwrap();
    let (vertices, faces) = read_obj(&obj).unwrap();
    let viewer = rasterize_mesh3d(
        &vertices,
        &faces,
        &cloud.intrinsics,
        cloud.width,
        cloud.height,
    )
    .unwrap();
    let rendered = load_depth(&pred, 0.001).unwrap();
    let mut compared = 0;
    for y in 0..cloud.height {
        for x in 0..cloud.width {
            if viewer.is_valid(x, y) && direct.is_valid(x, y) {
                assert!(
                    (viewer.get(x, y) - direct.get(x, y)).abs() < 1e-5,
                    "({x}, {y})"
                );
                compared += 1;
            }
            // The PNG stores whole millimetres.
            assert!(
                (rendered.get(x, y) - direct.get(x, y)).abs() <= 0.0005 + 1e-9,
                "({x}, {y})"
            );
        }
    }
    assert!(compared as f64 > 0.99 * (cloud.width * cloud.height) as f64);
}
