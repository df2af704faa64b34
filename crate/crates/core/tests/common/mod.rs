//! Synthetic piecewise-planar scenes shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use tripatch::edges::Polyline;
use tripatch::ingest::{DepthMap, Image2D, Intrinsics, NormalMap};
use tripatch::patchcloud::PatchCloud;
use tripatch::triangulate::{build_constraints, triangulate_cdt, Mesh2D};

#[derive(Debug, Clone, Copy)]
pub enum Shape {
    All,
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Tri([[f64; 2]; 3]),
    Disk { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Shape::All => true,
            Shape::Rect { x0, y0, x1, y1 } => p[0] >= x0 && p[0] < x1 && p[1] >= y0 && p[1] < y1,
            Shape::Tri(t) => {
                let s = |a: [f64; 2], b: [f64; 2]| {
                    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                };
                let (d0, d1, d2) = (s(t[0], t[1]), s(t[1], t[2]), s(t[2], t[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
            Shape::Disk { cx, cy, r } => (p[0] - cx).powi(2) + (p[1] - cy).powi(2) < r * r,
        }
    }
}

/// A planar region: inverse depth `a u + b v + c` and a flat intensity.
#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub shape: Shape,
    pub abc: [f64; 3],
    pub intensity: f64,
}

pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub k: Intrinsics,
    pub regions: Vec<Region>,
}

impl Scene {
    /// Topmost region containing a continuous image point.
    pub fn region_at(&self, p: [f64; 2]) -> &Region {
        self.regions
            .iter()
            .rev()
            .find(|r| r.shape.contains(p))
            .expect("first region covers the frame")
    }

    fn center(x: usize, y: usize) -> [f64; 2] {
        [x as f64 + 0.5, y as f64 + 0.5]
    }

    pub fn image(&self) -> Image2D {
        Image2D::from_fn_gray(self.width, self.height, |x, y| {
            self.region_at(Self::center(x, y)).intensity
        })
        .unwrap()
    }

    pub fn depth(&self) -> DepthMap {
        DepthMap::from_fn(self.width, self.height, |x, y| {
            let abc = self.region_at(Self::center(x, y)).abc;
            let (u, v) = self.k.pixel_ray(x, y);
            1.0 / (abc[0] * u + abc[1] * v + abc[2])
        })
        .unwrap()
    }

    pub fn normals(&self) -> NormalMap {
        let data = (0..self.width * self.height)
            .map(|i| {
                let abc = self
                    .region_at(Self::center(i % self.width, i / self.width))
                    .abc;
                let len = (abc[0] * abc[0] + abc[1] * abc[1] + abc[2] * abc[2]).sqrt();
                abc.map(|c| -c / len)
            })
            .collect();
        NormalMap::new(self.width, self.height, data).unwrap()
    }
}

fn k_for(w: usize, h: usize) -> Intrinsics {
    Intrinsics::new(
        0.9 * w as f64,
        0.9 * w as f64,
        w as f64 / 2.0,
        h as f64 / 2.0,
    )
    .unwrap()
}

/// Slanted background with a nearer box.
pub fn scene_box(w: usize, h: usize) -> Scene {
    let (fw, fh) = (w as f64, h as f64);
    Scene {
        width: w,
        height: h,
        k: k_for(w, h),
        regions: vec![
            Region {
                shape: Shape::All,
                abc: [0.06, -0.04, 0.28],
                intensity: 0.2,
            },
            Region {
                shape: Shape::Rect {
                    x0: 0.3 * fw,
                    y0: 0.25 * fh,
                    x1: 0.7 * fw,
                    y1: 0.8 * fh,
                },
                abc: [0.0, 0.0, 0.8],
                intensity: 0.8,
            },
        ],
    }
}

/// Floor and wall meeting at a horizontal line, with a triangular panel.
pub fn scene_room(w: usize, h: usize) -> Scene {
    let (fw, fh) = (w as f64, h as f64);
    Scene {
        width: w,
        height: h,
        k: k_for(w, h),
        regions: vec![
            Region {
                shape: Shape::All,
                abc: [0.0, 0.0, 0.25],
                intensity: 0.3,
            },
            Region {
                shape: Shape::Rect {
                    x0: 0.0,
                    y0: 0.6 * fh,
                    x1: fw,
                    y1: fh,
                },
                abc: [0.0, 1.2, 0.2],
                intensity: 0.65,
            },
            Region {
                shape: Shape::Tri([
                    [0.15 * fw, 0.7 * fh],
                    [0.45 * fw, 0.15 * fh],
                    [0.6 * fw, 0.75 * fh],
                ]),
                abc: [-0.15, 0.05, 0.6],
                intensity: 0.95,
            },
        ],
    }
}

/// Two overlapping slanted boards in front of a wall.
pub fn scene_boards(w: usize, h: usize) -> Scene {
    let (fw, fh) = (w as f64, h as f64);
    Scene {
        width: w,
        height: h,
        k: k_for(w, h),
        regions: vec![
            Region {
                shape: Shape::All,
                abc: [-0.03, 0.0, 0.3],
                intensity: 0.15,
            },
            Region {
                shape: Shape::Rect {
                    x0: 0.1 * fw,
                    y0: 0.15 * fh,
                    x1: 0.55 * fw,
                    y1: 0.65 * fh,
                },
                abc: [0.12, 0.0, 0.5],
                intensity: 0.55,
            },
            Region {
                shape: Shape::Rect {
                    x0: 0.4 * fw,
                    y0: 0.4 * fh,
                    x1: 0.9 * fw,
                    y1: 0.9 * fh,
                },
                abc: [0.0, -0.1, 0.7],
                intensity: 0.9,
            },
        ],
    }
}

/// Random planar straight-line graph: corners plus `points` interior vertices
/// and `segments` random chords, triangulated.
pub fn random_mesh(
    rng: &mut impl Rng,
    w: usize,
    h: usize,
    points: usize,
    segments: usize,
) -> Mesh2D {
    let (fw, fh) = (w as f64, h as f64);
    let mut polylines = Vec::new();
    let mut p = || [rng.gen_range(0.3..fw - 0.3), rng.gen_range(0.3..fh - 0.3)];
    for _ in 0..points {
        let a = p();
        polylines.push(Polyline {
            points: vec![a],
            closed: false,
        });
    }
    for _ in 0..segments {
        let (a, b) = (p(), p());
        polylines.push(Polyline {
            points: vec![a, b],
            closed: false,
        });
    }
    let c = build_constraints(&polylines, w, h, 1e-3).unwrap();
    triangulate_cdt(&c).unwrap()
}

/// Patch cloud over `mesh` with random planes whose depth stays in
/// roughly [1, 4] m over the frame.
pub fn random_cloud(rng: &mut impl Rng, mesh: &Mesh2D, k: &Intrinsics) -> PatchCloud {
    let mut cloud = tripatch::patchcloud::detach_faces(mesh, k, 2.0).unwrap();
    for p in cloud.faces.iter_mut() {
        p.abc = [
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(0.3..0.8),
        ];
    }
    cloud.validate().unwrap();
    cloud
}

pub fn rmse_on(mask: impl Fn(usize, usize) -> bool, a: &DepthMap, b: &DepthMap) -> (f64, usize) {
    let mut s = 0.0;
    let mut n = 0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask(x, y) {
                s += (a.get(x, y) - b.get(x, y)).powi(2);
                n += 1;
            }
        }
    }
    ((s / n as f64).sqrt(), n)
}
