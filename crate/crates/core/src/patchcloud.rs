//! Triangular patch clouds: detached mesh faces carrying inverse-depth
//! planes, plus per-face feature reductions.
//!
//! A patch with parameters `(a, b, c)` has inverse depth
//! `s(u, v) = a u + b v + c` over normalized camera coordinates, which is the
//! 3D plane `a X + b Y + c Z = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::ingest::{norm3, Intrinsics};
use crate::triangulate::Mesh2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub tri: [[f64; 2]; 3],
    pub abc: [f64; 3],
}

impl Patch {
    /// Inverse depth at a continuous image point.
    #[inline]
    pub fn inv_depth_at(&self, k: &Intrinsics, x: f64, y: f64) -> f64 {
        let (u, v) = k.normalize(x, y);
        self.abc[0] * u + self.abc[1] * v + self.abc[2]
    }

    pub fn centroid(&self) -> [f64; 2] {
        let [p, q, r] = self.tri;
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Smallest inverse depth over the three corners.
    pub fn min_corner_inv_depth(&self, k: &Intrinsics) -> f64 {
        self.tri
            .iter()
            .map(|p| self.inv_depth_at(k, p[0], p[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchCloud {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub faces: Vec<Patch>,
}

impl PatchCloud {
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Three parameters per face.
    pub fn param_count(&self) -> usize {
        3 * self.faces.len()
    }

    /// Fails if any face has non-positive inverse depth at a corner.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (f, p) in self.faces.iter().enumerate() {
            let s = p.min_corner_inv_depth(&self.intrinsics);
            if !(s > 0.0) {
                return Err(Error::invalid(format!(
                    "face {f} has non-positive inverse depth {s} at a corner"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::json::write_file(self, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<PatchCloud> {
        let cloud: PatchCloud = crate::json::read_file(path)?;
        cloud.validate()?;
        Ok(cloud)
    }
}

/// Detaches every mesh face into an independent patch initialised to the
/// fronto-parallel plane at `init_depth` metres.
pub fn detach_faces(mesh: &Mesh2D, k: &Intrinsics, init_depth: f64) -> Result<PatchCloud> {
    if !(init_depth > 0.0 && init_depth.is_finite()) {
        return Err(Error::invalid(format!(
            "init_depth must be > 0, got {init_depth}"
        )));
    }
    k.validate()?;
    let abc = [0.0, 0.0, 1.0 / init_depth];
    Ok(PatchCloud {
        width: mesh.width,
        height: mesh.height,
        intrinsics: *k,
        faces: (0..mesh.num_faces())
            .map(|f| Patch {
                tri: mesh.triangle(f),
                abc,
            })
            .collect(),
    })
}

/// Unit normal `-(a, b, c) / |(a, b, c)|` and depth at the 2D centroid.
pub fn params_to_plane(face: &Patch, k: &Intrinsics) -> Result<([f64; 3], f64)> {
    let len = norm3(face.abc);
    if !(len > 0.0) {
        return Err(Error::invalid("patch parameters are all zero"));
    }
    let normal = face.abc.map(|c| -c / len);
    let [cx, cy] = face.centroid();
    let s = face.inv_depth_at(k, cx, cy);
    if !(s > 0.0) {
        return Err(Error::invalid(format!(
            "non-positive inverse depth {s} at centroid"
        )));
    }
    Ok((normal, 1.0 / s))
}

/// Per-pixel owning face. Pixel `(x, y)` is tested at its center and ties
/// on shared edges or vertices go to the lowest face index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceIdMap {
    width: usize,
    height: usize,
    data: Vec<Option<u32>>,
}

impl FaceIdMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<usize> {
        self.data[y * self.width + x].map(|f| f as usize)
    }

    pub fn data(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.data.iter().map(|f| f.map(|v| v as usize))
    }

    /// Number of pixels owned by each of `num_faces` faces.
    pub fn region_sizes(&self, num_faces: usize) -> Vec<usize> {
        let mut sizes = vec![0; num_faces];
        for f in self.data.iter().flatten() {
            sizes[*f as usize] += 1;
        }
        sizes
    }

    /// Pixel indices (`y * width + x`) owned by each face, in scan order.
    pub fn regions(&self, num_faces: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); num_faces];
        for (i, f) in self.data.iter().enumerate() {
            if let Some(f) = f {
                out[*f as usize].push(i);
            }
        }
        out
    }
}

/// Rasterizes face ownership for any list of positively oriented triangles.
pub(crate) fn face_ids_for(
    width: usize,
    height: usize,
    triangles: impl Iterator<Item = [[f64; 2]; 3]>,
) -> Result<FaceIdMap> {
    let mut data: Vec<Option<u32>> = vec![None; width * height];
    for (f, tri) in triangles.enumerate() {
        let xs = tri.map(|p| p[0]);
        let ys = tri.map(|p| p[1]);
        let lo = |v: [f64; 3], hi: usize| {
            (v.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5)
                .ceil()
                .clamp(0.0, hi as f64) as usize
        };
        let up = |v: [f64; 3], hi: usize| {
            ((v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 0.5).floor() + 1.0)
                .clamp(0.0, hi as f64) as usize
        };
        let (x0, x1) = (lo(xs, width), up(xs, width));
        let (y0, y1) = (lo(ys, height), up(ys, height));
        for y in y0..y1 {
            for x in x0..x1 {
                let slot = &mut data[y * width + x];
                if slot.is_none()
                    && geom::in_triangle_closed(&tri, [x as f64 + 0.5, y as f64 + 0.5])
                {
                    *slot = Some(f as u32);
                }
            }
        }
    }
    if let Some(i) = data.iter().position(Option::is_none) {
        return Err(Error::Uncovered {
            x: i % width,
            y: i / width,
        });
    }
    Ok(FaceIdMap {
        width,
        height,
        data,
    })
}

pub fn face_id_map(mesh: &Mesh2D) -> Result<FaceIdMap> {
    face_ids_for(
        mesh.width,
        mesh.height,
        (0..mesh.num_faces()).map(|f| mesh.triangle(f)),
    )
}

/// Face ownership of a patch cloud's own 2D geometry.
pub fn cloud_face_ids(cloud: &PatchCloud) -> Result<FaceIdMap> {
    face_ids_for(cloud.width, cloud.height, cloud.faces.iter().map(|p| p.tri))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * width * height {
            return Err(Error::invalid("feature map data length mismatch"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map has non-finite values"));
        }
        Ok(FeatureMap {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// `rows x cols` row-major matrix of per-face features.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFeatures {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Faces that own no pixels (their row is all zeros).
    pub empty: Vec<bool>,
}

impl FaceFeatures {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.cols..(m + 1) * self.cols]
    }
}

/// Channel-wise max over each face's pixel region.
pub fn superpixel_pool(f: &FeatureMap, ids: &FaceIdMap, num_faces: usize) -> Result<FaceFeatures> {
    if (f.width, f.height) != (ids.width, ids.height) {
        return Err(Error::DimensionMismatch {
            expected: (ids.width, ids.height),
            actual: (f.width, f.height),
        });
    }
    let c = f.channels;
    let mut data = vec![f64::NEG_INFINITY; num_faces * c];
    let mut empty = vec![true; num_faces];
    for y in 0..f.height {
        for x in 0..f.width {
            let Some(m) = ids.get(x, y) else { continue };
            empty[m] = false;
            for (dst, v) in data[m * c..(m + 1) * c].iter_mut().zip(f.pixel(x, y)) {
                *dst = dst.max(*v);
            }
        }
    }
    for (m, e) in empty.iter().enumerate() {
        if *e {
            data[m * c..(m + 1) * c].fill(0.0);
        }
    }
    Ok(FaceFeatures {
        rows: num_faces,
        cols: c,
        data,
        empty,
    })
}

/// Bilinear sample of `f` at each face's 2D centroid. Pixel `(i, j)` holds
/// the value at `(i + 0.5, j + 0.5)`; samples outside the outermost pixel
/// centers clamp to the border.
pub fn centroid_sample(f: &FeatureMap, cloud: &PatchCloud) -> Result<FaceFeatures> {
    let c = f.channels;
    let mut data = Vec::with_capacity(cloud.num_faces() * c);
    for (m, patch) in cloud.faces.iter().enumerate() {
        let [x, y] = patch.centroid();
        if !(x >= 0.0 && y >= 0.0 && x <= f.width as f64 && y <= f.height as f64) {
            return Err(Error::invalid(format!(
                "centroid ({x}, {y}) of face {m} is outside the {}x{} feature map",
                f.width, f.height
            )));
        }
        let gx = (x - 0.5).clamp(0.0, (f.width - 1) as f64);
        let gy = (y - 0.5).clamp(0.0, (f.height - 1) as f64);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(f.width - 1), (y0 + 1).min(f.height - 1));
        let (tx, ty) = (gx - x0 as f64, gy - y0 as f64);
        for ch in 0..c {
            let v = (1.0 - tx) * (1.0 - ty) * f.pixel(x0, y0)[ch]
                + tx * (1.0 - ty) * f.pixel(x1, y0)[ch]
                + (1.0 - tx) * ty * f.pixel(x0, y1)[ch]
                + tx * ty * f.pixel(x1, y1)[ch];
            data.push(v);
        }
    }
    Ok(FaceFeatures {
        rows: cloud.num_faces(),
        cols: c,
        data,
        empty: vec![false; cloud.num_faces()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triangulate::{triangulate_cdt, Constraints};

    fn square_mesh(n: usize) -> Mesh2D {
        let s = n as f64;
        triangulate_cdt(&Constraints {
            width: n,
            height: n,
            vertices: vec![[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]],
            segments: vec![],
        })
        .unwrap()
    }

    fn k() -> Intrinsics {
        Intrinsics::new(50.0, 50.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn detach_initialises_fronto_parallel() {
        let mesh = square_mesh(4);
        let cloud = detach_faces(&mesh, &k(), 2.0).unwrap();
        assert_eq!(cloud.num_faces(), 2);
        assert_eq!(cloud.param_count(), 6);
        for (f, p) in cloud.faces.iter().enumerate() {
            assert_eq!(p.abc, [0.0, 0.0, 0.5]);
            assert_eq!(p.tri, mesh.triangle(f));
        }
        assert!(detach_faces(&mesh, &k(), 0.0).is_err());
    }

    #[test]
    fn detach_empty_mesh_gives_empty_cloud() {
        let mut mesh = square_mesh(4);
        mesh.faces.clear();
        let cloud = detach_faces(&mesh, &k(), 1.0).unwrap();
        assert_eq!(cloud.num_faces(), 0);
        assert_eq!(cloud.param_count(), 0);
    }

    #[test]
    fn plane_of_fronto_parallel_patch() {
        let p = Patch {
            tri: [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]],
            abc: [0.0, 0.0, 0.5],
        };
        let (n, d) = params_to_plane(&p, &k()).unwrap();
        assert_eq!(n, [-0.0, -0.0, -1.0]);
        assert_eq!(d, 2.0);
    }

    #[test]
    fn slanted_plane_normal_is_perpendicular_to_the_surface() {
        let kk = Intrinsics::new(100.0, 100.0, 10.0, 10.0).unwrap();
        // Centroid at (10, 10) -> u = v = 0.
        let p = Patch {
            tri: [[7.0, 8.0], [13.0, 8.0], [10.0, 14.0]],
            abc: [0.1, 0.0, 0.5],
        };
        let (n, d) = params_to_plane(&p, &kk).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        let expected = [-0.1 / 0.26f64.sqrt(), 0.0, -0.5 / 0.26f64.sqrt()];
        for i in 0..3 {
            assert!((n[i] - expected[i]).abs() < 1e-12);
        }
        assert!((n[0] + 0.196).abs() < 1e-3 && (n[2] + 0.981).abs() < 1e-3);
        // Oracle: finite-difference tangents of the back-projected surface.
        let point = |x: f64, y: f64| {
            let s = p.inv_depth_at(&kk, x, y);
            kk.back_project(x, y, 1.0 / s)
        };
        let h = 1e-4;
        let c = point(10.0, 10.0);
        let tu = crate::ingest::sub3(point(10.0 + h, 10.0), c);
        let tv = crate::ingest::sub3(point(10.0, 10.0 + h), c);
        let dot = |a: [f64; 3]| crate::ingest::dot3(a, n) / norm3(a);
        assert!(dot(tu).abs() < 1e-9 && dot(tv).abs() < 1e-9);
    }

    #[test]
    fn zero_params_are_rejected() {
        let p = Patch {
            tri: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            abc: [0.0; 3],
        };
        assert!(params_to_plane(&p, &k()).is_err());
    }

    #[test]
    fn two_triangle_square_assignment_matches_brute_force() {
        let mesh = square_mesh(4);
        let ids = face_id_map(&mesh).unwrap();
        let mut count = 0;
        for y in 0..4 {
            for x in 0..4 {
                let c = [x as f64 + 0.5, y as f64 + 0.5];
                let owners: Vec<usize> = (0..2)
                    .filter(|&f| geom::in_triangle_closed(&mesh.triangle(f), c))
                    .collect();
                assert_eq!(ids.get(x, y), owners.first().copied());
                count += 1;
            }
        }
        assert_eq!(count, 16);
        assert_eq!(ids.region_sizes(2).iter().sum::<usize>(), 16);
    }

    #[test]
    fn diagonal_ties_go_to_lowest_face() {
        let mesh = square_mesh(4);
        let ids = face_id_map(&mesh).unwrap();
        // Both faces share the diagonal; centers on it belong to face 0.
        let diag = mesh.edges().into_iter().find(|e| {
            let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
            a[0] != b[0] && a[1] != b[1]
        });
        let [a, b] = diag.unwrap().map(|i| mesh.vertices[i]);
        let mut ties = 0;
        for y in 0..4 {
            for x in 0..4 {
                let c = [x as f64 + 0.5, y as f64 + 0.5];
                if geom::orient(a, b, c) == 0.0 {
                    assert_eq!(ids.get(x, y), Some(0));
                    ties += 1;
                }
            }
        }
        assert_eq!(ties, 4);
    }

    #[test]
    fn pooling_takes_region_max() {
        let mesh = square_mesh(2);
        let ids = face_id_map(&mesh).unwrap();
        let vals: Vec<f64> = (0..4).map(|i| [1.0, 5.0, 2.0, 3.0][i]).collect();
        let f = FeatureMap::new(1, 2, 2, vals.clone()).unwrap();
        let pooled = superpixel_pool(&f, &ids, 2).unwrap();
        // Oracle: exhaustive per-region max.
        for m in 0..2 {
            let expect = (0..4)
                .filter(|&i| ids.get(i % 2, i / 2) == Some(m))
                .map(|i| vals[i])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(pooled.row(m), &[expect]);
        }
    }

    #[test]
    fn pooling_two_region_example() {
        // Face 0 owns the top row, face 1 the bottom row.
        let ids = FaceIdMap {
            width: 2,
            height: 2,
            data: vec![Some(0), Some(0), Some(1), Some(1)],
        };
        let f = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 5.0, 3.0]).unwrap();
        let pooled = superpixel_pool(&f, &ids, 3).unwrap();
        assert_eq!(pooled.row(0), &[2.0]);
        assert_eq!(pooled.row(1), &[5.0]);
        assert_eq!(pooled.row(2), &[0.0]);
        assert_eq!(pooled.empty, vec![false, false, true]);
        let constant = FeatureMap::new(2, 2, 2, vec![0.7; 8]).unwrap();
        let p = superpixel_pool(&constant, &ids, 2).unwrap();
        assert!(p.data.iter().all(|v| *v == 0.7));
        let wrong = FeatureMap::new(1, 3, 2, vec![0.0; 6]).unwrap();
        assert!(superpixel_pool(&wrong, &ids, 2).is_err());
    }

    #[test]
    fn centroid_sampling_is_bilinear() {
        let (w, h) = (8, 6);
        let ramp: Vec<f64> = (0..w * h).map(|i| (i % w) as f64 + 0.5).collect();
        let f = FeatureMap::new(1, w, h, ramp.clone()).unwrap();
        let cloud = PatchCloud {
            width: w,
            height: h,
            intrinsics: k(),
            faces: vec![
                Patch {
                    tri: [[2.25, 1.0], [4.25, 2.0], [3.25, 3.0]],
                    abc: [0.0, 0.0, 1.0],
                },
                Patch {
                    tri: [[4.0, 2.0], [5.5, 2.5], [4.0, 3.0]],
                    abc: [0.0, 0.0, 1.0],
                },
            ],
        };
        let s = centroid_sample(&f, &cloud).unwrap();
        assert!((s.row(0)[0] - 3.25).abs() < 1e-12);
        // Second centroid is the center of pixel (4, 2).
        assert!((s.row(1)[0] - ramp[2 * w + 4]).abs() < 1e-12);
        let constant = FeatureMap::new(1, w, h, vec![0.3; w * h]).unwrap();
        let s = centroid_sample(&constant, &cloud).unwrap();
        assert!(s.data.iter().all(|v| (*v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn centroid_outside_is_rejected() {
        let f = FeatureMap::new(1, 4, 4, vec![0.0; 16]).unwrap();
        let cloud = PatchCloud {
            width: 4,
            height: 4,
            intrinsics: k(),
            faces: vec![Patch {
                tri: [[5.0, 5.0], [7.0, 5.0], [6.0, 7.0]],
                abc: [0.0, 0.0, 1.0],
            }],
        };
        assert!(centroid_sample(&f, &cloud).is_err());
    }
}
