//! Dense-mesh baseline: connect neighbouring depth pixels into a triangle
//! grid, simplify it with quadric edge collapses and render the result.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom;
use crate::ingest::{cross3, dot3, norm3, sub3, DepthMap, Intrinsics};
use crate::render::{rasterize_mesh3d, write_obj};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh3D {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh3D {
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn save_obj(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        write_obj(&self.vertices, &self.faces, path)
    }
}

/// One vertex per valid pixel, two faces per fully valid 2x2 cell split
/// along the top-left to bottom-right diagonal. Cells touching an invalid
/// pixel produce no faces.
pub fn grid_mesh(depth: &DepthMap, k: &Intrinsics) -> Result<Mesh3D> {
    let (w, h) = depth.dims();
    let mut index = vec![usize::MAX; w * h];
    let mut vertices = Vec::with_capacity(depth.valid_count());
    for y in 0..h {
        for x in 0..w {
            if depth.is_valid(x, y) {
                index[y * w + x] = vertices.len();
                vertices.push(k.back_project(x as f64 + 0.5, y as f64 + 0.5, depth.get(x, y)));
            }
        }
    }
    if vertices.len() < 4 {
        return Err(Error::NoValidPixels(
            "depth map needs at least 4 valid pixels for a grid mesh".into(),
        ));
    }
    let mut faces = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w - 1 {
            let tl = index[y * w + x];
            let tr = index[y * w + x + 1];
            let bl = index[(y + 1) * w + x];
            let br = index[(y + 1) * w + x + 1];
            if [tl, tr, bl, br].contains(&usize::MAX) {
                continue;
            }
            faces.push([tl, tr, br]);
            faces.push([tl, br, bl]);
        }
    }
    Ok(Mesh3D { vertices, faces })
}

type Quadric = [f64; 10];

fn plane_quadric(n: [f64; 3], d: f64, weight: f64) -> Quadric {
    let p = [n[0], n[1], n[2], d];
    [
        p[0] * p[0],
        p[0] * p[1],
        p[0] * p[2],
        p[0] * p[3],
        p[1] * p[1],
        p[1] * p[2],
        p[1] * p[3],
        p[2] * p[2],
        p[2] * p[3],
        p[3] * p[3],
    ]
    .map(|v| v * weight)
}

fn add_quadric(a: &mut Quadric, b: &Quadric) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn quadric_error(q: &Quadric, v: [f64; 3]) -> f64 {
    let [x, y, z] = v;
    q[0] * x * x
        + 2.0 * q[1] * x * y
        + 2.0 * q[2] * x * z
        + 2.0 * q[3] * x
        + q[4] * y * y
        + 2.0 * q[5] * y * z
        + 2.0 * q[6] * y
        + q[7] * z * z
        + 2.0 * q[8] * z
        + q[9]
}

/// Weight of the constraint planes attached to open boundary edges.
const BOUNDARY_WEIGHT: f64 = 1e3;

/// Squared edge length added to every collapse cost. Breaks the near-ties of
/// flat regions in favour of short edges, which keeps vertex valence low.
const LENGTH_WEIGHT: f64 = 1e-6;

fn face_normal(p: [[f64; 3]; 3]) -> [f64; 3] {
    cross3(sub3(p[1], p[0]), sub3(p[2], p[0]))
}

/// Image-plane orientation (up to the positive scale of the intrinsics).
fn projected_orient(p: [[f64; 3]; 3]) -> f64 {
    let q = p.map(|v| [v[0] / v[2], v[1] / v[2]]);
    geom::orient(q[0], q[1], q[2])
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    cost: f64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed so that the max-heap pops the cheapest entry first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Decimator {
    pos: Vec<[f64; 3]>,
    quad: Vec<Quadric>,
    vertex_alive: Vec<bool>,
    version: Vec<u32>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<usize>>,
    boundary: Vec<bool>,
    live_faces: usize,
}

impl Decimator {
    fn new(mesh: &Mesh3D) -> Self {
        let nv = mesh.vertices.len();
        let mut vertex_faces = vec![Vec::new(); nv];
        let mut quad = vec![[0.0; 10]; nv];
        for (f, tri) in mesh.faces.iter().enumerate() {
            let p = tri.map(|i| mesh.vertices[i]);
            let n = face_normal(p);
            let len = norm3(n);
            for &i in tri {
                vertex_faces[i].push(f);
            }
            if len > 0.0 {
                let n = n.map(|c| c / len);
                let q = plane_quadric(n, -dot3(n, p[0]), 1.0);
                for &i in tri {
                    add_quadric(&mut quad[i], &q);
                }
            }
        }
        let mut dec = Decimator {
            pos: mesh.vertices.clone(),
            quad,
            vertex_alive: vec![true; nv],
            version: vec![0; nv],
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vertex_faces,
            boundary: vec![false; nv],
            live_faces: mesh.faces.len(),
        };
        // Penalty planes through open edges, perpendicular to their face.
        for tri in &mesh.faces {
            for j in 0..3 {
                let (a, b) = (tri[j], tri[(j + 1) % 3]);
                if dec.edge_faces(a, b).len() != 1 {
                    continue;
                }
                dec.boundary[a] = true;
                dec.boundary[b] = true;
                let p = tri.map(|i| mesh.vertices[i]);
                let n = face_normal(p);
                let e = sub3(mesh.vertices[b], mesh.vertices[a]);
                let m = cross3(e, n);
                let len = norm3(m);
                if len == 0.0 || !len.is_finite() {
                    continue;
                }
                let m = m.map(|c| c / len);
                let q = plane_quadric(m, -dot3(m, mesh.vertices[a]), BOUNDARY_WEIGHT);
                add_quadric(&mut dec.quad[a], &q);
                add_quadric(&mut dec.quad[b], &q);
            }
        }
        dec
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vertex_faces[a]
            .iter()
            .copied()
            .filter(|&f| self.face_alive[f] && self.faces[f].contains(&b))
            .collect()
    }

    fn neighbors(&self, a: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.vertex_faces[a]
            .iter()
            .filter(|&&f| self.face_alive[f])
            .flat_map(|&f| self.faces[f])
            .filter(|&v| v != a)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Link condition plus the rule that an interior edge may not join two
    /// boundary vertices.
    fn topology_ok(&self, a: usize, b: usize, shared: &[usize]) -> bool {
        if shared.is_empty() {
            return false;
        }
        if shared.len() == 2 && self.boundary[a] && self.boundary[b] {
            return false;
        }
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common = na.iter().filter(|v| nb.binary_search(v).is_ok()).count();
        common == shared.len()
    }

    /// No surviving face may flip in the image plane or in 3D.
    fn orientation_ok(&self, a: usize, b: usize, p: [f64; 3], shared: &[usize]) -> bool {
        for &v in [a, b].iter() {
            for &f in &self.vertex_faces[v] {
                if !self.face_alive[f] || shared.contains(&f) {
                    continue;
                }
                let old = self.faces[f].map(|i| self.pos[i]);
                let new = self.faces[f].map(|i| if i == a || i == b { p } else { self.pos[i] });
                if !(projected_orient(new) > 0.0) {
                    return false;
                }
                if !(dot3(face_normal(old), face_normal(new)) > 0.0) {
                    return false;
                }
            }
        }
        true
    }

    /// Cheapest admissible placement among `a`, `b` and their midpoint.
    fn best_placement(&self, a: usize, b: usize) -> Option<(f64, [f64; 3])> {
        let shared = self.edge_faces(a, b);
        if !self.topology_ok(a, b, &shared) {
            return None;
        }
        let mut q = self.quad[a];
        add_quadric(&mut q, &self.quad[b]);
        let (pa, pb) = (self.pos[a], self.pos[b]);
        let mid = [0, 1, 2].map(|j| 0.5 * (pa[j] + pb[j]));
        let e = sub3(pa, pb);
        let bias = LENGTH_WEIGHT * dot3(e, e);
        let mut options: Vec<(f64, [f64; 3])> = [pa, pb, mid]
            .iter()
            .map(|&p| (quadric_error(&q, p).max(0.0) + bias, p))
            .collect();
        options.sort_by(|x, y| x.0.total_cmp(&y.0));
        options
            .into_iter()
            .find(|(_, p)| self.orientation_ok(a, b, *p, &shared))
    }

    fn push(&self, heap: &mut BinaryHeap<Entry>, a: usize, b: usize) {
        let (a, b) = (a.min(b), a.max(b));
        if let Some((cost, _)) = self.best_placement(a, b) {
            heap.push(Entry {
                cost,
                a,
                b,
                va: self.version[a],
                vb: self.version[b],
            });
        }
    }

    fn collapse(&mut self, a: usize, b: usize, p: [f64; 3]) {
        for f in self.edge_faces(a, b) {
            self.face_alive[f] = false;
            self.live_faces -= 1;
        }
        let moved = std::mem::take(&mut self.vertex_faces[b]);
        for f in moved {
            if !self.face_alive[f] {
                continue;
            }
            for i in self.faces[f].iter_mut() {
                if *i == b {
                    *i = a;
                }
            }
            self.vertex_faces[a].push(f);
        }
        let alive = &self.face_alive;
        self.vertex_faces[a].retain(|&f| alive[f]);
        self.vertex_faces[a].sort_unstable();
        self.vertex_faces[a].dedup();
        self.pos[a] = p;
        let qb = self.quad[b];
        add_quadric(&mut self.quad[a], &qb);
        self.boundary[a] |= self.boundary[b];
        self.vertex_alive[b] = false;
        self.version[a] += 1;
        self.version[b] += 1;
    }

    fn into_mesh(self) -> Mesh3D {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(self.live_faces);
        for (f, tri) in self.faces.iter().enumerate() {
            if !self.face_alive[f] {
                continue;
            }
            faces.push(tri.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = vertices.len();
                    vertices.push(self.pos[i]);
                }
                remap[i]
            }));
        }
        Mesh3D { vertices, faces }
    }
}

/// Quadric-error edge-collapse simplification down to at most
/// `target_faces` faces. Collapse points are restricted to an edge's
/// endpoints or midpoint. When no admissible collapse remains the
/// partially simplified mesh is returned.
pub fn decimate(mesh: &Mesh3D, target_faces: usize) -> Result<Mesh3D> {
    if target_faces < 2 {
        return Err(Error::invalid(format!(
            "target face count must be >= 2, got {target_faces}"
        )));
    }
    if mesh.num_faces() <= target_faces {
        return Ok(mesh.clone());
    }
    let mut dec = Decimator::new(mesh);
    let mut heap = BinaryHeap::new();
    let mut edges: Vec<(usize, usize)> = mesh
        .faces
        .iter()
        .flat_map(|t| (0..3).map(move |j| (t[j].min(t[(j + 1) % 3]), t[j].max(t[(j + 1) % 3]))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    for (a, b) in edges {
        dec.push(&mut heap, a, b);
    }
    while dec.live_faces > target_faces {
        let Some(e) = heap.pop() else { break };
        if !dec.vertex_alive[e.a]
            || !dec.vertex_alive[e.b]
            || dec.version[e.a] != e.va
            || dec.version[e.b] != e.vb
        {
            continue;
        }
        let Some((cost, p)) = dec.best_placement(e.a, e.b) else {
            continue;
        };
        if cost > e.cost {
            heap.push(Entry { cost, ..e });
            continue;
        }
        dec.collapse(e.a, e.b, p);
        for n in dec.neighbors(e.a) {
            dec.push(&mut heap, e.a, n);
        }
    }
    if dec.live_faces > target_faces {
        log::warn!(
            "decimation stopped at {} faces (target {target_faces}): no admissible collapse left",
            dec.live_faces
        );
    }
    Ok(dec.into_mesh())
}

/// Grid mesh of `depth`, simplified to `target_faces`.
pub fn baseline_mesh(depth: &DepthMap, k: &Intrinsics, target_faces: usize) -> Result<Mesh3D> {
    let grid = grid_mesh(depth, k)?;
    if grid.faces.is_empty() {
        return Err(Error::NoValidPixels(
            "depth map has no fully valid 2x2 cell".into(),
        ));
    }
    decimate(&grid, target_faces)
}

/// Renders the simplified grid mesh back into a depth map.
pub fn run_baseline(depth: &DepthMap, k: &Intrinsics, target_faces: usize) -> Result<DepthMap> {
    let mesh = baseline_mesh(depth, k, target_faces)?;
    rasterize_mesh3d(
        &mesh.vertices,
        &mesh.faces,
        k,
        depth.width(),
        depth.height(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Intrinsics {
        Intrinsics::new(30.0, 30.0, 8.5, 8.5).unwrap()
    }

    /// Depth of the plane `n . X = d` along the ray through `(x, y)`.
    fn plane_depth(k: &Intrinsics, n: [f64; 3], d: f64, x: f64, y: f64) -> f64 {
        let (u, v) = k.normalize(x, y);
        d / (n[0] * u + n[1] * v + n[2])
    }

    #[test]
    fn minimal_cell() {
        let d = DepthMap::from_fn(2, 2, |_, _| 1.0).unwrap();
        let m = grid_mesh(&d, &k()).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (4, 2));
    }

    #[test]
    fn hole_removes_cells() {
        let d = DepthMap::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { 0.0 } else { 1.0 }).unwrap();
        let m = grid_mesh(&d, &k()).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (8, 0));
        assert!(baseline_mesh(&d, &k(), 4).is_err());
    }

    #[test]
    fn full_grid_counts() {
        let d = DepthMap::from_fn(7, 5, |x, _| 1.0 + x as f64).unwrap();
        let m = grid_mesh(&d, &k()).unwrap();
        assert_eq!(m.vertices.len(), 35);
        assert_eq!(m.faces.len(), 6 * 4 * 2);
        for f in &m.faces {
            assert!(projected_orient(f.map(|i| m.vertices[i])) > 0.0);
        }
    }

    #[test]
    fn planar_grid_decimates_onto_its_plane() {
        let kk = k();
        let (n, dd) = ([0.1, -0.2, 1.0], 2.0);
        let depth = DepthMap::from_fn(17, 17, |x, y| {
            plane_depth(&kk, n, dd, x as f64 + 0.5, y as f64 + 0.5)
        })
        .unwrap();
        let grid = grid_mesh(&depth, &kk).unwrap();
        assert_eq!(grid.num_faces(), 512);
        let out = decimate(&grid, 8).unwrap();
        assert!(
            out.num_faces() <= 8 && out.num_faces() >= 6,
            "{}",
            out.num_faces()
        );
        let len = norm3(n);
        for v in &out.vertices {
            assert!((dot3(n, *v) - dd).abs() / len < 1e-6);
        }
        let r = rasterize_mesh3d(&out.vertices, &out.faces, &kk, 17, 17).unwrap();
        for y in 0..17 {
            for x in 0..17 {
                if r.is_valid(x, y) {
                    assert!((r.get(x, y) - depth.get(x, y)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn no_op_when_target_is_large() {
        let d = DepthMap::from_fn(4, 4, |x, y| 1.0 + 0.1 * (x * y) as f64).unwrap();
        let g = grid_mesh(&d, &k()).unwrap();
        assert_eq!(decimate(&g, 18).unwrap(), g);
        assert_eq!(decimate(&g, 100).unwrap(), g);
    }

    #[test]
    fn ridge_crease_survives() {
        let kk = k();
        let w = 17;
        // Two planes meeting along the column x = 8.5.
        let depth =
            DepthMap::from_fn(w, w, |x, _| 2.0 + 0.05 * (x as f64 + 0.5 - 8.5).abs()).unwrap();
        let grid = grid_mesh(&depth, &kk).unwrap();
        let out = decimate(&grid, 16).unwrap();
        let r = rasterize_mesh3d(&out.vertices, &out.faces, &kk, w, w).unwrap();
        let (lo, hi) = (2.0, 2.0 + 0.05 * 8.0);
        let mut max_err: f64 = 0.0;
        for y in 0..w {
            for x in 0..w {
                if r.is_valid(x, y) {
                    max_err = max_err.max((r.get(x, y) - depth.get(x, y)).abs());
                }
            }
        }
        assert!(max_err < 0.05 * (hi - lo), "max error {max_err}");
    }

    #[test]
    fn constant_depth_is_reproduced() {
        let d = DepthMap::from_fn(12, 9, |_, _| 1.7).unwrap();
        let r = run_baseline(&d, &k(), 2).unwrap();
        assert!(r.valid_count() > 0);
        for y in 0..9 {
            for x in 0..12 {
                if r.is_valid(x, y) {
                    assert!((r.get(x, y) - 1.7).abs() < 1e-6);
                }
            }
        }
    }

    fn rmse_on_covered(pred: &DepthMap, gt: &DepthMap) -> f64 {
        let mut s = 0.0;
        let mut n = 0;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if pred.is_valid(x, y) {
                    s += (pred.get(x, y) - gt.get(x, y)).powi(2);
                    n += 1;
                }
            }
        }
        (s / n as f64).sqrt()
    }

    #[test]
    fn staircase_improves_with_more_faces() {
        let kk = Intrinsics::new(40.0, 40.0, 16.0, 12.0).unwrap();
        let d = DepthMap::from_fn(32, 24, |x, _| 1.0 + 0.25 * (x / 4) as f64).unwrap();
        let coarse = run_baseline(&d, &kk, 8).unwrap();
        let fine = run_baseline(&d, &kk, 32).unwrap();
        assert!(rmse_on_covered(&coarse, &d) > rmse_on_covered(&fine, &d));
    }

    #[test]
    fn output_stays_within_input_range() {
        let d = DepthMap::from_fn(16, 12, |x, y| 1.0 + ((x * 7 + y * 3) % 5) as f64 * 0.2).unwrap();
        let r = run_baseline(&d, &k(), 20).unwrap();
        for v in r.data().iter().filter(|v| **v > 0.0) {
            assert!(*v >= 1.0 - 1e-12 && *v <= 1.8 + 1e-12);
        }
    }
}
