//! Constraint construction and constrained Delaunay triangulation of the
//! image frame.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use spade::handles::FixedVertexHandle;
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::edges::{self, Polyline};
use crate::error::{Error, Result};
use crate::geom;
use crate::ingest::Image2D;

/// Faces with area at or below this (px^2) count as degenerate.
pub const AREA_EPS: f64 = 1e-6;
pub const DEFAULT_SNAP_EPS: f64 = 1.0;
/// Distance a vertex of a degenerate face is pushed off its opposite edge.
const PERTURB_PX: f64 = 1e-3;
const MAX_PERTURB_ROUNDS: usize = 8;
const MAX_SPLIT_ROUNDS: usize = 16;

/// Vertices and constraint segments ready for triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<[f64; 2]>,
    pub segments: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh2D {
    pub width: usize,
    pub height: usize,
    pub vertices: Vec<[f64; 2]>,
    pub segments: Vec<[usize; 2]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh2D {
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, f: usize) -> [[f64; 2]; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * geom::signed_area2(a, b, c)
    }

    /// Unique undirected edges in first-seen order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for f in &self.faces {
            for k in 0..3 {
                let e = sorted(f[k], f[(k + 1) % 3]);
                if seen.insert(e) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// Checks the frame, orientation, area and coverage invariants.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, v) in self.vertices.iter().enumerate() {
            if !(v[0] >= 0.0 && v[0] <= w && v[1] >= 0.0 && v[1] <= h) {
                return Err(Error::invalid(format!(
                    "vertex {i} {v:?} outside the frame"
                )));
            }
        }
        let mut total = 0.0;
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::invalid(format!(
                    "face {f} has an out-of-range vertex"
                )));
            }
            let area = self.face_area(f);
            if !(area > AREA_EPS) {
                return Err(Error::invalid(format!(
                    "face {f} is not CCW with area > eps ({area})"
                )));
            }
            total += area;
        }
        let frame = w * h;
        if ((total - frame) / frame).abs() > 1e-3 {
            return Err(Error::invalid(format!(
                "faces cover {total} px^2 of a {frame} px^2 frame"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::json::write_file(self, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Mesh2D> {
        let mesh: Mesh2D = crate::json::read_file(path)?;
        mesh.validate()?;
        Ok(mesh)
    }
}

fn sorted(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Deduplicating vertex store with snapping to the frame border and to
/// existing vertices.
struct VertexPool {
    width: f64,
    height: f64,
    snap: f64,
    cell: f64,
    points: Vec<[f64; 2]>,
    grid: HashMap<(i64, i64), Vec<usize>>,
}

impl VertexPool {
    fn new(width: f64, height: f64, snap: f64) -> Self {
        VertexPool {
            width,
            height,
            snap,
            cell: snap.max(1.0),
            points: Vec::new(),
            grid: HashMap::new(),
        }
    }

    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        (
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
        )
    }

    fn snap_border(&self, p: [f64; 2]) -> [f64; 2] {
        let snap_axis = |v: f64, hi: f64| {
            let v = v.clamp(0.0, hi);
            if v <= self.snap {
                0.0
            } else if v >= hi - self.snap {
                hi
            } else {
                v
            }
        };
        [snap_axis(p[0], self.width), snap_axis(p[1], self.height)]
    }

    fn find(&self, p: [f64; 2]) -> Option<usize> {
        let (kx, ky) = self.key(p);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &i in self.grid.get(&(kx + dx, ky + dy)).into_iter().flatten() {
                    let q = self.points[i];
                    let d = (p[0] - q[0]).hypot(p[1] - q[1]);
                    if d <= self.snap && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                        best = Some((d, i));
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }

    fn push(&mut self, p: [f64; 2]) -> usize {
        let i = self.points.len();
        self.points.push(p);
        self.grid.entry(self.key(p)).or_default().push(i);
        i
    }

    /// Snapped insert used for polyline points.
    fn insert(&mut self, p: [f64; 2]) -> usize {
        let p = self.snap_border(p);
        self.find(p).unwrap_or_else(|| self.push(p))
    }

    /// Exact-match insert used for computed intersection points.
    fn insert_exact(&mut self, p: [f64; 2]) -> usize {
        let (kx, ky) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &i in self.grid.get(&(kx + dx, ky + dy)).into_iter().flatten() {
                    if self.points[i] == p {
                        return i;
                    }
                }
            }
        }
        self.push(p)
    }
}

/// Uniform bucket grid over segment bounding boxes.
fn bucket_segments(
    points: &[[f64; 2]],
    segments: &[[usize; 2]],
    cell: f64,
) -> HashMap<(i64, i64), Vec<usize>> {
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (s, &[a, b]) in segments.iter().enumerate() {
        let (pa, pb) = (points[a], points[b]);
        let (x0, x1) = (pa[0].min(pb[0]), pa[0].max(pb[0]));
        let (y0, y1) = (pa[1].min(pb[1]), pa[1].max(pb[1]));
        for kx in (x0 / cell).floor() as i64..=(x1 / cell).floor() as i64 {
            for ky in (y0 / cell).floor() as i64..=(y1 / cell).floor() as i64 {
                grid.entry((kx, ky)).or_default().push(s);
            }
        }
    }
    grid
}

/// One round of splitting: segments are cut at vertices lying on their
/// interior and at proper crossings. Returns true if anything changed.
fn split_round(pool: &mut VertexPool, segments: &mut Vec<[usize; 2]>) -> bool {
    const CELL: f64 = 16.0;
    let grid = bucket_segments(&pool.points, segments, CELL);
    let mut cuts: Vec<Vec<usize>> = vec![Vec::new(); segments.len()];

    // Vertices on segment interiors.
    for (v, &p) in pool.points.iter().enumerate() {
        let key = ((p[0] / CELL).floor() as i64, (p[1] / CELL).floor() as i64);
        for &s in grid.get(&key).into_iter().flatten() {
            let [a, b] = segments[s];
            if v != a && v != b && geom::on_segment_interior(pool.points[a], pool.points[b], p) {
                cuts[s].push(v);
            }
        }
    }

    // Proper crossings.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut seen = HashSet::new();
    let mut keys: Vec<_> = grid.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let bucket = &grid[&key];
        for (i, &s) in bucket.iter().enumerate() {
            for &t in &bucket[i + 1..] {
                let pair = (s.min(t), s.max(t));
                if seen.insert(pair) {
                    pairs.push(pair);
                }
            }
        }
    }
    pairs.sort_unstable();
    for (s, t) in pairs {
        let [a, b] = segments[s];
        let [c, d] = segments[t];
        if a == c || a == d || b == c || b == d {
            continue;
        }
        let (pa, pb, pc, pd) = (
            pool.points[a],
            pool.points[b],
            pool.points[c],
            pool.points[d],
        );
        if geom::segments_cross_properly(pa, pb, pc, pd) {
            let x = geom::line_intersection(pa, pb, pc, pd);
            let v = pool.insert_exact(x);
            cuts[s].push(v);
            cuts[t].push(v);
        }
    }

    if cuts.iter().all(Vec::is_empty) {
        return false;
    }
    let mut out = Vec::with_capacity(segments.len());
    for (s, &[a, b]) in segments.iter().enumerate() {
        let mut chain = cuts[s].clone();
        let (pa, pb) = (pool.points[a], pool.points[b]);
        let dir = [pb[0] - pa[0], pb[1] - pa[1]];
        let param = |v: usize| {
            let p = pool.points[v];
            (p[0] - pa[0]) * dir[0] + (p[1] - pa[1]) * dir[1]
        };
        chain.sort_by(|&u, &v| param(u).total_cmp(&param(v)).then(u.cmp(&v)));
        chain.dedup();
        let mut prev = a;
        for v in chain.into_iter().chain(std::iter::once(b)) {
            if v != prev {
                out.push([prev, v]);
                prev = v;
            }
        }
    }
    *segments = dedup_segments(out);
    true
}

fn dedup_segments(segments: Vec<[usize; 2]>) -> Vec<[usize; 2]> {
    let mut seen = HashSet::new();
    segments
        .into_iter()
        .filter(|&[a, b]| a != b && seen.insert(sorted(a, b)))
        .collect()
}

/// Turns simplified polylines into triangulation input for a `width` x
/// `height` frame.
///
/// Points snap to the border and to earlier vertices within `snap_eps`.
/// The four corners come first (indices 0..4, clockwise from the origin in
/// image coordinates), border sides are subdivided at every vertex lying on
/// them, and crossing or touching segments are split so no two constraints
/// intersect except at shared endpoints.
pub fn build_constraints(
    polylines: &[Polyline],
    width: usize,
    height: usize,
    snap_eps: f64,
) -> Result<Constraints> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("zero-dimension frame"));
    }
    if !(snap_eps >= 0.0) {
        return Err(Error::invalid(format!(
            "snap_eps must be >= 0, got {snap_eps}"
        )));
    }
    let (w, h) = (width as f64, height as f64);
    let mut pool = VertexPool::new(w, h, snap_eps);
    for corner in [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]] {
        pool.push(corner);
    }
    let mut segments = Vec::new();
    for line in polylines {
        let ids: Vec<usize> = line.points.iter().map(|&p| pool.insert(p)).collect();
        let n = ids.len();
        let count = if line.closed && n >= 3 {
            n
        } else {
            n.saturating_sub(1)
        };
        for i in 0..count {
            segments.push([ids[i], ids[(i + 1) % n]]);
        }
    }

    // Border sides, subdivided at every vertex on them.
    let sides: [(usize, usize, Box<dyn Fn([f64; 2]) -> bool>, usize); 4] = [
        (0, 1, Box::new(move |p: [f64; 2]| p[1] == 0.0), 0),
        (1, 2, Box::new(move |p: [f64; 2]| p[0] == w), 1),
        (3, 2, Box::new(move |p: [f64; 2]| p[1] == h), 0),
        (0, 3, Box::new(move |p: [f64; 2]| p[0] == 0.0), 1),
    ];
    for (_, _, on_side, axis) in &sides {
        let mut ids: Vec<usize> = (0..pool.points.len())
            .filter(|&i| on_side(pool.points[i]))
            .collect();
        ids.sort_by(|&i, &j| pool.points[i][*axis].total_cmp(&pool.points[j][*axis]));
        segments.extend(ids.windows(2).map(|p| [p[0], p[1]]));
    }
    let mut segments = dedup_segments(segments);
    for _ in 0..MAX_SPLIT_ROUNDS {
        if !split_round(&mut pool, &mut segments) {
            break;
        }
    }
    Ok(Constraints {
        width,
        height,
        vertices: pool.points,
        segments,
    })
}

fn cdt_faces(vertices: &[[f64; 2]], segments: &[[usize; 2]]) -> Result<Vec<[usize; 3]>> {
    let points: Vec<Point2<f64>> = vertices.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> =
        ConstrainedDelaunayTriangulation::bulk_load_cdt(points, Vec::new())
            .map_err(|e| Error::invalid(format!("triangulation input rejected: {e:?}")))?;
    if cdt.num_vertices() != vertices.len() {
        return Err(Error::invalid("duplicate vertices in triangulation input"));
    }
    for &[a, b] in segments {
        if a >= vertices.len() || b >= vertices.len() {
            return Err(Error::invalid(format!("segment [{a}, {b}] out of range")));
        }
        let (ha, hb) = (
            FixedVertexHandle::from_index(a),
            FixedVertexHandle::from_index(b),
        );
        if !cdt.can_add_constraint(ha, hb) {
            return Err(Error::CrossingConstraints([a, b]));
        }
        cdt.add_constraint(ha, hb);
    }
    let faces: Vec<[usize; 3]> = cdt
        .inner_faces()
        .map(|f| f.vertices().map(|v| v.fix().index()))
        .collect();
    if faces.is_empty() {
        return Err(Error::Collinear);
    }
    Ok(faces)
}

/// True when the closed segments `a-b` and `c-d` share any point.
fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2) = (geom::orient(a, b, c), geom::orient(a, b, d));
    let (o3, o4) = (geom::orient(c, d, a), geom::orient(c, d, b));
    if o1 == 0.0 && o2 == 0.0 {
        // Collinear: overlap of the projections onto the dominant axis.
        let axis = if (b[0] - a[0]).abs() >= (b[1] - a[1]).abs() {
            0
        } else {
            1
        };
        let (lo1, hi1) = (a[axis].min(b[axis]), a[axis].max(b[axis]));
        let (lo2, hi2) = (c[axis].min(d[axis]), c[axis].max(d[axis]));
        return lo1 <= hi2 && lo2 <= hi1;
    }
    o1 * o2 <= 0.0 && o3 * o4 <= 0.0
}

/// Whether moving vertex `v` to `q` keeps every constraint disjoint from
/// the others except at shared endpoints.
fn move_keeps_constraints_apart(
    vertices: &[[f64; 2]],
    segments: &[[usize; 2]],
    incident: &[Vec<usize>],
    v: usize,
    q: [f64; 2],
) -> bool {
    let at = |i: usize| if i == v { q } else { vertices[i] };
    if vertices.iter().enumerate().any(|(i, &p)| i != v && p == q) {
        return false;
    }
    for (k, &[c, d]) in segments.iter().enumerate() {
        if c == v || d == v {
            continue;
        }
        let (pc, pd) = (vertices[c], vertices[d]);
        if geom::orient(pc, pd, q) == 0.0 && segments_touch(pc, pd, q, q) {
            return false;
        }
        for &s in &incident[v] {
            let [a, b] = segments[s];
            let o = if a == v { b } else { a };
            if s == k {
                continue;
            }
            if o == c || o == d {
                // Shared endpoint: only the far ends may not land on each other's segment.
                let far = if o == c { d } else { c };
                if geom::orient(q, vertices[o], vertices[far]) == 0.0
                    && segments_touch(q, vertices[o], vertices[far], vertices[far])
                {
                    return false;
                }
                continue;
            }
            if segments_touch(q, at(o), pc, pd) {
                return false;
            }
        }
    }
    true
}

/// Constrained Delaunay triangulation honoring every segment.
///
/// Faces whose area falls to `AREA_EPS` or below get the vertex opposite
/// their longest edge pushed `1e-3` px away from that edge, and the
/// triangulation is rebuilt; the returned vertices include those nudges.
pub fn triangulate_cdt(input: &Constraints) -> Result<Mesh2D> {
    let mut vertices = input.vertices.clone();
    let (w, h) = (input.width as f64, input.height as f64);
    let mut faces = cdt_faces(&vertices, &input.segments)?;
    let mut incident = vec![Vec::new(); vertices.len()];
    for (k, &[a, b]) in input.segments.iter().enumerate() {
        incident[a].push(k);
        incident[b].push(k);
    }
    for _ in 0..MAX_PERTURB_ROUNDS {
        let slivers: Vec<[usize; 3]> = faces
            .iter()
            .filter(|f| {
                0.5 * geom::signed_area2(vertices[f[0]], vertices[f[1]], vertices[f[2]]) <= AREA_EPS
            })
            .copied()
            .collect();
        if slivers.is_empty() {
            break;
        }
        let mut moved = HashSet::new();
        for f in slivers {
            let tri = f.map(|i| vertices[i]);
            let len = |k: usize| {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                (a[0] - b[0]).hypot(a[1] - b[1])
            };
            let opposite = (0..3).max_by(|&i, &j| len(i).total_cmp(&len(j))).unwrap();
            let v = f[opposite];
            let p = vertices[v];
            let is_corner = (p[0] == 0.0 || p[0] == w) && (p[1] == 0.0 || p[1] == h);
            if is_corner || !moved.insert(v) {
                continue;
            }
            let (a, b) = (tri[(opposite + 1) % 3], tri[(opposite + 2) % 3]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let l = dx.hypot(dy);
            // Left normal of a->b points into a CCW triangle.
            let mut n = [-dy / l, dx / l];
            if geom::orient(a, b, p) < 0.0 {
                n = [-n[0], -n[1]];
            }
            let candidates = [1.0, -1.0, 0.1, -0.1].map(|t| {
                let mut q = [p[0] + t * PERTURB_PX * n[0], p[1] + t * PERTURB_PX * n[1]];
                // Border vertices stay on their side.
                if p[0] == 0.0 || p[0] == w {
                    q[0] = p[0];
                }
                if p[1] == 0.0 || p[1] == h {
                    q[1] = p[1];
                }
                [q[0].clamp(0.0, w), q[1].clamp(0.0, h)]
            });
            match candidates.into_iter().find(|&q| {
                q != p && move_keeps_constraints_apart(&vertices, &input.segments, &incident, v, q)
            }) {
                Some(q) => vertices[v] = q,
                None => log::warn!(
                    "sliver at vertex {v} left in place: every nudge would cross a constraint"
                ),
            }
        }
        if moved.is_empty() {
            break;
        }
        faces = cdt_faces(&vertices, &input.segments)?;
    }
    Ok(Mesh2D {
        width: input.width,
        height: input.height,
        vertices,
        segments: input.segments.clone(),
        faces,
    })
}

/// Parameters of the image-to-mesh pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshConfig {
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub simplify_eps: f64,
    pub snap_eps: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            canny_sigma: edges::DEFAULT_CANNY_SIGMA,
            canny_low: edges::DEFAULT_CANNY_LOW,
            canny_high: edges::DEFAULT_CANNY_HIGH,
            simplify_eps: edges::DEFAULT_SIMPLIFY_EPS,
            snap_eps: DEFAULT_SNAP_EPS,
        }
    }
}

/// Image -> Canny -> chains -> sub-pixel refinement -> simplified polylines
/// with refitted corners and junctions, extended to the frame where they
/// nearly reach it -> CDT.
pub fn extract_mesh(img: &Image2D, cfg: &MeshConfig) -> Result<Mesh2D> {
    let (edge_map, grads) =
        edges::canny_with_gradients(img, cfg.canny_sigma, cfg.canny_low, cfg.canny_high)?;
    let refined: Vec<Polyline> = edges::trace_polylines(&edge_map)
        .iter()
        .map(|p| edges::subpixel_refine(&grads, p))
        .collect();
    let polylines: Vec<Polyline> = edges::simplify_chains(&refined, cfg.simplify_eps)
        .iter()
        .map(|p| edges::extend_to_border(p, img.width(), img.height(), edges::BORDER_REACH_PX))
        .collect();
    let constraints = build_constraints(&polylines, img.width(), img.height(), cfg.snap_eps)?;
    let mesh = triangulate_cdt(&constraints)?;
    mesh.validate()?;
    Ok(mesh)
}
