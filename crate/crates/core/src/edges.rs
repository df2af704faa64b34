//! Canny edges, chain tracing and Douglas-Peucker simplification.

use crate::error::{Error, Result};
use crate::ingest::Image2D;

pub const DEFAULT_CANNY_SIGMA: f64 = 1.4;
pub const DEFAULT_CANNY_LOW: f64 = 0.1;
pub const DEFAULT_CANNY_HIGH: f64 = 0.25;
pub const DEFAULT_SIMPLIFY_EPS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid("edge map data length mismatch"));
        }
        Ok(EdgeMap {
            width,
            height,
            data,
        })
    }

    /// Marks the given pixels as edges on an otherwise empty map.
    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut data = vec![false; width * height];
        for &(x, y) in pixels {
            data[y * width + x] = true;
        }
        EdgeMap {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|e| **e).count()
    }

    fn at(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Polyline {
    pub fn open(points: Vec<[f64; 2]>) -> Self {
        Polyline {
            points,
            closed: false,
        }
    }

    /// Segments between consecutive points, including the closing one.
    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        let count = if self.closed && n >= 3 {
            n
        } else {
            n.saturating_sub(1)
        };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }
}

/// Gradient field used by Canny: Sobel on the Gaussian-blurred luma,
/// divided by 8 so a unit ramp has magnitude 1 per pixel.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * src[y * w + clamp(x as i64 + i as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as i64 + i as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Blurred Sobel gradients with replicated borders.
pub fn gradients(img: &Image2D, sigma: f64) -> Gradients {
    let (w, h) = (img.width(), img.height());
    let smooth = blur(&img.to_gray(), w, h, sigma);
    let at = |x: i64, y: i64| {
        let xx = x.clamp(0, w as i64 - 1) as usize;
        let yy = y.clamp(0, h as i64 - 1) as usize;
        smooth[yy * w + xx]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut magnitude = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx / 8.0;
            gy[i] = dy / 8.0;
            magnitude[i] = gx[i].hypot(gy[i]);
        }
    }
    Gradients {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
    }
}

/// Canny edge detector.
///
/// Thresholds are fractions of the image's maximum gradient magnitude.
/// Non-maximum suppression keeps a pixel when it strictly exceeds the
/// neighbour before it along the quantized gradient axis (lower row, or
/// lower column on the horizontal axis) and is not exceeded by the one
/// after it; on a symmetric step this keeps the pixel just before the
/// transition. Magnitudes within `1e-9` of the image maximum count as ties.
pub fn canny(img: &Image2D, sigma: f64, low: f64, high: f64) -> Result<EdgeMap> {
    canny_with_gradients(img, sigma, low, high).map(|(e, _)| e)
}

/// Quantized gradient axis as (before, after) neighbour offsets.
fn gradient_axis(gx: f64, gy: f64) -> ((i64, i64), (i64, i64)) {
    let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
    if !(22.5..157.5).contains(&angle) {
        ((-1, 0), (1, 0))
    } else if angle < 67.5 {
        ((-1, -1), (1, 1))
    } else if angle < 112.5 {
        ((0, -1), (0, 1))
    } else {
        ((1, -1), (-1, 1))
    }
}

/// [`canny`] that also returns the gradient field it used.
pub fn canny_with_gradients(
    img: &Image2D,
    sigma: f64,
    low: f64,
    high: f64,
) -> Result<(EdgeMap, Gradients)> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "canny sigma must be > 0, got {sigma}"
        )));
    }
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || !(low < high) {
        return Err(Error::invalid(format!(
            "canny thresholds need 0 <= low < high <= 1, got low={low} high={high}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let g = gradients(img, sigma);
    let max_mag = g.magnitude.iter().cloned().fold(0.0, f64::max);
    if max_mag <= 1e-12 || w < 3 || h < 3 {
        return Ok((EdgeMap::new(w, h, vec![false; w * h])?, g));
    }
    let tie = 1e-9 * max_mag;
    let mut thin = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = g.magnitude[i];
            if m <= tie {
                continue;
            }
            let ((bx, by), (ax, ay)) = gradient_axis(g.gx[i], g.gy[i]);
            let nb = g.magnitude[(y as i64 + by) as usize * w + (x as i64 + bx) as usize];
            let na = g.magnitude[(y as i64 + ay) as usize * w + (x as i64 + ax) as usize];
            if m - nb > tie && m - na >= -tie {
                thin[i] = m / max_mag;
            }
        }
    }
    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= high).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] >= low && thin[j] > 0.0 {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    Ok((EdgeMap::new(w, h, edges)?, g))
}

/// Moves traced edge pixels (integer pixel indices) to sub-pixel edge
/// locations in continuous image coordinates: the pixel center shifted along
/// the quantized gradient axis to the vertex of the parabola through the
/// three magnitudes on that axis (offset clamped to half a pixel).
pub fn subpixel_refine(g: &Gradients, p: &Polyline) -> Polyline {
    let (w, h) = (g.width as i64, g.height as i64);
    let mag = |x: i64, y: i64| g.magnitude[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let points = p
        .points
        .iter()
        .map(|q| {
            let (x, y) = (q[0] as i64, q[1] as i64);
            let i = (y * w + x) as usize;
            let ((bx, by), (ax, ay)) = gradient_axis(g.gx[i], g.gy[i]);
            let (mb, m, ma) = (mag(x + bx, y + by), mag(x, y), mag(x + ax, y + ay));
            let curv = mb - 2.0 * m + ma;
            let delta = if curv < 0.0 {
                (0.5 * (mb - ma) / curv).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            [
                x as f64 + 0.5 + delta * ax as f64,
                y as f64 + 0.5 + delta * ay as f64,
            ]
        })
        .collect();
    Polyline {
        points,
        closed: p.closed,
    }
}

const NEIGHBOURS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Neighbours under mixed (m-) adjacency: 4-neighbours always, diagonal
/// neighbours only when no shared 4-neighbour is an edge pixel. This keeps
/// staircase chains simple and makes a plus sign meet at a single pixel.
fn m_neighbours(edges: &EdgeMap, x: i64, y: i64) -> Vec<(i64, i64)> {
    NEIGHBOURS
        .iter()
        .filter(|&&(dx, dy)| {
            edges.at(x + dx, y + dy)
                && (dx == 0 || dy == 0 || (!edges.at(x + dx, y) && !edges.at(x, y + dy)))
        })
        .map(|&(dx, dy)| (x + dx, y + dy))
        .collect()
}

/// Traces edge pixels into chains.
///
/// Pixels with three or more m-adjacent edge neighbours are junctions; chains
/// stop at junctions and endpoints, and a junction pixel is repeated as the
/// endpoint of every chain that reaches it. Pure cycles come out closed.
/// Isolated pixels are dropped. Points are pixel indices as floats.
pub fn trace_polylines(edges: &EdgeMap) -> Vec<Polyline> {
    let (w, h) = (edges.width, edges.height);
    let idx = |x: i64, y: i64| y as usize * w + x as usize;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if edges.at(x, y) {
                adj[idx(x, y)] = m_neighbours(edges, x, y)
                    .into_iter()
                    .map(|(nx, ny)| idx(nx, ny))
                    .collect();
            }
        }
    }
    let edge_key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let mut used = std::collections::HashSet::new();
    let to_point = |i: usize| [(i % w) as f64, (i / w) as f64];
    let mut out = Vec::new();

    let walk = |start: usize, next: usize, used: &mut std::collections::HashSet<(usize, usize)>| {
        let mut chain = vec![start, next];
        used.insert(edge_key(start, next));
        let mut prev = start;
        let mut cur = next;
        while adj[cur].len() == 2 && cur != start {
            let Some(&n) = adj[cur]
                .iter()
                .find(|&&n| n != prev && !used.contains(&edge_key(cur, n)))
            else {
                break;
            };
            used.insert(edge_key(cur, n));
            chain.push(n);
            prev = cur;
            cur = n;
        }
        chain
    };

    let emit = |chain: Vec<usize>, out: &mut Vec<Polyline>| {
        let mut chain = chain;
        let closed = chain.len() > 2 && chain.first() == chain.last();
        if closed {
            chain.pop();
        }
        if chain.len() >= 2 {
            out.push(Polyline {
                points: chain.into_iter().map(to_point).collect(),
                closed,
            });
        }
    };

    for i in 0..w * h {
        if adj[i].is_empty() || adj[i].len() == 2 {
            continue;
        }
        for k in 0..adj[i].len() {
            let n = adj[i][k];
            if used.contains(&edge_key(i, n)) {
                continue;
            }
            let chain = walk(i, n, &mut used);
            emit(chain, &mut out);
        }
    }
    // Whatever is left consists of cycles through degree-2 pixels only.
    for i in 0..w * h {
        if adj[i].len() != 2 {
            continue;
        }
        let n = adj[i][0];
        if used.contains(&edge_key(i, n)) {
            continue;
        }
        let chain = walk(i, n, &mut used);
        emit(chain, &mut out);
    }
    out
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Indices of the points Douglas-Peucker keeps within `eps`.
fn douglas_peucker(points: &[[f64; 2]], eps: f64) -> Vec<usize> {
    let n = points.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut best, mut best_d) = (lo + 1, -1.0);
        for i in lo + 1..hi {
            let d = point_segment_distance(points[i], points[lo], points[hi]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        // `>=` keeps everything when eps = 0.
        if best_d >= eps {
            keep[best] = true;
            stack.push((lo, best));
            stack.push((best, hi));
        }
    }
    (0..n).filter(|&i| keep[i]).collect()
}

fn dedup_consecutive(points: &[[f64; 2]], closed: bool) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(points.len());
    for p in points {
        if out.last() != Some(p) {
            out.push(*p);
        }
    }
    if closed {
        while out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
    }
    out
}

fn farthest_from(pts: &[[f64; 2]], from: [f64; 2]) -> usize {
    (0..pts.len())
        .max_by(|&i, &j| {
            let di = (pts[i][0] - from[0]).hypot(pts[i][1] - from[1]);
            let dj = (pts[j][0] - from[0]).hypot(pts[j][1] - from[1]);
            di.partial_cmp(&dj).unwrap().then(j.cmp(&i))
        })
        .expect("non-empty chain")
}

/// Deduplicated points of `p` (rotated for closed chains) and the indices
/// Douglas-Peucker keeps. Closed chains are split at two extreme points: the
/// point farthest from the first one and the point farthest from that.
fn simplify_indices(p: &Polyline, eps: f64) -> (Vec<[f64; 2]>, Vec<usize>) {
    let eps = eps.max(0.0);
    let mut pts = dedup_consecutive(&p.points, p.closed);
    if !p.closed || pts.len() <= 3 {
        let keep = douglas_peucker(&pts, eps);
        return (pts, keep);
    }
    let start = farthest_from(&pts, pts[0]);
    pts.rotate_left(start);
    let far = farthest_from(&pts, pts[0]);
    let mut keep = douglas_peucker(&pts[..=far], eps);
    let mut tail: Vec<[f64; 2]> = pts[far..].to_vec();
    tail.push(pts[0]);
    let second = douglas_peucker(&tail, eps);
    keep.pop();
    keep.extend(second[..second.len() - 1].iter().map(|&i| i + far));
    if keep.len() < 3 {
        // Both halves collapsed: add back the point farthest from the chord.
        let (a, b) = (pts[0], pts[far]);
        let extra = (1..pts.len()).filter(|&i| i != far).max_by(|&i, &j| {
            point_segment_distance(pts[i], a, b)
                .partial_cmp(&point_segment_distance(pts[j], a, b))
                .unwrap()
                .then(j.cmp(&i))
        });
        if let Some(i) = extra {
            keep = if i < far {
                vec![0, i, far]
            } else {
                vec![0, far, i]
            };
        }
    }
    (pts, keep)
}

/// Douglas-Peucker simplification within `eps` pixels. Endpoints survive;
/// closed chains are split at two extreme points and always keep at least
/// three points. `eps = 0` only removes exact repeats.
pub fn simplify_polyline(p: &Polyline, eps: f64) -> Polyline {
    let (pts, keep) = simplify_indices(p, eps);
    Polyline {
        points: keep.iter().map(|&i| pts[i]).collect(),
        closed: p.closed,
    }
}

/// Points closer than this to a span end are left out of its line fit; about
/// the reach of the blur plus the Sobel stencil.
const CORNER_GUARD_PX: f64 = 2.0;
/// Adjacent fitted lines meeting at a shallower angle keep the DP vertex.
const MIN_CORNER_SIN: f64 = 0.25;

/// Total-least-squares line through `pts` as (centroid, unit direction).
fn fit_line(pts: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let n = pts.len() as f64;
    let c = [
        pts.iter().map(|p| p[0]).sum::<f64>() / n,
        pts.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    (c, [angle.cos(), angle.sin()])
}

/// Centroid, unit direction and number of supporting points.
type Line = ([f64; 2], [f64; 2], usize);

/// Simplified chain with a fitted line per span (`None` when too few points
/// back the span).
struct FittedChain {
    points: Vec<[f64; 2]>,
    closed: bool,
    lines: Vec<Option<Line>>,
}

fn fit_spans(p: &Polyline, eps: f64) -> FittedChain {
    let (pts, keep) = simplify_indices(p, eps);
    let n = pts.len();
    let k = keep.len();
    let spans = if p.closed { k } else { k.saturating_sub(1) };
    let lines = (0..spans)
        .map(|s| {
            let (lo, hi) = (keep[s], if s + 1 < k { keep[s + 1] } else { keep[0] + n });
            let (a, b) = (pts[lo], pts[hi % n]);
            let far_from_ends = |q: &[f64; 2]| {
                (q[0] - a[0]).hypot(q[1] - a[1]) >= CORNER_GUARD_PX
                    && (q[0] - b[0]).hypot(q[1] - b[1]) >= CORNER_GUARD_PX
            };
            let inner: Vec<[f64; 2]> = (lo + 1..hi)
                .map(|i| pts[i % n])
                .filter(far_from_ends)
                .collect();
            (inner.len() >= 3).then(|| {
                let (c, d) = fit_line(&inner);
                (c, d, inner.len())
            })
        })
        .collect();
    FittedChain {
        points: keep.iter().map(|&i| pts[i]).collect(),
        closed: p.closed,
        lines,
    }
}

/// Least-squares meeting point of `lines`, each weighted by its support,
/// if they are not near parallel.
fn meeting_point(lines: &[Line]) -> Option<[f64; 2]> {
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let total: usize = lines.iter().map(|l| l.2).sum();
    for (c, d, support) in lines {
        let wt = *support as f64 / total as f64;
        let nrm = [-d[1], d[0]];
        let off = nrm[0] * c[0] + nrm[1] * c[1];
        a11 += wt * nrm[0] * nrm[0];
        a12 += wt * nrm[0] * nrm[1];
        a22 += wt * nrm[1] * nrm[1];
        b1 += wt * nrm[0] * off;
        b2 += wt * nrm[1] * off;
    }
    let (tr, det) = (a11 + a22, a11 * a22 - a12 * a12);
    let min_eig = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
    // Two equally weighted lines crossing at angle t give
    // min_eig = (1 - |cos t|) / 2.
    if min_eig < 0.5 * (1.0 - (1.0 - MIN_CORNER_SIN * MIN_CORNER_SIN).sqrt()) {
        return None;
    }
    Some([(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det])
}

fn moved_within(old: [f64; 2], new: Option<[f64; 2]>, limit: f64) -> Option<[f64; 2]> {
    new.filter(|q| (q[0] - old[0]).hypot(q[1] - old[1]) <= limit)
}

/// Douglas-Peucker simplification of every chain within `eps`, followed by
/// vertex refinement. Each simplified span gets a line fitted to the points
/// it replaced (away from its ends). Corners inside a chain move to where
/// the two adjacent lines cross; junctions shared by several chains move to
/// the least-squares meeting point of all end-span lines there. Moves need
/// a clear crossing angle and stay within `eps` for corners and `2 eps` for
/// junctions. Sub-pixel locations of corner and junction pixels are biased
/// by the neighbouring edges; the fitted sides are not.
pub fn simplify_chains(chains: &[Polyline], eps: f64) -> Vec<Polyline> {
    let fitted: Vec<FittedChain> = chains.iter().map(|p| fit_spans(p, eps)).collect();
    let mut out: Vec<Polyline> = fitted
        .iter()
        .map(|f| {
            let k = f.points.len();
            let mut points = f.points.clone();
            for v in 0..k {
                let (before, after) = match (f.closed, v) {
                    (true, 0) if !f.lines.is_empty() => (f.lines.len() - 1, 0),
                    (true, _) if v > 0 => (v - 1, v),
                    (false, _) if v > 0 && v + 1 < k => (v - 1, v),
                    _ => continue,
                };
                let (Some(l1), Some(l2)) = (f.lines[before], f.lines[after]) else {
                    continue;
                };
                if let Some(q) = moved_within(points[v], meeting_point(&[l1, l2]), eps) {
                    points[v] = q;
                }
            }
            // A short unfitted span between two fitted ones is a chamfered
            // corner: both its vertices collapse onto the neighbours' crossing.
            let spans = f.lines.len();
            let mut keep = vec![true; k];
            for s in 0..spans {
                let interior = f.closed || (s >= 1 && s + 2 < k);
                if !interior || f.lines[s].is_some() || keep.iter().filter(|&&x| x).count() <= 3 {
                    continue;
                }
                let (prev, next) = ((s + spans - 1) % spans, (s + 1) % spans);
                let (Some(l1), Some(l2)) = (f.lines[prev], f.lines[next]) else {
                    continue;
                };
                let (va, vb) = (s, (s + 1) % k);
                if !keep[va] || !keep[vb] {
                    continue;
                }
                let q = meeting_point(&[l1, l2]);
                if let (Some(q), Some(_)) = (
                    moved_within(points[va], q, 2.0 * eps),
                    moved_within(points[vb], q, 2.0 * eps),
                ) {
                    points[va] = q;
                    keep[vb] = false;
                }
            }
            Polyline {
                points: points
                    .iter()
                    .zip(&keep)
                    .filter_map(|(p, &k)| k.then_some(*p))
                    .collect(),
                closed: f.closed,
            }
        })
        .collect();

    // Open-chain endpoints grouped by exact position.
    let mut junctions: std::collections::BTreeMap<[u64; 2], Vec<(usize, bool)>> =
        Default::default();
    for (ci, f) in fitted.iter().enumerate() {
        if f.closed || f.points.len() < 2 {
            continue;
        }
        for start in [true, false] {
            let p = if start {
                f.points[0]
            } else {
                f.points[f.points.len() - 1]
            };
            junctions
                .entry([p[0].to_bits(), p[1].to_bits()])
                .or_default()
                .push((ci, start));
        }
    }
    for (key, ends) in junctions {
        if ends.len() < 2 {
            continue;
        }
        let lines: Vec<Line> = ends
            .iter()
            .filter_map(|&(ci, start)| {
                let lines = &fitted[ci].lines;
                if start {
                    lines[0]
                } else {
                    lines[lines.len() - 1]
                }
            })
            .collect();
        let old = [f64::from_bits(key[0]), f64::from_bits(key[1])];
        if let Some(q) = moved_within(old, meeting_point(&lines), 2.0 * eps) {
            for (ci, start) in ends {
                let pts = &mut out[ci].points;
                let end = if start { 0 } else { pts.len() - 1 };
                pts[end] = q;
            }
        }
    }
    out
}

/// Open chains ending at most this far from the frame are extended to it.
pub const BORDER_REACH_PX: f64 = 2.5;

/// Extends each open-chain endpoint along its end span to the frame border
/// when the border is hit within `reach` pixels. Canny never marks the
/// outermost pixel ring, so edges that leave the image otherwise stop short
/// of it and the gap becomes a sliver face straddling the discontinuity.
pub fn extend_to_border(p: &Polyline, width: usize, height: usize, reach: f64) -> Polyline {
    let mut points = p.points.clone();
    let n = points.len();
    if p.closed || n < 2 {
        return Polyline {
            points,
            closed: p.closed,
        };
    }
    let (w, h) = (width as f64, height as f64);
    for (end, prev) in [(0, 1), (n - 1, n - 2)] {
        let (q, r) = (points[end], points[prev]);
        let len = (q[0] - r[0]).hypot(q[1] - r[1]);
        if len == 0.0 {
            continue;
        }
        let d = [(q[0] - r[0]) / len, (q[1] - r[1]) / len];
        // Smallest positive step along `d` reaching a border line.
        let hit = [(0.0, 0), (w, 0), (0.0, 1), (h, 1)]
            .iter()
            .filter(|&&(_, axis)| d[axis] != 0.0)
            .map(|&(b, axis)| (b - q[axis]) / d[axis])
            .filter(|&t| t >= 0.0)
            .fold(f64::INFINITY, f64::min);
        if hit <= reach {
            points[end] = [
                (q[0] + hit * d[0]).clamp(0.0, w),
                (q[1] + hit * d[1]).clamp(0.0, h),
            ];
        }
    }
    Polyline {
        points,
        closed: false,
    }
}
