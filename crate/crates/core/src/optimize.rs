//! Depth/normal loss over a rendered patch cloud and a per-face fitting loop.
//!
//! Pixel ownership depends only on the fixed 2D triangles, so the loss
//! splits into independent per-face terms. The fit exploits this by running
//! one small optimizer per face.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{dot3, norm3, DepthMap, Intrinsics, NormalMap};
use crate::json::fmt_f64;
use crate::patchcloud::{cloud_face_ids, detach_faces, PatchCloud};
use crate::render::rasterize_patches;
use crate::triangulate::Mesh2D;

/// Lower bound on inverse depth at every face corner after each step.
pub const S_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DepthTerm {
    /// Mean absolute depth error.
    L1,
    /// Mean signed error `D - D*` (unbounded below).
    SignedMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub lambda_n: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub depth_term: DepthTerm,
    pub init_depth: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_n: 0.5,
            iterations: 500,
            step_size: 1e-2,
            depth_term: DepthTerm::L1,
            init_depth: 2.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_n >= 0.0 && self.lambda_n.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_n must be >= 0, got {}",
                self.lambda_n
            )));
        }
        if self.iterations < 1 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if !(self.init_depth > 0.0 && self.init_depth.is_finite()) {
            return Err(Error::invalid(format!(
                "init_depth must be > 0, got {}",
                self.init_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub sum: f64,
    pub depth: f64,
    pub normal: f64,
}

impl DepthTerm {
    #[inline]
    fn value(self, r: f64) -> f64 {
        match self {
            DepthTerm::L1 => r.abs(),
            DepthTerm::SignedMean => r,
        }
    }

    #[inline]
    fn slope(self, r: f64) -> f64 {
        match self {
            DepthTerm::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            DepthTerm::SignedMean => 1.0,
        }
    }
}

fn check_dims(
    cloud: &PatchCloud,
    dstar: &DepthMap,
    nstar: &NormalMap,
    cfg: &FitConfig,
) -> Result<()> {
    let expected = (cloud.width, cloud.height);
    if dstar.dims() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: dstar.dims(),
        });
    }
    if cfg.lambda_n > 0.0 && nstar.dims() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: nstar.dims(),
        });
    }
    Ok(())
}

/// `N* . N` at a pixel, zero where the target normal is invalid.
#[inline]
fn normal_agreement(nstar: &NormalMap, x: usize, y: usize, n: [f64; 3]) -> f64 {
    if nstar.is_valid(x, y) {
        dot3(nstar.get(x, y), n)
    } else {
        0.0
    }
}

/// Evaluates the loss on the rendered cloud. Pixels count when the target
/// depth and the render are both valid. `nstar` is not read when
/// `lambda_n == 0`, and the normal term is then reported as 0.
pub fn loss(
    cloud: &PatchCloud,
    dstar: &DepthMap,
    nstar: &NormalMap,
    cfg: &FitConfig,
) -> Result<LossValue> {
    check_dims(cloud, dstar, nstar, cfg)?;
    let (d, n, _) = rasterize_patches(cloud)?;
    let use_normals = cfg.lambda_n > 0.0;
    let (mut count, mut ld, mut ln) = (0usize, 0.0, 0.0);
    for y in 0..cloud.height {
        for x in 0..cloud.width {
            if !(dstar.is_valid(x, y) && d.is_valid(x, y)) {
                continue;
            }
            count += 1;
            ld += cfg.depth_term.value(d.get(x, y) - dstar.get(x, y));
            if use_normals {
                ln -= normal_agreement(nstar, x, y, n.get(x, y));
            }
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels(
            "no pixel is valid in both the target and the render".into(),
        ));
    }
    let nn = count as f64;
    let (ld, ln) = (ld / nn, ln / nn);
    Ok(LossValue {
        sum: ld + cfg.lambda_n * ln,
        depth: ld,
        normal: ln,
    })
}

/// Gradient of `-(q . t)` with `q = -p/|p|`, i.e. of `t . p / |p|`.
#[inline]
fn normal_term_gradient(p: [f64; 3], t: [f64; 3]) -> [f64; 3] {
    let len = norm3(p);
    let q = p.map(|c| c / len);
    let qt = dot3(q, t);
    [0, 1, 2].map(|j| (t[j] - q[j] * qt) / len)
}

/// Exact gradient of [`loss`]'s `L_sum` with respect to every face's
/// `(a, b, c)`, one row per face.
pub fn loss_gradient(
    cloud: &PatchCloud,
    dstar: &DepthMap,
    nstar: &NormalMap,
    cfg: &FitConfig,
) -> Result<Vec<[f64; 3]>> {
    check_dims(cloud, dstar, nstar, cfg)?;
    let (d, _, ids) = rasterize_patches(cloud)?;
    let k = &cloud.intrinsics;
    let use_normals = cfg.lambda_n > 0.0;
    let m = cloud.num_faces();
    let mut depth_grad = vec![[0.0; 3]; m];
    let mut target_sum = vec![[0.0; 3]; m];
    let mut count = 0usize;
    for y in 0..cloud.height {
        for x in 0..cloud.width {
            if !(dstar.is_valid(x, y) && d.is_valid(x, y)) {
                continue;
            }
            count += 1;
            let f = ids.get(x, y).expect("render covers every pixel");
            let (u, v) = k.pixel_ray(x, y);
            let abc = cloud.faces[f].abc;
            let s = abc[0] * u + abc[1] * v + abc[2];
            let g = -cfg.depth_term.slope(d.get(x, y) - dstar.get(x, y)) / (s * s);
            let row = &mut depth_grad[f];
            row[0] += g * u;
            row[1] += g * v;
            row[2] += g;
            if use_normals && nstar.is_valid(x, y) {
                let t = nstar.get(x, y);
                for j in 0..3 {
                    target_sum[f][j] += t[j];
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels(
            "no pixel is valid in both the target and the render".into(),
        ));
    }
    let nn = count as f64;
    Ok((0..m)
        .map(|f| {
            let mut row = depth_grad[f].map(|g| g / nn);
            if use_normals {
                let gn = normal_term_gradient(cloud.faces[f].abc, target_sum[f]);
                for j in 0..3 {
                    row[j] += cfg.lambda_n * gn[j] / nn;
                }
            }
            row
        })
        .collect())
}

/// Fixed per-face data: masked pixels and the summed target normal.
struct FaceData {
    /// `(u, v, D*)` per masked pixel.
    pixels: Vec<[f64; 3]>,
    target_sum: [f64; 3],
    corners: [[f64; 2]; 3],
}

impl FaceData {
    /// Raw (un-normalized) depth and normal sums for parameters `p`.
    fn objective(&self, p: [f64; 3], term: DepthTerm, lambda: f64) -> (f64, f64) {
        let mut depth = 0.0;
        for &[u, v, d] in &self.pixels {
            depth += term.value(1.0 / (p[0] * u + p[1] * v + p[2]) - d);
        }
        let normal = if lambda > 0.0 {
            dot3(self.target_sum, p) / norm3(p)
        } else {
            0.0
        };
        (depth, normal)
    }

    fn gradient(&self, p: [f64; 3], term: DepthTerm, lambda: f64) -> [f64; 3] {
        let mut g = [0.0; 3];
        for &[u, v, d] in &self.pixels {
            let s = p[0] * u + p[1] * v + p[2];
            let w = -term.slope(1.0 / s - d) / (s * s);
            g[0] += w * u;
            g[1] += w * v;
            g[2] += w;
        }
        if lambda > 0.0 {
            let gn = normal_term_gradient(p, self.target_sum);
            for j in 0..3 {
                g[j] += lambda * gn[j];
            }
        }
        g
    }

    /// Raises `c` until every corner has inverse depth at least [`S_MIN`].
    fn project(&self, mut p: [f64; 3]) -> [f64; 3] {
        let min = self
            .corners
            .iter()
            .map(|q| p[0] * q[0] + p[1] * q[1] + p[2])
            .fold(f64::INFINITY, f64::min);
        if min < S_MIN {
            p[2] += S_MIN - min;
        }
        p
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-12;
const LR_GROWTH: f64 = 1.1;
const LR_SHRINK: f64 = 0.5;

/// Adam with a monotone acceptance test: a step that raises the face
/// objective is rejected, the rate halves and the moments restart.
struct FaceState {
    p: [f64; 3],
    depth: f64,
    normal: f64,
    lr: f64,
    m: [f64; 3],
    v: [f64; 3],
    t: i32,
}

impl FaceState {
    fn value(&self, lambda: f64) -> f64 {
        self.depth + lambda * self.normal
    }

    fn step(&mut self, data: &FaceData, cfg: &FitConfig) {
        let (term, lambda) = (cfg.depth_term, cfg.lambda_n);
        let g = data.gradient(self.p, term, lambda);
        self.t += 1;
        let (c1, c2) = (1.0 - BETA1.powi(self.t), 1.0 - BETA2.powi(self.t));
        let mut proposal = self.p;
        for j in 0..3 {
            self.m[j] = BETA1 * self.m[j] + (1.0 - BETA1) * g[j];
            self.v[j] = BETA2 * self.v[j] + (1.0 - BETA2) * g[j] * g[j];
            proposal[j] -= self.lr * (self.m[j] / c1) / ((self.v[j] / c2).sqrt() + ADAM_EPS);
        }
        let proposal = data.project(proposal);
        let (depth, normal) = data.objective(proposal, term, lambda);
        if depth + lambda * normal <= self.value(lambda) {
            self.p = proposal;
            self.depth = depth;
            self.normal = normal;
            self.lr = (self.lr * LR_GROWTH).min(cfg.step_size);
        } else {
            self.lr *= LR_SHRINK;
            self.m = [0.0; 3];
            self.v = [0.0; 3];
            self.t = 0;
        }
    }
}

fn face_data(
    cloud: &PatchCloud,
    dstar: &DepthMap,
    nstar: &NormalMap,
    cfg: &FitConfig,
) -> Result<(Vec<FaceData>, usize)> {
    check_dims(cloud, dstar, nstar, cfg)?;
    let k = &cloud.intrinsics;
    let ids = cloud_face_ids(cloud)?;
    let mut data: Vec<FaceData> = cloud
        .faces
        .iter()
        .map(|p| FaceData {
            pixels: Vec::new(),
            target_sum: [0.0; 3],
            corners: p.tri.map(|[x, y]| {
                let (u, v) = k.normalize(x, y);
                [u, v]
            }),
        })
        .collect();
    let mut count = 0;
    for y in 0..cloud.height {
        for x in 0..cloud.width {
            if !dstar.is_valid(x, y) {
                continue;
            }
            count += 1;
            let f = &mut data[ids.get(x, y).expect("face map covers every pixel")];
            let (u, v) = k.pixel_ray(x, y);
            f.pixels.push([u, v, dstar.get(x, y)]);
            if cfg.lambda_n > 0.0 && nstar.is_valid(x, y) {
                let t = nstar.get(x, y);
                for j in 0..3 {
                    f.target_sum[j] += t[j];
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels(
            "no pixel is valid in both the target and the render".into(),
        ));
    }
    Ok((data, count))
}

fn trace_entry(states: &[FaceState], n: f64, lambda: f64) -> LossValue {
    let depth = states.iter().map(|s| s.depth).sum::<f64>() / n;
    let normal = states.iter().map(|s| s.normal).sum::<f64>() / n;
    LossValue {
        sum: depth + lambda * normal,
        depth,
        normal,
    }
}

/// Fits the parameters of an existing cloud in place of its current values.
/// The trace holds the loss before the first step followed by one entry per
/// iteration. Faces without target pixels keep their parameters.
pub fn fit_cloud(
    mut cloud: PatchCloud,
    dstar: &DepthMap,
    nstar: &NormalMap,
    cfg: &FitConfig,
) -> Result<(PatchCloud, Vec<LossValue>)> {
    cfg.validate()?;
    let (data, count) = face_data(&cloud, dstar, nstar, cfg)?;
    let lambda = cfg.lambda_n;
    let mut states: Vec<FaceState> = cloud
        .faces
        .iter()
        .zip(&data)
        .map(|(patch, d)| {
            let p = d.project(patch.abc);
            let (depth, normal) = d.objective(p, cfg.depth_term, lambda);
            FaceState {
                p,
                depth,
                normal,
                lr: cfg.step_size,
                m: [0.0; 3],
                v: [0.0; 3],
                t: 0,
            }
        })
        .collect();
    let n = count as f64;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(trace_entry(&states, n, lambda));
    for it in 0..cfg.iterations {
        states
            .par_iter_mut()
            .zip(data.par_iter())
            .for_each(|(s, d)| {
                if !d.pixels.is_empty() {
                    s.step(d, cfg);
                }
            });
        let entry = trace_entry(&states, n, lambda);
        log::trace!("iteration {} loss {}", it + 1, entry.sum);
        trace.push(entry);
    }
    for (patch, (s, d)) in cloud.faces.iter_mut().zip(states.iter().zip(&data)) {
        if !d.pixels.is_empty() {
            patch.abc = s.p;
        }
    }
    Ok((cloud, trace))
}

/// Detaches `mesh` into patches and fits them to the targets.
pub fn fit(
    mesh: &Mesh2D,
    dstar: &DepthMap,
    nstar: &NormalMap,
    k: &Intrinsics,
    cfg: &FitConfig,
) -> Result<(PatchCloud, Vec<LossValue>)> {
    cfg.validate()?;
    let cloud = detach_faces(mesh, k, cfg.init_depth)?;
    fit_cloud(cloud, dstar, nstar, cfg)
}

pub fn write_trace(trace: &[LossValue], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iteration,L_sum,L_depth,L_normal\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{}\n",
            fmt_f64(l.sum),
            fmt_f64(l.depth),
            fmt_f64(l.normal)
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}
