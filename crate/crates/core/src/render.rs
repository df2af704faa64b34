//! Closed-form rendering of patch clouds and a z-buffered rasterizer for
//! general 3D triangle meshes.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom;
use crate::ingest::{DepthMap, Intrinsics, NormalMap};
use crate::json::fmt_f64;
use crate::patchcloud::{cloud_face_ids, params_to_plane, FaceIdMap, PatchCloud};

/// Renders depth, normals and face ownership at every pixel center.
pub fn rasterize_patches(cloud: &PatchCloud) -> Result<(DepthMap, NormalMap, FaceIdMap)> {
    let (w, h) = (cloud.width, cloud.height);
    let k = &cloud.intrinsics;
    let ids = cloud_face_ids(cloud)?;
    let normals_per_face: Vec<[f64; 3]> = cloud
        .faces
        .iter()
        .map(|p| params_to_plane(p, k).map(|(n, _)| n))
        .collect::<Result<_>>()?;
    let mut depth = vec![0.0; w * h];
    let mut normals = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let f = ids.get(x, y).expect("face map covers every pixel");
            let abc = cloud.faces[f].abc;
            let (u, v) = k.pixel_ray(x, y);
            let s = abc[0] * u + abc[1] * v + abc[2];
            if !(s > 0.0) {
                return Err(Error::NonPositiveDepth {
                    face: f,
                    x,
                    y,
                    inv_depth: s,
                });
            }
            depth[y * w + x] = 1.0 / s;
            normals[y * w + x] = normals_per_face[f];
        }
    }
    Ok((
        DepthMap::new(w, h, depth)?,
        NormalMap::new(w, h, normals)?,
        ids,
    ))
}

/// Lowest-index face whose closed triangle contains the center of `(x, y)`.
pub fn owner_face(cloud: &PatchCloud, x: usize, y: usize) -> Option<usize> {
    let c = [x as f64 + 0.5, y as f64 + 0.5];
    cloud
        .faces
        .iter()
        .position(|p| geom::in_triangle_closed(&p.tri, c))
}

/// `dD/d(a, b, c)` of the face owning pixel `(x, y)`, as `(face, gradient)`.
pub fn depth_param_gradient(cloud: &PatchCloud, x: usize, y: usize) -> Result<(usize, [f64; 3])> {
    if x >= cloud.width || y >= cloud.height {
        return Err(Error::invalid(format!(
            "pixel ({x}, {y}) is outside the image"
        )));
    }
    let f = owner_face(cloud, x, y).ok_or(Error::Uncovered { x, y })?;
    let (u, v) = cloud.intrinsics.pixel_ray(x, y);
    let abc = cloud.faces[f].abc;
    let s = abc[0] * u + abc[1] * v + abc[2];
    if !(s > 0.0) {
        return Err(Error::NonPositiveDepth {
            face: f,
            x,
            y,
            inv_depth: s,
        });
    }
    let g = -1.0 / (s * s);
    Ok((f, [g * u, g * v, g]))
}

struct ScreenTri {
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    area: f64,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Edge `a -> b` of a positively oriented triangle owns pixel centers lying
/// exactly on it when it is a top or left edge.
#[inline]
fn top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    d[1] < 0.0 || (d[1] == 0.0 && d[0] > 0.0)
}

#[inline]
fn edge_covers(w: f64, tl: bool) -> bool {
    w > 0.0 || (w == 0.0 && tl)
}

const BAND_ROWS: usize = 16;

/// Z-buffered depth rendering of a triangle mesh in camera coordinates.
/// Inverse depth is interpolated linearly in screen space, so planar faces
/// render exactly. Uncovered pixels are invalid (zero).
pub fn rasterize_mesh3d(
    vertices: &[[f64; 3]],
    faces: &[[usize; 3]],
    k: &Intrinsics,
    width: usize,
    height: usize,
) -> Result<DepthMap> {
    k.validate()?;
    if let Some(i) = vertices
        .iter()
        .position(|v| !(v[2] > 0.0) || v.iter().any(|c| !c.is_finite()))
    {
        return Err(Error::invalid(format!(
            "vertex {i} has non-positive or non-finite depth"
        )));
    }
    let mut tris = Vec::with_capacity(faces.len());
    for (f, idx) in faces.iter().enumerate() {
        if idx.iter().any(|&i| i >= vertices.len()) {
            return Err(Error::invalid(format!(
                "face {f} references a missing vertex"
            )));
        }
        let mut p = idx.map(|i| {
            let (x, y) = k.project(vertices[i]);
            [x, y]
        });
        let mut inv_z = idx.map(|i| 1.0 / vertices[i][2]);
        let mut area = geom::orient(p[0], p[1], p[2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            p.swap(1, 2);
            inv_z.swap(1, 2);
            area = -area;
        }
        let lo = |v: f64, hi: usize| (v - 0.5).ceil().clamp(0.0, hi as f64) as usize;
        let up = |v: f64, hi: usize| ((v - 0.5).floor() + 1.0).clamp(0.0, hi as f64) as usize;
        let xs = p.map(|q| q[0]);
        let ys = p.map(|q| q[1]);
        let min = |v: [f64; 3]| v[0].min(v[1]).min(v[2]);
        let max = |v: [f64; 3]| v[0].max(v[1]).max(v[2]);
        tris.push(ScreenTri {
            p,
            inv_z,
            area,
            x0: lo(min(xs), width),
            x1: up(max(xs), width),
            y0: lo(min(ys), height),
            y1: up(max(ys), height),
        });
    }

    let mut inv = vec![0.0f64; width * height];
    inv.par_chunks_mut(BAND_ROWS * width.max(1))
        .enumerate()
        .for_each(|(band, rows)| {
            let by0 = band * BAND_ROWS;
            let by1 = by0 + rows.len() / width.max(1);
            for t in &tris {
                let (y0, y1) = (t.y0.max(by0), t.y1.min(by1));
                if y0 >= y1 {
                    continue;
                }
                let [a, b, c] = t.p;
                let tl = [top_left(b, c), top_left(c, a), top_left(a, b)];
                for y in y0..y1 {
                    for x in t.x0..t.x1 {
                        let q = [x as f64 + 0.5, y as f64 + 0.5];
                        let w0 = geom::orient(b, c, q);
                        let w1 = geom::orient(c, a, q);
                        let w2 = geom::orient(a, b, q);
                        if !(edge_covers(w0, tl[0])
                            && edge_covers(w1, tl[1])
                            && edge_covers(w2, tl[2]))
                        {
                            continue;
                        }
                        let s = (w0 * t.inv_z[0] + w1 * t.inv_z[1] + w2 * t.inv_z[2]) / t.area;
                        let slot = &mut rows[(y - by0) * width + x];
                        if s > *slot {
                            *slot = s;
                        }
                    }
                }
            }
        });
    let depth = inv
        .into_iter()
        .map(|s| if s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    DepthMap::new(width, height, depth)
}

/// Camera-space corners of every patch, three per face.
pub fn patch_vertices(cloud: &PatchCloud) -> Vec<[f64; 3]> {
    let k = &cloud.intrinsics;
    cloud
        .faces
        .iter()
        .flat_map(|p| {
            p.tri.map(|[x, y]| {
                let (u, v) = k.normalize(x, y);
                let z = 1.0 / (p.abc[0] * u + p.abc[1] * v + p.abc[2]);
                [u * z, v * z, z]
            })
        })
        .collect()
}

pub fn write_obj(
    vertices: &[[f64; 3]],
    faces: &[[usize; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        for v in vertices {
            writeln!(
                out,
                "v {} {} {}",
                fmt_f64(v[0]),
                fmt_f64(v[1]),
                fmt_f64(v[2])
            )?;
        }
        for f in faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Writes every patch as an independent triangle with duplicated vertices.
pub fn export_obj(cloud: &PatchCloud, path: impl AsRef<Path>) -> Result<()> {
    cloud.validate()?;
    let vertices = patch_vertices(cloud);
    let faces: Vec<[usize; 3]> = (0..cloud.num_faces())
        .map(|f| [3 * f, 3 * f + 1, 3 * f + 2])
        .collect();
    write_obj(&vertices, &faces, path)
}

/// Reads `v` and triangular `f` records; face indices are returned 0-based.
pub fn read_obj(path: impl AsRef<Path>) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = || {
            Error::invalid(format!(
                "{}:{}: malformed OBJ record",
                path.display(),
                n + 1
            ))
        };
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in v.iter_mut() {
                    *c = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let mut f = [0usize; 3];
                for c in f.iter_mut() {
                    let tok = it.next().ok_or_else(bad)?;
                    let idx: usize = tok
                        .split('/')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(bad)?;
                    if idx == 0 {
                        return Err(bad());
                    }
                    *c = idx - 1;
                }
                if it.next().is_some() {
                    return Err(bad());
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}
