//! Command-line entry points.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{baseline_mesh, Mesh3D};
use crate::error::{Error, Result};
use crate::ingest::{self, DEFAULT_DEPTH_SCALE};
use crate::metrics::{evaluate, param_count, ParamKind};
use crate::optimize::{fit, write_trace, DepthTerm, FitConfig};
use crate::patchcloud::PatchCloud;
use crate::render::{export_obj, rasterize_mesh3d, rasterize_patches};
use crate::triangulate::{extract_mesh, Mesh2D, MeshConfig};
use crate::{edges, triangulate};

#[derive(Debug, Parser)]
#[command(
    name = "tripatch",
    version,
    about = "Triangular patch-cloud depth representation"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "TRIPATCH_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract an edge-adaptive 2D mesh from an image.
    Mesh(MeshArgs),
    /// Fit a patch cloud to a depth map.
    Fit(FitArgs),
    /// Render a patch cloud to depth and normal images.
    Render(RenderArgs),
    /// Decimated dense-mesh baseline.
    Baseline(BaselineArgs),
    /// Depth error metrics of a prediction against ground truth.
    Eval(EvalArgs),
    /// Write a patch cloud as a Wavefront OBJ.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct EdgeFlags {
    #[arg(long, default_value_t = edges::DEFAULT_CANNY_SIGMA)]
    pub canny_sigma: f64,
    /// Low hysteresis threshold as a fraction of the strongest gradient.
    #[arg(long, default_value_t = edges::DEFAULT_CANNY_LOW)]
    pub canny_low: f64,
    /// High hysteresis threshold as a fraction of the strongest gradient.
    #[arg(long, default_value_t = edges::DEFAULT_CANNY_HIGH)]
    pub canny_high: f64,
    /// Polyline simplification tolerance in pixels.
    #[arg(long, default_value_t = edges::DEFAULT_SIMPLIFY_EPS)]
    pub simplify_eps: f64,
    /// Vertex snapping distance in pixels.
    #[arg(long, default_value_t = triangulate::DEFAULT_SNAP_EPS)]
    pub snap_eps: f64,
}

impl EdgeFlags {
    fn config(&self) -> MeshConfig {
        MeshConfig {
            canny_sigma: self.canny_sigma,
            canny_low: self.canny_low,
            canny_high: self.canny_high,
            simplify_eps: self.simplify_eps,
            snap_eps: self.snap_eps,
        }
    }
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub edges: EdgeFlags,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// 16-bit depth image.
    #[arg(long)]
    pub depth: PathBuf,
    /// Target normal image; derived from the depth map when omitted.
    #[arg(long)]
    pub normals: Option<PathBuf>,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Patch-cloud JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV (defaults to the output path with a `.trace.csv` extension).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Reuse a saved mesh instead of extracting one from the image.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Metres per stored depth unit.
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    pub depth_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_n: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub step_size: f64,
    #[arg(long, value_enum, default_value_t = DepthTerm::L1)]
    pub depth_term: DepthTerm,
    #[arg(long, default_value_t = 2.0)]
    pub init_depth: f64,
    #[command(flatten)]
    pub edges: EdgeFlags,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub patches: PathBuf,
    #[arg(long)]
    pub out_depth: PathBuf,
    #[arg(long)]
    pub out_normals: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    pub depth_scale: f64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Target face count.
    #[arg(long)]
    pub faces: usize,
    /// Rendered depth output.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the simplified mesh as OBJ.
    #[arg(long)]
    pub dump_obj: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    pub depth_scale: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Patch cloud whose parameter count is reported.
    #[arg(long)]
    pub patches: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    pub depth_scale: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub patches: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Mesh(a) => cmd_mesh(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

fn cmd_mesh(a: &MeshArgs) -> Result<()> {
    let img = ingest::load_image(&a.image)?;
    let mesh = extract_mesh(&img, &a.edges.config())?;
    mesh.save(&a.out)?;
    println!("vertices: {}", mesh.vertices.len());
    println!("faces: {}", mesh.num_faces());
    Ok(())
}

fn default_trace_path(out: &Path) -> PathBuf {
    out.with_extension("trace.csv")
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let img = ingest::load_image(&a.image)?;
    let depth = ingest::load_depth(&a.depth, a.depth_scale)?;
    let k = ingest::load_intrinsics(&a.intrinsics)?;
    let dims = (img.width(), img.height());
    if depth.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: depth.dims(),
        });
    }
    let cfg = FitConfig {
        lambda_n: a.lambda_n,
        iterations: a.iterations,
        step_size: a.step_size,
        depth_term: a.depth_term,
        init_depth: a.init_depth,
    };
    cfg.validate()?;
    let normals = match (&a.normals, cfg.lambda_n > 0.0) {
        (_, false) => ingest::NormalMap::invalid(dims.0, dims.1),
        (Some(p), true) => ingest::load_normals(p)?,
        (None, true) => ingest::normals_from_depth(&depth, &k)?,
    };
    if cfg.lambda_n > 0.0 && normals.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: normals.dims(),
        });
    }
    let mesh = match &a.mesh {
        Some(p) => {
            let m = Mesh2D::load(p)?;
            if (m.width, m.height) != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: (m.width, m.height),
                });
            }
            m
        }
        None => extract_mesh(&img, &a.edges.config())?,
    };
    let (cloud, trace) = fit(&mesh, &depth, &normals, &k, &cfg)?;
    cloud.save(&a.out)?;
    let trace_path = a
        .trace
        .clone()
        .unwrap_or_else(|| default_trace_path(&a.out));
    write_trace(&trace, &trace_path)?;
    let last = trace.last().expect("trace has an initial entry");
    println!("faces: {}", cloud.num_faces());
    println!("parameters: {}", cloud.param_count());
    println!("L_sum: {:.6e}", last.sum);
    println!("L_depth: {:.6e}", last.depth);
    println!("L_normal: {:.6e}", last.normal);
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let cloud = PatchCloud::load(&a.patches)?;
    let (depth, normals, _) = rasterize_patches(&cloud)?;
    ingest::save_depth(&depth, &a.out_depth, a.depth_scale)?;
    if let Some(p) = &a.out_normals {
        ingest::save_normals(&normals, p)?;
    }
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let depth = ingest::load_depth(&a.depth, a.depth_scale)?;
    let k = ingest::load_intrinsics(&a.intrinsics)?;
    let mesh: Mesh3D = baseline_mesh(&depth, &k, a.faces)?;
    if let Some(p) = &a.dump_obj {
        mesh.save_obj(p)?;
    }
    let rendered = rasterize_mesh3d(
        &mesh.vertices,
        &mesh.faces,
        &k,
        depth.width(),
        depth.height(),
    )?;
    ingest::save_depth(&rendered, &a.out, a.depth_scale)?;
    println!("faces: {}", mesh.num_faces());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = ingest::load_depth(&a.pred, a.depth_scale)?;
    let gt = ingest::load_depth(&a.gt, a.depth_scale)?;
    let mut report = evaluate(&pred, &gt)?;
    if let Some(p) = &a.patches {
        let cloud = PatchCloud::load(p)?;
        report.n_params = Some(param_count(ParamKind::Patchcloud, cloud.num_faces()));
    }
    crate::json::write_file(&report, &a.out)?;
    println!(
        "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "rel", "rms", "log10", "d1", "d2", "d3"
    );
    println!(
        "{:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        report.rel, report.rms, report.log10, report.delta1, report.delta2, report.delta3
    );
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let cloud = PatchCloud::load(&a.patches)?;
    export_obj(&cloud, &a.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_fit_config() {
        let cli = Cli::try_parse_from([
            "tripatch",
            "fit",
            "--image",
            "i.png",
            "--depth",
            "d.png",
            "--intrinsics",
            "k.json",
            "--out",
            "c.json",
        ])
        .unwrap();
        let Command::Fit(a) = cli.command else {
            panic!()
        };
        let d = FitConfig::default();
        assert_eq!(
            (
                a.lambda_n,
                a.iterations,
                a.step_size,
                a.depth_term,
                a.init_depth
            ),
            (
                d.lambda_n,
                d.iterations,
                d.step_size,
                d.depth_term,
                d.init_depth
            )
        );
        assert_eq!(a.depth_scale, 0.001);
        assert_eq!(default_trace_path(&a.out), PathBuf::from("c.trace.csv"));
    }
}
