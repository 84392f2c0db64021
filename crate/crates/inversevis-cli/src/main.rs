//! Command-line frontend: rendering, parameter optimization, viewpoint
//! annealing, coverage benchmarks, and distance-grid caching.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use inversevis::camera::{Camera, Projection};
use inversevis::energy::{energy, VisibilityGrid};
use inversevis::error::{Error, Result};
use inversevis::mesh::{load_mesh, normalize, ImportanceField, Mesh, ScalarSource};
use inversevis::optimize::{AnnealConfig, AscentConfig, GradientMode};
use inversevis::render::{
    anneal_viewpoint, benchmark_csv, benchmark_one, optimize_alpha_for_view,
    optimize_mirror_for_view, shade_frame, trace_frame, Report, ViewOptConfig,
};
use inversevis::sdf::{SdfGrid, DEFAULT_RESOLUTION};
use inversevis::technique::{
    neugebauer_for, Technique, DEFAULT_ALPHA, DEFAULT_MIRROR_OFFSET, DEFAULT_PHI0,
};
use inversevis::trace::TraceConfig;

#[derive(Parser)]
#[command(
    name = "inversevis",
    version,
    about = "Surface renderer that reveals occluded backsides via curved rays, \
             an optimized mirror, or a ring projection"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render one frame to a PPM image and a JSON report
    Render(RenderArgs),
    /// Gradient-ascend the curved-ray seed strength at a fixed viewpoint
    OptimizeAlpha(OptimizeAlphaArgs),
    /// Gradient-ascend the mirror shape coefficients at a fixed viewpoint
    OptimizeMirror(OptimizeMirrorArgs),
    /// Simulated annealing over viewpoints for a fixed technique
    OptimizeView(OptimizeViewArgs),
    /// Coverage benchmark: anneal each technique on each mesh, write CSV
    Benchmark(BenchmarkArgs),
    /// Build the signed-distance grid for a mesh and write its cache
    BuildSdf(BuildSdfArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProjArg {
    Ortho,
    Persp,
}

impl From<ProjArg> for Projection {
    fn from(p: ProjArg) -> Projection {
        match p {
            ProjArg::Ortho => Projection::Orthographic,
            ProjArg::Persp => Projection::Perspective,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TechniqueKind {
    Direct,
    Neugebauer,
    Mirror,
    Inversevis,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EnergyKind {
    Scalar,
    Visibility,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GradArg {
    Analytic,
    Fd,
}

#[derive(Args)]
struct SceneArgs {
    /// Mesh file (OFF-style text, optional per-vertex scalar column)
    #[arg(long)]
    mesh: PathBuf,
    /// Sidecar file with one scalar per vertex line
    #[arg(long)]
    scalars: Option<PathBuf>,
    /// Distance grid resolution (voxels per axis)
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    sdf_res: usize,
    /// Binary grid cache to reuse when valid, or fill after building
    #[arg(long)]
    sdf_cache: Option<PathBuf>,
}

impl SceneArgs {
    fn load(&self) -> Result<(Mesh, SdfGrid)> {
        let source = match &self.scalars {
            Some(p) => ScalarSource::Sidecar(p.clone()),
            None => ScalarSource::Embedded,
        };
        let mesh = normalize(&load_mesh(&self.mesh, &source)?)?;
        let grid = match &self.sdf_cache {
            Some(cache) => match SdfGrid::read_cache(cache, mesh.content_hash(), self.sdf_res)? {
                Some(g) => g,
                None => {
                    let g = SdfGrid::build(&mesh, self.sdf_res)?;
                    g.write_cache(cache)?;
                    g
                }
            },
            None => SdfGrid::build(&mesh, self.sdf_res)?,
        };
        Ok((mesh, grid))
    }
}

#[derive(Args)]
struct ViewArgs {
    /// Camera polar angle, degrees
    #[arg(long, default_value_t = 90.0)]
    theta: f64,
    /// Camera azimuth, degrees
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    #[arg(long, value_enum, default_value_t = ProjArg::Ortho)]
    proj: ProjArg,
    /// Image width and height, pixels
    #[arg(long, default_value_t = 256)]
    res: usize,
}

impl ViewArgs {
    fn camera(&self) -> Camera {
        Camera::new(
            self.theta.to_radians(),
            self.phi.to_radians(),
            self.proj.into(),
            self.res,
            self.res,
        )
    }
}

#[derive(Args)]
struct TechniqueArgs {
    #[arg(long, value_enum, default_value_t = TechniqueKind::Inversevis)]
    technique: TechniqueKind,
    /// Seed strength for curved rays
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Distance-hull level the curved rays launch from
    #[arg(long, default_value_t = DEFAULT_PHI0)]
    phi0: f64,
    /// Ring inner radius (NDC); defaults to the mesh silhouette radius
    #[arg(long)]
    r1: Option<f64>,
    /// Ring outer radius (NDC)
    #[arg(long)]
    r2: Option<f64>,
    /// Mirror coefficients w1,w2,w3,w4,w5 (comma separated)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    omega: Option<Vec<f64>>,
    /// Mirror distance beyond the viewpoint sphere
    #[arg(long, default_value_t = DEFAULT_MIRROR_OFFSET)]
    offset: f64,
}

impl TechniqueArgs {
    fn build(&self, mesh: &Mesh) -> Result<Technique> {
        Ok(match self.technique {
            TechniqueKind::Direct => Technique::Direct,
            TechniqueKind::Neugebauer => {
                let Technique::Neugebauer { center, r1, r2 } = neugebauer_for(mesh) else {
                    unreachable!()
                };
                let r1 = self.r1.unwrap_or(r1);
                let r2 = self.r2.unwrap_or(r2);
                if !(r1 > 0.0 && r1 < r2) {
                    return Err(Error::config(format!(
                        "ring radii must satisfy 0 < r1 < r2, got {r1} and {r2}"
                    )));
                }
                Technique::Neugebauer { center, r1, r2 }
            }
            TechniqueKind::Mirror => {
                let omega = match &self.omega {
                    Some(v) => five_coefficients(v, "--omega")?,
                    None => [0.0; 5],
                };
                Technique::Mirror { omega, offset: self.offset }
            }
            TechniqueKind::Inversevis => {
                if self.alpha <= 0.0 {
                    return Err(Error::config("alpha must be positive"));
                }
                if self.phi0 <= 0.0 {
                    return Err(Error::config("phi0 must be positive"));
                }
                Technique::InverseVis { alpha: self.alpha, phi0: self.phi0 }
            }
        })
    }
}

#[derive(Args)]
struct EnergyArgs {
    /// Importance that scores pixels
    #[arg(long, value_enum, default_value_t = EnergyKind::Scalar)]
    energy: EnergyKind,
    /// Weight on the directly visible term
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    /// Resolution of the coverage voxel grid
    #[arg(long, default_value_t = 64)]
    vis_res: usize,
}

impl EnergyArgs {
    fn importance(&self) -> ImportanceField {
        match self.energy {
            EnergyKind::Scalar => ImportanceField::Scalar,
            EnergyKind::Visibility => ImportanceField::Visibility,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    view: ViewArgs,
    #[command(flatten)]
    technique: TechniqueArgs,
    #[command(flatten)]
    energy: EnergyArgs,
    /// Output image (binary PPM)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output JSON report
    #[arg(long)]
    report: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct OptimizeAlphaArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    view: ViewArgs,
    #[command(flatten)]
    energy: EnergyArgs,
    /// Initial seed strength
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha0: f64,
    #[arg(long, default_value_t = DEFAULT_PHI0)]
    phi0: f64,
    /// Gradient source
    #[arg(long, value_enum, default_value_t = GradArg::Analytic)]
    grad: GradArg,
    /// Cap on ascent iterations
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    /// Write the ascent trace as JSON
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct OptimizeMirrorArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    view: ViewArgs,
    #[command(flatten)]
    energy: EnergyArgs,
    /// Initial mirror coefficients w1,w2,w3,w4,w5 (comma separated)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    omega0: Option<Vec<f64>>,
    /// Mirror distance beyond the viewpoint sphere
    #[arg(long, default_value_t = DEFAULT_MIRROR_OFFSET)]
    offset: f64,
    /// Cap on ascent iterations
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    /// Write the ascent trace as JSON
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct OptimizeViewArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Starting viewpoint and render size for every candidate
    #[command(flatten)]
    view: ViewArgs,
    #[command(flatten)]
    technique: TechniqueArgs,
    #[command(flatten)]
    energy: EnergyArgs,
    #[arg(long, default_value_t = 100)]
    anneal_steps: usize,
    #[arg(long, default_value_t = 0.95)]
    cooling: f64,
    #[arg(long, default_value_t = 1.0)]
    t0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable per-candidate seed-strength re-optimization
    #[arg(long)]
    no_reopt: bool,
    /// Ascent iterations per candidate when re-optimizing
    #[arg(long, default_value_t = 3)]
    reopt_iters: usize,
    /// Write the annealing sample log as JSON
    #[arg(long)]
    samples_out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Mesh files (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    mesh: Vec<PathBuf>,
    /// Techniques to benchmark (comma separated)
    #[arg(long, value_enum, value_delimiter = ',')]
    technique: Option<Vec<TechniqueKind>>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    sdf_res: usize,
    #[arg(long, default_value_t = 64)]
    vis_res: usize,
    /// Render size for every candidate view
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    #[arg(long, default_value_t = 100)]
    anneal_steps: usize,
    #[arg(long, default_value_t = 0.95)]
    cooling: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_reopt: bool,
    #[arg(long, default_value_t = 3)]
    reopt_iters: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_PHI0)]
    phi0: f64,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BuildSdfArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    scalars: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    sdf_res: usize,
    /// Cache file to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn five_coefficients(v: &[f64], flag: &str) -> Result<[f64; 5]> {
    <[f64; 5]>::try_from(v).map_err(|_| {
        Error::config(format!("{flag} needs exactly 5 coefficients, got {}", v.len()))
    })
}

fn scalar_only(energy: &EnergyArgs, what: &str) -> Result<()> {
    if energy.energy == EnergyKind::Visibility {
        return Err(Error::config(format!(
            "{what} needs a per-point importance; --energy visibility is only \
             meaningful for optimize-view and benchmark"
        )));
    }
    Ok(())
}

fn run_render(a: &RenderArgs) -> Result<()> {
    for p in [&a.out, &a.report].into_iter().flatten() {
        ensure_writable(p, a.force)?;
    }
    let (mesh, grid) = a.scene.load()?;
    let cam = a.view.camera();
    let tech = a.technique.build(&mesh)?;
    let importance = a.energy.importance();
    let cfg = TraceConfig::default();

    let frame = trace_frame(&grid, &mesh, &cam, &tech, &cfg)?;
    let (e, visibility) = match a.energy.energy {
        EnergyKind::Visibility => {
            let mut vis = VisibilityGrid::mark_from(&grid, a.energy.vis_res)?;
            let e = energy(&frame, &mesh, &importance, a.energy.gamma, Some(&mut vis))?;
            (e, Some(vis.ratio()))
        }
        EnergyKind::Scalar => {
            (energy(&frame, &mesh, &importance, a.energy.gamma, None)?, None)
        }
    };

    if let Some(out) = &a.out {
        let img = shade_frame(&grid, &mesh, &cam, &frame, &importance, &cfg)?;
        img.write_ppm(out)?;
    }
    let report =
        Report::new(&tech, a.view.theta.to_radians(), a.view.phi.to_radians(), &e, visibility);
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let vis_note = match report.visibility {
        Some(v) => format!(" visibility={v:.4}"),
        None => String::new(),
    };
    println!(
        "{} view=({:.1}, {:.1}) total={:.6} direct={:.6} indirect={:.6}{}",
        report.technique, a.view.theta, a.view.phi, report.total, report.direct,
        report.indirect, vis_note
    );
    Ok(())
}

fn run_optimize_alpha(a: &OptimizeAlphaArgs) -> Result<()> {
    if let Some(p) = &a.trace_out {
        ensure_writable(p, a.force)?;
    }
    scalar_only(&a.energy, "optimize-alpha")?;
    let (mesh, grid) = a.scene.load()?;
    let cam = a.view.camera();
    let cfg = TraceConfig::default();
    let ascent = AscentConfig { max_iters: a.max_iters, ..AscentConfig::default() };
    let mode = match a.grad {
        GradArg::Analytic => GradientMode::Analytic,
        GradArg::Fd => GradientMode::FiniteDifference,
    };
    let out = optimize_alpha_for_view(
        &grid,
        &mesh,
        &cam,
        a.alpha0,
        a.phi0,
        &a.energy.importance(),
        a.energy.gamma,
        &cfg,
        mode,
        &ascent,
    )?;
    if let Some(p) = &a.trace_out {
        write_json(p, &out)?;
    }
    println!(
        "alpha={:.6} energy={:.6} iterations={}",
        out.params[0],
        out.energy,
        out.steps.len()
    );
    Ok(())
}

fn run_optimize_mirror(a: &OptimizeMirrorArgs) -> Result<()> {
    if let Some(p) = &a.trace_out {
        ensure_writable(p, a.force)?;
    }
    scalar_only(&a.energy, "optimize-mirror")?;
    let (mesh, grid) = a.scene.load()?;
    let cam = a.view.camera();
    let cfg = TraceConfig::default();
    let ascent = AscentConfig { max_iters: a.max_iters, ..AscentConfig::default() };
    let omega0 = match &a.omega0 {
        Some(v) => five_coefficients(v, "--omega0")?,
        None => [0.0; 5],
    };
    let out = optimize_mirror_for_view(
        &grid,
        &mesh,
        &cam,
        omega0,
        a.offset,
        &a.energy.importance(),
        a.energy.gamma,
        &cfg,
        &ascent,
    )?;
    if let Some(p) = &a.trace_out {
        write_json(p, &out)?;
    }
    let w: Vec<String> = out.params.iter().map(|v| format!("{v:.5}")).collect();
    println!("omega=[{}] energy={:.6} iterations={}", w.join(","), out.energy, out.steps.len());
    Ok(())
}

fn run_optimize_view(a: &OptimizeViewArgs) -> Result<()> {
    if let Some(p) = &a.samples_out {
        ensure_writable(p, a.force)?;
    }
    let (mesh, grid) = a.scene.load()?;
    let tech = a.technique.build(&mesh)?;
    let cfg = TraceConfig::default();
    let view = ViewOptConfig {
        anneal: AnnealConfig {
            steps: a.anneal_steps,
            t0: a.t0,
            cooling: a.cooling,
            seed: a.seed,
            ..AnnealConfig::default()
        },
        theta0: a.view.theta.to_radians(),
        phi0: a.view.phi.to_radians(),
        projection: a.view.proj.into(),
        width: a.view.res,
        height: a.view.res,
        gamma: a.energy.gamma,
        reopt_alpha: !a.no_reopt,
        reopt_iters: a.reopt_iters,
    };

    let mut vis_store = match a.energy.energy {
        EnergyKind::Visibility => Some(VisibilityGrid::mark_from(&grid, a.energy.vis_res)?),
        EnergyKind::Scalar => None,
    };
    let out = anneal_viewpoint(
        &grid,
        &mesh,
        &tech,
        &a.energy.importance(),
        &cfg,
        &view,
        vis_store.as_mut(),
    )?;
    if let Some(p) = &a.samples_out {
        write_json(p, &out.samples)?;
    }
    let coverage = match &vis_store {
        Some(v) => format!(" coverage={:.4}", v.ratio()),
        None => String::new(),
    };
    println!(
        "theta={:.2} phi={:.2} energy={:.6} technique={}{}",
        out.theta.to_degrees(),
        out.phi.to_degrees(),
        out.energy,
        serde_json::to_string(&out.technique.params_json())
            .map_err(|e| Error::config(e.to_string()))?,
        coverage
    );
    Ok(())
}

fn run_benchmark(a: &BenchmarkArgs) -> Result<()> {
    if let Some(p) = &a.out {
        ensure_writable(p, a.force)?;
    }
    let kinds = a
        .technique
        .clone()
        .unwrap_or_else(|| vec![TechniqueKind::Neugebauer, TechniqueKind::Inversevis]);
    let cfg = TraceConfig::default();

    let mut entries = Vec::new();
    for mesh_path in &a.mesh {
        let mesh = normalize(&load_mesh(mesh_path, &ScalarSource::Embedded)?)?;
        let grid = SdfGrid::build(&mesh, a.sdf_res)?;
        let name = mesh_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| mesh_path.display().to_string());

        for kind in &kinds {
            let tech = match kind {
                TechniqueKind::Direct => Technique::Direct,
                TechniqueKind::Neugebauer => neugebauer_for(&mesh),
                TechniqueKind::Mirror => {
                    Technique::Mirror { omega: [0.0; 5], offset: DEFAULT_MIRROR_OFFSET }
                }
                TechniqueKind::Inversevis => {
                    Technique::InverseVis { alpha: a.alpha, phi0: a.phi0 }
                }
            };
            let view = ViewOptConfig {
                anneal: AnnealConfig {
                    steps: a.anneal_steps,
                    cooling: a.cooling,
                    seed: a.seed,
                    ..AnnealConfig::default()
                },
                width: a.res,
                height: a.res,
                gamma: a.gamma,
                reopt_alpha: !a.no_reopt,
                reopt_iters: a.reopt_iters,
                ..ViewOptConfig::default()
            };
            let (entry, _) =
                benchmark_one(&grid, &mesh, &name, &tech, &cfg, &view, a.vis_res)?;
            eprintln!(
                "{} {}: visibility={:.4} frontface={:.4}",
                entry.mesh, entry.technique, entry.visibility, entry.frontface
            );
            entries.push(entry);
        }
    }

    let csv = benchmark_csv(&entries);
    match &a.out {
        Some(p) => std::fs::write(p, csv)
            .map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_build_sdf(a: &BuildSdfArgs) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    let source = match &a.scalars {
        Some(p) => ScalarSource::Sidecar(p.clone()),
        None => ScalarSource::Embedded,
    };
    let mesh = normalize(&load_mesh(&a.mesh, &source)?)?;
    let grid = SdfGrid::build(&mesh, a.sdf_res)?;
    grid.write_cache(&a.out)?;
    println!(
        "wrote {} ({}^3 voxels, mesh hash {:016x})",
        a.out.display(),
        grid.resolution(),
        grid.mesh_hash()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Render(a) => run_render(a),
        Cmd::OptimizeAlpha(a) => run_optimize_alpha(a),
        Cmd::OptimizeMirror(a) => run_optimize_mirror(a),
        Cmd::OptimizeView(a) => run_optimize_view(a),
        Cmd::Benchmark(a) => run_benchmark(a),
        Cmd::BuildSdf(a) => run_build_sdf(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
