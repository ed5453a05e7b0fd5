//! File-based pipeline stages. Each stage reads only what earlier stages
//! wrote into the output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{de::DeserializeOwned, Serialize};

use crate::centerline::{build_frames, compute_centerline, sample_centerline, Centerline, PlaneFrame};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate, cutout, dsc, voxelize, EvalRecord, EvalReport};
use crate::graph_seg::{build_graph, bundle_mean_fa, extract_boundary, min_cut, CostParams};
use crate::mesh::build_mesh;
use crate::ray_seg::{detect_boundary, in_plane_correction, intra_plane_correction, BoundaryField};
use crate::raygrid::{build_grid, EvalGrid};
use crate::tracking::{restrict_and_crop, seed_points, track_all, Streamline};
use crate::volume::{BinaryMask, TensorVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Ray,
    Graph,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Ray, Method::Graph];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ray => "ray",
            Method::Graph => "graph",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ray" => Ok(Method::Ray),
            "graph" => Ok(Method::Graph),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}, expected ray or graph"))),
        }
    }
}

/// Artifact locations inside one run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Layout { dir: dir.into() }
    }

    pub fn volume(&self) -> PathBuf {
        self.dir.join("volume.json")
    }
    pub fn mask(&self) -> PathBuf {
        self.dir.join("mask.json")
    }
    pub fn bundle(&self) -> PathBuf {
        self.dir.join("bundle.json")
    }
    pub fn centerline(&self) -> PathBuf {
        self.dir.join("centerline.json")
    }
    pub fn frames(&self) -> PathBuf {
        self.dir.join("frames.json")
    }
    pub fn grid(&self) -> PathBuf {
        self.dir.join("grid.json")
    }
    pub fn boundary(&self, m: Method) -> PathBuf {
        self.dir.join(format!("boundary_{m}.json"))
    }
    pub fn dimacs(&self) -> PathBuf {
        self.dir.join("graph.dimacs")
    }
    pub fn mesh_obj(&self, m: Method) -> PathBuf {
        self.dir.join(format!("mesh_{m}.obj"))
    }
    pub fn mesh_stl(&self, m: Method) -> PathBuf {
        self.dir.join(format!("mesh_{m}.stl"))
    }
    pub fn segmentation(&self, m: Method) -> PathBuf {
        self.dir.join(format!("seg_{m}.json"))
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.dir.join("report.txt")
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Rayon pool capped at `threads` workers (all cores when `None`).
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    builder.build().map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Writes `volume.json` and `mask.json`, either generated or copied from
/// the configured input files.
pub fn stage_phantom(cfg: &PipelineConfig, layout: &Layout, seed: Option<u64>) -> Result<()> {
    ensure_dir(&layout.dir)?;
    let (vol, mask) = match &cfg.input_volume {
        Some(path) => {
            let vol = TensorVolume::read(path)?;
            let mask = match &cfg.ground_truth {
                Some(m) => BinaryMask::read(m)?,
                None => BinaryMask::empty(*vol.grid()),
            };
            (vol, mask)
        }
        None => cfg.phantom_for_seed(seed).generate()?,
    };
    vol.write(&layout.volume())?;
    mask.write(&layout.mask())?;
    log::info!("phantom: {} voxels, {} inside the tube", mask.grid().len(), mask.count());
    Ok(())
}

pub struct TrackOutput {
    pub fibers: Vec<Streamline>,
    pub centerline: Centerline,
    pub frames: Vec<PlaneFrame>,
    pub grid: EvalGrid,
}

/// Tracking, cropping, centerline, frames and evaluation grid.
pub fn track_volume(cfg: &PipelineConfig, vol: &TensorVolume) -> Result<TrackOutput> {
    let seeds = seed_points(&cfg.regions.seed, cfg.tracking.seed_density)?;
    let tracked = track_all(vol, &seeds, &cfg.tracking)?;
    let [a, b] = &cfg.regions.include;
    let fibers = restrict_and_crop(&tracked, a, b)?;
    log::info!("tracking: {} seeds, {} fibers, {} kept", seeds.len(), tracked.len(), fibers.len());
    let centerline = compute_centerline(&fibers, cfg.centerline.samples_per_fiber)?;
    let samples = sample_centerline(&centerline, cfg.grid.n)?;
    let frames = build_frames(&samples)?;
    let grid = build_grid(vol, &frames, &cfg.grid)?;
    Ok(TrackOutput { fibers, centerline, frames, grid })
}

pub fn stage_track(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let vol = TensorVolume::read(&layout.volume())?;
    let out = track_volume(cfg, &vol)?;
    write_json(&layout.bundle(), &out.fibers)?;
    write_json(&layout.centerline(), &out.centerline)?;
    write_json(&layout.frames(), &out.frames)?;
    out.grid.write_attributes(&layout.grid())
}

pub fn read_frames(layout: &Layout) -> Result<Vec<PlaneFrame>> {
    read_json(&layout.frames())
}

pub fn read_bundle(layout: &Layout) -> Result<Vec<Streamline>> {
    read_json(&layout.bundle())
}

/// Ray-based boundary with the configured corrections.
pub fn segment_ray(cfg: &PipelineConfig, grid: &EvalGrid, voxel_spacing: [f64; 3]) -> Result<BoundaryField> {
    let th = cfg.ray.thresholds(voxel_spacing, grid.params.d)?;
    let mut b = detect_boundary(grid, &th)?;
    log::info!("ray: window r = {}, {} saturated ray(s)", th.r, b.saturated_count());
    if cfg.ray.in_plane_correction {
        b = in_plane_correction(&b, cfg.ray.max_ratio)?;
    }
    if cfg.ray.intra_plane_correction {
        b = intra_plane_correction(&b, cfg.ray.max_ratio)?;
    }
    Ok(b)
}

/// Graph-based boundary; optionally dumps the network.
pub fn segment_graph(cfg: &PipelineConfig, grid: &EvalGrid, fa_avg: f64, dimacs: Option<&Path>) -> Result<BoundaryField> {
    let cp = CostParams { lambda_weight: cfg.graph.lambda_weight, fa_avg };
    let g = build_graph(grid, cfg.graph.smoothness(), &cp)?;
    if let Some(path) = dimacs {
        g.write_dimacs(path)?;
    }
    let cut = min_cut(&g);
    log::info!("graph: {} nodes, {} arcs, fa_avg {fa_avg:.4}, flow {:.6}", g.node_count(), g.arcs.len(), cut.flow_value);
    extract_boundary(&g, &cut.source_set)
}

pub fn stage_segment(cfg: &PipelineConfig, layout: &Layout, method: Method) -> Result<()> {
    let frames = read_frames(layout)?;
    let grid = EvalGrid::read_attributes(&layout.grid(), frames)?;
    let vol = TensorVolume::read(&layout.volume())?;
    let b = match method {
        Method::Ray => segment_ray(cfg, &grid, vol.grid().spacing)?,
        Method::Graph => {
            let fa_avg = bundle_mean_fa(&read_bundle(layout)?, &vol)?;
            let dump = cfg.graph.dump_dimacs.then(|| layout.dimacs());
            segment_graph(cfg, &grid, fa_avg, dump.as_deref())?
        }
    };
    b.write(&layout.boundary(method))
}

fn methods_present(layout: &Layout, method: Option<Method>) -> Result<Vec<Method>> {
    let methods: Vec<Method> = match method {
        Some(m) => vec![m],
        None => Method::ALL.into_iter().filter(|m| layout.boundary(*m).exists()).collect(),
    };
    if methods.is_empty() {
        return Err(Error::Io {
            path: layout.dir.join("boundary_<method>.json"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no boundary file found"),
        });
    }
    Ok(methods)
}

pub fn stage_mesh(layout: &Layout, method: Option<Method>) -> Result<()> {
    let frames = read_frames(layout)?;
    for m in methods_present(layout, method)? {
        let b = BoundaryField::read(&layout.boundary(m))?;
        let mesh = build_mesh(&b, &frames)?;
        let audit = mesh.edge_audit();
        if !audit.is_watertight() || !audit.is_consistently_oriented() {
            return Err(Error::InternalConsistency(format!("{m} mesh failed the edge audit: {audit:?}")));
        }
        mesh.write_obj(&layout.mesh_obj(m))?;
        mesh.write_stl(&layout.mesh_stl(m))?;
        log::info!("mesh {m}: {} vertices, {} faces, volume {:.1} mm³", mesh.vertices.len(), mesh.faces.len(), mesh.signed_volume());
    }
    Ok(())
}

/// Voxelizes each available boundary and scores it against the cut-out
/// ground truth.
pub fn evaluate_run(cfg: &PipelineConfig, layout: &Layout, method: Option<Method>, config_id: &str) -> Result<Vec<EvalRecord>> {
    let frames = read_frames(layout)?;
    let mask = BinaryMask::read(&layout.mask())?;
    let [a, b] = &cfg.regions.include;
    let truth = cutout(&mask, a, b)?;
    let mut records = Vec::new();
    for m in methods_present(layout, method)? {
        let field = BoundaryField::read(&layout.boundary(m))?;
        let seg = voxelize(&field, &frames, mask.grid())?;
        seg.write(&layout.segmentation(m))?;
        let score = dsc(&seg, &truth)?;
        log::info!("evaluate {m}: DSC {:.3}%", 100.0 * score);
        records.push(EvalRecord { config_id: config_id.to_string(), method: m.name().into(), dsc: score });
    }
    Ok(records)
}

pub fn write_report(layout: &Layout, report: &EvalReport) -> Result<()> {
    report.write_json(&layout.report_json())?;
    let txt = layout.report_txt();
    std::fs::write(&txt, report.to_table()).map_err(|e| Error::io(&txt, e))
}

pub fn stage_evaluate(cfg: &PipelineConfig, layout: &Layout, method: Option<Method>, config_id: &str) -> Result<EvalReport> {
    let report = aggregate(&evaluate_run(cfg, layout, method, config_id)?)?;
    write_report(layout, &report)?;
    Ok(report)
}

fn run_all_stages(cfg: &PipelineConfig, layout: &Layout, seed: u64) -> Result<Vec<EvalRecord>> {
    stage_phantom(cfg, layout, Some(seed))?;
    stage_track(cfg, layout)?;
    for m in Method::ALL {
        stage_segment(cfg, layout, m)?;
    }
    stage_mesh(layout, None)?;
    evaluate_run(cfg, layout, None, &format!("seed_{seed}"))
}

/// Runs every stage for `cfg.repeat` consecutive seeds. A single run writes
/// into `out` directly; repeats go to `out/run_<seed>` with the combined
/// report in `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, seed: Option<u64>) -> Result<EvalReport> {
    ensure_dir(out)?;
    let base = seed.or(cfg.rng_seed).unwrap_or_else(|| cfg.base_seed());
    let mut records = Vec::new();
    for i in 0..cfg.repeat as u64 {
        let s = base.wrapping_add(i);
        let layout = if cfg.repeat == 1 { Layout::new(out) } else { Layout::new(out.join(format!("run_{s}"))) };
        let run = run_all_stages(cfg, &layout, s)?;
        if cfg.repeat > 1 {
            write_report(&layout, &aggregate(&run)?)?;
        }
        records.extend(run);
    }
    let report = aggregate(&records)?;
    write_report(&Layout::new(out), &report)?;
    Ok(report)
}
