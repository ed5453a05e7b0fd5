//! Python bindings for the fiberseg pipeline.

use std::path::PathBuf;

use fiberseg_core::config::PipelineConfig;
use fiberseg_core::eval::{cutout, EvalRecord};
use fiberseg_core::mesh::TriangleMesh;
use fiberseg_core::pipeline::{self, TrackOutput};
use fiberseg_core::ray_seg::BoundaryField;
use fiberseg_core::tensor::{self, DiffusionTensor};
use fiberseg_core::volume::{BinaryMask, TensorVolume};
use fiberseg_core::{Error, Vec3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tuple(v: Vec3) -> (f64, f64, f64) {
    (v.x, v.y, v.z)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Pipeline configuration; defaults match the shipped torus setup.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig { inner: PipelineConfig::default() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: PipelineConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PipelineConfig::load(&path).map(|inner| PyConfig { inner }).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Config(grid={:?}, repeat={})", self.inner.grid, self.inner.repeat)
    }
}

#[pyclass(name = "TensorVolume")]
struct PyVolume {
    inner: TensorVolume,
}

#[pymethods]
impl PyVolume {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        TensorVolume::read(&path).map(|inner| PyVolume { inner }).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.grid().dims
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.grid().spacing
    }

    /// FA per voxel, x-fastest.
    fn fa(&self) -> PyResult<Vec<f64>> {
        self.inner.data().iter().map(|t| t.fa()).collect::<Result<_, _>>().map_err(to_py)
    }

    /// Trilinearly interpolated FA at a world position.
    fn sample_fa(&self, x: f64, y: f64, z: f64) -> PyResult<f64> {
        let t = fiberseg_core::volume::sample_tensor(&self.inner, Vec3::new(x, y, z)).map_err(to_py)?;
        t.fa().map_err(to_py)
    }
}

#[pyclass(name = "BinaryMask")]
struct PyMask {
    inner: BinaryMask,
}

#[pymethods]
impl PyMask {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        BinaryMask::read(&path).map(|inner| PyMask { inner }).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.grid().dims
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn to_list(&self) -> Vec<bool> {
        self.inner.data().to_vec()
    }
}

/// Tracked bundle with its centerline, plane frames and evaluation grid.
#[pyclass(name = "Tracking")]
struct PyTracking {
    inner: TrackOutput,
}

#[pymethods]
impl PyTracking {
    #[getter]
    fn fiber_count(&self) -> usize {
        self.inner.fibers.len()
    }

    fn centerline(&self) -> Vec<(f64, f64, f64)> {
        self.inner.centerline.points.iter().map(|p| tuple(*p)).collect()
    }

    fn plane_origins(&self) -> Vec<(f64, f64, f64)> {
        self.inner.frames.iter().map(|f| tuple(f.origin)).collect()
    }

    /// Mean FA over every fiber vertex.
    fn mean_fa(&self, volume: &PyVolume) -> PyResult<f64> {
        fiberseg_core::graph_seg::bundle_mean_fa(&self.inner.fibers, &volume.inner).map_err(to_py)
    }
}

#[pyclass(name = "BoundaryField")]
struct PyBoundary {
    inner: BoundaryField,
}

#[pymethods]
impl PyBoundary {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        BoundaryField::read(&path).map(|inner| PyBoundary { inner }).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n, self.inner.k)
    }

    #[getter]
    fn radii(&self) -> Vec<f64> {
        self.inner.radii.clone()
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.provenance.clone()
    }

    fn radius(&self, plane: usize, ray: usize) -> PyResult<f64> {
        if plane >= self.inner.n || ray >= self.inner.k {
            return Err(PyValueError::new_err(format!("({plane}, {ray}) outside {}x{}", self.inner.n, self.inner.k)));
        }
        Ok(self.inner.radius(plane, ray))
    }
}

#[pyclass(name = "TriangleMesh")]
struct PyMesh {
    inner: TriangleMesh,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn read_obj(path: PathBuf) -> PyResult<Self> {
        TriangleMesh::read_obj(&path).map(|inner| PyMesh { inner }).map_err(to_py)
    }

    #[getter]
    fn vertices(&self) -> Vec<(f64, f64, f64)> {
        self.inner.vertices.iter().map(|v| tuple(*v)).collect()
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces.clone()
    }

    fn euler_characteristic(&self) -> i64 {
        self.inner.euler_characteristic()
    }

    fn signed_volume(&self) -> f64 {
        self.inner.signed_volume()
    }

    fn is_watertight(&self) -> bool {
        let audit = self.inner.edge_audit();
        audit.is_watertight() && audit.is_consistently_oriented()
    }

    fn write_obj(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_obj(&path).map_err(to_py)
    }

    fn write_stl(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_stl(&path).map_err(to_py)
    }
}

#[pyfunction]
fn fractional_anisotropy(l1: f64, l2: f64, l3: f64) -> f64 {
    tensor::fractional_anisotropy(l1, l2, l3)
}

type Eigen = ([f64; 3], [(f64, f64, f64); 3]);

/// Eigenvalues (descending) and eigenvectors of `[dxx, dyy, dzz, dxy, dxz, dyz]`.
#[pyfunction]
fn eigendecompose(components: [f64; 6]) -> PyResult<Eigen> {
    let d = DiffusionTensor::new(components[0], components[1], components[2], components[3], components[4], components[5])
        .map_err(to_py)?;
    let es = tensor::eigendecompose(&d).map_err(to_py)?;
    Ok((es.values(), es.vectors().map(tuple)))
}

#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn generate_phantom(py: Python<'_>, config: &PyConfig, seed: Option<u64>) -> PyResult<(PyVolume, PyMask)> {
    let spec = config.inner.phantom_for_seed(seed);
    let (vol, mask) = py.detach(|| spec.generate()).map_err(to_py)?;
    Ok((PyVolume { inner: vol }, PyMask { inner: mask }))
}

#[pyfunction]
fn track(py: Python<'_>, config: &PyConfig, volume: &PyVolume) -> PyResult<PyTracking> {
    let out = py.detach(|| pipeline::track_volume(&config.inner, &volume.inner)).map_err(to_py)?;
    Ok(PyTracking { inner: out })
}

#[pyfunction]
fn segment_ray(py: Python<'_>, config: &PyConfig, tracking: &PyTracking, volume: &PyVolume) -> PyResult<PyBoundary> {
    let spacing = volume.inner.grid().spacing;
    py.detach(|| pipeline::segment_ray(&config.inner, &tracking.inner.grid, spacing))
        .map(|inner| PyBoundary { inner })
        .map_err(to_py)
}

#[pyfunction]
fn segment_graph(py: Python<'_>, config: &PyConfig, tracking: &PyTracking, volume: &PyVolume) -> PyResult<PyBoundary> {
    py.detach(|| {
        let fa_avg = fiberseg_core::graph_seg::bundle_mean_fa(&tracking.inner.fibers, &volume.inner)?;
        pipeline::segment_graph(&config.inner, &tracking.inner.grid, fa_avg, None)
    })
    .map(|inner| PyBoundary { inner })
    .map_err(to_py)
}

#[pyfunction]
fn build_mesh(boundary: &PyBoundary, tracking: &PyTracking) -> PyResult<PyMesh> {
    fiberseg_core::mesh::build_mesh(&boundary.inner, &tracking.inner.frames)
        .map(|inner| PyMesh { inner })
        .map_err(to_py)
}

#[pyfunction]
fn voxelize(boundary: &PyBoundary, tracking: &PyTracking, reference: &PyMask) -> PyResult<PyMask> {
    fiberseg_core::eval::voxelize(&boundary.inner, &tracking.inner.frames, reference.inner.grid())
        .map(|inner| PyMask { inner })
        .map_err(to_py)
}

/// Ground-truth mask restricted to the slab between the include regions.
#[pyfunction]
fn ground_truth(config: &PyConfig, mask: &PyMask) -> PyResult<PyMask> {
    let [a, b] = &config.inner.regions.include;
    cutout(&mask.inner, a, b).map(|inner| PyMask { inner }).map_err(to_py)
}

#[pyfunction]
fn dsc(a: &PyMask, b: &PyMask) -> PyResult<f64> {
    fiberseg_core::eval::dsc(&a.inner, &b.inner).map_err(to_py)
}

/// Summarizes `(config_id, method, dsc)` tuples; returns the report as a dict.
#[pyfunction]
fn aggregate<'py>(py: Python<'py>, records: Vec<(String, String, f64)>) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<EvalRecord> =
        records.into_iter().map(|(config_id, method, dsc)| EvalRecord { config_id, method, dsc }).collect();
    let report = fiberseg_core::eval::aggregate(&records).map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

/// Runs every stage into `out` and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None))]
fn run_pipeline<'py>(py: Python<'py>, config: &PyConfig, out: PathBuf, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| pipeline::run_pipeline(&config.inner, &out, seed)).map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

#[pymodule]
fn fiberseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyVolume>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyTracking>()?;
    m.add_class::<PyBoundary>()?;
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(fractional_anisotropy, m)?)?;
    m.add_function(wrap_pyfunction!(eigendecompose, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(segment_ray, m)?)?;
    m.add_function(wrap_pyfunction!(segment_graph, m)?)?;
    m.add_function(wrap_pyfunction!(build_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(voxelize, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(dsc, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
