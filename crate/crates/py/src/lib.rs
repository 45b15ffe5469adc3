//! Python bindings: simulator, images and SSIM, LSSVR surrogates, ABC
//! inference with a Python forward model, and trained VAE checkpoints.

use std::sync::Mutex;

use invabc::abc::{self, NpmcConfig, Prior, StopReason};
use invabc::forming_sim::{self, SimulatorConfig};
use invabc::imaging::{self, Hsv, RgbImage, SsimParams};
use invabc::lssvr::{self, KernelSpec, LssvrModel, LvLssvrModel};
use invabc::nn::checkpoint::Checkpoint;
use invabc::params::{ParameterSpace, ParameterSpec};
use invabc::vae::VaeModel;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn space_from(bounds: &[(f64, f64)]) -> PyResult<ParameterSpace> {
    let specs = bounds
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| ParameterSpec::uniform(format!("p{}", i + 1), lo, hi))
        .collect();
    ParameterSpace::new(specs).map_err(value_err)
}

fn simulator(grid: usize) -> SimulatorConfig {
    SimulatorConfig {
        grid,
        ..SimulatorConfig::default()
    }
}

/// Packed 8-bit RGB image, row-major.
#[pyclass(module = "invabc_py", frozen)]
#[derive(Clone)]
struct Image {
    inner: RgbImage,
}

#[pymethods]
impl Image {
    #[new]
    fn new(width: usize, height: usize, data: &[u8]) -> PyResult<Self> {
        let inner = RgbImage::new(width, height, data.to_vec()).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = imaging::load_png(path).map_err(runtime_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        imaging::save_png(&self.inner, path).map_err(runtime_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.as_bytes())
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<(u8, u8, u8)> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(value_err(format!("pixel ({x}, {y}) out of range")));
        }
        let [r, g, b] = self.inner.get(x, y);
        Ok((r, g, b))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Strain field of one simulation: `(eps1, eps2, thickness)`, each of
/// length `grid²`, row-major.
#[pyfunction]
#[pyo3(signature = (theta, bounds, grid = 32))]
fn simulate(theta: Vec<f64>, bounds: Vec<(f64, f64)>, grid: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let f = forming_sim::simulate(&theta, &space_from(&bounds)?, &simulator(grid)).map_err(value_err)?;
    Ok((f.eps1, f.eps2, f.thickness))
}

/// Zone image of one simulation, masked to the working region as the
/// pipeline does.
#[pyfunction]
#[pyo3(signature = (theta, bounds, side = 64, grid = 32))]
fn render(theta: Vec<f64>, bounds: Vec<(f64, f64)>, side: usize, grid: usize) -> PyResult<Image> {
    let cfg = simulator(grid);
    let field = forming_sim::simulate(&theta, &space_from(&bounds)?, &cfg).map_err(value_err)?;
    let labels = forming_sim::classify_elements(&field, &cfg.flc);
    let raw = forming_sim::render_fld_image(&labels, &cfg.colors, side, side, None);
    let punch = forming_sim::render_punch_image(&cfg, side, side);
    let mask = imaging::build_mask(&punch, Hsv::new(270.0, 0.5, 0.5));
    let inner = imaging::apply_mask(&raw, &mask.image).map_err(value_err)?;
    Ok(Image { inner })
}

#[pyfunction]
fn ssim(a: &Image, b: &Image) -> PyResult<f64> {
    imaging::ssim(&a.inner, &b.inner, &SsimParams::default()).map_err(value_err)
}

/// Single-output least-squares SVR with an RBF kernel.
#[pyclass(module = "invabc_py", frozen)]
struct Lssvr {
    inner: LssvrModel,
}

#[pymethods]
impl Lssvr {
    #[staticmethod]
    fn fit(anchors: Vec<Vec<f64>>, targets: Vec<f64>, gamma_reg: f64, bandwidth: f64) -> PyResult<Self> {
        let kernel = KernelSpec::rbf(bandwidth).map_err(value_err)?;
        let inner = lssvr::fit(&anchors, &targets, gamma_reg, &kernel).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn predict(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&theta).map_err(value_err)
    }

    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.inner.alphas.clone()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }
}

/// Multi-output surrogate as written by `invabc fit-surrogate`.
#[pyclass(module = "invabc_py", frozen)]
struct Surrogate {
    inner: LvLssvrModel,
}

#[pymethods]
impl Surrogate {
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        let inner = lssvr::load_bundle(std::path::Path::new(dir)).map_err(runtime_err)?;
        Ok(Self { inner })
    }

    fn predict(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict_multi(&theta).map_err(value_err)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }
}

/// Trained VAE loaded from a pipeline checkpoint.
#[pyclass(module = "invabc_py", frozen)]
struct Vae {
    inner: VaeModel,
}

#[pymethods]
impl Vae {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(runtime_err)?;
        let ckpt = Checkpoint::read_from(std::io::BufReader::new(file)).map_err(runtime_err)?;
        let inner = VaeModel::from_checkpoint(&ckpt).map_err(runtime_err)?;
        Ok(Self { inner })
    }

    /// Latent `(mean, log_var)` of one image.
    fn encode(&self, image: &Image) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = self.inner.encode(&image.inner.to_tensor()).map_err(value_err)?;
        Ok((s.mean, s.log_var))
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Image> {
        let t = self.inner.decode(&z).map_err(value_err)?;
        let inner = RgbImage::from_tensor(&t).map_err(runtime_err)?;
        Ok(Image { inner })
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn image_side(&self) -> usize {
        self.inner.arch.image_side
    }
}

/// Adaptive population Monte Carlo ABC under a uniform prior on `bounds`.
/// `forward` maps a parameter list to a summary list comparable with `zo`.
/// Returns a dict with `mean`, `std`, `ess`, `particles`, `weights`,
/// `epsilon_trace` and `stop`.
#[pyfunction]
#[pyo3(signature = (forward, zo, bounds, n_particles = 500, t_max = 20, quantile = 0.5, epsilon_stop = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn run_npmc<'py>(
    py: Python<'py>,
    forward: Py<PyAny>,
    zo: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    n_particles: usize,
    t_max: usize,
    quantile: f64,
    epsilon_stop: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let prior = Prior::uniform(&bounds);
    let cfg = NpmcConfig {
        n_particles,
        t_max,
        quantile,
        epsilon_stop,
        pilot_size: n_particles,
        seed,
        ..NpmcConfig::default()
    };
    let failure: Mutex<Option<PyErr>> = Mutex::new(None);
    let m = zo.len();
    let call = |theta: &[f64]| -> Vec<f64> {
        Python::attach(|py| {
            match forward.call1(py, (theta.to_vec(),)).and_then(|r| r.extract::<Vec<f64>>(py)) {
                Ok(z) => z,
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    vec![f64::NAN; m]
                }
            }
        })
    };
    let run = py.detach(|| abc::run_npmc(&prior, &call, &zo, &cfg));
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let run = run.map_err(runtime_err)?;
    let out = PyDict::new(py);
    out.set_item("mean", &run.summary.mean)?;
    out.set_item("std", &run.summary.std)?;
    out.set_item("ess", run.summary.ess)?;
    let last = run.final_pool();
    let thetas: Vec<Vec<f64>> = last.particles.iter().map(|p| p.theta.clone()).collect();
    let weights: Vec<f64> = last.particles.iter().map(|p| p.weight).collect();
    out.set_item("particles", thetas)?;
    out.set_item("weights", weights)?;
    out.set_item("epsilon_trace", &run.epsilon_trace)?;
    let stop = match run.stop {
        StopReason::MaxGenerations => "max_generations",
        StopReason::ToleranceReached => "tolerance_reached",
        StopReason::Stalled => "stalled",
    };
    out.set_item("stop", stop)?;
    Ok(out)
}

#[pymodule]
fn invabc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    invabc::init_worker_pool().map_err(value_err)?;
    m.add_class::<Image>()?;
    m.add_class::<Lssvr>()?;
    m.add_class::<Surrogate>()?;
    m.add_class::<Vae>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(run_npmc, m)?)?;
    Ok(())
}
