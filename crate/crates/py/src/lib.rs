//! Python bindings: signals cross as lists of `complex`, structured results
//! as the same JSON documents the command-line tool writes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use nearfield::bench::{BenchContext, CSV_HEADER};
use nearfield::channel::{model_steering, received_signal, CartesianPoint, Scene};
use nearfield::codebook::{build_codebook, Domain};
use nearfield::cost::OperationCount;
use nearfield::detect::net::{forward as net_forward, image_tensor, NetArch};
use nearfield::detect::weights::{Tensor, WeightBundle};
use nearfield::detect::detect_classical;
use nearfield::imaging::ChannelImage;
use nearfield::io::{read_cvec, write_cvec, CoarseFile, DetectionFile, EstimateFile, RefineJob, RefineMode, SceneFile};
use nearfield::metrics;
use nearfield::profile::Profile;
use nearfield::refiner::{flexible_refine, refine_all, select_from_pool, SearchSpace};
use nearfield::scenegen::{sample_scene, MANIFEST_SCHEMA};
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn py_err(e: nearfield::Error) -> PyErr {
    match e {
        nearfield::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_domain(s: &str) -> PyResult<Domain> {
    s.parse().map_err(py_err)
}

fn profile(name: &str) -> PyResult<Profile> {
    Profile::by_name(name).map_err(py_err)
}

/// Draws scene `index` of stream `seed`; returns `(scene_json, signal)`.
pub fn simulate_scene(p: &Profile, flexible: bool, seed: u64, index: u64, snr_db: Option<f64>, noiseless: bool) -> nearfield::Result<(String, Vec<Complex64>)> {
    let mut cfg = p.scene_gen(p.path_count(flexible), seed);
    if let Some(s) = snr_db {
        cfg.snr_range_db = [s, s];
    }
    let mut sampled = sample_scene(&cfg, &p.array, index)?;
    if noiseless {
        sampled.scene = Scene::noiseless(sampled.scene.paths);
    }
    let y = received_signal(&p.array, &sampled.scene, sampled.noise_seed)?;
    let text = serde_json::to_string(&SceneFile::from_scene(&sampled.scene, sampled.noise_seed))?;
    Ok((text, y))
}

/// Refines a coarse or detection document against `y` under a refine job.
pub fn refine_json(coarse: &str, y: &[Complex64], job: &str) -> nearfield::Result<String> {
    let coarse: CoarseFile = serde_json::from_str(coarse)?;
    let job: RefineJob = serde_json::from_str(job)?;
    let (p, rc) = job.resolve(coarse.domain)?;
    let space = SearchSpace::new(p.array, coarse.domain, &p.region);
    let est = match job.mode {
        RefineMode::Fixed => refine_all(&space, &coarse.positions, y, &rc)?,
        RefineMode::Flexible => {
            let cb = build_codebook(&p.array, &p.region, coarse.domain)?;
            flexible_refine(&space, &coarse.positions, y, &cb, &rc)?
        }
        RefineMode::Select => select_from_pool(&space, &coarse.positions, job.paths.unwrap_or(p.s_fixed), y, &rc)?,
    };
    Ok(serde_json::to_string(&EstimateFile::from_set(&est, 0.0))?)
}

/// Steering vector of a Cartesian point `(z, x)` for a profile's array.
#[pyfunction]
#[pyo3(signature = (z, x, profile_name = "desk"))]
fn steering(z: f64, x: f64, profile_name: &str) -> PyResult<Vec<Complex64>> {
    model_steering(&profile(profile_name)?.array, CartesianPoint::new(z, x)).map_err(py_err)
}

/// Random scene and its received signal: `(scene_json, signal)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, index = 0, snr_db = None, noiseless = false, flexible = false, profile_name = "desk"))]
fn simulate(seed: u64, index: u64, snr_db: Option<f64>, noiseless: bool, flexible: bool, profile_name: &str) -> PyResult<(String, Vec<Complex64>)> {
    simulate_scene(&profile(profile_name)?, flexible, seed, index, snr_db, noiseless).map_err(py_err)
}

/// Noiseless channel of a scene document.
#[pyfunction]
#[pyo3(signature = (scene_json, profile_name = "desk"))]
fn synthesize(scene_json: &str, profile_name: &str) -> PyResult<Vec<Complex64>> {
    let p = profile(profile_name)?;
    let scene = serde_json::from_str::<SceneFile>(scene_json).map_err(json_err)?.to_scene(&p.array).map_err(py_err)?;
    nearfield::channel::synthesize_channel(&p.array, &scene).map_err(py_err)
}

/// Channel image of a signal as `(pgm_bytes, i_h, i_w)`.
#[pyfunction]
#[pyo3(signature = (signal, domain = "cart", profile_name = "desk"))]
fn channel_image<'py>(py: Python<'py>, signal: Vec<Complex64>, domain: &str, profile_name: &str) -> PyResult<(Bound<'py, PyBytes>, usize, usize)> {
    let ctx = BenchContext::new(profile(profile_name)?, parse_domain(domain)?).map_err(py_err)?;
    let img = ctx.image(&signal, &mut OperationCount::default()).map_err(py_err)?;
    let mut pgm = Vec::new();
    img.write_pgm(&mut pgm).map_err(py_err)?;
    Ok((PyBytes::new(py, &pgm), img.i_h, img.i_w))
}

/// Classical peak detection on PGM bytes; returns the detection JSON.
#[pyfunction]
#[pyo3(signature = (pgm, count = 3))]
fn detect(pgm: &[u8], count: usize) -> PyResult<String> {
    let img = ChannelImage::read_pgm(pgm).map_err(py_err)?;
    let det = DetectionFile::new(detect_classical(&img, count), &img, true).map_err(py_err)?;
    serde_json::to_string(&det).map_err(json_err)
}

/// Refinement; `coarse_json` may be a detection document. Returns estimate JSON.
#[pyfunction]
fn refine(coarse_json: &str, signal: Vec<Complex64>, job_json: &str) -> PyResult<String> {
    refine_json(coarse_json, &signal, job_json).map_err(py_err)
}

/// Exhaustive NNOMP baseline; returns estimate JSON.
#[pyfunction]
#[pyo3(signature = (signal, noise_var, domain = "cart", profile_name = "desk"))]
fn nnomp(signal: Vec<Complex64>, noise_var: f64, domain: &str, profile_name: &str) -> PyResult<String> {
    let ctx = BenchContext::new(profile(profile_name)?, parse_domain(domain)?).map_err(py_err)?;
    let nc = ctx.nnomp_config(noise_var).map_err(py_err)?;
    let est = nearfield::baseline::nnomp(&ctx.space, &signal, &ctx.nnomp_codebook, &nc).map_err(py_err)?;
    serde_json::to_string(&EstimateFile::from_set(&est, 0.0)).map_err(json_err)
}

#[pyfunction]
fn nmse_db(h_hat: Vec<Complex64>, h: Vec<Complex64>) -> PyResult<f64> {
    metrics::nmse_db(&h_hat, &h).map_err(py_err)
}

/// Gated L1 error in wavelengths; `None` when nothing matched.
#[pyfunction]
#[pyo3(signature = (est, truth, profile_name = "desk"))]
fn l1_distance(est: Vec<(f64, f64)>, truth: Vec<(f64, f64)>, profile_name: &str) -> PyResult<Option<f64>> {
    let pts = |v: Vec<(f64, f64)>| v.into_iter().map(|(z, x)| CartesianPoint::new(z, x)).collect::<Vec<_>>();
    let m = metrics::l1_distance(&pts(est), &pts(truth), profile(profile_name)?.wavelength(), metrics::MATCH_GATE_LAMBDA).map_err(py_err)?;
    Ok(m.l1_lambda)
}

#[pyfunction]
fn wing_loss(x: f64, w: f64, eps: f64) -> f64 {
    metrics::wing_loss(x, w, eps)
}

#[pyfunction]
fn read_signal(path: &str) -> PyResult<Vec<Complex64>> {
    read_cvec(BufReader::new(File::open(path)?)).map_err(py_err)
}

#[pyfunction]
fn write_signal(path: &str, signal: Vec<Complex64>) -> PyResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cvec(&mut w, &signal).map_err(py_err)?;
    w.flush()?;
    Ok(())
}

/// CKW1 bundle as `{name: (dims, values)}`.
#[pyfunction]
fn read_weights(path: &str) -> PyResult<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
    let b = WeightBundle::read_ckw(BufReader::new(File::open(path)?)).map_err(py_err)?;
    Ok(b.tensors.into_iter().map(|(k, t)| (k, (t.dims, t.data))).collect())
}

#[pyfunction]
fn write_weights(path: &str, tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> PyResult<()> {
    let mut b = WeightBundle::default();
    for (name, (dims, data)) in tensors {
        b.insert(name, Tensor::new(dims, data).map_err(py_err)?);
    }
    let mut w = BufWriter::new(File::create(path)?);
    b.write_ckw(&mut w).map_err(py_err)?;
    w.flush()?;
    Ok(())
}

/// Raw network outputs for a PGM image, for parity checks against a trainer.
#[pyfunction]
fn forward(arch_json: &str, weights_path: &str, pgm: &[u8]) -> PyResult<Vec<f32>> {
    let arch = NetArch::from_json(arch_json).map_err(py_err)?;
    let w = WeightBundle::read_ckw(BufReader::new(File::open(weights_path)?)).map_err(py_err)?;
    let img = ChannelImage::read_pgm(pgm).map_err(py_err)?;
    net_forward(&arch, &w, &image_tensor(&img)).map_err(py_err)
}

/// Parameter slots `[(name, dims)]` of an architecture document.
#[pyfunction]
fn param_slots(arch_json: &str) -> PyResult<Vec<(String, Vec<usize>)>> {
    NetArch::from_json(arch_json).and_then(|a| a.param_slots()).map_err(py_err)
}

#[pymodule]
fn nearfield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CSV_HEADER", CSV_HEADER)?;
    m.add("MANIFEST_SCHEMA", MANIFEST_SCHEMA)?;
    m.add_function(wrap_pyfunction!(steering, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(channel_image, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(nnomp, m)?)?;
    m.add_function(wrap_pyfunction!(nmse_db, m)?)?;
    m.add_function(wrap_pyfunction!(l1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(wing_loss, m)?)?;
    m.add_function(wrap_pyfunction!(read_signal, m)?)?;
    m.add_function(wrap_pyfunction!(write_signal, m)?)?;
    m.add_function(wrap_pyfunction!(read_weights, m)?)?;
    m.add_function(wrap_pyfunction!(write_weights, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(param_slots, m)?)?;
    Ok(())
}
