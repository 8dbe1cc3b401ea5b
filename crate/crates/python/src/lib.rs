//! Python bindings: kernels, evaluation and the staged pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use tsgraph::config::PipelineConfig;
use tsgraph::dtw::{self, DtwParams};
use tsgraph::eval;
use tsgraph::motif;
use tsgraph::pipeline::{write_synthetic, Pipeline, Stage};
use tsgraph::series::LabelSeries;
use tsgraph::spot::SpotThreshold;
use tsgraph::synth::{generate, SynthConfig};
use tsgraph::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(format!("{}: {other}", other.kind())),
    }
}

/// Matrix profile of `x` for subsequence length `window`: (profile, index).
#[pyfunction]
pub fn matrix_profile(x: Vec<f64>, window: usize) -> PyResult<(Vec<f64>, Vec<Option<usize>>)> {
    let mp = motif::matrix_profile(&x, window).map_err(to_py)?;
    Ok((mp.profile, mp.index))
}

/// DTW distance with absolute cost and an optional Sakoe-Chiba radius.
#[pyfunction]
#[pyo3(signature = (a, b, band=None))]
pub fn dtw_distance(a: Vec<f64>, b: Vec<f64>, band: Option<usize>) -> PyResult<f64> {
    let params = DtwParams {
        band_radius: band,
        ..DtwParams::unbanded()
    };
    dtw::dtw_distance(&a, &b, &params).map_err(to_py)
}

/// Extreme-value threshold at risk level `q`.
#[pyfunction]
pub fn spot_threshold(samples: Vec<f64>, q: f64) -> PyResult<f64> {
    Ok(SpotThreshold::fit(&samples, q).map_err(to_py)?.level)
}

/// Point-adjusted best F1: (precision, recall, f1, threshold).
#[pyfunction]
pub fn best_f1(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<(f64, f64, f64, f64)> {
    let labels = LabelSeries::new(labels).map_err(to_py)?;
    let r = eval::best_f1(&scores, &labels).map_err(to_py)?;
    Ok((r.precision, r.recall, r.f1, r.threshold))
}

/// Writes a synthetic dataset and config into `out_dir`; returns the config path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=7))]
pub fn make_synthetic(out_dir: PathBuf, seed: u64) -> PyResult<String> {
    let data = generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .map_err(to_py)?;
    let path = write_synthetic(&data, &out_dir, 0).map_err(to_py)?;
    Ok(path.display().to_string())
}

/// Runs `stage` of the pipeline; returns a JSON summary, including metrics
/// when the stage is `eval`.
#[pyfunction]
#[pyo3(signature = (config, out_dir, stage="eval", build_deps=true))]
pub fn run_pipeline(
    config: PathBuf,
    out_dir: PathBuf,
    stage: &str,
    build_deps: bool,
) -> PyResult<String> {
    let stage: Stage = stage.parse().map_err(to_py)?;
    let cfg = PipelineConfig::load(&config).map_err(to_py)?;
    let mut pipeline = Pipeline::open(cfg, out_dir, build_deps).map_err(to_py)?;
    let log = pipeline.run(stage).map_err(to_py)?;
    let stages: Vec<serde_json::Value> = log
        .iter()
        .map(|(s, status)| serde_json::json!({"stage": s.name(), "status": status}))
        .collect();
    let mut out = serde_json::json!({ "stages": stages });
    if stage == Stage::Eval {
        let r = pipeline.report().map_err(to_py)?.report;
        out["metrics"] = serde_json::json!({
            "precision": r.precision,
            "recall": r.recall,
            "f1": r.f1,
            "threshold": r.threshold,
        });
    }
    Ok(out.to_string())
}

#[pymodule]
fn tsgraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(matrix_profile, m)?)?;
    m.add_function(wrap_pyfunction!(dtw_distance, m)?)?;
    m.add_function(wrap_pyfunction!(spot_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(best_f1, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
