//! Python bindings: the unit codec, metrics, corpus generation, synthesis
//! and the config-driven pipeline stages.
//!
//! Structured results (summaries, reports) are returned as JSON strings.

use std::path::PathBuf;

use emoconv::config::PipelineConfig;
use emoconv::corpus::{generate_corpus as gen, CorpusConfig, ProsodyTrack};
use emoconv::dsp::{self, PitchConfig, TimbreTable, Waveform};
use emoconv::metrics;
use emoconv::pipeline::{self, EvalOptions, Layout, Stage, TrainOptions};
use emoconv::units::{self, DedupedUnits, Durations, UnitSequence};
use emoconv::Emotion;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn pipeline_err(e: pipeline::PipelineError) -> PyErr {
    if e.is_validation() {
        value_err(e)
    } else {
        runtime_err(e)
    }
}

fn emotion(label: &str) -> PyResult<Emotion> {
    label.parse().map_err(value_err)
}

fn to_json(v: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(v).map_err(runtime_err)
}

/// Collapses adjacent repeats: returns (units, durations).
#[pyfunction]
fn dedup(units: Vec<u32>) -> (Vec<u32>, Vec<u32>) {
    let (u, d) = units::dedup(&UnitSequence::new(units));
    (u.into_inner(), d.into_inner())
}

/// Expands deduped units back to frame rate.
#[pyfunction]
fn inflate(units: Vec<u32>, durations: Vec<u32>) -> PyResult<Vec<u32>> {
    let u = DedupedUnits::new(units).map_err(value_err)?;
    let d = Durations::new(durations).map_err(value_err)?;
    Ok(units::inflate(&u, &d).map_err(value_err)?.into_inner())
}

#[pyfunction]
fn uer(reference: Vec<u32>, hypothesis: Vec<u32>) -> PyResult<f64> {
    metrics::uer(&reference, &hypothesis).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (references, hypothesis, max_n=4))]
fn bleu(references: Vec<Vec<u32>>, hypothesis: Vec<u32>, max_n: usize) -> PyResult<f64> {
    let refs: Vec<&[u32]> = references.iter().map(|r| r.as_slice()).collect();
    metrics::bleu(&refs, &hypothesis, max_n).map_err(value_err)
}

/// LCS-based share of source content kept, ignoring ids in `[reserved_lo, reserved_hi)`.
#[pyfunction]
fn content_recovery(source: Vec<u32>, hypothesis: Vec<u32>, reserved_lo: u32, reserved_hi: u32) -> PyResult<f64> {
    metrics::content_recovery(&source, &hypothesis, &(reserved_lo..reserved_hi)).map_err(value_err)
}

/// Synthetic corpus as a JSON list of utterances. `config` is a TOML
/// `[corpus]` table body; empty means the defaults.
#[pyfunction]
#[pyo3(signature = (seed, config=""))]
fn generate_corpus(seed: u64, config: &str) -> PyResult<String> {
    let cfg: CorpusConfig = toml::from_str(config).map_err(value_err)?;
    to_json(&gen(&cfg, seed).map_err(value_err)?)
}

/// Renders frame-rate units and F0 (0 = unvoiced) to 16 kHz samples.
#[pyfunction]
#[pyo3(signature = (units, f0, speaker=0, emotion="neutral", timbre_seed=0, speakers=2))]
fn synthesize(
    units: Vec<u32>,
    f0: Vec<f64>,
    speaker: usize,
    emotion: &str,
    timbre_seed: u64,
    speakers: usize,
) -> PyResult<Vec<f32>> {
    let vocab = units.iter().max().map_or(1, |&m| m as usize + 1);
    let timbre = TimbreTable::generate(speakers, vocab.max(64), timbre_seed);
    let track = ProsodyTrack::new(f0).map_err(value_err)?;
    let e = self::emotion(emotion)?;
    Ok(dsp::synthesize(&UnitSequence::new(units), &track, speaker, e, &timbre).map_err(value_err)?.samples)
}

/// One F0 value per 320-sample frame; 0 for unvoiced frames.
#[pyfunction]
fn extract_f0(samples: Vec<f32>) -> PyResult<Vec<f64>> {
    let wav = Waveform::new(samples).map_err(value_err)?;
    Ok(dsp::extract_f0(&wav, &PitchConfig::default()).map_err(value_err)?.values().to_vec())
}

/// Gradient checks of every layer and model: list of (name, max relative error, passed).
#[pyfunction]
#[pyo3(signature = (seed=1))]
fn grad_check(seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let entries = emoconv::verify::grad_check_suite(seed).map_err(runtime_err)?;
    Ok(entries.into_iter().map(|e| (e.name.clone(), e.max_rel_error, e.passed())).collect())
}

/// A pipeline configuration bound to a working directory.
#[pyclass]
struct Pipeline {
    cfg: PipelineConfig,
    layout: Layout,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (config, out, seed=None))]
    fn new(config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = PipelineConfig::load(&config).map_err(value_err)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(value_err)?;
        Ok(Pipeline { cfg, layout: Layout::new(out) })
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.cfg.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn gen_corpus(&self) -> PyResult<String> {
        to_json(&pipeline::gen_corpus(&self.cfg, &self.layout).map_err(pipeline_err)?)
    }

    #[pyo3(signature = (stage="all", pretrain=false, force=false))]
    fn train(&self, stage: &str, pretrain: bool, force: bool) -> PyResult<String> {
        let stage: Stage = stage.parse().map_err(pipeline_err)?;
        let reports =
            pipeline::train(&self.cfg, &self.layout, stage, TrainOptions { pretrain, force }).map_err(pipeline_err)?;
        to_json(&reports)
    }

    /// Converts a manifest split ("train", "valid", "test") or a manifest path.
    #[pyo3(signature = (input, emotion, dest=None, force=false))]
    fn convert(&self, input: &str, emotion: &str, dest: Option<PathBuf>, force: bool) -> PyResult<String> {
        let e = self::emotion(emotion)?;
        let input = match input {
            "train" | "valid" | "test" => self.layout.manifest(input),
            p => PathBuf::from(p),
        };
        let dest = dest.unwrap_or_else(|| self.layout.converted_dir(e));
        to_json(&pipeline::convert(&self.cfg, &self.layout, &input, e, &dest, force).map_err(pipeline_err)?)
    }

    #[pyo3(signature = (converted, dest, force=false))]
    fn synth(&self, converted: PathBuf, dest: PathBuf, force: bool) -> PyResult<String> {
        to_json(&pipeline::synth(&self.cfg, &converted, &dest, force).map_err(pipeline_err)?)
    }

    #[pyo3(signature = (force=false, f0_grid=false))]
    fn evaluate(&self, force: bool, f0_grid: bool) -> PyResult<String> {
        let report = pipeline::evaluate(&self.cfg, &self.layout, EvalOptions { force, f0_grid }).map_err(pipeline_err)?;
        report.to_json().map_err(runtime_err)
    }
}

#[pymodule]
fn emoconv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dedup, m)?)?;
    m.add_function(wrap_pyfunction!(inflate, m)?)?;
    m.add_function(wrap_pyfunction!(uer, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(content_recovery, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(extract_f0, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_class::<Pipeline>()?;
    m.add("EMOTIONS", Emotion::ALL.iter().map(|e| e.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
