//! Python bindings: the metric toolkit, CTC primitives, and a streaming
//! recognizer driving trained checkpoints, exposed as `scoutrn_py`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use scoutrn::ctc::{ctc_prefix_step, initial_prefix_set, CtcPosterior};
use scoutrn::data::load_model;
use scoutrn::decoding::{
    decode_offline, decode_with_segmentation, scout_then_decode, DecodeConfig,
};
use scoutrn::encoder::{RnConfig, RnModel};
use scoutrn::lm::UniformLm;
use scoutrn::metrics;
use scoutrn::numerics::{BoolMat, Tensor};
use scoutrn::scout::{self, BoundaryProbs, ScoutConfig, ScoutModel, WordSpan};
use scoutrn::transformer::{subsampled_len, Segmentation};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor_from_rows(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what}: empty matrix")));
    }
    Tensor::from_rows(&rows).map_err(err)
}

/// Numerically stable masked row softmax; masked entries come back as 0.
#[pyfunction]
fn masked_softmax(scores: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> PyResult<Vec<Vec<f64>>> {
    let t = tensor_from_rows(scores, "scores")?;
    let flat: Vec<bool> = mask.iter().flatten().copied().collect();
    let m = BoolMat::new(mask.len(), mask.first().map_or(0, Vec::len), flat).map_err(err)?;
    let out = scoutrn::numerics::masked_softmax(&t, &m).map_err(err)?;
    Ok((0..out.rows()).map(|r| out.row(r).to_vec()).collect())
}

/// Edit-distance decomposition of predicted vs reference boundary positions.
#[pyfunction]
fn boundary_edit_distance(
    py: Python<'_>,
    predicted: Vec<usize>,
    reference: Vec<usize>,
) -> PyResult<Py<PyDict>> {
    let eval = metrics::boundary_edit_distance(&predicted, &reference).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("substitutions", eval.substitutions)?;
    d.set_item("deletions", eval.deletions)?;
    d.set_item("insertions", eval.insertions)?;
    d.set_item("sub_rate", eval.sub_rate)?;
    d.set_item("del_rate", eval.del_rate)?;
    d.set_item("ins_rate", eval.ins_rate)?;
    Ok(d.into())
}

/// Per-reference-word latencies in ms plus the mean; insertion slots are
/// returned separately as None-latency markers.
#[pyfunction]
fn word_latency_ms(
    py: Python<'_>,
    predicted: Vec<usize>,
    reference: Vec<usize>,
) -> PyResult<Py<PyDict>> {
    let eval = metrics::boundary_edit_distance(&predicted, &reference).map_err(err)?;
    let report = metrics::word_latency(&predicted, &reference, &eval).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("per_word_ms", report.per_word_ms.clone())?;
    d.set_item("mean_ms", report.mean_ms)?;
    let entries: Vec<(Option<usize>, Option<usize>, Option<f64>)> = report
        .entries
        .iter()
        .map(|e| (e.reference, e.predicted, e.latency_ms))
        .collect();
    d.set_item("entries", entries)?;
    Ok(d.into())
}

/// Frame-level look-ahead latencies for a segmentation ending at T'.
#[pyfunction]
fn frame_latency_ms(py: Python<'_>, boundaries: Vec<usize>) -> PyResult<Py<PyDict>> {
    let seg = Segmentation::new(boundaries).map_err(err)?;
    let report = metrics::frame_latency(&seg);
    let d = PyDict::new(py);
    d.set_item("per_frame_ms", report.per_frame_ms.clone())?;
    d.set_item("mean_ms", report.mean_ms)?;
    Ok(d.into())
}

/// Word error rate between token lists.
#[pyfunction]
fn word_error_rate(
    py: Python<'_>,
    hypothesis: Vec<String>,
    reference: Vec<String>,
) -> PyResult<Py<PyDict>> {
    let report = metrics::word_error_rate(&hypothesis, &reference);
    let d = PyDict::new(py);
    d.set_item("wer", report.wer)?;
    d.set_item("substitutions", report.substitutions)?;
    d.set_item("deletions", report.deletions)?;
    d.set_item("insertions", report.insertions)?;
    d.set_item("reference_count", report.reference_count)?;
    Ok(d.into())
}

/// Boundary decision: frames with p >= sigma, plus a forced final boundary.
#[pyfunction]
fn threshold_decide(probs: Vec<f64>, sigma: f64) -> PyResult<Vec<usize>> {
    let p = BoundaryProbs::new(probs).map_err(err)?;
    Ok(scout::threshold_decide(&p, sigma).map_err(err)?.ends().to_vec())
}

/// 0/1 boundary labels from word spans `(word, start_ms, end_ms)`.
#[pyfunction]
fn labels_from_alignment(spans: Vec<(String, u64, u64)>, t_prime: usize) -> PyResult<Vec<bool>> {
    let spans: Vec<WordSpan> = spans
        .into_iter()
        .map(|(word, start_ms, end_ms)| WordSpan { word, start_ms, end_ms })
        .collect();
    let labels = scout::labels_from_alignment(&spans, 4, t_prime).map_err(err)?;
    Ok(labels.values().to_vec())
}

fn posterior(log_probs: Vec<Vec<f64>>) -> PyResult<CtcPosterior> {
    CtcPosterior::new(tensor_from_rows(log_probs, "log posterior")?).map_err(err)
}

/// CTC sequence log-likelihood (blank is the last posterior column).
#[pyfunction]
fn ctc_forward_logprob(log_probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    scoutrn::ctc::ctc_forward_logprob(&posterior(log_probs)?, &labels).map_err(err)
}

/// 1-based trigger frame of each label on the best Viterbi path.
#[pyfunction]
fn ctc_viterbi_align(log_probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<usize>> {
    scoutrn::ctc::ctc_viterbi_align(&posterior(log_probs)?, &labels).map_err(err)
}

/// Plain CTC prefix beam search over a log posterior; returns the top
/// `beam` prefixes with their total log-probabilities, best first.
#[pyfunction]
#[pyo3(signature = (log_probs, beam = 10, sigma0 = 0.0))]
fn ctc_prefix_decode(
    log_probs: Vec<Vec<f64>>,
    beam: usize,
    sigma0: f64,
) -> PyResult<Vec<(Vec<usize>, f64)>> {
    let post = posterior(log_probs)?;
    let mut hyps = initial_prefix_set();
    for t in 0..post.frames() {
        hyps = ctc_prefix_step(&hyps, sigma0, post.row(t));
        let mut scored: Vec<(Vec<usize>, f64)> =
            hyps.iter().map(|(p, s)| (p.clone(), s.total())).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(beam);
        let keep: Vec<Vec<usize>> = scored.into_iter().map(|(p, _)| p).collect();
        hyps.retain(|p, _| keep.contains(p));
    }
    let mut out: Vec<(Vec<usize>, f64)> =
        hyps.into_iter().map(|(p, s)| (p, s.total())).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Trained scout + recognition network pair decoding feature matrices.
#[pyclass]
struct StreamingRecognizer {
    scout: Option<ScoutModel>,
    rn: RnModel,
}

#[pymethods]
impl StreamingRecognizer {
    /// Load checkpoints written by the `scoutrn` CLI. The scout path may be
    /// None for offline / golden-boundary decoding only.
    #[new]
    #[pyo3(signature = (rn_path, scout_path = None))]
    fn new(rn_path: PathBuf, scout_path: Option<PathBuf>) -> PyResult<Self> {
        let (params, config) = load_model(&rn_path, "rn").map_err(err)?;
        let cfg: RnConfig = serde_json::from_value(config).map_err(err)?;
        let rn = RnModel { cfg, params };
        let scout = match scout_path {
            Some(path) => {
                let (params, config) = load_model(&path, "scout").map_err(err)?;
                let cfg: ScoutConfig = serde_json::from_value(config).map_err(err)?;
                Some(ScoutModel { cfg, params })
            }
            None => None,
        };
        Ok(StreamingRecognizer { scout, rn })
    }

    /// Per-frame boundary probabilities from the scout.
    fn scout_probs(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let scout = self
            .scout
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("no scout model loaded"))?;
        let x = tensor_from_rows(features, "features")?;
        Ok(scout.forward(&x).map_err(err)?.values().to_vec())
    }

    /// Scout-then-decode over one utterance. `boundaries` overrides the
    /// scout with a fixed segmentation; with neither scout nor boundaries
    /// the decode is offline (one segment).
    #[pyo3(signature = (features, sigma = 0.9, beam = 10, sigma0 = 0.0005, lambda = 0.5, alpha = 0.5, beta = 2.0, boundaries = None))]
    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        py: Python<'_>,
        features: Vec<Vec<f64>>,
        sigma: f64,
        beam: usize,
        sigma0: f64,
        lambda: f64,
        alpha: f64,
        beta: f64,
        boundaries: Option<Vec<usize>>,
    ) -> PyResult<Py<PyDict>> {
        let x = tensor_from_rows(features, "features")?;
        let config = DecodeConfig {
            beam,
            sigma,
            sigma0,
            lambda,
            lm_weight: alpha,
            length_bonus: beta,
            ..DecodeConfig::default()
        };
        let lm = UniformLm;
        let outcome = match (&boundaries, &self.scout) {
            (Some(ends), _) => {
                let t_prime = subsampled_len(x.rows());
                let seg = Segmentation::new(ends.clone())
                    .and_then(|s| s.with_final(t_prime))
                    .map_err(err)?;
                decode_with_segmentation(&x, &self.rn, &lm, &seg, &config).map_err(err)?
            }
            (None, Some(scout)) => {
                scout_then_decode(&x, scout, &self.rn, &lm, &config).map_err(err)?
            }
            (None, None) => decode_offline(&x, &self.rn, &lm, &config).map_err(err)?,
        };
        let d = PyDict::new(py);
        d.set_item("tokens", outcome.tokens)?;
        d.set_item("joint_score", outcome.joint_score)?;
        d.set_item("segmentation", outcome.segmentation)?;
        d.set_item("empty_beam_events", outcome.empty_beam_events)?;
        Ok(d.into())
    }
}

#[pymodule]
fn scoutrn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(masked_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(word_latency_ms, m)?)?;
    m.add_function(wrap_pyfunction!(frame_latency_ms, m)?)?;
    m.add_function(wrap_pyfunction!(word_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_decide, m)?)?;
    m.add_function(wrap_pyfunction!(labels_from_alignment, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_forward_logprob, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_viterbi_align, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_prefix_decode, m)?)?;
    m.add_class::<StreamingRecognizer>()?;
    Ok(())
}
