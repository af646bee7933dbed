//! Causal word-boundary detector: CNN frontend, causal self-attention
//! layers, and a linear + sigmoid head emitting per-frame boundary
//! probabilities. No look-ahead beyond the frontend's 30 ms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::IncrementalStack;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamVars, Params, Tensor, Var};
use crate::transformer::{
    causal_mask, encoder_stack, init_encoder_stack, init_frontend, positional_encoding, subsample,
    subsampled_len, Segmentation, StackConfig, SUBSAMPLE_RATE,
};

/// Per-frame boundary probabilities, length T'.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProbs {
    values: Vec<f64>,
}

impl BoundaryProbs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("boundary probs must lie in [0, 1]"));
        }
        Ok(BoundaryProbs { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ground-truth 0/1 boundary labels, length T'.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryLabels {
    values: Vec<bool>,
}

impl BoundaryLabels {
    pub fn new(values: Vec<bool>) -> Self {
        BoundaryLabels { values }
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Boundary positions (1-based) with a forced final boundary at T'.
    pub fn to_segmentation(&self) -> Result<Segmentation> {
        let ends: Vec<usize> = self
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i + 1))
            .collect();
        let t_prime = self.values.len();
        if ends.is_empty() {
            return Segmentation::single(t_prime);
        }
        Segmentation::new(ends)?.with_final(t_prime)
    }
}

/// One word of a forced alignment, in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub word: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// Scout network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoutConfig {
    pub feat_dim: usize,
    pub stack: StackConfig,
}

pub const SCOUT_PREFIX: &str = "scout";

/// Scout network: frontend + causal layers + boundary projection, parameters
/// under the `scout.` prefix.
#[derive(Debug, Clone)]
pub struct ScoutModel {
    pub cfg: ScoutConfig,
    pub params: Params,
}

impl ScoutModel {
    pub fn init(cfg: ScoutConfig, seed: u64) -> Result<Self> {
        cfg.stack.validate()?;
        if cfg.feat_dim == 0 {
            return Err(Error::invalid("scout config: feat_dim must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        init_frontend(&mut params, "scout.frontend", cfg.feat_dim, cfg.stack.d, &mut rng);
        init_encoder_stack(&mut params, SCOUT_PREFIX, &cfg.stack, &mut rng);
        let scale = (6.0 / (cfg.stack.d + 1) as f64).sqrt();
        params.insert("scout.head.w", Tensor::randomize(cfg.stack.d, 1, scale, &mut rng));
        Ok(ScoutModel { cfg, params })
    }

    /// Batch forward pass over a whole utterance.
    pub fn forward(&self, x: &Tensor) -> Result<BoundaryProbs> {
        if x.cols() != self.cfg.feat_dim {
            return Err(Error::shape(format!(
                "scout: feature dim {} != {}",
                x.cols(),
                self.cfg.feat_dim
            )));
        }
        let mut g = Graph::new();
        let vars = g.register_params(&self.params);
        let xv = g.leaf(x.clone());
        let probs = scout_probs_graph(&mut g, &vars, xv, &self.cfg)?;
        BoundaryProbs::new(g.value(probs).data().to_vec())
    }

    pub fn stream(&self) -> ScoutStream {
        ScoutStream {
            inner: IncrementalStack::new(self.cfg.stack.layers),
            emitted: 0,
        }
    }
}

/// Graph-level boundary logits `[T' x 1]`.
pub fn scout_logits_graph(
    g: &mut Graph,
    vars: &ParamVars,
    x: Var,
    cfg: &ScoutConfig,
) -> Result<Var> {
    let h = subsample(g, x, vars, "scout.frontend")?;
    let t_prime = g.value(h).rows();
    let pe = g.leaf(positional_encoding(t_prime, cfg.stack.d));
    let h = g.add(h, pe)?;
    let mask = causal_mask(t_prime)?;
    let h = encoder_stack(g, h, &mask, vars, SCOUT_PREFIX, &cfg.stack)?;
    let w = vars.var("scout.head.w")?;
    g.matmul(h, w)
}

/// Graph-level boundary probabilities `[T' x 1]`.
pub fn scout_probs_graph(
    g: &mut Graph,
    vars: &ParamVars,
    x: Var,
    cfg: &ScoutConfig,
) -> Result<Var> {
    let logits = scout_logits_graph(g, vars, x, cfg)?;
    Ok(g.sigmoid(logits))
}

const PROB_CLAMP: f64 = 1e-12;

/// Full binary cross-entropy over boundary probabilities, with probabilities
/// clamped to [1e-12, 1 - 1e-12]. `pos_weight` scales the positive-class
/// terms (boundaries are sparse); the faithful default is 1.
pub fn scout_loss_weighted(p: &BoundaryProbs, b: &BoundaryLabels, pos_weight: f64) -> Result<f64> {
    if p.len() != b.len() {
        return Err(Error::shape(format!(
            "scout_loss: {} probs vs {} labels",
            p.len(),
            b.len()
        )));
    }
    let mut loss = 0.0;
    for (&pi, &bi) in p.values().iter().zip(b.values()) {
        let pi = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if bi {
            loss -= pos_weight * pi.ln();
        } else {
            loss -= (1.0 - pi).ln();
        }
    }
    Ok(loss)
}

/// Binary cross-entropy with the default positive-class weight of 1.
pub fn scout_loss(p: &BoundaryProbs, b: &BoundaryLabels) -> Result<f64> {
    scout_loss_weighted(p, b, 1.0)
}

/// Graph-level BCE from the full model, for training: builds probabilities
/// from the input and sums the clamped cross-entropy terms.
pub fn scout_loss_graph(
    g: &mut Graph,
    vars: &ParamVars,
    x: Var,
    labels: &BoundaryLabels,
    cfg: &ScoutConfig,
    pos_weight: f64,
) -> Result<Var> {
    let probs = scout_probs_graph(g, vars, x, cfg)?;
    let t_prime = g.value(probs).rows();
    if labels.len() != t_prime {
        return Err(Error::shape(format!(
            "scout_loss: {} labels vs T'={t_prime}",
            labels.len()
        )));
    }
    let b = g.leaf(Tensor::new(
        vec![t_prime, 1],
        labels.values().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
    )?);
    let not_b = {
        let neg = g.scale(b, -1.0);
        g.add_const(neg, 1.0)
    };
    let p = g.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = g.log(p);
    let one_minus_p = {
        let neg = g.scale(p, -1.0);
        g.add_const(neg, 1.0)
    };
    let log_q = g.log(one_minus_p);
    let pos = g.mul(b, log_p)?;
    let pos = g.scale(pos, pos_weight);
    let negt = g.mul(not_b, log_q)?;
    let both = g.add(pos, negt)?;
    let total = g.sum(both);
    Ok(g.scale(total, -1.0))
}

/// Boundary decision: every frame with `p_i >= sigma` is a boundary, and a
/// final boundary at T' is appended if absent so the utterance always
/// decodes to completion.
pub fn threshold_decide(p: &BoundaryProbs, sigma: f64) -> Result<Segmentation> {
    if !(0.0..1.0).contains(&sigma) || sigma == 0.0 {
        return Err(Error::invalid(format!("sigma must lie in (0, 1), got {sigma}")));
    }
    if p.is_empty() {
        return Err(Error::invalid("threshold_decide: empty probabilities"));
    }
    let t_prime = p.len();
    let ends: Vec<usize> = p
        .values()
        .iter()
        .enumerate()
        .filter_map(|(i, &pi)| (pi >= sigma).then_some(i + 1))
        .collect();
    if ends.is_empty() {
        return Segmentation::single(t_prime);
    }
    Segmentation::new(ends)?.with_final(t_prime)
}

/// Raw thresholded boundary positions without the forced final boundary.
pub fn raw_boundaries(p: &BoundaryProbs, sigma: f64) -> Vec<usize> {
    p.values()
        .iter()
        .enumerate()
        .filter_map(|(i, &pi)| (pi >= sigma).then_some(i + 1))
        .collect()
}

/// Boundary labels from a word alignment: frame `i` (1-based, covering
/// `((i-1)*r*10, i*r*10]` ms) is labeled 1 iff some word ends inside it.
pub fn labels_from_alignment(spans: &[WordSpan], r: usize, t_prime: usize) -> Result<BoundaryLabels> {
    let ms_per_frame = (r * 10) as u64;
    let mut prev_end = 0u64;
    let mut values = vec![false; t_prime];
    for span in spans {
        if span.start_ms < prev_end || span.end_ms <= span.start_ms {
            return Err(Error::data(format!(
                "alignment spans must be sorted and non-overlapping (word `{}`)",
                span.word
            )));
        }
        prev_end = span.end_ms;
        let frame = span.end_ms.div_ceil(ms_per_frame) as usize;
        if frame == 0 || frame > t_prime {
            return Err(Error::data(format!(
                "word `{}` ends at {} ms, outside frames 1..={t_prime}",
                span.word, span.end_ms
            )));
        }
        values[frame - 1] = true;
    }
    Ok(BoundaryLabels::new(values))
}

/// Frame-at-a-time scout evaluation. Push 10 ms frames one by one; a new
/// boundary probability appears each time four input frames complete a
/// downsampled frame, and `finish` flushes the final partial frame.
#[derive(Debug, Clone)]
pub struct ScoutStream {
    inner: IncrementalStack,
    emitted: usize,
}

impl ScoutStream {
    /// Feed one input frame; returns the new boundary probability when this
    /// frame completes a downsampled step.
    pub fn push_frame(&mut self, model: &ScoutModel, frame: &[f64]) -> Result<Option<f64>> {
        self.inner.push_raw(frame, model.cfg.feat_dim)?;
        if self.inner.raw_len() % SUBSAMPLE_RATE != 0 {
            return Ok(None);
        }
        let boundary = self.inner.raw_len() / SUBSAMPLE_RATE;
        let rows = self
            .inner
            .advance(&model.params, SCOUT_PREFIX, &model.cfg.stack, boundary)?;
        self.emitted = boundary;
        Ok(Some(head_prob(model, &rows[0])?))
    }

    /// Flush the trailing partial frame (if any) at utterance end.
    pub fn finish(&mut self, model: &ScoutModel) -> Result<Vec<f64>> {
        let t_prime = subsampled_len(self.inner.raw_len().max(1));
        if self.inner.raw_len() == 0 || self.emitted >= t_prime {
            return Ok(Vec::new());
        }
        let rows = self
            .inner
            .advance(&model.params, SCOUT_PREFIX, &model.cfg.stack, t_prime)?;
        self.emitted = t_prime;
        rows.iter().map(|r| head_prob(model, r)).collect()
    }

    pub fn frames_seen(&self) -> usize {
        self.inner.raw_len()
    }

    pub fn probs_emitted(&self) -> usize {
        self.emitted
    }
}

fn head_prob(model: &ScoutModel, row: &[f64]) -> Result<f64> {
    let w = model.params.get("scout.head.w")?;
    let h = Tensor::new(vec![1, row.len()], row.to_vec())?;
    let logit = h.matmul(w)?;
    Ok(1.0 / (1.0 + (-logit.at(0, 0)).exp()))
}
