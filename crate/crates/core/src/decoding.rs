//! Frame-synchronous joint CTC / triggered-attention decoding driven by the
//! scout: a frame loop watches the boundary detector, and every detected
//! boundary triggers an incremental encode plus a per-segment beam search
//! with three-way pruning (local, attention, joint scores).

use std::collections::BTreeMap;
use std::time::Instant;

use crate::ctc::{ctc_prefix_step, PrefixSet, PrefixState, TokenId};
use crate::encoder::{ctc_posterior_rows, EncoderCache, RnConfig, RnModel, RN_PREFIX};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::numerics::{Graph, ParamVars, Tensor, Var};
use crate::scout::ScoutModel;
use crate::transformer::{
    causal_mask, decoder_layer, positional_encoding, prefix_cross_mask, subsampled_len,
    Segmentation, SUBSAMPLE_RATE,
};

/// Decoding hyperparameters. `beam`, `sigma0`, `lambda`, `lm_weight` and
/// `length_bonus` default to K=10, 0.0005, 0.5, 0.5, 2.0; the scout threshold
/// defaults to 0.9 and segments are capped at 50 downsampled frames (2 s).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
    pub sigma: f64,
    pub sigma0: f64,
    pub lambda: f64,
    pub lm_weight: f64,
    pub length_bonus: f64,
    pub max_segment: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 10,
            sigma: 0.9,
            sigma0: 0.0005,
            lambda: 0.5,
            lm_weight: 0.5,
            length_bonus: 2.0,
            max_segment: 50,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::invalid("decode: beam width must be >= 1"));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::invalid("decode: sigma must lie in (0, 1]"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::invalid("decode: lambda must lie in (0, 1]"));
        }
        if self.sigma0 < 0.0 {
            return Err(Error::invalid("decode: sigma0 must be >= 0"));
        }
        if self.max_segment == 0 {
            return Err(Error::invalid("decode: max_segment must be >= 1"));
        }
        Ok(())
    }
}

/// One beam entry: a token prefix (start/end tokens excluded) with its CTC
/// probability split, memoized attention score, and LM score.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub prefix: Vec<TokenId>,
    pub state: PrefixState,
    pub log_ta: f64,
    pub log_lm: f64,
    pub terminated: bool,
}

impl Hypothesis {
    pub fn log_ctc(&self) -> f64 {
        self.state.total()
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }
}

fn weighted(coeff: f64, value: f64) -> f64 {
    // 0 * -inf must contribute nothing, not NaN.
    if coeff == 0.0 {
        0.0
    } else {
        coeff * value
    }
}

/// Local and joint scores:
/// p_local = log p_ctc + alpha log p_LM + beta |l|
/// p_joint = lambda log p_ctc + (1-lambda) log p_ta + alpha log p_LM + beta |l|
pub fn score_hypothesis(h: &Hypothesis, config: &DecodeConfig) -> (f64, f64) {
    let len_bonus = config.length_bonus * h.len() as f64;
    let lm = weighted(config.lm_weight, h.log_lm);
    let p_local = h.log_ctc() + lm + len_bonus;
    let p_joint = weighted(config.lambda, h.log_ctc())
        + weighted(1.0 - config.lambda, h.log_ta)
        + lm
        + len_bonus;
    (p_local, p_joint)
}

/// Deterministic beam ordering: score descending, then shorter prefix, then
/// lexicographic token ids.
fn better(score_a: f64, a: &Hypothesis, score_b: f64, b: &Hypothesis) -> std::cmp::Ordering {
    score_b
        .total_cmp(&score_a)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.prefix.cmp(&b.prefix))
        .reverse()
}

fn top_k_indices(cands: &[Hypothesis], scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    idx.sort_by(|&i, &j| better(scores[i], &cands[i], scores[j], &cands[j]).reverse());
    idx.truncate(k);
    idx
}

/// Memoized attention score of one prefix: the cumulative log-probability
/// and the per-token encoder horizons it was built with. Token k's
/// conditional is frozen with the encoder prefix available when the k-token
/// prefix was first proposed, matching the per-token contexts the joint loss
/// trains with; in a single-segment decode this telescopes to the plain
/// teacher-forced score of the whole prefix.
#[derive(Debug, Clone)]
pub struct TaEntry {
    pub score: f64,
    pub ends: Vec<usize>,
}

/// Per-utterance decoding state: the beam, the attention-score memo (each
/// distinct prefix is scored at most once per utterance), and a counter of
/// frames where pruning would have emptied the beam.
pub struct DecodeState {
    pub hyps: Vec<Hypothesis>,
    pub ta_memo: BTreeMap<Vec<TokenId>, TaEntry>,
    pub empty_beam_events: usize,
}

impl DecodeState {
    pub fn new() -> Self {
        let mut ta_memo = BTreeMap::new();
        ta_memo.insert(Vec::new(), TaEntry { score: 0.0, ends: Vec::new() });
        DecodeState {
            hyps: vec![Hypothesis {
                prefix: Vec::new(),
                state: PrefixState::root(),
                log_ta: 0.0,
                log_lm: 0.0,
                terminated: false,
            }],
            ta_memo,
            empty_beam_events: 0,
        }
    }
}

impl Default for DecodeState {
    fn default() -> Self {
        DecodeState::new()
    }
}

/// One segment of the Decode procedure: for each frame in `start..=end`
/// (1-based), run a CTC prefix step over the beam, attention-score each new
/// candidate once (its final token conditioned on encoder rows `1..=end`),
/// then keep the union of the top-K by local, attention and joint scores.
///
/// `score_ta(prefix, ends)` must return the conditional log-probability of
/// the last token of `prefix` given the earlier ones, with per-token cross
/// attention limited to `ends`.
pub fn decode_segment<S>(
    state: &mut DecodeState,
    posterior_rows: &[Vec<f64>],
    score_ta: &mut S,
    lm: &dyn LanguageModel,
    config: &DecodeConfig,
    start: usize,
    end: usize,
) -> Result<()>
where
    S: FnMut(&[TokenId], &[usize]) -> Result<f64>,
{
    if start > end {
        return Err(Error::invalid(format!("decode_segment: start {start} > end {end}")));
    }
    if posterior_rows.len() < end {
        return Err(Error::invalid(format!(
            "decode_segment: posterior covers {} frames, need {end}",
            posterior_rows.len()
        )));
    }
    for j in start..=end {
        let row = &posterior_rows[j - 1];

        // Terminated hypotheses are frozen: they skip the CTC update but stay
        // in the beam.
        let mut frozen = Vec::new();
        let mut active = PrefixSet::new();
        for h in &state.hyps {
            if h.terminated {
                frozen.push(h.clone());
            } else {
                let entry = active.entry(h.prefix.clone()).or_insert(PrefixState::empty());
                entry.log_blank = crate::numerics::log_add_exp(entry.log_blank, h.state.log_blank);
                entry.log_nonblank =
                    crate::numerics::log_add_exp(entry.log_nonblank, h.state.log_nonblank);
            }
        }

        let stepped = ctc_prefix_step(&active, config.sigma0, row);
        let alive = stepped.iter().any(|(_, s)| s.total() > f64::NEG_INFINITY);
        if !alive && frozen.is_empty() {
            // Everything pruned away: keep the previous beam and flag it.
            state.empty_beam_events += 1;
            continue;
        }

        let mut cands: Vec<Hypothesis> = Vec::with_capacity(stepped.len() + frozen.len());
        for (prefix, pstate) in stepped {
            if pstate.total() == f64::NEG_INFINITY {
                continue;
            }
            let log_ta = memoized_ta(&mut state.ta_memo, &prefix, end, score_ta)?;
            let log_lm = lm.logprob(&prefix);
            cands.push(Hypothesis { prefix, state: pstate, log_ta, log_lm, terminated: false });
        }
        cands.extend(frozen);
        if cands.is_empty() {
            state.empty_beam_events += 1;
            continue;
        }

        let mut local_scores = Vec::with_capacity(cands.len());
        let mut ta_scores = Vec::with_capacity(cands.len());
        let mut joint_scores = Vec::with_capacity(cands.len());
        for h in &cands {
            let (local, joint) = score_hypothesis(h, config);
            local_scores.push(local);
            ta_scores.push(h.log_ta);
            joint_scores.push(joint);
        }
        let mut keep = vec![false; cands.len()];
        for idx in top_k_indices(&cands, &local_scores, config.beam) {
            keep[idx] = true;
        }
        for idx in top_k_indices(&cands, &ta_scores, config.beam) {
            keep[idx] = true;
        }
        for idx in top_k_indices(&cands, &joint_scores, config.beam) {
            keep[idx] = true;
        }
        state.hyps = cands
            .into_iter()
            .zip(keep)
            .filter_map(|(h, k)| k.then_some(h))
            .collect();
    }
    Ok(())
}

/// Cumulative attention score of `prefix`, computed at most once: the parent
/// prefix's memoized score plus one new conditional whose cross attention
/// reaches to the current segment boundary.
fn memoized_ta<S>(
    memo: &mut BTreeMap<Vec<TokenId>, TaEntry>,
    prefix: &[TokenId],
    boundary: usize,
    score_ta: &mut S,
) -> Result<f64>
where
    S: FnMut(&[TokenId], &[usize]) -> Result<f64>,
{
    if let Some(entry) = memo.get(prefix) {
        return Ok(entry.score);
    }
    let parent = &prefix[..prefix.len() - 1];
    let parent_score = memoized_ta(memo, parent, boundary, score_ta)?;
    let mut ends = memo[parent].ends.clone();
    ends.push(boundary);
    let conditional = score_ta(prefix, &ends)?;
    let entry = TaEntry { score: parent_score + conditional, ends };
    let score = entry.score;
    memo.insert(prefix.to_vec(), entry);
    Ok(score)
}

/// Graph-level teacher-forced decoder distributions: one row of output
/// log-probabilities per target position, with cross attention for target
/// `k` restricted to encoder rows `1..=cross_ends[k]`.
pub fn decoder_distributions_graph(
    g: &mut Graph,
    vars: &ParamVars,
    targets: &[TokenId],
    cross_ends: &[usize],
    h_enc: Var,
    cfg: &RnConfig,
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::invalid("decoder: empty target sequence"));
    }
    if targets.len() != cross_ends.len() {
        return Err(Error::shape("decoder: one cross end per target required"));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= cfg.vocab) {
        return Err(Error::invalid(format!("decoder: token {bad} outside vocabulary")));
    }
    let n = targets.len();
    let enc_len = g.value(h_enc).rows();
    if enc_len == 0 {
        return Err(Error::invalid("decoder: empty encoder prefix"));
    }

    // Input row k predicts target k: sos followed by targets[..n-1].
    let mut input_ids = Vec::with_capacity(n);
    input_ids.push(cfg.sos_id());
    input_ids.extend(targets[..n - 1].iter().copied());

    let embed = vars.var("rn.embed")?;
    let emb = g.gather_rows(embed, &input_ids)?;
    let pe = g.leaf(positional_encoding(n, cfg.decoder.d));
    let mut y = g.add(emb, pe)?;

    let self_mask = causal_mask(n)?;
    let cross_mask = prefix_cross_mask(cross_ends, enc_len)?;
    for l in 0..cfg.decoder.layers {
        y = decoder_layer(
            g,
            y,
            h_enc,
            &self_mask,
            &cross_mask,
            vars,
            &format!("{RN_PREFIX}.dec{l}"),
            &cfg.decoder,
        )?;
    }
    let w = vars.var("rn.out.w")?;
    let b = vars.var("rn.out.b")?;
    let logits = g.matmul(y, w)?;
    let logits = g.add_row(logits, b)?;
    Ok(g.log_softmax(logits))
}

/// Per-token log-probabilities of `targets` as a `[n x 1]` column.
pub fn decoder_logprobs_graph(
    g: &mut Graph,
    vars: &ParamVars,
    targets: &[TokenId],
    cross_ends: &[usize],
    h_enc: Var,
    cfg: &RnConfig,
) -> Result<Var> {
    let log_probs = decoder_distributions_graph(g, vars, targets, cross_ends, h_enc, cfg)?;
    g.pick_per_row(log_probs, targets)
}

/// Teacher-forced attention score of a token prefix against the available
/// encoder rows: the sum of per-token conditional log-probabilities. The
/// empty prefix scores 0.
pub fn s2s_score(model: &RnModel, tokens: &[TokenId], h_prefix: &Tensor) -> Result<f64> {
    if h_prefix.rows() == 0 {
        return Err(Error::invalid("s2s_score: empty encoder prefix"));
    }
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let mut g = Graph::new();
    let vars = g.register_params(&model.params);
    let h = g.leaf(h_prefix.clone());
    let ends = vec![h_prefix.rows(); tokens.len()];
    let picked = decoder_logprobs_graph(&mut g, &vars, tokens, &ends, h, &model.cfg)?;
    Ok(g.value(picked).data().iter().sum())
}

/// How one segment came to exist in the decode trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum BoundarySource {
    Scout,
    SegmentCap,
    FinalFlush,
    Given,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SegmentInfo {
    /// End boundary (downsampled, 1-based).
    pub boundary: usize,
    /// Input frame index (10 ms, 1-based) at which the boundary fired.
    pub fired_at_input: usize,
    pub source: BoundarySource,
    /// Wall-clock encode+decode time, informational only.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Final scored hypothesis for reports.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ScoredHypothesis {
    pub tokens: Vec<TokenId>,
    pub log_ctc: f64,
    pub log_ta: f64,
    pub log_lm: f64,
    pub joint: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecodeOutcome {
    pub tokens: Vec<TokenId>,
    pub joint_score: f64,
    pub segmentation: Vec<usize>,
    pub segments: Vec<SegmentInfo>,
    pub empty_beam_events: usize,
    pub final_beam: Vec<ScoredHypothesis>,
}

struct DecodeRun<'m> {
    model: &'m RnModel,
    cache: EncoderCache,
    posterior_rows: Vec<Vec<f64>>,
    state: DecodeState,
    segments: Vec<SegmentInfo>,
}

impl<'m> DecodeRun<'m> {
    fn new(model: &'m RnModel) -> Self {
        DecodeRun {
            model,
            cache: EncoderCache::new(model),
            posterior_rows: Vec::new(),
            state: DecodeState::new(),
            segments: Vec::new(),
        }
    }

    fn process_segment(
        &mut self,
        lm: &dyn LanguageModel,
        config: &DecodeConfig,
        new_frames: &[Vec<f64>],
        boundary: usize,
        fired_at_input: usize,
        source: BoundarySource,
    ) -> Result<()> {
        let begin = Instant::now();
        let start = self.cache.frontier() + 1;
        let new_rows = self.cache.advance(self.model, new_frames, boundary)?;
        let post = ctc_posterior_rows(self.model, &new_rows)?;
        for r in 0..post.rows() {
            self.posterior_rows.push(post.row(r).to_vec());
        }
        let h_full = self.cache.output()?;
        let model = self.model;
        let mut scorer = |prefix: &[TokenId], ends: &[usize]| -> Result<f64> {
            let mut g = Graph::new();
            let vars = g.register_params(&model.params);
            let h = g.leaf(h_full.clone());
            let picked = decoder_logprobs_graph(&mut g, &vars, prefix, ends, h, &model.cfg)?;
            Ok(g.value(picked).at(prefix.len() - 1, 0))
        };
        decode_segment(
            &mut self.state,
            &self.posterior_rows,
            &mut scorer,
            lm,
            config,
            start,
            boundary,
        )?;
        self.segments.push(SegmentInfo {
            boundary,
            fired_at_input,
            source,
            wall_seconds: begin.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn finish_with(self, config: &DecodeConfig) -> Result<DecodeOutcome> {
        if self.segments.is_empty() {
            return Err(Error::invalid("decode: no segments processed"));
        }
        let ends: Vec<usize> = self.segments.iter().map(|s| s.boundary).collect();
        let mut scored: Vec<(f64, ScoredHypothesis, &Hypothesis)> = self
            .state
            .hyps
            .iter()
            .map(|h| {
                let (_, joint) = score_hypothesis(h, config);
                (
                    joint,
                    ScoredHypothesis {
                        tokens: h.prefix.clone(),
                        log_ctc: h.log_ctc(),
                        log_ta: h.log_ta,
                        log_lm: h.log_lm,
                        joint,
                    },
                    h,
                )
            })
            .collect();
        // Highest joint score wins; terminated hypotheses break exact ties,
        // then shorter prefixes, then lexicographic order.
        scored.sort_by(|(sa, _, ha), (sb, _, hb)| {
            sb.total_cmp(sa)
                .then_with(|| hb.terminated.cmp(&ha.terminated))
                .then_with(|| ha.prefix.len().cmp(&hb.prefix.len()))
                .then_with(|| ha.prefix.cmp(&hb.prefix))
        });
        let (joint_score, top, _) = scored
            .first()
            .cloned()
            .ok_or_else(|| Error::numeric("decode: empty final beam"))?;
        Ok(DecodeOutcome {
            tokens: top.tokens.clone(),
            joint_score,
            segmentation: ends,
            segments: self.segments,
            empty_beam_events: self.state.empty_beam_events,
            final_beam: scored.into_iter().map(|(_, s, _)| s).collect(),
        })
    }
}

/// The Scout-then-Decode loop: feed input frames one by one; whenever the
/// scout fires (p >= sigma), or a segment hits the length cap, encode up to
/// the new boundary and decode the fresh frames. A final boundary is forced
/// at the end of the utterance.
pub fn scout_then_decode(
    x: &Tensor,
    scout: &ScoutModel,
    model: &RnModel,
    lm: &dyn LanguageModel,
    config: &DecodeConfig,
) -> Result<DecodeOutcome> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(Error::invalid("decode: empty input"));
    }
    let t_prime = subsampled_len(x.rows());
    let mut stream = scout.stream();
    let mut run = DecodeRun::new(model);
    let mut pending: Vec<Vec<f64>> = Vec::new();

    for i in 1..=x.rows() {
        let frame = x.row(i - 1).to_vec();
        let emitted = stream.push_frame(scout, &frame)?;
        pending.push(frame);
        if let Some(p) = emitted {
            let frame_idx = stream.probs_emitted(); // downsampled index, 1-based
            let fired = p >= config.sigma;
            let capped = frame_idx - run.cache.frontier() >= config.max_segment;
            if fired || capped {
                let source = if fired { BoundarySource::Scout } else { BoundarySource::SegmentCap };
                run.process_segment(lm, config, &pending, frame_idx, i, source)?;
                pending.clear();
            }
        }
    }
    let _ = stream.finish(scout)?;
    if run.cache.frontier() < t_prime {
        run.process_segment(lm, config, &pending, t_prime, x.rows(), BoundarySource::FinalFlush)?;
    }
    run.finish_with(config)
}

/// Decode under an externally supplied segmentation (offline single-segment
/// decoding and golden-boundary decoding are both this).
pub fn decode_with_segmentation(
    x: &Tensor,
    model: &RnModel,
    lm: &dyn LanguageModel,
    seg: &Segmentation,
    config: &DecodeConfig,
) -> Result<DecodeOutcome> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(Error::invalid("decode: empty input"));
    }
    let t_prime = subsampled_len(x.rows());
    if seg.last() != t_prime {
        return Err(Error::invalid(format!(
            "decode: segmentation ends at {} but T'={t_prime}",
            seg.last()
        )));
    }
    let mut run = DecodeRun::new(model);
    let mut fed = 0usize;
    for &g in seg.ends() {
        let upto = if g == seg.last() { x.rows() } else { (SUBSAMPLE_RATE * g).min(x.rows()) };
        let frames: Vec<Vec<f64>> = (fed..upto).map(|r| x.row(r).to_vec()).collect();
        fed = upto;
        run.process_segment(lm, config, &frames, g, upto, BoundarySource::Given)?;
    }
    run.finish_with(config)
}

/// Fully offline decode: one segment covering the whole utterance.
pub fn decode_offline(
    x: &Tensor,
    model: &RnModel,
    lm: &dyn LanguageModel,
    config: &DecodeConfig,
) -> Result<DecodeOutcome> {
    let seg = Segmentation::single(subsampled_len(x.rows().max(1)))?;
    decode_with_segmentation(x, model, lm, &seg, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::{ctc_forward_logprob, CtcPosterior};
    use crate::lm::UniformLm;
    use crate::numerics::log_softmax_rows;
    use crate::scout::{ScoutConfig, ScoutModel};
    use crate::transformer::StackConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(seed: u64, vocab: usize) -> RnModel {
        RnModel::init(
            RnConfig {
                feat_dim: 3,
                vocab,
                encoder: StackConfig { layers: 1, d: 8, d_ff: 12, heads: 2 },
                decoder: StackConfig { layers: 1, d: 8, d_ff: 12, heads: 2 },
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn s2s_uniform_output_layer_scores_uniformly() {
        let mut model = toy_model(1, 4);
        let w = model.params.get_mut("rn.out.w").unwrap();
        *w = Tensor::zeros(w.rows(), w.cols());
        let b = model.params.get_mut("rn.out.b").unwrap();
        *b = Tensor::zeros(b.rows(), b.cols());
        let h = Tensor::randomize(3, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let score = s2s_score(&model, &[1], &h).unwrap();
        let expect = -((model.cfg.dec_vocab() as f64).ln());
        assert!((score - expect).abs() <= 1e-12);
    }

    #[test]
    fn s2s_ignores_encoder_rows_past_prefix() {
        let model = toy_model(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h_full = Tensor::randomize(6, 8, 1.0, &mut rng);
        let h_prefix = Tensor::from_rows(&[h_full.row(0).to_vec(), h_full.row(1).to_vec()]).unwrap();
        let a = s2s_score(&model, &[0, 2], &h_prefix).unwrap();
        // Same two rows plus extra rows the cross mask would hide if we
        // passed ends=2 explicitly.
        let mut g = Graph::new();
        let vars = g.register_params(&model.params);
        let h = g.leaf(h_full.clone());
        let picked = decoder_logprobs_graph(&mut g, &vars, &[0, 2], &[2, 2], h, &model.cfg).unwrap();
        let b: f64 = g.value(picked).data().iter().sum();
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn s2s_score_is_sum_of_stepwise_conditionals() {
        let model = toy_model(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = Tensor::randomize(4, 8, 1.0, &mut rng);
        let tokens = vec![1, 3, 0];
        let full = s2s_score(&model, &tokens, &h).unwrap();
        let mut acc = 0.0;
        for k in 1..=tokens.len() {
            let partial = s2s_score(&model, &tokens[..k], &h).unwrap();
            let prev = s2s_score(&model, &tokens[..k - 1], &h).unwrap();
            acc += partial - prev;
        }
        assert!((full - acc).abs() <= 1e-10);
        // And the empty prefix is worth exactly zero.
        assert_eq!(s2s_score(&model, &[], &h).unwrap(), 0.0);
    }

    #[test]
    fn s2s_empty_encoder_prefix_errors() {
        let model = toy_model(7, 4);
        let h = Tensor::zeros(0, 8);
        assert!(s2s_score(&model, &[0], &h).is_err());
    }

    fn hyp(prefix: Vec<TokenId>, log_ctc: f64, log_ta: f64, log_lm: f64) -> Hypothesis {
        Hypothesis {
            prefix,
            state: PrefixState { log_blank: log_ctc, log_nonblank: f64::NEG_INFINITY },
            log_ta,
            log_lm,
            terminated: false,
        }
    }

    #[test]
    fn score_hypothesis_arithmetic() {
        let config = DecodeConfig {
            lambda: 1.0,
            lm_weight: 0.0,
            length_bonus: 0.0,
            ..DecodeConfig::default()
        };
        let h = hyp(vec![1, 2], -2.5, -7.0, -1.0);
        let (local, joint) = score_hypothesis(&h, &config);
        assert_eq!(joint, -2.5); // lambda=1, alpha=0, beta=0 -> log p_ctc
        assert_eq!(local, -2.5);

        // Equal probabilities, lengths 2 vs 3, beta=2: longer scores +2 more.
        let config = DecodeConfig { length_bonus: 2.0, lm_weight: 0.0, ..DecodeConfig::default() };
        let h2 = hyp(vec![1, 2], -2.5, -7.0, 0.0);
        let h3 = hyp(vec![1, 2, 3], -2.5, -7.0, 0.0);
        let (_, j2) = score_hypothesis(&h2, &config);
        let (_, j3) = score_hypothesis(&h3, &config);
        assert!((j3 - j2 - 2.0).abs() <= 1e-12);

        // Random components vs direct arithmetic.
        let config = DecodeConfig {
            lambda: 0.5,
            lm_weight: 0.5,
            length_bonus: 2.0,
            ..DecodeConfig::default()
        };
        let h = hyp(vec![0], -1.25, -3.5, -0.75);
        let (local, joint) = score_hypothesis(&h, &config);
        assert!((local - (-1.25 + 0.5 * -0.75 + 2.0)).abs() <= 1e-12);
        assert!((joint - (0.5 * -1.25 + 0.5 * -3.5 + 0.5 * -0.75 + 2.0)).abs() <= 1e-12);
    }

    /// Brute-force reference for tiny instances: every token sequence up to
    /// length T' scored by the full joint formula with exact CTC,
    /// attention, and LM scores. The attention score is the chain sum of
    /// per-token conditionals, which is what a single-segment decode
    /// memoizes.
    fn brute_force_best(
        post: &CtcPosterior,
        conditional: &mut dyn FnMut(&[TokenId]) -> f64,
        lm: &dyn LanguageModel,
        config: &DecodeConfig,
    ) -> (Vec<TokenId>, f64) {
        let vocab = post.vocab();
        let t = post.frames();
        let mut best: Option<(f64, Vec<TokenId>)> = None;
        let mut consider = |seq: Vec<TokenId>| {
            let log_ctc = ctc_forward_logprob(post, &seq).unwrap();
            if log_ctc == f64::NEG_INFINITY {
                return;
            }
            let log_ta: f64 = (1..=seq.len()).map(|k| conditional(&seq[..k])).sum();
            let joint = weighted(config.lambda, log_ctc)
                + weighted(1.0 - config.lambda, log_ta)
                + weighted(config.lm_weight, lm.logprob(&seq))
                + config.length_bonus * seq.len() as f64;
            let better = match &best {
                None => true,
                Some((b, bseq)) => {
                    joint > *b
                        || (joint == *b
                            && (seq.len(), &seq) < (bseq.len(), &bseq.clone()))
                }
            };
            if better {
                best = Some((joint, seq));
            }
        };
        // Enumerate all sequences of length 0..=t.
        let mut stack: Vec<Vec<TokenId>> = vec![Vec::new()];
        while let Some(seq) = stack.pop() {
            consider(seq.clone());
            if seq.len() < t {
                for c in 0..vocab {
                    let mut ext = seq.clone();
                    ext.push(c);
                    stack.push(ext);
                }
            }
        }
        let (score, seq) = best.unwrap();
        (seq, score)
    }

    #[test]
    fn full_width_beam_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..25 {
            let frames = rng.random_range(1..=4);
            let vocab = rng.random_range(1..=3);
            let logits = Tensor::randomize(frames, vocab + 1, 1.5, &mut rng);
            let post = CtcPosterior::new(log_softmax_rows(&logits)).unwrap();
            // Deterministic pseudo-random attention scores per prefix.
            let ta_table = move |prefix: &[TokenId]| -> f64 {
                let mut acc = 0.0f64;
                for (i, &t) in prefix.iter().enumerate() {
                    acc -= 0.3 + ((i * 7 + t * 13) % 11) as f64 * 0.17;
                }
                acc
            };
            let lm = UniformLm;
            let config = DecodeConfig {
                beam: 4096,
                sigma0: 0.0,
                lambda: 0.5,
                lm_weight: 0.0,
                length_bonus: 0.5,
                ..DecodeConfig::default()
            };
            let rows: Vec<Vec<f64>> = (0..frames).map(|t| post.row(t).to_vec()).collect();
            let mut state = DecodeState::new();
            let mut scorer = |p: &[TokenId], _ends: &[usize]| Ok(ta_table(p));
            decode_segment(&mut state, &rows, &mut scorer, &lm, &config, 1, frames).unwrap();
            let mut best: Option<(f64, &Hypothesis)> = None;
            for h in &state.hyps {
                let (_, joint) = score_hypothesis(h, &config);
                let is_better = match best {
                    None => true,
                    Some((b, bh)) => {
                        joint > b
                            || (joint == b && (h.len(), &h.prefix) < (bh.len(), &bh.prefix))
                    }
                };
                if is_better {
                    best = Some((joint, h));
                }
            }
            let (got_score, got) = best.unwrap();
            let mut ta_fn = ta_table;
            let (expect, expect_score) = brute_force_best(&post, &mut ta_fn, &lm, &config);
            assert_eq!(got.prefix, expect, "trial {trial}");
            assert!((got_score - expect_score).abs() <= 1e-9, "trial {trial}");
        }
    }

    #[test]
    fn lambda_one_reduces_to_pure_ctc_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let frames = 4;
        let vocab = 2;
        let logits = Tensor::randomize(frames, vocab + 1, 1.5, &mut rng);
        let post = CtcPosterior::new(log_softmax_rows(&logits)).unwrap();
        let rows: Vec<Vec<f64>> = (0..frames).map(|t| post.row(t).to_vec()).collect();
        let config = DecodeConfig {
            beam: 4096,
            sigma0: 0.0,
            lambda: 1.0,
            lm_weight: 0.0,
            length_bonus: 0.0,
            ..DecodeConfig::default()
        };
        let mut state = DecodeState::new();
        // Attention scores are garbage on purpose; lambda=1 must ignore them.
        let mut scorer = |p: &[TokenId], _ends: &[usize]| Ok(-1000.0 * p.len() as f64);
        decode_segment(&mut state, &rows, &mut scorer, &UniformLm, &config, 1, frames).unwrap();
        for h in &state.hyps {
            let (_, joint) = score_hypothesis(h, &config);
            assert!((joint - h.log_ctc()).abs() <= 1e-12);
        }
    }

    #[test]
    fn each_distinct_prefix_scored_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let frames = 5;
        let vocab = 2;
        let logits = Tensor::randomize(frames, vocab + 1, 1.0, &mut rng);
        let post = CtcPosterior::new(log_softmax_rows(&logits)).unwrap();
        let rows: Vec<Vec<f64>> = (0..frames).map(|t| post.row(t).to_vec()).collect();
        let config =
            DecodeConfig { beam: 8, sigma0: 0.0, lm_weight: 0.0, ..DecodeConfig::default() };
        let mut state = DecodeState::new();
        let mut seen: Vec<Vec<TokenId>> = Vec::new();
        {
            let mut scorer = |p: &[TokenId], _ends: &[usize]| {
                assert!(!seen.contains(&p.to_vec()), "prefix {p:?} scored twice");
                seen.push(p.to_vec());
                Ok(0.0)
            };
            // Two segments sharing one utterance-scoped memo.
            decode_segment(&mut state, &rows, &mut scorer, &UniformLm, &config, 1, 3).unwrap();
            decode_segment(&mut state, &rows, &mut scorer, &UniformLm, &config, 4, 5).unwrap();
        }
        assert_eq!(seen.len(), state.ta_memo.len() - 1); // minus the root entry
    }

    #[test]
    fn blank_certain_frame_spawns_no_prefixes() {
        let vocab = 2;
        let mut row = vec![f64::NEG_INFINITY; vocab + 1];
        row[vocab] = 0.0;
        let config = DecodeConfig { sigma0: 0.0, ..DecodeConfig::default() };
        let mut state = DecodeState::new();
        let mut scorer = |_: &[TokenId], _: &[usize]| Ok(0.0);
        decode_segment(&mut state, &[row], &mut scorer, &UniformLm, &config, 1, 1).unwrap();
        assert_eq!(state.hyps.len(), 1);
        assert!(state.hyps[0].prefix.is_empty());
        assert_eq!(state.hyps[0].state.log_blank, 0.0);
    }

    #[test]
    fn scout_never_fires_equals_offline_decode() {
        let vocab = 3;
        let model = toy_model(19, vocab);
        let scout = ScoutModel::init(
            ScoutConfig {
                feat_dim: 3,
                stack: StackConfig { layers: 1, d: 8, d_ff: 12, heads: 2 },
            },
            20,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::randomize(19, 3, 1.0, &mut rng);
        // sigma very close to 1 so an untrained scout cannot fire.
        let config = DecodeConfig {
            beam: 4,
            sigma: 0.999999,
            lm_weight: 0.0,
            ..DecodeConfig::default()
        };
        let streaming = scout_then_decode(&x, &scout, &model, &UniformLm, &config).unwrap();
        let offline = decode_offline(&x, &model, &UniformLm, &config).unwrap();
        assert_eq!(streaming.tokens, offline.tokens);
        assert_eq!(streaming.segmentation, vec![subsampled_len(19)]);
        assert_eq!(streaming.joint_score, offline.joint_score);
    }

    #[test]
    fn streaming_equals_offline_replay_of_same_segmentation() {
        let vocab = 3;
        let model = toy_model(23, vocab);
        let scout = ScoutModel::init(
            ScoutConfig {
                feat_dim: 3,
                stack: StackConfig { layers: 1, d: 8, d_ff: 12, heads: 2 },
            },
            24,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = Tensor::randomize(33, 3, 1.0, &mut rng);
        // Mid sigma so the untrained scout fires somewhere.
        let config = DecodeConfig { beam: 4, sigma: 0.5, lm_weight: 0.0, ..DecodeConfig::default() };
        let streaming = scout_then_decode(&x, &scout, &model, &UniformLm, &config).unwrap();
        let seg = Segmentation::new(streaming.segmentation.clone()).unwrap();
        let replay = decode_with_segmentation(&x, &model, &UniformLm, &seg, &config).unwrap();
        assert_eq!(streaming.tokens, replay.tokens);
        assert_eq!(streaming.joint_score, replay.joint_score);
    }

    #[test]
    fn segment_cap_forces_boundaries() {
        let vocab = 2;
        let model = toy_model(29, vocab);
        let scout = ScoutModel::init(
            ScoutConfig {
                feat_dim: 3,
                stack: StackConfig { layers: 1, d: 8, d_ff: 12, heads: 2 },
            },
            30,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::randomize(40, 3, 1.0, &mut rng);
        let config = DecodeConfig {
            beam: 2,
            sigma: 0.999999,
            max_segment: 3,
            lm_weight: 0.0,
            ..DecodeConfig::default()
        };
        let out = scout_then_decode(&x, &scout, &model, &UniformLm, &config).unwrap();
        // T' = 10, cap 3: boundaries at 3, 6, 9, then the final flush at 10.
        assert_eq!(out.segmentation, vec![3, 6, 9, 10]);
        assert!(out
            .segments
            .iter()
            .take(3)
            .all(|s| s.source == BoundarySource::SegmentCap));
    }

    #[test]
    fn one_hot_posterior_decodes_reference_exactly() {
        // Constructed posterior spelling "1 blank 0 0(repeat needs blank) .."
        // plus golden boundaries: the decoded transcript is exact.
        let vocab = 3;
        let blank = vocab;
        let symbols = [1usize, blank, 0, blank, 0, 2, blank, blank];
        let mut logp = Tensor::full(symbols.len(), vocab + 1, (1e-8f64).ln());
        for (t, &s) in symbols.iter().enumerate() {
            // Near-one-hot rows that still normalize.
            let mut row: Vec<f64> = (0..=vocab).map(|_| 1e-8).collect();
            row[s] = 1.0 - 1e-8 * vocab as f64;
            let row: Vec<f64> = row.into_iter().map(f64::ln).collect();
            for (c, v) in row.into_iter().enumerate() {
                logp.set(t, c, v);
            }
        }
        let rows: Vec<Vec<f64>> = (0..symbols.len()).map(|t| logp.row(t).to_vec()).collect();
        let config = DecodeConfig {
            beam: 8,
            sigma0: 0.0,
            lambda: 0.8,
            lm_weight: 0.0,
            length_bonus: 0.0,
            ..DecodeConfig::default()
        };
        let mut state = DecodeState::new();
        let mut scorer = |_: &[TokenId], _: &[usize]| Ok(0.0);
        // Two segments as if golden boundaries fired at frames 4 and 8.
        decode_segment(&mut state, &rows, &mut scorer, &UniformLm, &config, 1, 4).unwrap();
        decode_segment(&mut state, &rows, &mut scorer, &UniformLm, &config, 5, 8).unwrap();
        let best = state
            .hyps
            .iter()
            .max_by(|a, b| {
                let (_, ja) = score_hypothesis(a, &config);
                let (_, jb) = score_hypothesis(b, &config);
                ja.total_cmp(&jb)
            })
            .unwrap();
        assert_eq!(best.prefix, vec![1, 0, 0, 2]);
    }

    #[test]
    fn decode_rejects_empty_input() {
        let model = toy_model(33, 2);
        let config = DecodeConfig::default();
        let x = Tensor::zeros(0, 3);
        assert!(decode_offline(&x, &model, &UniformLm, &config).is_err());
    }

    #[test]
    fn hypotheses_only_extend_across_frames() {
        // Prefix monotonicity: every beam prefix after a frame equals some
        // previous prefix or a previous prefix plus one token.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let frames = 8;
        let vocab = 3;
        let logits = Tensor::randomize(frames, vocab + 1, 1.5, &mut rng);
        let post = CtcPosterior::new(log_softmax_rows(&logits)).unwrap();
        let rows: Vec<Vec<f64>> = (0..frames).map(|t| post.row(t).to_vec()).collect();
        let config =
            DecodeConfig { beam: 4, sigma0: 0.0, lm_weight: 0.0, ..DecodeConfig::default() };
        let mut state = DecodeState::new();
        let mut scorer = |_: &[TokenId], _: &[usize]| Ok(0.0);
        for j in 1..=frames {
            let before: Vec<Vec<TokenId>> =
                state.hyps.iter().map(|h| h.prefix.clone()).collect();
            decode_segment(&mut state, &rows, &mut scorer, &UniformLm, &config, j, j).unwrap();
            for h in &state.hyps {
                let ok = before.iter().any(|p| {
                    h.prefix == *p
                        || (h.prefix.len() == p.len() + 1 && h.prefix.starts_with(p))
                });
                assert!(ok, "frame {j}: prefix {:?} is not an extension", h.prefix);
            }
        }
    }
}
