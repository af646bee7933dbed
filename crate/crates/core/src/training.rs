//! Toy-scale training: scout training on alignment labels, recognition
//! network training in two phases (offline pretraining, then streaming
//! fine-tuning with sampled boundaries and Viterbi triggers), Adam, and
//! checkpoint averaging. Everything is seed-deterministic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::ctc::{ctc_forward_logprob_graph, ctc_viterbi_align, CtcPosterior, TokenId};
use crate::data::Utterance;
use crate::decoding::{decoder_distributions_graph, decoder_logprobs_graph};
use crate::encoder::{ctc_posterior_rows, encode_graph, encode_with_boundaries, RnConfig, RnModel};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamVars, Params, Tensor, Var};
use crate::scout::{
    labels_from_alignment, raw_boundaries, scout_loss_graph, threshold_decide, BoundaryLabels,
    BoundaryProbs, ScoutModel,
};
use crate::transformer::{subsampled_len, Segmentation, SUBSAMPLE_RATE};

/// Boundary source during recognition-network fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// Draw b_i ~ Bernoulli(p_i) from the scout probabilities.
    Sampled,
    /// Use the alignment labels directly.
    Golden,
    /// Threshold the scout probabilities at sigma.
    Thresholded { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Offline pretraining epochs before streaming fine-tuning (RN only).
    pub pretrain_epochs: usize,
    pub seed: u64,
    /// Joint loss weight: gamma on the attention branch, 1-gamma on CTC.
    pub gamma: f64,
    pub boundary_mode: BoundaryMode,
    /// Parameter-wise mean of the last n checkpoints becomes the final model.
    pub checkpoint_average: usize,
    /// Positive-class weight for the scout BCE; 1.0 keeps the loss faithful.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 10,
            pretrain_epochs: 10,
            seed: 17,
            gamma: 0.7,
            boundary_mode: BoundaryMode::Golden,
            checkpoint_average: 5,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("train: gamma must lie in [0, 1]"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("train: learning rate must be > 0"));
        }
        if self.checkpoint_average == 0 {
            return Err(Error::invalid("train: checkpoint_average must be >= 1"));
        }
        Ok(())
    }
}

/// Adam with bias correction; update order follows the deterministic
/// parameter-name order.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, tensor) in params.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(tensor.rows(), tensor.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(tensor.rows(), tensor.cols()));
            let td = tensor.data_mut();
            let gd = grad.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..td.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                td[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        if !params.all_finite() {
            return Err(Error::numeric("training step produced non-finite parameters"));
        }
        Ok(())
    }
}

/// Joint CTC/attention loss on the graph:
/// `-gamma log P_s2s(Y|X) - (1-gamma) log P_ctc(Y|X)`, with the encoder
/// masked by `seg` and each target's cross attention limited to the segment
/// containing its trigger frame.
pub fn joint_loss_graph(
    g: &mut Graph,
    vars: &ParamVars,
    x: Var,
    y: &[TokenId],
    seg: &Segmentation,
    triggers: &[usize],
    cfg: &RnConfig,
    gamma: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("joint_loss: gamma must lie in [0, 1]"));
    }
    if y.is_empty() {
        return Err(Error::invalid("joint_loss: empty target sequence"));
    }
    let h = encode_graph(g, vars, x, seg, cfg)?;
    let mut terms: Vec<Var> = Vec::with_capacity(2);
    if gamma < 1.0 {
        let w = vars.var("rn.ctc.w")?;
        let b = vars.var("rn.ctc.b")?;
        let logits = g.matmul(h, w)?;
        let logits = g.add_row(logits, b)?;
        let log_post = g.log_softmax(logits);
        let ll = ctc_forward_logprob_graph(g, log_post, y, cfg.blank_id())?;
        terms.push(g.scale(ll, -(1.0 - gamma)));
    }
    if gamma > 0.0 {
        if triggers.len() != y.len() {
            return Err(Error::shape("joint_loss: one trigger frame per token required"));
        }
        let t_prime = g.value(h).rows();
        let mut ends = Vec::with_capacity(y.len());
        for &t in triggers {
            let end = seg
                .segment_end(t)
                .ok_or_else(|| Error::invalid(format!("joint_loss: trigger {t} beyond T'={t_prime}")))?;
            ends.push(end);
        }
        let picked = decoder_logprobs_graph(g, vars, y, &ends, h, cfg)?;
        let s2s = g.sum(picked);
        terms.push(g.scale(s2s, -gamma));
    }
    match terms.len() {
        1 => Ok(terms[0]),
        _ => g.add(terms[0], terms[1]),
    }
}

/// Value-level joint loss. Errors when Y is CTC-infeasible for the utterance.
pub fn joint_loss(
    model: &RnModel,
    x: &Tensor,
    y: &[TokenId],
    seg: &Segmentation,
    triggers: &[usize],
    gamma: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = g.register_params(&model.params);
    let xv = g.leaf(x.clone());
    let loss = joint_loss_graph(&mut g, &vars, xv, y, seg, triggers, &model.cfg, gamma)?;
    let value = g.value(loss).scalar_value();
    if !value.is_finite() {
        return Err(Error::numeric(
            "joint_loss: non-finite loss (target sequence infeasible for CTC?)",
        ));
    }
    Ok(value)
}

/// Draw a segmentation from boundary probabilities. A final boundary at T'
/// is always forced. `Golden` expects hard 0/1 probabilities (the labels).
pub fn sample_boundaries(p: &BoundaryProbs, mode: BoundaryMode, seed: u64) -> Result<Segmentation> {
    let t_prime = p.len();
    if t_prime == 0 {
        return Err(Error::invalid("sample_boundaries: empty probabilities"));
    }
    match mode {
        BoundaryMode::Sampled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ends: Vec<usize> = p
                .values()
                .iter()
                .enumerate()
                .filter_map(|(i, &pi)| rng.random_bool(pi).then_some(i + 1))
                .collect();
            if ends.is_empty() {
                Segmentation::single(t_prime)
            } else {
                Segmentation::new(ends)?.with_final(t_prime)
            }
        }
        BoundaryMode::Golden => {
            let ends: Vec<usize> = p
                .values()
                .iter()
                .enumerate()
                .filter_map(|(i, &pi)| (pi >= 0.5).then_some(i + 1))
                .collect();
            if ends.is_empty() {
                Segmentation::single(t_prime)
            } else {
                Segmentation::new(ends)?.with_final(t_prime)
            }
        }
        BoundaryMode::Thresholded { sigma } => threshold_decide(p, sigma),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoutEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn utterance_labels(u: &Utterance) -> Result<BoundaryLabels> {
    let t_prime = subsampled_len(u.features.rows());
    labels_from_alignment(&u.alignment, SUBSAMPLE_RATE, t_prime)
}

/// Exact-position boundary precision/recall/F1 at sigma = 0.5.
pub fn boundary_f1(model: &ScoutModel, utterances: &[Utterance]) -> Result<(f64, f64, f64)> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for u in utterances {
        let labels = utterance_labels(u)?;
        let probs = model.forward(&u.features)?;
        let predicted = raw_boundaries(&probs, 0.5);
        let golden: Vec<usize> = labels
            .values()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i + 1))
            .collect();
        for p in &predicted {
            if golden.contains(p) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for gpos in &golden {
            if !predicted.contains(gpos) {
                fn_ += 1;
            }
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Train the scout on alignment labels with Adam. Deterministic under a
/// fixed seed; per-epoch loss and held-out boundary precision/recall/F1 are
/// returned as history.
pub fn train_scout(
    model: &mut ScoutModel,
    train: &[Utterance],
    heldout: &[Utterance],
    config: &TrainConfig,
) -> Result<Vec<ScoutEpoch>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("train_scout: empty corpus"));
    }
    let mut optimizer = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.epochs);
    let cfg = model.cfg.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &idx in &order {
            let u = &train[idx];
            let labels = utterance_labels(u)?;
            let mut g = Graph::new();
            let vars = g.register_params(&model.params);
            let xv = g.leaf(u.features.clone());
            let loss = scout_loss_graph(&mut g, &vars, xv, &labels, &cfg, config.pos_weight)?;
            let t_prime = labels.len().max(1);
            let loss = g.scale(loss, 1.0 / t_prime as f64);
            total += g.value(loss).scalar_value();
            let grads = g.gradients(loss)?;
            optimizer.step(&mut model.params, &grads)?;
        }
        let (precision, recall, f1) = boundary_f1(model, heldout)?;
        history.push(ScoutEpoch {
            epoch,
            loss: total / train.len() as f64,
            precision,
            recall,
            f1,
        });
    }
    Ok(history)
}

#[derive(Debug, Clone, Serialize)]
pub struct RnEpoch {
    pub phase: &'static str,
    pub epoch: usize,
    pub loss: f64,
}

/// Two-phase recognition-network training: offline pretraining with full
/// context, then streaming fine-tuning with boundaries from the configured
/// source and per-token triggers from the pretrained model's best Viterbi
/// alignment. The final model is the parameter-wise mean of the last
/// `checkpoint_average` fine-tuning checkpoints.
pub fn train_rn(
    model: &mut RnModel,
    train: &[Utterance],
    scout: Option<&ScoutModel>,
    config: &TrainConfig,
) -> Result<Vec<RnEpoch>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("train_rn: empty corpus"));
    }
    if matches!(config.boundary_mode, BoundaryMode::Sampled | BoundaryMode::Thresholded { .. })
        && scout.is_none()
    {
        return Err(Error::invalid(
            "train_rn: sampled/thresholded boundaries need a scout model",
        ));
    }

    let mut optimizer = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let cfg = model.cfg.clone();

    // Phase 1: offline pretraining, full attention, every token sees T'.
    for epoch in 0..config.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &idx in &order {
            let u = &train[idx];
            let t_prime = subsampled_len(u.features.rows());
            let seg = Segmentation::single(t_prime)?;
            let triggers: Vec<usize> = (1..=u.tokens.len()).map(|k| k.min(t_prime)).collect();
            let mut g = Graph::new();
            let vars = g.register_params(&model.params);
            let xv = g.leaf(u.features.clone());
            let loss =
                joint_loss_graph(&mut g, &vars, xv, &u.tokens, &seg, &triggers, &cfg, config.gamma)?;
            let value = g.value(loss).scalar_value();
            if !value.is_finite() {
                return Err(Error::numeric(format!("{}: non-finite pretraining loss", u.id)));
            }
            total += value;
            let grads = g.gradients(loss)?;
            optimizer.step(&mut model.params, &grads)?;
        }
        history.push(RnEpoch { phase: "offline", epoch, loss: total / train.len() as f64 });
    }

    // Triggers from the pretrained offline model, computed once.
    let mut triggers: Vec<Vec<usize>> = Vec::with_capacity(train.len());
    for u in train {
        let t_prime = subsampled_len(u.features.rows());
        let seg = Segmentation::single(t_prime)?;
        let h = encode_with_boundaries(model, &u.features, &seg)?;
        let post = CtcPosterior::new(ctc_posterior_rows(model, &h)?)?;
        let t = ctc_viterbi_align(&post, &u.tokens).map_err(|e| {
            Error::data(format!("{}: trigger alignment failed: {e}", u.id))
        })?;
        triggers.push(t);
    }

    // Scout probabilities for boundary sampling, computed once per utterance.
    let scout_probs: Option<Vec<BoundaryProbs>> = match (&config.boundary_mode, scout) {
        (BoundaryMode::Golden, _) => None,
        (_, Some(s)) => Some(
            train
                .iter()
                .map(|u| s.forward(&u.features))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => unreachable!("checked above"),
    };

    // Phase 2: streaming fine-tuning with boundary-masked attention.
    let mut checkpoints: Vec<Params> = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &idx in &order {
            let u = &train[idx];
            let t_prime = subsampled_len(u.features.rows());
            let seg = match config.boundary_mode {
                BoundaryMode::Golden => utterance_labels(u)?.to_segmentation()?,
                mode => {
                    let probs = &scout_probs.as_ref().unwrap()[idx];
                    let draw_seed = config
                        .seed
                        .wrapping_mul(0x9e3779b97f4a7c15)
                        .wrapping_add((epoch as u64) << 32)
                        .wrapping_add(idx as u64);
                    sample_boundaries(probs, mode, draw_seed)?
                }
            };
            debug_assert_eq!(seg.last(), t_prime);
            let mut g = Graph::new();
            let vars = g.register_params(&model.params);
            let xv = g.leaf(u.features.clone());
            let loss = joint_loss_graph(
                &mut g,
                &vars,
                xv,
                &u.tokens,
                &seg,
                &triggers[idx],
                &cfg,
                config.gamma,
            )?;
            let value = g.value(loss).scalar_value();
            if !value.is_finite() {
                return Err(Error::numeric(format!("{}: non-finite fine-tuning loss", u.id)));
            }
            total += value;
            let grads = g.gradients(loss)?;
            optimizer.step(&mut model.params, &grads)?;
        }
        checkpoints.push(model.params.clone());
        if checkpoints.len() > config.checkpoint_average {
            checkpoints.remove(0);
        }
        history.push(RnEpoch { phase: "streaming", epoch, loss: total / train.len() as f64 });
    }

    if !checkpoints.is_empty() {
        model.params = Params::average(&checkpoints)?;
    }
    Ok(history)
}

/// Teacher-forced token accuracy under a given segmentation: fraction of
/// target positions whose argmax decoder output matches the target.
pub fn teacher_forced_accuracy(
    model: &RnModel,
    x: &Tensor,
    y: &[TokenId],
    seg: &Segmentation,
    triggers: &[usize],
) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::invalid("accuracy: empty target sequence"));
    }
    let mut g = Graph::new();
    let vars = g.register_params(&model.params);
    let xv = g.leaf(x.clone());
    let h = encode_graph(&mut g, &vars, xv, seg, &model.cfg)?;
    let ends: Vec<usize> = triggers
        .iter()
        .map(|&t| {
            seg.segment_end(t)
                .ok_or_else(|| Error::invalid(format!("accuracy: trigger {t} beyond T'")))
        })
        .collect::<Result<_>>()?;
    let dist = decoder_distributions_graph(&mut g, &vars, y, &ends, h, &model.cfg)?;
    let probs = g.value(dist);
    let mut hits = 0usize;
    for (k, &target) in y.iter().enumerate() {
        let row = probs.row(k);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.total_cmp(b))
            .map(|(i, _)| i)
            .unwrap();
        if argmax == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::ctc_forward_logprob;
    use crate::data::{generate_corpus, SyntheticCorpusSpec};
    use crate::numerics::finite_difference_check;
    use crate::scout::ScoutConfig;
    use crate::transformer::StackConfig;
    use rand::SeedableRng;

    fn tiny_rn(seed: u64) -> RnModel {
        RnModel::init(
            RnConfig {
                feat_dim: 2,
                vocab: 3,
                encoder: StackConfig { layers: 1, d: 4, d_ff: 6, heads: 2 },
                decoder: StackConfig { layers: 1, d: 4, d_ff: 6, heads: 2 },
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn gamma_extremes_select_single_branches() {
        let model = tiny_rn(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randomize(12, 2, 1.0, &mut rng);
        let t_prime = subsampled_len(12);
        let seg = Segmentation::single(t_prime).unwrap();
        let y = vec![0, 2];
        let triggers = vec![1, 2];

        // gamma=0: pure CTC loss.
        let loss0 = joint_loss(&model, &x, &y, &seg, &triggers, 0.0).unwrap();
        let h = encode_with_boundaries(&model, &x, &seg).unwrap();
        let post = CtcPosterior::new(ctc_posterior_rows(&model, &h).unwrap()).unwrap();
        let ctc_ll = ctc_forward_logprob(&post, &y).unwrap();
        assert!((loss0 + ctc_ll).abs() <= 1e-10);

        // gamma=1: pure attention loss.
        let loss1 = joint_loss(&model, &x, &y, &seg, &triggers, 1.0).unwrap();
        let s2s = crate::decoding::s2s_score(&model, &y, &h).unwrap();
        assert!((loss1 + s2s).abs() <= 1e-10);

        // gamma=0.7 decomposes into the weighted sum of the two.
        let loss = joint_loss(&model, &x, &y, &seg, &triggers, 0.7).unwrap();
        assert!((loss - (0.7 * loss1 + 0.3 * loss0)).abs() <= 1e-10);
    }

    #[test]
    fn joint_loss_with_single_segment_equals_offline() {
        let model = tiny_rn(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randomize(16, 2, 1.0, &mut rng);
        let t_prime = subsampled_len(16);
        let seg = Segmentation::single(t_prime).unwrap();
        let y = vec![1];
        // Trigger anywhere: all segments end at T'.
        let a = joint_loss(&model, &x, &y, &seg, &[1], 0.7).unwrap();
        let b = joint_loss(&model, &x, &y, &seg, &[t_prime], 0.7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn joint_loss_gradients_match_finite_differences() {
        let model = tiny_rn(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randomize(8, 2, 1.0, &mut rng);
        let t_prime = subsampled_len(8);
        let seg = Segmentation::new(vec![1, t_prime]).unwrap();
        let y = vec![0, 2];
        let triggers = vec![1, 2];
        let cfg = model.cfg.clone();
        for gamma in [0.0, 0.7, 1.0] {
            let x = x.clone();
            let seg = seg.clone();
            let y = y.clone();
            let triggers = triggers.clone();
            let cfg = cfg.clone();
            let err = finite_difference_check(
                move |g, vars| {
                    let xv = g.leaf(x.clone());
                    joint_loss_graph(g, vars, xv, &y, &seg, &triggers, &cfg, gamma)
                },
                &model.params,
                1e-4,
            )
            .unwrap();
            assert!(err <= 1e-4, "gamma={gamma}: relative error {err}");
        }
    }

    #[test]
    fn infeasible_target_is_an_error() {
        let model = tiny_rn(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // T = 4 -> T' = 1 frame; two tokens cannot fit.
        let x = Tensor::randomize(4, 2, 1.0, &mut rng);
        let seg = Segmentation::single(1).unwrap();
        assert!(joint_loss(&model, &x, &[0, 0], &seg, &[1, 1], 0.0).is_err());
    }

    #[test]
    fn sample_boundaries_deterministic_cases() {
        // p = 1 at frames 3 and 7, else 0.
        let mut values = vec![0.0; 10];
        values[2] = 1.0;
        values[6] = 1.0;
        let p = BoundaryProbs::new(values).unwrap();
        let seg = sample_boundaries(&p, BoundaryMode::Sampled, 1).unwrap();
        assert_eq!(seg.ends(), &[3, 7, 10]);
        let seg = sample_boundaries(&p, BoundaryMode::Golden, 99).unwrap();
        assert_eq!(seg.ends(), &[3, 7, 10]);

        // p = 0 everywhere: only the forced final boundary.
        let p = BoundaryProbs::new(vec![0.0; 6]).unwrap();
        let seg = sample_boundaries(&p, BoundaryMode::Sampled, 2).unwrap();
        assert_eq!(seg.ends(), &[6]);
    }

    #[test]
    fn sampled_boundaries_match_bernoulli_rate() {
        let p = BoundaryProbs::new(vec![0.3; 10]).unwrap();
        let mut fires = 0usize;
        let draws = 10_000usize;
        for seed in 0..draws {
            let seg = sample_boundaries(&p, BoundaryMode::Sampled, seed as u64).unwrap();
            // Count raw fires at frames 1..9 (frame 10 may be forced).
            fires += seg.ends().iter().filter(|&&g| g < 10).count();
        }
        let rate = fires as f64 / (draws * 9) as f64;
        assert!((rate - 0.3).abs() <= 0.02, "empirical rate {rate}");
    }

    fn tiny_corpus(seed: u64) -> crate::data::Corpus {
        generate_corpus(&SyntheticCorpusSpec {
            vocab_size: 4,
            template_frames: (12, 16),
            feat_dim: 2,
            noise_std: 0.05,
            silence_frames: (0, 2),
            utterance_words: (1, 2),
            num_train: 6,
            num_test: 2,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn scout_training_is_reproducible_and_loss_decreases() {
        let corpus = tiny_corpus(11);
        let scout_cfg = ScoutConfig {
            feat_dim: 2,
            stack: StackConfig { layers: 1, d: 4, d_ff: 6, heads: 2 },
        };
        let config = TrainConfig { epochs: 3, seed: 5, ..TrainConfig::default() };
        let mut a = ScoutModel::init(scout_cfg.clone(), 5).unwrap();
        let hist_a = train_scout(&mut a, &corpus.train, &corpus.test, &config).unwrap();
        let mut b = ScoutModel::init(scout_cfg, 5).unwrap();
        let hist_b = train_scout(&mut b, &corpus.train, &corpus.test, &config).unwrap();
        assert_eq!(a.params, b.params, "same seed must give bit-identical weights");
        assert_eq!(hist_a.len(), 3);
        for (x, y) in hist_a.iter().zip(&hist_b) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        }
        assert!(hist_a[1].loss < hist_a[0].loss);
        assert!(hist_a[2].loss < hist_a[1].loss);
    }

    #[test]
    fn rn_overfits_one_utterance() {
        let corpus = tiny_corpus(13);
        let u = corpus
            .train
            .iter()
            .find(|u| !u.tokens.is_empty())
            .expect("corpus has utterances");
        let mut model = tiny_rn(9);
        let config = TrainConfig {
            epochs: 0,
            pretrain_epochs: 60,
            learning_rate: 0.003,
            gamma: 0.7,
            checkpoint_average: 1,
            ..TrainConfig::default()
        };
        train_rn(&mut model, std::slice::from_ref(u), None, &config).unwrap();
        let t_prime = subsampled_len(u.features.rows());
        let seg = Segmentation::single(t_prime).unwrap();
        let triggers: Vec<usize> = (1..=u.tokens.len()).collect();
        let acc = teacher_forced_accuracy(&model, &u.features, &u.tokens, &seg, &triggers).unwrap();
        assert_eq!(acc, 1.0, "teacher-forced accuracy must reach 100%");
    }

    #[test]
    fn rn_training_requires_scout_for_sampled_mode() {
        let corpus = tiny_corpus(15);
        let mut model = tiny_rn(10);
        let config = TrainConfig {
            boundary_mode: BoundaryMode::Sampled,
            epochs: 1,
            pretrain_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train_rn(&mut model, &corpus.train, None, &config).is_err());
    }

    #[test]
    fn checkpoint_average_of_identical_checkpoints_is_identity() {
        let model = tiny_rn(11);
        let avg = Params::average(&[model.params.clone(), model.params.clone()]).unwrap();
        assert_eq!(avg, model.params);
    }
}
