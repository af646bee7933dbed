//! Recognition-network encoder with adaptive-boundary attention, in two
//! forms that must agree: an offline boundary-masked pass used for training,
//! and an incremental segment-by-segment pass with cached hidden states used
//! for streaming decode. Both run the identical row-wise arithmetic, so the
//! incremental rows reproduce the offline ones bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{layer_norm_rows, masked_softmax, BoolMat, Graph, ParamVars, Params, Tensor, Var};
use crate::transformer::{
    boundary_mask, encoder_stack, init_decoder_stack, init_encoder_stack, init_frontend,
    positional_encoding, subsample, subsampled_len, StackConfig, Segmentation, SUBSAMPLE_RATE,
};

const LN_EPS: f64 = 1e-5;

/// Shape of the recognition network. `vocab` counts word tokens only; CTC
/// adds a trailing blank, the decoder adds start/end tokens.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RnConfig {
    pub feat_dim: usize,
    pub vocab: usize,
    pub encoder: StackConfig,
    pub decoder: StackConfig,
}

impl RnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 || self.vocab == 0 {
            return Err(Error::invalid("rn config: feat_dim and vocab must be >= 1"));
        }
        if self.encoder.d != self.decoder.d {
            return Err(Error::invalid("rn config: encoder and decoder width must match"));
        }
        self.encoder.validate()?;
        self.decoder.validate()
    }

    /// CTC blank sits at the reserved final posterior column.
    pub fn blank_id(&self) -> usize {
        self.vocab
    }

    pub fn ctc_dim(&self) -> usize {
        self.vocab + 1
    }

    pub fn sos_id(&self) -> usize {
        self.vocab
    }

    pub fn eos_id(&self) -> usize {
        self.vocab + 1
    }

    pub fn dec_vocab(&self) -> usize {
        self.vocab + 2
    }
}

/// Recognition network: shared CNN frontend, boundary-masked encoder, CTC
/// head, and triggered-attention decoder. Parameters live under the `rn.`
/// prefix.
#[derive(Debug, Clone)]
pub struct RnModel {
    pub cfg: RnConfig,
    pub params: Params,
}

pub const RN_PREFIX: &str = "rn";

impl RnModel {
    pub fn init(cfg: RnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.encoder.d;
        let mut params = Params::new();
        init_frontend(&mut params, "rn.frontend", cfg.feat_dim, d, &mut rng);
        init_encoder_stack(&mut params, RN_PREFIX, &cfg.encoder, &mut rng);
        let scale = (6.0 / (d + cfg.ctc_dim()) as f64).sqrt();
        params.insert("rn.ctc.w", Tensor::randomize(d, cfg.ctc_dim(), scale, &mut rng));
        params.insert("rn.ctc.b", Tensor::zeros(1, cfg.ctc_dim()));
        let scale = (6.0 / (cfg.dec_vocab() + d) as f64).sqrt();
        params.insert("rn.embed", Tensor::randomize(cfg.dec_vocab(), d, scale, &mut rng));
        init_decoder_stack(&mut params, RN_PREFIX, &cfg.decoder, &mut rng);
        let scale = (6.0 / (d + cfg.dec_vocab()) as f64).sqrt();
        params.insert("rn.out.w", Tensor::randomize(d, cfg.dec_vocab(), scale, &mut rng));
        params.insert("rn.out.b", Tensor::zeros(1, cfg.dec_vocab()));
        Ok(RnModel { cfg, params })
    }
}

/// Graph-level boundary-masked encode: frontend, positions, then the encoder
/// stack under `boundary_mask(seg, T')`. Used by training, where gradients
/// flow through the whole thing.
pub fn encode_graph(
    g: &mut Graph,
    vars: &ParamVars,
    x: Var,
    seg: &Segmentation,
    cfg: &RnConfig,
) -> Result<Var> {
    let h = subsample(g, x, vars, "rn.frontend")?;
    let t_prime = g.value(h).rows();
    let pe = g.leaf(positional_encoding(t_prime, cfg.encoder.d));
    let h = g.add(h, pe)?;
    let mask = boundary_mask(seg, t_prime)?;
    encoder_stack(g, h, &mask, vars, RN_PREFIX, &cfg.encoder)
}

/// Offline encode on plain tensors.
pub fn encode_with_boundaries(model: &RnModel, x: &Tensor, seg: &Segmentation) -> Result<Tensor> {
    if x.cols() != model.cfg.feat_dim {
        return Err(Error::shape(format!(
            "encode: feature dim {} != {}",
            x.cols(),
            model.cfg.feat_dim
        )));
    }
    let mut g = Graph::new();
    let vars = g.register_params(&model.params);
    let xv = g.leaf(x.clone());
    let out = encode_graph(&mut g, &vars, xv, seg, &model.cfg)?;
    Ok(g.value(out).clone())
}

/// Incremental evaluation state for one frontend + encoder stack. Raw input
/// frames accumulate; downsampled rows are produced segment by segment, each
/// new block attending over all rows up to its boundary. `layers[l]` holds
/// the input rows of layer `l`; the last entry is the stack output.
#[derive(Debug, Clone)]
pub(crate) struct IncrementalStack {
    frontier: usize,
    raw: Vec<Vec<f64>>,
    conv1: Vec<Vec<f64>>,
    layers: Vec<Vec<Vec<f64>>>,
}

impl IncrementalStack {
    pub(crate) fn new(n_layers: usize) -> Self {
        IncrementalStack {
            frontier: 0,
            raw: Vec::new(),
            conv1: Vec::new(),
            layers: vec![Vec::new(); n_layers + 1],
        }
    }

    pub(crate) fn frontier(&self) -> usize {
        self.frontier
    }

    pub(crate) fn raw_len(&self) -> usize {
        self.raw.len()
    }

    pub(crate) fn push_raw(&mut self, frame: &[f64], feat_dim: usize) -> Result<()> {
        if frame.len() != feat_dim {
            return Err(Error::shape(format!(
                "stream: feature dim {} != {}",
                frame.len(),
                feat_dim
            )));
        }
        self.raw.push(frame.to_vec());
        Ok(())
    }

    /// Output rows of the final layer in `0..frontier`.
    pub(crate) fn output_rows(&self) -> &[Vec<f64>] {
        self.layers.last().unwrap()
    }

    fn conv_row(
        &self,
        source: &dyn Fn(usize) -> Option<Vec<f64>>,
        len_limit: usize,
        row: usize,
        in_dim: usize,
        w: &Tensor,
        b: &Tensor,
    ) -> Result<Vec<f64>> {
        // Window rows 2*row-1 ..= 2*row+1 with zero padding outside
        // [0, len_limit).
        let mut window = Tensor::zeros(1, 3 * in_dim);
        for k in 0..3usize {
            let src = 2 * row + k;
            if src < 1 || src > len_limit {
                continue;
            }
            let Some(vals) = source(src - 1) else { continue };
            for j in 0..in_dim {
                window.set(0, k * in_dim + j, vals[j]);
            }
        }
        let out = window.matmul(w)?.add_row_broadcast(b)?.relu();
        Ok(out.row(0).to_vec())
    }

    /// Advance to `boundary` downsampled rows (1-based frontier), consuming
    /// the raw frames pushed so far. Returns the new output rows.
    pub(crate) fn advance(
        &mut self,
        params: &Params,
        prefix: &str,
        stack: &StackConfig,
        boundary: usize,
    ) -> Result<Vec<Vec<f64>>> {
        if boundary <= self.frontier {
            return Err(Error::invalid(format!(
                "incremental encode: boundary {boundary} does not advance frontier {}",
                self.frontier
            )));
        }
        let t_prime_max = subsampled_len(self.raw.len().max(1));
        if boundary > t_prime_max {
            return Err(Error::invalid(format!(
                "incremental encode: boundary {boundary} beyond available input (T'={t_prime_max})"
            )));
        }

        // The utterance has ended iff the final block extends past the last
        // full conv window; only then does right zero padding apply.
        let ended = self.raw.len() < SUBSAMPLE_RATE * boundary;
        let conv1_total = if ended { self.raw.len().div_ceil(2) } else { usize::MAX };
        let conv1_needed = (2 * boundary).min(conv1_total);
        let w1 = params.get(&format!("{prefix}.frontend.conv1.w"))?;
        let b1 = params.get(&format!("{prefix}.frontend.conv1.b"))?;
        let feat_dim = w1.rows() / 3;
        let raw = self.raw.clone();
        for j in self.conv1.len()..conv1_needed {
            let row = self.conv_row(
                &|i| raw.get(i).cloned(),
                if ended { self.raw.len() } else { usize::MAX },
                j,
                feat_dim,
                w1,
                b1,
            )?;
            self.conv1.push(row);
        }

        let w2 = params.get(&format!("{prefix}.frontend.conv2.w"))?;
        let b2 = params.get(&format!("{prefix}.frontend.conv2.b"))?;
        let d = stack.d;
        let pe = positional_encoding(boundary, d);
        let conv1 = self.conv1.clone();
        let conv1_limit = if ended { conv1_total } else { usize::MAX };
        for o in self.frontier..boundary {
            let mut row = self.conv_row(&|i| conv1.get(i).cloned(), conv1_limit, o, d, w2, b2)?;
            for j in 0..d {
                row[j] += pe.at(o, j);
            }
            self.layers[0].push(row);
        }

        // Encoder layers: new rows query everything up to the boundary.
        let n_new = boundary - self.frontier;
        for l in 0..stack.layers {
            let base = format!("{prefix}.enc{l}");
            let all_in = Tensor::from_rows(&self.layers[l][..boundary])?;
            let gain1 = params.get(&format!("{base}.ln1.gain"))?;
            let bias1 = params.get(&format!("{base}.ln1.bias"))?;
            let n1_all = layer_norm_rows(&all_in, gain1, bias1, LN_EPS)?;
            let n1_new = Tensor::from_rows(
                &(self.frontier..boundary)
                    .map(|r| n1_all.row(r).to_vec())
                    .collect::<Vec<_>>(),
            )?;

            let scale = 1.0 / (stack.head_dim() as f64).sqrt();
            let mut heads = Vec::with_capacity(stack.heads);
            let full = BoolMat::all_true(n_new, boundary);
            for h in 0..stack.heads {
                let wq = params.get(&format!("{base}.attn.wq{h}"))?;
                let wk = params.get(&format!("{base}.attn.wk{h}"))?;
                let wv = params.get(&format!("{base}.attn.wv{h}"))?;
                let qh = n1_new.matmul(wq)?;
                let kh = n1_all.matmul(wk)?;
                let scores = qh.matmul(&kh.transpose())?.scale(scale);
                let weights = masked_softmax(&scores, &full)?;
                let vh = n1_all.matmul(wv)?;
                heads.push(weights.matmul(&vh)?);
            }
            let mut cat = Tensor::zeros(n_new, d);
            let dh = stack.head_dim();
            for (h, head) in heads.iter().enumerate() {
                for r in 0..n_new {
                    for c in 0..dh {
                        cat.set(r, h * dh + c, head.at(r, c));
                    }
                }
            }
            let wo = params.get(&format!("{base}.attn.wo"))?;
            let attn = cat.matmul(wo)?;

            let new_in = Tensor::from_rows(&self.layers[l][self.frontier..boundary])?;
            let h_res = new_in.add(&attn)?;
            let gain2 = params.get(&format!("{base}.ln2.gain"))?;
            let bias2 = params.get(&format!("{base}.ln2.bias"))?;
            let n2 = layer_norm_rows(&h_res, gain2, bias2, LN_EPS)?;
            let ffw1 = params.get(&format!("{base}.ff.w1"))?;
            let ffb1 = params.get(&format!("{base}.ff.b1"))?;
            let ffw2 = params.get(&format!("{base}.ff.w2"))?;
            let ffb2 = params.get(&format!("{base}.ff.b2"))?;
            let ff = n2
                .matmul(ffw1)?
                .add_row_broadcast(ffb1)?
                .relu()
                .matmul(ffw2)?
                .add_row_broadcast(ffb2)?;
            let out = h_res.add(&ff)?;
            for r in 0..n_new {
                self.layers[l + 1].push(out.row(r).to_vec());
            }
        }

        self.frontier = boundary;
        let out = self.layers[stack.layers][boundary - n_new..boundary].to_vec();
        Ok(out)
    }
}

/// Per-utterance cache of encoder hidden states retained across segment
/// encodes. The frontier only moves forward.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    inner: IncrementalStack,
}

impl EncoderCache {
    pub fn new(model: &RnModel) -> Self {
        EncoderCache {
            inner: IncrementalStack::new(model.cfg.encoder.layers),
        }
    }

    /// Frontier boundary g_current (downsampled rows encoded so far).
    pub fn frontier(&self) -> usize {
        self.inner.frontier()
    }

    pub fn raw_len(&self) -> usize {
        self.inner.raw_len()
    }

    /// Feed raw frames, then encode rows `(frontier, boundary]`. The returned
    /// tensor holds exactly the new rows; the cache advances to `boundary`.
    pub fn advance(
        &mut self,
        model: &RnModel,
        new_frames: &[Vec<f64>],
        boundary: usize,
    ) -> Result<Tensor> {
        for f in new_frames {
            self.inner.push_raw(f, model.cfg.feat_dim)?;
        }
        let rows = self
            .inner
            .advance(&model.params, RN_PREFIX, &model.cfg.encoder, boundary)?;
        Tensor::from_rows(&rows)
    }

    /// All encoder output rows `1..=frontier` as one tensor.
    pub fn output(&self) -> Result<Tensor> {
        Tensor::from_rows(self.inner.output_rows())
    }
}

/// Convenience wrapper: run the whole utterance through the incremental path
/// under the given segmentation, returning the concatenated output rows.
pub fn encode_incremental_full(
    model: &RnModel,
    x: &Tensor,
    seg: &Segmentation,
) -> Result<Tensor> {
    let mut cache = EncoderCache::new(model);
    let mut fed = 0usize;
    for &g in seg.ends() {
        // Frames available when the boundary fires: everything up to 4*g,
        // or the rest of the utterance for the final boundary.
        let upto = (SUBSAMPLE_RATE * g).min(x.rows()).max(fed);
        let upto = if g == seg.last() { x.rows() } else { upto };
        let frames: Vec<Vec<f64>> = (fed..upto).map(|r| x.row(r).to_vec()).collect();
        fed = upto;
        cache.advance(model, &frames, g)?;
    }
    cache.output()
}

/// CTC log-posterior rows for encoder rows: `log_softmax(H w + b)`.
pub fn ctc_posterior_rows(model: &RnModel, h_rows: &Tensor) -> Result<Tensor> {
    let w = model.params.get("rn.ctc.w")?;
    let b = model.params.get("rn.ctc.b")?;
    let logits = h_rows.matmul(w)?.add_row_broadcast(b)?;
    Ok(crate::numerics::log_softmax_rows(&logits))
}
