//! Multihead attention, attention-mask construction, pre-norm encoder and
//! decoder layers, sinusoidal positions, and the convolutional subsampling
//! frontend shared by the scout and the recognizer.
//!
//! Frame indices follow the 1-based convention used throughout: downsampled
//! frame `i` covers input frames `4(i-1)+1 ..= 4i` at the 10 ms rate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{BoolMat, Graph, ParamVars, Params, Tensor, Var};

/// Downsampling rate of the convolutional frontend: 10 ms frames in, 40 ms
/// frames out.
pub const SUBSAMPLE_RATE: usize = 4;

const LN_EPS: f64 = 1e-5;

/// Strictly increasing 1-based end boundaries `g_1..g_J` at the downsampled
/// rate. The last boundary is the end of the final segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    ends: Vec<usize>,
}

impl Segmentation {
    pub fn new(ends: Vec<usize>) -> Result<Self> {
        if ends.is_empty() {
            return Err(Error::invalid("segmentation: empty"));
        }
        if ends[0] == 0 || ends.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "segmentation: boundaries must be strictly increasing and >= 1, got {ends:?}"
            )));
        }
        Ok(Segmentation { ends })
    }

    /// Append a final boundary at `t_prime` unless one is already there.
    pub fn with_final(mut self, t_prime: usize) -> Result<Self> {
        let last = *self.ends.last().unwrap();
        if last > t_prime {
            return Err(Error::invalid(format!(
                "segmentation: boundary {last} exceeds length {t_prime}"
            )));
        }
        if last < t_prime {
            self.ends.push(t_prime);
        }
        Ok(self)
    }

    pub fn single(t_prime: usize) -> Result<Self> {
        Segmentation::new(vec![t_prime])
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn last(&self) -> usize {
        *self.ends.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.ends.len()
    }

    /// End boundary of the segment containing 1-based frame `i`.
    pub fn segment_end(&self, i: usize) -> Option<usize> {
        self.ends.iter().copied().find(|&g| g >= i)
    }

    /// Segment lengths in frames, with g_0 = 0.
    pub fn lengths(&self) -> Vec<usize> {
        let mut prev = 0;
        self.ends
            .iter()
            .map(|&g| {
                let len = g - prev;
                prev = g;
                len
            })
            .collect()
    }
}

/// Boolean attention mask; rows are queries, columns keys. Every row must
/// keep at least one allowed column.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask(BoolMat);

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask(BoolMat::all_true(rows, cols))
    }

    pub fn from_bool_mat(m: BoolMat) -> Result<Self> {
        for r in 0..m.rows() {
            if !m.row(r).iter().any(|&b| b) {
                return Err(Error::invalid(format!("attention mask: row {r} fully masked")));
            }
        }
        Ok(AttentionMask(m))
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.0.at(r, c)
    }

    pub fn as_bool_mat(&self) -> &BoolMat {
        &self.0
    }
}

/// Row `i` attends to columns `1..=i` (1-based).
pub fn causal_mask(t_prime: usize) -> Result<AttentionMask> {
    if t_prime == 0 {
        return Err(Error::invalid("causal_mask: length must be >= 1"));
    }
    let mut m = BoolMat::new(t_prime, t_prime, vec![false; t_prime * t_prime])?;
    for r in 0..t_prime {
        for c in 0..=r {
            m.set(r, c, true);
        }
    }
    AttentionMask::from_bool_mat(m)
}

/// Adaptive look-ahead mask: a row in segment `(g_{j-1}, g_j]` attends to
/// columns `1..=g_j`. The segmentation must end exactly at `t_prime`.
pub fn boundary_mask(seg: &Segmentation, t_prime: usize) -> Result<AttentionMask> {
    if seg.last() > t_prime {
        return Err(Error::invalid(format!(
            "boundary_mask: boundary {} exceeds T'={t_prime}",
            seg.last()
        )));
    }
    if seg.last() != t_prime {
        return Err(Error::invalid(format!(
            "boundary_mask: final boundary {} must equal T'={t_prime}",
            seg.last()
        )));
    }
    let mut m = BoolMat::new(t_prime, t_prime, vec![false; t_prime * t_prime])?;
    for r in 0..t_prime {
        let end = seg.segment_end(r + 1).unwrap();
        for c in 0..end {
            m.set(r, c, true);
        }
    }
    AttentionMask::from_bool_mat(m)
}

/// Cross-attention mask with one query row per output token, each allowed to
/// see encoder columns `1..=ends[k]`.
pub fn prefix_cross_mask(ends: &[usize], enc_len: usize) -> Result<AttentionMask> {
    let mut m = BoolMat::new(ends.len(), enc_len, vec![false; ends.len() * enc_len])?;
    for (r, &end) in ends.iter().enumerate() {
        if end == 0 || end > enc_len {
            return Err(Error::invalid(format!(
                "prefix_cross_mask: end {end} out of range 1..={enc_len}"
            )));
        }
        for c in 0..end {
            m.set(r, c, true);
        }
    }
    AttentionMask::from_bool_mat(m)
}

/// Sinusoidal absolute positions, deterministic in (len, d).
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(len, d);
    for pos in 0..len {
        for j in 0..d {
            let angle = pos as f64 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set(pos, j, v);
        }
    }
    pe
}

/// Per-head projections of one multihead attention block (per-head W_q, W_k,
/// W_v of `d x d_head`, output projection `d x d`).
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: usize,
    pub d: usize,
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
}

impl AttentionParams {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::invalid(format!(
                "attention: d={} not divisible by heads={}",
                self.d, self.heads
            )));
        }
        let dh = self.d / self.heads;
        for mats in [&self.wq, &self.wk, &self.wv] {
            if mats.len() != self.heads
                || mats.iter().any(|m| m.rows() != self.d || m.cols() != dh)
            {
                return Err(Error::shape("attention: per-head matrix must be d x d_head"));
            }
        }
        if self.wo.rows() != self.d || self.wo.cols() != self.d {
            return Err(Error::shape("attention: output projection must be d x d"));
        }
        Ok(())
    }

    /// Store under `{prefix}.wq0.. / wk0.. / wv0.. / wo`.
    pub fn insert_into(&self, params: &mut Params, prefix: &str) {
        for h in 0..self.heads {
            params.insert(format!("{prefix}.wq{h}"), self.wq[h].clone());
            params.insert(format!("{prefix}.wk{h}"), self.wk[h].clone());
            params.insert(format!("{prefix}.wv{h}"), self.wv[h].clone());
        }
        params.insert(format!("{prefix}.wo"), self.wo.clone());
    }
}

/// Shape of one encoder or decoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub d: usize,
    pub d_ff: usize,
    pub heads: usize,
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("stack: needs at least one layer"));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::invalid(format!(
                "stack: d={} not divisible by heads={}",
                self.d, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

fn init_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    // Xavier-style uniform bound.
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::randomize(rows, cols, scale, rng)
}

pub fn init_attention<R: Rng>(params: &mut Params, prefix: &str, d: usize, heads: usize, rng: &mut R) {
    let dh = d / heads;
    for h in 0..heads {
        params.insert(format!("{prefix}.wq{h}"), init_matrix(d, dh, rng));
        params.insert(format!("{prefix}.wk{h}"), init_matrix(d, dh, rng));
        params.insert(format!("{prefix}.wv{h}"), init_matrix(d, dh, rng));
    }
    params.insert(format!("{prefix}.wo"), init_matrix(d, d, rng));
}

fn init_layer_norm(params: &mut Params, prefix: &str, d: usize) {
    params.insert(format!("{prefix}.gain"), Tensor::full(1, d, 1.0));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(1, d));
}

fn init_feed_forward<R: Rng>(params: &mut Params, prefix: &str, d: usize, d_ff: usize, rng: &mut R) {
    params.insert(format!("{prefix}.w1"), init_matrix(d, d_ff, rng));
    params.insert(format!("{prefix}.b1"), Tensor::zeros(1, d_ff));
    params.insert(format!("{prefix}.w2"), init_matrix(d_ff, d, rng));
    params.insert(format!("{prefix}.b2"), Tensor::zeros(1, d));
}

pub fn init_encoder_stack<R: Rng>(params: &mut Params, prefix: &str, cfg: &StackConfig, rng: &mut R) {
    for l in 0..cfg.layers {
        let base = format!("{prefix}.enc{l}");
        init_layer_norm(params, &format!("{base}.ln1"), cfg.d);
        init_attention(params, &format!("{base}.attn"), cfg.d, cfg.heads, rng);
        init_layer_norm(params, &format!("{base}.ln2"), cfg.d);
        init_feed_forward(params, &format!("{base}.ff"), cfg.d, cfg.d_ff, rng);
    }
}

pub fn init_decoder_stack<R: Rng>(params: &mut Params, prefix: &str, cfg: &StackConfig, rng: &mut R) {
    for l in 0..cfg.layers {
        let base = format!("{prefix}.dec{l}");
        init_layer_norm(params, &format!("{base}.ln1"), cfg.d);
        init_attention(params, &format!("{base}.self"), cfg.d, cfg.heads, rng);
        init_layer_norm(params, &format!("{base}.ln2"), cfg.d);
        init_attention(params, &format!("{base}.cross"), cfg.d, cfg.heads, rng);
        init_layer_norm(params, &format!("{base}.ln3"), cfg.d);
        init_feed_forward(params, &format!("{base}.ff"), cfg.d, cfg.d_ff, rng);
    }
}

/// Two conv layers over time (kernel 3, stride 2, zero pad 1, ReLU), taking
/// `feat_dim` channels to `d`.
pub fn init_frontend<R: Rng>(params: &mut Params, prefix: &str, feat_dim: usize, d: usize, rng: &mut R) {
    params.insert(format!("{prefix}.conv1.w"), init_matrix(3 * feat_dim, d, rng));
    params.insert(format!("{prefix}.conv1.b"), Tensor::zeros(1, d));
    params.insert(format!("{prefix}.conv2.w"), init_matrix(3 * d, d, rng));
    params.insert(format!("{prefix}.conv2.b"), Tensor::zeros(1, d));
}

/// Number of downsampled frames the frontend emits for `t` input frames.
pub fn subsampled_len(t: usize) -> usize {
    t.div_ceil(SUBSAMPLE_RATE)
}

/// Graph-level frontend: `[T x feat_dim] -> [T' x d]`, no positions added.
/// Output frame `i` never sees further than input frame `4i` (1-based).
pub fn subsample(g: &mut Graph, x: Var, vars: &ParamVars, prefix: &str) -> Result<Var> {
    if g.value(x).rows() == 0 {
        return Err(Error::invalid("subsample: empty input"));
    }
    let mut h = x;
    for conv in ["conv1", "conv2"] {
        let u = g.unfold(h, 3, 2, 1)?;
        let w = vars.var(&format!("{prefix}.{conv}.w"))?;
        let b = vars.var(&format!("{prefix}.{conv}.b"))?;
        let m = g.matmul(u, w)?;
        let m = g.add_row(m, b)?;
        h = g.relu(m);
    }
    Ok(h)
}

/// Multihead attention on the graph. `q`, `k`, `v` are `[.. x d]`; the mask
/// has one row per query row and one column per key row.
pub fn multihead_attention_graph(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: &AttentionMask,
    vars: &ParamVars,
    prefix: &str,
    cfg: &StackConfig,
) -> Result<Var> {
    let (qr, kr) = (g.value(q).rows(), g.value(k).rows());
    if g.value(q).cols() != cfg.d || g.value(k).cols() != cfg.d || g.value(v).cols() != cfg.d {
        return Err(Error::shape("attention: inputs must have width d"));
    }
    if g.value(k).rows() != g.value(v).rows() {
        return Err(Error::shape("attention: key/value row mismatch"));
    }
    if mask.rows() != qr || mask.cols() != kr {
        return Err(Error::shape(format!(
            "attention: mask {}x{} vs queries {qr} keys {kr}",
            mask.rows(),
            mask.cols()
        )));
    }
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let wq = vars.var(&format!("{prefix}.wq{h}"))?;
        let wk = vars.var(&format!("{prefix}.wk{h}"))?;
        let wv = vars.var(&format!("{prefix}.wv{h}"))?;
        let qh = g.matmul(q, wq)?;
        let kh = g.matmul(k, wk)?;
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let weights = g.masked_softmax(scores, mask.as_bool_mat())?;
        let vh = g.matmul(v, wv)?;
        heads.push(g.matmul(weights, vh)?);
    }
    let cat = g.concat_cols(&heads)?;
    let wo = vars.var(&format!("{prefix}.wo"))?;
    g.matmul(cat, wo)
}

/// Value-level multihead attention on plain tensors.
pub fn multihead_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: &AttentionMask,
    params: &AttentionParams,
) -> Result<Tensor> {
    params.validate()?;
    let cfg = StackConfig { layers: 1, d: params.d, d_ff: 1, heads: params.heads };
    let mut p = Params::new();
    params.insert_into(&mut p, "mha");
    let mut g = Graph::new();
    let vars = g.register_params(&p);
    let (vq, vk, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
    let out = multihead_attention_graph(&mut g, vq, vk, vv, mask, &vars, "mha", &cfg)?;
    Ok(g.value(out).clone())
}

fn layer_norm_named(g: &mut Graph, x: Var, vars: &ParamVars, prefix: &str) -> Result<Var> {
    let gain = vars.var(&format!("{prefix}.gain"))?;
    let bias = vars.var(&format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, LN_EPS)
}

fn feed_forward(g: &mut Graph, x: Var, vars: &ParamVars, prefix: &str) -> Result<Var> {
    let w1 = vars.var(&format!("{prefix}.w1"))?;
    let b1 = vars.var(&format!("{prefix}.b1"))?;
    let w2 = vars.var(&format!("{prefix}.w2"))?;
    let b2 = vars.var(&format!("{prefix}.b2"))?;
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.relu(h);
    let h = g.matmul(h, w2)?;
    g.add_row(h, b2)
}

/// Pre-norm encoder block: self-attention and feed-forward, each wrapped in
/// residual + layer norm. Zero attention/FF weights reduce it to identity.
pub fn encoder_layer(
    g: &mut Graph,
    h: Var,
    mask: &AttentionMask,
    vars: &ParamVars,
    prefix: &str,
    cfg: &StackConfig,
) -> Result<Var> {
    let n1 = layer_norm_named(g, h, vars, &format!("{prefix}.ln1"))?;
    let attn = multihead_attention_graph(g, n1, n1, n1, mask, vars, &format!("{prefix}.attn"), cfg)?;
    let h = g.add(h, attn)?;
    let n2 = layer_norm_named(g, h, vars, &format!("{prefix}.ln2"))?;
    let ff = feed_forward(g, n2, vars, &format!("{prefix}.ff"))?;
    g.add(h, ff)
}

/// Pre-norm decoder block: causal self-attention, encoder-decoder attention
/// restricted by `cross_mask`, then feed-forward.
pub fn decoder_layer(
    g: &mut Graph,
    y: Var,
    h_enc: Var,
    self_mask: &AttentionMask,
    cross_mask: &AttentionMask,
    vars: &ParamVars,
    prefix: &str,
    cfg: &StackConfig,
) -> Result<Var> {
    let n1 = layer_norm_named(g, y, vars, &format!("{prefix}.ln1"))?;
    let sa = multihead_attention_graph(g, n1, n1, n1, self_mask, vars, &format!("{prefix}.self"), cfg)?;
    let y = g.add(y, sa)?;
    let n2 = layer_norm_named(g, y, vars, &format!("{prefix}.ln2"))?;
    let ca = multihead_attention_graph(g, n2, h_enc, h_enc, cross_mask, vars, &format!("{prefix}.cross"), cfg)?;
    let y = g.add(y, ca)?;
    let n3 = layer_norm_named(g, y, vars, &format!("{prefix}.ln3"))?;
    let ff = feed_forward(g, n3, vars, &format!("{prefix}.ff"))?;
    g.add(y, ff)
}

/// Run a whole encoder stack under one mask.
pub fn encoder_stack(
    g: &mut Graph,
    mut h: Var,
    mask: &AttentionMask,
    vars: &ParamVars,
    prefix: &str,
    cfg: &StackConfig,
) -> Result<Var> {
    for l in 0..cfg.layers {
        h = encoder_layer(g, h, mask, vars, &format!("{prefix}.enc{l}"), cfg)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = causal_mask(3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(m.allows(r, c), c <= r);
            }
        }
        // Row 1 (1-based) only sees column 1.
        assert!(m.allows(0, 0));
        assert!(!m.allows(0, 1));
    }

    #[test]
    fn boundary_mask_examples() {
        // Single segment: full attention.
        let seg = Segmentation::new(vec![5]).unwrap();
        let m = boundary_mask(&seg, 5).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                assert!(m.allows(r, c));
            }
        }
        // Per-frame boundaries: equals the causal mask.
        let seg = Segmentation::new(vec![1, 2, 3, 4, 5]).unwrap();
        assert_eq!(boundary_mask(&seg, 5).unwrap(), causal_mask(5).unwrap());
        // g=[2,5]: rows 1-2 see cols 1-2, rows 3-5 see cols 1-5.
        let seg = Segmentation::new(vec![2, 5]).unwrap();
        let m = boundary_mask(&seg, 5).unwrap();
        for r in 0..2 {
            for c in 0..5 {
                assert_eq!(m.allows(r, c), c < 2);
            }
        }
        for r in 2..5 {
            for c in 0..5 {
                assert!(m.allows(r, c));
            }
        }
    }

    #[test]
    fn boundary_mask_rejects_bad_segmentations() {
        assert!(Segmentation::new(vec![3, 2]).is_err());
        assert!(Segmentation::new(vec![0, 2]).is_err());
        let seg = Segmentation::new(vec![2, 6]).unwrap();
        assert!(boundary_mask(&seg, 5).is_err());
    }

    #[test]
    fn causal_equals_boundary_at_every_frame() {
        for t in 1..12 {
            let seg = Segmentation::new((1..=t).collect()).unwrap();
            assert_eq!(boundary_mask(&seg, t).unwrap(), causal_mask(t).unwrap());
        }
    }

    fn toy_attention(heads: usize, d: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
        let dh = d / heads;
        AttentionParams {
            heads,
            d,
            wq: (0..heads).map(|_| Tensor::randomize(d, dh, 1.0, rng)).collect(),
            wk: (0..heads).map(|_| Tensor::randomize(d, dh, 1.0, rng)).collect(),
            wv: (0..heads).map(|_| Tensor::randomize(d, dh, 1.0, rng)).collect(),
            wo: Tensor::randomize(d, d, 1.0, rng),
        }
    }

    #[test]
    fn uniform_attention_averages_values() {
        // Zero W_q/W_k give uniform weights; identity W_v/W_o pass the mean.
        let d = 3;
        let params = AttentionParams {
            heads: 1,
            d,
            wq: vec![Tensor::zeros(d, d)],
            wk: vec![Tensor::zeros(d, d)],
            wv: vec![Tensor::identity(d)],
            wo: Tensor::identity(d),
        };
        let v = Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![3.0, 6.0, -1.0]]).unwrap();
        let mask = AttentionMask::full(2, 2);
        let out = multihead_attention(&v, &v, &v, &mask, &params).unwrap();
        for r in 0..2 {
            assert!((out.at(r, 0) - 2.0).abs() < 1e-12);
            assert!((out.at(r, 1) - 3.0).abs() < 1e-12);
            assert!((out.at(r, 2) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_column_mask_copies_that_value_row() {
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = toy_attention(1, d, &mut rng);
        let q = Tensor::randomize(4, d, 1.0, &mut rng);
        let kv = Tensor::randomize(3, d, 1.0, &mut rng);
        let mut m = BoolMat::new(4, 3, vec![false; 12]).unwrap();
        for r in 0..4 {
            m.set(r, 0, true);
        }
        let mask = AttentionMask::from_bool_mat(m).unwrap();
        let out = multihead_attention(&q, &kv, &kv, &mask, &params).unwrap();
        // Every output row equals (V row 1) . wv . wo regardless of the query.
        let vrow = Tensor::new(vec![1, d], kv.row(0).to_vec()).unwrap();
        let expect = vrow.matmul(&params.wv[0]).unwrap().matmul(&params.wo).unwrap();
        for r in 0..4 {
            for c in 0..d {
                assert!((out.at(r, c) - expect.at(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multihead_matches_per_head_oracle() {
        // m=2, d=4 against a direct per-head evaluation.
        let (heads, d) = (2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = toy_attention(heads, d, &mut rng);
        let q = Tensor::randomize(5, d, 1.0, &mut rng);
        let k = Tensor::randomize(5, d, 1.0, &mut rng);
        let v = Tensor::randomize(5, d, 1.0, &mut rng);
        let mask = causal_mask(5).unwrap();
        let got = multihead_attention(&q, &k, &v, &mask, &params).unwrap();

        let dh = d / heads;
        let mut concat = Tensor::zeros(5, d);
        for h in 0..heads {
            let qh = q.matmul(&params.wq[h]).unwrap();
            let kh = k.matmul(&params.wk[h]).unwrap();
            let vh = v.matmul(&params.wv[h]).unwrap();
            let scores = qh.matmul(&kh.transpose()).unwrap().scale(1.0 / (dh as f64).sqrt());
            let weights = crate::numerics::masked_softmax(&scores, mask.as_bool_mat()).unwrap();
            let head = weights.matmul(&vh).unwrap();
            for r in 0..5 {
                for c in 0..dh {
                    concat.set(r, h * dh + c, head.at(r, c));
                }
            }
        }
        let expect = concat.matmul(&params.wo).unwrap();
        assert!(got.max_abs_diff(&expect) <= 1e-10);
    }

    #[test]
    fn attention_dimension_mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = toy_attention(2, 4, &mut rng);
        let q = Tensor::zeros(3, 4);
        let kv = Tensor::zeros(3, 4);
        let mask = AttentionMask::full(2, 3); // wrong query count
        assert!(multihead_attention(&q, &kv, &kv, &mask, &params).is_err());
    }

    #[test]
    fn attention_ignores_masked_rows() {
        // Perturbing a disallowed key/value row leaves the output unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let params = toy_attention(2, 4, &mut rng);
            let q = Tensor::randomize(4, 4, 1.0, &mut rng);
            let mut kv = Tensor::randomize(4, 4, 1.0, &mut rng);
            let mask = causal_mask(4).unwrap();
            let base = multihead_attention(&q, &kv, &kv, &mask, &params).unwrap();
            // Row 4 (0-based 3) is invisible to query rows 1..3.
            for c in 0..4 {
                kv.set(3, c, kv.at(3, c) + 7.0);
            }
            let bumped = multihead_attention(&q, &kv, &kv, &mask, &params).unwrap();
            for r in 0..3 {
                for c in 0..4 {
                    assert!((base.at(r, c) - bumped.at(r, c)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn subsample_lengths_match_ceiling() {
        assert_eq!(subsampled_len(16), 4);
        assert_eq!(subsampled_len(17), 5);
        for t in 1..=200 {
            assert_eq!(subsampled_len(t), t.div_ceil(4));
        }
        // And the actual conv agrees with the formula.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut params = Params::new();
        init_frontend(&mut params, "fe", 3, 6, &mut rng);
        for t in [1usize, 2, 3, 4, 5, 16, 17, 33] {
            let x = Tensor::randomize(t, 3, 1.0, &mut rng);
            let mut g = Graph::new();
            let vars = g.register_params(&params);
            let xv = g.leaf(x);
            let out = subsample(&mut g, xv, &vars, "fe").unwrap();
            assert_eq!(g.value(out).rows(), subsampled_len(t), "t={t}");
        }
    }

    #[test]
    fn subsample_right_context_is_bounded() {
        // Perturbing input frame t > 4i leaves output frame i unchanged
        // (1-based), which is within the spec bound of 4i+3.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut params = Params::new();
        init_frontend(&mut params, "fe", 4, 8, &mut rng);
        let t = 24;
        let x = Tensor::randomize(t, 4, 1.0, &mut rng);
        let run = |x: &Tensor| {
            let mut g = Graph::new();
            let vars = g.register_params(&params);
            let xv = g.leaf(x.clone());
            let out = subsample(&mut g, xv, &vars, "fe").unwrap();
            g.value(out).clone()
        };
        let base = run(&x);
        for i in 1..=subsampled_len(t) {
            let horizon = 4 * i; // 1-based input frame
            if horizon >= t {
                continue;
            }
            let mut bumped = x.clone();
            for tt in horizon..t {
                for c in 0..4 {
                    bumped.set(tt, c, bumped.at(tt, c) + 3.0);
                }
            }
            let out = run(&bumped);
            for c in 0..8 {
                assert_eq!(base.at(i - 1, c), out.at(i - 1, c), "frame {i}");
            }
        }
    }

    #[test]
    fn zero_weight_encoder_layer_is_identity() {
        let cfg = StackConfig { layers: 1, d: 4, d_ff: 8, heads: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut params = Params::new();
        init_encoder_stack(&mut params, "e", &cfg, &mut rng);
        for (name, t) in params.iter_mut() {
            if name.contains(".attn.") || name.contains(".ff.") {
                *t = Tensor::zeros(t.rows(), t.cols());
            }
        }
        let x = Tensor::randomize(3, 4, 1.0, &mut rng);
        let mut g = Graph::new();
        let vars = g.register_params(&params);
        let xv = g.leaf(x.clone());
        let mask = AttentionMask::full(3, 3);
        let out = encoder_layer(&mut g, xv, &mask, &vars, "e.enc0", &cfg).unwrap();
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn causal_encoder_layer_ignores_future_rows() {
        let cfg = StackConfig { layers: 1, d: 4, d_ff: 8, heads: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut params = Params::new();
        init_encoder_stack(&mut params, "e", &cfg, &mut rng);
        let x = Tensor::randomize(5, 4, 1.0, &mut rng);
        let mask = causal_mask(5).unwrap();
        let run = |x: &Tensor| {
            let mut g = Graph::new();
            let vars = g.register_params(&params);
            let xv = g.leaf(x.clone());
            let out = encoder_layer(&mut g, xv, &mask, &vars, "e.enc0", &cfg).unwrap();
            g.value(out).clone()
        };
        let base = run(&x);
        let mut bumped = x.clone();
        for c in 0..4 {
            bumped.set(4, c, bumped.at(4, c) - 11.0);
        }
        let out = run(&bumped);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(base.at(r, c), out.at(r, c));
            }
        }
    }

    #[test]
    fn single_frame_layer_matches_manual_composition() {
        let cfg = StackConfig { layers: 1, d: 2, d_ff: 3, heads: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut params = Params::new();
        init_encoder_stack(&mut params, "e", &cfg, &mut rng);
        let x = Tensor::from_rows(&[vec![0.7, -1.2]]).unwrap();
        let mut g = Graph::new();
        let vars = g.register_params(&params);
        let xv = g.leaf(x.clone());
        let mask = AttentionMask::full(1, 1);
        let out = encoder_layer(&mut g, xv, &mask, &vars, "e.enc0", &cfg).unwrap();

        // Manual composition: with one frame, attention weights are [1], so
        // attn(x) = LN1(x) wv wo.
        let ln = |x: &Tensor, gain: &Tensor, bias: &Tensor| {
            let mean = (x.at(0, 0) + x.at(0, 1)) / 2.0;
            let var = ((x.at(0, 0) - mean).powi(2) + (x.at(0, 1) - mean).powi(2)) / 2.0;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            Tensor::from_rows(&[vec![
                (x.at(0, 0) - mean) * inv * gain.at(0, 0) + bias.at(0, 0),
                (x.at(0, 1) - mean) * inv * gain.at(0, 1) + bias.at(0, 1),
            ]])
            .unwrap()
        };
        let n1 = ln(&x, params.get("e.enc0.ln1.gain").unwrap(), params.get("e.enc0.ln1.bias").unwrap());
        let attn = n1
            .matmul(params.get("e.enc0.attn.wv0").unwrap())
            .unwrap()
            .matmul(params.get("e.enc0.attn.wo").unwrap())
            .unwrap();
        let h = x.add(&attn).unwrap();
        let n2 = ln(&h, params.get("e.enc0.ln2.gain").unwrap(), params.get("e.enc0.ln2.bias").unwrap());
        let ff = n2
            .matmul(params.get("e.enc0.ff.w1").unwrap())
            .unwrap()
            .add(params.get("e.enc0.ff.b1").unwrap())
            .unwrap()
            .map(|v| v.max(0.0))
            .matmul(params.get("e.enc0.ff.w2").unwrap())
            .unwrap()
            .add(params.get("e.enc0.ff.b2").unwrap())
            .unwrap();
        let expect = h.add(&ff).unwrap();
        assert!(g.value(out).max_abs_diff(&expect) <= 1e-12);
    }

    #[test]
    fn decoder_layer_zero_weights_and_cross_mask() {
        let cfg = StackConfig { layers: 1, d: 4, d_ff: 8, heads: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut params = Params::new();
        init_decoder_stack(&mut params, "d", &cfg, &mut rng);

        // Cross mask allowing only encoder row 1: perturbing rows >= 2 leaves
        // the output unchanged.
        let y = Tensor::randomize(2, 4, 1.0, &mut rng);
        let mut h = Tensor::randomize(3, 4, 1.0, &mut rng);
        let self_mask = causal_mask(2).unwrap();
        let cross = prefix_cross_mask(&[1, 1], 3).unwrap();
        let run = |y: &Tensor, h: &Tensor, params: &Params| {
            let mut g = Graph::new();
            let vars = g.register_params(params);
            let yv = g.leaf(y.clone());
            let hv = g.leaf(h.clone());
            let out = decoder_layer(&mut g, yv, hv, &self_mask, &cross, &vars, "d.dec0", &cfg).unwrap();
            g.value(out).clone()
        };
        let base = run(&y, &h, &params);
        for r in 1..3 {
            for c in 0..4 {
                h.set(r, c, h.at(r, c) + 5.0);
            }
        }
        assert!(base.max_abs_diff(&run(&y, &h, &params)) <= 1e-12);

        // Zero weights: pure residual path.
        let mut zero = params.clone();
        for (name, t) in zero.iter_mut() {
            if name.contains(".self.") || name.contains(".cross.") || name.contains(".ff.") {
                *t = Tensor::zeros(t.rows(), t.cols());
            }
        }
        assert_eq!(run(&y, &h, &zero), y);
    }

    #[test]
    fn positional_encoding_is_deterministic() {
        let a = positional_encoding(7, 6);
        let b = positional_encoding(7, 6);
        assert_eq!(a, b);
        assert_eq!(a.at(0, 0), 0.0); // sin(0)
        assert_eq!(a.at(0, 1), 1.0); // cos(0)
    }

    #[test]
    fn two_layer_attention_gradients_are_tight() {
        // Loss through a 2-layer stack vs central differences at eps=1e-5.
        let cfg = StackConfig { layers: 2, d: 4, d_ff: 6, heads: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut params = Params::new();
        init_encoder_stack(&mut params, "e", &cfg, &mut rng);
        let x = Tensor::randomize(4, 4, 1.0, &mut rng);
        let err = crate::numerics::finite_difference_check(
            move |g, vars| {
                let xv = g.leaf(x.clone());
                let mask = causal_mask(4)?;
                let h = encoder_stack(g, xv, &mask, vars, "e", &cfg)?;
                let s = g.sigmoid(h);
                Ok(g.sum(s))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn one_frame_decoder_matches_single_position_transform() {
        // 1 output position, 1 encoder frame: attention weights collapse to
        // [1] in both attention sub-layers, so the layer output is a pure
        // function of (y row, h row) that must match offline recomputation.
        let cfg = StackConfig { layers: 1, d: 4, d_ff: 4, heads: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut params = Params::new();
        init_decoder_stack(&mut params, "d", &cfg, &mut rng);
        let y = Tensor::randomize(1, 4, 1.0, &mut rng);
        let h = Tensor::randomize(1, 4, 1.0, &mut rng);
        let self_mask = AttentionMask::full(1, 1);
        let cross = AttentionMask::full(1, 1);
        let mut g = Graph::new();
        let vars = g.register_params(&params);
        let yv = g.leaf(y.clone());
        let hv = g.leaf(h.clone());
        let out = decoder_layer(&mut g, yv, hv, &self_mask, &cross, &vars, "d.dec0", &cfg).unwrap();
        let got = g.value(out).clone();

        // Rebuild by hand with value-level ops.
        let lnp = |p: &str, x: &Tensor| {
            let gain = params.get(&format!("{p}.gain")).unwrap();
            let bias = params.get(&format!("{p}.bias")).unwrap();
            let mean = x.row(0).iter().sum::<f64>() / 4.0;
            let var = x.row(0).iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            Tensor::new(
                vec![1, 4],
                (0..4)
                    .map(|j| (x.at(0, j) - mean) * inv * gain.at(0, j) + bias.at(0, j))
                    .collect(),
            )
            .unwrap()
        };
        let attn = |p: &str, q: &Tensor, kv: &Tensor| {
            q.matmul(&Tensor::zeros(4, 4)).unwrap().add(
                &kv.matmul(params.get(&format!("{p}.wv0")).unwrap())
                    .unwrap()
                    .matmul(params.get(&format!("{p}.wo")).unwrap())
                    .unwrap(),
            )
            .unwrap()
        };
        let n1 = lnp("d.dec0.ln1", &y);
        let yy = y.add(&attn("d.dec0.self", &n1, &n1)).unwrap();
        let n2 = lnp("d.dec0.ln2", &yy);
        let yy = yy.add(&attn("d.dec0.cross", &n2, &h)).unwrap();
        let n3 = lnp("d.dec0.ln3", &yy);
        let ff = n3
            .matmul(params.get("d.dec0.ff.w1").unwrap())
            .unwrap()
            .add(params.get("d.dec0.ff.b1").unwrap())
            .unwrap()
            .map(|v| v.max(0.0))
            .matmul(params.get("d.dec0.ff.w2").unwrap())
            .unwrap()
            .add(params.get("d.dec0.ff.b2").unwrap())
            .unwrap();
        let expect = yy.add(&ff).unwrap();
        assert!(got.max_abs_diff(&expect) <= 1e-12);
    }
}
