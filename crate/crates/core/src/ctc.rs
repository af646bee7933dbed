//! CTC over the encoder output: sequence log-likelihood for training, Viterbi
//! alignment for decoder triggering, and the per-frame prefix-search step the
//! beam search runs on. All probability arithmetic is log-domain; -inf means
//! impossible. The blank symbol always takes the last posterior column.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{log_add_exp, Graph, Tensor, Var};

pub type TokenId = usize;

/// Log-probability matrix `T' x (V+1)`, blank last. Rows must normalize.
#[derive(Debug, Clone)]
pub struct CtcPosterior {
    log_probs: Tensor,
}

impl CtcPosterior {
    pub fn new(log_probs: Tensor) -> Result<Self> {
        if log_probs.cols() < 2 {
            return Err(Error::shape("ctc posterior: need at least one token plus blank"));
        }
        for r in 0..log_probs.rows() {
            let row = log_probs.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::numeric(format!("ctc posterior: row {r} is all -inf")));
            }
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            if lse.abs() > 1e-9 {
                return Err(Error::numeric(format!(
                    "ctc posterior: row {r} log-sum-exps to {lse}, not 0"
                )));
            }
        }
        Ok(CtcPosterior { log_probs })
    }

    pub fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    /// Token vocabulary size, excluding blank.
    pub fn vocab(&self) -> usize {
        self.log_probs.cols() - 1
    }

    pub fn blank_id(&self) -> usize {
        self.log_probs.cols() - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.log_probs.row(t)
    }

    pub fn log_probs(&self) -> &Tensor {
        &self.log_probs
    }
}

fn check_tokens(y: &[TokenId], vocab: usize) -> Result<()> {
    if let Some(&bad) = y.iter().find(|&&t| t >= vocab) {
        return Err(Error::invalid(format!(
            "ctc: token {bad} outside vocabulary 0..{vocab}"
        )));
    }
    Ok(())
}

/// Blank-augmented state symbols for a label sequence: blank, y1, blank, y2,
/// ..., blank. State `s` is a token iff `s` is odd.
fn augmented(y: &[TokenId], blank: usize) -> Vec<usize> {
    let mut states = Vec::with_capacity(2 * y.len() + 1);
    states.push(blank);
    for &t in y {
        states.push(t);
        states.push(blank);
    }
    states
}

/// Whether the skip transition `s-2 -> s` is allowed (token states only, and
/// only between distinct symbols).
fn skip_allowed(states: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && states[s] != blank && states[s] != states[s - 2]
}

/// Standard CTC forward log-likelihood of emitting exactly `y`. Returns -inf
/// when `y` cannot fit in the available frames (repeats need a blank).
pub fn ctc_forward_logprob(post: &CtcPosterior, y: &[TokenId]) -> Result<f64> {
    check_tokens(y, post.vocab())?;
    let blank = post.blank_id();
    let states = augmented(y, blank);
    let s_count = states.len();
    let t_count = post.frames();

    let mut alpha = vec![f64::NEG_INFINITY; s_count];
    alpha[0] = post.row(0)[states[0]];
    if s_count > 1 {
        alpha[1] = post.row(0)[states[1]];
    }
    for t in 1..t_count {
        let row = post.row(t);
        let mut next = vec![f64::NEG_INFINITY; s_count];
        for s in 0..s_count {
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add_exp(acc, alpha[s - 1]);
            }
            if skip_allowed(&states, s, blank) {
                acc = log_add_exp(acc, alpha[s - 2]);
            }
            next[s] = acc + row[states[s]];
        }
        alpha = next;
    }
    let mut total = alpha[s_count - 1];
    if s_count > 1 {
        total = log_add_exp(total, alpha[s_count - 2]);
    }
    Ok(total)
}

/// Graph version of the forward recursion for training; gradients flow
/// through the log-domain dynamic program.
pub fn ctc_forward_logprob_graph(
    g: &mut Graph,
    log_post: Var,
    y: &[TokenId],
    blank: usize,
) -> Result<Var> {
    let cols = g.value(log_post).cols();
    check_tokens(y, cols - 1)?;
    let t_count = g.value(log_post).rows();
    let states = augmented(y, blank);
    let s_count = states.len();

    // emit[t, s] = log_post[t, sym(s)]
    let emit = g.gather_cols(log_post, &states)?;
    let init_mask: Vec<f64> = (0..s_count)
        .map(|s| if s <= 1 { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let init = g.leaf(Tensor::new(vec![1, s_count], init_mask)?);
    let emit0 = g.row_range(emit, 0, 1)?;
    let mut alpha = g.add(emit0, init)?;

    let skips: Vec<bool> = (0..s_count).map(|s| skip_allowed(&states, s, blank)).collect();
    let all = vec![true; s_count];
    for t in 1..t_count {
        let s1 = g.shift_cols(alpha, 1, &all)?;
        let s2 = g.shift_cols(alpha, 2, &skips)?;
        let m = g.log_add_exp(alpha, s1)?;
        let m = g.log_add_exp(m, s2)?;
        let emit_t = g.row_range(emit, t, t + 1)?;
        alpha = g.add(m, emit_t)?;
    }
    let last = g.select(alpha, 0, s_count - 1)?;
    if s_count > 1 {
        let prev = g.select(alpha, 0, s_count - 2)?;
        g.log_add_exp(last, prev)
    } else {
        Ok(last)
    }
}

/// Best-path alignment. Returns the 1-based trigger frame of each token: the
/// first frame where the Viterbi path emits it. On score ties the path that
/// emits tokens earliest wins (token emission is preferred over staying in
/// blank).
pub fn ctc_viterbi_align(post: &CtcPosterior, y: &[TokenId]) -> Result<Vec<usize>> {
    check_tokens(y, post.vocab())?;
    let blank = post.blank_id();
    let states = augmented(y, blank);
    let s_count = states.len();
    let t_count = post.frames();

    // Suffix DP: mu[t][s] = best score of frames t.. given state s at t.
    let mut mu = vec![vec![f64::NEG_INFINITY; s_count]; t_count];
    for s in 0..s_count {
        if s == s_count - 1 || s == s_count.wrapping_sub(2) {
            mu[t_count - 1][s] = post.row(t_count - 1)[states[s]];
        }
    }
    let successors = |s: usize| {
        let mut succ = Vec::with_capacity(3);
        // Larger advances first: preferred on ties so tokens emit earliest.
        if s + 2 < s_count && skip_allowed(&states, s + 2, blank) {
            succ.push(s + 2);
        }
        if s + 1 < s_count {
            succ.push(s + 1);
        }
        succ.push(s);
        succ
    };
    for t in (0..t_count.saturating_sub(1)).rev() {
        let row = post.row(t);
        for s in 0..s_count {
            let best = successors(s)
                .into_iter()
                .map(|ns| mu[t + 1][ns])
                .fold(f64::NEG_INFINITY, f64::max);
            if best > f64::NEG_INFINITY {
                mu[t][s] = row[states[s]] + best;
            }
        }
    }

    let start = if s_count > 1 && mu[0][1] >= mu[0][0] { 1 } else { 0 };
    if mu[0][start] == f64::NEG_INFINITY {
        return Err(Error::invalid(format!(
            "viterbi: label sequence of length {} infeasible in {t_count} frames",
            y.len()
        )));
    }

    let mut triggers = vec![0usize; y.len()];
    let mut state = start;
    if state == 1 {
        triggers[0] = 1;
    }
    for t in 1..t_count {
        // First maximum wins; the successor list is in preference order, so
        // ties favor the larger state advance (earlier token emission).
        let mut chosen = None;
        let mut best = f64::NEG_INFINITY;
        for cand in successors(state) {
            if mu[t][cand] > best {
                best = mu[t][cand];
                chosen = Some(cand);
            }
        }
        let next = chosen.expect("successor set never empty");
        if next > state && next % 2 == 1 {
            triggers[(next - 1) / 2] = t + 1;
        }
        state = next;
    }

    if triggers.iter().any(|&f| f == 0) {
        return Err(Error::numeric("viterbi: path failed to emit every token"));
    }
    Ok(triggers)
}

/// Blank/non-blank probability split of one prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefixState {
    pub log_blank: f64,
    pub log_nonblank: f64,
}

impl PrefixState {
    pub fn root() -> Self {
        PrefixState { log_blank: 0.0, log_nonblank: f64::NEG_INFINITY }
    }

    pub fn empty() -> Self {
        PrefixState { log_blank: f64::NEG_INFINITY, log_nonblank: f64::NEG_INFINITY }
    }

    pub fn total(&self) -> f64 {
        log_add_exp(self.log_blank, self.log_nonblank)
    }
}

/// Hypothesis set for prefix search: prefix -> probability split. BTreeMap
/// keeps iteration deterministic.
pub type PrefixSet = BTreeMap<Vec<TokenId>, PrefixState>;

pub fn initial_prefix_set() -> PrefixSet {
    let mut set = PrefixSet::new();
    set.insert(Vec::new(), PrefixState::root());
    set
}

/// One frame of CTC prefix beam search over `log_row` (length V+1, blank
/// last). Extension symbols with linear frame probability below `sigma0` are
/// skipped; blank and repeat continuations of existing prefixes always
/// happen.
pub fn ctc_prefix_step(hyps: &PrefixSet, sigma0: f64, log_row: &[f64]) -> PrefixSet {
    let blank = log_row.len() - 1;
    let mut next = PrefixSet::new();

    let mut bump = |prefix: &[TokenId], is_blank: bool, delta: f64| {
        if delta == f64::NEG_INFINITY {
            return;
        }
        let entry = next.entry(prefix.to_vec()).or_insert_with(PrefixState::empty);
        if is_blank {
            entry.log_blank = log_add_exp(entry.log_blank, delta);
        } else {
            entry.log_nonblank = log_add_exp(entry.log_nonblank, delta);
        }
    };

    for (prefix, state) in hyps {
        let total = state.total();
        // Stay on this prefix through a blank frame.
        bump(prefix, true, total + log_row[blank]);
        // Repeat of the trailing symbol collapses into the same prefix.
        if let Some(&last) = prefix.last() {
            bump(prefix, false, state.log_nonblank + log_row[last]);
        }
        // Extensions, gated by the per-frame pruning threshold.
        for c in 0..blank {
            if log_row[c].exp() < sigma0 {
                continue;
            }
            let source = if Some(&c) == prefix.last() {
                state.log_blank // repeat symbol needs an intervening blank
            } else {
                total
            };
            if source == f64::NEG_INFINITY {
                continue;
            }
            let mut ext = prefix.clone();
            ext.push(c);
            bump(&ext, false, source + log_row[c]);
        }
    }
    next
}
