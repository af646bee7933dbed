//! Pluggable token language models for shallow fusion. The decoder only ever
//! needs one-step conditionals, so the interface is a single `step` plus a
//! whole-sequence convenience.

use serde::{Deserialize, Serialize};

use crate::ctc::TokenId;
use crate::error::{Error, Result};

pub trait LanguageModel {
    /// log P(next | last), where `None` is the sequence start.
    fn step(&self, last: Option<TokenId>, next: TokenId) -> f64;

    /// log P of a whole token sequence by the chain rule.
    fn logprob(&self, tokens: &[TokenId]) -> f64 {
        let mut last = None;
        let mut total = 0.0;
        for &t in tokens {
            total += self.step(last, t);
            last = Some(t);
        }
        total
    }
}

/// No-op LM: every sequence scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformLm;

impl LanguageModel for UniformLm {
    fn step(&self, _last: Option<TokenId>, _next: TokenId) -> f64 {
        0.0
    }
}

/// Bigram LM with add-one smoothing:
/// P(next | ctx) = (count(ctx, next) + 1) / (count(ctx) + V).
/// Context 0 is the sequence start; token `t` maps to context `t + 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BigramLm {
    vocab: usize,
    context_counts: Vec<u64>,
    pair_counts: Vec<u64>, // [context][next], row-major
}

impl BigramLm {
    pub fn train(sequences: &[Vec<TokenId>], vocab: usize) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::invalid("bigram: vocab must be >= 1"));
        }
        let contexts = vocab + 1;
        let mut context_counts = vec![0u64; contexts];
        let mut pair_counts = vec![0u64; contexts * vocab];
        for seq in sequences {
            let mut ctx = 0usize; // start
            for &t in seq {
                if t >= vocab {
                    return Err(Error::invalid(format!("bigram: token {t} outside vocab {vocab}")));
                }
                context_counts[ctx] += 1;
                pair_counts[ctx * vocab + t] += 1;
                ctx = t + 1;
            }
        }
        Ok(BigramLm { vocab, context_counts, pair_counts })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }
}

impl LanguageModel for BigramLm {
    fn step(&self, last: Option<TokenId>, next: TokenId) -> f64 {
        if next >= self.vocab {
            return f64::NEG_INFINITY;
        }
        let ctx = last.map_or(0, |t| t + 1);
        let num = self.pair_counts[ctx * self.vocab + next] + 1;
        let den = self.context_counts[ctx] + self.vocab as u64;
        (num as f64 / den as f64).ln()
    }
}
