//! Evaluation suite: boundary edit distance with sub/del/ins decomposition,
//! word-level and frame-level latency, segment-length statistics, and word
//! error rate.
//!
//! All latencies are `k * 40 ms + 30 ms`: the 40 ms grid comes from the
//! downsampled frame rate, the 30 ms floor from the CNN right context.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::transformer::Segmentation;

pub const FRAME_MS: f64 = 40.0;
pub const CNN_FLOOR_MS: f64 = 30.0;

/// One aligned pair (or gap) from the edit-distance backtrace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AlignEvent<T> {
    Match { reference: T, predicted: T },
    Substitution { reference: T, predicted: T },
    Deletion { reference: T },
    Insertion { predicted: T },
}

/// Minimal-cost Levenshtein alignment. Among minimal-cost alignments the one
/// with the most exact matches wins, and the backtrace prefers
/// match > substitution > deletion > insertion on remaining ties, so the
/// decomposition is deterministic.
pub fn levenshtein_align<T: Eq + Copy>(reference: &[T], predicted: &[T]) -> Vec<AlignEvent<T>> {
    let (n, m) = (reference.len(), predicted.len());
    // Cost pairs (edits, -matches), minimized lexicographically.
    let inf = (usize::MAX / 2, 0isize);
    let mut dp = vec![vec![inf; m + 1]; n + 1];
    dp[0][0] = (0, 0);
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = inf;
            if i > 0 && j > 0 {
                let (c, neg) = dp[i - 1][j - 1];
                let cand = if reference[i - 1] == predicted[j - 1] {
                    (c, neg - 1)
                } else {
                    (c + 1, neg)
                };
                if cand < best {
                    best = cand;
                }
            }
            if i > 0 {
                let (c, neg) = dp[i - 1][j];
                let cand = (c + 1, neg);
                if cand < best {
                    best = cand;
                }
            }
            if j > 0 {
                let (c, neg) = dp[i][j - 1];
                let cand = (c + 1, neg);
                if cand < best {
                    best = cand;
                }
            }
            dp[i][j] = best;
        }
    }

    // Backtrace with the fixed preference order.
    let mut events = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cur = dp[i][j];
        if i > 0 && j > 0 && reference[i - 1] == predicted[j - 1] {
            let (c, neg) = dp[i - 1][j - 1];
            if (c, neg - 1) == cur {
                events.push(AlignEvent::Match { reference: reference[i - 1], predicted: predicted[j - 1] });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && j > 0 && reference[i - 1] != predicted[j - 1] {
            let (c, neg) = dp[i - 1][j - 1];
            if (c + 1, neg) == cur {
                events.push(AlignEvent::Substitution {
                    reference: reference[i - 1],
                    predicted: predicted[j - 1],
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 {
            let (c, neg) = dp[i - 1][j];
            if (c + 1, neg) == cur {
                events.push(AlignEvent::Deletion { reference: reference[i - 1] });
                i -= 1;
                continue;
            }
        }
        let (c, neg) = dp[i][j - 1];
        debug_assert_eq!((c + 1, neg), cur);
        events.push(AlignEvent::Insertion { predicted: predicted[j - 1] });
        j -= 1;
    }
    events.reverse();
    events
}

/// Boundary evaluation: counts, rates (normalized by the reference count),
/// and the full alignment trace.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryEval {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_count: usize,
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub events: Vec<AlignEvent<usize>>,
}

fn check_increasing(name: &str, seq: &[usize]) -> Result<()> {
    if seq.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{name} positions must be strictly increasing")));
    }
    Ok(())
}

/// Edit distance between predicted and reference boundary position
/// sequences; equality means exact frame match.
pub fn boundary_edit_distance(predicted: &[usize], reference: &[usize]) -> Result<BoundaryEval> {
    check_increasing("predicted", predicted)?;
    check_increasing("reference", reference)?;
    let events = levenshtein_align(reference, predicted);
    let mut eval = BoundaryEval {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        reference_count: reference.len(),
        sub_rate: 0.0,
        del_rate: 0.0,
        ins_rate: 0.0,
        events,
    };
    for e in &eval.events {
        match e {
            AlignEvent::Match { .. } => {}
            AlignEvent::Substitution { .. } => eval.substitutions += 1,
            AlignEvent::Deletion { .. } => eval.deletions += 1,
            AlignEvent::Insertion { .. } => eval.insertions += 1,
        }
    }
    let denom = reference.len().max(1) as f64;
    eval.sub_rate = eval.substitutions as f64 / denom;
    eval.del_rate = eval.deletions as f64 / denom;
    eval.ins_rate = eval.insertions as f64 / denom;
    Ok(eval)
}

/// Word latency trace entry. Insertions carry no latency (`None`), kept in
/// the trace as null markers for fidelity.
#[derive(Debug, Clone, Serialize)]
pub struct LatencyEntry {
    pub reference: Option<usize>,
    pub predicted: Option<usize>,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WordLatencyReport {
    pub entries: Vec<LatencyEntry>,
    /// One latency per reference boundary, in order.
    pub per_word_ms: Vec<f64>,
    pub mean_ms: f64,
}

/// Word-level latency per reference boundary. Exact matches cost the 30 ms
/// CNN floor; late or missed boundaries pay 40 ms per frame until the next
/// predicted boundary; early predictions clamp to the floor.
pub fn word_latency(
    predicted: &[usize],
    reference: &[usize],
    eval: &BoundaryEval,
) -> Result<WordLatencyReport> {
    if reference.is_empty() {
        return Err(Error::invalid("word_latency: empty reference"));
    }
    let latency_from = |ref_pos: usize, pred_pos: usize| -> f64 {
        if pred_pos <= ref_pos {
            CNN_FLOOR_MS
        } else {
            (pred_pos - ref_pos) as f64 * FRAME_MS + CNN_FLOOR_MS
        }
    };
    // For deletions: the next predicted boundary at or after the reference,
    // falling back to the last (forced final) predicted boundary.
    let next_predicted = |ref_pos: usize| -> Result<usize> {
        predicted
            .iter()
            .copied()
            .find(|&p| p >= ref_pos)
            .or(predicted.last().copied())
            .ok_or_else(|| Error::invalid("word_latency: no predicted boundaries"))
    };

    let mut entries = Vec::with_capacity(eval.events.len());
    let mut per_word = Vec::with_capacity(reference.len());
    for e in &eval.events {
        match *e {
            AlignEvent::Match { reference: r, predicted: p } => {
                let ms = CNN_FLOOR_MS;
                debug_assert_eq!(r, p);
                entries.push(LatencyEntry { reference: Some(r), predicted: Some(p), latency_ms: Some(ms) });
                per_word.push(ms);
            }
            AlignEvent::Substitution { reference: r, predicted: p } => {
                let ms = latency_from(r, p);
                entries.push(LatencyEntry { reference: Some(r), predicted: Some(p), latency_ms: Some(ms) });
                per_word.push(ms);
            }
            AlignEvent::Deletion { reference: r } => {
                let ms = latency_from(r, next_predicted(r)?);
                entries.push(LatencyEntry { reference: Some(r), predicted: None, latency_ms: Some(ms) });
                per_word.push(ms);
            }
            AlignEvent::Insertion { predicted: p } => {
                entries.push(LatencyEntry { reference: None, predicted: Some(p), latency_ms: None });
            }
        }
    }
    let mean_ms = per_word.iter().sum::<f64>() / per_word.len() as f64;
    Ok(WordLatencyReport { entries, per_word_ms: per_word, mean_ms })
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameLatencyReport {
    pub per_frame_ms: Vec<f64>,
    pub mean_ms: f64,
}

/// Frame-level look-ahead: frame `i` in segment `(g_{j-1}, g_j]` waits
/// `(g_j - i) * 40 + 30` ms.
pub fn frame_latency(seg: &Segmentation) -> FrameLatencyReport {
    let t_prime = seg.last();
    let mut per_frame = Vec::with_capacity(t_prime);
    for i in 1..=t_prime {
        let g = seg.segment_end(i).expect("segment end exists for every frame");
        per_frame.push((g - i) as f64 * FRAME_MS + CNN_FLOOR_MS);
    }
    let mean_ms = per_frame.iter().sum::<f64>() / per_frame.len().max(1) as f64;
    FrameLatencyReport { per_frame_ms: per_frame, mean_ms }
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentLengthStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p25_ms: f64,
    pub p75_ms: f64,
    pub iqr_ms: f64,
    pub lengths_ms: Vec<f64>,
    /// Histogram for external plotting: `edges` has one more entry than
    /// `counts`; bin `i` covers `[edges[i], edges[i+1])`, last bin closed.
    pub histogram_edges_ms: Vec<f64>,
    pub histogram_counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]` of the values.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    debug_assert!(bins >= 1 && !values.is_empty());
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((max - min) / bins as f64).max(f64::MIN_POSITIVE);
    let edges: Vec<f64> = (0..=bins).map(|i| min + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    (edges, counts)
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Segment length distribution over one or many segmentations, lengths
/// measured as `(g_j - g_{j-1}) * 40` ms with `g_0 = 0`.
pub fn segment_length_stats(segs: &[Segmentation]) -> Result<SegmentLengthStats> {
    let mut lengths: Vec<f64> = Vec::new();
    for seg in segs {
        for len in seg.lengths() {
            lengths.push(len as f64 * FRAME_MS);
        }
    }
    if lengths.is_empty() {
        return Err(Error::invalid("segment_length_stats: no segments"));
    }
    let mut sorted = lengths.clone();
    sorted.sort_by(f64::total_cmp);
    let p25 = percentile(&sorted, 25.0);
    let p75 = percentile(&sorted, 75.0);
    let (histogram_edges_ms, histogram_counts) = histogram(&lengths, 10.min(lengths.len()));
    Ok(SegmentLengthStats {
        count: lengths.len(),
        mean_ms: lengths.iter().sum::<f64>() / lengths.len() as f64,
        median_ms: percentile(&sorted, 50.0),
        p25_ms: p25,
        p75_ms: p75,
        iqr_ms: p75 - p25,
        lengths_ms: lengths,
        histogram_edges_ms,
        histogram_counts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WerReport {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_count: usize,
}

/// Word error rate: Levenshtein edits over word lists, normalized by the
/// reference length.
pub fn word_error_rate<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> WerReport {
    let href: Vec<&str> = hypothesis.iter().map(|s| s.as_ref()).collect();
    let rref: Vec<&str> = reference.iter().map(|s| s.as_ref()).collect();
    let events = levenshtein_align(&rref, &href);
    let mut report = WerReport {
        wer: 0.0,
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        reference_count: rref.len(),
    };
    for e in &events {
        match e {
            AlignEvent::Match { .. } => {}
            AlignEvent::Substitution { .. } => report.substitutions += 1,
            AlignEvent::Deletion { .. } => report.deletions += 1,
            AlignEvent::Insertion { .. } => report.insertions += 1,
        }
    }
    let edits = report.substitutions + report.deletions + report.insertions;
    report.wer = if rref.is_empty() {
        if href.is_empty() { 0.0 } else { 1.0 }
    } else {
        edits as f64 / rref.len() as f64
    };
    report
}
