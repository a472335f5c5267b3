//! Token error rate, duration difference, style match and alignment scores.

use crate::data::SpeakerStyle;
use crate::error::{Error, Result};
use crate::model::CodecGrid;
use crate::numeric::Tensor;

/// Seconds per codec frame.
pub const FRAME_SECONDS: f64 = 0.02;

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Codebook-0 edit distance divided by the reference length.
pub fn token_error_rate(hyp: &CodecGrid, reference: &CodecGrid) -> Result<f64> {
    if hyp.codebooks() != reference.codebooks() {
        return Err(Error::dim(format!(
            "hypothesis has {} codebooks, reference {}",
            hyp.codebooks(),
            reference.codebooks()
        )));
    }
    if reference.is_empty() {
        return Err(Error::contract("token error rate against an empty reference"));
    }
    Ok(edit_distance(hyp.row(0), reference.row(0)) as f64 / reference.len() as f64)
}

/// `|L − T_req|` in seconds.
pub fn duration_diff(hyp_frames: usize, requested: usize, frame_seconds: f64) -> f64 {
    hyp_frames.abs_diff(requested) as f64 * frame_seconds
}

/// Fraction of codebook-0 frames inside the speaker's style block.
///
/// A token `x` agrees when `(x − style_offset) mod V` lands in the first
/// `block_size` content ids. Special tokens never agree.
pub fn style_match(hyp: &CodecGrid, style: &SpeakerStyle, codec_vocab: usize, block_size: usize) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let hits = hyp
        .row(0)
        .iter()
        .filter(|&&x| x < codec_vocab && (x + codec_vocab - style.style_offset % codec_vocab) % codec_vocab < block_size)
        .count();
    hits as f64 / hyp.len() as f64
}

/// Cross-attention weights of one layer with their diagonality.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentMap {
    /// `heads×T×S`.
    pub weights: Tensor,
}

impl AlignmentMap {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 3 || weights.shape().iter().any(|&d| d == 0) {
            return Err(Error::dim(format!(
                "alignment map needs a non-empty heads×T×S tensor, got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    pub fn heads(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn target_len(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn source_len(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Head-averaged `T×S` weights.
    pub fn mean_over_heads(&self) -> Vec<Vec<f64>> {
        let (h, t, s) = (self.heads(), self.target_len(), self.source_len());
        let w = self.weights.values();
        (0..t)
            .map(|ti| {
                (0..s)
                    .map(|si| (0..h).map(|hi| w[(hi * t + ti) * s + si]).sum::<f64>() / h as f64)
                    .collect()
            })
            .collect()
    }

    /// Row of `head` for target position `t`.
    pub fn row(&self, head: usize, t: usize) -> &[f64] {
        let (tl, s) = (self.target_len(), self.source_len());
        &self.weights.values()[(head * tl + t) * s..(head * tl + t + 1) * s]
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
}

/// Mean over `t` of `1 − |argmax_s/S − t/T|` on the head-averaged map.
pub fn alignment_diagonality(map: &AlignmentMap) -> f64 {
    let (t_len, s_len) = (map.target_len() as f64, map.source_len() as f64);
    let rows = map.mean_over_heads();
    let total: f64 = rows
        .iter()
        .enumerate()
        .map(|(t, row)| 1.0 - (argmax(row) as f64 / s_len - t as f64 / t_len).abs())
        .sum();
    total / rows.len() as f64
}
