//! Layout of encoder and decoder streams.
//!
//! Text side: `prompt ++ [sep] ++ target` (no sep without a prompt).
//!
//! Codec side, before delaying: `prompt ++ [sep frame] ++ target`. The delay
//! pattern is applied to the whole stream and codebook 0's first filler after
//! the target is replaced by EOS. The delayed stream has
//! `T_total = prefix + target + max(K−1, 1)` frames; decoder input `i` is
//! delayed frame `i−1` (BOS at `i = 0`) and predicts delayed frame `i`.

use super::config::{CodecVocab, PhonemeVocab};
use super::grid::{apply_delay_pattern, CodecGrid};
use crate::error::{Error, Result};

pub fn total_frames(prefix_frames: usize, target_frames: usize, codebooks: usize) -> usize {
    prefix_frames + target_frames + codebooks.saturating_sub(1).max(1)
}

pub fn assemble_text(prompt: Option<&[usize]>, target: &[usize], vocab: PhonemeVocab) -> Vec<usize> {
    let mut ids = Vec::new();
    if let Some(p) = prompt {
        ids.extend_from_slice(p);
        ids.push(vocab.sep());
    }
    ids.extend_from_slice(target);
    ids
}

/// Prompt grid followed by one sep frame, or nothing without a prompt.
pub fn decoder_prefix(prompt: Option<&CodecGrid>, codebooks: usize, vocab: CodecVocab) -> Result<CodecGrid> {
    match prompt {
        None => Ok(CodecGrid::filled(codebooks, 0, 0)),
        Some(p) => {
            if p.codebooks() != codebooks {
                return Err(Error::dim(format!(
                    "prompt with {} codebooks for a {codebooks}-codebook model",
                    p.codebooks()
                )));
            }
            let sep = CodecGrid::filled(codebooks, 1, vocab.sep());
            CodecGrid::concat(&[p, &sep])
        }
    }
}

/// What occupies delayed cell `(c, i)` given prefix and target lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellRole {
    Filler,
    /// Known prefix content at undelayed frame `f`.
    Prefix(usize),
    /// Target content at target-relative frame `f`.
    Target(usize),
    Eos,
}

pub fn cell_role(c: usize, i: usize, prefix_frames: usize, target_frames: usize) -> CellRole {
    if i < c {
        return CellRole::Filler;
    }
    let f = i - c;
    if f < prefix_frames {
        CellRole::Prefix(f)
    } else if f < prefix_frames + target_frames {
        CellRole::Target(f - prefix_frames)
    } else if f == prefix_frames + target_frames && c == 0 {
        CellRole::Eos
    } else {
        CellRole::Filler
    }
}

/// A full delayed decoder stream with its loss mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderSequence {
    pub grid: CodecGrid,
    /// `K×T_total`, 1 on target cells and EOS.
    pub loss_mask: Vec<Vec<f64>>,
    pub prefix_frames: usize,
    pub target_frames: usize,
}

impl DecoderSequence {
    pub fn total(&self) -> usize {
        self.grid.len()
    }

    /// Teacher-forcing inputs: BOS then every delayed frame but the last.
    pub fn inputs(&self, vocab: CodecVocab) -> CodecGrid {
        let t = self.total();
        decoder_inputs(&self.grid.slice(0, t - 1), vocab)
    }
}

/// BOS frame followed by `delayed_prefix`.
pub fn decoder_inputs(delayed_prefix: &CodecGrid, vocab: CodecVocab) -> CodecGrid {
    let k = delayed_prefix.codebooks();
    let bos = CodecGrid::filled(k, 1, vocab.bos());
    CodecGrid::concat(&[&bos, delayed_prefix]).expect("same codebook count")
}

pub fn assemble_decoder(
    prompt: Option<&CodecGrid>,
    target: &CodecGrid,
    vocab: CodecVocab,
) -> Result<DecoderSequence> {
    let k = target.codebooks();
    let prefix = decoder_prefix(prompt, k, vocab)?;
    let stream = CodecGrid::concat(&[&prefix, target])?;
    let mut grid = apply_delay_pattern(&stream, vocab.empty())?;
    let (lp, lt) = (prefix.len(), target.len());
    let total = total_frames(lp, lt, k);
    while grid.len() < total {
        grid.push_frame(&vec![vocab.empty(); k])?;
    }
    grid.set(0, lp + lt, vocab.eos());
    let loss_mask = (0..k)
        .map(|c| {
            (0..total)
                .map(|i| match cell_role(c, i, lp, lt) {
                    CellRole::Target(_) | CellRole::Eos => 1.0,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    Ok(DecoderSequence {
        grid,
        loss_mask,
        prefix_frames: lp,
        target_frames: lt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const V: CodecVocab = CodecVocab { data: 10 };

    #[test]
    fn layout_with_prompt() {
        let prompt = CodecGrid::new(vec![vec![1, 2], vec![3, 4]]).unwrap();
        let target = CodecGrid::new(vec![vec![5, 6, 7], vec![8, 9, 0]]).unwrap();
        let seq = assemble_decoder(Some(&prompt), &target, V).unwrap();
        let (s, e, f) = (V.sep(), V.eos(), V.empty());
        assert_eq!(seq.prefix_frames, 3);
        assert_eq!(seq.total(), total_frames(3, 3, 2));
        assert_eq!(seq.grid.row(0), &[1, 2, s, 5, 6, 7, e]);
        assert_eq!(seq.grid.row(1), &[f, 3, 4, s, 8, 9, 0]);
        assert_eq!(seq.loss_mask[0], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(seq.loss_mask[1], vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let inputs = seq.inputs(V);
        assert_eq!(inputs.len(), seq.total());
        assert_eq!(inputs.row(0)[0], V.bos());
        assert_eq!(&inputs.row(0)[1..], &seq.grid.row(0)[..6]);
    }

    #[test]
    fn single_codebook_gets_eos_frame() {
        let target = CodecGrid::new(vec![vec![5, 6]]).unwrap();
        let seq = assemble_decoder(None, &target, V).unwrap();
        assert_eq!(seq.grid.row(0), &[5, 6, V.eos()]);
        assert_eq!(seq.loss_mask[0], vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn text_sep_only_with_prompt() {
        let pv = PhonemeVocab { data: 4 };
        assert_eq!(assemble_text(None, &[1, 2], pv), vec![1, 2]);
        assert_eq!(assemble_text(Some(&[3]), &[1, 2], pv), vec![3, pv.sep(), 1, 2]);
    }

    #[test]
    fn roles_match_assembled_grid() {
        let prompt = CodecGrid::new(vec![vec![1; 4]; 4]).unwrap();
        let target = CodecGrid::new(vec![vec![2; 5]; 4]).unwrap();
        let seq = assemble_decoder(Some(&prompt), &target, V).unwrap();
        for c in 0..4 {
            for i in 0..seq.total() {
                let tok = seq.grid.get(c, i);
                match cell_role(c, i, seq.prefix_frames, seq.target_frames) {
                    CellRole::Filler => assert_eq!(tok, V.empty()),
                    CellRole::Prefix(f) => assert_eq!(tok, if f == 4 { V.sep() } else { 1 }),
                    CellRole::Target(_) => assert_eq!(tok, 2),
                    CellRole::Eos => assert_eq!(tok, V.eos()),
                }
            }
        }
    }
}
