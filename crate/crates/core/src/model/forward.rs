//! Teacher-forced forward pass on a tape.

use std::rc::Rc;

use super::config::{CodecVocab, PositionEncoding};
use super::grid::CodecGrid;
use super::params::{AttnIdx, FfIdx, NormIdx};
use super::{pv, sinusoidal_rows, stream_positions, Model};
use crate::attention::{attend_on_tape, rotation_for, ProjectionVars};
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::positional::RotationTable;

/// Per-codebook logits plus the attention weights of every decoder layer.
#[derive(Debug)]
pub struct ForwardOutput {
    /// One `T×codec_size` logit matrix per codebook.
    pub logits: Vec<Var>,
    /// `heads×T×S` cross-attention weights per decoder layer (empty when
    /// decoder-only).
    pub cross_weights: Vec<Tensor>,
    /// Self-attention weights per decoder layer over the decoder stream.
    pub self_weights: Vec<Tensor>,
}

pub(crate) fn norm(tape: &mut Tape, vars: &[Var], x: Var, n: NormIdx) -> Result<Var> {
    tape.layer_norm(x, pv(vars, n.gain), pv(vars, n.bias))
}

pub(crate) fn feed_forward(tape: &mut Tape, vars: &[Var], x: Var, f: FfIdx) -> Result<Var> {
    let h = tape.matmul(x, pv(vars, f.w1))?;
    let h = tape.add_row(h, pv(vars, f.b1))?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, pv(vars, f.w2))?;
    tape.add_row(h, pv(vars, f.b2))
}

pub(crate) fn projections(vars: &[Var], a: AttnIdx) -> ProjectionVars {
    ProjectionVars {
        w_q: pv(vars, a.w_q),
        w_k: pv(vars, a.w_k),
        w_v: pv(vars, a.w_v),
        w_o: pv(vars, a.w_o),
    }
}

fn rotation(
    model: &Model,
    enc: PositionEncoding,
    start: usize,
    count: usize,
    total: usize,
) -> Result<Option<Rc<RotationTable>>> {
    let schedule = model.config.schedule()?;
    let positions = stream_positions(start, count, total);
    Ok(rotation_for(enc.attention_mode(), &schedule, &positions)?.map(Rc::new))
}

fn add_sinusoids(tape: &mut Tape, x: Var, start: usize) -> Result<Var> {
    let (rows, dim) = (tape.shape(x)[0], tape.shape(x)[1]);
    let pe = tape.constant(vec![rows, dim], sinusoidal_rows(start, rows, dim))?;
    tape.add(x, pe)
}

/// Encoder stack over phoneme ids, returning `S×model_dim`.
pub fn encode(model: &Model, tape: &mut Tape, vars: &[Var], ids: &[usize]) -> Result<Var> {
    let cfg = &model.config;
    let lay = &model.layout;
    if ids.is_empty() {
        return Err(Error::contract("encoder input must hold at least one phoneme"));
    }
    let s = ids.len();
    let mut x = tape.embed(pv(vars, lay.phoneme_embed), ids)?;
    if cfg.encoder_pos == PositionEncoding::Sinusoidal {
        x = add_sinusoids(tape, x, 0)?;
    }
    let rot = rotation(model, cfg.encoder_pos, 0, s, s)?;
    for layer in &lay.encoder {
        let h = norm(tape, vars, x, layer.norm_attn)?;
        let (a, _) = attend_on_tape(
            tape,
            h,
            h,
            projections(vars, layer.attn),
            cfg.heads,
            rot.clone(),
            rot.clone(),
            false,
        )?;
        x = tape.add(x, a)?;
        let h = norm(tape, vars, x, layer.norm_ff)?;
        let f = feed_forward(tape, vars, h, layer.ff)?;
        x = tape.add(x, f)?;
    }
    match lay.encoder_norm {
        Some(n) => norm(tape, vars, x, n),
        None => Ok(x),
    }
}

/// Sum of per-codebook embeddings for each frame.
pub(crate) fn embed_frames(model: &Model, tape: &mut Tape, vars: &[Var], inputs: &CodecGrid) -> Result<Var> {
    let mut x: Option<Var> = None;
    for (c, &table) in model.layout.codec_embed.iter().enumerate() {
        let e = tape.embed(pv(vars, table), inputs.row(c))?;
        x = Some(match x {
            None => e,
            Some(acc) => tape.add(acc, e)?,
        });
    }
    x.ok_or_else(|| Error::contract("model has no codebooks"))
}

/// Full teacher-forced pass.
///
/// `inputs` is the decoder input grid (BOS then delayed frames), its length
/// `t` may be shorter than `total`, the stream length that progress indices
/// are measured against. `text` feeds the encoder, or is prepended to the
/// decoder stream for a decoder-only model.
pub fn forward(
    model: &Model,
    tape: &mut Tape,
    vars: &[Var],
    text: &[usize],
    inputs: &CodecGrid,
    total: usize,
) -> Result<ForwardOutput> {
    let cfg = &model.config;
    let lay = &model.layout;
    let t = inputs.len();
    if inputs.codebooks() != cfg.codebooks {
        return Err(Error::dim(format!(
            "{}-codebook input for a {}-codebook model",
            inputs.codebooks(),
            cfg.codebooks
        )));
    }
    if t == 0 || t > total {
        return Err(Error::contract(format!(
            "decoder input of {t} frames against a total of {total}"
        )));
    }
    if text.is_empty() {
        return Err(Error::contract("text input must hold at least one phoneme"));
    }
    let frames = embed_frames(model, tape, vars, inputs)?;
    let s = text.len();

    let (enc, mut x, offset, stream_total) = if cfg.is_decoder_only() {
        let txt = tape.embed(pv(vars, lay.phoneme_embed), text)?;
        (None, tape.concat_rows(&[txt, frames])?, s, s + total)
    } else {
        (Some(encode(model, tape, vars, text)?), frames, 0, total)
    };
    let rows = offset + t;
    if cfg.decoder_pos == PositionEncoding::Sinusoidal {
        x = add_sinusoids(tape, x, 0)?;
    }
    let self_rot = rotation(model, cfg.decoder_pos, 0, rows, stream_total)?;
    let (cross_q, cross_k) = if enc.is_some() {
        (
            rotation(model, cfg.cross_pos, 0, t, total)?,
            rotation(model, cfg.cross_pos, 0, s, s)?,
        )
    } else {
        (None, None)
    };

    let mut cross_weights = Vec::new();
    let mut self_weights = Vec::new();
    for layer in &lay.decoder {
        let h = norm(tape, vars, x, layer.norm_self)?;
        let (a, w) = attend_on_tape(
            tape,
            h,
            h,
            projections(vars, layer.self_attn),
            cfg.heads,
            self_rot.clone(),
            self_rot.clone(),
            true,
        )?;
        self_weights.push(w);
        x = tape.add(x, a)?;
        if let (Some(cross), Some(enc)) = (layer.cross, enc) {
            let h = norm(tape, vars, x, cross.norm)?;
            let (a, w) = attend_on_tape(
                tape,
                h,
                enc,
                projections(vars, cross.attn),
                cfg.heads,
                cross_q.clone(),
                cross_k.clone(),
                false,
            )?;
            cross_weights.push(w);
            x = tape.add(x, a)?;
        }
        let h = norm(tape, vars, x, layer.norm_ff)?;
        let f = feed_forward(tape, vars, h, layer.ff)?;
        x = tape.add(x, f)?;
    }
    if offset > 0 {
        x = tape.slice_rows(x, offset, t)?;
    }
    let h = norm(tape, vars, x, lay.decoder_norm)?;
    let mut logits = Vec::with_capacity(cfg.codebooks);
    for head in &lay.heads {
        let l = tape.matmul(h, pv(vars, head.weight))?;
        logits.push(tape.add_row(l, pv(vars, head.bias))?);
    }
    Ok(ForwardOutput {
        logits,
        cross_weights,
        self_weights,
    })
}

/// Weighted loss and its per-codebook terms.
#[derive(Clone, Debug)]
pub struct CodebookLoss {
    pub total: Var,
    pub per_codebook: Vec<Var>,
}

/// `Σ_c w_c · CE(logits_c, targets_c, mask_c)`; cells holding the delay
/// filler are dropped from the mask.
pub fn weighted_codebook_loss(
    tape: &mut Tape,
    logits: &[Var],
    targets: &CodecGrid,
    mask: &[Vec<f64>],
    weights: &[f64],
    vocab: CodecVocab,
) -> Result<CodebookLoss> {
    let k = targets.codebooks();
    if weights.len() != k || logits.len() != k || mask.len() != k {
        return Err(Error::contract(format!(
            "{} weights, {} logit heads and {} mask rows for {k} codebooks",
            weights.len(),
            logits.len(),
            mask.len()
        )));
    }
    let mut terms = Vec::with_capacity(k);
    for c in 0..k {
        let row = targets.row(c);
        let m: Vec<f64> = mask[c]
            .iter()
            .zip(row)
            .map(|(&w, &tok)| if tok == vocab.empty() { 0.0 } else { w })
            .collect();
        terms.push(tape.cross_entropy(logits[c], row, &m)?);
    }
    let weighted: Vec<(Var, f64)> = terms.iter().copied().zip(weights.iter().copied()).collect();
    Ok(CodebookLoss {
        total: tape.weighted_sum(&weighted)?,
        per_codebook: terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sequence::assemble_decoder;
    use crate::model::ModelConfig;
    use crate::numeric::grad_check;

    fn tiny(pos: PositionEncoding, enc_layers: usize) -> Model {
        let cfg = ModelConfig {
            enc_layers,
            dec_layers: 2,
            model_dim: 8,
            ff_dim: 12,
            heads: 2,
            codebooks: 2,
            phoneme_vocab: 4,
            codec_vocab: 6,
            ..ModelConfig::default()
        }
        .with_positions(pos);
        Model::new(cfg, 3).unwrap()
    }

    fn example(m: &Model) -> (Vec<usize>, crate::model::DecoderSequence) {
        let target = CodecGrid::new(vec![vec![1, 2, 3], vec![4, 5, 0]]).unwrap();
        let prompt = CodecGrid::new(vec![vec![0, 1], vec![2, 3]]).unwrap();
        let seq = assemble_decoder(Some(&prompt), &target, m.config.codec()).unwrap();
        (vec![0, 1, m.config.phonemes().sep(), 2, 3], seq)
    }

    #[test]
    fn logits_shape() {
        for enc in [0, 1] {
            let m = tiny(PositionEncoding::PmRope, enc);
            let (text, seq) = example(&m);
            let mut tape = Tape::new();
            let vars = m.params.to_tape(&mut tape);
            let inputs = seq.inputs(m.config.codec());
            let out = forward(&m, &mut tape, &vars, &text, &inputs, seq.total()).unwrap();
            assert_eq!(out.logits.len(), 2);
            assert_eq!(tape.shape(out.logits[0]), &[seq.total(), m.config.codec().size()]);
            assert_eq!(out.cross_weights.len(), if enc == 0 { 0 } else { 2 });
        }
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let m = tiny(PositionEncoding::Rope, 1);
        let (text, seq) = example(&m);
        let mut tape = Tape::new();
        let vars = m.params.to_tape(&mut tape);
        let out = forward(&m, &mut tape, &vars, &text, &seq.inputs(m.config.codec()), seq.total()).unwrap();
        let loss = weighted_codebook_loss(&mut tape, &out.logits, &seq.grid, &seq.loss_mask, &[0.0, 0.0], m.config.codec())
            .unwrap();
        assert_eq!(tape.value(loss.total), &[0.0]);
        assert!(weighted_codebook_loss(&mut tape, &out.logits, &seq.grid, &seq.loss_mask, &[1.0], m.config.codec()).is_err());
    }

    #[test]
    fn full_loss_gradient_wrt_embeddings() {
        for pos in [PositionEncoding::PmRope, PositionEncoding::Rope, PositionEncoding::Sinusoidal] {
            let enc = usize::from(pos != PositionEncoding::Sinusoidal);
            let m = tiny(pos, enc);
            let (text, seq) = example(&m);
            let inputs = seq.inputs(m.config.codec());
            let idx = m.layout.codec_embed[0];
            let table = m.params.get(idx).clone();
            let err = grad_check(
                |tape, x| {
                    let mut vars = m.params.to_tape(tape);
                    vars[idx] = x;
                    let out = forward(&m, tape, &vars, &text, &inputs, seq.total())?;
                    let l = weighted_codebook_loss(
                        tape,
                        &out.logits,
                        &seq.grid,
                        &seq.loss_mask,
                        &[5.0, 1.0],
                        m.config.codec(),
                    )?;
                    Ok(l.total)
                },
                &table,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "{pos}: {err}");
        }
    }
}
