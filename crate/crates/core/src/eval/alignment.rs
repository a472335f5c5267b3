//! Cross-attention maps of a model and the flat-start construction.

use super::metrics::AlignmentMap;
use crate::data::EvalItem;
use crate::error::{Error, Result};
use crate::model::forward::forward;
use crate::model::{assemble_decoder, assemble_text, CodecGrid, Model, ModelConfig};
use crate::numeric::{Tape, Tensor};

/// Untrained model whose attention depends on position only.
///
/// Every token embeds to the same per-pair unit vector `(1, 0, 1, 0, …)`,
/// all query and key projections are the identity, and every residual
/// branch output (attention output projection, second feed-forward layer)
/// is zero. Hidden states are then identical at all positions and attention
/// logits reduce to the rotary inner product of one fixed vector with itself.
pub fn flat_start_model(config: ModelConfig) -> Result<Model> {
    let mut model = Model::new(config, 0)?;
    let d = model.config.model_dim;
    let unit: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let eye = Tensor::identity(d);
    let lay = model.layout.clone();
    let fill_rows = |model: &mut Model, idx: usize, row: &[f64]| -> Result<()> {
        let n = model.params.get(idx).rows();
        let vals: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
        model.params.load_values(idx, &vals)
    };
    fill_rows(&mut model, lay.phoneme_embed, &unit)?;
    for (c, &e) in lay.codec_embed.iter().enumerate() {
        if c == 0 {
            fill_rows(&mut model, e, &unit)?;
        } else {
            fill_rows(&mut model, e, &vec![0.0; d])?;
        }
    }
    let mut attn = Vec::new();
    let mut ffs = Vec::new();
    for l in &lay.encoder {
        attn.push(l.attn);
        ffs.push(l.ff);
    }
    for l in &lay.decoder {
        attn.push(l.self_attn);
        if let Some(c) = l.cross {
            attn.push(c.attn);
        }
        ffs.push(l.ff);
    }
    for a in attn {
        model.params.load_values(a.w_q, eye.values())?;
        model.params.load_values(a.w_k, eye.values())?;
        model.params.load_values(a.w_o, &vec![0.0; d * d])?;
    }
    for f in ffs {
        let n = model.params.get(f.w2).len();
        model.params.load_values(f.w2, &vec![0.0; n])?;
        model.params.load_values(f.b2, &vec![0.0; d])?;
    }
    Ok(model)
}

/// Cross-attention weights of decoder layer `layer` for a teacher-forced pass.
///
/// `inputs` holds decoder input frames; progress is measured against
/// `inputs.len()`.
pub fn cross_attention_map(model: &Model, text: &[usize], inputs: &CodecGrid, layer: usize) -> Result<AlignmentMap> {
    if model.config.is_decoder_only() {
        return Err(Error::contract("decoder-only model has no cross attention"));
    }
    let mut tape = Tape::new();
    let vars = model.params.to_tape(&mut tape);
    let out = forward(model, &mut tape, &vars, text, inputs, inputs.len())?;
    let w = out.cross_weights.into_iter().nth(layer).ok_or_else(|| {
        Error::index(format!("layer {layer} of {} decoder layers", model.config.dec_layers))
    })?;
    AlignmentMap::new(w)
}

/// Map for an evaluation pair under teacher forcing on the reference target.
pub fn eval_item_map(model: &Model, item: &EvalItem, layer: usize) -> Result<AlignmentMap> {
    let cfg = &model.config;
    let text = assemble_text(Some(&item.prompt.phonemes), &item.target.phonemes, cfg.phonemes());
    let seq = assemble_decoder(Some(&item.prompt.grid), &item.target.grid, cfg.codec())?;
    cross_attention_map(model, &text, &seq.inputs(cfg.codec()), layer)
}

/// Flat-start map with `len` encoder and decoder positions.
pub fn flat_start_map(config: ModelConfig, len: usize, layer: usize) -> Result<AlignmentMap> {
    let model = flat_start_model(config)?;
    let text = vec![0; len];
    let inputs = CodecGrid::filled(model.config.codebooks, len, 0);
    cross_attention_map(&model, &text, &inputs, layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::{alignment_diagonality, argmax};

    #[test]
    fn flat_start_is_diagonal() {
        let cfg = ModelConfig {
            model_dim: 32,
            heads: 4,
            ..ModelConfig::default()
        };
        for len in [8, 16, 32] {
            let map = flat_start_map(cfg.clone(), len, 0).unwrap();
            for h in 0..map.heads() {
                for t in 0..len {
                    assert_eq!(argmax(map.row(h, t)), t);
                }
            }
            assert_eq!(alignment_diagonality(&map), 1.0);
        }
    }
}
