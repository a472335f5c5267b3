//! Encoder-decoder codec language model over multi-codebook token grids.
//!
//! The phoneme encoder and the codec decoder are pre-norm transformer stacks.
//! A decoder frame embeds as the sum of its `K` codebook embeddings and each
//! codebook has its own output head. With `enc_layers = 0` the model becomes
//! a decoder-only LM with the phoneme rows prepended to the decoder stream.

pub mod config;
pub mod forward;
pub mod grid;
pub mod incremental;
pub mod params;
pub mod sequence;

pub use config::{CodecVocab, ModelConfig, PhonemeVocab, PositionEncoding};
pub use forward::{weighted_codebook_loss, ForwardOutput};
pub use grid::{apply_delay_pattern, revert_delay_pattern, CodecGrid};
pub use incremental::IncrementalDecoder;
pub use params::{init_params, Layout, ParamStore};
pub use sequence::{assemble_decoder, assemble_text, total_frames, DecoderSequence};

use crate::attention::SeqIndex;
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Configuration, parameters and the layout that indexes them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: Layout,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (params, layout) = init_params(&config, seed)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Encoder output for a phoneme sequence, `S×model_dim`.
    pub fn encode_text(&self, ids: &[usize]) -> Result<Tensor> {
        if self.config.is_decoder_only() {
            return Err(Error::contract("decoder-only model has no text encoder"));
        }
        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape);
        let out = forward::encode(self, &mut tape, &vars, ids)?;
        Ok(tape.tensor(out))
    }

    /// Logits of every codebook for the frame after `delayed_prefix`.
    ///
    /// Reference implementation that reruns the whole prefix through the tape
    /// forward. `total` is the decoder stream length the progress indices are
    /// measured against.
    pub fn decode_step(&self, text: &[usize], delayed_prefix: &CodecGrid, total: usize) -> Result<Vec<Vec<f64>>> {
        let t = delayed_prefix.len();
        if t >= total {
            return Err(Error::contract(format!(
                "decode step at frame {t} of a {total}-frame sequence"
            )));
        }
        let inputs = sequence::decoder_inputs(delayed_prefix, self.config.codec());
        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape);
        let out = forward::forward(self, &mut tape, &vars, text, &inputs, total)?;
        Ok(out
            .logits
            .iter()
            .map(|&l| {
                let n = tape.shape(l)[1];
                tape.value(l)[t * n..(t + 1) * n].to_vec()
            })
            .collect())
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.numel()
    }
}

/// Indices `start..start+count` measured against `total`.
pub(crate) fn stream_positions(start: usize, count: usize, total: usize) -> Vec<SeqIndex> {
    (start..start + count)
        .map(|p| SeqIndex::progress(p, total))
        .collect()
}

/// Absolute sinusoidal encoding rows for positions `start..start+count`.
pub fn sinusoidal_rows(start: usize, count: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; count * dim];
    for (r, row) in out.chunks_exact_mut(dim).enumerate() {
        let p = (start + r) as f64;
        for i in 0..dim / 2 {
            let freq = 10000f64.powf(-2.0 * i as f64 / dim as f64);
            row[2 * i] = (p * freq).sin();
            row[2 * i + 1] = (p * freq).cos();
        }
    }
    out
}

/// Var for the parameter at `index`.
pub(crate) fn pv(vars: &[Var], index: usize) -> Var {
    vars[index]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_first_row() {
        let r = sinusoidal_rows(0, 1, 4);
        assert_eq!(r, vec![0.0, 1.0, 0.0, 1.0]);
    }
}
