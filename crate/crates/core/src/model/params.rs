//! Named parameter storage and the index layout of the model's weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Records every parameter as a leaf, in store order.
    pub fn to_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Adds tape gradients of the given leaves into the parameter slots.
    pub fn accumulate_from(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Replaces values, keeping names and shapes.
    pub fn load_values(&mut self, i: usize, values: &[f64]) -> Result<()> {
        let t = &mut self.tensors[i];
        if t.len() != values.len() {
            return Err(Error::dim(format!(
                "parameter {} holds {} values, got {}",
                self.names[i],
                t.len(),
                values.len()
            )));
        }
        t.values_mut().copy_from_slice(values);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnIdx {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_o: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct FfIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerIdx {
    pub norm_attn: NormIdx,
    pub attn: AttnIdx,
    pub norm_ff: NormIdx,
    pub ff: FfIdx,
}

#[derive(Clone, Copy, Debug)]
pub struct CrossIdx {
    pub norm: NormIdx,
    pub attn: AttnIdx,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayerIdx {
    pub norm_self: NormIdx,
    pub self_attn: AttnIdx,
    pub cross: Option<CrossIdx>,
    pub norm_ff: NormIdx,
    pub ff: FfIdx,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadIdx {
    pub weight: usize,
    pub bias: usize,
}

/// Where every weight lives in the [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub phoneme_embed: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub encoder_norm: Option<NormIdx>,
    pub codec_embed: Vec<usize>,
    pub decoder: Vec<DecoderLayerIdx>,
    pub decoder_norm: NormIdx,
    pub heads: Vec<HeadIdx>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), values).expect("shape matches")
    }
}

fn norm(store: &mut ParamStore, prefix: &str, dim: usize) -> NormIdx {
    let gain = Tensor::new(vec![dim], vec![1.0; dim]).expect("shape");
    NormIdx {
        gain: store.push(format!("{prefix}.gain"), gain),
        bias: store.push(format!("{prefix}.bias"), Tensor::zeros(&[dim])),
    }
}

fn attn(store: &mut ParamStore, init: &mut Init, prefix: &str, dim: usize, out_std: f64) -> AttnIdx {
    let std = 1.0 / (dim as f64).sqrt();
    AttnIdx {
        w_q: store.push(format!("{prefix}.w_q"), init.normal(&[dim, dim], std)),
        w_k: store.push(format!("{prefix}.w_k"), init.normal(&[dim, dim], std)),
        w_v: store.push(format!("{prefix}.w_v"), init.normal(&[dim, dim], std)),
        w_o: store.push(format!("{prefix}.w_o"), init.normal(&[dim, dim], out_std)),
    }
}

fn ff(store: &mut ParamStore, init: &mut Init, prefix: &str, dim: usize, hidden: usize, out_std: f64) -> FfIdx {
    FfIdx {
        w1: store.push(
            format!("{prefix}.w1"),
            init.normal(&[dim, hidden], 1.0 / (dim as f64).sqrt()),
        ),
        b1: store.push(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
        w2: store.push(format!("{prefix}.w2"), init.normal(&[hidden, dim], out_std)),
        b2: store.push(format!("{prefix}.b2"), Tensor::zeros(&[dim])),
    }
}

/// Builds freshly initialized parameters and their layout.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<(ParamStore, Layout)> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let d = cfg.model_dim;
    let layers = (cfg.enc_layers + cfg.dec_layers).max(1) as f64;
    // residual-branch outputs start small so the stream is dominated by the input
    let out_std = 1.0 / (d as f64).sqrt() / (2.0 * layers).sqrt();
    let ff_out_std = 1.0 / (cfg.ff_dim as f64).sqrt() / (2.0 * layers).sqrt();

    let phoneme_embed = store.push(
        "phoneme_embed",
        init.normal(&[cfg.phonemes().size(), d], 1.0),
    );
    let mut encoder = Vec::new();
    for l in 0..cfg.enc_layers {
        let p = format!("enc.{l}");
        encoder.push(EncoderLayerIdx {
            norm_attn: norm(&mut store, &format!("{p}.norm_attn"), d),
            attn: attn(&mut store, &mut init, &format!("{p}.attn"), d, out_std),
            norm_ff: norm(&mut store, &format!("{p}.norm_ff"), d),
            ff: ff(&mut store, &mut init, &format!("{p}.ff"), d, cfg.ff_dim, ff_out_std),
        });
    }
    let encoder_norm = (cfg.enc_layers > 0).then(|| norm(&mut store, "enc.norm", d));

    let embed_std = 1.0 / (cfg.codebooks as f64).sqrt();
    let codec_embed = (0..cfg.codebooks)
        .map(|c| {
            store.push(
                format!("codec_embed.{c}"),
                init.normal(&[cfg.codec().size(), d], embed_std),
            )
        })
        .collect();
    let mut decoder = Vec::new();
    for l in 0..cfg.dec_layers {
        let p = format!("dec.{l}");
        let norm_self = norm(&mut store, &format!("{p}.norm_self"), d);
        let self_attn = attn(&mut store, &mut init, &format!("{p}.self_attn"), d, out_std);
        let cross = (cfg.enc_layers > 0).then(|| CrossIdx {
            norm: norm(&mut store, &format!("{p}.norm_cross"), d),
            attn: attn(&mut store, &mut init, &format!("{p}.cross_attn"), d, out_std),
        });
        decoder.push(DecoderLayerIdx {
            norm_self,
            self_attn,
            cross,
            norm_ff: norm(&mut store, &format!("{p}.norm_ff"), d),
            ff: ff(&mut store, &mut init, &format!("{p}.ff"), d, cfg.ff_dim, ff_out_std),
        });
    }
    let decoder_norm = norm(&mut store, "dec.norm", d);
    let heads = (0..cfg.codebooks)
        .map(|c| HeadIdx {
            weight: store.push(
                format!("head.{c}.weight"),
                init.normal(&[d, cfg.codec().size()], 1.0 / (d as f64).sqrt()),
            ),
            bias: store.push(format!("head.{c}.bias"), Tensor::zeros(&[cfg.codec().size()])),
        })
        .collect();
    Ok((
        store,
        Layout {
            phoneme_embed,
            encoder,
            encoder_norm,
            codec_embed,
            decoder,
            decoder_norm,
            heads,
        },
    ))
}
