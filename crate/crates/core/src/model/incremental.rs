//! Tape-free decoding with per-layer key/value caches.
//!
//! Produces the same logits as the teacher-forced forward for every fed
//! frame, but each frame costs one pass over the cached keys instead of a
//! pass over the whole prefix.

use super::config::PositionEncoding;
use super::grid::CodecGrid;
use super::params::{AttnIdx, FfIdx, NormIdx};
use super::{sinusoidal_rows, stream_positions, Model};
use crate::attention::{attention_kernel, rotation_for};
use crate::error::{Error, Result};
use crate::numeric::kernels;
use crate::numeric::Tensor;
use crate::positional::RotationTable;

/// Logits and cross-attention rows for a block of fed frames.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `[frame][codebook][class]`.
    pub logits: Vec<Vec<Vec<f64>>>,
    /// Per decoder layer, `heads×n×S` cross-attention weights of the block.
    pub cross_weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
struct Cache {
    keys: Vec<f64>,
    values: Vec<f64>,
    rows: usize,
}

/// Incremental decoder state for one sequence.
#[derive(Clone, Debug)]
pub struct IncrementalDecoder<'m> {
    model: &'m Model,
    total: usize,
    offset: usize,
    fed: usize,
    self_cache: Vec<Cache>,
    cross_cache: Vec<Cache>,
}

fn matmul(x: &[f64], rows: usize, w: &Tensor) -> Vec<f64> {
    let (k, n) = (w.rows(), w.cols());
    let mut out = vec![0.0; rows * n];
    kernels::gemm(rows, k, n, x, false, w.values(), false, &mut out, false);
    out
}

fn add_in_place(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

impl<'m> IncrementalDecoder<'m> {
    /// Prepares a decoder for a stream of `total` frames conditioned on `text`.
    pub fn new(model: &'m Model, text: &[usize], total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::contract("decoder total must be at least one frame"));
        }
        if text.is_empty() {
            return Err(Error::contract("text input must hold at least one phoneme"));
        }
        let cfg = &model.config;
        let layers = model.layout.decoder.len();
        let mut dec = Self {
            model,
            total,
            offset: 0,
            fed: 0,
            self_cache: vec![Cache::default(); layers],
            cross_cache: Vec::new(),
        };
        if cfg.is_decoder_only() {
            let table = model.params.get(model.layout.phoneme_embed);
            let d = cfg.model_dim;
            let mut x = Vec::with_capacity(text.len() * d);
            for &id in text {
                if id >= table.rows() {
                    return Err(Error::index(format!(
                        "phoneme id {id} >= vocab {}",
                        table.rows()
                    )));
                }
                x.extend_from_slice(table.row(id));
            }
            dec.offset = text.len();
            dec.run_layers(x, text.len(), 0)?;
        } else {
            let enc = model.encode_text(text)?;
            let s = text.len();
            let schedule = cfg.schedule()?;
            let rot = rotation_for(cfg.cross_pos.attention_mode(), &schedule, &stream_positions(0, s, s))?;
            for layer in &model.layout.decoder {
                let cross = layer.cross.expect("encoder-decoder layers carry cross attention");
                let mut keys = matmul(enc.values(), s, model.params.get(cross.attn.w_k));
                if let Some(r) = &rot {
                    rotate_heads(r, &mut keys, cfg.heads, cfg.model_dim);
                }
                let values = matmul(enc.values(), s, model.params.get(cross.attn.w_v));
                dec.cross_cache.push(Cache { keys, values, rows: s });
            }
        }
        Ok(dec)
    }

    /// Decoder frames consumed so far.
    pub fn fed(&self) -> usize {
        self.fed
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Feeds decoder input frames and returns their logits.
    pub fn feed(&mut self, frames: &CodecGrid) -> Result<StepOutput> {
        let cfg = &self.model.config;
        let n = frames.len();
        if frames.codebooks() != cfg.codebooks {
            return Err(Error::dim(format!(
                "{}-codebook frames for a {}-codebook model",
                frames.codebooks(),
                cfg.codebooks
            )));
        }
        if self.fed + n > self.total {
            return Err(Error::contract(format!(
                "feeding frames {}..{} of a {}-frame sequence",
                self.fed,
                self.fed + n,
                self.total
            )));
        }
        let d = cfg.model_dim;
        let mut x = vec![0.0; n * d];
        for (c, &table) in self.model.layout.codec_embed.iter().enumerate() {
            let table = self.model.params.get(table);
            for (i, dst) in x.chunks_exact_mut(d).enumerate() {
                let id = frames.get(c, i);
                if id >= table.rows() {
                    return Err(Error::index(format!("codec id {id} >= vocab {}", table.rows())));
                }
                add_in_place(dst, table.row(id));
            }
        }
        let start = self.offset + self.fed;
        let (x, cross_weights) = self.run_layers(x, n, start)?;
        self.fed += n;

        let lay = &self.model.layout;
        let p = &self.model.params;
        let h = kernels::layer_norm(
            &x,
            d,
            p.get(lay.decoder_norm.gain).values(),
            p.get(lay.decoder_norm.bias).values(),
        );
        let mut logits = vec![Vec::with_capacity(cfg.codebooks); n];
        for head in &lay.heads {
            let mut l = matmul(&h, n, p.get(head.weight));
            kernels::add_row_in_place(&mut l, p.get(head.bias).values());
            let classes = p.get(head.bias).len();
            for (i, row) in l.chunks_exact(classes).enumerate() {
                logits[i].push(row.to_vec());
            }
        }
        Ok(StepOutput {
            logits,
            cross_weights,
        })
    }

    /// Runs `n` stream rows starting at stream position `start` through every
    /// decoder layer, appending to the self-attention caches.
    fn run_layers(&mut self, mut x: Vec<f64>, n: usize, start: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let model = self.model;
        let cfg = &model.config;
        let d = cfg.model_dim;
        let stream_total = self.offset + self.total;
        if cfg.decoder_pos == PositionEncoding::Sinusoidal {
            add_in_place(&mut x, &sinusoidal_rows(start, n, d));
        }
        let schedule = cfg.schedule()?;
        let self_rot = rotation_for(
            cfg.decoder_pos.attention_mode(),
            &schedule,
            &stream_positions(start, n, stream_total),
        )?;
        let cross_rot = if cfg.is_decoder_only() {
            None
        } else {
            rotation_for(
                cfg.cross_pos.attention_mode(),
                &schedule,
                &stream_positions(start - self.offset, n, self.total),
            )?
        };
        let mut cross_weights = Vec::new();
        for (l, layer) in model.layout.decoder.iter().enumerate() {
            let h = self.norm(&x, layer.norm_self);
            let a = self.self_attend(l, &h, n, start, layer.self_attn, self_rot.as_ref());
            add_in_place(&mut x, &a);
            if let Some(cross) = layer.cross {
                let h = self.norm(&x, cross.norm);
                let (a, w) = self.cross_attend(l, &h, n, cross.attn, cross_rot.as_ref());
                cross_weights.push(w);
                add_in_place(&mut x, &a);
            }
            let h = self.norm(&x, layer.norm_ff);
            let f = self.feed_forward(&h, n, layer.ff);
            add_in_place(&mut x, &f);
        }
        Ok((x, cross_weights))
    }

    fn norm(&self, x: &[f64], idx: NormIdx) -> Vec<f64> {
        let p = &self.model.params;
        kernels::layer_norm(
            x,
            self.model.config.model_dim,
            p.get(idx.gain).values(),
            p.get(idx.bias).values(),
        )
    }

    fn feed_forward(&self, h: &[f64], n: usize, f: FfIdx) -> Vec<f64> {
        let p = &self.model.params;
        let mut u = matmul(h, n, p.get(f.w1));
        kernels::add_row_in_place(&mut u, p.get(f.b1).values());
        for v in &mut u {
            *v = kernels::gelu(*v);
        }
        let mut out = matmul(&u, n, p.get(f.w2));
        kernels::add_row_in_place(&mut out, p.get(f.b2).values());
        out
    }

    fn self_attend(
        &mut self,
        layer: usize,
        h: &[f64],
        n: usize,
        start: usize,
        a: AttnIdx,
        rot: Option<&RotationTable>,
    ) -> Vec<f64> {
        let cfg = &self.model.config;
        let p = &self.model.params;
        let (heads, width) = (cfg.heads, cfg.model_dim);
        let mut q = matmul(h, n, p.get(a.w_q));
        let mut k = matmul(h, n, p.get(a.w_k));
        let v = matmul(h, n, p.get(a.w_v));
        if let Some(r) = rot {
            rotate_heads(r, &mut q, heads, width);
            rotate_heads(r, &mut k, heads, width);
        }
        let cache = &mut self.self_cache[layer];
        debug_assert_eq!(cache.rows, start);
        cache.keys.extend_from_slice(&k);
        cache.values.extend_from_slice(&v);
        cache.rows += n;
        let (out, _) = attention_kernel(
            &q,
            &cache.keys,
            &cache.values,
            n,
            cache.rows,
            heads,
            width / heads,
            Some(start),
        );
        matmul(&out, n, p.get(a.w_o))
    }

    fn cross_attend(
        &self,
        layer: usize,
        h: &[f64],
        n: usize,
        a: AttnIdx,
        rot: Option<&RotationTable>,
    ) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.model.config;
        let p = &self.model.params;
        let (heads, width) = (cfg.heads, cfg.model_dim);
        let mut q = matmul(h, n, p.get(a.w_q));
        if let Some(r) = rot {
            rotate_heads(r, &mut q, heads, width);
        }
        let cache = &self.cross_cache[layer];
        let (out, probs) = attention_kernel(
            &q,
            &cache.keys,
            &cache.values,
            n,
            cache.rows,
            heads,
            width / heads,
            None,
        );
        (matmul(&out, n, p.get(a.w_o)), probs)
    }
}

fn rotate_heads(rot: &RotationTable, x: &mut [f64], heads: usize, width: usize) {
    let d = width / heads;
    for h in 0..heads {
        rot.rotate(x, width, h * d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sequence::assemble_decoder;
    use crate::model::ModelConfig;

    fn check(pos: PositionEncoding, enc_layers: usize, chunk: usize) {
        let cfg = ModelConfig {
            enc_layers,
            dec_layers: 2,
            model_dim: 16,
            ff_dim: 24,
            heads: 2,
            codebooks: 3,
            phoneme_vocab: 5,
            codec_vocab: 9,
            ..ModelConfig::default()
        }
        .with_positions(pos);
        let m = Model::new(cfg, 11).unwrap();
        let prompt = CodecGrid::new(vec![vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 0]]).unwrap();
        let target = CodecGrid::new(vec![vec![3, 3, 1, 2], vec![0, 1, 2, 3], vec![4, 4, 4, 8]]).unwrap();
        let seq = assemble_decoder(Some(&prompt), &target, m.config.codec()).unwrap();
        let text = vec![0, 1, 5, 2, 3, 4];
        let inputs = seq.inputs(m.config.codec());
        let mut dec = IncrementalDecoder::new(&m, &text, seq.total()).unwrap();
        let mut got = Vec::new();
        let mut i = 0;
        while i < inputs.len() {
            let end = (i + chunk).min(inputs.len());
            got.extend(dec.feed(&inputs.slice(i, end)).unwrap().logits);
            i = end;
        }
        for t in 0..seq.total() {
            let want = m.decode_step(&text, &seq.grid.slice(0, t), seq.total()).unwrap();
            for c in 0..3 {
                for (a, b) in got[t][c].iter().zip(&want[c]) {
                    assert!((a - b).abs() < 1e-9, "{pos} t={t} c={c}: {a} vs {b}");
                }
            }
        }
        assert!(dec.feed(&inputs.slice(0, 1)).is_err());
    }

    #[test]
    fn matches_full_forward() {
        check(PositionEncoding::PmRope, 1, 1);
        check(PositionEncoding::Rope, 1, 3);
        check(PositionEncoding::Sinusoidal, 0, 1);
        check(PositionEncoding::PmRope, 0, 2);
    }
}
