//! Multi-head scaled dot-product attention with a pluggable rotary transform.
//!
//! The rotary transform is applied per head after projection, to queries and
//! keys only; values are never rotated. Attention weights are always returned
//! so alignment maps can be rendered from the same computation.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numeric::kernels;
use crate::numeric::{CustomOp, GradSink, Tape, Tensor, Var};
use crate::positional::{ProgressIndex, RotationSchedule, RotationTable};

/// Additive surrogate for `−∞` in masked logits.
pub const MASK_VALUE: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalMode {
    None,
    Rope,
    PmRope,
}

impl PositionalMode {
    pub fn is_rotary(self) -> bool {
        !matches!(self, PositionalMode::None)
    }
}

/// Position of a token, optionally tagged with its sequence total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqIndex {
    pub position: usize,
    pub total: Option<usize>,
}

impl SeqIndex {
    pub fn plain(position: usize) -> Self {
        Self {
            position,
            total: None,
        }
    }

    pub fn progress(position: usize, total: usize) -> Self {
        Self {
            position,
            total: Some(total),
        }
    }

    /// `0..len` with every index carrying `total`.
    pub fn sequence(len: usize, total: usize) -> Vec<Self> {
        (0..len).map(|p| Self::progress(p, total)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub positional_mode: PositionalMode,
    pub causal: bool,
    pub schedule: RotationSchedule,
}

impl AttentionConfig {
    pub fn new(heads: usize, head_dim: usize, positional_mode: PositionalMode, causal: bool) -> Result<Self> {
        if heads == 0 {
            return Err(Error::contract("attention needs at least one head"));
        }
        if positional_mode.is_rotary() && head_dim % 2 != 0 {
            return Err(Error::contract(format!(
                "rotary attention needs an even head dimension, got {head_dim}"
            )));
        }
        // The schedule dimension is irrelevant without rotation; keep it valid.
        let schedule = RotationSchedule::with_dim(if head_dim % 2 == 0 { head_dim.max(2) } else { 2 })?;
        Ok(Self {
            heads,
            head_dim,
            positional_mode,
            causal,
            schedule,
        })
    }

    pub fn with_schedule(mut self, schedule: RotationSchedule) -> Result<Self> {
        if self.positional_mode.is_rotary() && schedule.dim() != self.head_dim {
            return Err(Error::contract(format!(
                "schedule dimension {} differs from head dimension {}",
                schedule.dim(),
                self.head_dim
            )));
        }
        self.schedule = schedule;
        Ok(self)
    }

    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Rotation table for a list of token positions, `None` without rotation.
    pub fn rotation(&self, positions: &[SeqIndex]) -> Result<Option<RotationTable>> {
        rotation_for(self.positional_mode, &self.schedule, positions)
    }
}

pub fn rotation_for(
    mode: PositionalMode,
    schedule: &RotationSchedule,
    positions: &[SeqIndex],
) -> Result<Option<RotationTable>> {
    match mode {
        PositionalMode::None => Ok(None),
        PositionalMode::Rope => {
            let p: Vec<usize> = positions.iter().map(|s| s.position).collect();
            Ok(Some(RotationTable::for_positions(schedule, &p)))
        }
        PositionalMode::PmRope => {
            let progress = positions
                .iter()
                .map(|s| {
                    let total = s.total.ok_or_else(|| {
                        Error::contract(format!(
                            "position {} has no sequence total for progress rotation",
                            s.position
                        ))
                    })?;
                    ProgressIndex::new(s.position, total)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(RotationTable::for_progress(schedule, &progress)))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

/// `T×T` additive mask: 0 where `s <= t`, [`MASK_VALUE`] elsewhere.
pub fn causal_mask(len: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, len]);
    let v = t.values_mut();
    for r in 0..len {
        for c in r + 1..len {
            v[r * len + c] = MASK_VALUE;
        }
    }
    t
}

/// `T×(H·D)` → `H×T×D`.
pub fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::dim(format!("split_heads expects a matrix, got {:?}", x.shape())));
    }
    let (rows, width) = (x.rows(), x.cols());
    if heads == 0 || width % heads != 0 {
        return Err(Error::contract(format!(
            "width {width} is not divisible into {heads} heads"
        )));
    }
    let d = width / heads;
    let mut out = Vec::with_capacity(x.len());
    for h in 0..heads {
        for r in 0..rows {
            out.extend_from_slice(&x.row(r)[h * d..(h + 1) * d]);
        }
    }
    Tensor::new(vec![heads, rows, d], out)
}

/// `H×T×D` → `T×(H·D)`.
pub fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let &[heads, rows, d] = x.shape() else {
        return Err(Error::dim(format!("merge_heads expects H×T×D, got {:?}", x.shape())));
    };
    let v = x.values();
    let mut out = vec![0.0; v.len()];
    for h in 0..heads {
        for r in 0..rows {
            let src = &v[(h * rows + r) * d..(h * rows + r + 1) * d];
            out[r * heads * d + h * d..r * heads * d + (h + 1) * d].copy_from_slice(src);
        }
    }
    Tensor::new(vec![rows, heads * d], out)
}

fn gather_head(x: &[f64], rows: usize, width: usize, h: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * d);
    for r in 0..rows {
        out.extend_from_slice(&x[r * width + h * d..r * width + (h + 1) * d]);
    }
    out
}

fn scatter_head_add(dst: &mut [f64], src: &[f64], rows: usize, width: usize, h: usize, d: usize) {
    for r in 0..rows {
        for (a, b) in dst[r * width + h * d..r * width + (h + 1) * d]
            .iter_mut()
            .zip(&src[r * d..(r + 1) * d])
        {
            *a += b;
        }
    }
}

/// Attention over already-rotated queries and keys.
///
/// `q` is `T×(H·D)`, `k`/`v` are `S×(H·D)`. Returns the merged `T×(H·D)`
/// output and `H×T×S` weights. `causal` masks `s > t + causal_offset`.
#[allow(clippy::too_many_arguments)]
pub fn attention_kernel(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t_len: usize,
    s_len: usize,
    heads: usize,
    d: usize,
    causal: Option<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let width = heads * d;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; t_len * width];
    let mut probs = vec![0.0; heads * t_len * s_len];
    for h in 0..heads {
        let qh = gather_head(q, t_len, width, h, d);
        let kh = gather_head(k, s_len, width, h, d);
        let vh = gather_head(v, s_len, width, h, d);
        let p = &mut probs[h * t_len * s_len..(h + 1) * t_len * s_len];
        kernels::gemm(t_len, d, s_len, &qh, false, &kh, true, p, false);
        for (t, row) in p.chunks_exact_mut(s_len).enumerate() {
            for (s, x) in row.iter_mut().enumerate() {
                *x *= scale;
                if let Some(off) = causal {
                    if s > t + off {
                        *x += MASK_VALUE;
                    }
                }
            }
            kernels::softmax_in_place(row);
        }
        let mut oh = vec![0.0; t_len * d];
        kernels::gemm(t_len, s_len, d, p, false, &vh, false, &mut oh, false);
        scatter_head_add(&mut out, &oh, t_len, width, h, d);
    }
    (out, probs)
}

struct AttentionCore {
    q: Var,
    k: Var,
    v: Var,
    t_len: usize,
    s_len: usize,
    heads: usize,
    d: usize,
    q_rot: Option<Rc<RotationTable>>,
    k_rot: Option<Rc<RotationTable>>,
    qr: Vec<f64>,
    kr: Vec<f64>,
    vals: Vec<f64>,
    probs: Vec<f64>,
}

impl CustomOp for AttentionCore {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.q, self.k, self.v]
    }

    fn backward(&self, out_grad: &[f64], grads: &mut GradSink<'_>) {
        let (t_len, s_len, d, heads) = (self.t_len, self.s_len, self.d, self.heads);
        let width = heads * d;
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = vec![0.0; t_len * width];
        let mut dk = vec![0.0; s_len * width];
        let mut dv = vec![0.0; s_len * width];
        for h in 0..heads {
            let p = &self.probs[h * t_len * s_len..(h + 1) * t_len * s_len];
            let g = gather_head(out_grad, t_len, width, h, d);
            let qh = gather_head(&self.qr, t_len, width, h, d);
            let kh = gather_head(&self.kr, s_len, width, h, d);
            let vh = gather_head(&self.vals, s_len, width, h, d);
            // dV = Pᵀ·G ; dP = G·Vᵀ
            let mut dvh = vec![0.0; s_len * d];
            kernels::gemm(s_len, t_len, d, p, true, &g, false, &mut dvh, false);
            let mut dp = vec![0.0; t_len * s_len];
            kernels::gemm(t_len, d, s_len, &g, false, &vh, true, &mut dp, false);
            for (dr, pr) in dp.chunks_exact_mut(s_len).zip(p.chunks_exact(s_len)) {
                let dotp = kernels::dot(dr, pr);
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = pv * (*x - dotp) * scale;
                }
            }
            let mut dqh = vec![0.0; t_len * d];
            kernels::gemm(t_len, s_len, d, &dp, false, &kh, false, &mut dqh, false);
            let mut dkh = vec![0.0; s_len * d];
            kernels::gemm(s_len, t_len, d, &dp, true, &qh, false, &mut dkh, false);
            scatter_head_add(&mut dq, &dqh, t_len, width, h, d);
            scatter_head_add(&mut dk, &dkh, s_len, width, h, d);
            scatter_head_add(&mut dv, &dvh, s_len, width, h, d);
        }
        if let Some(rot) = &self.q_rot {
            for h in 0..heads {
                rot.unrotate(&mut dq, width, h * d);
            }
        }
        if let Some(rot) = &self.k_rot {
            for h in 0..heads {
                rot.unrotate(&mut dk, width, h * d);
            }
        }
        for (var, delta) in [(self.q, dq), (self.k, dk), (self.v, dv)] {
            if let Some(g) = grads.get(var) {
                for (a, b) in g.iter_mut().zip(&delta) {
                    *a += b;
                }
            }
        }
    }
}

/// Records the rotation + softmax attention core on a tape.
///
/// `q` is `T×(H·D)`, `k` and `v` are `S×(H·D)` projected activations.
/// Returns the merged output and the `H×T×S` weights.
#[allow(clippy::too_many_arguments)]
pub fn attention_core(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    q_rot: Option<Rc<RotationTable>>,
    k_rot: Option<Rc<RotationTable>>,
    causal: bool,
) -> Result<(Var, Tensor)> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs != ks || qs[1] != ks[1] {
        return Err(Error::dim(format!(
            "attention over q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    let (t_len, width, s_len) = (qs[0], qs[1], ks[0]);
    if heads == 0 || width % heads != 0 {
        return Err(Error::contract(format!(
            "width {width} is not divisible into {heads} heads"
        )));
    }
    let d = width / heads;
    if causal && t_len != s_len {
        return Err(Error::contract(format!(
            "causal attention needs a single sequence, got {t_len} queries and {s_len} keys"
        )));
    }
    for (rot, rows) in [(&q_rot, t_len), (&k_rot, s_len)] {
        if let Some(r) = rot {
            if r.rows() != rows || r.dim() != d {
                return Err(Error::dim(format!(
                    "rotation table {}×{} for {rows} rows of head dimension {d}",
                    r.rows(),
                    r.dim()
                )));
            }
        }
    }
    let mut qr = tape.value(q).to_vec();
    let mut kr = tape.value(k).to_vec();
    if let Some(rot) = &q_rot {
        for h in 0..heads {
            rot.rotate(&mut qr, width, h * d);
        }
    }
    if let Some(rot) = &k_rot {
        for h in 0..heads {
            rot.rotate(&mut kr, width, h * d);
        }
    }
    let vals = tape.value(v).to_vec();
    let (out, probs) = attention_kernel(
        &qr,
        &kr,
        &vals,
        t_len,
        s_len,
        heads,
        d,
        causal.then_some(0),
    );
    let weights = Tensor::new(vec![heads, t_len, s_len], probs.clone())?;
    let op = AttentionCore {
        q,
        k,
        v,
        t_len,
        s_len,
        heads,
        d,
        q_rot,
        k_rot,
        qr,
        kr,
        vals,
        probs,
    };
    let out = tape.push_custom(vec![t_len, width], out, Box::new(op));
    Ok((out, weights))
}

/// Projection variables for one attention layer on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

/// Full attention layer on a tape: projections, rotation, softmax, output.
#[allow(clippy::too_many_arguments)]
pub fn attend_on_tape(
    tape: &mut Tape,
    queries: Var,
    keys_values: Var,
    proj: ProjectionVars,
    heads: usize,
    q_rot: Option<Rc<RotationTable>>,
    k_rot: Option<Rc<RotationTable>>,
    causal: bool,
) -> Result<(Var, Tensor)> {
    let q = tape.matmul(queries, proj.w_q)?;
    let k = tape.matmul(keys_values, proj.w_k)?;
    let v = tape.matmul(keys_values, proj.w_v)?;
    let (core, weights) = attention_core(tape, q, k, v, heads, q_rot, k_rot, causal)?;
    let out = tape.matmul(core, proj.w_o)?;
    Ok((out, weights))
}

/// Where keys and values come from.
pub enum Source<'a> {
    /// Keys/values are the query sequence itself.
    SelfAttention,
    /// A distinct source sequence with its own positions.
    Cross(&'a Tensor, &'a [SeqIndex]),
}

/// Standalone attention over concrete tensors.
///
/// Returns outputs (`T×model_dim`) and weights (`heads×T×S`).
pub fn attend(
    queries: &Tensor,
    target_positions: &[SeqIndex],
    source: Source<'_>,
    weights: &ProjectionWeights,
    config: &AttentionConfig,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let y = tape.leaf(queries);
    let proj = ProjectionVars {
        w_q: tape.leaf(&weights.w_q),
        w_k: tape.leaf(&weights.w_k),
        w_v: tape.leaf(&weights.w_v),
        w_o: tape.leaf(&weights.w_o),
    };
    let (out, attn) = attend_vars(&mut tape, y, target_positions, source, proj, config)?;
    Ok((tape.tensor(out), attn))
}

/// [`attend`] on an existing tape with the query input already recorded.
pub fn attend_vars(
    tape: &mut Tape,
    y: Var,
    target_positions: &[SeqIndex],
    source: Source<'_>,
    proj: ProjectionVars,
    config: &AttentionConfig,
) -> Result<(Var, Tensor)> {
    let t_len = tape.shape(y)[0];
    if target_positions.len() != t_len {
        return Err(Error::dim(format!(
            "{} target positions for {t_len} queries",
            target_positions.len()
        )));
    }
    let q_rot = config.rotation(target_positions)?.map(Rc::new);
    let (x, k_rot) = match source {
        Source::SelfAttention => (y, q_rot.clone()),
        Source::Cross(kv, source_positions) => {
            if config.causal {
                return Err(Error::contract(
                    "causal masking applies to self-attention only",
                ));
            }
            if source_positions.len() != kv.rows() {
                return Err(Error::dim(format!(
                    "{} source positions for {} keys",
                    source_positions.len(),
                    kv.rows()
                )));
            }
            let x = tape.leaf(kv);
            (x, config.rotation(source_positions)?.map(Rc::new))
        }
    };
    attend_on_tape(tape, y, x, proj, config.heads, q_rot, k_rot, config.causal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, dim: usize) -> ProjectionWeights {
        ProjectionWeights {
            w_q: random(rng, &[dim, dim]),
            w_k: random(rng, &[dim, dim]),
            w_v: random(rng, &[dim, dim]),
            w_o: random(rng, &[dim, dim]),
        }
    }

    fn row_sums_ok(w: &Tensor) {
        let s = *w.shape().last().unwrap();
        for row in w.values().chunks(s) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let cfg = AttentionConfig::new(1, 2, PositionalMode::None, false).unwrap();
        let w = ProjectionWeights {
            w_q: Tensor::identity(2),
            w_k: Tensor::identity(2),
            w_v: Tensor::identity(2),
            w_o: Tensor::identity(2),
        };
        let y = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![0.4, 0.4], vec![0.4, 0.4]]).unwrap();
        let xp = [SeqIndex::plain(0), SeqIndex::plain(1)];
        let yp: Vec<_> = (0..3).map(SeqIndex::plain).collect();
        let (_, attn) = attend(&y, &yp, Source::Cross(&x, &xp), &w, &cfg).unwrap();
        assert!(attn.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn causal_first_row_sees_only_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AttentionConfig::new(2, 2, PositionalMode::Rope, true).unwrap();
        let y = random(&mut rng, &[4, 4]);
        let pos: Vec<_> = (0..4).map(SeqIndex::plain).collect();
        let (_, attn) = attend(&y, &pos, Source::SelfAttention, &random_weights(&mut rng, 4), &cfg).unwrap();
        row_sums_ok(&attn);
        for h in 0..2 {
            assert_eq!(attn.values()[h * 16], 1.0);
            for t in 0..4 {
                for s in t + 1..4 {
                    assert_eq!(attn.values()[h * 16 + t * 4 + s], 0.0);
                }
            }
        }
    }

    #[test]
    fn causal_cross_attention_is_rejected() {
        let cfg = AttentionConfig::new(1, 2, PositionalMode::None, true).unwrap();
        let y = Tensor::zeros(&[2, 2]);
        let pos = [SeqIndex::plain(0), SeqIndex::plain(1)];
        let w = ProjectionWeights {
            w_q: Tensor::identity(2),
            w_k: Tensor::identity(2),
            w_v: Tensor::identity(2),
            w_o: Tensor::identity(2),
        };
        assert!(matches!(
            attend(&y, &pos, Source::Cross(&y, &pos), &w, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pmrope_without_total_is_rejected() {
        let cfg = AttentionConfig::new(1, 2, PositionalMode::PmRope, false).unwrap();
        let y = Tensor::zeros(&[2, 2]);
        let pos = [SeqIndex::plain(0), SeqIndex::plain(1)];
        let w = ProjectionWeights {
            w_q: Tensor::identity(2),
            w_k: Tensor::identity(2),
            w_v: Tensor::identity(2),
            w_o: Tensor::identity(2),
        };
        assert!(matches!(
            attend(&y, &pos, Source::SelfAttention, &w, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn odd_head_dim_rejected_for_rotary() {
        assert!(AttentionConfig::new(1, 3, PositionalMode::Rope, false).is_err());
        assert!(AttentionConfig::new(1, 3, PositionalMode::None, false).is_ok());
    }

    #[test]
    fn pmrope_unit_embeddings_peak_on_diagonal() {
        let d = 8;
        let cfg = AttentionConfig::new(1, d, PositionalMode::PmRope, false).unwrap();
        let w = ProjectionWeights {
            w_q: Tensor::identity(d),
            w_k: Tensor::identity(d),
            w_v: Tensor::identity(d),
            w_o: Tensor::identity(d),
        };
        for len in [5usize, 12] {
            let mut unit = vec![0.0; d];
            for i in (0..d).step_by(2) {
                unit[i] = 1.0;
            }
            let rows: Vec<Vec<f64>> = (0..len).map(|_| unit.clone()).collect();
            let y = Tensor::from_rows(&rows).unwrap();
            let pos = SeqIndex::sequence(len, len);
            let (_, attn) = attend(&y, &pos, Source::Cross(&y, &pos), &w, &cfg).unwrap();
            for t in 0..len {
                let row = &attn.values()[t * len..(t + 1) * len];
                let arg = (0..len).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                assert_eq!(arg, t);
            }
        }
    }

    #[test]
    fn causal_mask_examples() {
        assert_eq!(causal_mask(1).values(), &[0.0]);
        assert_eq!(causal_mask(2).values(), &[0.0, MASK_VALUE, 0.0, 0.0]);
        let m = causal_mask(5);
        for t in 0..5 {
            assert_eq!(m.row(t).iter().filter(|&&v| v == 0.0).count(), t + 1);
        }
    }

    #[test]
    fn head_split_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[2, 8]);
        assert_eq!(split_heads(&x, 1).unwrap().values(), x.values());
        let s = split_heads(&x, 4).unwrap();
        assert_eq!(s.shape(), &[4, 2, 2]);
        assert_eq!(merge_heads(&s).unwrap(), x);
        let y = random(&mut rng, &[5, 12]);
        assert_eq!(merge_heads(&split_heads(&y, 4).unwrap()).unwrap(), y);
        assert!(split_heads(&x, 3).is_err());
    }

    #[test]
    fn attention_gradient_all_modes() {
        for mode in [PositionalMode::None, PositionalMode::Rope, PositionalMode::PmRope] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let cfg = AttentionConfig::new(2, 4, mode, true).unwrap();
            let w = random_weights(&mut rng, 8);
            let r = random(&mut rng, &[5, 8]);
            let pos = SeqIndex::sequence(5, 5);
            let x = random(&mut rng, &[5, 8]);
            let f = |tape: &mut Tape, xv: Var| {
                let proj = ProjectionVars {
                    w_q: tape.leaf(&w.w_q),
                    w_k: tape.leaf(&w.w_k),
                    w_v: tape.leaf(&w.w_v),
                    w_o: tape.leaf(&w.w_o),
                };
                let (out, _) = attend_vars(tape, xv, &pos, Source::SelfAttention, proj, &cfg)?;
                let rv = tape.leaf(&r);
                let prod = tape.mul(out, rv)?;
                Ok(tape.sum(prod))
            };
            let err = grad_check(f, &x, 1e-6).unwrap();
            assert!(err < 1e-5, "{mode:?}: {err}");
        }
    }
}
