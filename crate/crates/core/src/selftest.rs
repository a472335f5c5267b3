//! Invariant and exactness checks run by `prlab selftest`.
//!
//! Each check returns a [`CheckResult`] rather than panicking so the CLI can
//! report every failure in one run.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{attend_on_tape, rotation_for, PositionalMode, ProjectionVars, SeqIndex};
use crate::engine::checkpoint::{decode, encode};
use crate::engine::{Checkpoint, RunConfig, Trainer};
use crate::error::{Error, Result};
use crate::eval::metrics::{argmax, edit_distance};
use crate::eval::{alignment_diagonality, flat_start_map, token_error_rate};
use crate::model::forward::{encode as encode_text, forward, weighted_codebook_loss};
use crate::model::{
    apply_delay_pattern, assemble_decoder, revert_delay_pattern, CodecGrid, IncrementalDecoder, Model, ModelConfig,
    PositionEncoding,
};
use crate::numeric::gradcheck::{analytic_grad, max_relative_error, numeric_grad};
use crate::numeric::{Tape, Tensor, Var};
use crate::positional::{pmrope_rotate, rope_rotate, ProgressIndex, RotationSchedule};

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    /// Acceptance criterion the check belongs to.
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {} {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(criterion: u8, name: &str, check: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        criterion,
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// RoPE inner products depend only on the position offset.
pub fn rope_shift_invariance(cases: usize, seed: u64) -> CheckResult {
    timed(1, "rope_shift_invariance", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let dim = 2 * rng.gen_range(1..=32);
            let sched = RotationSchedule::with_dim(dim)?;
            let (q, k) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
            let (m, n, s) = (rng.gen_range(0..2048), rng.gen_range(0..2048), rng.gen_range(0..2048));
            let a = dot(&rope_rotate(&q, m, &sched)?, &rope_rotate(&k, n, &sched)?);
            let b = dot(&rope_rotate(&q, m + s, &sched)?, &rope_rotate(&k, n + s, &sched)?);
            worst = worst.max((a - b).abs());
        }
        Ok((worst <= 1e-9, format!("{cases} cases, max |Δ| = {worst:.2e}")))
    })
}

/// PM-RoPE inner products depend only on the progress offset, and scaling a
/// position and its total by the same factor changes nothing.
pub fn pmrope_progress_invariance(cases: usize, seed: u64) -> CheckResult {
    timed(1, "pmrope_progress_invariance", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst_shift = 0.0f64;
        let mut worst_scale = 0.0f64;
        for _ in 0..cases {
            let dim = 2 * rng.gen_range(1..=32);
            let sched = RotationSchedule::with_dim(dim)?;
            let (q, k) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
            let total = rng.gen_range(1..=512);
            let (a, b) = (rng.gen_range(0..total), rng.gen_range(0..total));
            let s = rng.gen_range(0..=512);
            let at = |pos: usize, t: usize| ProgressIndex::new(pos, t);
            let base = dot(
                &pmrope_rotate(&q, at(a, total)?, &sched)?,
                &pmrope_rotate(&k, at(b, total)?, &sched)?,
            );
            let shifted = dot(
                &pmrope_rotate(&q, at(a + s, total)?, &sched)?,
                &pmrope_rotate(&k, at(b + s, total)?, &sched)?,
            );
            let m = rng.gen_range(2..=8);
            let scaled = dot(
                &pmrope_rotate(&q, at(a, total)?.scaled(m)?, &sched)?,
                &pmrope_rotate(&k, at(b, total)?.scaled(m)?, &sched)?,
            );
            worst_shift = worst_shift.max((base - shifted).abs());
            worst_scale = worst_scale.max((base - scaled).abs());
        }
        Ok((
            worst_shift <= 1e-9 && worst_scale <= 1e-9,
            format!("{cases} cases, max |Δ| shift {worst_shift:.2e}, rescale {worst_scale:.2e}"),
        ))
    })
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n)).expect("shape matches length")
}

/// Contracts `x` against fixed random weights so the result is a scalar.
fn project(tape: &mut Tape, x: Var, w: &Tensor) -> Result<Var> {
    let c = tape.constant(tape.shape(x).to_vec(), w.values().to_vec())?;
    let p = tape.mul(x, c)?;
    Ok(tape.sum(p))
}

fn tiny_model(pos: PositionEncoding, enc_layers: usize, dec_layers: usize, seed: u64) -> Result<Model> {
    let cfg = ModelConfig {
        enc_layers,
        dec_layers,
        model_dim: 8,
        ff_dim: 12,
        heads: 2,
        codebooks: 2,
        phoneme_vocab: 4,
        codec_vocab: 6,
        ..ModelConfig::default()
    }
    .with_positions(pos);
    Model::new(cfg, seed)
}

fn tiny_example(m: &Model) -> Result<(Vec<usize>, crate::model::DecoderSequence)> {
    let target = CodecGrid::new(vec![vec![1, 2, 3], vec![4, 5, 0]])?;
    let prompt = CodecGrid::new(vec![vec![0, 1], vec![2, 3]])?;
    let seq = assemble_decoder(Some(&prompt), &target, m.config.codec())?;
    Ok((vec![0, 1, m.config.phonemes().sep(), 2, 3], seq))
}

/// Gradient comparison of one function at one point.
#[derive(Clone, Copy, Debug, Default)]
struct Probe {
    /// Relative error at the prescribed step.
    error: f64,
    /// Largest |gradient| among coordinates over tolerance.
    largest_failing_grad: f64,
    /// Relative error at a step ten times larger, for diagnosis only.
    error_wide_step: f64,
}

fn probe<F>(f: F, x: &Tensor, h: f64) -> Result<Probe>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let a = analytic_grad(&f, x)?;
    let n = numeric_grad(&f, x, h)?;
    let wide = numeric_grad(&f, x, 10.0 * h)?;
    let largest_failing_grad = a
        .iter()
        .zip(&n)
        .filter(|(a, n)| max_relative_error(&[**a], &[**n]) >= GRAD_TOLERANCE)
        .map(|(a, _)| a.abs())
        .fold(0.0, f64::max);
    Ok(Probe {
        error: max_relative_error(&a, &n),
        largest_failing_grad,
        error_wide_step: max_relative_error(&a, &wide),
    })
}

const GRAD_TOLERANCE: f64 = 1e-5;

/// Worst relative error of every gradient family over `seeds` seeds, with
/// the step and error formula of [`crate::numeric::grad_check`].
pub fn gradient_fidelity(seeds: u64) -> CheckResult {
    timed(2, "gradient_fidelity", || {
        let h = 1e-6;
        let mut worst: Vec<(String, Probe, usize)> = Vec::new();
        let mut record = |name: &str, p: Probe| {
            let failed = usize::from(p.error >= GRAD_TOLERANCE);
            match worst.iter_mut().find(|(n, _, _)| n == name) {
                Some((_, w, f)) => {
                    w.error = w.error.max(p.error);
                    w.largest_failing_grad = w.largest_failing_grad.max(p.largest_failing_grad);
                    w.error_wide_step = w.error_wide_step.max(p.error_wide_step);
                    *f += failed;
                }
                None => worst.push((name.to_string(), p, failed)),
            }
        };
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

            let x = random_tensor(&mut rng, &[3, 5]);
            let w = random_tensor(&mut rng, &[3, 5]);
            record(
                "softmax",
                probe(
                    |t, v| {
                        let s = t.softmax_rows(v);
                        project(t, s, &w)
                    },
                    &x,
                    h,
                )?,
            );

            let logits = random_tensor(&mut rng, &[4, 6]);
            let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
            let weights: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
            record(
                "cross_entropy",
                probe(|t, v| t.cross_entropy(v, &targets, &weights), &logits, h)?,
            );

            for mode in [PositionalMode::None, PositionalMode::Rope, PositionalMode::PmRope] {
                let (heads, d, len) = (2, 4, 5);
                let width = heads * d;
                let x = random_tensor(&mut rng, &[len, width]);
                let mats: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut rng, &[width, width])).collect();
                let w = random_tensor(&mut rng, &[len, width]);
                let sched = RotationSchedule::with_dim(d)?;
                let rot = rotation_for(mode, &sched, &SeqIndex::sequence(len, len))?.map(Rc::new);
                let err = probe(
                    |t, v| {
                        let p: Vec<Var> = mats.iter().map(|m| t.leaf(m)).collect();
                        let proj = ProjectionVars {
                            w_q: p[0],
                            w_k: p[1],
                            w_v: p[2],
                            w_o: p[3],
                        };
                        let (out, _) = attend_on_tape(t, v, v, proj, heads, rot.clone(), rot.clone(), true)?;
                        project(t, out, &w)
                    },
                    &x,
                    h,
                )?;
                record(&format!("attention_{mode:?}").to_lowercase(), err);
            }

            let m = tiny_model(PositionEncoding::PmRope, 1, 1, seed)?;
            let (text, seq) = tiny_example(&m)?;
            let table = m.params.get(m.layout.phoneme_embed).clone();
            let w = random_tensor(&mut rng, &[text.len(), m.config.model_dim]);
            record(
                "encoder_block",
                probe(
                    |t, v| {
                        let mut vars = m.params.to_tape(t);
                        vars[m.layout.phoneme_embed] = v;
                        let enc = encode_text(&m, t, &vars, &text)?;
                        project(t, enc, &w)
                    },
                    &table,
                    h,
                )?,
            );

            let inputs = seq.inputs(m.config.codec());
            let wq = m.layout.decoder[0].self_attn.w_q;
            let wq_val = m.params.get(wq).clone();
            let w = random_tensor(&mut rng, &[seq.total(), m.config.codec().size()]);
            record(
                "decoder_block",
                probe(
                    |t, v| {
                        let mut vars = m.params.to_tape(t);
                        vars[wq] = v;
                        let out = forward(&m, t, &vars, &text, &inputs, seq.total())?;
                        project(t, out.logits[0], &w)
                    },
                    &wq_val,
                    h,
                )?,
            );

            for pos in [PositionEncoding::PmRope, PositionEncoding::Rope, PositionEncoding::Sinusoidal] {
                let enc = usize::from(pos != PositionEncoding::Sinusoidal);
                let m = tiny_model(pos, enc, 2, seed)?;
                let (text, seq) = tiny_example(&m)?;
                let inputs = seq.inputs(m.config.codec());
                let idx = m.layout.codec_embed[0];
                let table = m.params.get(idx).clone();
                let err = probe(
                    |t, v| {
                        let mut vars = m.params.to_tape(t);
                        vars[idx] = v;
                        let out = forward(&m, t, &vars, &text, &inputs, seq.total())?;
                        let l = weighted_codebook_loss(
                            t,
                            &out.logits,
                            &seq.grid,
                            &seq.loss_mask,
                            &[5.0, 1.0],
                            m.config.codec(),
                        )?;
                        Ok(l.total)
                    },
                    &table,
                    h,
                )?;
                record(&format!("full_loss_{pos}"), err);
            }
        }
        let max = worst.iter().map(|(_, p, _)| p.error).fold(0.0, f64::max);
        let detail = worst
            .iter()
            .map(|(n, p, failed)| {
                if *failed == 0 {
                    format!("{n} {:.1e}", p.error)
                } else {
                    format!(
                        "{n} {:.1e} ({failed}/{seeds} seeds over tolerance, failing |grad| <= {:.1e}, {:.1e} at h={:.0e})",
                        p.error,
                        p.largest_failing_grad,
                        p.error_wide_step,
                        10.0 * h
                    )
                }
            })
            .collect::<Vec<_>>()
            .join(", ");
        Ok((max < GRAD_TOLERANCE, format!("{seeds} seeds; {detail}")))
    })
}

/// Flat-start cross attention is exactly diagonal for S = T.
pub fn flat_start_alignment() -> CheckResult {
    timed(3, "flat_start_alignment", || {
        let cfg = ModelConfig {
            model_dim: 32,
            ff_dim: 64,
            heads: 4,
            enc_layers: 1,
            dec_layers: 1,
            ..ModelConfig::default()
        };
        let mut details = Vec::new();
        let mut ok = true;
        for len in [8, 16, 32] {
            let map = flat_start_map(cfg.clone(), len, 0)?;
            let exact = (0..map.heads()).all(|h| (0..len).all(|t| argmax(map.row(h, t)) == t));
            let diag = alignment_diagonality(&map);
            ok &= exact && diag == 1.0;
            details.push(format!("S=T={len}: argmax exact {exact}, diagonality {diag}"));
        }
        Ok((ok, details.join("; ")))
    })
}

/// Delay pattern round trip for every K in 1..=4 and L in 1..=64.
pub fn delay_round_trip(seed: u64) -> CheckResult {
    timed(8, "delay_round_trip", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let empty = 100;
        for k in 1..=4 {
            for len in 1..=64 {
                let rows = (0..k).map(|_| (0..len).map(|_| rng.gen_range(0..empty)).collect()).collect();
                let grid = CodecGrid::new(rows)?;
                let delayed = apply_delay_pattern(&grid, empty)?;
                if delayed.len() != len + k - 1 || revert_delay_pattern(&delayed, empty)? != grid {
                    return Ok((false, format!("mismatch at K={k}, L={len}")));
                }
            }
        }
        Ok((true, "256 grids exact".into()))
    })
}

/// Cached incremental decoding agrees with the full forward pass.
pub fn incremental_agreement() -> CheckResult {
    timed(8, "incremental_vs_full", || {
        let mut worst = 0.0f64;
        for (pos, enc, chunk) in [
            (PositionEncoding::PmRope, 1, 1),
            (PositionEncoding::Rope, 1, 3),
            (PositionEncoding::Sinusoidal, 0, 1),
            (PositionEncoding::PmRope, 0, 2),
        ] {
            let m = tiny_model(pos, enc, 2, 11)?;
            let (text, seq) = tiny_example(&m)?;
            let inputs = seq.inputs(m.config.codec());
            let mut dec = IncrementalDecoder::new(&m, &text, seq.total())?;
            let mut got = Vec::new();
            let mut i = 0;
            while i < inputs.len() {
                let end = (i + chunk).min(inputs.len());
                got.extend(dec.feed(&inputs.slice(i, end))?.logits);
                i = end;
            }
            for (t, frame) in got.iter().enumerate() {
                let want = m.decode_step(&text, &seq.grid.slice(0, t), seq.total())?;
                for (a, b) in frame.iter().flatten().zip(want.iter().flatten()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok((worst <= 1e-9, format!("4 variants, max |Δlogit| = {worst:.2e}")))
    })
}

fn small_run() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.model_dim = 16;
    cfg.model.ff_dim = 32;
    cfg.model.heads = 2;
    cfg.train.batch_size = 2;
    cfg.train.steps = 4;
    cfg.train.warmup_steps = 2;
    cfg.train.corpus.speakers = 4;
    cfg.train.corpus.utterances_per_speaker = 3;
    cfg
}

/// Saving, loading and resuming reproduces an uninterrupted run bit for bit.
pub fn checkpoint_resume() -> CheckResult {
    timed(8, "checkpoint_resume", || {
        let mut straight = Trainer::new(small_run())?;
        straight.run(|_| Ok(()), |_| Ok(()))?;

        let mut first = Trainer::new(small_run())?;
        first.train_step()?;
        first.train_step()?;
        let bytes = encode(&Checkpoint::from_trainer(&first));
        let loaded = decode(&bytes)?;
        if encode(&loaded) != bytes {
            return Ok((false, "re-encoding a loaded checkpoint changed its bytes".into()));
        }
        let mut resumed = loaded.into_trainer()?;
        resumed.run(|_| Ok(()), |_| Ok(()))?;

        let a = encode(&Checkpoint::from_trainer(&straight));
        let b = encode(&Checkpoint::from_trainer(&resumed));
        Ok((a == b, format!("{} checkpoint bytes compared", a.len())))
    })
}

/// Top-down memoized Levenshtein distance, written independently of
/// [`edit_distance`].
pub fn brute_force_edit_distance(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn all_sequences(max_len: usize, alphabet: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for t in 0..alphabet {
                let mut v: Vec<usize> = s.clone();
                v.push(t);
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// TER against the brute-force oracle: every pair over a binary alphabet up
/// to length 5, then random pairs for every length combination up to 12.
pub fn ter_oracle(seed: u64) -> CheckResult {
    timed(8, "ter_vs_brute_force", || {
        let as_grid = |s: &[usize]| CodecGrid::new(vec![s.to_vec()]);
        let mut checked = 0usize;
        let mut compare = |a: &[usize], b: &[usize]| -> Result<bool> {
            checked += 1;
            let want = brute_force_edit_distance(a, b);
            if edit_distance(a, b) != want {
                return Ok(false);
            }
            if !b.is_empty() {
                let ter = token_error_rate(&as_grid(a)?, &as_grid(b)?)?;
                if ter != want as f64 / b.len() as f64 {
                    return Ok(false);
                }
            }
            Ok(true)
        };
        let small = all_sequences(5, 2);
        for a in &small {
            for b in &small {
                if !compare(a, b)? {
                    return Ok((false, format!("mismatch on {a:?} vs {b:?}")));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for la in 0..=12 {
            for lb in 0..=12 {
                for _ in 0..40 {
                    let alphabet = rng.gen_range(2..=5);
                    let a: Vec<usize> = (0..la).map(|_| rng.gen_range(0..alphabet)).collect();
                    let b: Vec<usize> = (0..lb).map(|_| rng.gen_range(0..alphabet)).collect();
                    if !compare(&a, &b)? {
                        return Ok((false, format!("mismatch on {a:?} vs {b:?}")));
                    }
                }
            }
        }
        Ok((true, format!("{checked} pairs agree")))
    })
}

/// Every check in the order of the criteria it serves.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        rope_shift_invariance(1000, 1),
        pmrope_progress_invariance(1000, 2),
        gradient_fidelity(10),
        flat_start_alignment(),
        delay_round_trip(3),
        incremental_agreement(),
        checkpoint_resume(),
        ter_oracle(4),
    ]
}

/// Fails with the first failing check, for callers that want a `Result`.
pub fn require_all(results: &[CheckResult]) -> Result<()> {
    match results.iter().find(|r| !r.passed) {
        Some(r) => Err(Error::Contract(r.to_string())),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_examples() {
        assert_eq!(brute_force_edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(brute_force_edit_distance(&[], &[4, 4]), 2);
        assert_eq!(all_sequences(2, 2).len(), 7);
    }

    #[test]
    fn cheap_checks_pass() {
        for r in [delay_round_trip(0), flat_start_alignment(), rope_shift_invariance(50, 0)] {
            assert!(r.passed, "{r}");
        }
    }
}
