//! Rotary position embeddings indexed by absolute position (RoPE) or by
//! fractional progress through a sequence (PM-RoPE).
//!
//! A `D`-dimensional vector is split into `D/2` consecutive pairs; pair `i`
//! is rotated by `angle · θᵢ` with `θᵢ = base^(−2i/D)` (0-based `i`). RoPE uses
//! `angle = position`; PM-RoPE uses `angle = (position / total) · N`, where
//! `N` is a pseudo sequence length shared by every sequence, so sequences of
//! any length sample angles from the same interval `[0, N·θᵢ]`.

use crate::error::{Error, Result};

pub const DEFAULT_BASE: f64 = 10_000.0;
pub const DEFAULT_PSEUDO_LENGTH: f64 = 2_000.0;

/// `θᵢ = base^(−2i/D)` for `i = 0..D/2`.
pub fn theta_schedule(dim: usize, base: f64) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::contract(format!(
            "rotary dimension must be even and >= 2, got {dim}"
        )));
    }
    if !(base > 0.0) {
        return Err(Error::contract(format!("rotary base must be positive, got {base}")));
    }
    Ok((0..dim / 2)
        .map(|i| base.powf(-2.0 * i as f64 / dim as f64))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationSchedule {
    dim: usize,
    base: f64,
    thetas: Vec<f64>,
    pseudo_length: f64,
}

impl RotationSchedule {
    pub fn new(dim: usize, base: f64, pseudo_length: f64) -> Result<Self> {
        if !(pseudo_length > 0.0) {
            return Err(Error::contract(format!(
                "pseudo length must be positive, got {pseudo_length}"
            )));
        }
        Ok(Self {
            dim,
            base,
            thetas: theta_schedule(dim, base)?,
            pseudo_length,
        })
    }

    pub fn with_dim(dim: usize) -> Result<Self> {
        Self::new(dim, DEFAULT_BASE, DEFAULT_PSEUDO_LENGTH)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn pseudo_length(&self) -> f64 {
        self.pseudo_length
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim(format!(
                "vector of length {} for rotary dimension {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Rotates pair `i` of `v` by `scale · θᵢ`.
    pub fn rotate_scaled(&self, v: &[f64], scale: f64) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = v.to_vec();
        for (pair, &theta) in out.chunks_exact_mut(2).zip(&self.thetas) {
            let (s, c) = (scale * theta).sin_cos();
            let (x0, x1) = (pair[0], pair[1]);
            pair[0] = x0 * c - x1 * s;
            pair[1] = x0 * s + x1 * c;
        }
        Ok(out)
    }

    /// PM-RoPE rotation at an arbitrary fractional progress.
    pub fn rotate_fraction(&self, v: &[f64], fraction: f64) -> Result<Vec<f64>> {
        self.rotate_scaled(v, fraction * self.pseudo_length)
    }
}

/// A position inside a sequence of known total length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProgressIndex {
    position: usize,
    total: usize,
}

impl ProgressIndex {
    pub fn new(position: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::contract("progress total must be >= 1"));
        }
        Ok(Self { position, total })
    }

    /// Progress indices `0..total` of a whole sequence.
    pub fn sequence(total: usize) -> Result<Vec<Self>> {
        if total == 0 {
            return Err(Error::contract("progress total must be >= 1"));
        }
        Ok((0..total).map(|position| Self { position, total }).collect())
    }

    pub fn position(self) -> usize {
        self.position
    }

    pub fn total(self) -> usize {
        self.total
    }

    pub fn fraction(self) -> f64 {
        self.position as f64 / self.total as f64
    }

    pub fn scaled(self, m: usize) -> Result<Self> {
        Self::new(self.position * m, self.total * m)
    }
}

pub fn rope_rotate(v: &[f64], position: usize, schedule: &RotationSchedule) -> Result<Vec<f64>> {
    schedule.rotate_scaled(v, position as f64)
}

pub fn pmrope_rotate(v: &[f64], progress: ProgressIndex, schedule: &RotationSchedule) -> Result<Vec<f64>> {
    schedule.rotate_fraction(v, progress.fraction())
}

/// `⟨pmrope(q, qp), pmrope(k, kp)⟩`.
pub fn relative_inner(
    q: &[f64],
    k: &[f64],
    qp: ProgressIndex,
    kp: ProgressIndex,
    schedule: &RotationSchedule,
) -> Result<f64> {
    let qr = pmrope_rotate(q, qp, schedule)?;
    let kr = pmrope_rotate(k, kp, schedule)?;
    Ok(qr.iter().zip(&kr).map(|(a, b)| a * b).sum())
}

/// Per-row cos/sin tables for rotating many head-sized slices at once.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationTable {
    pairs: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RotationTable {
    fn from_scales(schedule: &RotationSchedule, scales: impl Iterator<Item = f64>) -> Self {
        let pairs = schedule.thetas.len();
        let mut cos = Vec::new();
        let mut sin = Vec::new();
        for scale in scales {
            for &theta in &schedule.thetas {
                let (s, c) = (scale * theta).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Self { pairs, cos, sin }
    }

    pub fn for_positions(schedule: &RotationSchedule, positions: &[usize]) -> Self {
        Self::from_scales(schedule, positions.iter().map(|&p| p as f64))
    }

    pub fn for_progress(schedule: &RotationSchedule, progress: &[ProgressIndex]) -> Self {
        let n = schedule.pseudo_length;
        Self::from_scales(schedule, progress.iter().map(|p| p.fraction() * n))
    }

    pub fn rows(&self) -> usize {
        if self.pairs == 0 {
            0
        } else {
            self.cos.len() / self.pairs
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.pairs
    }

    /// Rotates `x[r*stride + offset .. + dim]` for every row `r`.
    pub fn rotate(&self, x: &mut [f64], stride: usize, offset: usize) {
        self.apply(x, stride, offset, 1.0);
    }

    /// Inverse rotation (transpose), used by backward passes.
    pub fn unrotate(&self, x: &mut [f64], stride: usize, offset: usize) {
        self.apply(x, stride, offset, -1.0);
    }

    /// Rotates a single `dim`-wide slice with the angles of row `r`.
    pub fn rotate_row(&self, r: usize, v: &mut [f64]) {
        let base = r * self.pairs;
        for (i, pair) in v.chunks_exact_mut(2).enumerate() {
            let (c, s) = (self.cos[base + i], self.sin[base + i]);
            let (x0, x1) = (pair[0], pair[1]);
            pair[0] = x0 * c - x1 * s;
            pair[1] = x0 * s + x1 * c;
        }
    }

    fn apply(&self, x: &mut [f64], stride: usize, offset: usize, sign: f64) {
        for r in 0..self.rows() {
            let base = r * self.pairs;
            let row = &mut x[r * stride + offset..r * stride + offset + 2 * self.pairs];
            for (i, pair) in row.chunks_exact_mut(2).enumerate() {
                let c = self.cos[base + i];
                let s = sign * self.sin[base + i];
                let (x0, x1) = (pair[0], pair[1]);
                pair[0] = x0 * c - x1 * s;
                pair[1] = x0 * s + x1 * c;
            }
        }
    }
}
