//! Multi-codebook token grids and the delay pattern.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×L` grid of codec tokens, one row per codebook.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecGrid {
    rows: Vec<Vec<usize>>,
}

impl CodecGrid {
    pub fn new(rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("codec grid needs at least one codebook"));
        }
        let len = rows[0].len();
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::dim("codebook rows of different lengths"));
        }
        Ok(Self { rows })
    }

    pub fn filled(codebooks: usize, len: usize, token: usize) -> Self {
        Self {
            rows: vec![vec![token; len]; codebooks.max(1)],
        }
    }

    pub fn codebooks(&self) -> usize {
        self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, c: usize) -> &[usize] {
        &self.rows[c]
    }

    pub fn get(&self, c: usize, i: usize) -> usize {
        self.rows[c][i]
    }

    pub fn set(&mut self, c: usize, i: usize, token: usize) {
        self.rows[c][i] = token;
    }

    /// Tokens of every codebook at frame `i`.
    pub fn frame(&self, i: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r[i]).collect()
    }

    pub fn push_frame(&mut self, frame: &[usize]) -> Result<()> {
        if frame.len() != self.rows.len() {
            return Err(Error::dim(format!(
                "frame of {} tokens for {} codebooks",
                frame.len(),
                self.rows.len()
            )));
        }
        for (r, &t) in self.rows.iter_mut().zip(frame) {
            r.push(t);
        }
        Ok(())
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> CodecGrid {
        Self {
            rows: self.rows.iter().map(|r| r[start..end].to_vec()).collect(),
        }
    }

    pub fn concat(parts: &[&CodecGrid]) -> Result<CodecGrid> {
        let k = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero grids"))?
            .codebooks();
        let mut rows = vec![Vec::new(); k];
        for p in parts {
            if p.codebooks() != k {
                return Err(Error::dim("concat of grids with different codebook counts"));
            }
            for (dst, src) in rows.iter_mut().zip(&p.rows) {
                dst.extend_from_slice(src);
            }
        }
        Ok(Self { rows })
    }
}

/// Shifts codebook `c` right by `c` frames, filling vacated cells with `empty`.
pub fn apply_delay_pattern(grid: &CodecGrid, empty: usize) -> Result<CodecGrid> {
    if grid.rows.iter().flatten().any(|&t| t == empty) {
        return Err(Error::contract("grid already contains the delay filler token"));
    }
    let k = grid.codebooks();
    let out_len = grid.len() + k - 1;
    let rows = grid
        .rows
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let mut r = vec![empty; out_len];
            r[c..c + row.len()].copy_from_slice(row);
            r
        })
        .collect();
    Ok(CodecGrid { rows })
}

/// Exact inverse of [`apply_delay_pattern`].
pub fn revert_delay_pattern(grid: &CodecGrid, empty: usize) -> Result<CodecGrid> {
    let k = grid.codebooks();
    if grid.len() + 1 < k {
        return Err(Error::format(format!(
            "delayed grid of length {} is shorter than {} codebooks allow",
            grid.len(),
            k
        )));
    }
    let len = grid.len() + 1 - k;
    let mut rows = Vec::with_capacity(k);
    for (c, row) in grid.rows.iter().enumerate() {
        for (i, &t) in row.iter().enumerate() {
            let is_corner = i < c || i >= c + len;
            if is_corner != (t == empty) {
                return Err(Error::format(format!(
                    "codebook {c} frame {i}: filler placement does not match the delay pattern"
                )));
            }
        }
        rows.push(row[c..c + len].to_vec());
    }
    Ok(CodecGrid { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: usize = 99;

    #[test]
    fn single_codebook_is_identity() {
        let g = CodecGrid::new(vec![vec![1, 2, 3]]).unwrap();
        let d = apply_delay_pattern(&g, E).unwrap();
        assert_eq!(d, g);
        assert_eq!(revert_delay_pattern(&d, E).unwrap(), g);
    }

    #[test]
    fn two_codebooks_unrolled() {
        let g = CodecGrid::new(vec![vec![1, 2], vec![3, 4]]).unwrap();
        let d = apply_delay_pattern(&g, E).unwrap();
        assert_eq!(d.rows(), &[vec![1, 2, E], vec![E, 3, 4]]);
        assert_eq!(revert_delay_pattern(&d, E).unwrap(), g);
    }

    #[test]
    fn malformed_fillers_rejected() {
        let bad = CodecGrid::new(vec![vec![1, E, E], vec![E, 3, 4]]).unwrap();
        assert!(matches!(revert_delay_pattern(&bad, E), Err(Error::Format(_))));
        let bad2 = CodecGrid::new(vec![vec![1, 2, 5], vec![E, 3, 4]]).unwrap();
        assert!(matches!(revert_delay_pattern(&bad2, E), Err(Error::Format(_))));
    }

    #[test]
    fn filler_in_input_rejected() {
        let g = CodecGrid::new(vec![vec![1, E]]).unwrap();
        assert!(apply_delay_pattern(&g, E).is_err());
    }
}
