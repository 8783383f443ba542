// SPDX-License-Identifier: Apache-2.0

//! Block-structured application of the ladder Hamiltonian.
//!
//! Sector states are regrouped by the number `b` of up spins on the left
//! beam. Block `b` is a dense `C(m, b) x C(m, m - b)` array whose rows are
//! left-beam words and columns right-beam words, each ascending within its
//! popcount class. Beam hopping then acts along rows or columns of one block
//! and rung hopping couples rows of neighbouring blocks. Only per-beam tables
//! of size `2^m` are stored.

use std::ops::{Add, AddAssign, Mul};

use rayon::prelude::*;

use crate::basis::{binomial, SectorBasis};

pub(crate) trait Amplitude:
    Copy + Send + Sync + Default + Add<Output = Self> + AddAssign + Mul<f64, Output = Self>
{
}

impl<T> Amplitude for T where
    T: Copy + Send + Sync + Default + Add<Output = T> + AddAssign + Mul<f64, Output = T>
{
}

#[derive(Debug, Clone, Copy)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

/// Index pairs `(position in class p, position of the partner word)`.
type Pairs = Vec<(u32, u32)>;

#[derive(Debug, Clone)]
pub(crate) struct BlockKernel {
    m: usize,
    class_words: Vec<Vec<u32>>,
    class_index: Vec<u32>,
    // Beam hopping inside one popcount class, CSR.
    hop_start: Vec<Vec<u32>>,
    hop_to: Vec<Vec<u32>>,
    zz_beam: Vec<Vec<f64>>,
    // [p][rung]: words with the rung bit set / clear and their partner in p -/+ 1.
    rung_set: Vec<Vec<Pairs>>,
    rung_clear: Vec<Vec<Pairs>>,
    blocks: Vec<Block>,
    dim: usize,
    j_half: f64,
    kappa_half: f64,
    rung_zz: f64,
}

impl BlockKernel {
    pub(crate) fn new(m: usize, j: f64, kappa: f64, delta: f64) -> Self {
        let words = 1usize << m;
        let mut class_words = vec![Vec::new(); m + 1];
        let mut class_index = vec![0u32; words];
        for w in 0..words {
            let p = w.count_ones() as usize;
            class_index[w] = class_words[p].len() as u32;
            class_words[p].push(w as u32);
        }

        let mut hop_start = Vec::with_capacity(m + 1);
        let mut hop_to = Vec::with_capacity(m + 1);
        let mut zz_beam = Vec::with_capacity(m + 1);
        let mut rung_set = Vec::with_capacity(m + 1);
        let mut rung_clear = Vec::with_capacity(m + 1);
        for class in &class_words {
            let mut start = vec![0u32];
            let mut to = Vec::new();
            let mut zz = Vec::with_capacity(class.len());
            for &w in class {
                let mut e = 0.0;
                for s in 0..m.saturating_sub(1) {
                    if (w >> s ^ w >> (s + 1)) & 1 == 1 {
                        to.push(class_index[(w ^ (3 << s)) as usize]);
                        e -= 0.25 * delta * j;
                    } else {
                        e += 0.25 * delta * j;
                    }
                }
                start.push(to.len() as u32);
                zz.push(e);
            }
            hop_start.push(start);
            hop_to.push(to);
            zz_beam.push(zz);

            let mut set = vec![Vec::new(); m];
            let mut clear = vec![Vec::new(); m];
            for (idx, &w) in class.iter().enumerate() {
                for (i, (s, c)) in set.iter_mut().zip(clear.iter_mut()).enumerate() {
                    let partner = class_index[(w ^ (1 << i)) as usize];
                    if w >> i & 1 == 1 {
                        s.push((idx as u32, partner));
                    } else {
                        c.push((idx as u32, partner));
                    }
                }
            }
            rung_set.push(set);
            rung_clear.push(clear);
        }

        let mut blocks = Vec::with_capacity(m + 1);
        let mut offset = 0;
        for b in 0..=m {
            let rows = binomial(m as u64, b as u64) as usize;
            let cols = binomial(m as u64, (m - b) as u64) as usize;
            blocks.push(Block { offset, rows, cols });
            offset += rows * cols;
        }

        Self {
            m,
            class_words,
            class_index,
            hop_start,
            hop_to,
            zz_beam,
            rung_set,
            rung_clear,
            blocks,
            dim: offset,
            j_half: 0.5 * j,
            kappa_half: 0.5 * kappa,
            rung_zz: 0.25 * delta * kappa,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    fn position(&self, config: u64) -> usize {
        let mask = (1u64 << self.m) - 1;
        let lo = (config & mask) as usize;
        let hi = (config >> self.m) as usize;
        let blk = self.blocks[lo.count_ones() as usize];
        blk.offset + self.class_index[lo] as usize * blk.cols + self.class_index[hi] as usize
    }

    /// Reorder canonical (ascending word) amplitudes into block layout.
    pub(crate) fn to_layout<T: Amplitude>(&self, basis: &SectorBasis, src: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.dim];
        for (&c, &v) in basis.configs().iter().zip(src) {
            out[self.position(c as u64)] = v;
        }
        out
    }

    pub(crate) fn from_layout<T: Amplitude>(&self, basis: &SectorBasis, src: &[T]) -> Vec<T> {
        basis
            .configs()
            .par_iter()
            .map(|&c| src[self.position(c as u64)])
            .collect()
    }

    /// For every layout position writes `combine((H x)_k, x_k, y_k)` into `y_k`.
    pub(crate) fn apply<T, F>(&self, x: &[T], y: &mut [T], combine: F)
    where
        T: Amplitude,
        F: Fn(T, T, T) -> T + Sync + Send,
    {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        let m = self.m;
        let max_cols = self.blocks.iter().map(|b| b.cols).max().unwrap_or(0);

        let mut rest: &mut [T] = y;
        for (b, blk) in self.blocks.iter().enumerate() {
            let (y_blk, tail) = rest.split_at_mut(blk.rows * blk.cols);
            rest = tail;
            let q = m - b;
            let x_blk = &x[blk.offset..blk.offset + blk.rows * blk.cols];
            y_blk
                .par_chunks_mut(blk.cols)
                .enumerate()
                .for_each_init(
                    || vec![T::default(); max_cols],
                    |acc, (li, y_row)| {
                        let acc = &mut acc[..blk.cols];
                        let lo = self.class_words[b][li];
                        let x_row = &x_blk[li * blk.cols..(li + 1) * blk.cols];

                        // Diagonal and right-beam hopping.
                        let zz_left = self.zz_beam[b][li];
                        let zz_right = &self.zz_beam[q];
                        let right_words = &self.class_words[q];
                        let (hs, ht) = (&self.hop_start[q], &self.hop_to[q]);
                        for r in 0..blk.cols {
                            let anti = (lo ^ right_words[r]).count_ones() as f64;
                            let diag = zz_left + zz_right[r] + self.rung_zz * (m as f64 - 2.0 * anti);
                            let mut v = x_row[r] * diag;
                            let mut hop = T::default();
                            for &r2 in &ht[hs[r] as usize..hs[r + 1] as usize] {
                                hop += x_row[r2 as usize];
                            }
                            v += hop * self.j_half;
                            acc[r] = v;
                        }

                        // Left-beam hopping: whole rows of the same block.
                        let (hs, ht) = (&self.hop_start[b], &self.hop_to[b]);
                        for &l2 in &ht[hs[li] as usize..hs[li + 1] as usize] {
                            let other = &x_blk[l2 as usize * blk.cols..(l2 as usize + 1) * blk.cols];
                            for (a, &v) in acc.iter_mut().zip(other) {
                                *a += v * self.j_half;
                            }
                        }

                        // Rung hopping: one spin moves between the beams.
                        for i in 0..m {
                            if lo >> i & 1 == 0 {
                                let nb = &self.blocks[b + 1];
                                let l2 = self.class_index[(lo | 1 << i) as usize] as usize;
                                let row = &x[nb.offset + l2 * nb.cols..nb.offset + (l2 + 1) * nb.cols];
                                for &(r, r2) in &self.rung_set[q][i] {
                                    acc[r as usize] += row[r2 as usize] * self.kappa_half;
                                }
                            } else {
                                let nb = &self.blocks[b - 1];
                                let l2 = self.class_index[(lo ^ 1 << i) as usize] as usize;
                                let row = &x[nb.offset + l2 * nb.cols..nb.offset + (l2 + 1) * nb.cols];
                                for &(r, r2) in &self.rung_clear[q][i] {
                                    acc[r as usize] += row[r2 as usize] * self.kappa_half;
                                }
                            }
                        }

                        for ((y, &hx), &xv) in y_row.iter_mut().zip(acc.iter()).zip(x_row) {
                            *y = combine(hx, xv, *y);
                        }
                    },
                );
        }
    }
}
