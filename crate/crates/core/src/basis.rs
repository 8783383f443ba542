// SPDX-License-Identifier: Apache-2.0

//! The S_z = 0 sector of an N-spin ladder.
//!
//! Bits `0..N/2` hold the left beam (rung 0 at bit 0), bits `N/2..N` the
//! right beam. A set bit is spin up. Configurations are stored in ascending
//! word order, so the ordinal of a configuration is its colexicographic
//! (combinadic) rank among words with popcount N/2.

use crate::error::{Error, Result};

/// Largest supported spin count. Configurations are stored as `u32` words.
pub const MAX_SPINS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Beam {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LadderGeometry {
    n_spins: usize,
}

impl LadderGeometry {
    pub fn new(n_spins: usize) -> Result<Self> {
        if n_spins < 4 || n_spins % 2 != 0 {
            return Err(Error::InvalidGeometry(format!(
                "N must be even and at least 4, got {n_spins}"
            )));
        }
        if n_spins > MAX_SPINS {
            return Err(Error::Capacity(format!(
                "N = {n_spins} exceeds the supported maximum of {MAX_SPINS}"
            )));
        }
        Ok(Self { n_spins })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    /// Sites per beam.
    pub fn rungs(&self) -> usize {
        self.n_spins / 2
    }

    /// Bit position of `(beam, rung)`, rung counted from 0.
    pub fn bit(&self, beam: Beam, rung: usize) -> u32 {
        assert!(rung < self.rungs(), "rung {rung} out of range");
        match beam {
            Beam::Left => rung as u32,
            Beam::Right => (self.rungs() + rung) as u32,
        }
    }

    /// Inverse of [`LadderGeometry::bit`].
    pub fn site(&self, bit: u32) -> (Beam, usize) {
        let bit = bit as usize;
        assert!(bit < self.n_spins, "bit {bit} out of range");
        if bit < self.rungs() {
            (Beam::Left, bit)
        } else {
            (Beam::Right, bit - self.rungs())
        }
    }

    fn beam_mask(&self) -> u64 {
        (1u64 << self.rungs()) - 1
    }

    /// Admissible eigenvalues of the magnetization difference, ascending.
    pub fn x_values(&self) -> Vec<i32> {
        (0..=self.rungs()).map(|b| self.x_of_block(b)).collect()
    }

    pub fn n_blocks(&self) -> usize {
        self.rungs() + 1
    }

    /// Block ordinal `b` holds configurations with `b` up spins on the left beam.
    pub fn x_of_block(&self, block: usize) -> i32 {
        2 * block as i32 - self.rungs() as i32
    }

    pub fn block_of_x(&self, x: i32) -> Option<usize> {
        let m = self.rungs() as i32;
        if x < -m || x > m || (x + m) % 2 != 0 {
            return None;
        }
        Some(((x + m) / 2) as usize)
    }

    pub fn check_x(&self, x: i32) -> Result<usize> {
        self.block_of_x(x).ok_or(Error::Domain {
            x,
            n: self.n_spins,
        })
    }

    /// Swap the two beams of a configuration.
    pub fn mirror(&self, config: u64) -> u64 {
        let m = self.rungs();
        let mask = self.beam_mask();
        ((config & mask) << m) | ((config >> m) & mask)
    }
}

/// Eigenvalue of the magnetization difference for one configuration:
/// up spins on the left beam minus up spins on the right beam.
pub fn x_eigenvalue(config: u64, geometry: &LadderGeometry) -> Result<i32> {
    let n = geometry.n_spins();
    let expected = geometry.rungs() as u32;
    let popcount = config.count_ones();
    if popcount != expected || (n < 64 && config >> n != 0) {
        return Err(Error::SectorViolation {
            config,
            popcount,
            expected,
        });
    }
    let left = (config & geometry.beam_mask()).count_ones() as i32;
    Ok(2 * left - expected as i32)
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone)]
pub struct SectorBasis {
    geometry: LadderGeometry,
    configs: Vec<u32>,
    block_of: Vec<u8>,
    blocks: Vec<Vec<u32>>,
    // Colex rank contributions of the left and right halves of a word.
    rank_left: Vec<u32>,
    rank_right: Vec<u32>,
}

impl SectorBasis {
    pub fn build(n_spins: usize) -> Result<Self> {
        let geometry = LadderGeometry::new(n_spins)?;
        Self::for_geometry(geometry)
    }

    pub fn for_geometry(geometry: LadderGeometry) -> Result<Self> {
        let n = geometry.n_spins() as u64;
        let m = geometry.rungs();
        let dim = binomial(n, n / 2);
        if dim > u32::MAX as u64 {
            return Err(Error::Capacity(format!(
                "sector dimension {dim} overflows the index type"
            )));
        }
        let dim = dim as usize;

        let mut configs = Vec::with_capacity(dim);
        let mut block_of = Vec::with_capacity(dim);
        let mut blocks = vec![Vec::new(); m + 1];
        let mask = geometry.beam_mask();
        let mut word: u64 = (1u64 << m) - 1;
        let limit = 1u64 << n;
        while word < limit {
            let idx = configs.len() as u32;
            let b = (word & mask).count_ones() as usize;
            configs.push(word as u32);
            block_of.push(b as u8);
            blocks[b].push(idx);
            // Gosper's hack: next word with the same popcount.
            let c = word & word.wrapping_neg();
            let r = word + c;
            word = (((r ^ word) >> 2) / c) | r;
        }
        debug_assert_eq!(configs.len(), dim);

        let half = 1usize << m;
        let mut rank_left = vec![0u32; half];
        let mut rank_right = vec![0u32; half];
        for w in 0..half as u64 {
            let mut j = 0u64;
            let mut acc = 0u64;
            for p in 0..m as u64 {
                if w >> p & 1 == 1 {
                    j += 1;
                    acc += binomial(p, j);
                }
            }
            rank_left[w as usize] = acc as u32;

            // Right-half set bits follow all left-half set bits; in the sector
            // the left half carries m - popcount(w) of them.
            let k = w.count_ones() as u64;
            if k <= m as u64 {
                let mut j = m as u64 - k;
                let mut acc = 0u64;
                for q in 0..m as u64 {
                    if w >> q & 1 == 1 {
                        j += 1;
                        acc += binomial(m as u64 + q, j);
                    }
                }
                rank_right[w as usize] = acc as u32;
            }
        }

        Ok(Self {
            geometry,
            configs,
            block_of,
            blocks,
            rank_left,
            rank_right,
        })
    }

    pub fn geometry(&self) -> &LadderGeometry {
        &self.geometry
    }

    pub fn n_spins(&self) -> usize {
        self.geometry.n_spins()
    }

    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    pub fn configs(&self) -> &[u32] {
        &self.configs
    }

    pub fn config_at(&self, index: usize) -> u64 {
        self.configs[index] as u64
    }

    /// Ordinal of a sector configuration. Caller guarantees popcount N/2.
    #[inline]
    pub fn rank(&self, config: u64) -> usize {
        let m = self.geometry.rungs();
        let mask = (1u64 << m) - 1;
        (self.rank_left[(config & mask) as usize] + self.rank_right[(config >> m) as usize])
            as usize
    }

    pub fn index_of(&self, config: u64) -> Result<usize> {
        x_eigenvalue(config, &self.geometry)?;
        Ok(self.rank(config))
    }

    pub fn x_at(&self, index: usize) -> i32 {
        self.geometry.x_of_block(self.block_of[index] as usize)
    }

    /// Block ordinal of every basis state.
    pub fn block_ids(&self) -> &[u8] {
        &self.block_of
    }

    /// Basis ordinals in the block with eigenvalue `x`, ascending.
    pub fn block(&self, x: i32) -> Result<&[u32]> {
        let b = self.geometry.check_x(x)?;
        Ok(&self.blocks[b])
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn x_values(&self) -> Vec<i32> {
        self.geometry.x_values()
    }

    /// Ordinal of the beam-swapped configuration for every basis state.
    pub fn mirror_permutation(&self) -> Vec<usize> {
        self.configs
            .iter()
            .map(|&c| self.rank(self.geometry.mirror(c as u64)))
            .collect()
    }
}
