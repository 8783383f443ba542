// SPDX-License-Identifier: Apache-2.0

use num_complex::Complex64;
use rayon::prelude::*;

use crate::basis::SectorBasis;
use crate::error::{Error, Result};

/// Chunk length for parallel reductions. Partial sums are combined in chunk
/// order, so results do not depend on the thread count.
const REDUCE_CHUNK: usize = 1 << 14;

pub(crate) fn reduce_chunks<T, F>(len: usize, f: F) -> T
where
    T: Send + std::iter::Sum<T>,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let n_chunks = len.div_ceil(REDUCE_CHUNK).max(1);
    let partials: Vec<T> = (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(len)))
        .collect();
    partials.into_iter().sum()
}

/// Complex amplitudes over a [`SectorBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_spins: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zeros(basis: &SectorBasis) -> Self {
        Self {
            n_spins: basis.n_spins(),
            amps: vec![Complex64::new(0.0, 0.0); basis.dim()],
        }
    }

    pub fn from_amplitudes(basis: &SectorBasis, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != basis.dim() {
            return Err(Error::Dimension {
                expected: basis.dim(),
                got: amps.len(),
            });
        }
        Ok(Self {
            n_spins: basis.n_spins(),
            amps,
        })
    }

    pub fn from_real(basis: &SectorBasis, amps: &[f64]) -> Result<Self> {
        Self::from_amplitudes(
            basis,
            amps.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
        )
    }

    /// Basis state with amplitude one at `index`.
    pub fn basis_state(basis: &SectorBasis, index: usize) -> Self {
        let mut s = Self::zeros(basis);
        s.amps[index] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn check_basis(&self, basis: &SectorBasis) -> Result<()> {
        if self.n_spins != basis.n_spins() || self.amps.len() != basis.dim() {
            return Err(Error::Dimension {
                expected: basis.dim(),
                got: self.amps.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(&self, other: &StateVector) -> Result<()> {
        if self.n_spins != other.n_spins || self.amps.len() != other.amps.len() {
            return Err(Error::Dimension {
                expected: self.amps.len(),
                got: other.amps.len(),
            });
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        let a = &self.amps;
        reduce_chunks(a.len(), |r| a[r].iter().map(|z| z.norm_sqr()).sum::<f64>())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        self.check_same_shape(other)?;
        let (a, b) = (&self.amps, &other.amps);
        Ok(reduce_chunks(a.len(), |r| {
            a[r.clone()]
                .iter()
                .zip(&b[r])
                .map(|(x, y)| x.conj() * y)
                .sum::<Complex64>()
        }))
    }

    pub fn scale(&mut self, factor: f64) {
        self.amps.par_iter_mut().for_each(|z| *z *= factor);
    }

    /// Scale to unit norm; returns the norm before scaling.
    pub fn normalize(&mut self) -> Result<f64> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NumericalConsistency(format!(
                "cannot normalize a state with norm {norm}"
            )));
        }
        self.scale(1.0 / norm);
        Ok(norm)
    }

    /// Euclidean distance `||self - other||`.
    pub fn distance(&self, other: &StateVector) -> Result<f64> {
        self.check_same_shape(other)?;
        let (a, b) = (&self.amps, &other.amps);
        let d2 = reduce_chunks(a.len(), |r| {
            a[r.clone()]
                .iter()
                .zip(&b[r])
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
        });
        Ok(d2.sqrt())
    }

    /// Largest per-amplitude deviation.
    pub fn max_abs_diff(&self, other: &StateVector) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max))
    }
}
