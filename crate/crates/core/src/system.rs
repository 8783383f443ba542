// SPDX-License-Identifier: Apache-2.0

use crate::basis::SectorBasis;
use crate::chebyshev::{ChebyshevPlan, DEFAULT_TOLERANCE};
use crate::error::Result;
use crate::hamiltonian::{Couplings, LadderHamiltonian, SpectralBounds};
use crate::state::StateVector;

/// Relative tolerance on the extremal Ritz values used for the bounds.
pub const BOUNDS_TOLERANCE: f64 = 1e-8;

/// Basis, Hamiltonian and spectral bounds of one ladder, built once and
/// shared read-only by every preparation and propagation.
#[derive(Debug, Clone)]
pub struct LadderSystem {
    pub basis: SectorBasis,
    pub hamiltonian: LadderHamiltonian,
    pub bounds: SpectralBounds,
    pub tolerance: f64,
}

impl LadderSystem {
    pub fn new(n_spins: usize, couplings: Couplings) -> Result<Self> {
        let basis = SectorBasis::build(n_spins)?;
        let hamiltonian = LadderHamiltonian::new(*basis.geometry(), couplings);
        let bounds = hamiltonian.spectral_bounds(&basis, BOUNDS_TOLERANCE)?;
        Ok(Self {
            basis,
            hamiltonian,
            bounds,
            tolerance: DEFAULT_TOLERANCE,
        })
    }

    pub fn with_defaults(n_spins: usize) -> Result<Self> {
        Self::new(n_spins, Couplings::default())
    }

    pub fn n_spins(&self) -> usize {
        self.basis.n_spins()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn propagator(&self, t: f64) -> Result<ChebyshevPlan> {
        ChebyshevPlan::propagator(&self.hamiltonian, self.bounds, t, self.tolerance)
    }

    pub fn gaussian(&self, alpha: f64, e0: f64) -> Result<ChebyshevPlan> {
        ChebyshevPlan::gaussian(&self.hamiltonian, self.bounds, alpha, e0, self.tolerance)
    }

    pub fn apply(&self, plan: &ChebyshevPlan, state: &StateVector) -> Result<StateVector> {
        plan.apply(&self.hamiltonian, &self.basis, state)
    }

    /// `(<H>, sigma_H)`.
    pub fn energy_stats(&self, state: &StateVector) -> Result<(f64, f64)> {
        let (mean, var) = self.hamiltonian.energy_moments(&self.basis, state)?;
        Ok((mean, var.max(0.0).sqrt()))
    }
}
