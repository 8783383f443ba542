// SPDX-License-Identifier: Apache-2.0

pub mod basis;
pub mod chebyshev;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
mod kernel;
pub mod observables;
pub mod prep;
pub mod state;
pub mod stochastic;
pub mod system;

pub use basis::{x_eigenvalue, Beam, LadderGeometry, SectorBasis};
pub use error::{Error, Result};
pub use hamiltonian::{Couplings, LadderHamiltonian, SpectralBounds};
pub use observables::ObservableTrace;
pub use prep::PrepRecipe;
pub use state::StateVector;
pub use system::LadderSystem;
