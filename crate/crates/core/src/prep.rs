// SPDX-License-Identifier: Apache-2.0

//! Random initial states with a narrow energy window.
//!
//! `|omega_X> = C exp(-alpha (H - E0)^2) P_X |Psi>` where `|Psi>` has real
//! amplitudes drawn uniformly from `[-1, 1]` on every sector configuration.
//! The filter is applied after the projection.
//!
//! Randomness comes from `Pcg64` (PCG XSL RR 128/64) seeded with
//! `seed_from_u64`. Each amplitude consumes one 64-bit output `r` and is
//! `2 (r >> 11) 2^-53 - 1`, in ascending configuration order.

use num_complex::Complex64;
use rand_core::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::basis::SectorBasis;
use crate::error::{Error, Result};
use crate::hamiltonian::unit_interval;
use crate::state::StateVector;
use crate::system::LadderSystem;

pub const DEFAULT_SIGMA_H: f64 = 0.37;
pub const DEFAULT_E0: f64 = 0.0;

/// Relative tolerance on sigma_H reached by [`tune_alpha`].
pub const TUNE_REL_TOL: f64 = 1e-3;
pub const TUNE_MAX_ITER: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepRecipe {
    pub seed: u64,
    /// `None` prepares the unrestricted typical state.
    pub x_target: Option<i32>,
    pub alpha: f64,
    #[serde(default)]
    pub e0: f64,
    #[serde(default = "default_sigma_h")]
    pub target_sigma_h: f64,
}

fn default_sigma_h() -> f64 {
    DEFAULT_SIGMA_H
}

pub fn random_sector_state(seed: u64, basis: &SectorBasis) -> StateVector {
    let mut rng = Pcg64::seed_from_u64(seed);
    let amps: Vec<Complex64> = (0..basis.dim())
        .map(|_| Complex64::new(2.0 * unit_interval(&mut rng) - 1.0, 0.0))
        .collect();
    let mut state = StateVector::from_amplitudes(basis, amps).expect("dimension matches basis");
    state.normalize().expect("random state is nonzero");
    state
}

/// Zero every amplitude outside the block `x_target` and renormalize.
pub fn project_x(state: &StateVector, x_target: i32, basis: &SectorBasis) -> Result<StateVector> {
    state.check_basis(basis)?;
    let block = basis.geometry().check_x(x_target)?;
    let ids = basis.block_ids();
    let amps: Vec<Complex64> = state
        .amplitudes()
        .iter()
        .zip(ids)
        .map(|(&z, &b)| if b as usize == block { z } else { Complex64::new(0.0, 0.0) })
        .collect();
    let mut out = StateVector::from_amplitudes(basis, amps)?;
    if out.norm_sqr() == 0.0 {
        return Err(Error::EmptyProjection { x: x_target });
    }
    out.normalize()?;
    Ok(out)
}

fn projected_random(system: &LadderSystem, seed: u64, x_target: Option<i32>) -> Result<StateVector> {
    let raw = random_sector_state(seed, &system.basis);
    match x_target {
        Some(x) => project_x(&raw, x, &system.basis),
        None => Ok(raw),
    }
}

fn filter(system: &LadderSystem, state: &StateVector, alpha: f64, e0: f64) -> Result<StateVector> {
    if alpha == 0.0 {
        return Ok(state.clone());
    }
    let plan = system.gaussian(alpha, e0)?;
    let mut out = system.apply(&plan, state)?;
    out.normalize()?;
    Ok(out)
}

/// Random state, projected onto `x_target` if set, then energy filtered.
pub fn prepare_omega(recipe: &PrepRecipe, system: &LadderSystem) -> Result<StateVector> {
    if let Some(x) = recipe.x_target {
        system.basis.geometry().check_x(x)?;
    }
    let base = projected_random(system, recipe.seed, recipe.x_target)?;
    filter(system, &base, recipe.alpha, recipe.e0)
}

/// Filtered random state without the X projection.
pub fn prepare_typical(seed: u64, alpha: f64, e0: f64, system: &LadderSystem) -> Result<StateVector> {
    let base = random_sector_state(seed, &system.basis);
    filter(system, &base, alpha, e0)
}

/// Bisection on alpha until sigma_H of the prepared state is within
/// `TUNE_REL_TOL` of `target_sigma_h`.
pub fn tune_alpha(
    seed: u64,
    x_target: Option<i32>,
    target_sigma_h: f64,
    e0: f64,
    system: &LadderSystem,
) -> Result<f64> {
    if !(target_sigma_h > 0.0) {
        return Err(Error::Parameter(format!(
            "target sigma_H must be positive, got {target_sigma_h}"
        )));
    }
    if let Some(x) = x_target {
        system.basis.geometry().check_x(x)?;
    }
    let base = projected_random(system, seed, x_target)?;
    let tol = TUNE_REL_TOL * target_sigma_h;
    let sigma_at = |alpha: f64| -> Result<f64> {
        let s = filter(system, &base, alpha, e0)?;
        Ok(system.energy_stats(&s)?.1)
    };

    let unfiltered = sigma_at(0.0)?;
    if (unfiltered - target_sigma_h).abs() < tol {
        return Ok(0.0);
    }
    if target_sigma_h > unfiltered {
        return Err(Error::UnreachableTarget {
            target: target_sigma_h,
            unfiltered,
        });
    }

    // Grow the upper end until it overshoots; the filter width scales as
    // 1/sqrt(alpha), so a first guess of 1/(4 sigma^2) is close.
    let mut lo = 0.0;
    let mut hi = 0.25 / (target_sigma_h * target_sigma_h);
    let mut iterations = 0;
    loop {
        let s = sigma_at(hi)?;
        iterations += 1;
        if (s - target_sigma_h).abs() < tol {
            return Ok(hi);
        }
        if s < target_sigma_h {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if iterations >= TUNE_MAX_ITER {
            return Err(Error::Convergence {
                what: "alpha bracketing",
                iterations,
                lo,
                hi,
            });
        }
    }
    while iterations < TUNE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let s = sigma_at(mid)?;
        iterations += 1;
        if (s - target_sigma_h).abs() < tol {
            return Ok(mid);
        }
        if s > target_sigma_h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Convergence {
        what: "alpha bisection",
        iterations,
        lo,
        hi,
    })
}

/// Seed for job `index` of stream `stream` under a root seed.
///
/// Each of the three words passes through the SplitMix64 finalizer in turn,
/// so distinct `(stream, index)` pairs give unrelated seeds.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(root) ^ stream) ^ index)
}

/// `<x>` computed directly from the amplitudes.
pub fn mean_x_direct(state: &StateVector, basis: &SectorBasis) -> f64 {
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(k, z)| basis.x_at(k) as f64 * z.norm_sqr())
        .sum()
}
