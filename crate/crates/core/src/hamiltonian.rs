// SPDX-License-Identifier: Apache-2.0

//! Matrix-free XXZ ladder Hamiltonian.
//!
//! Every bond `(a, b)` with weight `w` contributes
//! `w (Sx_a Sx_b + Sy_a Sy_b + delta Sz_a Sz_b)`. In the S_z basis the XX+YY
//! part swaps anti-aligned spins with amplitude `w/2` and the ZZ part is
//! diagonal with value `delta w s_a s_b`, `s = ±1/2`. No signs appear.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Beam, LadderGeometry, SectorBasis};
use crate::error::{Error, Result};
use crate::kernel::BlockKernel;
use crate::state::{reduce_chunks, StateVector};

pub const DEFAULT_J: f64 = 1.0;
pub const DEFAULT_KAPPA: f64 = 0.2;
pub const DEFAULT_DELTA: f64 = 0.6;

/// Coupling constants of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Couplings {
    /// Along the beams.
    pub j: f64,
    /// Along the rungs.
    pub kappa: f64,
    /// Anisotropy of the zz term.
    pub delta: f64,
}

impl Default for Couplings {
    fn default() -> Self {
        Self {
            j: DEFAULT_J,
            kappa: DEFAULT_KAPPA,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondKind {
    Beam,
    Rung,
}

#[derive(Debug, Clone)]
pub struct LadderHamiltonian {
    geometry: LadderGeometry,
    couplings: Couplings,
    bonds: Vec<(Bond, BondKind)>,
    kernel: BlockKernel,
}

impl LadderHamiltonian {
    pub fn new(geometry: LadderGeometry, couplings: Couplings) -> Self {
        let m = geometry.rungs();
        let mut bonds = Vec::with_capacity(3 * m);
        for beam in [Beam::Left, Beam::Right] {
            for i in 0..m - 1 {
                let bond = Bond {
                    a: geometry.bit(beam, i),
                    b: geometry.bit(beam, i + 1),
                    weight: couplings.j,
                };
                bonds.push((bond, BondKind::Beam));
            }
        }
        for i in 0..m {
            let bond = Bond {
                a: geometry.bit(Beam::Left, i),
                b: geometry.bit(Beam::Right, i),
                weight: couplings.kappa,
            };
            bonds.push((bond, BondKind::Rung));
        }
        let kernel = BlockKernel::new(m, couplings.j, couplings.kappa, couplings.delta);
        Self {
            geometry,
            couplings,
            bonds,
            kernel,
        }
    }

    pub fn with_defaults(geometry: LadderGeometry) -> Self {
        Self::new(geometry, Couplings::default())
    }

    pub fn geometry(&self) -> &LadderGeometry {
        &self.geometry
    }

    pub fn couplings(&self) -> Couplings {
        self.couplings
    }

    pub fn bonds(&self) -> impl Iterator<Item = (Bond, BondKind)> + '_ {
        self.bonds.iter().copied()
    }

    pub(crate) fn check_basis(&self, basis: &SectorBasis) -> Result<()> {
        if basis.geometry() != &self.geometry {
            return Err(Error::Dimension {
                expected: self.geometry.n_spins(),
                got: basis.n_spins(),
            });
        }
        Ok(())
    }

    /// Diagonal matrix element of a configuration.
    pub fn diagonal(&self, config: u64) -> f64 {
        let delta = self.couplings.delta;
        self.bonds
            .iter()
            .map(|(bond, _)| {
                let aligned = (config >> bond.a ^ config >> bond.b) & 1 == 0;
                let zz = if aligned { 0.25 } else { -0.25 };
                delta * bond.weight * zz
            })
            .sum()
    }

    pub(crate) fn kernel(&self) -> &BlockKernel {
        &self.kernel
    }

    /// `H |state>`.
    pub fn apply(&self, basis: &SectorBasis, state: &StateVector) -> Result<StateVector> {
        self.check_basis(basis)?;
        state.check_basis(basis)?;
        let x = self.kernel.to_layout(basis, state.amplitudes());
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        self.kernel.apply(&x, &mut y, |hx, _, _| hx);
        StateVector::from_amplitudes(basis, self.kernel.from_layout(basis, &y))
    }

    /// `(<H>, <H^2> - <H>^2)` of a normalized state.
    pub fn energy_moments(&self, basis: &SectorBasis, state: &StateVector) -> Result<(f64, f64)> {
        let h = self.apply(basis, state)?;
        let mean = state.inner(&h)?.re;
        let second = h.norm_sqr();
        Ok((mean, second - mean * mean))
    }

    /// Extremal eigenvalues of the sector, padded by 1% of the width.
    pub fn spectral_bounds(&self, basis: &SectorBasis, tol: f64) -> Result<SpectralBounds> {
        self.check_basis(basis)?;
        if !(tol > 0.0) {
            return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
        }
        if basis.dim() < 2 {
            return Err(Error::Parameter("sector dimension must be at least 2".into()));
        }
        let (lo, hi) = lanczos_extremes(self, tol, LANCZOS_MAX_ITER)?;
        Ok(SpectralBounds::new(lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub e_min: f64,
    pub e_max: f64,
    pub margin: f64,
}

impl SpectralBounds {
    pub const MARGIN_FRACTION: f64 = 0.01;

    pub fn new(e_min: f64, e_max: f64) -> Self {
        Self {
            e_min,
            e_max,
            margin: Self::MARGIN_FRACTION * (e_max - e_min),
        }
    }

    pub fn lower(&self) -> f64 {
        self.e_min - self.margin
    }

    pub fn upper(&self) -> f64 {
        self.e_max + self.margin
    }

    pub fn contains(&self, e: f64) -> bool {
        self.lower() <= e && e <= self.upper()
    }
}

pub const LANCZOS_MAX_ITER: usize = 500;
const LANCZOS_CHECK_EVERY: usize = 10;
const LANCZOS_SEED: u64 = 0x5eed_1a2c_2057;

/// Lanczos without reorthogonalization. Only the tridiagonal coefficients are
/// kept; convergence is judged by the Ritz residual bound `beta_m |s_m|`.
fn lanczos_extremes(
    h: &LadderHamiltonian,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64)> {
    let dim = h.kernel.dim();
    let mut rng = Pcg64::seed_from_u64(LANCZOS_SEED);
    let mut v: Vec<f64> = (0..dim).map(|_| unit_interval(&mut rng) - 0.5).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut w = vec![0.0; dim];

    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    let steps = max_iter.min(dim);

    for j in 0..steps {
        // w <- H v - beta_j w_prev, where w holds the previous Lanczos vector.
        let beta_prev = betas.last().copied().unwrap_or(0.0);
        h.kernel.apply(&v, &mut w, |hx, _, prev| hx - beta_prev * prev);
        let alpha = dot(&v, &w);
        w.par_iter_mut().zip(&v).for_each(|(wi, vi)| *wi -= alpha * vi);
        let beta = dot(&w, &w).sqrt();
        alphas.push(alpha);

        let scale = alphas.iter().map(|a| a.abs()).fold(beta, f64::max).max(1.0);
        let breakdown = beta < 1e-12 * scale;
        let last = j + 1 == steps;
        if breakdown || last || (j + 1) % LANCZOS_CHECK_EVERY == 0 {
            let (lo, lo_res, hi, hi_res) = ritz_extremes(&alphas, &betas, beta);
            best = (lo, hi);
            let converged = lo_res < tol * lo.abs().max(1.0) && hi_res < tol * hi.abs().max(1.0);
            if breakdown || converged || (last && steps == dim) {
                return Ok((lo, hi));
            }
        }

        // Rotate: new v = w / beta, and w keeps the old v for the next step.
        betas.push(beta);
        std::mem::swap(&mut v, &mut w);
        v.par_iter_mut().for_each(|x| *x /= beta);
    }
    Err(Error::Convergence {
        what: "Lanczos extremal eigenvalues",
        iterations: steps,
        lo: best.0,
        hi: best.1,
    })
}

fn ritz_extremes(alphas: &[f64], betas: &[f64], beta_next: f64) -> (f64, f64, f64, f64) {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (mut imin, mut imax) = (0, 0);
    for i in 0..m {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let res = |i: usize| beta_next * eig.eigenvectors[(m - 1, i)].abs();
    (
        eig.eigenvalues[imin],
        res(imin),
        eig.eigenvalues[imax],
        res(imax),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    reduce_chunks(a.len(), |r| {
        a[r.clone()].iter().zip(&b[r]).map(|(x, y)| x * y).sum::<f64>()
    })
}

/// Uniform draw on `[0, 1)` from the top 53 bits of one 64-bit output.
pub(crate) fn unit_interval<R: Rng>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ham(n: usize) -> (SectorBasis, LadderHamiltonian) {
        let basis = SectorBasis::build(n).unwrap();
        let h = LadderHamiltonian::with_defaults(*basis.geometry());
        (basis, h)
    }

    fn random_state(basis: &SectorBasis, seed: u64) -> StateVector {
        let mut rng = Pcg64::seed_from_u64(seed);
        let amps = (0..basis.dim())
            .map(|_| Complex64::new(unit_interval(&mut rng) - 0.5, unit_interval(&mut rng) - 0.5))
            .collect();
        let mut s = StateVector::from_amplitudes(basis, amps).unwrap();
        s.normalize().unwrap();
        s
    }

    #[test]
    fn bond_counts() {
        let (_, h) = ham(12);
        let beams = h.bonds().filter(|(_, k)| *k == BondKind::Beam).count();
        let rungs = h.bonds().filter(|(_, k)| *k == BondKind::Rung).count();
        assert_eq!(beams, 2 * 5);
        assert_eq!(rungs, 6);
    }

    #[test]
    fn n4_diagonal_of_left_up_state() {
        let (basis, h) = ham(4);
        let g = basis.geometry();
        let c = (1u64 << g.bit(Beam::Left, 0)) | (1u64 << g.bit(Beam::Left, 1));
        assert!((h.diagonal(c) - 0.24).abs() < 1e-15);
        let k = basis.index_of(c).unwrap();
        let out = h.apply(&basis, &StateVector::basis_state(&basis, k)).unwrap();
        assert!((out.amplitudes()[k].re - 0.24).abs() < 1e-15);
    }

    #[test]
    fn hermitian_on_random_states() {
        let (basis, h) = ham(10);
        let phi = random_state(&basis, 1);
        let psi = random_state(&basis, 2);
        let lhs = phi.inner(&h.apply(&basis, &psi).unwrap()).unwrap();
        let rhs = psi.inner(&h.apply(&basis, &phi).unwrap()).unwrap().conj();
        assert!((lhs - rhs).norm() < 1e-13);
        let (mean, var) = h.energy_moments(&basis, &psi).unwrap();
        let raw = psi.inner(&h.apply(&basis, &psi).unwrap()).unwrap();
        assert!(raw.im.abs() <= 1e-13 * mean.abs().max(1.0));
        assert!(var >= 0.0);
    }

    #[test]
    fn bounds_contain_rayleigh_quotients() {
        let (basis, h) = ham(12);
        let bounds = h.spectral_bounds(&basis, 1e-8).unwrap();
        assert!(bounds.e_max > bounds.e_min);
        for seed in 0..5 {
            let psi = random_state(&basis, seed);
            let (e, _) = h.energy_moments(&basis, &psi).unwrap();
            assert!(bounds.contains(e));
        }
    }

    #[test]
    fn bounds_scale_linearly_with_couplings() {
        let basis = SectorBasis::build(10).unwrap();
        let c = Couplings::default();
        let h1 = LadderHamiltonian::new(*basis.geometry(), c);
        let h2 = LadderHamiltonian::new(
            *basis.geometry(),
            Couplings {
                j: 2.0 * c.j,
                kappa: 2.0 * c.kappa,
                ..c
            },
        );
        let b1 = h1.spectral_bounds(&basis, 1e-8).unwrap();
        let b2 = h2.spectral_bounds(&basis, 1e-8).unwrap();
        assert!((b2.e_min - 2.0 * b1.e_min).abs() < 1e-6);
        assert!((b2.e_max - 2.0 * b1.e_max).abs() < 1e-6);
    }

    #[test]
    fn bounds_reject_bad_tolerance() {
        let (basis, h) = ham(4);
        assert!(matches!(
            h.spectral_bounds(&basis, 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn basis_mismatch_is_rejected() {
        let (_, h) = ham(4);
        let b8 = SectorBasis::build(8).unwrap();
        assert!(h.apply(&b8, &StateVector::zeros(&b8)).is_err());
    }
}
