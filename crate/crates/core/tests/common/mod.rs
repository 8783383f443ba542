// SPDX-License-Identifier: Apache-2.0

//! Dense reference constructions used as independent oracles.
//!
//! The ladder Hamiltonian is assembled from Kronecker products of single-site
//! spin matrices in the full 2^N space and only then restricted to the
//! popcount-N/2 words, so it shares no code with the matrix-free kernel.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use spinladder::Couplings;

pub type CMat = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Single-site operators in the (down = bit 0, up = bit 1) basis.
fn spin_ops() -> [CMat; 3] {
    let sx = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)]);
    let sy = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.5), c(0.0, -0.5), c(0.0, 0.0)]);
    let sz = CMat::from_row_slice(2, 2, &[c(-0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
    [sx, sy, sz]
}

/// `op` on site `site` of `n` spins; site 0 is the least significant bit.
fn site_op(op: &CMat, site: usize, n: usize) -> CMat {
    let mut full = CMat::identity(1, 1);
    for s in (0..n).rev() {
        let factor = if s == site { op.clone() } else { CMat::identity(2, 2) };
        full = full.kronecker(&factor);
    }
    full
}

pub fn full_hamiltonian(n: usize, couplings: Couplings) -> CMat {
    let m = n / 2;
    let dim = 1usize << n;
    let ops = spin_ops();
    let per_site: Vec<[CMat; 3]> = (0..n)
        .map(|s| [site_op(&ops[0], s, n), site_op(&ops[1], s, n), site_op(&ops[2], s, n)])
        .collect();
    let mut h = CMat::zeros(dim, dim);
    let mut bond = |a: usize, b: usize, w: f64| {
        let term = &per_site[a][0] * &per_site[b][0]
            + &per_site[a][1] * &per_site[b][1]
            + (&per_site[a][2] * &per_site[b][2]) * c(couplings.delta, 0.0);
        h += term * c(w, 0.0);
    };
    // left beam sites 0..m, right beam sites m..n
    for i in 0..m - 1 {
        bond(i, i + 1, couplings.j);
        bond(m + i, m + i + 1, couplings.j);
    }
    for i in 0..m {
        bond(i, m + i, couplings.kappa);
    }
    h
}

/// Sector words in ascending order.
pub fn sector_words(n: usize) -> Vec<usize> {
    (0..1usize << n).filter(|w| w.count_ones() as usize == n / 2).collect()
}

/// The Hamiltonian restricted to the S_z = 0 sector; real symmetric.
pub fn sector_hamiltonian(n: usize, couplings: Couplings) -> DMatrix<f64> {
    let full = full_hamiltonian(n, couplings);
    let words = sector_words(n);
    let d = words.len();
    let mut h = DMatrix::zeros(d, d);
    for (i, &wi) in words.iter().enumerate() {
        for (j, &wj) in words.iter().enumerate() {
            let z = full[(wi, wj)];
            assert!(z.im.abs() < 1e-15);
            h[(i, j)] = z.re;
        }
    }
    h
}

pub struct DenseSpectrum {
    pub energies: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn spectrum(h: &DMatrix<f64>) -> DenseSpectrum {
    let eig = SymmetricEigen::new(h.clone());
    DenseSpectrum {
        energies: eig.eigenvalues,
        vectors: eig.eigenvectors,
    }
}

impl DenseSpectrum {
    /// `f(H) psi` through the eigenbasis.
    pub fn apply_fn<F: Fn(f64) -> Complex64>(&self, f: F, psi: &[Complex64]) -> Vec<Complex64> {
        let d = psi.len();
        let v = &self.vectors;
        let mut coeffs = vec![c(0.0, 0.0); d];
        for (n, coeff) in coeffs.iter_mut().enumerate() {
            let overlap: Complex64 = (0..d).map(|k| psi[k] * v[(k, n)]).sum();
            *coeff = overlap * f(self.energies[n]);
        }
        (0..d)
            .map(|k| (0..d).map(|n| coeffs[n] * v[(k, n)]).sum())
            .collect()
    }

    pub fn propagate(&self, t: f64, psi: &[Complex64]) -> Vec<Complex64> {
        self.apply_fn(|e| Complex64::from_polar(1.0, -e * t), psi)
    }

    pub fn min(&self) -> f64 {
        self.energies.min()
    }

    pub fn max(&self) -> f64 {
        self.energies.max()
    }
}

/// Deterministic complex test vector, normalized.
pub fn test_vector(d: usize, salt: u64) -> Vec<Complex64> {
    let mut x = salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut next = || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let v: Vec<Complex64> = (0..d).map(|_| c(next(), next())).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}
