// SPDX-License-Identifier: Apache-2.0

//! Functions of the Hamiltonian by truncated Chebyshev expansion.
//!
//! With `u = (H - b) / a` mapped into `[-1, 1]`, a plan stores `c_0..c_M` so
//! that `f(H) ~ sum_k c_k T_k(u)`. Two targets are supported: the propagator
//! `exp(-i H t)` and the Gaussian energy filter `exp(-alpha (H - E0)^2)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SectorBasis;
use crate::error::{Error, Result};
use crate::hamiltonian::{LadderHamiltonian, SpectralBounds};
use crate::state::StateVector;

pub const DEFAULT_TOLERANCE: f64 = 1e-14;

/// Consecutive sub-tolerance coefficients required before truncating.
pub const TAIL_RUN: usize = 3;

const MAX_GAUSSIAN_ORDER: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PlanTarget {
    Propagator { t: f64 },
    Gaussian { alpha: f64, e0: f64 },
}

#[derive(Debug, Clone)]
pub struct ChebyshevPlan {
    bounds: SpectralBounds,
    scale: f64,
    shift: f64,
    target: PlanTarget,
    coeffs: Vec<Complex64>,
    tol: f64,
    n_spins: usize,
}

impl ChebyshevPlan {
    /// Plan for `exp(-i H t)`.
    pub fn propagator(
        h: &LadderHamiltonian,
        bounds: SpectralBounds,
        t: f64,
        tol: f64,
    ) -> Result<Self> {
        check_tol(tol)?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Parameter(format!("time must be non-negative, got {t}")));
        }
        let (scale, shift) = rescaling(&bounds);
        let x = scale * t;
        let n_max = bessel_start_order(x);
        let bessel = bessel_j_sequence(x, n_max);
        let phase = Complex64::from_polar(1.0, -shift * t);
        let minus_i_pow = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        let full: Vec<Complex64> = bessel
            .iter()
            .enumerate()
            .map(|(k, &jk)| {
                let weight = if k == 0 { 1.0 } else { 2.0 };
                minus_i_pow[k % 4] * phase * (weight * jk)
            })
            .collect();
        let order = truncation_order(&full, tol).ok_or_else(|| {
            Error::Parameter(format!("tolerance {tol} is not reachable in double precision"))
        })?;
        Ok(Self {
            bounds,
            scale,
            shift,
            target: PlanTarget::Propagator { t },
            coeffs: full[..=order].to_vec(),
            tol,
            n_spins: h.geometry().n_spins(),
        })
    }

    /// Plan for `exp(-alpha (H - e0)^2)`; coefficients by Gauss-Chebyshev quadrature.
    pub fn gaussian(
        h: &LadderHamiltonian,
        bounds: SpectralBounds,
        alpha: f64,
        e0: f64,
        tol: f64,
    ) -> Result<Self> {
        check_tol(tol)?;
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be non-negative, got {alpha}")));
        }
        let (scale, shift) = rescaling(&bounds);
        let f = |u: f64| {
            let e = scale * u + shift - e0;
            (-alpha * e * e).exp()
        };
        let mut trial = 16 + (4.0 * alpha.sqrt() * scale).ceil() as usize;
        loop {
            let nodes = 4 * trial;
            let coeffs = chebyshev_coefficients(f, nodes, 2 * trial);
            if let Some(order) = truncation_order(&coeffs, tol) {
                let coeffs = coeffs[..=order]
                    .iter()
                    .map(|&c| Complex64::new(c, 0.0))
                    .collect();
                return Ok(Self {
                    bounds,
                    scale,
                    shift,
                    target: PlanTarget::Gaussian { alpha, e0 },
                    coeffs,
                    tol,
                    n_spins: h.geometry().n_spins(),
                });
            }
            if trial >= MAX_GAUSSIAN_ORDER {
                return Err(Error::Parameter(format!(
                    "Gaussian filter with alpha = {alpha} needs more than {trial} terms"
                )));
            }
            trial *= 2;
        }
    }

    pub fn target(&self) -> PlanTarget {
        self.target
    }

    pub fn bounds(&self) -> SpectralBounds {
        self.bounds
    }

    /// `(a, b)` with `u = (H - b) / a`.
    pub fn rescaling(&self) -> (f64, f64) {
        (self.scale, self.shift)
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Truncation order `M`; the plan holds `M + 1` coefficients.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// `sum_k c_k T_k(u)` evaluated at a scalar energy.
    pub fn eval_scalar(&self, energy: f64) -> Complex64 {
        let u = (energy - self.shift) / self.scale;
        let (mut t_prev, mut t_cur) = (1.0, u);
        let mut acc = self.coeffs[0];
        for (k, &c) in self.coeffs.iter().enumerate().skip(1) {
            if k > 1 {
                let next = 2.0 * u * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = next;
            }
            acc += c * t_cur;
        }
        acc
    }

    /// Apply the expansion with the three-term recurrence. The result is not
    /// renormalized.
    pub fn apply(
        &self,
        h: &LadderHamiltonian,
        basis: &SectorBasis,
        state: &StateVector,
    ) -> Result<StateVector> {
        if h.geometry().n_spins() != self.n_spins {
            return Err(Error::Dimension {
                expected: self.n_spins,
                got: h.geometry().n_spins(),
            });
        }
        h.check_basis(basis)?;
        state.check_basis(basis)?;
        let kernel = h.kernel();

        let (a, b) = (self.scale, self.shift);
        let c = &self.coeffs;
        let mut prev = kernel.to_layout(basis, state.amplitudes());

        let mut acc: Vec<Complex64> = prev.par_iter().map(|&z| z * c[0]).collect();
        if c.len() > 1 {
            // T_1 = u psi
            let mut cur = vec![Complex64::new(0.0, 0.0); prev.len()];
            kernel.apply(&prev, &mut cur, |hx, x, _| (hx - x * b) * (1.0 / a));
            axpy(&mut acc, c[1], &cur);

            // T_{k+1} = 2 u T_k - T_{k-1}, written over T_{k-1}.
            for &ck in &c[2..] {
                kernel.apply(&cur, &mut prev, |hx, x, old| (hx - x * b) * (2.0 / a) - old);
                std::mem::swap(&mut prev, &mut cur);
                axpy(&mut acc, ck, &cur);
            }
        }
        StateVector::from_amplitudes(basis, kernel.from_layout(basis, &acc))
    }
}

fn axpy(acc: &mut [Complex64], c: Complex64, x: &[Complex64]) {
    acc.par_iter_mut().zip(x).for_each(|(y, &v)| *y += c * v);
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

fn rescaling(bounds: &SpectralBounds) -> (f64, f64) {
    let a = 0.5 * (bounds.e_max - bounds.e_min) + bounds.margin;
    let b = 0.5 * (bounds.e_max + bounds.e_min);
    (a, b)
}

/// First `M` such that `|c_M|, ..., |c_{M+TAIL_RUN-1}|` are all below `tol`.
pub fn truncation_order<T: Copy + Into<Complex64>>(coeffs: &[T], tol: f64) -> Option<usize> {
    let mut run = 0;
    for (k, &c) in coeffs.iter().enumerate() {
        if c.into().norm() < tol {
            run += 1;
            if run == TAIL_RUN {
                return Some(k + 1 - TAIL_RUN);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Chebyshev coefficients `c_0..c_{count-1}` of `f` on `[-1, 1]` from an
/// `nodes`-point Gauss-Chebyshev rule.
pub fn chebyshev_coefficients<F: Fn(f64) -> f64>(f: F, nodes: usize, count: usize) -> Vec<f64> {
    let theta: Vec<f64> = (0..nodes)
        .map(|j| PI * (j as f64 + 0.5) / nodes as f64)
        .collect();
    let values: Vec<f64> = theta.iter().map(|&t| f(t.cos())).collect();
    (0..count)
        .map(|k| {
            let s: f64 = theta
                .iter()
                .zip(&values)
                .map(|(&t, &v)| v * (k as f64 * t).cos())
                .sum();
            let weight = if k == 0 { 1.0 } else { 2.0 };
            weight * s / nodes as f64
        })
        .collect()
}

/// Highest order for which [`bessel_j_sequence`] is evaluated, chosen so that
/// `J_k(x)` has decayed far below double precision.
fn bessel_start_order(x: f64) -> usize {
    (x + 20.0 * x.cbrt() + 60.0).ceil() as usize
}

/// `J_0(x)..J_n(x)` by Miller's backward recurrence, normalized with
/// `J_0 + 2 sum_k J_{2k} = 1`.
pub fn bessel_j_sequence(x: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = {
        let s = n.max(bessel_start_order(x.abs())) + 20;
        s + (s % 2)
    };
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-300;
    for k in (1..=start).rev() {
        let next = 2.0 * k as f64 / x * vals[k] - vals[k + 1];
        vals[k - 1] = next;
        if next.abs() > 1e250 {
            vals[k - 1..].iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    let norm = vals[0] + 2.0 * vals.iter().skip(2).step_by(2).sum::<f64>();
    for (o, v) in out.iter_mut().zip(&vals) {
        *o = v / norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `J_k(x) = (1/pi) int_0^pi cos(k t - x sin t) dt`, trapezoid on a
    /// periodic integrand.
    fn bessel_quadrature(k: usize, x: f64) -> f64 {
        let n = 4096;
        let h = PI / n as f64;
        let mut s = 0.0;
        for j in 0..=n {
            let t = j as f64 * h;
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            s += w * (k as f64 * t - x * t.sin()).cos();
        }
        s * h / PI
    }

    #[test]
    fn bessel_matches_integral_representation() {
        for &x in &[0.3, 1.0, 2.5, 10.0, 37.0] {
            let seq = bessel_j_sequence(x, 60);
            for k in [0usize, 1, 2, 5, 9, 20, 40] {
                let reference = bessel_quadrature(k, x);
                assert!(
                    (seq[k] - reference).abs() < 1e-13,
                    "J_{k}({x}) = {} vs {}",
                    seq[k],
                    reference
                );
            }
        }
    }

    #[test]
    fn bessel_tail_is_relatively_accurate() {
        // J_k(x) ~ (x/2)^k / k! for k >> x.
        let seq = bessel_j_sequence(1.0, 30);
        let leading = |k: usize| 0.5f64.powi(k as i32) / (1..=k).map(|i| i as f64).product::<f64>();
        for k in [15usize, 20, 25] {
            let rel = (seq[k] - leading(k)).abs() / leading(k);
            assert!(rel < 0.05, "k = {k}: rel {rel}");
        }
    }

    #[test]
    fn truncation_needs_a_sustained_tail() {
        let c = [1.0, 1e-16, 1.0, 1e-16, 1e-16, 1e-16, 1e-20];
        assert_eq!(truncation_order(&c, 1e-14), Some(3));
        assert_eq!(truncation_order(&[1.0, 1e-16, 1e-16], 1e-14), None);
    }

    #[test]
    fn chebyshev_coefficients_of_polynomial() {
        // x^2 = (T_0 + T_2) / 2
        let c = chebyshev_coefficients(|x| x * x, 16, 5);
        let expected = [0.5, 0.0, 0.5, 0.0, 0.0];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
