// SPDX-License-Identifier: Apache-2.0

//! Classical descriptions of the X dynamics: the spin-flip birth-death
//! master equation, the measured lag-tau transition matrix, and the drift
//! and diffusion tables extracted from either.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::LadderGeometry;
use crate::error::{Error, Result};
use crate::observables::{mean_and_stderr, measure_px, moments_x};
use crate::prep::{derive_seed, prepare_omega, PrepRecipe};
use crate::system::LadderSystem;

pub const DEFAULT_TAU: f64 = 15.0;
pub const DEFAULT_SEEDS_PER_COLUMN: usize = 5;

const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }
}

/// Birth-death chain on X with `R(X -> X +- 2) = (gamma kappa^2 N / 2) (1/2 -+ X/N)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinFlipModel {
    pub n_spins: usize,
    pub gamma: f64,
    pub kappa: f64,
}

impl SpinFlipModel {
    pub fn new(n_spins: usize, gamma: f64, kappa: f64) -> Result<Self> {
        LadderGeometry::new(n_spins)?;
        if !(gamma >= 0.0) || !gamma.is_finite() || !kappa.is_finite() {
            return Err(Error::Parameter(format!(
                "need finite gamma >= 0 and finite kappa, got {gamma}, {kappa}"
            )));
        }
        Ok(Self {
            n_spins,
            gamma,
            kappa,
        })
    }

    fn geometry(&self) -> LadderGeometry {
        LadderGeometry::new(self.n_spins).expect("validated in new")
    }

    pub fn x_values(&self) -> Vec<i32> {
        self.geometry().x_values()
    }

    pub fn rate(&self, x: i32, direction: Direction) -> Result<f64> {
        self.geometry().check_x(x)?;
        let n = self.n_spins as f64;
        let u = 0.5 - direction.sign() * x as f64 / n;
        Ok(self.gamma * self.kappa * self.kappa * n / 2.0 * u * u)
    }

    /// Tridiagonal generator over ascending X; columns sum to zero.
    pub fn generator(&self) -> DMatrix<f64> {
        let xs = self.x_values();
        let k = xs.len();
        let mut g = DMatrix::zeros(k, k);
        for (j, &x) in xs.iter().enumerate() {
            let up = self.rate(x, Direction::Up).expect("admissible");
            let down = self.rate(x, Direction::Down).expect("admissible");
            if j + 1 < k {
                g[(j + 1, j)] = up;
            }
            if j > 0 {
                g[(j - 1, j)] = down;
            }
            g[(j, j)] = -(up + down);
        }
        g
    }

    /// Stationary distribution from the detailed-balance recursion.
    pub fn stationary(&self) -> Vec<f64> {
        stationary_unit_rates(self.n_spins)
    }

    /// `d<X>/dt` contributed by a point mass at X: `2 (R_up - R_down)`.
    pub fn drift_rate(&self, x: i32) -> Result<f64> {
        Ok(2.0 * (self.rate(x, Direction::Up)? - self.rate(x, Direction::Down)?))
    }

    /// Lag-tau drift from the closed first-moment equation
    /// `d<X>/dt = -2 gamma kappa^2 <X>`.
    pub fn drift_exact(&self, x: i32, tau: f64) -> f64 {
        x as f64 * ((-2.0 * self.gamma * self.kappa * self.kappa * tau).exp() - 1.0)
    }

    /// `exp(G t) p0`.
    pub fn master_evolve(&self, p0: &[f64], t: f64) -> Result<Vec<f64>> {
        MasterPropagator::new(self.n_spins, self.kappa)?.evolve(self.gamma, p0, t)
    }

    /// `u(tau) = exp(G tau)`; column Y is the distribution after tau from a
    /// point mass at Y.
    pub fn finite_time_matrix(&self, tau: f64) -> Result<DMatrix<f64>> {
        MasterPropagator::new(self.n_spins, self.kappa)?.matrix(self.gamma, tau)
    }
}

fn stationary_unit_rates(n_spins: usize) -> Vec<f64> {
    let model = SpinFlipModel {
        n_spins,
        gamma: 1.0,
        kappa: 1.0,
    };
    let xs = model.x_values();
    let mut pi = vec![1.0; xs.len()];
    for j in 0..xs.len() - 1 {
        let up = model.rate(xs[j], Direction::Up).expect("admissible");
        let down = model.rate(xs[j + 1], Direction::Down).expect("admissible");
        pi[j + 1] = pi[j] * up / down;
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|p| p / total).collect()
}

/// Spectral decomposition of the unit-gamma generator, reused for any gamma
/// and time since `G = gamma G_1`.
#[derive(Debug, Clone)]
pub struct MasterPropagator {
    sqrt_pi: Vec<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl MasterPropagator {
    pub fn new(n_spins: usize, kappa: f64) -> Result<Self> {
        let unit = SpinFlipModel::new(n_spins, 1.0, kappa)?;
        let g = unit.generator();
        let pi = unit.stationary();
        let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
        let k = pi.len();
        // Detailed balance makes Pi^{-1/2} G Pi^{1/2} symmetric.
        let s = DMatrix::from_fn(k, k, |i, j| g[(i, j)] * sqrt_pi[j] / sqrt_pi[i]);
        let asym = (&s - s.transpose()).amax();
        if asym > 1e-12 * s.amax().max(1.0) {
            return Err(Error::GeneratorConstruction(format!(
                "symmetrized generator is not symmetric (max deviation {asym:e})"
            )));
        }
        let sym = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Ok(Self {
            sqrt_pi,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.sqrt_pi.len()
    }

    pub fn matrix(&self, gamma: f64, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0) {
            return Err(Error::Parameter(format!("time must be >= 0, got {t}")));
        }
        let k = self.dim();
        let v = &self.eigenvectors;
        let decay = self.eigenvalues.map(|l| (gamma * l * t).exp());
        let mut u = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += v[(i, l)] * decay[l] * v[(j, l)];
                }
                u[(i, j)] = acc * self.sqrt_pi[i] / self.sqrt_pi[j];
            }
        }
        let min = u.min();
        if min < -NEGATIVE_TOL {
            return Err(Error::GeneratorConstruction(format!(
                "propagator entry {min:e} is negative"
            )));
        }
        u.iter_mut().for_each(|e| *e = e.max(0.0));
        Ok(u)
    }

    pub fn evolve(&self, gamma: f64, p0: &[f64], t: f64) -> Result<Vec<f64>> {
        if p0.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: p0.len(),
            });
        }
        let u = self.matrix(gamma, t)?;
        Ok((u * DVector::from_column_slice(p0)).iter().copied().collect())
    }
}

/// Measured `w[X][Y]`: probability of block X after tau, starting from a
/// prepared `omega_Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub n_spins: usize,
    pub tau: f64,
    pub alpha: f64,
    pub e0: f64,
    pub x_values: Vec<i32>,
    /// Row X, column Y, both ascending.
    pub w: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    /// Seeds used for column Y, in column order.
    pub seeds: Vec<Vec<u64>>,
    /// Smallest entry before clamping.
    pub min_raw_entry: f64,
}

/// Stream id used when deriving the column seeds of a transition matrix.
pub const TRANSITION_SEED_STREAM: u64 = 0x7731;

pub fn transition_seeds(root_seed: u64, x_values: &[i32], seeds_per_column: usize) -> Vec<Vec<u64>> {
    x_values
        .iter()
        .enumerate()
        .map(|(col, _)| {
            (0..seeds_per_column)
                .map(|k| derive_seed(root_seed, TRANSITION_SEED_STREAM + col as u64, k as u64))
                .collect()
        })
        .collect()
}

/// One propagation per (column, seed), run concurrently and assembled in
/// column order.
pub fn measure_transition_matrix(
    system: &LadderSystem,
    alpha: f64,
    e0: f64,
    tau: f64,
    seeds: &[Vec<u64>],
) -> Result<TransitionMatrix> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    let x_values = system.basis.x_values();
    let k = x_values.len();
    if seeds.len() != k || seeds.iter().any(|s| s.is_empty()) {
        return Err(Error::Parameter(format!(
            "need a nonempty seed list for each of the {k} columns"
        )));
    }
    let plan = system.propagator(tau)?;
    let jobs: Vec<(usize, u64)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(col, s)| s.iter().map(move |&seed| (col, seed)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(col, seed)| {
            let recipe = PrepRecipe {
                seed,
                x_target: Some(x_values[col]),
                alpha,
                e0,
                target_sigma_h: crate::prep::DEFAULT_SIGMA_H,
            };
            let omega = prepare_omega(&recipe, system)?;
            let evolved = system.apply(&plan, &omega)?;
            measure_px(&evolved, &system.basis)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let mut w = DMatrix::zeros(k, k);
    let mut std_error = DMatrix::zeros(k, k);
    let mut offset = 0;
    for (col, s) in seeds.iter().enumerate() {
        let runs = &results[offset..offset + s.len()];
        offset += s.len();
        for row in 0..k {
            let vals: Vec<f64> = runs.iter().map(|p| p[row]).collect();
            let (m, se) = mean_and_stderr(&vals);
            w[(row, col)] = m;
            std_error[(row, col)] = se;
        }
    }
    let (w, min_raw_entry) = clamp_columns(w)?;
    Ok(TransitionMatrix {
        n_spins: system.n_spins(),
        tau,
        alpha,
        e0,
        x_values,
        w,
        std_error,
        seeds: seeds.to_vec(),
        min_raw_entry,
    })
}

/// Clamp negative entries to zero and renormalize every column.
fn clamp_columns(mut w: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let min_raw = w.min();
    for mut col in w.column_iter_mut() {
        for e in col.iter_mut() {
            if *e < 0.0 {
                log::warn!("clamping transition probability {e:e} to zero");
                *e = 0.0;
            }
        }
        let sum = col.sum();
        if !(sum > 0.0) {
            return Err(Error::NumericalConsistency("empty transition column".into()));
        }
        if (sum - 1.0).abs() > 1e-10 {
            log::warn!("transition column sums to {sum}, renormalizing");
        }
        col /= sum;
    }
    Ok((w, min_raw))
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.x_values.len()
    }

    pub fn max_column_sum_error(&self) -> f64 {
        max_column_sum_error(&self.w)
    }

    /// Square matrix with X row labels and Y column labels.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_matrix_csv(w, &self.x_values, &self.w)
    }

    pub fn write_std_error_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_matrix_csv(w, &self.x_values, &self.std_error)
    }
}

pub fn max_column_sum_error(w: &DMatrix<f64>) -> f64 {
    w.column_iter()
        .map(|c| (c.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn write_matrix_csv<W: Write>(mut out: W, x_values: &[i32], m: &DMatrix<f64>) -> std::io::Result<()> {
    write!(out, "X\\Y")?;
    for y in x_values {
        write!(out, ",{y}")?;
    }
    writeln!(out)?;
    for (row, x) in x_values.iter().enumerate() {
        write!(out, "{x}")?;
        for col in 0..x_values.len() {
            write!(out, ",{:.16e}", m[(row, col)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `P(n tau) = W^n P(0)` for `n = 0..=steps`.
pub fn markov_iterate(w: &DMatrix<f64>, p0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if w.nrows() != w.ncols() || p0.len() != w.ncols() {
        return Err(Error::Dimension {
            expected: w.ncols(),
            got: p0.len(),
        });
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut p = DVector::from_column_slice(p0);
    out.push(p0.to_vec());
    for _ in 0..steps {
        p = w * p;
        out.push(p.iter().copied().collect());
    }
    Ok(out)
}

/// Every state reaches every other through entries above `threshold`.
pub fn is_irreducible(w: &DMatrix<f64>, threshold: f64) -> bool {
    let k = w.nrows();
    let mut reach = DMatrix::from_fn(k, k, |i, j| i == j || w[(i, j)] > threshold);
    for via in 0..k {
        for i in 0..k {
            if reach[(i, via)] {
                for j in 0..k {
                    if reach[(via, j)] {
                        reach[(i, j)] = true;
                    }
                }
            }
        }
    }
    reach.iter().all(|&r| r)
}

/// Fixed point of a column-stochastic matrix by power iteration from the
/// uniform distribution.
pub fn stationary_distribution(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 1_000_000;
    let k = w.nrows();
    let mut p = DVector::from_element(k, 1.0 / k as f64);
    for it in 0..MAX_ITER {
        let next = w * &p;
        let diff = (&next - &p).abs().sum();
        p = next;
        if diff < 1e-15 {
            let total = p.sum();
            return Ok(p.iter().map(|v| v / total).collect());
        }
        if it + 1 == MAX_ITER {
            return Err(Error::Convergence {
                what: "stationary distribution",
                iterations: MAX_ITER,
                lo: 0.0,
                hi: diff,
            });
        }
    }
    unreachable!()
}

/// Lag-tau change of the mean and variance from a point mass at each X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDiffusion {
    pub tau: f64,
    pub x_values: Vec<i32>,
    pub f: Vec<f64>,
    pub d: Vec<f64>,
}

impl DriftDiffusion {
    pub fn from_columns(x_values: &[i32], w: &DMatrix<f64>, tau: f64) -> Result<Self> {
        let mut f = Vec::with_capacity(x_values.len());
        let mut d = Vec::with_capacity(x_values.len());
        for (col, &x) in x_values.iter().enumerate() {
            let p: Vec<f64> = w.column(col).iter().copied().collect();
            let (mean, var) = moments_x(&p, x_values)?;
            f.push(mean - x as f64);
            d.push(var);
        }
        Ok(Self {
            tau,
            x_values: x_values.to_vec(),
            f,
            d,
        })
    }

    pub fn from_matrix(m: &TransitionMatrix) -> Result<Self> {
        Self::from_columns(&m.x_values, &m.w, m.tau)
    }

    pub fn from_model(model: &SpinFlipModel, tau: f64) -> Result<Self> {
        Self::from_columns(&model.x_values(), &model.finite_time_matrix(tau)?, tau)
    }

    pub fn at(&self, x: i32) -> Option<(f64, f64)> {
        let i = self.x_values.iter().position(|&v| v == x)?;
        Some((self.f[i], self.d[i]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "X,f,D")?;
        for i in 0..self.x_values.len() {
            writeln!(out, "{},{:.16e},{:.16e}", self.x_values[i], self.f[i], self.d[i])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub gamma: f64,
    /// Root-mean-square deviation of the model mean from the data.
    pub rms: f64,
    pub evaluations: usize,
}

pub const FIT_GAMMA_MIN: f64 = 1e-4;
pub const FIT_GAMMA_MAX: f64 = 1e4;

/// Least-squares gamma for which the master-equation mean started from `p0`
/// follows `mean_x` at `times`.
///
/// A log-spaced scan over `[FIT_GAMMA_MIN, FIT_GAMMA_MAX]` brackets the
/// minimum, which golden-section search then refines.
pub fn fit_gamma(
    times: &[f64],
    mean_x: &[f64],
    p0: &[f64],
    n_spins: usize,
    kappa: f64,
) -> Result<GammaFit> {
    if times.len() != mean_x.len() || times.len() < 2 {
        return Err(Error::Parameter(
            "fit needs at least two (time, mean) pairs of equal length".into(),
        ));
    }
    let prop = MasterPropagator::new(n_spins, kappa)?;
    let xs: Vec<f64> = LadderGeometry::new(n_spins)?
        .x_values()
        .iter()
        .map(|&x| x as f64)
        .collect();
    if p0.len() != xs.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: p0.len(),
        });
    }
    let m0: f64 = p0.iter().zip(&xs).map(|(p, x)| p * x).sum();
    if m0.abs() < 1e-9 {
        return Err(Error::Fit {
            message: "initial mean is zero, gamma is undetermined".into(),
            residual: f64::NAN,
        });
    }
    let mut evaluations = 0;
    let mut sse = |gamma: f64| -> Result<f64> {
        evaluations += 1;
        let mut acc = 0.0;
        for (&t, &y) in times.iter().zip(mean_x) {
            let p = prop.evolve(gamma, p0, t)?;
            let m: f64 = p.iter().zip(&xs).map(|(p, x)| p * x).sum();
            acc += (m - y) * (m - y);
        }
        Ok(acc)
    };

    const GRID: usize = 161;
    let (lmin, lmax) = (FIT_GAMMA_MIN.ln(), FIT_GAMMA_MAX.ln());
    let step = (lmax - lmin) / (GRID - 1) as f64;
    let mut best = (0, f64::INFINITY);
    for i in 0..GRID {
        let v = sse((lmin + step * i as f64).exp())?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let rms_of = |v: f64| (v / times.len() as f64).sqrt();
    if best.0 == 0 || best.0 == GRID - 1 {
        return Err(Error::Fit {
            message: format!(
                "minimum at the edge of the search range [{FIT_GAMMA_MIN}, {FIT_GAMMA_MAX}]"
            ),
            residual: rms_of(best.1),
        });
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (
        lmin + step * (best.0 - 1) as f64,
        lmin + step * (best.0 + 1) as f64,
    );
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (sse(c.exp())?, sse(d.exp())?);
    let mut iterations = 0;
    while b - a > 1e-12 {
        iterations += 1;
        if iterations > 200 {
            return Err(Error::Fit {
                message: "golden-section refinement did not converge".into(),
                residual: rms_of(fc.min(fd)),
            });
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sse(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sse(d.exp())?;
        }
    }
    let gamma = (0.5 * (a + b)).exp();
    let value = sse(gamma)?;
    Ok(GammaFit {
        gamma,
        rms: rms_of(value),
        evaluations,
    })
}

/// Root-mean-square of `a - b`.
pub fn rms_deviation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt()
}
