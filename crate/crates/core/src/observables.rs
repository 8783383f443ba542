// SPDX-License-Identifier: Apache-2.0

//! Block probabilities `P_X`, moments of the magnetization difference and
//! time traces.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SectorBasis;
use crate::error::{Error, Result};
use crate::prep::prepare_typical;
use crate::state::StateVector;
use crate::system::LadderSystem;

pub const DEFAULT_DT_OUT: f64 = 0.5;
pub const DEFAULT_T_MAX: f64 = 150.0;

/// Fraction of a trace, at its end, treated as late time.
pub const LATE_FRACTION: f64 = 0.2;
/// Window over which the mean must stay small to count as relaxed.
pub const EQUILIBRATION_WINDOW: f64 = 10.0;

const PX_NORM_TOL: f64 = 1e-6;

/// `P_X` for every admissible X, ascending.
pub fn measure_px(state: &StateVector, basis: &SectorBasis) -> Result<Vec<f64>> {
    state.check_basis(basis)?;
    let norm_sqr = state.norm_sqr();
    if (norm_sqr - 1.0).abs() > PX_NORM_TOL {
        return Err(Error::Unnormalized { norm_sqr });
    }
    let n_blocks = basis.geometry().n_blocks();
    let amps = state.amplitudes();
    let ids = basis.block_ids();
    const CHUNK: usize = 1 << 14;
    let partials: Vec<Vec<f64>> = amps
        .par_chunks(CHUNK)
        .zip(ids.par_chunks(CHUNK))
        .map(|(a, b)| {
            let mut p = vec![0.0; n_blocks];
            for (z, &blk) in a.iter().zip(b) {
                p[blk as usize] += z.norm_sqr();
            }
            p
        })
        .collect();
    let mut px = vec![0.0; n_blocks];
    for p in partials {
        for (acc, v) in px.iter_mut().zip(p) {
            *acc += v;
        }
    }
    Ok(px)
}

/// Mean and variance of X under the distribution `px` over `x_values`.
pub fn moments_x(px: &[f64], x_values: &[i32]) -> Result<(f64, f64)> {
    if px.len() != x_values.len() {
        return Err(Error::Dimension {
            expected: x_values.len(),
            got: px.len(),
        });
    }
    let total: f64 = px.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NumericalConsistency(format!(
            "probabilities sum to {total}"
        )));
    }
    let mean: f64 = px.iter().zip(x_values).map(|(p, &x)| p * x as f64).sum();
    let second: f64 = px
        .iter()
        .zip(x_values)
        .map(|(p, &x)| p * (x as f64) * (x as f64))
        .sum();
    let var = second - mean * mean;
    if var < -1e-12 {
        return Err(Error::NumericalConsistency(format!("negative variance {var}")));
    }
    Ok((mean, var.max(0.0)))
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableTrace {
    pub n_spins: usize,
    pub x_values: Vec<i32>,
    pub times: Vec<f64>,
    pub px: Vec<Vec<f64>>,
    pub mean_x: Vec<f64>,
    pub var_x: Vec<f64>,
    pub mean_h: Vec<f64>,
    pub var_h: Vec<f64>,
}

impl ObservableTrace {
    fn new(n_spins: usize, x_values: Vec<i32>) -> Self {
        Self {
            n_spins,
            x_values,
            times: Vec::new(),
            px: Vec::new(),
            mean_x: Vec::new(),
            var_x: Vec::new(),
            mean_h: Vec::new(),
            var_h: Vec::new(),
        }
    }

    fn record(&mut self, t: f64, state: &StateVector, system: &LadderSystem) -> Result<()> {
        let px = measure_px(state, &system.basis)?;
        let (mx, vx) = moments_x(&px, &self.x_values)?;
        let (mh, vh) = system.hamiltonian.energy_moments(&system.basis, state)?;
        self.times.push(t);
        self.px.push(px);
        self.mean_x.push(mx);
        self.var_x.push(vx);
        self.mean_h.push(mh);
        self.var_h.push(vh);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Indices in the final `LATE_FRACTION` of the time span.
    pub fn late_indices(&self) -> std::ops::Range<usize> {
        late_indices(&self.times)
    }

    /// Time average of `P_X` over the late window.
    pub fn late_px(&self) -> Vec<f64> {
        let idx = self.late_indices();
        let count = idx.len() as f64;
        let mut avg = vec![0.0; self.x_values.len()];
        for i in idx {
            for (a, p) in avg.iter_mut().zip(&self.px[i]) {
                *a += p / count;
            }
        }
        avg
    }

    pub fn late_var_x(&self) -> f64 {
        late_mean(&self.times, &self.var_x)
    }

    pub fn equilibration_time(&self) -> Option<f64> {
        equilibration_time(&self.times, &self.mean_x)
    }

    /// One row per time: `t, mean_x, var_x, mean_h, var_h, P(X)...` with
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t,mean_x,var_x,mean_h,var_h")?;
        for x in &self.x_values {
            write!(w, ",P({x})")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.mean_x[i], self.var_x[i], self.mean_h[i], self.var_h[i]
            )?;
            for p in &self.px[i] {
                write!(w, ",{p:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| Error::schema("trace csv", msg);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 6 || cols[..5] != ["t", "mean_x", "var_x", "mean_h", "var_h"] {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let x_values = cols[5..]
            .iter()
            .map(|c| {
                c.strip_prefix("P(")
                    .and_then(|s| s.strip_suffix(')'))
                    .and_then(|s| s.parse::<i32>().ok())
                    .ok_or_else(|| bad(format!("bad column `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_spins = 2 * *x_values.last().unwrap_or(&0) as usize;
        let mut trace = Self::new(n_spins, x_values);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", lineno + 2)))?;
            if vals.len() != cols.len() {
                return Err(bad(format!("row {} has {} fields", lineno + 2, vals.len())));
            }
            trace.times.push(vals[0]);
            trace.mean_x.push(vals[1]);
            trace.var_x.push(vals[2]);
            trace.mean_h.push(vals[3]);
            trace.var_h.push(vals[4]);
            trace.px.push(vals[5..].to_vec());
        }
        Ok(trace)
    }
}

/// Indices of `times` in the final `LATE_FRACTION` of the span.
pub fn late_indices(times: &[f64]) -> std::ops::Range<usize> {
    let n = times.len();
    if n == 0 {
        return 0..0;
    }
    let (t0, t1) = (times[0], times[n - 1]);
    let cut = t1 - LATE_FRACTION * (t1 - t0);
    let start = times.iter().position(|&t| t >= cut - 1e-9).unwrap_or(n - 1);
    start..n
}

/// Mean of `series` over the late window of `times`.
pub fn late_mean(times: &[f64], series: &[f64]) -> f64 {
    let idx = late_indices(times);
    let n = idx.len() as f64;
    series[idx].iter().sum::<f64>() / n
}

/// First time from which `|<x>|` stays below `max(0.05 |<x(0)>|, 0.2)` for
/// `EQUILIBRATION_WINDOW` time units.
pub fn equilibration_time(times: &[f64], mean_x: &[f64]) -> Option<f64> {
    let n = times.len().min(mean_x.len());
    if n == 0 {
        return None;
    }
    let threshold = (0.05 * mean_x[0].abs()).max(0.2);
    let mut start: Option<usize> = None;
    for i in 0..n {
        if mean_x[i].abs() < threshold {
            let s = *start.get_or_insert(i);
            if times[i] - times[s] >= EQUILIBRATION_WINDOW - 1e-9 {
                return Some(times[s]);
            }
        } else {
            start = None;
        }
    }
    None
}

/// Number of output steps of size `dt_out` covering `[0, t_max]`.
pub fn output_steps(t_max: f64, dt_out: f64) -> Result<usize> {
    if !(dt_out > 0.0) || !(t_max >= 0.0) {
        return Err(Error::Parameter(format!(
            "need t_max >= 0 and dt_out > 0, got {t_max}, {dt_out}"
        )));
    }
    let steps = (t_max / dt_out).round();
    if (steps * dt_out - t_max).abs() > 1e-9 * t_max.max(1.0) {
        return Err(Error::Parameter(format!(
            "t_max = {t_max} is not a multiple of dt_out = {dt_out}"
        )));
    }
    Ok(steps as usize)
}

/// Propagate with a fixed `dt_out` plan and measure after every step.
pub fn evolve_and_trace(
    state: &StateVector,
    system: &LadderSystem,
    t_max: f64,
    dt_out: f64,
) -> Result<ObservableTrace> {
    let steps = output_steps(t_max, dt_out)?;
    let mut trace = ObservableTrace::new(system.n_spins(), system.basis.x_values());
    trace.record(0.0, state, system)?;
    if steps == 0 {
        return Ok(trace);
    }
    let plan = system.propagator(dt_out)?;
    let mut psi = state.clone();
    for i in 1..=steps {
        psi = system.apply(&plan, &psi)?;
        trace.record(i as f64 * dt_out, &psi, system)?;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypicalVariance {
    pub value: f64,
    pub std_error: f64,
    pub n_seeds: usize,
}

/// Mean over seeds of the x-variance of filtered unrestricted random states.
pub fn typical_variance(
    alpha: f64,
    e0: f64,
    system: &LadderSystem,
    seeds: &[u64],
) -> Result<TypicalVariance> {
    if seeds.len() < 2 {
        return Err(Error::Parameter(format!(
            "typical variance needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let x_values = system.basis.x_values();
    let vars = seeds
        .iter()
        .map(|&seed| {
            let s = prepare_typical(seed, alpha, e0, system)?;
            let px = measure_px(&s, &system.basis)?;
            Ok(moments_x(&px, &x_values)?.1)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (value, std_error) = mean_and_stderr(&vars);
    Ok(TypicalVariance {
        value,
        std_error,
        n_seeds: seeds.len(),
    })
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
