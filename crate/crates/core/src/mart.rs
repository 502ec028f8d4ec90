//! Blocking and martingale-difference construction for linear fields.
//!
//! The last axis is the blocking axis. Each line (a fixed value of the other
//! coordinates) is cut into blocks of length `ell`:
//!
//! ```text
//! X^(l)_{j,i} = l^{-1/2} sum_{u=(i-1)l+1}^{il} X_{j,u}
//! Y^(l)_{j,i} = X^(l)_{j,i} - E(X^(l)_{j,i} | F^(l)_{i-1})
//! D_{n1,i}    = (#lines)^{-1/2} sum_j Y^(l)_{j,i}
//! ```
//!
//! where `F^(l)_{i-1}` holds every innovation whose blocking coordinate is at
//! most `(i-1) l` (relative to the window origin). For a linear field the
//! conditional expectation is the part of the convolution that only reads
//! such innovations, for both iid and column-MDS innovations.

use crate::innovations::{gen_innovations, InnovationArray, InnovationSpec};
use crate::lattice::{self, LatticeIndex, Window};
use crate::model::{CoeffArray, FieldModel, ModelDescriptor};
use crate::simulate::{simulate_linear, FieldWindow};
use crate::stats::{mean_se, pairwise_sum};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Block sums along the last axis of a window; leftover cells are dropped.
fn block_window(w: &Window, ell: usize) -> Result<Window> {
    let d = w.dim();
    let n_last = w.extent()[d - 1];
    if ell == 0 || ell > n_last {
        return Err(Error::Parameter(format!("block length {ell} must be in 1..={n_last}")));
    }
    let k = n_last / ell;
    let scale = 1.0 / (ell as f64).sqrt();
    let lines: usize = w.extent()[..d - 1].iter().product();
    let mut out = Vec::with_capacity(lines * k);
    for line in w.values().chunks(n_last) {
        for block in line[..k * ell].chunks(ell) {
            out.push(scale * block.iter().sum::<f64>());
        }
    }
    let mut origin = w.origin().coords().to_vec();
    origin[d - 1] = 1;
    let mut extent = w.extent().to_vec();
    extent[d - 1] = k;
    Ok(Window::new(LatticeIndex::from(&origin[..]), extent, out)?)
}

/// `X^(ell)` for a simulated field; blocks are indexed from 1 on the last axis.
pub fn block_sums(w: &FieldWindow, ell: usize) -> Result<Window> {
    block_window(&w.window, ell)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub ell: usize,
    pub x_blocks: Window,
    /// `E(X^(ell)_{j,i} | F^(ell)_{i-1})`.
    pub cond_blocks: Window,
    pub y_blocks: Window,
}

/// Exact martingale-difference decomposition of a linear field on
/// `[xi.field_origin(), + extent)`.
pub fn mds_project_linear(c: &CoeffArray, xi: &InnovationArray, ell: usize, extent: &[usize]) -> Result<BlockDecomposition> {
    let x = simulate_linear(c, extent, xi)?;
    let d = extent.len();
    let x_blocks = block_window(&x.window, ell)?;
    let k = extent[d - 1] / ell;

    let w = xi.window();
    let st = lattice::strides(w.extent());
    let po = w.origin().coords();
    let fo = xi.field_origin().coords();
    let taps: Vec<(Vec<i64>, f64)> =
        c.entries().into_iter().filter(|(_, a)| *a != 0.0).map(|(j, a)| (j.coords().to_vec(), a)).collect();
    let mut cond = vec![0.0; x.window.len()];
    let mut flat = 0usize;
    lattice::for_each_offset(extent, |off| {
        let u = off[d - 1];
        if u < k * ell {
            // Innovations with last coordinate <= t are in the past of this block.
            let t = fo[d - 1] - 1 + ((u / ell) * ell) as i64;
            let mut s = 0.0;
            for (j, a) in &taps {
                let last = fo[d - 1] + u as i64 - j[d - 1];
                if last <= t {
                    let mut o = 0usize;
                    for ax in 0..d {
                        o += (fo[ax] + off[ax] as i64 - j[ax] - po[ax]) as usize * st[ax];
                    }
                    s += a * w.values()[o];
                }
            }
            cond[flat] = s;
        }
        flat += 1;
    });
    let cond_blocks = block_window(&Window::new(x.window.origin().clone(), extent.to_vec(), cond)?, ell)?;
    let y: Vec<f64> = x_blocks.values().iter().zip(cond_blocks.values()).map(|(x, c)| x - c).collect();
    let y_blocks = Window::new(x_blocks.origin().clone(), x_blocks.extent().to_vec(), y)?;
    Ok(BlockDecomposition { ell, x_blocks, cond_blocks, y_blocks })
}

/// Decomposition for any model; Volterra fields are rejected.
pub fn decompose(model: &FieldModel, xi: &InnovationArray, ell: usize, extent: &[usize]) -> Result<BlockDecomposition> {
    match model {
        FieldModel::Linear(c) => mds_project_linear(c, xi, ell, extent),
        FieldModel::Volterra(_) => {
            Err(Error::Unsupported("martingale decomposition is only implemented for linear models".into()))
        }
    }
}

/// `D_{n1,i}` for every block `i`: the `Y` values of the lines whose first
/// coordinate is within the first `n1` (all other line axes in full), summed
/// and scaled by the square root of the line count.
pub fn column_mds_sums(dec: &BlockDecomposition, n1: usize) -> Result<Vec<f64>> {
    let y = &dec.y_blocks;
    let d = y.dim();
    let k = y.extent()[d - 1];
    let (limit, lines) = if d == 1 {
        if n1 != 1 {
            return Err(Error::Parameter("a one-dimensional field has a single line (n1 = 1)".into()));
        }
        (1, 1)
    } else {
        if n1 == 0 || n1 > y.extent()[0] {
            return Err(Error::Parameter(format!("n1 = {n1} must be in 1..={}", y.extent()[0])));
        }
        let per_row: usize = y.extent()[1..d - 1].iter().product();
        (n1 * per_row, n1 * per_row)
    };
    let scale = 1.0 / (lines as f64).sqrt();
    let mut cols = vec![Vec::with_capacity(limit); k];
    for line in y.values().chunks(k).take(limit) {
        for (c, &v) in cols.iter_mut().zip(line) {
            c.push(v);
        }
    }
    Ok(cols.iter().map(|c| scale * pairwise_sum(c)).collect())
}

/// Field extent with `lines` on the first axis and `len` on the blocking axis.
fn line_extent(d: usize, lines: usize, len: usize) -> Result<Vec<usize>> {
    match d {
        1 if lines == 1 => Ok(vec![len]),
        1 => Err(Error::Parameter("a one-dimensional field has a single line (n1 = 1)".into())),
        _ => {
            let mut e = vec![1; d];
            e[0] = lines;
            e[d - 1] = len;
            Ok(e)
        }
    }
}

fn linear_coeffs(desc: &ModelDescriptor) -> Result<&CoeffArray> {
    match &desc.model {
        FieldModel::Linear(c) => Ok(c),
        FieldModel::Volterra(_) => {
            Err(Error::Unsupported("martingale decomposition is only implemented for linear models".into()))
        }
    }
}

fn replication_spec(desc: &ModelDescriptor, seed: u64, r: u64) -> InnovationSpec {
    InnovationSpec { seed, ..desc.innovations }.for_replication(r)
}

/// `D_{n1,1..k}` for replication `r`.
pub fn replicate_d(desc: &ModelDescriptor, ell: usize, n1: usize, k: usize, seed: u64, r: u64) -> Result<Vec<f64>> {
    let c = linear_coeffs(desc)?;
    let extent = line_extent(c.dim(), n1, k * ell)?;
    let xi = gen_innovations(&replication_spec(desc, seed, r), &extent, &desc.model.required_pad())?;
    let dec = mds_project_linear(c, &xi, ell, &extent)?;
    column_mds_sums(&dec, n1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McLeishSample {
    /// `max_i D_i^2 / k`.
    pub max_sq_over_k: f64,
    /// `(1/k) sum_i D_i^2`.
    pub mean_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McLeishReport {
    pub ell: usize,
    pub n1: usize,
    pub k: usize,
    /// Mean over replications of `max_i D^2_{n,i} / k`.
    pub max_over_sqrt_n: f64,
    pub max_over_sqrt_n_se: f64,
    /// Mean over replications of `(1/k) sum_i D^2_{n,i}`.
    pub sum_sq_over_n: f64,
    pub sum_sq_over_n_se: f64,
    pub c_sq_hat: f64,
    pub replications: usize,
    #[serde(skip)]
    pub samples: Vec<McLeishSample>,
}

impl McLeishReport {
    pub fn samples_csv(&self) -> String {
        let mut s = String::from("replication,max_sq_over_k,mean_sq\n");
        for (r, x) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{r},{:e},{:e}", x.max_sq_over_k, x.mean_sq);
        }
        s
    }
}

/// Monte Carlo estimates of the two conditions of the martingale CLT for
/// the array `D_{n1,i}/sqrt(k)`, `i = 1..k`.
pub fn mcleish_diagnostics(
    desc: &ModelDescriptor,
    ell: usize,
    n1: usize,
    k: usize,
    replications: usize,
    seed: u64,
) -> Result<McLeishReport> {
    if replications < 100 {
        return Err(Error::Parameter(format!("need at least 100 replications, got {replications}")));
    }
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    linear_coeffs(desc)?;
    let samples: Vec<McLeishSample> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let dv = replicate_d(desc, ell, n1, k, seed, r)?;
            let sq: Vec<f64> = dv.iter().map(|x| x * x).collect();
            Ok(McLeishSample {
                max_sq_over_k: sq.iter().copied().fold(0.0, f64::max) / k as f64,
                mean_sq: pairwise_sum(&sq) / k as f64,
            })
        })
        .collect::<Result<_>>()?;
    let (mx, mx_se) = mean_se(&samples.iter().map(|s| s.max_sq_over_k).collect::<Vec<_>>());
    let (ms, ms_se) = mean_se(&samples.iter().map(|s| s.mean_sq).collect::<Vec<_>>());
    Ok(McLeishReport {
        ell,
        n1,
        k,
        max_over_sqrt_n: mx,
        max_over_sqrt_n_se: mx_se,
        sum_sq_over_n: ms,
        sum_sq_over_n_se: ms_se,
        c_sq_hat: ms,
        replications,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEllPoint {
    pub n1: usize,
    /// Mean of `D_{n1,1}^2`.
    pub second_moment: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEll {
    pub ell: usize,
    pub grid: Vec<SigmaEllPoint>,
    pub estimate: f64,
    pub se: f64,
}

/// `E(D_{n1,1}^2)` over an increasing grid of line counts, using nested
/// windows of the same replications.
pub fn sigma_ell_estimate(desc: &ModelDescriptor, ell: usize, n1_grid: &[usize], replications: usize, seed: u64) -> Result<SigmaEll> {
    if n1_grid.is_empty() || n1_grid.windows(2).any(|w| w[0] >= w[1]) || n1_grid[0] == 0 {
        return Err(Error::Parameter(format!("n1 grid {n1_grid:?} must be positive and strictly increasing")));
    }
    if replications < 2 {
        return Err(Error::Parameter("need at least 2 replications".into()));
    }
    let c = linear_coeffs(desc)?;
    let n_max = *n1_grid.last().expect("non-empty");
    let extent = line_extent(c.dim(), n_max, ell)?;
    let per_rep: Vec<Vec<f64>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let xi = gen_innovations(&replication_spec(desc, seed, r), &extent, &desc.model.required_pad())?;
            let dec = mds_project_linear(c, &xi, ell, &extent)?;
            n1_grid.iter().map(|&n1| column_mds_sums(&dec, n1).map(|dv| dv[0] * dv[0])).collect()
        })
        .collect::<Result<_>>()?;
    let grid: Vec<SigmaEllPoint> = n1_grid
        .iter()
        .enumerate()
        .map(|(g, &n1)| {
            let (m, se) = mean_se(&per_rep.iter().map(|v| v[g]).collect::<Vec<_>>());
            SigmaEllPoint { n1, second_moment: m, se }
        })
        .collect();
    let last = grid.last().expect("non-empty");
    Ok(SigmaEll { ell, estimate: last.second_moment, se: last.se, grid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub ell: usize,
    pub sigma_sq: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaIncrement {
    pub from_ell: usize,
    pub to_ell: usize,
    /// `|sigma_{to}^2 - sigma_{from}^2|` estimated from paired replications.
    pub abs_increment: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEllScan {
    pub n1: usize,
    pub replications: usize,
    pub rows: Vec<SigmaRow>,
    pub increments: Vec<SigmaIncrement>,
}

impl SigmaEllScan {
    /// Whether successive increments starting at `from_ell >= min_ell` never
    /// grow by more than `z` pooled standard errors.
    pub fn nonincreasing_from(&self, min_ell: usize, z: f64) -> bool {
        let incs: Vec<&SigmaIncrement> = self.increments.iter().filter(|i| i.from_ell >= min_ell).collect();
        incs.windows(2).all(|w| w[1].abs_increment <= w[0].abs_increment + z * w[0].se.hypot(w[1].se))
    }
}

/// `sigma_ell^2` for every `ell` from the first block of one common field per
/// replication, so successive differences are paired.
pub fn sigma_ell_scan(desc: &ModelDescriptor, ells: &[usize], n1: usize, replications: usize, seed: u64) -> Result<SigmaEllScan> {
    if ells.is_empty() || ells[0] == 0 || ells.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter(format!("ells {ells:?} must be positive and strictly increasing")));
    }
    if replications < 2 {
        return Err(Error::Parameter("need at least 2 replications".into()));
    }
    let c = linear_coeffs(desc)?;
    let l_max = *ells.last().expect("non-empty");
    let full = line_extent(c.dim(), n1, l_max)?;
    let per_rep: Vec<Vec<f64>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let xi = gen_innovations(&replication_spec(desc, seed, r), &full, &desc.model.required_pad())?;
            ells.iter()
                .map(|&ell| {
                    let ext = line_extent(c.dim(), n1, ell)?;
                    let dec = mds_project_linear(c, &xi, ell, &ext)?;
                    Ok(column_mds_sums(&dec, n1)?[0].powi(2))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let col = |g: usize| per_rep.iter().map(|v| v[g]).collect::<Vec<_>>();
    let rows = ells
        .iter()
        .enumerate()
        .map(|(g, &ell)| {
            let (m, se) = mean_se(&col(g));
            SigmaRow { ell, sigma_sq: m, se }
        })
        .collect();
    let increments = (1..ells.len())
        .map(|g| {
            let diff: Vec<f64> = per_rep.iter().map(|v| v[g] - v[g - 1]).collect();
            let (m, se) = mean_se(&diff);
            SigmaIncrement { from_ell: ells[g - 1], to_ell: ells[g], abs_increment: m.abs(), se }
        })
        .collect();
    Ok(SigmaEllScan { n1, replications, rows, increments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub ell: usize,
    pub k: usize,
    /// Root mean square of `S_n / sqrt(|n|) - sum_i D_i / sqrt(k)`.
    pub rms: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualScan {
    pub n1: usize,
    pub n2: usize,
    pub rows: Vec<ResidualRow>,
    pub decreasing: bool,
}

/// Distance between the normalized partial sum (remainder cells included)
/// and its martingale approximation, as `ell` varies on a fixed window.
pub fn residual_scan(desc: &ModelDescriptor, n1: usize, n2: usize, ells: &[usize], replications: usize, seed: u64) -> Result<ResidualScan> {
    if replications < 2 {
        return Err(Error::Parameter("need at least 2 replications".into()));
    }
    let c = linear_coeffs(desc)?;
    let full = line_extent(c.dim(), n1, n2)?;
    let cells: usize = full.iter().product();
    let per_rep: Vec<Vec<f64>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let xi = gen_innovations(&replication_spec(desc, seed, r), &full, &desc.model.required_pad())?;
            let x = simulate_linear(c, &full, &xi)?;
            let s = pairwise_sum(x.values()) / (cells as f64).sqrt();
            ells.iter()
                .map(|&ell| {
                    if ell == 0 || ell > n2 {
                        return Err(Error::Parameter(format!("block length {ell} must be in 1..={n2}")));
                    }
                    let k = n2 / ell;
                    let ext = line_extent(c.dim(), n1, k * ell)?;
                    let dv = column_mds_sums(&mds_project_linear(c, &xi, ell, &ext)?, n1)?;
                    Ok((s - pairwise_sum(&dv) / (k as f64).sqrt()).powi(2))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ResidualRow> = ells
        .iter()
        .enumerate()
        .map(|(g, &ell)| {
            let (m, se) = mean_se(&per_rep.iter().map(|v| v[g]).collect::<Vec<_>>());
            let rms = m.sqrt();
            ResidualRow { ell, k: n2 / ell, rms, se: if rms > 0.0 { se / (2.0 * rms) } else { 0.0 } }
        })
        .collect();
    let decreasing = rows.windows(2).all(|w| w[1].rms <= w[0].rms);
    Ok(ResidualScan { n1, n2, rows, decreasing })
}
