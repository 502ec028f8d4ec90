//! Field simulation on finite windows.
//!
//! The direct convolution is the reference definition; the FFT path must
//! agree with it to 1e-10.

use crate::innovations::{gen_innovations_at, InnovationArray, InnovationSpec};
use crate::lattice::{self, LatticeIndex, Window};
use crate::model::{CoeffArray, FieldModel, ModelDescriptor, VolterraCoeffs};
use crate::FieldError;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Realized field values plus the model and innovations that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldWindow {
    pub window: Window,
    pub model: FieldModel,
    pub innovations: InnovationSpec,
}

impl FieldWindow {
    pub fn values(&self) -> &[f64] {
        self.window.values()
    }
}

fn check_cover(xi: &InnovationArray, extent: &[usize], pad: &[usize]) -> Result<(), FieldError> {
    let d = xi.dim();
    if extent.len() != d || pad.len() != d {
        return Err(FieldError::Model(format!("model and innovations disagree on dimension ({} vs {d})", pad.len())));
    }
    let have = xi.pad();
    for a in 0..d {
        if extent[a] == 0 || extent[a] > xi.field_extent()[a] {
            return Err(FieldError::Model(format!(
                "extent {extent:?} exceeds the innovation field extent {:?}",
                xi.field_extent()
            )));
        }
        if have[a] < pad[a] {
            let o = xi.field_origin().coords()[a];
            return Err(FieldError::Pad {
                axis: a,
                from: o - pad[a] as i64,
                to: o - have[a] as i64 - 1,
            });
        }
    }
    Ok(())
}

/// Flat offset, in the innovation window, of lag `j`.
fn lag_offset(j: &[i64], st: &[usize]) -> usize {
    j.iter().zip(st).map(|(&c, s)| c as usize * s).sum()
}

/// Calls `f(out_row_start, xi_row_start, row_len)` for every output row.
fn for_each_row(xi: &InnovationArray, extent: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let d = extent.len();
    let xi_st = lattice::strides(xi.window().extent());
    let pad = xi.pad();
    let last = extent[d - 1];
    let rows = &extent[..d - 1];
    let mut out_row = 0usize;
    let mut visit = |idx: &[usize]| {
        let mut base = pad[d - 1];
        for a in 0..d - 1 {
            base += (idx[a] + pad[a]) * xi_st[a];
        }
        f(out_row, base, last);
        out_row += last;
    };
    if d == 1 {
        visit(&[]);
    } else {
        lattice::for_each_offset(rows, visit);
    }
}

/// `X_k = sum_j a_j xi_{k-j}` by direct convolution over the support.
pub fn simulate_linear(c: &CoeffArray, extent: &[usize], xi: &InnovationArray) -> Result<FieldWindow, FieldError> {
    let pad: Vec<usize> = c.support_extent().iter().map(|e| e - 1).collect();
    check_cover(xi, extent, &pad)?;
    let xi_st = lattice::strides(xi.window().extent());
    let taps: Vec<(f64, usize)> = c
        .entries()
        .into_iter()
        .map(|(j, a)| (a, lag_offset(j.coords(), &xi_st)))
        .collect();
    let src = xi.window().values();
    let mut out = vec![0.0; extent.iter().product()];
    for_each_row(xi, extent, |o, base, len| {
        let row = &mut out[o..o + len];
        for &(a, off) in &taps {
            let s = &src[base - off..base - off + len];
            for (x, &v) in row.iter_mut().zip(s) {
                *x += a * v;
            }
        }
    });
    Ok(FieldWindow {
        window: Window::new(xi.field_origin().clone(), extent.to_vec(), out)?,
        model: FieldModel::Linear(c.clone()),
        innovations: *xi.spec(),
    })
}

/// Same field as [`simulate_linear`] via a zero-padded d-dimensional FFT.
pub fn simulate_linear_fft(c: &CoeffArray, extent: &[usize], xi: &InnovationArray) -> Result<FieldWindow, FieldError> {
    let pad: Vec<usize> = c.support_extent().iter().map(|e| e - 1).collect();
    check_cover(xi, extent, &pad)?;
    let d = extent.len();
    let m_ext = xi.window().extent().to_vec();
    let l_ext = c.support_extent().to_vec();
    let p_ext: Vec<usize> = m_ext.iter().zip(&l_ext).map(|(m, l)| m + l - 1).collect();
    let p_st = lattice::strides(&p_ext);
    let total: usize = p_ext.iter().product();

    let embed = |ext: &[usize], vals: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); total];
        let mut k = 0;
        lattice::for_each_offset(ext, |idx| {
            let off: usize = idx.iter().zip(&p_st).map(|(i, s)| i * s).sum();
            buf[off] = Complex::new(vals[k], 0.0);
            k += 1;
        });
        buf
    };
    let mut fx = embed(&m_ext, xi.window().values());
    let mut fa = embed(&l_ext, c.values());

    let mut planner = FftPlanner::new();
    fft_nd(&mut planner, &mut fx, &p_ext, false);
    fft_nd(&mut planner, &mut fa, &p_ext, false);
    for (x, a) in fx.iter_mut().zip(&fa) {
        *x *= a;
    }
    fft_nd(&mut planner, &mut fx, &p_ext, true);
    let scale = 1.0 / total as f64;

    // Full-convolution index of X_k is k - pad_origin.
    let xi_pad = xi.pad();
    let mut out = Vec::with_capacity(extent.iter().product());
    lattice::for_each_offset(extent, |idx| {
        let off: usize = (0..d).map(|a| (idx[a] + xi_pad[a]) * p_st[a]).sum();
        out.push(fx[off].re * scale);
    });
    Ok(FieldWindow {
        window: Window::new(xi.field_origin().clone(), extent.to_vec(), out)?,
        model: FieldModel::Linear(c.clone()),
        innovations: *xi.spec(),
    })
}

fn fft_nd(planner: &mut FftPlanner<f64>, buf: &mut [Complex<f64>], ext: &[usize], inverse: bool) {
    let st = lattice::strides(ext);
    let mut line = Vec::new();
    for a in 0..ext.len() {
        let n = ext[a];
        if n == 1 {
            continue;
        }
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut others = ext.to_vec();
        others[a] = 1;
        lattice::for_each_offset(&others, |idx| {
            let base: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
            line.clear();
            line.extend((0..n).map(|t| buf[base + t * st[a]]));
            fft.process_with_scratch(&mut line, &mut scratch);
            for (t, v) in line.iter().enumerate() {
                buf[base + t * st[a]] = *v;
            }
        });
    }
}

/// `X_k = sum a_{u,v} xi_{k-u} xi_{k-v}` over the stored entries.
pub fn simulate_volterra(v: &VolterraCoeffs, extent: &[usize], xi: &InnovationArray) -> Result<FieldWindow, FieldError> {
    check_cover(xi, extent, &v.max_lag())?;
    let xi_st = lattice::strides(xi.window().extent());
    let terms: Vec<(f64, usize, usize)> = v
        .entries()
        .map(|(u, w, a)| (a, lag_offset(u.coords(), &xi_st), lag_offset(w.coords(), &xi_st)))
        .collect();
    let src = xi.window().values();
    let mut out = vec![0.0; extent.iter().product()];
    for_each_row(xi, extent, |o, base, len| {
        let row = &mut out[o..o + len];
        for &(a, ou, ov) in &terms {
            let su = &src[base - ou..base - ou + len];
            let sv = &src[base - ov..base - ov + len];
            for ((x, &p), &q) in row.iter_mut().zip(su).zip(sv) {
                *x += a * p * q;
            }
        }
    });
    Ok(FieldWindow {
        window: Window::new(xi.field_origin().clone(), extent.to_vec(), out)?,
        model: FieldModel::Volterra(v.clone()),
        innovations: *xi.spec(),
    })
}

pub fn simulate_with(model: &FieldModel, extent: &[usize], xi: &InnovationArray) -> Result<FieldWindow, FieldError> {
    match model {
        FieldModel::Linear(c) => simulate_linear(c, extent, xi),
        FieldModel::Volterra(v) => simulate_volterra(v, extent, xi),
    }
}

/// Generates the required innovations and simulates `[origin, origin + extent)`.
pub fn simulate_at(desc: &ModelDescriptor, origin: &LatticeIndex, extent: &[usize]) -> Result<FieldWindow, FieldError> {
    if desc.model.dim() != extent.len() {
        return Err(FieldError::Model(format!(
            "model has d = {} but extent has {} axes",
            desc.model.dim(),
            extent.len()
        )));
    }
    let xi = gen_innovations_at(&desc.innovations, origin, extent, &desc.model.required_pad())?;
    simulate_with(&desc.model, extent, &xi)
}

/// Simulates the window at origin `(1, .., 1)`.
pub fn simulate(desc: &ModelDescriptor, extent: &[usize]) -> Result<FieldWindow, FieldError> {
    simulate_at(desc, &LatticeIndex::ones(extent.len()), extent)
}
