//! Lattice indices, rectangular windows and prefix sums.
//!
//! Windows are stored row-major: the last axis varies fastest and is the
//! blocking axis used by [`crate::mart`]. All coordinates are absolute
//! lattice coordinates; a window covers `origin ..= origin + extent - 1`
//! componentwise. The usual window has origin `(1, .., 1)` so that the
//! prefix entry at `k` is the partial sum `S_k` over `1 <= u <= k`.
//!
//! Prefix sums are plain (non-compensated) double precision sums. At the
//! sizes this crate targets (up to ~10^7 cells) the relative error stays
//! well below 1e-10 for bounded inputs.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatticeError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("range error: {0}")]
    Range(String),
}

/// A point of `Z^d`, `1 <= d <= 4`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticeIndex(Vec<i64>);

impl LatticeIndex {
    pub fn new(coords: Vec<i64>) -> Result<Self, LatticeError> {
        check_dim(coords.len())?;
        Ok(Self(coords))
    }

    /// The point with every coordinate equal to `value`.
    pub fn splat(dim: usize, value: i64) -> Self {
        Self(vec![value; dim])
    }

    pub fn ones(dim: usize) -> Self {
        Self::splat(dim, 1)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::splat(dim, 0)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    /// Componentwise order: `self <= other` iff every coordinate is `<=`.
    pub fn le(&self, other: &Self) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|&c| c >= 1)
    }

    /// `|n| = n_1 * ... * n_d`; only defined for strictly positive indices.
    pub fn norm(&self) -> Option<u64> {
        if !self.is_positive() {
            return None;
        }
        self.0.iter().try_fold(1u64, |acc, &c| acc.checked_mul(c as u64))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn min(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| *a.min(b)).collect())
    }

    pub fn max(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| *a.max(b)).collect())
    }
}

impl From<&[i64]> for LatticeIndex {
    fn from(c: &[i64]) -> Self {
        Self(c.to_vec())
    }
}

impl<const N: usize> From<[i64; N]> for LatticeIndex {
    fn from(c: [i64; N]) -> Self {
        Self(c.to_vec())
    }
}

impl fmt::Display for LatticeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn check_dim(d: usize) -> Result<(), LatticeError> {
    if d == 0 || d > MAX_DIM {
        return Err(LatticeError::Dimension(format!(
            "dimension {d} not in 1..={MAX_DIM}"
        )));
    }
    Ok(())
}

/// Row-major strides for `extent`.
pub fn strides(extent: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; extent.len()];
    for a in (0..extent.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * extent[a + 1];
    }
    s
}

/// Calls `f` with every multi-index in `[0, extent)` in row-major order.
pub fn for_each_offset(extent: &[usize], mut f: impl FnMut(&[usize])) {
    if extent.iter().any(|&e| e == 0) {
        return;
    }
    let mut idx = vec![0usize; extent.len()];
    loop {
        f(&idx);
        let mut a = extent.len();
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < extent[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Dense values on a rectangular window of the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    origin: LatticeIndex,
    extent: Vec<usize>,
    values: Vec<f64>,
}

impl Window {
    pub fn new(origin: LatticeIndex, extent: Vec<usize>, values: Vec<f64>) -> Result<Self, LatticeError> {
        check_dim(origin.dim())?;
        if extent.len() != origin.dim() {
            return Err(LatticeError::Dimension(format!(
                "origin has {} axes but extent has {}",
                origin.dim(),
                extent.len()
            )));
        }
        if extent.iter().any(|&e| e == 0) {
            return Err(LatticeError::Dimension(format!("empty window extent {extent:?}")));
        }
        let cells: usize = extent.iter().product();
        if values.len() != cells {
            return Err(LatticeError::Dimension(format!(
                "extent {extent:?} needs {cells} values, got {}",
                values.len()
            )));
        }
        Ok(Self { origin, extent, values })
    }

    pub fn zeros(origin: LatticeIndex, extent: Vec<usize>) -> Result<Self, LatticeError> {
        let cells = extent.iter().product();
        Self::new(origin, extent, vec![0.0; cells])
    }

    /// Window with origin `(1, .., 1)`.
    pub fn from_values(extent: Vec<usize>, values: Vec<f64>) -> Result<Self, LatticeError> {
        Self::new(LatticeIndex::ones(extent.len()), extent, values)
    }

    pub fn dim(&self) -> usize {
        self.extent.len()
    }

    pub fn origin(&self) -> &LatticeIndex {
        &self.origin
    }

    pub fn extent(&self) -> &[usize] {
        &self.extent
    }

    /// Largest index covered by the window.
    pub fn upper(&self) -> LatticeIndex {
        LatticeIndex(
            self.origin
                .coords()
                .iter()
                .zip(&self.extent)
                .map(|(o, &e)| o + e as i64 - 1)
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, k: &LatticeIndex) -> bool {
        k.dim() == self.dim() && self.origin.le(k) && k.le(&self.upper())
    }

    /// Flat offset of an absolute index, if it lies inside the window.
    pub fn offset_of(&self, k: &LatticeIndex) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let st = strides(&self.extent);
        Some(
            k.coords()
                .iter()
                .zip(self.origin.coords())
                .zip(&st)
                .map(|((c, o), s)| (c - o) as usize * s)
                .sum(),
        )
    }

    pub fn get(&self, k: &LatticeIndex) -> Option<f64> {
        self.offset_of(k).map(|o| self.values[o])
    }

    /// Copies the sub-window `[lo, lo + extent)`, which must lie inside `self`.
    pub fn sub_window(&self, lo: &LatticeIndex, extent: &[usize]) -> Result<Window, LatticeError> {
        let hi = LatticeIndex(lo.coords().iter().zip(extent).map(|(l, &e)| l + e as i64 - 1).collect());
        if !self.contains(lo) || !self.contains(&hi) {
            return Err(LatticeError::Range(format!("sub-window {lo}..{hi} outside window")));
        }
        let st = strides(&self.extent);
        let base: usize = lo
            .coords()
            .iter()
            .zip(self.origin.coords())
            .zip(&st)
            .map(|((c, o), s)| (c - o) as usize * s)
            .sum();
        let mut out = Vec::with_capacity(extent.iter().product());
        for_each_offset(extent, |idx| {
            let off: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
            out.push(self.values[base + off]);
        });
        Window::new(lo.clone(), extent.to_vec(), out)
    }
}

/// Inclusive prefix sums of a [`Window`]: `sums[k] = sum over origin <= u <= k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixArray {
    origin: LatticeIndex,
    extent: Vec<usize>,
    sums: Vec<f64>,
}

/// Cumulative sums along each axis in turn.
pub fn prefix_sums(w: &Window) -> Result<PrefixArray, LatticeError> {
    if w.is_empty() {
        return Err(LatticeError::Dimension("empty window".into()));
    }
    let extent = w.extent().to_vec();
    let st = strides(&extent);
    let mut sums = w.values().to_vec();
    let total = sums.len();
    for axis in 0..extent.len() {
        let stride = st[axis];
        let span = stride * extent[axis];
        // Each block of `span` cells holds `extent[axis]` slabs of `stride` cells.
        for block in (0..total).step_by(span) {
            for step in 1..extent[axis] {
                let cur = block + step * stride;
                for c in 0..stride {
                    sums[cur + c] += sums[cur - stride + c];
                }
            }
        }
    }
    Ok(PrefixArray { origin: w.origin().clone(), extent, sums })
}

impl PrefixArray {
    pub fn extent(&self) -> &[usize] {
        &self.extent
    }

    pub fn origin(&self) -> &LatticeIndex {
        &self.origin
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// The sum over the whole window.
    pub fn total(&self) -> f64 {
        *self.sums.last().expect("prefix arrays are never empty")
    }

    /// Prefix entry at window-relative offset (may be `-1` on some axis, meaning 0).
    fn at_rel(&self, rel: &[i64], st: &[usize]) -> f64 {
        if rel.iter().any(|&r| r < 0) {
            return 0.0;
        }
        let off: usize = rel.iter().zip(st).map(|(&r, &s)| r as usize * s).sum();
        self.sums[off]
    }

    /// Sum of the source values over `lo <= u <= hi` by inclusion-exclusion.
    pub fn rect_sum(&self, lo: &LatticeIndex, hi: &LatticeIndex) -> Result<f64, LatticeError> {
        let d = self.extent.len();
        if lo.dim() != d || hi.dim() != d {
            return Err(LatticeError::Dimension(format!(
                "rectangle corners must have {d} coordinates"
            )));
        }
        if !lo.le(hi) {
            return Err(LatticeError::Range(format!("lower corner {lo} not <= upper corner {hi}")));
        }
        let o = self.origin.coords();
        for a in 0..d {
            let top = o[a] + self.extent[a] as i64 - 1;
            if lo.coords()[a] < o[a] || hi.coords()[a] > top {
                return Err(LatticeError::Range(format!(
                    "rectangle {lo}..{hi} leaves the window on axis {a}"
                )));
            }
        }
        let st = strides(&self.extent);
        let mut rel = vec![0i64; d];
        Ok(self.rect_sum_unchecked(lo.coords(), hi.coords(), &st, &mut rel))
    }

    /// [`PrefixArray::rect_sum`] without validation; `st` are the strides of
    /// the extent and `rel` is scratch space of length `d`.
    pub(crate) fn rect_sum_unchecked(&self, lo: &[i64], hi: &[i64], st: &[usize], rel: &mut [i64]) -> f64 {
        let d = self.extent.len();
        let o = self.origin.coords();
        let mut total = 0.0;
        for mask in 0u32..(1 << d) {
            for a in 0..d {
                rel[a] = if mask & (1 << a) != 0 { lo[a] - 1 - o[a] } else { hi[a] - o[a] };
            }
            let v = self.at_rel(rel, st);
            if mask.count_ones() % 2 == 0 {
                total += v;
            } else {
                total -= v;
            }
        }
        total
    }
}

/// Free-function form of [`PrefixArray::rect_sum`].
pub fn rect_sum(p: &PrefixArray, lo: &LatticeIndex, hi: &LatticeIndex) -> Result<f64, LatticeError> {
    p.rect_sum(lo, hi)
}
