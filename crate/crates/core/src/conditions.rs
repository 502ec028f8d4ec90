//! Projective quantities and condition series, evaluated exactly from
//! model coefficients.
//!
//! All conditional expectations are anchored at `F_0`, the sigma-field of
//! innovations with index `<= 0` componentwise. For a linear field
//!
//! ```text
//! ||E(S_u | F_0)||^2 = sigma^2 b_u^2,   b_u^2 = sum_{i >= 0} (sum_{1 <= k <= u} a_{k+i})^2
//! ```
//!
//! and for a Volterra field `E(E^2(S_j | F_0)) = sigma^4 b_j^2` with
//! `b_j^2 = sum_{u != v} c_{u,v}(j) (c_{u,v}(j) + c_{v,u}(j))` and
//! `c_{u,v}(j) = sum_{1 <= k <= j} a_{k+u,k+v}`.

use crate::lattice::{self, prefix_sums, LatticeIndex, Window};
use crate::model::{CoeffArray, CoeffFamily, FieldModel, ModelDescriptor, VolterraCoeffs};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Slack below zero tolerated in `b_j^2` before it is reported as an error.
pub const NEGATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConditionsError {
    #[error("invalid index: {0}")]
    Index(String),
    #[error("negative series term {value} at j = {j}")]
    NegativeTerm { j: LatticeIndex, value: f64 },
    #[error("b_j^2 = {value} < 0 at j = {j}: coefficients are numerically inconsistent")]
    NumericConsistency { j: LatticeIndex, value: f64 },
    #[error("invalid input: {0}")]
    Input(String),
}

fn check_positive(j: &LatticeIndex, dim: usize) -> Result<(), ConditionsError> {
    if j.dim() != dim {
        return Err(ConditionsError::Index(format!("{j} has {} coordinates, model has {dim}", j.dim())));
    }
    if !j.is_positive() {
        return Err(ConditionsError::Index(format!("{j} must be >= 1 componentwise")));
    }
    Ok(())
}

/// `b_j^2` for a linear model (see the module docs).
pub fn linear_b_sq(c: &CoeffArray, j: &LatticeIndex) -> Result<f64, ConditionsError> {
    check_positive(j, c.dim())?;
    let ext = c.support_extent();
    let d = ext.len();
    // b_j^2 = sum_i (sum of a over the box [i+1, i+j])^2; only boxes meeting
    // the support (i <= ext - 2 on every axis) contribute.
    if ext.iter().any(|&e| e < 2) {
        return Ok(0.0);
    }
    let w = Window::new(LatticeIndex::zeros(d), ext.to_vec(), c.values().to_vec()).expect("valid support");
    let p = prefix_sums(&w).expect("non-empty support");
    let i_ext: Vec<usize> = ext.iter().map(|e| e - 1).collect();
    let st = lattice::strides(ext);
    let mut total = 0.0;
    let mut lo = vec![0i64; d];
    let mut hi = vec![0i64; d];
    let mut rel = vec![0i64; d];
    lattice::for_each_offset(&i_ext, |i| {
        for a in 0..d {
            lo[a] = i[a] as i64 + 1;
            hi[a] = (i[a] as i64 + j.coords()[a]).min(ext[a] as i64 - 1);
        }
        let s = p.rect_sum_unchecked(&lo, &hi, &st, &mut rel);
        total += s * s;
    });
    Ok(total)
}

pub fn linear_b(c: &CoeffArray, j: &LatticeIndex) -> Result<f64, ConditionsError> {
    linear_b_sq(c, j).map(f64::sqrt)
}

/// `||E(S_u | F_0)||` for a linear model, in the units of the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveNorm {
    pub u: LatticeIndex,
    pub value: f64,
}

pub fn projective_norm_linear(c: &CoeffArray, u: &LatticeIndex, sigma_sq: f64) -> Result<ProjectiveNorm, ConditionsError> {
    if !(sigma_sq > 0.0) {
        return Err(ConditionsError::Input(format!("sigma^2 = {sigma_sq} must be positive")));
    }
    Ok(ProjectiveNorm { u: u.clone(), value: sigma_sq.sqrt() * linear_b(c, u)? })
}

/// `c_{u,w}(j) = sum_{1 <= k <= j} a_{k+u, k+w}`.
pub fn volterra_c(v: &VolterraCoeffs, u: &LatticeIndex, w: &LatticeIndex, j: &LatticeIndex) -> f64 {
    volterra_c_map(v, j).get(&(u.clone(), w.clone())).copied().unwrap_or(0.0)
}

/// All nonzero `c_{u,w}(j)`, keyed by `(u, w)`.
fn volterra_c_map(v: &VolterraCoeffs, j: &LatticeIndex) -> BTreeMap<(LatticeIndex, LatticeIndex), f64> {
    let mut out = BTreeMap::new();
    for (p, q, a) in v.entries() {
        // k ranges over 1 <= k <= min(j, p, q) so that u = p - k, w = q - k >= 0.
        let kmax: Vec<usize> = (0..v.dim())
            .map(|i| j.coords()[i].min(p.coords()[i]).min(q.coords()[i]).max(0) as usize)
            .collect();
        lattice::for_each_offset(&kmax, |k0| {
            let k = LatticeIndex::from(&k0.iter().map(|&x| x as i64 + 1).collect::<Vec<_>>()[..]);
            *out.entry((p.sub(&k), q.sub(&k))).or_insert(0.0) += a;
        });
    }
    out
}

/// `b_j^2` for a Volterra model; may be slightly negative from rounding.
pub fn volterra_b_sq(v: &VolterraCoeffs, j: &LatticeIndex) -> Result<f64, ConditionsError> {
    check_positive(j, v.dim())?;
    let cmap = volterra_c_map(v, j);
    let mut total = 0.0;
    for ((u, w), &c) in &cmap {
        if u == w {
            continue;
        }
        let swapped = cmap.get(&(w.clone(), u.clone())).copied().unwrap_or(0.0);
        total += c * c + c * swapped;
    }
    Ok(total)
}

pub fn volterra_b(v: &VolterraCoeffs, j: &LatticeIndex) -> Result<f64, ConditionsError> {
    let b2 = volterra_b_sq(v, j)?;
    if b2 < -NEGATIVE_SLACK {
        return Err(ConditionsError::NumericConsistency { j: j.clone(), value: b2 });
    }
    Ok(b2.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    FiniteByExactness,
    FiniteByBound,
    Inconclusive,
}

/// What is known about `b` beyond the evaluated range.
#[derive(Debug, Clone, PartialEq)]
pub enum TailModel {
    /// Nothing: the report is inconclusive.
    Unknown,
    /// `b_j = b_{min(j, s)}` componentwise for all `j >= 1`.
    Saturating(LatticeIndex),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerm {
    pub j: LatticeIndex,
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MWReport {
    pub series: String,
    pub terms: Vec<SeriesTerm>,
    pub partial_sum: f64,
    /// Upper bound (or exact value) of the sum beyond `J_max`.
    pub tail_estimate: Option<f64>,
    pub verdict: Verdict,
}

impl MWReport {
    /// `j_1,..,j_d,term` rows with a header.
    pub fn to_csv(&self) -> String {
        let d = self.terms.first().map_or(1, |t| t.j.dim());
        let mut s = String::new();
        for a in 1..=d {
            let _ = write!(s, "j{a},");
        }
        s.push_str("term\n");
        for t in &self.terms {
            for c in t.j.coords() {
                let _ = write!(s, "{c},");
            }
            let _ = writeln!(s, "{:e}", t.term);
        }
        s
    }

    /// Partial sums after each included term (nondecreasing).
    pub fn running_sums(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.terms.iter().map(|t| {
            acc += t.term;
            acc
        }).collect()
    }
}

/// `sum_{k=1}^{n} k^{-s}`.
fn power_sum(n: i64, s: f64) -> f64 {
    (1..=n).map(|k| (k as f64).powf(-s)).sum()
}

/// `sum_{1 <= j <= J_max} b_j / |j|^{3/2}` with an integral-comparison tail
/// bound (`sum_{j > J} j^{-3/2} <= 2 / sqrt(J)` per axis) when the tail of
/// `b` is known to saturate.
pub fn mw_series(
    b: impl Fn(&LatticeIndex) -> f64,
    dim: usize,
    j_max: &LatticeIndex,
    tail: &TailModel,
) -> Result<MWReport, ConditionsError> {
    check_positive(j_max, dim)?;
    let ext: Vec<usize> = j_max.coords().iter().map(|&c| c as usize).collect();
    let mut terms = Vec::with_capacity(ext.iter().product());
    let mut partial = 0.0;
    let mut first_err = None;
    lattice::for_each_offset(&ext, |idx| {
        if first_err.is_some() {
            return;
        }
        let j = LatticeIndex::from(&idx.iter().map(|&i| i as i64 + 1).collect::<Vec<_>>()[..]);
        let bj = b(&j);
        if !(bj >= 0.0) {
            first_err = Some(ConditionsError::NegativeTerm { j: j.clone(), value: bj });
            return;
        }
        let term = bj / (j.norm().expect("positive") as f64).powf(1.5);
        partial += term;
        terms.push(SeriesTerm { j, term });
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let (tail_estimate, verdict) = match tail {
        TailModel::Unknown => (None, Verdict::Inconclusive),
        TailModel::Saturating(sat) => {
            if sat.dim() != dim {
                return Err(ConditionsError::Index(format!("saturation index {sat} has wrong dimension")));
            }
            let sat_ext: Vec<usize> = sat.coords().iter().map(|&c| c.max(1) as usize).collect();
            let mut b_sup = 0.0f64;
            let mut err = None;
            lattice::for_each_offset(&sat_ext, |idx| {
                let j = LatticeIndex::from(&idx.iter().map(|&i| i as i64 + 1).collect::<Vec<_>>()[..]);
                let bj = b(&j);
                if !(bj >= 0.0) {
                    err = Some(ConditionsError::NegativeTerm { j, value: bj });
                }
                b_sup = b_sup.max(bj);
            });
            if let Some(e) = err {
                return Err(e);
            }
            if b_sup == 0.0 {
                (Some(0.0), Verdict::FiniteByExactness)
            } else {
                let mut with_tail = 1.0;
                let mut inner = 1.0;
                for &jm in j_max.coords() {
                    let p = power_sum(jm, 1.5);
                    with_tail *= p + 2.0 / (jm as f64).sqrt();
                    inner *= p;
                }
                (Some(b_sup * (with_tail - inner)), Verdict::FiniteByBound)
            }
        }
    };
    Ok(MWReport { series: "mw".into(), terms, partial_sum: partial, tail_estimate, verdict })
}

/// Index beyond which `b_j` of a linear model is constant in every coordinate.
pub fn linear_saturation(c: &CoeffArray) -> LatticeIndex {
    LatticeIndex::from(&c.support_extent().iter().map(|&e| (e as i64 - 1).max(1)).collect::<Vec<_>>()[..])
}

pub fn volterra_saturation(v: &VolterraCoeffs) -> LatticeIndex {
    LatticeIndex::from(&v.max_lag().iter().map(|&e| (e as i64).max(1)).collect::<Vec<_>>()[..])
}

/// The condition series `sum b_j / |j|^{3/2}` of a model, with its exact
/// saturation point as tail model.
pub fn mw_series_for(model: &FieldModel, j_max: &LatticeIndex) -> Result<MWReport, ConditionsError> {
    let mut report = match model {
        FieldModel::Linear(c) => {
            let sat = linear_saturation(c);
            mw_series(|j| linear_b(c, j).unwrap_or(f64::NAN), c.dim(), j_max, &TailModel::Saturating(sat))?
        }
        FieldModel::Volterra(v) => {
            // Validate consistency up front so the closure can stay infallible.
            let sat = volterra_saturation(v);
            let ext: Vec<usize> = sat.coords().iter().zip(j_max.coords()).map(|(&s, &j)| s.max(j) as usize).collect();
            let mut err = None;
            lattice::for_each_offset(&ext, |idx| {
                let j = LatticeIndex::from(&idx.iter().map(|&i| i as i64 + 1).collect::<Vec<_>>()[..]);
                if let Err(e) = volterra_b(v, &j) {
                    err.get_or_insert(e);
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            mw_series(|j| volterra_b(v, j).unwrap_or(f64::NAN), v.dim(), j_max, &TailModel::Saturating(sat))?
        }
    };
    report.series = format!("mw-{}", model.kind());
    Ok(report)
}

/// `||E(X_j | F_0)||` for a model whose innovations have variance `sigma_sq`.
pub fn x_projection_norm(model: &FieldModel, j: &LatticeIndex, sigma_sq: f64) -> Result<f64, ConditionsError> {
    if j.dim() != model.dim() || j.coords().iter().any(|&c| c < 0) {
        return Err(ConditionsError::Index(format!("{j} must be >= 0 with d = {}", model.dim())));
    }
    match model {
        FieldModel::Linear(c) => {
            // sigma^2 sum_{i >= 0} a_{j+i}^2: the squares over the box [j, ext - 1].
            let mut s = 0.0;
            let ext = c.support_extent();
            if j.coords().iter().zip(ext).any(|(&jc, &e)| jc as usize >= e) {
                return Ok(0.0);
            }
            let span: Vec<usize> = j.coords().iter().zip(ext).map(|(&jc, &e)| e - jc as usize).collect();
            lattice::for_each_offset(&span, |i| {
                let idx: Vec<i64> = i.iter().zip(j.coords()).map(|(&x, &jc)| x as i64 + jc).collect();
                s += c.get(&idx).powi(2);
            });
            Ok((sigma_sq * s).sqrt())
        }
        FieldModel::Volterra(v) => {
            let mut s = 0.0;
            for (u, w, a) in v.entries() {
                if j.le(u) && j.le(w) {
                    s += a * (a + v.get(w, u));
                }
            }
            if s < -NEGATIVE_SLACK {
                return Err(ConditionsError::NumericConsistency { j: j.clone(), value: s });
            }
            Ok(sigma_sq * s.max(0.0).sqrt())
        }
    }
}

/// `sum_{i >= j} a_i^2` for every `j` in the support box, row-major.
fn suffix_sq(c: &CoeffArray) -> Vec<f64> {
    let ext = c.support_extent();
    let st = lattice::strides(ext);
    let mut t: Vec<f64> = c.values().iter().map(|a| a * a).collect();
    for (&e, &s) in ext.iter().zip(&st) {
        for o in (0..t.len()).rev() {
            if (o / s) % e + 1 < e {
                t[o] += t[o + s];
            }
        }
    }
    t
}

/// `sum_{1 <= j <= J_max} ||E(X_j | F_0)|| / |j|^{1/2}` from closed forms.
///
/// Terms vanish once `j` leaves the support, so the remaining sum beyond
/// `J_max` is computed exactly and reported as the tail.
pub fn mw_x_series(desc: &ModelDescriptor, j_max: &LatticeIndex) -> Result<MWReport, ConditionsError> {
    let model = &desc.model;
    let sigma_sq = desc.innovations.variance();
    check_positive(j_max, model.dim())?;
    let support_top: Vec<i64> = model.required_pad().iter().map(|&p| p as i64).collect();
    let suffix = match model {
        FieldModel::Linear(c) => Some(suffix_sq(c)),
        FieldModel::Volterra(_) => None,
    };
    let term = |j: &LatticeIndex| -> Result<f64, ConditionsError> {
        let norm = match (model, &suffix) {
            (FieldModel::Linear(c), Some(suf)) => {
                let ext = c.support_extent();
                let st = lattice::strides(ext);
                if j.coords().iter().zip(ext).any(|(&jc, &e)| jc as usize >= e) {
                    0.0
                } else {
                    let o: usize = j.coords().iter().zip(&st).map(|(&jc, s)| jc as usize * s).sum();
                    (sigma_sq * suf[o]).sqrt()
                }
            }
            _ => x_projection_norm(model, j, sigma_sq)?,
        };
        Ok(norm / (j.norm().expect("positive") as f64).sqrt())
    };
    let ext: Vec<usize> = j_max.coords().iter().map(|&c| c as usize).collect();
    let mut terms = Vec::new();
    let mut partial = 0.0;
    let mut err = None;
    lattice::for_each_offset(&ext, |idx| {
        let j = LatticeIndex::from(&idx.iter().map(|&i| i as i64 + 1).collect::<Vec<_>>()[..]);
        match term(&j) {
            Ok(t) => {
                partial += t;
                terms.push(SeriesTerm { j, term: t });
            }
            Err(e) => {
                err.get_or_insert(e);
            }
        }
    });
    let mut tail = 0.0;
    let full: Vec<usize> = support_top.iter().map(|&t| t.max(0) as usize).collect();
    if full.iter().all(|&f| f >= 1) {
        lattice::for_each_offset(&full, |idx| {
            let j = LatticeIndex::from(&idx.iter().map(|&i| i as i64 + 1).collect::<Vec<_>>()[..]);
            if !j.le(j_max) {
                match term(&j) {
                    Ok(t) => tail += t,
                    Err(e) => {
                        err.get_or_insert(e);
                    }
                }
            }
        });
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(MWReport {
        series: format!("mw-x-{}", model.kind()),
        terms,
        partial_sum: partial,
        tail_estimate: Some(tail),
        verdict: Verdict::FiniteByExactness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsSumRow {
    pub radius: usize,
    pub partial_sum: f64,
    /// Difference from the previous row; absent on the first row.
    pub increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsSumScan {
    pub rows: Vec<AbsSumRow>,
    /// Every increment is positive and none is smaller than its predecessor.
    /// A divergence diagnostic only: divergence cannot be decided from a
    /// finite scan.
    pub grows_without_flattening: bool,
}

/// `sum_{|u|_inf <= R} |a_u|` over increasing radii.
pub fn abs_sum_scan(family: &dyn CoeffFamily, radii: &[usize]) -> Result<AbsSumScan, ConditionsError> {
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConditionsError::Input(format!("radii {radii:?} must be strictly increasing")));
    }
    let d = family.dim();
    let mut rows: Vec<AbsSumRow> = Vec::with_capacity(radii.len());
    let mut j = vec![0i64; d];
    for &r in radii {
        let mut s = 0.0;
        lattice::for_each_offset(&vec![r + 1; d], |idx| {
            for (c, &i) in j.iter_mut().zip(idx) {
                *c = i as i64;
            }
            s += family.coeff(&j).abs();
        });
        let increment = rows.last().map(|p| s - p.partial_sum);
        rows.push(AbsSumRow { radius: r, partial_sum: s, increment });
    }
    let incs: Vec<f64> = rows.iter().filter_map(|r| r.increment).collect();
    let grows = !incs.is_empty() && incs.iter().all(|&x| x > 0.0) && incs.windows(2).all(|w| w[1] >= w[0]);
    Ok(AbsSumScan { rows, grows_without_flattening: grows })
}
