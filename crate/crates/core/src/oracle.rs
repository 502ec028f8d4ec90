//! Exact conditional expectations by enumerating every Rademacher
//! configuration of the innovations a statistic depends on.
//!
//! The sample space is the set of sign vectors of the base sites. For iid
//! innovations the base sites are the observable innovations `xi_k`
//! themselves; for column-MDS innovations every observable
//! `xi[n,m] = e[n,m] g(e[n-1,m])` also pulls in the base sign below it.
//! Conditioning on `F_c` means conditioning on the observable `xi_i`,
//! `i <= c` componentwise, within the enumerated site set.
//!
//! Configurations are visited in Gray-code order so that each step flips one
//! base sign and the statistic is updated incrementally; the space is split
//! on the first four base sites into sixteen independent chunks that are
//! merged in a fixed order.

use crate::conditions::{self, ConditionsError};
use crate::innovations::{Distribution, InnovationSpec, Structure};
use crate::lattice::{self, LatticeIndex};
use crate::model::{FieldModel, ModelDescriptor};
use crate::FieldError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Hard cap on the number of enumerated base sites.
pub const MAX_SITES: usize = 24;
const DENSE_CLASSES: u64 = 1 << 20;
const RESYNC_EVERY: u64 = 1 << 16;
const SPLIT_SITES: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("{n} innovation sites needed, enumeration is capped at {MAX_SITES}")]
    Size { n: usize },
    #[error("exact enumeration needs rademacher innovations, got {0:?}")]
    Distribution(Distribution),
    #[error("invalid statistic: {0}")]
    Statistic(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Conditions(#[from] ConditionsError),
}

/// A finitely supported model on the window `[1, extent]` together with the
/// full list of innovation sites it reads.
#[derive(Debug, Clone)]
pub struct ExactModel {
    model: FieldModel,
    structure: Structure,
    extent: Vec<usize>,
    base: Vec<LatticeIndex>,
    obs: Vec<LatticeIndex>,
    obs_lookup: HashMap<LatticeIndex, usize>,
    obs_eps: Vec<usize>,
    obs_gate: Vec<Option<usize>>,
    base_to_obs: Vec<Vec<usize>>,
}

/// Observable sites `k - j` read by the field on `[1, extent]`.
fn observable_sites(model: &FieldModel, extent: &[usize]) -> Vec<LatticeIndex> {
    let lags: Vec<LatticeIndex> = match model {
        FieldModel::Linear(c) => c.entries().into_iter().filter(|(_, a)| *a != 0.0).map(|(j, _)| j).collect(),
        FieldModel::Volterra(v) => v
            .entries()
            .filter(|(_, _, a)| *a != 0.0)
            .flat_map(|(u, w, _)| [u.clone(), w.clone()])
            .collect(),
    };
    let mut sites = std::collections::BTreeSet::new();
    lattice::for_each_offset(extent, |off| {
        let k = LatticeIndex::from(&off.iter().map(|&o| o as i64 + 1).collect::<Vec<_>>()[..]);
        for j in &lags {
            sites.insert(k.sub(j));
        }
    });
    sites.into_iter().collect()
}

/// Builds the site list for `desc` on the window `[1, extent]`.
///
/// The pad below the window is implied by the model support, so it is not
/// an argument.
pub fn enumerate_model(desc: &ModelDescriptor, extent: &[usize]) -> Result<ExactModel, OracleError> {
    let InnovationSpec { distribution, structure, .. } = desc.innovations;
    if distribution != Distribution::Rademacher {
        return Err(OracleError::Distribution(distribution));
    }
    let d = desc.model.dim();
    if extent.len() != d || extent.iter().any(|&e| e == 0) {
        return Err(OracleError::Precondition(format!("window extent {extent:?} must be positive with {d} axes")));
    }
    if structure == Structure::ColumnMds && d != 2 {
        return Err(FieldError::UnsupportedStructure(format!("column-mds innovations need d = 2, got d = {d}")).into());
    }
    let obs = observable_sites(&desc.model, extent);
    let base: Vec<LatticeIndex> = match structure {
        Structure::Iid => obs.clone(),
        Structure::ColumnMds => {
            let below = LatticeIndex::from([1, 0]);
            let mut all: std::collections::BTreeSet<LatticeIndex> = obs.iter().cloned().collect();
            all.extend(obs.iter().map(|o| o.sub(&below)));
            all.into_iter().collect()
        }
    };
    if base.len() > MAX_SITES {
        return Err(OracleError::Size { n: base.len() });
    }
    let base_index: HashMap<&LatticeIndex, usize> = base.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut obs_eps = Vec::with_capacity(obs.len());
    let mut obs_gate = Vec::with_capacity(obs.len());
    let mut base_to_obs = vec![Vec::new(); base.len()];
    for (o, site) in obs.iter().enumerate() {
        let e = base_index[site];
        obs_eps.push(e);
        base_to_obs[e].push(o);
        if structure == Structure::ColumnMds {
            let g = base_index[&site.sub(&LatticeIndex::from([1, 0]))];
            obs_gate.push(Some(g));
            base_to_obs[g].push(o);
        } else {
            obs_gate.push(None);
        }
    }
    let obs_lookup = obs.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    Ok(ExactModel {
        model: desc.model.clone(),
        structure,
        extent: extent.to_vec(),
        base,
        obs,
        obs_lookup,
        obs_eps,
        obs_gate,
        base_to_obs,
    })
}

impl ExactModel {
    /// Number of enumerated base signs.
    pub fn n_sites(&self) -> usize {
        self.base.len()
    }

    /// Base sites in canonical (lexicographic) order; bit `i` of a
    /// configuration is the sign of site `i` (set = `+1`).
    pub fn sites(&self) -> &[LatticeIndex] {
        &self.base
    }

    pub fn observable_sites(&self) -> &[LatticeIndex] {
        &self.obs
    }

    pub fn extent(&self) -> &[usize] {
        &self.extent
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn n_configurations(&self) -> u64 {
        1u64 << self.base.len()
    }

    pub fn configurations(&self) -> impl Iterator<Item = u64> {
        0..self.n_configurations()
    }

    /// Observable innovation values of one configuration.
    pub fn observables(&self, config: u64) -> Vec<f64> {
        let sign = |b: usize| if config >> b & 1 == 1 { 1.0 } else { -1.0 };
        (0..self.obs.len()).map(|o| self.obs_value(o, &sign)).collect()
    }

    fn obs_value(&self, o: usize, sign: &impl Fn(usize) -> f64) -> f64 {
        let e = sign(self.obs_eps[o]);
        match self.obs_gate[o] {
            None => e,
            Some(g) => e * crate::innovations::mds_gate(sign(g)),
        }
    }

    fn radix(&self) -> u64 {
        match self.structure {
            Structure::Iid => 2,
            Structure::ColumnMds => 3,
        }
    }

    fn code(&self, v: f64) -> u64 {
        match self.structure {
            Structure::Iid => (v > 0.0) as u64,
            Structure::ColumnMds => {
                if v < 0.0 {
                    0
                } else if v == 0.0 {
                    1
                } else {
                    2
                }
            }
        }
    }

    fn decode(&self, code: u64) -> f64 {
        match self.structure {
            Structure::Iid => if code == 1 { 1.0 } else { -1.0 },
            Structure::ColumnMds => (code as f64 - 1.0) * std::f64::consts::SQRT_2,
        }
    }

    fn window_contains(&self, k: &LatticeIndex) -> bool {
        k.dim() == self.extent.len() && k.coords().iter().zip(&self.extent).all(|(&c, &e)| c >= 1 && c <= e as i64)
    }
}

/// A statistic of the field on the model window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Statistic {
    /// `sum_{lo <= k <= hi} X_k`.
    RectSum { lo: LatticeIndex, hi: LatticeIndex },
    Constant(f64),
}

impl Statistic {
    /// `S_n = sum_{1 <= k <= n} X_k`.
    pub fn partial_sum(n: &LatticeIndex) -> Self {
        Statistic::RectSum { lo: LatticeIndex::ones(n.dim()), hi: n.clone() }
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Constant(f64),
    Linear(Vec<f64>),
    Quadratic { adj: Vec<Vec<(usize, f64)>>, pairs: Vec<(usize, usize, f64)> },
}

impl Compiled {
    fn new(m: &ExactModel, stat: &Statistic) -> Result<Self, OracleError> {
        let (lo, hi) = match stat {
            Statistic::Constant(c) => return Ok(Compiled::Constant(*c)),
            Statistic::RectSum { lo, hi } => (lo, hi),
        };
        if !lo.le(hi) || !m.window_contains(lo) || !m.window_contains(hi) {
            return Err(OracleError::Statistic(format!(
                "rectangle [{lo}, {hi}] is not inside the window [1, {:?}]",
                m.extent
            )));
        }
        let span: Vec<usize> = lo.coords().iter().zip(hi.coords()).map(|(l, h)| (h - l + 1) as usize).collect();
        let mut cells = Vec::new();
        lattice::for_each_offset(&span, |off| {
            cells.push(LatticeIndex::from(&off.iter().zip(lo.coords()).map(|(&o, l)| o as i64 + l).collect::<Vec<_>>()[..]));
        });
        match &m.model {
            FieldModel::Linear(c) => {
                let mut w = vec![0.0; m.obs.len()];
                for k in &cells {
                    for (j, a) in c.entries() {
                        if a != 0.0 {
                            w[m.obs_lookup[&k.sub(&j)]] += a;
                        }
                    }
                }
                Ok(Compiled::Linear(w))
            }
            FieldModel::Volterra(v) => {
                let mut q: BTreeMap<(usize, usize), f64> = BTreeMap::new();
                for k in &cells {
                    for (u, w, a) in v.entries() {
                        if a != 0.0 {
                            let (x, y) = (m.obs_lookup[&k.sub(u)], m.obs_lookup[&k.sub(w)]);
                            *q.entry((x.min(y), x.max(y))).or_insert(0.0) += a;
                        }
                    }
                }
                let mut adj = vec![Vec::new(); m.obs.len()];
                let mut pairs = Vec::with_capacity(q.len());
                for (&(x, y), &a) in &q {
                    adj[x].push((y, a));
                    adj[y].push((x, a));
                    pairs.push((x, y, a));
                }
                Ok(Compiled::Quadratic { adj, pairs })
            }
        }
    }

    fn full(&self, xi: &[f64]) -> f64 {
        match self {
            Compiled::Constant(c) => *c,
            Compiled::Linear(w) => w.iter().zip(xi).map(|(w, x)| w * x).sum(),
            Compiled::Quadratic { pairs, .. } => pairs.iter().map(|&(x, y, a)| a * xi[x] * xi[y]).sum(),
        }
    }

    /// Change of the statistic when `xi[o]` moves to `new`; `xi` still holds
    /// the old value.
    fn delta(&self, o: usize, new: f64, xi: &[f64]) -> f64 {
        let dv = new - xi[o];
        match self {
            Compiled::Constant(_) => 0.0,
            Compiled::Linear(w) => w[o] * dv,
            Compiled::Quadratic { adj, .. } => dv * adj[o].iter().map(|&(p, a)| a * xi[p]).sum::<f64>(),
        }
    }
}

/// Class-key layout of one conditioning corner.
#[derive(Debug, Clone)]
struct Corner {
    weight: Vec<Option<u64>>,
    cone: Vec<usize>,
    classes: u64,
}

impl Corner {
    fn new(m: &ExactModel, corner: &LatticeIndex) -> Result<Self, OracleError> {
        if corner.dim() != m.extent.len() {
            return Err(OracleError::Precondition(format!("corner {corner} has the wrong dimension")));
        }
        let b = m.radix();
        let mut weight = vec![None; m.obs.len()];
        let mut cone = Vec::new();
        let mut w = 1u64;
        for (o, s) in m.obs.iter().enumerate() {
            if s.le(corner) {
                weight[o] = Some(w);
                cone.push(o);
                w *= b;
            }
        }
        Ok(Self { weight, cone, classes: w })
    }

    fn key(&self, m: &ExactModel, xi: &[f64]) -> u64 {
        self.cone.iter().map(|&o| m.code(xi[o]) * self.weight[o].unwrap()).sum()
    }
}

/// Sums and counts of a statistic per conditioning class.
#[derive(Debug, Clone)]
enum ClassTable {
    Dense { sum: Vec<f64>, count: Vec<u64> },
    Sparse(HashMap<u64, (f64, u64)>),
}

impl ClassTable {
    fn new(classes: u64) -> Self {
        if classes <= DENSE_CLASSES {
            ClassTable::Dense { sum: vec![0.0; classes as usize], count: vec![0; classes as usize] }
        } else {
            ClassTable::Sparse(HashMap::new())
        }
    }

    fn add(&mut self, key: u64, v: f64) {
        match self {
            ClassTable::Dense { sum, count } => {
                sum[key as usize] += v;
                count[key as usize] += 1;
            }
            ClassTable::Sparse(map) => {
                let e = map.entry(key).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }

    fn merge(&mut self, other: &ClassTable) {
        for (k, s, c) in other.sorted() {
            match self {
                ClassTable::Dense { sum, count } => {
                    sum[k as usize] += s;
                    count[k as usize] += c;
                }
                ClassTable::Sparse(map) => {
                    let e = map.entry(k).or_insert((0.0, 0));
                    e.0 += s;
                    e.1 += c;
                }
            }
        }
    }

    /// Occupied classes in key order.
    fn sorted(&self) -> Vec<(u64, f64, u64)> {
        match self {
            ClassTable::Dense { sum, count } => {
                (0..sum.len()).filter(|&k| count[k] > 0).map(|k| (k as u64, sum[k], count[k])).collect()
            }
            ClassTable::Sparse(map) => {
                let mut v: Vec<_> = map.iter().map(|(&k, &(s, c))| (k, s, c)).collect();
                v.sort_by_key(|e| e.0);
                v
            }
        }
    }

    fn means(&self) -> HashMap<u64, f64> {
        self.sorted().into_iter().map(|(k, s, c)| (k, s / c as f64)).collect()
    }
}

/// Visits every configuration in Gray-code order, chunked on the first
/// base sites; returns one accumulator per chunk in chunk order.
fn run<A: Send>(
    m: &ExactModel,
    stats: &[Compiled],
    corners: &[Corner],
    init: impl Fn() -> A + Sync,
    step: impl Fn(&mut A, &[u64], &[f64]) + Sync,
) -> Vec<A> {
    let n = m.base.len();
    let split = if n >= 2 * SPLIT_SITES { SPLIT_SITES } else { 0 };
    let inner = n - split;
    let chunk = |c: u64| -> A {
        let mut acc = init();
        let mut bits: u64 = c;
        let sign = |bits: u64, b: usize| if bits >> b & 1 == 1 { 1.0 } else { -1.0 };
        let mut xi: Vec<f64> = (0..m.obs.len()).map(|o| m.obs_value(o, &|b| sign(bits, b))).collect();
        let mut svals: Vec<f64> = stats.iter().map(|s| s.full(&xi)).collect();
        let mut keys: Vec<u64> = corners.iter().map(|k| k.key(m, &xi)).collect();
        step(&mut acc, &keys, &svals);
        for i in 1..(1u64 << inner) {
            let b = split + i.trailing_zeros() as usize;
            bits ^= 1 << b;
            for &o in &m.base_to_obs[b] {
                let new = m.obs_value(o, &|b| sign(bits, b));
                if new == xi[o] {
                    continue;
                }
                for (s, st) in svals.iter_mut().zip(stats) {
                    *s += st.delta(o, new, &xi);
                }
                let dc = m.code(new) as i64 - m.code(xi[o]) as i64;
                for (k, cn) in keys.iter_mut().zip(corners) {
                    if let Some(w) = cn.weight[o] {
                        *k = (*k as i64 + dc * w as i64) as u64;
                    }
                }
                xi[o] = new;
            }
            if i % RESYNC_EVERY == 0 {
                for (s, st) in svals.iter_mut().zip(stats) {
                    *s = st.full(&xi);
                }
            }
            step(&mut acc, &keys, &svals);
        }
        acc
    };
    (0..1u64 << split).into_par_iter().map(chunk).collect()
}

fn merged_tables(m: &ExactModel, stat: &Compiled, corners: &[Corner]) -> Vec<ClassTable> {
    let parts = run(
        m,
        std::slice::from_ref(stat),
        corners,
        || corners.iter().map(|c| ClassTable::new(c.classes)).collect::<Vec<_>>(),
        |acc, keys, s| {
            for (t, &k) in acc.iter_mut().zip(keys) {
                t.add(k, s[0]);
            }
        },
    );
    let mut out: Vec<ClassTable> = corners.iter().map(|c| ClassTable::new(c.classes)).collect();
    for part in &parts {
        for (o, p) in out.iter_mut().zip(part) {
            o.merge(p);
        }
    }
    out
}

/// One conditioning class: the observable values on the cone, its
/// probability and the conditional mean of the statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CondClass {
    pub observables: Vec<f64>,
    pub prob: f64,
    pub mean: f64,
}

/// `E(S | F_cond)` as a function of the cone observables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CondExpectation {
    pub cond: LatticeIndex,
    pub cone_sites: Vec<LatticeIndex>,
    pub classes: Vec<CondClass>,
    /// `||E(S | F_cond)||_2`.
    pub norm: f64,
    #[serde(skip)]
    radix: u64,
    #[serde(skip)]
    structure: Option<Structure>,
    #[serde(skip)]
    lookup: HashMap<u64, usize>,
}

impl CondExpectation {
    /// `E(S | F_cond)` at the cone values given by `obs`, or `None` if that
    /// combination has probability zero.
    pub fn value_given(&self, obs: impl Fn(&LatticeIndex) -> f64) -> Option<f64> {
        let mut key = 0u64;
        let mut w = 1u64;
        for s in &self.cone_sites {
            let v = obs(s);
            let code = match self.structure? {
                Structure::Iid => (v > 0.0) as u64,
                Structure::ColumnMds => if v < 0.0 { 0 } else if v == 0.0 { 1 } else { 2 },
            };
            key += code * w;
            w *= self.radix;
        }
        self.lookup.get(&key).map(|&i| self.classes[i].mean)
    }

    /// Law of total expectation: `E(E(S | F))`.
    pub fn mean(&self) -> f64 {
        self.classes.iter().map(|c| c.prob * c.mean).sum()
    }

    /// `E(S | F_cond)` for every configuration, in configuration order.
    pub fn per_configuration(&self, m: &ExactModel) -> Vec<f64> {
        m.configurations()
            .map(|c| {
                let xi = m.observables(c);
                let lookup: HashMap<&LatticeIndex, f64> = m.obs.iter().zip(&xi).map(|(s, &v)| (s, v)).collect();
                self.value_given(|s| lookup[s]).expect("every configuration has positive probability")
            })
            .collect()
    }
}

/// `E(S | F_cond)` by averaging `S` over the configurations that agree on
/// every observable innovation with index `<= cond`.
pub fn exact_cond_expectation(m: &ExactModel, stat: &Statistic, cond: &LatticeIndex) -> Result<CondExpectation, OracleError> {
    let compiled = Compiled::new(m, stat)?;
    let corner = Corner::new(m, cond)?;
    let table = merged_tables(m, &compiled, std::slice::from_ref(&corner)).pop().expect("one corner");
    let total = m.n_configurations() as f64;
    let radix = m.radix();
    let mut classes = Vec::new();
    let mut lookup = HashMap::new();
    let mut norm_sq = 0.0;
    for (key, sum, count) in table.sorted() {
        let mean = sum / count as f64;
        let prob = count as f64 / total;
        norm_sq += prob * mean * mean;
        let mut rest = key;
        let observables = corner
            .cone
            .iter()
            .map(|_| {
                let c = rest % radix;
                rest /= radix;
                m.decode(c)
            })
            .collect();
        lookup.insert(key, classes.len());
        classes.push(CondClass { observables, prob, mean });
    }
    Ok(CondExpectation {
        cond: cond.clone(),
        cone_sites: corner.cone.iter().map(|&o| m.obs[o].clone()).collect(),
        classes,
        norm: norm_sq.sqrt(),
        radix,
        structure: Some(m.structure),
        lookup,
    })
}

/// `||S||_2` by enumeration.
pub fn exact_norm(m: &ExactModel, stat: &Statistic) -> Result<f64, OracleError> {
    let compiled = Compiled::new(m, stat)?;
    let parts = run(m, std::slice::from_ref(&compiled), &[], || 0.0f64, |acc, _, s| *acc += s[0] * s[0]);
    Ok((parts.iter().sum::<f64>() / m.n_configurations() as f64).sqrt())
}

/// `max |E(E(S | F_outer) | F_inner) - E(S | F_target)|` over configurations,
/// for a target corner `<= inner`.
pub fn iterated_deviation(
    m: &ExactModel,
    stat: &Statistic,
    outer: &LatticeIndex,
    inner: &LatticeIndex,
    target: &LatticeIndex,
) -> Result<f64, OracleError> {
    if !target.le(inner) {
        return Err(OracleError::Precondition(format!("target corner {target} must be <= inner corner {inner}")));
    }
    let compiled = Compiled::new(m, stat)?;
    let c_outer = Corner::new(m, outer)?;
    let c_inner = Corner::new(m, inner)?;
    let c_target = Corner::new(m, target)?;
    let first = merged_tables(m, &compiled, &[c_outer.clone(), c_target.clone()]);
    let outer_mean = first[0].means();
    let target_mean = first[1].means();
    // Second pass: average the outer conditional mean over the inner classes,
    // remembering which target class each inner class lies in.
    let corners = [c_outer, c_inner.clone(), c_target];
    let parts = run(
        m,
        &[],
        &corners,
        || (ClassTable::new(c_inner.classes), BTreeMap::<u64, u64>::new()),
        |acc, keys, _| {
            acc.0.add(keys[1], outer_mean[&keys[0]]);
            acc.1.insert(keys[1], keys[2]);
        },
    );
    let mut inner_table = ClassTable::new(c_inner.classes);
    let mut pairs = BTreeMap::new();
    for (t, p) in &parts {
        inner_table.merge(t);
        pairs.extend(p.iter().map(|(&a, &b)| (a, b)));
    }
    let inner_mean = inner_table.means();
    Ok(pairs.iter().map(|(a, b)| (inner_mean[a] - target_mean[b]).abs()).fold(0.0, f64::max))
}

/// Deviation from `E(E(S | F_{a,b}) | F_{u,v}) = E(S | F_{u, min(b,v)})`,
/// `d = 2`, `a >= u`.
pub fn check_commuting(m: &ExactModel, stat: &Statistic, a: i64, b: i64, u: i64, v: i64) -> Result<f64, OracleError> {
    if m.extent.len() != 2 {
        return Err(OracleError::Precondition("commuting check needs d = 2".into()));
    }
    if a < u {
        return Err(OracleError::Precondition(format!("need a >= u, got a = {a}, u = {u}")));
    }
    iterated_deviation(m, stat, &[a, b].into(), &[u, v].into(), &[u, b.min(v)].into())
}

/// Deviation from the tower property `E(E(S | F_a) | F_u) = E(S | F_u)`, `u <= a`.
pub fn tower_deviation(m: &ExactModel, stat: &Statistic, a: &LatticeIndex, u: &LatticeIndex) -> Result<f64, OracleError> {
    if !u.le(a) {
        return Err(OracleError::Precondition(format!("need u <= a, got u = {u}, a = {a}")));
    }
    iterated_deviation(m, stat, a, u, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioStatus {
    Finite,
    /// Both sides vanish.
    Degenerate,
    /// The series vanishes but `S_n` does not.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarRatio {
    pub n: LatticeIndex,
    /// `||S_n|| / sqrt(|n|)`.
    pub lhs: f64,
    /// `sum_{1 <= j <= n} ||E(S_j | F_1)|| / |j|^{3/2}`.
    pub rhs_series: f64,
    pub implied_constant: Option<f64>,
    pub status: RatioStatus,
}

const ZERO_TOL: f64 = 1e-14;

/// Both sides of the maximal-inequality comparison, each computed exactly.
/// The model window must contain `[1, n]`.
pub fn exact_var_ratio(m: &ExactModel, n: &LatticeIndex) -> Result<VarRatio, OracleError> {
    let size = n.norm().ok_or_else(|| OracleError::Precondition(format!("n = {n} must be >= 1")))? as f64;
    let lhs = exact_norm(m, &Statistic::partial_sum(n))? / size.sqrt();
    let ones = LatticeIndex::ones(n.dim());
    let ext: Vec<usize> = n.coords().iter().map(|&c| c as usize).collect();
    let mut js = Vec::new();
    lattice::for_each_offset(&ext, |off| {
        js.push(LatticeIndex::from(&off.iter().map(|&o| o as i64 + 1).collect::<Vec<_>>()[..]));
    });
    let mut rhs = 0.0;
    for j in &js {
        let ce = exact_cond_expectation(m, &Statistic::partial_sum(j), &ones)?;
        rhs += ce.norm / (j.norm().expect("positive") as f64).powf(1.5);
    }
    let (status, implied_constant) = if rhs <= ZERO_TOL {
        if lhs <= ZERO_TOL {
            (RatioStatus::Degenerate, None)
        } else {
            (RatioStatus::Unbounded, None)
        }
    } else {
        (RatioStatus::Finite, Some(lhs / rhs))
    };
    Ok(VarRatio { n: n.clone(), lhs, rhs_series: rhs, implied_constant, status })
}

/// One line of an oracle verification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: String, deviation: f64, tolerance: f64) -> OracleCheck {
    OracleCheck { pass: deviation <= tolerance, name, deviation, tolerance }
}

/// Closed-form versus enumeration checks plus commuting, tower and
/// total-expectation identities for every model in `suite`.
pub fn verify_suite(suite: &[(String, ModelDescriptor, Vec<usize>)]) -> Result<Vec<OracleCheck>, OracleError> {
    let mut out = Vec::new();
    for (name, desc, extent) in suite {
        let m = enumerate_model(desc, extent)?;
        let d = extent.len();
        let top = LatticeIndex::from(&extent.iter().map(|&e| e as i64).collect::<Vec<_>>()[..]);
        let stat = Statistic::partial_sum(&top);
        let zero = LatticeIndex::zeros(d);
        let ce = exact_cond_expectation(&m, &stat, &zero)?;
        let closed = match &desc.model {
            FieldModel::Linear(c) => conditions::linear_b(c, &top)?,
            FieldModel::Volterra(v) => conditions::volterra_b(v, &top)?,
        };
        out.push(check(format!("{name}: closed-form norm of E(S_n|F_0)"), (ce.norm - closed).abs(), 1e-10));
        let full = exact_cond_expectation(&m, &stat, &LatticeIndex::splat(d, i64::MAX / 4))?;
        out.push(check(format!("{name}: total expectation"), (ce.mean() - full.mean()).abs(), 1e-12));
        let a = LatticeIndex::splat(d, 1);
        out.push(check(format!("{name}: tower property"), tower_deviation(&m, &stat, &a, &zero)?, 1e-12));
        if d == 2 {
            let mut worst = 0.0f64;
            for (a, b, u, v) in [(2, 1, 1, 2), (1, 2, 0, 0), (2, 0, 1, 2), (1, 1, 1, 1)] {
                worst = worst.max(check_commuting(&m, &stat, a, b, u, v)?);
            }
            out.push(check(format!("{name}: commuting filtration"), worst, 1e-12));
        }
    }
    Ok(out)
}

/// The small-model suite run by `oracle-verify` without a config.
pub fn bundled_suite() -> Vec<(String, ModelDescriptor, Vec<usize>)> {
    use crate::model::{CoeffArray, VolterraCoeffs};
    let rad = |s: Structure| InnovationSpec::new(Distribution::Rademacher, s, 0);
    let lin = |e: &[([i64; 2], f64)]| {
        FieldModel::Linear(
            CoeffArray::from_entries(2, &e.iter().map(|(j, a)| (LatticeIndex::from(*j), *a)).collect::<Vec<_>>())
                .expect("valid coefficients"),
        )
    };
    let vol = |e: &[([i64; 2], [i64; 2], f64)]| {
        FieldModel::Volterra(
            VolterraCoeffs::from_entries(
                2,
                &e.iter().map(|(u, v, a)| (LatticeIndex::from(*u), LatticeIndex::from(*v), *a)).collect::<Vec<_>>(),
            )
            .expect("valid coefficients"),
        )
    };
    let models = [
        ("identity", lin(&[([0, 0], 1.0)]), Structure::Iid, vec![2, 2]),
        ("ma", lin(&[([0, 0], 0.5), ([0, 1], 0.5)]), Structure::Iid, vec![2, 3]),
        ("lagged", lin(&[([0, 0], 1.0), ([1, 0], 0.5), ([1, 1], -1.0)]), Structure::Iid, vec![2, 2]),
        ("lagged-mds", lin(&[([0, 0], 1.0), ([1, 1], -0.5)]), Structure::ColumnMds, vec![2, 2]),
        ("volterra", vol(&[([1, 0], [0, 1], 1.0)]), Structure::Iid, vec![2, 2]),
        ("volterra-pair", vol(&[([1, 1], [0, 1], 1.0), ([0, 1], [1, 1], -0.5)]), Structure::Iid, vec![2, 2]),
    ];
    models
        .into_iter()
        .map(|(n, model, s, ext)| (n.to_string(), ModelDescriptor { model, innovations: rad(s) }, ext))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoeffArray, VolterraCoeffs};
    use proptest::prelude::*;

    fn rad(s: Structure) -> InnovationSpec {
        InnovationSpec::new(Distribution::Rademacher, s, 0)
    }

    fn lin(d: usize, e: &[(&[i64], f64)], s: Structure) -> ModelDescriptor {
        let entries: Vec<_> = e.iter().map(|(j, a)| (LatticeIndex::from(*j), *a)).collect();
        ModelDescriptor { model: FieldModel::Linear(CoeffArray::from_entries(d, &entries).unwrap()), innovations: rad(s) }
    }

    fn vol(d: usize, e: &[(&[i64], &[i64], f64)]) -> ModelDescriptor {
        let entries: Vec<_> = e.iter().map(|(u, v, a)| (LatticeIndex::from(*u), LatticeIndex::from(*v), *a)).collect();
        ModelDescriptor {
            model: FieldModel::Volterra(VolterraCoeffs::from_entries(d, &entries).unwrap()),
            innovations: rad(Structure::Iid),
        }
    }

    /// Naive conditioning: group configurations by their cone values in a map.
    fn brute_norm(m: &ExactModel, stat_cells: &[LatticeIndex], cond: &LatticeIndex) -> f64 {
        let mut groups: BTreeMap<Vec<i64>, (f64, u64)> = BTreeMap::new();
        for c in m.configurations() {
            let xi = m.observables(c);
            let val: HashMap<&LatticeIndex, f64> = m.obs.iter().zip(&xi).map(|(s, &v)| (s, v)).collect();
            let get = |k: &LatticeIndex| val.get(k).copied().unwrap_or(0.0);
            let s: f64 = stat_cells
                .iter()
                .map(|k| match &m.model {
                    FieldModel::Linear(a) => a.entries().iter().map(|(j, a)| a * get(&k.sub(j))).sum::<f64>(),
                    FieldModel::Volterra(v) => v.entries().map(|(u, w, a)| a * get(&k.sub(u)) * get(&k.sub(w))).sum(),
                })
                .sum();
            let key: Vec<i64> =
                m.obs.iter().zip(&xi).filter(|(s, _)| (*s).le(cond)).map(|(_, &v)| (v * 1000.0).round() as i64).collect();
            let e = groups.entry(key).or_insert((0.0, 0));
            e.0 += s;
            e.1 += 1;
        }
        let total = m.n_configurations() as f64;
        groups.values().map(|&(s, c)| (c as f64 / total) * (s / c as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn site_counts() {
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0)], Structure::Iid), &[1, 1]).unwrap();
        assert_eq!(m.n_sites(), 1);
        assert_eq!(m.configurations().count(), 2);
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0)], Structure::Iid), &[2, 2]).unwrap();
        assert_eq!(m.n_sites(), 4);
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0), (&[1, 1], 1.0)], Structure::Iid), &[2, 2]).unwrap();
        // [0,2]^2 minus the corners (0,2) and (2,0).
        let mut expect = Vec::new();
        for i in 0..=2 {
            for j in 0..=2 {
                if (i, j) != (0, 2) && (i, j) != (2, 0) {
                    expect.push(LatticeIndex::from([i, j]));
                }
            }
        }
        assert_eq!(m.sites(), &expect[..]);
    }

    #[test]
    fn size_and_distribution_errors() {
        let big = lin(2, &[(&[0, 0], 1.0)], Structure::Iid);
        assert_eq!(enumerate_model(&big, &[5, 5]).unwrap_err(), OracleError::Size { n: 25 });
        let mut normal = big.clone();
        normal.innovations.distribution = Distribution::StandardNormal;
        assert!(matches!(enumerate_model(&normal, &[1, 1]), Err(OracleError::Distribution(_))));
        let mds1 = lin(1, &[(&[0], 1.0)], Structure::ColumnMds);
        assert!(matches!(enumerate_model(&mds1, &[2]), Err(OracleError::Field(_))));
    }

    #[test]
    fn cond_expectation_examples() {
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0)], Structure::Iid), &[2, 2]).unwrap();
        let ce = exact_cond_expectation(&m, &Statistic::partial_sum(&[2, 2].into()), &[0, 0].into()).unwrap();
        assert_eq!(ce.norm, 0.0);
        assert!(ce.classes.iter().all(|c| c.mean == 0.0));

        let m = enumerate_model(&lin(2, &[(&[1, 1], 1.0)], Structure::Iid), &[1, 1]).unwrap();
        let ce = exact_cond_expectation(&m, &Statistic::partial_sum(&[1, 1].into()), &[0, 0].into()).unwrap();
        assert_eq!(ce.norm, 1.0);
        assert_eq!(ce.value_given(|_| 1.0), Some(1.0));
        assert_eq!(ce.value_given(|_| -1.0), Some(-1.0));

        let desc = lin(2, &[(&[0, 0], 1.0), (&[1, 0], 0.5)], Structure::Iid);
        let m = enumerate_model(&desc, &[2, 2]).unwrap();
        let ce = exact_cond_expectation(&m, &Statistic::partial_sum(&[2, 2].into()), &[0, 0].into()).unwrap();
        let FieldModel::Linear(c) = &desc.model else { unreachable!() };
        let closed = conditions::projective_norm_linear(c, &[2, 2].into(), 1.0).unwrap().value;
        assert!((ce.norm - closed).abs() < 1e-10);
    }

    #[test]
    fn commuting_examples() {
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0), (&[1, 1], 0.5)], Structure::Iid), &[2, 2]).unwrap();
        let s = Statistic::partial_sum(&[2, 2].into());
        assert!(check_commuting(&m, &s, 2, 1, 1, 2).unwrap() <= 1e-12);
        assert_eq!(check_commuting(&m, &Statistic::Constant(3.5), 2, 1, 1, 2).unwrap(), 0.0);
        assert!(check_commuting(&m, &s, 1, 1, 1, 1).unwrap() <= 1e-12);
        assert!(check_commuting(&m, &s, 0, 1, 1, 1).is_err());
    }

    #[test]
    fn commuting_holds_for_mds() {
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0), (&[1, 1], 0.5)], Structure::ColumnMds), &[2, 2]).unwrap();
        let s = Statistic::partial_sum(&[2, 2].into());
        for (a, b, u, v) in [(2, 1, 1, 2), (1, 0, 0, 2), (2, 2, 1, 0)] {
            assert!(check_commuting(&m, &s, a, b, u, v).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn wrong_orientation_is_rejected() {
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0), (&[1, 0], 1.0)], Structure::Iid), &[2, 2]).unwrap();
        let s = Statistic::partial_sum(&[2, 2].into());
        assert!(matches!(check_commuting(&m, &s, 0, 2, 1, 0), Err(OracleError::Precondition(_))));
    }

    #[test]
    fn var_ratio_examples() {
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0)], Structure::Iid), &[2, 2]).unwrap();
        let r = exact_var_ratio(&m, &[2, 2].into()).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-14);
        // Only X_{1,1} = xi_{1,1} is F_{1,1}-measurable: every j contributes 1.
        let expect = 1.0 + 2.0 / 2f64.powf(1.5) + 1.0 / 8.0;
        assert!((r.rhs_series - expect).abs() < 1e-14);
        assert_eq!(r.status, RatioStatus::Finite);

        let zero = lin(2, &[(&[0, 0], 0.0)], Structure::Iid);
        let m = enumerate_model(&zero, &[2, 2]).unwrap();
        let r = exact_var_ratio(&m, &[2, 2].into()).unwrap();
        assert_eq!((r.lhs, r.rhs_series, r.status), (0.0, 0.0, RatioStatus::Degenerate));
    }

    #[test]
    fn per_configuration_values_average_to_mean() {
        let m = enumerate_model(&lin(2, &[(&[0, 0], 1.0), (&[1, 1], -0.5)], Structure::ColumnMds), &[2, 1]).unwrap();
        let s = Statistic::partial_sum(&[2, 1].into());
        let ce = exact_cond_expectation(&m, &s, &[1, 0].into()).unwrap();
        let vals = ce.per_configuration(&m);
        assert_eq!(vals.len() as u64, m.n_configurations());
        let avg: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((avg - ce.mean()).abs() < 1e-12);
        let norm = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((norm - ce.norm).abs() < 1e-12);
    }

    #[test]
    fn gray_code_matches_brute_force_on_large_model() {
        // 20 base sites exercises chunking; values are checked against naive grouping.
        let desc = lin(2, &[(&[0, 0], 1.0), (&[1, 0], -0.5), (&[0, 1], 0.5), (&[2, 2], 1.0)], Structure::Iid);
        let m = enumerate_model(&desc, &[3, 2]).unwrap();
        assert!(m.n_sites() >= 2 * SPLIT_SITES);
        let cells: Vec<LatticeIndex> =
            (1..=3).flat_map(|i| (1..=2).map(move |j| LatticeIndex::from([i, j]))).collect();
        let s = Statistic::partial_sum(&[3, 2].into());
        for cond in [[0, 0], [1, 1], [2, 0]] {
            let ce = exact_cond_expectation(&m, &s, &cond.into()).unwrap();
            assert!((ce.norm - brute_norm(&m, &cells, &cond.into())).abs() < 1e-12);
        }
    }

    #[test]
    fn volterra_matches_closed_form() {
        let desc = vol(2, &[(&[1, 0], &[0, 1], 1.0), (&[1, 1], &[2, 0], -0.5)]);
        let FieldModel::Volterra(v) = &desc.model else { unreachable!() };
        for j in [[1, 1], [2, 1], [2, 2]] {
            let m = enumerate_model(&desc, &j.map(|x| x as usize)).unwrap();
            let ce = exact_cond_expectation(&m, &Statistic::partial_sum(&j.into()), &[0, 0].into()).unwrap();
            let b2 = conditions::volterra_b_sq(v, &j.into()).unwrap();
            assert!((ce.norm.powi(2) - b2).abs() < 1e-10, "j = {j:?}");
        }
    }

    #[test]
    fn bundled_suite_passes() {
        let checks = verify_suite(&bundled_suite()).unwrap();
        for c in &checks {
            assert!(c.pass, "{c:?}");
        }
    }

    fn small_linear_2d() -> impl Strategy<Value = ModelDescriptor> {
        (prop::collection::vec((0i64..3, 0i64..3, prop::sample::select(vec![-1.0, -0.5, 0.5, 1.0])), 1..4), any::<bool>())
            .prop_map(|(e, mds)| {
                let s = if mds { Structure::ColumnMds } else { Structure::Iid };
                let entries: Vec<(LatticeIndex, f64)> = e.iter().map(|&(i, j, a)| (LatticeIndex::from([i, j]), a)).collect();
                ModelDescriptor {
                    model: FieldModel::Linear(CoeffArray::from_entries(2, &entries).unwrap()),
                    innovations: rad(s),
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tower_and_total_expectation(desc in small_linear_2d(),
                                      a in (0i64..3, 0i64..3), u in (-1i64..3, -1i64..3)) {
            let Ok(m) = enumerate_model(&desc, &[2, 2]) else { return Ok(()); };
            prop_assume!(m.n_sites() <= 16);
            let s = Statistic::partial_sum(&[2, 2].into());
            let a = LatticeIndex::from([a.0, a.1]);
            let u = LatticeIndex::from([u.0.min(a.coords()[0]), u.1.min(a.coords()[1])]);
            prop_assert!(tower_deviation(&m, &s, &a, &u).unwrap() <= 1e-12);
            let ce = exact_cond_expectation(&m, &s, &u).unwrap();
            prop_assert!(ce.mean().abs() <= 1e-12);
        }

        #[test]
        fn linear_norm_matches_closed_form(desc in small_linear_2d(), u in (1usize..3, 1usize..3)) {
            let Ok(m) = enumerate_model(&desc, &[u.0, u.1]) else { return Ok(()); };
            prop_assume!(m.n_sites() <= 16);
            let n = LatticeIndex::from([u.0 as i64, u.1 as i64]);
            let ce = exact_cond_expectation(&m, &Statistic::partial_sum(&n), &[0, 0].into()).unwrap();
            let FieldModel::Linear(c) = &desc.model else { unreachable!() };
            // Column-MDS innovations are uncorrelated with unit variance as well.
            let closed = conditions::linear_b(c, &n).unwrap();
            prop_assert!((ce.norm - closed).abs() <= 1e-10);
        }
    }
}
