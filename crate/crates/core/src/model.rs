//! Linear and Volterra field models and their JSON descriptors.

use crate::innovations::InnovationSpec;
use crate::lattice::{self, LatticeIndex};
use crate::FieldError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Finitely supported coefficients `a_j`, `0 <= j < support_extent`, of a
/// linear field `X_k = sum_j a_j xi_{k-j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffArray {
    support_extent: Vec<usize>,
    a: Vec<f64>,
}

impl CoeffArray {
    /// Dense coefficients on `[0, support_extent)`, row-major.
    pub fn new(support_extent: Vec<usize>, a: Vec<f64>) -> Result<Self, FieldError> {
        lattice::check_dim(support_extent.len())?;
        if support_extent.iter().any(|&e| e == 0) {
            return Err(FieldError::Model("coefficient support extent must be >= 1 on every axis".into()));
        }
        if a.len() != support_extent.iter().product::<usize>() {
            return Err(FieldError::Model(format!(
                "support {support_extent:?} needs {} coefficients, got {}",
                support_extent.iter().product::<usize>(),
                a.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::Model("non-finite coefficient".into()));
        }
        Ok(Self { support_extent, a })
    }

    /// Builds the smallest dense support holding the given entries.
    pub fn from_entries(dim: usize, entries: &[(LatticeIndex, f64)]) -> Result<Self, FieldError> {
        lattice::check_dim(dim)?;
        let mut ext = vec![1usize; dim];
        for (j, _) in entries {
            if j.dim() != dim || j.coords().iter().any(|&c| c < 0) {
                return Err(FieldError::Model(format!("coefficient index {j} invalid for d = {dim}")));
            }
            for (e, &c) in ext.iter_mut().zip(j.coords()) {
                *e = (*e).max(c as usize + 1);
            }
        }
        let st = lattice::strides(&ext);
        let mut a = vec![0.0; ext.iter().product()];
        for (j, v) in entries {
            let off: usize = j.coords().iter().zip(&st).map(|(&c, s)| c as usize * s).sum();
            a[off] += v;
        }
        Self::new(ext, a)
    }

    pub fn zero(dim: usize) -> Self {
        Self { support_extent: vec![1; dim], a: vec![0.0] }
    }

    /// `a_0 = 1` only: `X = xi`.
    pub fn identity(dim: usize) -> Self {
        Self { support_extent: vec![1; dim], a: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.support_extent.len()
    }

    pub fn support_extent(&self) -> &[usize] {
        &self.support_extent
    }

    pub fn values(&self) -> &[f64] {
        &self.a
    }

    pub fn get(&self, j: &[i64]) -> f64 {
        if j.len() != self.dim() || j.iter().zip(&self.support_extent).any(|(&c, &e)| c < 0 || c as usize >= e) {
            return 0.0;
        }
        let st = lattice::strides(&self.support_extent);
        self.a[j.iter().zip(&st).map(|(&c, s)| c as usize * s).sum::<usize>()]
    }

    pub fn sum_sq(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.a.iter().sum()
    }

    /// Nonzero entries as `(index, value)` in row-major order.
    pub fn entries(&self) -> Vec<(LatticeIndex, f64)> {
        let mut out = Vec::new();
        let mut k = 0;
        lattice::for_each_offset(&self.support_extent, |idx| {
            let v = self.a[k];
            k += 1;
            if v != 0.0 {
                out.push((LatticeIndex::new(idx.iter().map(|&i| i as i64).collect()).unwrap(), v));
            }
        });
        out
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }

    /// Dense coefficients of a [`CoeffFamily`] on `[0, radius]^d`.
    pub fn from_family(family: &dyn CoeffFamily, radius: usize) -> Result<Self, FieldError> {
        let d = family.dim();
        let ext = vec![radius + 1; d];
        let mut a = Vec::with_capacity(ext.iter().product());
        let mut j = vec![0i64; d];
        lattice::for_each_offset(&ext, |idx| {
            for (c, &i) in j.iter_mut().zip(idx) {
                *c = i as i64;
            }
            a.push(family.coeff(&j));
        });
        Self::new(ext, a)
    }
}

/// A coefficient generator `j -> a_j` on `j >= 0`, possibly infinitely supported.
pub trait CoeffFamily: Sync {
    fn dim(&self) -> usize;
    fn coeff(&self, j: &[i64]) -> f64;
}

/// `a_u = prod_i (-1)^{u_i} / (sqrt(u_i) log u_i)`.
///
/// `log 1 = 0`, so the product is only defined for `u_i >= 2`; coefficients
/// with some `u_i < 2` are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlternatingFamily {
    pub dim: usize,
}

impl CoeffFamily for AlternatingFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn coeff(&self, j: &[i64]) -> f64 {
        j.iter()
            .map(|&u| {
                if u < 2 {
                    0.0
                } else {
                    let x = u as f64;
                    let sign = if u % 2 == 0 { 1.0 } else { -1.0 };
                    sign / (x.sqrt() * x.ln())
                }
            })
            .product()
    }
}

impl CoeffFamily for CoeffArray {
    fn dim(&self) -> usize {
        CoeffArray::dim(self)
    }

    fn coeff(&self, j: &[i64]) -> f64 {
        self.get(j)
    }
}

/// Sparse `(u, v) -> a_{u,v}` with zero diagonal for
/// `X_k = sum a_{u,v} xi_{k-u} xi_{k-v}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VolterraCoeffs {
    dim: usize,
    entries: BTreeMap<(LatticeIndex, LatticeIndex), f64>,
}

impl VolterraCoeffs {
    pub fn new(dim: usize) -> Result<Self, FieldError> {
        lattice::check_dim(dim)?;
        Ok(Self { dim, entries: BTreeMap::new() })
    }

    pub fn from_entries(dim: usize, entries: &[(LatticeIndex, LatticeIndex, f64)]) -> Result<Self, FieldError> {
        let mut v = Self::new(dim)?;
        for (u, w, a) in entries {
            v.insert(u.clone(), w.clone(), *a)?;
        }
        Ok(v)
    }

    /// Adds `a` to the coefficient of `(u, v)`.
    pub fn insert(&mut self, u: LatticeIndex, v: LatticeIndex, a: f64) -> Result<(), FieldError> {
        for idx in [&u, &v] {
            if idx.dim() != self.dim || idx.coords().iter().any(|&c| c < 0) {
                return Err(FieldError::Model(format!("Volterra index {idx} invalid for d = {}", self.dim)));
            }
        }
        if !a.is_finite() {
            return Err(FieldError::Model("non-finite Volterra coefficient".into()));
        }
        if u == v {
            if a != 0.0 {
                return Err(FieldError::Model(format!("diagonal Volterra coefficient a_{{{u},{v}}} = {a} must be zero")));
            }
            return Ok(());
        }
        *self.entries.entry((u, v)).or_insert(0.0) += a;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(|&a| a == 0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LatticeIndex, &LatticeIndex, f64)> {
        self.entries.iter().filter(|(_, &a)| a != 0.0).map(|((u, v), &a)| (u, v, a))
    }

    pub fn get(&self, u: &LatticeIndex, v: &LatticeIndex) -> f64 {
        self.entries.get(&(u.clone(), v.clone())).copied().unwrap_or(0.0)
    }

    pub fn sum_sq(&self) -> f64 {
        self.entries().map(|(_, _, a)| a * a).sum()
    }

    /// Componentwise max of all indices (the pad the model needs).
    pub fn max_lag(&self) -> Vec<usize> {
        let mut m = vec![0usize; self.dim];
        for (u, v, _) in self.entries() {
            for idx in [u, v] {
                for (x, &c) in m.iter_mut().zip(idx.coords()) {
                    *x = (*x).max(c as usize);
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldModel {
    Linear(CoeffArray),
    Volterra(VolterraCoeffs),
}

impl FieldModel {
    pub fn dim(&self) -> usize {
        match self {
            FieldModel::Linear(c) => c.dim(),
            FieldModel::Volterra(v) => v.dim(),
        }
    }

    /// Pad below the window needed to materialize every innovation used.
    pub fn required_pad(&self) -> Vec<usize> {
        match self {
            FieldModel::Linear(c) => c.support_extent().iter().map(|e| e - 1).collect(),
            FieldModel::Volterra(v) => v.max_lag(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FieldModel::Linear(_) => "linear",
            FieldModel::Volterra(_) => "volterra",
        }
    }

    /// `lim E(S_n^2)/|n|` for innovations of variance `sigma_sq`.
    ///
    /// Linear: `sigma^2 (sum a)^2`. Volterra: `sigma^4 sum_{delta != 0}
    /// A(delta) (A(delta) + A(-delta))` with `A(delta) = sum_{u - v = delta} a_{u,v}`.
    pub fn long_run_variance(&self, sigma_sq: f64) -> f64 {
        match self {
            FieldModel::Linear(c) => sigma_sq * c.sum().powi(2),
            FieldModel::Volterra(v) => {
                let mut by_lag: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
                for (u, w, a) in v.entries() {
                    *by_lag.entry(u.sub(w).coords().to_vec()).or_insert(0.0) += a;
                }
                let mut total = 0.0;
                for (delta, &a) in &by_lag {
                    let neg: Vec<i64> = delta.iter().map(|x| -x).collect();
                    total += a * (a + by_lag.get(&neg).copied().unwrap_or(0.0));
                }
                sigma_sq * sigma_sq * total
            }
        }
    }
}

/// A model together with the innovations that drive it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescriptor {
    pub model: FieldModel,
    pub innovations: InnovationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Linear,
    Volterra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffEntryJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<i64>>,
    value: f64,
}

/// Built-in coefficient generators selectable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorJson {
    /// The alternating family on `[0, radius]^d`.
    Alternating { radius: usize },
}

/// Wire form of [`ModelDescriptor`]:
/// `{"kind", "dim", "coeffs": [{"index", "value"}], "innovations": {...}}`.
/// Volterra entries use `{"u": [...], "v": [...], "value"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    kind: Kind,
    dim: usize,
    #[serde(default)]
    coeffs: Vec<CoeffEntryJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorJson>,
    innovations: InnovationSpec,
}

impl TryFrom<ModelJson> for ModelDescriptor {
    type Error = FieldError;

    fn try_from(j: ModelJson) -> Result<Self, FieldError> {
        lattice::check_dim(j.dim)?;
        let idx = |c: Option<Vec<i64>>, what: &str| -> Result<LatticeIndex, FieldError> {
            let c = c.ok_or_else(|| FieldError::Model(format!("coefficient entry is missing `{what}`")))?;
            if c.len() != j.dim {
                return Err(FieldError::Model(format!("`{what}` has {} coordinates, dim is {}", c.len(), j.dim)));
            }
            Ok(LatticeIndex::new(c)?)
        };
        let model = match j.kind {
            Kind::Linear => {
                let coeffs = match (&j.generator, j.coeffs.is_empty()) {
                    (Some(_), false) => {
                        return Err(FieldError::Model("give either `coeffs` or `generator`, not both".into()))
                    }
                    (Some(GeneratorJson::Alternating { radius }), true) => {
                        CoeffArray::from_family(&AlternatingFamily { dim: j.dim }, *radius)?
                    }
                    (None, _) => {
                        let mut entries = Vec::with_capacity(j.coeffs.len());
                        for e in j.coeffs {
                            if e.u.is_some() || e.v.is_some() {
                                return Err(FieldError::Model("linear coefficients use `index`, not `u`/`v`".into()));
                            }
                            entries.push((idx(e.index, "index")?, e.value));
                        }
                        if entries.is_empty() {
                            CoeffArray::zero(j.dim)
                        } else {
                            CoeffArray::from_entries(j.dim, &entries)?
                        }
                    }
                };
                FieldModel::Linear(coeffs)
            }
            Kind::Volterra => {
                if j.generator.is_some() {
                    return Err(FieldError::Model("generators are only defined for linear models".into()));
                }
                let mut v = VolterraCoeffs::new(j.dim)?;
                for e in j.coeffs {
                    if e.index.is_some() {
                        return Err(FieldError::Model("Volterra coefficients use `u` and `v`, not `index`".into()));
                    }
                    v.insert(idx(e.u, "u")?, idx(e.v, "v")?, e.value)?;
                }
                FieldModel::Volterra(v)
            }
        };
        Ok(ModelDescriptor { model, innovations: j.innovations })
    }
}

impl From<&ModelDescriptor> for ModelJson {
    fn from(m: &ModelDescriptor) -> Self {
        let (kind, coeffs) = match &m.model {
            FieldModel::Linear(c) => (
                Kind::Linear,
                c.entries()
                    .into_iter()
                    .map(|(j, value)| CoeffEntryJson { index: Some(j.coords().to_vec()), u: None, v: None, value })
                    .collect(),
            ),
            FieldModel::Volterra(v) => (
                Kind::Volterra,
                v.entries()
                    .map(|(u, w, value)| CoeffEntryJson {
                        index: None,
                        u: Some(u.coords().to_vec()),
                        v: Some(w.coords().to_vec()),
                        value,
                    })
                    .collect(),
            ),
        };
        ModelJson { kind, dim: m.model.dim(), coeffs, generator: None, innovations: m.innovations }
    }
}

impl Serialize for ModelDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ModelJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = ModelJson::deserialize(d)?;
        ModelDescriptor::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::{Distribution, Structure};

    #[test]
    fn diagonal_rejected() {
        let mut v = VolterraCoeffs::new(1).unwrap();
        assert!(matches!(v.insert([1].into(), [1].into(), 0.5), Err(FieldError::Model(_))));
        v.insert([1].into(), [1].into(), 0.0).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn coeff_from_entries() {
        let c = CoeffArray::from_entries(2, &[([0, 1].into(), 0.5), ([2, 0].into(), -1.0)]).unwrap();
        assert_eq!(c.support_extent(), &[3, 2]);
        assert_eq!(c.get(&[0, 1]), 0.5);
        assert_eq!(c.get(&[2, 0]), -1.0);
        assert_eq!(c.get(&[5, 0]), 0.0);
        assert_eq!(c.sum_sq(), 1.25);
        assert_eq!(c.entries().len(), 2);
    }

    #[test]
    fn alternating_coefficients() {
        let f = AlternatingFamily { dim: 2 };
        assert_eq!(f.coeff(&[1, 3]), 0.0);
        let want = 1.0 / (2f64.sqrt() * 2f64.ln()) * -1.0 / (3f64.sqrt() * 3f64.ln());
        assert!((f.coeff(&[2, 3]) - want).abs() < 1e-15);
    }

    #[test]
    fn long_run_variances() {
        let ma = FieldModel::Linear(CoeffArray::from_entries(2, &[([0, 0].into(), 0.5), ([0, 1].into(), 0.5)]).unwrap());
        assert_eq!(ma.long_run_variance(1.0), 1.0);
        let v = FieldModel::Volterra(VolterraCoeffs::from_entries(2, &[([0, 0].into(), [0, 1].into(), 1.0)]).unwrap());
        assert_eq!(v.long_run_variance(1.0), 1.0);
        // a_{0,1} = a_{1,0} = 1: X = 2 xi_k xi_{k-1}, variance 4, no autocorrelation.
        let sym = FieldModel::Volterra(
            VolterraCoeffs::from_entries(1, &[([0].into(), [1].into(), 1.0), ([1].into(), [0].into(), 1.0)]).unwrap(),
        );
        assert_eq!(sym.long_run_variance(1.0), 4.0);
    }

    #[test]
    fn json_roundtrip_and_shape() {
        let text = r#"{"kind":"linear","dim":2,
            "coeffs":[{"index":[0,0],"value":0.5},{"index":[0,1],"value":0.5}],
            "innovations":{"dist":"standard-normal","structure":"iid","seed":42}}"#;
        let m: ModelDescriptor = serde_json::from_str(text).unwrap();
        assert_eq!(m.innovations, InnovationSpec::new(Distribution::StandardNormal, Structure::Iid, 42));
        let back: ModelDescriptor = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);

        let v = r#"{"kind":"volterra","dim":1,"coeffs":[{"u":[0],"v":[1],"value":1.0}],
            "innovations":{"dist":"rademacher","structure":"iid","seed":1}}"#;
        let m: ModelDescriptor = serde_json::from_str(v).unwrap();
        assert!(matches!(m.model, FieldModel::Volterra(_)));
        let back: ModelDescriptor = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn json_rejects_bad_models() {
        let diag = r#"{"kind":"volterra","dim":1,"coeffs":[{"u":[1],"v":[1],"value":1.0}],
            "innovations":{"dist":"rademacher","structure":"iid","seed":1}}"#;
        assert!(serde_json::from_str::<ModelDescriptor>(diag).is_err());
        let wrong_dim = r#"{"kind":"linear","dim":2,"coeffs":[{"index":[1],"value":1.0}],
            "innovations":{"dist":"rademacher","structure":"iid","seed":1}}"#;
        assert!(serde_json::from_str::<ModelDescriptor>(wrong_dim).is_err());
        let gen = r#"{"kind":"linear","dim":2,"generator":{"name":"alternating","radius":5},
            "innovations":{"dist":"rademacher","structure":"iid","seed":1}}"#;
        let m: ModelDescriptor = serde_json::from_str(gen).unwrap();
        match m.model {
            FieldModel::Linear(c) => assert_eq!(c.support_extent(), &[6, 6]),
            _ => unreachable!(),
        }
    }
}
