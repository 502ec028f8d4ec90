//! Experiment configuration and the Monte Carlo and exact drivers behind
//! the `rfclt` subcommands.

use crate::conditions::{self, AbsSumScan, MWReport, Verdict};
use crate::innovations::{gen_innovations, InnovationSpec};
use crate::lattice::{prefix_sums, LatticeIndex};
use crate::mart::{self, McLeishReport, ResidualScan, SigmaEllScan};
use crate::model::{CoeffArray, FieldModel, ModelDescriptor};
use crate::simulate::simulate_with;
use crate::stats::{ks_critical_1pct, ks_normal, mean_se, pairwise_sum, zeta_tail};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    #[default]
    Ks,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default)]
    pub kind: TestKind,
    /// KS rejection threshold; `1.63 / sqrt(R)` when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_max_threshold() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartConfig {
    /// Lines summed into each `D`.
    pub n1: usize,
    /// Blocks per line.
    pub k: usize,
    /// Upper bound for the mean of `max_i D_i^2 / k`.
    #[serde(default = "default_max_threshold")]
    pub max_threshold: f64,
    /// Line counts for the `sigma_ell` estimate; `[n1]` when absent.
    #[serde(default)]
    pub n1_grid: Option<Vec<usize>>,
    /// Blocking-axis length of the residual scan; `k * max(ells)` when absent.
    #[serde(default)]
    pub residual_n2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsConfig {
    pub j_max: Vec<i64>,
    #[serde(default)]
    pub radii: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelDescriptor,
    #[serde(default)]
    pub extents: Vec<Vec<usize>>,
    pub replications: usize,
    /// Overrides the model's innovation seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub ells: Vec<usize>,
    #[serde(default)]
    pub test: TestConfig,
    #[serde(default)]
    pub mart: Option<MartConfig>,
    #[serde(default)]
    pub conditions: Option<ConditionsConfig>,
    /// `n` grid for the one-dimensional implied-constant scan.
    #[serde(default)]
    pub implied_constant_grid: Vec<u64>,
    /// Population value of `lim E(S_n^2)/|n|` to test against, if known.
    #[serde(default)]
    pub expected_variance: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.model.model.dim();
        if self.replications == 0 {
            return Err(Error::Parameter("replications must be >= 1".into()));
        }
        for (i, e) in self.extents.iter().enumerate() {
            if e.len() != d {
                return Err(Error::Parameter(format!("extents[{i}] has {} axes, the model has {d}", e.len())));
            }
            if e.iter().any(|&x| x == 0) {
                return Err(Error::Parameter(format!("extents[{i}] = {e:?} must be >= 1 on every axis")));
            }
        }
        let sizes: Vec<usize> = self.extents.iter().map(|e| e.iter().product()).collect();
        if sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Parameter("extents must be sorted by |n|".into()));
        }
        if self.ells.iter().any(|&l| l == 0) {
            return Err(Error::Parameter("ells must be >= 1".into()));
        }
        if let Some(t) = self.test.threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Parameter(format!("test.threshold = {t} must be in (0, 1]")));
            }
        }
        Ok(())
    }

    /// Command-line seed, then the config seed, then the model's own.
    pub fn effective_seed(&self, cli: Option<u64>) -> u64 {
        cli.or(self.seed).unwrap_or(self.model.innovations.seed)
    }

    fn need_extents(&self) -> Result<()> {
        if self.extents.is_empty() {
            return Err(Error::Parameter("this experiment needs at least one extent".into()));
        }
        Ok(())
    }
}

fn spec_for(desc: &ModelDescriptor, seed: u64, r: u64) -> InnovationSpec {
    InnovationSpec { seed, ..desc.innovations }.for_replication(r)
}

/// `S_n` over nested windows `[1, n]` of one field realization.
fn nested_sums(desc: &ModelDescriptor, extents: &[Vec<usize>], spec: &InnovationSpec) -> Result<Vec<f64>> {
    let d = desc.model.dim();
    let big: Vec<usize> = (0..d).map(|a| extents.iter().map(|e| e[a]).max().unwrap_or(1)).collect();
    let xi = gen_innovations(spec, &big, &desc.model.required_pad())?;
    let f = simulate_with(&desc.model, &big, &xi)?;
    let p = prefix_sums(&f.window)?;
    extents
        .iter()
        .map(|e| {
            let hi = LatticeIndex::from(&e.iter().map(|&x| x as i64).collect::<Vec<_>>()[..]);
            Ok(p.rect_sum(&LatticeIndex::ones(d), &hi)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub extent: Vec<usize>,
    /// Mean of `S_n^2 / |n|`.
    pub variance: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceScan {
    pub rows: Vec<VarianceRow>,
    pub replications: usize,
    /// Last row minus the one before it.
    pub last_diff: Option<f64>,
    pub last_diff_pooled_se: Option<f64>,
    /// `|last_diff| <= 3` pooled standard errors.
    pub converged: Option<bool>,
}

impl VarianceScan {
    /// Each row is no farther from `target` than its predecessor, up to `z`
    /// pooled standard errors.
    pub fn monotone_toward(&self, target: f64, z: f64) -> bool {
        self.rows.windows(2).all(|w| {
            (w[1].variance - target).abs() <= (w[0].variance - target).abs() + z * w[0].se.hypot(w[1].se)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("extent,variance,se\n");
        for r in &self.rows {
            let e: Vec<String> = r.extent.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{},{:e},{:e}", e.join("x"), r.variance, r.se);
        }
        s
    }
}

/// `E(S_n^2)/|n|` over the extent grid. Every replication simulates one
/// field and reads all extents as nested windows of it.
pub fn variance_scan(cfg: &ExperimentConfig, seed: u64) -> Result<VarianceScan> {
    cfg.validate()?;
    cfg.need_extents()?;
    let desc = &cfg.model;
    let per_rep: Vec<Vec<f64>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| nested_sums(desc, &cfg.extents, &spec_for(desc, seed, r)))
        .collect::<Result<_>>()?;
    let rows: Vec<VarianceRow> = cfg
        .extents
        .iter()
        .enumerate()
        .map(|(g, e)| {
            let n: usize = e.iter().product();
            let v: Vec<f64> = per_rep.iter().map(|s| s[g] * s[g] / n as f64).collect();
            let (m, se) = mean_se(&v);
            VarianceRow { extent: e.clone(), variance: m, se: if se.is_nan() { 0.0 } else { se } }
        })
        .collect();
    let (last_diff, pooled, converged) = match rows.len() {
        0 | 1 => (None, None, None),
        n => {
            let (a, b) = (&rows[n - 2], &rows[n - 1]);
            let diff = b.variance - a.variance;
            let pooled = a.se.hypot(b.se);
            (Some(diff), Some(pooled), Some(diff.abs() <= 3.0 * pooled))
        }
    };
    Ok(VarianceScan { rows, replications: cfg.replications, last_diff, last_diff_pooled_se: pooled, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub extent: Vec<usize>,
    /// Non-square extents probe the min-of-extents regime and are not CLT checks.
    pub diagnostic_only: bool,
    pub mean: f64,
    /// Mean of the squared standardized sums.
    pub c_sq_hat: f64,
    pub c_sq_se: f64,
    pub ks_statistic: Option<f64>,
    pub threshold: f64,
    pub degenerate: bool,
    pub pass: Option<bool>,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub rows: Vec<CltRow>,
    pub replications: usize,
}

impl CltReport {
    /// `false` if any KS test on a square extent failed.
    pub fn pass(&self) -> bool {
        self.rows.iter().filter(|r| !r.diagnostic_only).all(|r| r.pass != Some(false))
    }

    pub fn samples_csv(&self) -> String {
        let mut s = String::from("extent,replication,standardized_sum\n");
        for row in &self.rows {
            let e: Vec<String> = row.extent.iter().map(|x| x.to_string()).collect();
            for (r, v) in row.samples.iter().enumerate() {
                let _ = writeln!(s, "{},{r},{v:e}", e.join("x"));
            }
        }
        s
    }
}

/// Minimum replications for the distributional test.
pub const MIN_CLT_REPLICATIONS: usize = 500;

/// KS test of `S_n / sqrt(|n|)` against `N(0, c_sq_hat)` for each extent.
pub fn clt_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<CltReport> {
    cfg.validate()?;
    cfg.need_extents()?;
    if cfg.replications < MIN_CLT_REPLICATIONS {
        return Err(Error::Parameter(format!(
            "the KS test needs at least {MIN_CLT_REPLICATIONS} replications, got {}",
            cfg.replications
        )));
    }
    let desc = &cfg.model;
    let per_rep: Vec<Vec<f64>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| nested_sums(desc, &cfg.extents, &spec_for(desc, seed, r)))
        .collect::<Result<_>>()?;
    let threshold = cfg.test.threshold.unwrap_or_else(|| ks_critical_1pct(cfg.replications));
    let rows = cfg
        .extents
        .iter()
        .enumerate()
        .map(|(g, e)| {
            let n: usize = e.iter().product();
            let z: Vec<f64> = per_rep.iter().map(|s| s[g] / (n as f64).sqrt()).collect();
            let sq: Vec<f64> = z.iter().map(|x| x * x).collect();
            let (c_sq_hat, c_sq_se) = mean_se(&sq);
            let degenerate = !(c_sq_hat > 0.0);
            let ks = (!degenerate).then(|| ks_normal(&z, c_sq_hat));
            CltRow {
                extent: e.clone(),
                diagnostic_only: e.windows(2).any(|w| w[0] != w[1]),
                mean: pairwise_sum(&z) / z.len() as f64,
                c_sq_hat,
                c_sq_se,
                ks_statistic: ks,
                threshold,
                degenerate,
                pass: ks.map(|k| k < threshold),
                samples: z,
            }
        })
        .collect();
    Ok(CltReport { rows, replications: cfg.replications })
}

/// Condition series of a model, plus the absolute-sum scan when radii are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub mw: MWReport,
    pub mw_x: MWReport,
    pub abs_sum: Option<AbsSumScan>,
}

impl ConditionsReport {
    pub fn pass(&self) -> bool {
        self.mw.verdict != Verdict::Inconclusive && self.mw_x.verdict != Verdict::Inconclusive
    }
}

pub fn check_conditions(cfg: &ExperimentConfig) -> Result<ConditionsReport> {
    cfg.validate()?;
    let cc = cfg
        .conditions
        .as_ref()
        .ok_or_else(|| Error::Parameter("check-conditions needs a `conditions` section".into()))?;
    let j_max = LatticeIndex::new(cc.j_max.clone())?;
    let mw = conditions::mw_series_for(&cfg.model.model, &j_max)?;
    let mw_x = conditions::mw_x_series(&cfg.model, &j_max)?;
    let abs_sum = match (&cfg.model.model, cc.radii.is_empty()) {
        (_, true) => None,
        (FieldModel::Linear(c), false) => Some(conditions::abs_sum_scan(c, &cc.radii)?),
        (FieldModel::Volterra(_), false) => {
            return Err(Error::Parameter("the absolute-sum scan is defined for linear models only".into()))
        }
    };
    Ok(ConditionsReport { mw, mw_x, abs_sum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartReport {
    pub mcleish: Vec<McLeishReport>,
    pub sigma_ell: SigmaEllScan,
    pub sigma_ell_nonincreasing: bool,
    pub residual: ResidualScan,
    pub max_threshold: f64,
    pub pass: bool,
}

/// McLeish diagnostics per `ell`, the `sigma_ell` Cauchy scan and the
/// approximation residual.
pub fn mart_decompose(cfg: &ExperimentConfig, seed: u64) -> Result<MartReport> {
    cfg.validate()?;
    let mc = cfg.mart.as_ref().ok_or_else(|| Error::Parameter("mart-decompose needs a `mart` section".into()))?;
    let ells = if cfg.ells.is_empty() { vec![1] } else { cfg.ells.clone() };
    let mcleish = ells
        .iter()
        .map(|&ell| mart::mcleish_diagnostics(&cfg.model, ell, mc.n1, mc.k, cfg.replications, seed))
        .collect::<Result<Vec<_>>>()?;
    let lines = mc.n1_grid.as_ref().and_then(|g| g.last().copied()).unwrap_or(mc.n1);
    let sigma_ell = mart::sigma_ell_scan(&cfg.model, &ells, lines, cfg.replications, seed)?;
    let nonincreasing = sigma_ell.nonincreasing_from(2, 2.0);
    let n2 = mc.residual_n2.unwrap_or(mc.k * ells.iter().max().copied().unwrap_or(1));
    let residual = mart::residual_scan(&cfg.model, mc.n1, n2, &ells, cfg.replications, seed)?;
    let pass = mcleish.iter().all(|r| r.max_over_sqrt_n < mc.max_threshold) && nonincreasing;
    Ok(MartReport { mcleish, sigma_ell, sigma_ell_nonincreasing: nonincreasing, residual, max_threshold: mc.max_threshold, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpliedConstantStatus {
    Finite,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedConstantRow {
    pub n: u64,
    /// `||S_n|| / sqrt(n)`.
    pub lhs: f64,
    pub implied_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedConstantScan {
    /// `sum_{k >= 1} k^{-3/2} ||E(S_k | F_1)||`, including the exact tail.
    pub rhs_series: f64,
    pub rows: Vec<ImpliedConstantRow>,
    pub max_implied_constant: Option<f64>,
    pub status: ImpliedConstantStatus,
}

/// `||S_n||^2 = sigma^2 sum_m (sum_{k=1}^n a_{k-m})^2` for a 1-D linear model.
pub fn linear_sn_norm_sq(c: &CoeffArray, n: u64, sigma_sq: f64) -> f64 {
    let e = c.support_extent()[0] as i64;
    let n = n as i64;
    // m ranges over 1 - (e - 1) ..= n; the inner sum is a window of the coefficients.
    let total: f64 = (1 - (e - 1)..=n)
        .map(|m| {
            let lo = (1 - m).max(0);
            let hi = (n - m).min(e - 1);
            let s: f64 = (lo..=hi).map(|j| c.get(&[j])).sum();
            s * s
        })
        .sum();
    sigma_sq * total
}

/// `||E(S_k | F_1)||^2 = sigma^2 sum_{m <= 1} (sum_{i=1}^k a_{i-m})^2`.
pub fn linear_proj_f1_sq(c: &CoeffArray, k: u64, sigma_sq: f64) -> f64 {
    let e = c.support_extent()[0] as i64;
    let k = k as i64;
    let total: f64 = (2 - e..=1)
        .map(|m| {
            let lo = (1 - m).max(0);
            let hi = (k - m).min(e - 1);
            let s: f64 = (lo..=hi).map(|j| c.get(&[j])).sum();
            s * s
        })
        .sum();
    sigma_sq * total
}

/// Implied constants `||S_n|| / (sqrt(n) rhs)` of the one-dimensional
/// maximal inequality, both sides exact.
pub fn implied_constant_scan(desc: &ModelDescriptor, ns: &[u64]) -> Result<ImpliedConstantScan> {
    let FieldModel::Linear(c) = &desc.model else {
        return Err(Error::Parameter("the implied-constant scan needs a linear model".into()));
    };
    if c.dim() != 1 {
        return Err(Error::Parameter(format!("the implied-constant scan needs d = 1, got d = {}", c.dim())));
    }
    if ns.iter().any(|&n| n == 0) {
        return Err(Error::Parameter("n must be >= 1".into()));
    }
    let sigma_sq = desc.innovations.variance();
    // ||E(S_k | F_1)|| is constant for k >= e, where the window covers the support.
    let sat = c.support_extent()[0] as u64;
    let head: f64 = (1..=sat).map(|k| linear_proj_f1_sq(c, k, sigma_sq).sqrt() / (k as f64).powf(1.5)).sum();
    let rhs = head + linear_proj_f1_sq(c, sat, sigma_sq).sqrt() * zeta_tail(1.5, sat);
    let degenerate = rhs <= 1e-300;
    let rows: Vec<ImpliedConstantRow> = ns
        .iter()
        .map(|&n| {
            let lhs = (linear_sn_norm_sq(c, n, sigma_sq) / n as f64).sqrt();
            ImpliedConstantRow { n, lhs, implied_constant: (!degenerate).then(|| lhs / rhs) }
        })
        .collect();
    let max = rows.iter().filter_map(|r| r.implied_constant).fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    Ok(ImpliedConstantScan {
        rhs_series: rhs,
        rows,
        max_implied_constant: max,
        status: if degenerate { ImpliedConstantStatus::Degenerate } else { ImpliedConstantStatus::Finite },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::{Distribution, Structure};
    use crate::oracle;

    fn lin(d: usize, e: &[(&[i64], f64)], spec: InnovationSpec) -> ModelDescriptor {
        let entries: Vec<_> = e.iter().map(|(j, a)| (LatticeIndex::from(*j), *a)).collect();
        ModelDescriptor { model: FieldModel::Linear(CoeffArray::from_entries(d, &entries).unwrap()), innovations: spec }
    }

    fn cfg(model: ModelDescriptor, extents: &[&[usize]], r: usize) -> ExperimentConfig {
        ExperimentConfig {
            model,
            extents: extents.iter().map(|e| e.to_vec()).collect(),
            replications: r,
            seed: None,
            ells: vec![],
            test: TestConfig::default(),
            mart: None,
            conditions: None,
            implied_constant_grid: vec![],
            expected_variance: None,
        }
    }

    fn normal(seed: u64) -> InnovationSpec {
        InnovationSpec::iid(Distribution::StandardNormal, seed)
    }

    #[test]
    fn iid_variance_is_one() {
        let c = cfg(lin(2, &[(&[0, 0], 1.0)], normal(4)), &[&[4, 4], &[8, 8], &[16, 16]], 400);
        let v = variance_scan(&c, 4).unwrap();
        for row in &v.rows {
            assert!((row.variance - 1.0).abs() <= 3.0 * row.se, "{row:?}");
        }
        let zero = cfg(lin(2, &[(&[0, 0], 0.0)], normal(4)), &[&[4, 4], &[8, 8]], 10);
        assert!(variance_scan(&zero, 1).unwrap().rows.iter().all(|r| r.variance == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(lin(2, &[(&[0, 0], 1.0)], normal(4)), &[&[8, 8], &[4, 4]], 10);
        assert!(c.validate().is_err());
        c.extents = vec![vec![4, 0]];
        assert!(c.validate().is_err());
        c.extents = vec![vec![4]];
        assert!(c.validate().is_err());
        c.extents = vec![vec![4, 4]];
        c.replications = 0;
        assert!(c.validate().is_err());
        c.replications = 10;
        assert!(clt_experiment(&c, 0).is_err());
        assert_eq!(c.effective_seed(None), 4);
        c.seed = Some(9);
        assert_eq!((c.effective_seed(None), c.effective_seed(Some(1))), (9, 1));
    }

    #[test]
    fn config_json_roundtrip() {
        let text = r#"{
            "model": {"kind": "linear", "dim": 2,
                      "coeffs": [{"index": [0, 0], "value": 0.5}, {"index": [0, 1], "value": 0.5}],
                      "innovations": {"dist": "standard-normal", "structure": "iid", "seed": 1}},
            "extents": [[16, 16], [32, 32]],
            "replications": 50,
            "test": {"kind": "ks"}
        }"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.extents.len(), 2);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<ExperimentConfig>(&text.replace("50", "-5")).is_err());
    }

    #[test]
    fn normal_clt_passes() {
        let c = cfg(lin(2, &[(&[0, 0], 1.0)], normal(0)), &[&[4, 16], &[16, 16]], 600);
        let r = clt_experiment(&c, 17).unwrap();
        assert!(r.rows[1].pass.unwrap() && !r.rows[1].diagnostic_only);
        assert!(r.rows[0].diagnostic_only);
        assert!(r.rows.iter().all(|x| (0.0..=1.0).contains(&x.ks_statistic.unwrap())));
        let zero = cfg(lin(2, &[(&[0, 0], 0.0)], normal(0)), &[&[4, 4]], 500);
        let z = clt_experiment(&zero, 0).unwrap();
        assert!(z.rows[0].degenerate && z.rows[0].pass.is_none() && z.pass());
    }

    #[test]
    fn variance_and_clt_agree() {
        let c = cfg(lin(2, &[(&[0, 0], 0.5), (&[0, 1], 0.5)], normal(0)), &[&[16, 16]], 600);
        let v = variance_scan(&c, 3).unwrap();
        let k = clt_experiment(&c, 3).unwrap();
        let (a, b) = (&v.rows[0], &k.rows[0]);
        assert!((a.variance - b.c_sq_hat).abs() <= 3.0 * a.se.hypot(b.c_sq_se));
    }

    #[test]
    fn ma_exact_second_moment() {
        // E(S_n^2)/|n| = 1 - 1/(2 n_2) for a_(0,0) = a_(0,1) = 1/2.
        let c = cfg(lin(2, &[(&[0, 0], 0.5), (&[0, 1], 0.5)], normal(0)), &[&[8, 8]], 1);
        let per: Vec<f64> = (0..2000u64).map(|r| nested_sums(&c.model, &c.extents, &spec_for(&c.model, 5, r)).unwrap()[0]).collect();
        let sq: Vec<f64> = per.iter().map(|s| s * s / 64.0).collect();
        let (m, se) = mean_se(&sq);
        assert!((m - (1.0 - 1.0 / 16.0)).abs() <= 4.0 * se);
    }

    #[test]
    fn implied_constant_examples() {
        let rad = InnovationSpec::new(Distribution::Rademacher, Structure::Iid, 0);
        let zero = lin(1, &[(&[0], 0.0)], rad);
        assert_eq!(implied_constant_scan(&zero, &[2, 4]).unwrap().status, ImpliedConstantStatus::Degenerate);
        let shift = lin(1, &[(&[1], 1.0)], rad);
        let s = implied_constant_scan(&shift, &[2, 4, 8, 256]).unwrap();
        assert!(s.rows.iter().all(|r| (r.lhs - 1.0).abs() < 1e-15));
        let zeta = 2.612_375_348_685_488;
        assert!((s.rhs_series - (1.0 + 2f64.sqrt() * (zeta - 1.0))).abs() < 1e-13);
        assert!(s.rows.iter().all(|r| r.implied_constant.unwrap() <= s.rows[0].implied_constant.unwrap() + 1e-15));
    }

    #[test]
    fn implied_constant_matches_oracle() {
        // Exact enumeration of ||S_n|| and ||E(S_k | F_1)|| for the two-tap MA.
        let rad = InnovationSpec::new(Distribution::Rademacher, Structure::Iid, 0);
        let desc = lin(1, &[(&[1], 0.5), (&[2], 0.5)], rad);
        let FieldModel::Linear(c) = &desc.model else { unreachable!() };
        for n in [2u64, 4, 8] {
            let m = oracle::enumerate_model(&desc, &[n as usize]).unwrap();
            let s = oracle::exact_norm(&m, &oracle::Statistic::partial_sum(&[n as i64].into())).unwrap();
            assert!((s * s - linear_sn_norm_sq(c, n, 1.0)).abs() < 1e-12);
            for k in 1..=n {
                let ce = oracle::exact_cond_expectation(&m, &oracle::Statistic::partial_sum(&[k as i64].into()), &[1].into()).unwrap();
                assert!((ce.norm.powi(2) - linear_proj_f1_sq(c, k, 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditions_report() {
        let mut c = cfg(lin(2, &[(&[0, 0], 1.0), (&[1, 1], 0.5)], normal(0)), &[], 1);
        assert!(check_conditions(&c).is_err());
        c.conditions = Some(ConditionsConfig { j_max: vec![10, 10], radii: vec![1, 2] });
        let r = check_conditions(&c).unwrap();
        assert!(r.pass());
        assert_eq!(r.abs_sum.unwrap().rows.len(), 2);
    }
}
