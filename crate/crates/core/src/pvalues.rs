//! Selected-model and saturated-model p-values for each step of a path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::model::{residual_column, ActiveSet, Dataset, Projector, SufficientStat};
use crate::par::Execution;
use crate::paths::{restricted_lasso_path, Algorithm, LassoMode, LassoProblem, ModelPath};
use crate::polytope::{fs_constraints, lasso_constraints, lasso_mode, signed_sequence_constraints, SelectionPolytope};
use crate::rng::rng_for;
use crate::samplers::{sample_null, NullLaw, NullSampleSet, SamplerConfig, SamplerMethod};
use crate::stats::{batch_means_se, norm_log_interval, t_two_sided};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MaxT,
    MaxZ,
    MaxZIdentify,
    NextEntry,
    Saturated,
    Nominal,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::MaxT, Method::MaxZ, Method::MaxZIdentify, Method::NextEntry, Method::Saturated, Method::Nominal];

    pub fn name(self) -> &'static str {
        match self {
            Method::MaxT => "max-t",
            Method::MaxZ => "max-z",
            Method::MaxZIdentify => "max-z-identify",
            Method::NextEntry => "next-entry",
            Method::Saturated => "saturated",
            Method::Nominal => "nominal",
        }
    }

    /// Path the method is defined on.
    pub fn algorithm(self) -> Algorithm {
        match self {
            Method::NextEntry => Algorithm::Lasso,
            _ => Algorithm::ForwardStepwise,
        }
    }

    pub fn needs_sigma2(self) -> bool {
        matches!(self, Method::MaxZ | Method::MaxZIdentify | Method::Saturated)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// A p-value with its Monte Carlo standard error (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub p: f64,
    pub stderr: f64,
    pub statistic: f64,
    /// Null draws used; zero for closed forms.
    pub samples: usize,
    pub sampler: Option<SamplerMethod>,
}

impl PValue {
    fn exact(p: f64, statistic: f64) -> Self {
        PValue { p, stderr: 0.0, statistic, samples: 0, sampler: None }
    }
}

/// Add-one Monte Carlo p-value `(1 + #{T* >= T}) / (1 + N)` from exceedance
/// indicators, with an i.i.d. or batch-means standard error.
pub fn monte_carlo_pvalue(exceed: &[bool], method: SamplerMethod) -> (f64, f64) {
    let n = exceed.len();
    let count = exceed.iter().filter(|&&e| e).count();
    let p = (1.0 + count as f64) / (1.0 + n as f64);
    let se = if n == 0 {
        f64::NAN
    } else if method == SamplerMethod::HitAndRun {
        let ind: Vec<f64> = exceed.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
        batch_means_se(&ind, 20)
    } else {
        let q = count as f64 / n as f64;
        (q * (1.0 - q) / n as f64).sqrt()
    };
    (p, se)
}

fn require(path: &ModelPath, k: usize, method: Method) -> Result<()> {
    if path.algorithm != method.algorithm() {
        return invalid(format!("{method} p-values need a {:?} path", method.algorithm()));
    }
    if k == 0 || k > path.len() {
        return Err(Error::StepOutOfRange { step: k, len: path.len() });
    }
    Ok(())
}

/// Maximal standardized correlation with the residual over the variables
/// outside `E`, evaluated column by column on a sample matrix.
struct MaxStatistic {
    outside: Vec<usize>,
    /// `P_perp_E X_j / ||P_perp_E X_j||`, one column per variable.
    directions: DMatrix<f64>,
    proj: Projector,
    df: f64,
}

impl MaxStatistic {
    fn new(dataset: &Dataset, active: &ActiveSet) -> Result<Self> {
        let proj = Projector::for_active(dataset, active)?;
        let mut outside = Vec::new();
        let mut cols = Vec::new();
        for j in dataset.candidates() {
            if active.contains(j) {
                continue;
            }
            if let Ok((r, norm)) = residual_column(dataset, &proj, j) {
                outside.push(j);
                cols.push(r / norm);
            }
        }
        if outside.is_empty() {
            return Err(Error::DegenerateVariable(usize::MAX));
        }
        let directions = DMatrix::from_columns(&cols);
        let df = dataset.n() as f64 - active.len() as f64 - 1.0;
        Ok(MaxStatistic { outside, directions, proj, df })
    }

    /// `(max_j |z_j|, argmax variable)` per column, with `z_j = a_j'y / sigma`.
    fn max_z(&self, y: &DMatrix<f64>, sigma: f64) -> Vec<(f64, usize)> {
        let z = self.directions.tr_mul(y);
        z.column_iter()
            .map(|c| {
                let (i, v) = c.iter().enumerate().map(|(i, v)| (i, v.abs())).fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
                (v / sigma, self.outside[i])
            })
            .collect()
    }

    /// `max_j |t_j|` per column; monotone in `max_j |a_j'y|` given `RSS_E`.
    fn max_t(&self, y: &DMatrix<f64>) -> Vec<f64> {
        let z = self.directions.tr_mul(y);
        let resid = self.proj.residual_matrix(y);
        z.column_iter()
            .zip(resid.column_iter())
            .map(|(c, r)| {
                let m = c.amax();
                let rss = r.norm_squared();
                let rest = rss - m * m;
                if rest <= 1e-14 * rss {
                    f64::INFINITY
                } else {
                    (self.df * m * m / rest).sqrt()
                }
            })
            .collect()
    }
}

fn one_column(y: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(y.len(), 1, y.as_slice())
}

/// Polytope of `{E_{k-1}(Y) = E_{k-1}}` together with null draws on it.
fn conditional_draws<R: Rng + ?Sized>(
    dataset: &Dataset,
    path: &ModelPath,
    k: usize,
    law: NullLaw,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(SelectionPolytope, NullSampleSet)> {
    let poly = match path.algorithm {
        Algorithm::ForwardStepwise => fs_constraints(dataset, path, k - 1)?,
        Algorithm::Lasso => lasso_constraints(dataset, path, k - 1)?,
    };
    // the null law is carried by the dataset: sigma^2 known means Gaussian
    let data = match law {
        NullLaw::Gaussian { sigma } => dataset.clone().with_sigma2(sigma * sigma)?,
        NullLaw::Sphere => dataset.clone().without_sigma2(),
    };
    let draws = sample_null(&data, &poly, cfg, rng)?;
    Ok((poly, draws))
}

/// Selected-model test of step `k` with the maximal |t| statistic, conditioning
/// on `E_{k-1}` and `(X_{E_{k-1}}'y, ||y||)`; needs no noise variance.
pub fn max_t_pvalue(dataset: &Dataset, path: &ModelPath, k: usize, cfg: &SamplerConfig) -> Result<PValue> {
    max_t_with_rng(dataset, path, k, cfg, &mut rng_for(cfg.seed, k as u64))
}

pub fn max_t_with_rng<R: Rng + ?Sized>(dataset: &Dataset, path: &ModelPath, k: usize, cfg: &SamplerConfig, rng: &mut R) -> Result<PValue> {
    require(path, k, Method::MaxT)?;
    let e = path.active_at(k - 1)?;
    let stat = MaxStatistic::new(dataset, e)?;
    let observed = stat.max_t(&one_column(dataset.y()))[0];
    let (_, draws) = conditional_draws(dataset, path, k, NullLaw::Sphere, cfg, rng)?;
    let exceed: Vec<bool> = stat.max_t(&draws.samples).into_iter().map(|t| t >= observed).collect();
    let (p, stderr) = monte_carlo_pvalue(&exceed, draws.method);
    Ok(PValue { p, stderr, statistic: observed, samples: draws.len(), sampler: Some(draws.method) })
}

/// Selected-model test of step `k` with the maximal |z| statistic, conditioning
/// on `E_{k-1}` and `X_{E_{k-1}}'y` with known noise variance.
pub fn max_z_pvalue(dataset: &Dataset, path: &ModelPath, k: usize, cfg: &SamplerConfig) -> Result<PValue> {
    max_z_with_rng(dataset, path, k, cfg, false, &mut rng_for(cfg.seed, k as u64))
}

/// Like [`max_z_pvalue`] but also conditions on the identity of the entrant by
/// keeping only draws whose maximizer is the observed one.
pub fn max_z_identify_pvalue(dataset: &Dataset, path: &ModelPath, k: usize, cfg: &SamplerConfig) -> Result<PValue> {
    max_z_with_rng(dataset, path, k, cfg, true, &mut rng_for(cfg.seed, k as u64))
}

pub fn max_z_with_rng<R: Rng + ?Sized>(
    dataset: &Dataset,
    path: &ModelPath,
    k: usize,
    cfg: &SamplerConfig,
    identify: bool,
    rng: &mut R,
) -> Result<PValue> {
    require(path, k, if identify { Method::MaxZIdentify } else { Method::MaxZ })?;
    let sigma = dataset.sigma()?;
    let e = path.active_at(k - 1)?;
    let stat = MaxStatistic::new(dataset, e)?;
    let (observed, _) = stat.max_z(&one_column(dataset.y()), sigma)[0];
    let entrant = path.step(k)?.entered;
    let (_, draws) = conditional_draws(dataset, path, k, NullLaw::Gaussian { sigma }, cfg, rng)?;
    let exceed: Vec<bool> = stat
        .max_z(&draws.samples, sigma)
        .into_iter()
        .filter(|&(_, j)| !identify || j == entrant)
        .map(|(z, _)| z >= observed)
        .collect();
    if exceed.is_empty() {
        return Err(Error::InsufficientConditioningSamples);
    }
    let (p, stderr) = monte_carlo_pvalue(&exceed, draws.method);
    Ok(PValue { p, stderr, statistic: observed, samples: exceed.len(), sampler: Some(draws.method) })
}

/// How the next-entry test decides whether a null draw enters its `k`-th
/// variable at or above the observed penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryCheck {
    /// Compare `X~_j'y*` with bounds from the restricted path of `E_{k-1}`.
    KktShortcut,
    /// Recompute the lasso path of every draw.
    FullRecompute,
}

/// Per-draw indicators `(enters at lambda >= lambda_k, enters at lambda > lambda_k)`.
pub fn next_entry_indicators(
    dataset: &Dataset,
    path: &ModelPath,
    k: usize,
    draws: &DMatrix<f64>,
    check: EntryCheck,
) -> Result<Vec<(bool, bool)>> {
    require(path, k, Method::NextEntry)?;
    let lambda_k = path.step(k)?.lambda.expect("lasso steps carry a penalty");
    let mode = lasso_mode(path)?;
    let problem = LassoProblem::new(dataset)?;
    let corr = problem.design().tr_mul(draws);
    match check {
        EntryCheck::KktShortcut => {
            let e = path.active_at(k - 1)?;
            let u = SufficientStat::of(dataset, e).xty;
            let rp = restricted_lasso_path(&problem, e, &u, &mode)?;
            let outside: Vec<usize> = dataset.candidates().into_iter().filter(|&j| !e.contains(j)).collect();
            let (lo_ge, hi_ge) = rp.exclusion_bounds(&outside, &rp.evaluation_points(lambda_k, false))?;
            let strict = match mode {
                LassoMode::Exact => None,
                LassoMode::Grid(_) => Some(rp.exclusion_bounds(&outside, &rp.evaluation_points(lambda_k, true))?),
            };
            let violates = |c: nalgebra::DVectorView<f64>, lo: &[f64], hi: &[f64]| {
                outside.iter().enumerate().any(|(i, &j)| c[j] < lo[i] || c[j] > hi[i])
            };
            Ok(corr
                .column_iter()
                .map(|c| {
                    let ge = violates(c.as_view(), &lo_ge, &hi_ge);
                    let gt = match &strict {
                        None => ge,
                        Some((lo, hi)) => violates(c.as_view(), lo, hi),
                    };
                    (ge, gt)
                })
                .collect())
        }
        EntryCheck::FullRecompute => corr
            .column_iter()
            .map(|c| {
                let lambdas = problem.entry_lambdas(&c.into_owned(), &mode, k)?;
                let lk = if lambdas.len() >= k { lambdas[k - 1] } else { 0.0 };
                Ok((lk >= lambda_k, lk > lambda_k))
            })
            .collect(),
    }
}

/// Selected-model test of lasso step `k` with the next-entry penalty
/// `lambda_k` as statistic. On a grid, `randomize` splits ties uniformly.
pub fn next_entry_pvalue(dataset: &Dataset, path: &ModelPath, k: usize, cfg: &SamplerConfig, randomize: bool) -> Result<PValue> {
    next_entry_with_rng(dataset, path, k, cfg, randomize, &mut rng_for(cfg.seed, k as u64))
}

pub fn next_entry_with_rng<R: Rng + ?Sized>(
    dataset: &Dataset,
    path: &ModelPath,
    k: usize,
    cfg: &SamplerConfig,
    randomize: bool,
    rng: &mut R,
) -> Result<PValue> {
    require(path, k, Method::NextEntry)?;
    let law = NullLaw::for_dataset(dataset);
    let (_, draws) = conditional_draws(dataset, path, k, law, cfg, rng)?;
    let ind = next_entry_indicators(dataset, path, k, &draws.samples, EntryCheck::KktShortcut)?;
    let statistic = path.step(k)?.statistic;
    let ge: Vec<bool> = ind.iter().map(|&(ge, _)| ge).collect();
    let (mut p, stderr) = monte_carlo_pvalue(&ge, draws.method);
    if randomize {
        let n = ind.len() as f64;
        let gt = ind.iter().filter(|&&(_, gt)| gt).count() as f64;
        let eq = ind.iter().filter(|&&(ge, gt)| ge && !gt).count() as f64;
        p = (gt + rng.random::<f64>() * (eq + 1.0)) / (n + 1.0);
    }
    Ok(PValue { p, stderr, statistic, samples: draws.len(), sampler: Some(draws.method) })
}

/// Saturated-model test of step `k`: the least-squares coefficient of the
/// entrant in `E_k`, conditioned on the signed selection sequence and on the
/// part of `y` orthogonal to its contrast. Closed form, two-sided, symmetric.
pub fn saturated_pvalue(dataset: &Dataset, path: &ModelPath, k: usize) -> Result<PValue> {
    require(path, k, Method::Saturated)?;
    let sigma = dataset.sigma()?;
    let poly = signed_sequence_constraints(dataset, path, k)?;
    let prev = path.active_at(k - 1)?;
    let proj = Projector::for_active(dataset, prev)?;
    let (r, rn) = residual_column(dataset, &proj, path.step(k)?.entered)?;
    // eta = X_{E_k}(X_{E_k}'X_{E_k})^{-1} e_{j_k}
    let eta = &r / (rn * rn);
    let eta_sq = eta.norm_squared();
    let y = dataset.y();
    let t = eta.dot(y);
    let z = y - &eta * (t / eta_sq);
    let gz = poly.gamma() * &z;
    let alpha = poly.gamma() * &eta / eta_sq;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..alpha.len() {
        let bound = -(gz[i] - poly.u()[i]) / alpha[i];
        if alpha[i] > 0.0 {
            lo = lo.max(bound);
        } else if alpha[i] < 0.0 {
            hi = hi.min(bound);
        }
    }
    let sd = sigma * eta_sq.sqrt();
    let p = symmetric_truncated_tail(t / sd, lo / sd, hi / sd)?;
    Ok(PValue::exact(p, t / sd))
}

/// `P(|Z| >= |t| | a <= Z <= b)` for standard normal `Z`.
pub fn symmetric_truncated_tail(t: f64, a: f64, b: f64) -> Result<f64> {
    let total = norm_log_interval(a, b);
    if !total.is_finite() {
        return Err(Error::EmptyTruncation);
    }
    let c = t.abs();
    let lower = norm_log_interval(a, b.min(-c));
    let upper = norm_log_interval(a.max(c), b);
    let p = (lower - total).exp() + (upper - total).exp();
    Ok(p.clamp(0.0, 1.0))
}

/// Classical two-sided t-test of the entrant, ignoring selection.
pub fn nominal_pvalue(dataset: &Dataset, path: &ModelPath, k: usize) -> Result<PValue> {
    require(path, k, Method::Nominal)?;
    let step = path.step(k)?;
    let df = dataset.n() as f64 - step.active_after.len() as f64;
    Ok(PValue::exact(t_two_sided(step.statistic, df)?, step.statistic))
}

/// p-value of step `k` by the named method. Monte Carlo methods draw from the
/// stream `(cfg.seed, k)`.
pub fn pvalue(dataset: &Dataset, path: &ModelPath, k: usize, method: Method, cfg: &SamplerConfig) -> Result<PValue> {
    match method {
        Method::MaxT => max_t_pvalue(dataset, path, k, cfg),
        Method::MaxZ => max_z_pvalue(dataset, path, k, cfg),
        Method::MaxZIdentify => max_z_identify_pvalue(dataset, path, k, cfg),
        Method::NextEntry => next_entry_pvalue(dataset, path, k, cfg, true),
        Method::Saturated => saturated_pvalue(dataset, path, k),
        Method::Nominal => nominal_pvalue(dataset, path, k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPValue {
    pub step: usize,
    pub variable: String,
    pub method: Method,
    pub p: f64,
    pub stderr: f64,
    pub statistic: f64,
}

/// p-values for every step of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueSeries {
    pub method: Method,
    pub steps: Vec<StepPValue>,
}

impl PValueSeries {
    pub fn compute(dataset: &Dataset, path: &ModelPath, method: Method, cfg: &SamplerConfig, exec: Execution) -> Result<Self> {
        let steps = exec.try_map(path.len(), |i| -> Result<StepPValue> {
            let k = i + 1;
            let pv = pvalue(dataset, path, k, method, cfg)?;
            let j = path.step(k)?.entered;
            Ok(StepPValue { step: k, variable: dataset.column_names()[j].clone(), method, p: pv.p, stderr: pv.stderr, statistic: pv.statistic })
        })?;
        Ok(PValueSeries { method, steps })
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.p).collect()
    }

    /// Columns `step,variable,method,p,stderr,statistic`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.steps {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}
