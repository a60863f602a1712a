//! Simulation designs, ground truth bookkeeping, error metrics and the canned
//! experiments (bivariate example, adversarial path, sparse regression,
//! changepoint null).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Serialize, Serializer};

use crate::changepoint::{changepoint_with_rng, greedy_path, ChangepointPath};
use crate::error::{invalid, Error, Result};
use crate::model::{ActiveSet, Dataset};
use crate::par::Execution;
use crate::paths::{forward_stepwise, lasso_path, LassoMode, ModelPath};
use crate::pvalues::{max_z_with_rng, pvalue, saturated_pvalue, Method};
use crate::rng::{mix, rng_for};
use crate::samplers::{accept_reject, FnEvent, NullLaw, SamplerConfig};
use crate::stats::{correlation, ks_uniform, mean_se, norm_isf};
use crate::stopping::StoppingRule;

/// Equicorrelated Gaussian regression design with a sparse coefficient vector.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub pairwise_corr: f64,
    /// Number of leading columns with coefficient `signal`.
    pub sparsity: usize,
    pub signal: f64,
    pub sigma2: f64,
    pub reps: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    #[serde(serialize_with = "rule_names")]
    pub rules: Vec<StoppingRule>,
    /// Path length; `None` runs the longest path every method allows.
    pub steps: Option<usize>,
    pub seed: u64,
    pub sampler: SamplerConfig,
}

fn rule_names<S: Serializer>(rules: &[StoppingRule], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(rules.iter().map(|r| r.name()))
}

impl SimConfig {
    /// n = 100, p = 40, correlation 0.3, seven coefficients equal to 5.
    pub fn full() -> Self {
        SimConfig {
            n: 100,
            p: 40,
            pairwise_corr: 0.3,
            sparsity: 7,
            signal: 5.0,
            sigma2: 1.0,
            reps: 500,
            alpha: 0.05,
            methods: vec![Method::Nominal, Method::MaxZ, Method::MaxT, Method::Saturated],
            rules: vec![StoppingRule::Basic, StoppingRule::Forward],
            steps: None,
            seed: 0,
            sampler: SamplerConfig::default(),
        }
    }

    /// Scaled-down version: n = 50, p = 10, three coefficients.
    pub fn desk() -> Self {
        SimConfig { n: 50, p: 10, sparsity: 3, methods: Method::ALL.to_vec(), ..SimConfig::full() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pairwise_corr) {
            return invalid(format!("pairwise correlation must lie in [0, 1), got {}", self.pairwise_corr));
        }
        if self.sparsity > self.p {
            return invalid("sparsity exceeds the number of variables");
        }
        if self.n < 4 || self.p == 0 || self.reps == 0 {
            return invalid("need n >= 4, p >= 1 and at least one replication");
        }
        if !(self.sigma2 > 0.0) {
            return invalid("noise variance must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid("alpha must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn beta(&self) -> DVector<f64> {
        DVector::from_fn(self.p, |j, _| if j < self.sparsity { self.signal } else { 0.0 })
    }

    pub fn truth(&self) -> Vec<usize> {
        (0..self.sparsity).collect()
    }

    fn path_steps(&self) -> usize {
        self.steps.unwrap_or(self.p.min(self.n - 2))
    }
}

/// Rows i.i.d. Gaussian with unit variances and common correlation, columns
/// scaled to unit norm, and `y = X beta + N(0, sigma^2 I)`. The dataset
/// carries the true noise variance.
pub fn generate_design<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<Dataset> {
    config.validate()?;
    let (n, p) = (config.n, config.p);
    let rho = config.pairwise_corr;
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let common: f64 = StandardNormal.sample(rng);
        for j in 0..p {
            let e: f64 = StandardNormal.sample(rng);
            x[(i, j)] = a * common + b * e;
        }
    }
    let sigma = config.sigma2.sqrt();
    let noise = DVector::from_fn(n, |_, _| { let e: f64 = StandardNormal.sample(rng); sigma * e });
    let d = Dataset::new(x, DVector::zeros(n))?.normalized()?;
    let y = d.x() * config.beta() + noise;
    d.with_response(y)?.with_sigma2(config.sigma2)
}

/// First step whose active set contains the whole support; `len + 1` when the
/// path never gets there.
pub fn completion_index(entrants: &[usize], truth: &[usize]) -> usize {
    let mut last = 0;
    for &t in truth {
        match entrants.iter().position(|&e| e == t) {
            Some(i) => last = last.max(i + 1),
            None => return entrants.len() + 1,
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub k_hat: usize,
    pub k0: usize,
    /// The first `k_hat` entrants.
    pub selected: Vec<usize>,
    pub truth: Vec<usize>,
}

impl TrialOutcome {
    pub fn new(entrants: &[usize], truth: &[usize], k_hat: usize) -> Self {
        TrialOutcome { k_hat, k0: completion_index(entrants, truth), selected: entrants[..k_hat].to_vec(), truth: truth.to_vec() }
    }

    /// `V = (k_hat - k0)_+`.
    pub fn v(&self) -> usize {
        self.k_hat.saturating_sub(self.k0)
    }

    /// Selected variables outside the support.
    pub fn v_full(&self) -> usize {
        self.selected.iter().filter(|j| !self.truth.contains(j)).count()
    }

    pub fn s_full(&self) -> usize {
        self.k_hat - self.v_full()
    }

    pub fn fdp(&self) -> f64 {
        self.v() as f64 / self.k_hat.max(1) as f64
    }

    pub fn fdp_full(&self) -> f64 {
        self.v_full() as f64 / self.k_hat.max(1) as f64
    }
}

/// An estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    fn proportion(hits: usize, n: usize) -> Self {
        if n == 0 {
            return Estimate { value: f64::NAN, se: f64::NAN };
        }
        let q = hits as f64 / n as f64;
        Estimate { value: q, se: (q * (1.0 - q) / n as f64).sqrt() }
    }

    fn mean(values: &[f64]) -> Self {
        let (value, se) = mean_se(values);
        Estimate { value, se }
    }

    /// `value <= bound + z * se`.
    pub fn at_most(&self, bound: f64, z: f64) -> bool {
        self.value <= bound + z * self.se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub trials: usize,
    /// `P(k_hat >= k0)`.
    pub prob_correct: Estimate,
    pub fwer: Estimate,
    /// `P(k_hat > k0 | k_hat >= k0)`.
    pub cfwer: Estimate,
    pub fdr: Estimate,
    pub fdr_full: Estimate,
    pub mean_s_full: Estimate,
    pub mean_k_hat: Estimate,
}

pub fn compute_metrics(outcomes: &[TrialOutcome]) -> Result<Metrics> {
    if outcomes.is_empty() {
        return invalid("no trials");
    }
    let n = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.k_hat >= o.k0).count();
    let errors = outcomes.iter().filter(|o| o.v() > 0).count();
    let col = |f: &dyn Fn(&TrialOutcome) -> f64| outcomes.iter().map(f).collect::<Vec<f64>>();
    Ok(Metrics {
        trials: n,
        prob_correct: Estimate::proportion(correct, n),
        fwer: Estimate::proportion(errors, n),
        cfwer: Estimate::proportion(errors, correct),
        fdr: Estimate::mean(&col(&|o| o.fdp())),
        fdr_full: Estimate::mean(&col(&|o| o.fdp_full())),
        mean_s_full: Estimate::mean(&col(&|o| o.s_full() as f64)),
        mean_k_hat: Estimate::mean(&col(&|o| o.k_hat as f64)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: Method,
    pub rule: String,
    pub alpha: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// One row per (method, rule, alpha).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn get(&self, method: Method, rule: &str, alpha: f64) -> Option<&Metrics> {
        self.rows.iter().find(|r| r.method == method && r.rule == rule && r.alpha == alpha).map(|r| &r.metrics)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method", "rule", "alpha", "trials", "prob_correct", "prob_correct_se", "fwer", "fwer_se", "cfwer", "cfwer_se", "fdr", "fdr_se",
            "fdr_full", "fdr_full_se", "mean_s_full", "mean_s_full_se", "mean_k_hat", "mean_k_hat_se",
        ])?;
        for r in &self.rows {
            let m = &r.metrics;
            let mut rec = vec![r.method.name().to_string(), r.rule.clone(), r.alpha.to_string(), m.trials.to_string()];
            for e in [m.prob_correct, m.fwer, m.cfwer, m.fdr, m.fdr_full, m.mean_s_full, m.mean_k_hat] {
                rec.push(e.value.to_string());
                rec.push(e.se.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// KS statistic and p-value against Uniform(0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub pvalue: f64,
    pub n: usize,
}

impl KsResult {
    pub fn of(values: &[f64]) -> Self {
        let (statistic, pvalue) = ks_uniform(values);
        KsResult { statistic, pvalue, n: values.len() }
    }
}

// ---------------------------------------------------------------------------
// sparse regression

/// Per-method results of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTrial {
    pub method: Method,
    /// Entry order of the path the method runs on.
    pub entrants: Vec<usize>,
    pub pvalues: Vec<f64>,
}

impl MethodTrial {
    pub fn k0(&self, truth: &[usize]) -> usize {
        completion_index(&self.entrants, truth)
    }

    /// p-values of the steps after the completion index.
    pub fn null_pvalues(&self, truth: &[usize]) -> &[f64] {
        let k0 = self.k0(truth).min(self.pvalues.len());
        &self.pvalues[k0..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseTrial {
    pub rep: usize,
    pub methods: Vec<MethodTrial>,
}

/// Null-step p-values at a fixed offset `j` (step `k0 + j`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffsetSummary {
    pub offset: usize,
    pub ks: KsResult,
    pub frac_below_05: f64,
}

/// Null-step behaviour of one method across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullSummary {
    pub method: Method,
    /// Pooled p-values of every step after the completion index.
    pub ks: KsResult,
    pub frac_below_05: f64,
    /// Correlation of the first two null-step p-values across replications.
    pub pair_correlation: f64,
    pub pairs: usize,
    pub by_offset: Vec<OffsetSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SparseReport {
    pub config: SimConfig,
    pub trials: Vec<SparseTrial>,
}

impl SparseReport {
    pub fn truth(&self) -> Vec<usize> {
        self.config.truth()
    }

    fn method_trials(&self, method: Method) -> impl Iterator<Item = &MethodTrial> {
        self.trials.iter().flat_map(move |t| t.methods.iter().filter(move |m| m.method == method))
    }

    pub fn outcomes(&self, method: Method, rule: &StoppingRule, alpha: f64) -> Result<Vec<TrialOutcome>> {
        let truth = self.truth();
        self.method_trials(method)
            .map(|m| Ok(TrialOutcome::new(&m.entrants, &truth, rule.select(&m.pvalues, alpha)?)))
            .collect()
    }

    /// Metrics for every configured method and rule at each level.
    pub fn metrics(&self, alphas: &[f64]) -> Result<MetricsTable> {
        let mut rows = Vec::new();
        for &method in &self.config.methods {
            for rule in &self.config.rules {
                for &alpha in alphas {
                    let metrics = compute_metrics(&self.outcomes(method, rule, alpha)?)?;
                    rows.push(MetricsRow { method, rule: rule.name(), alpha, metrics });
                }
            }
        }
        Ok(MetricsTable { rows })
    }

    pub fn null_summary(&self, method: Method) -> NullSummary {
        let truth = self.truth();
        let mut pooled = Vec::new();
        let mut offsets: Vec<Vec<f64>> = Vec::new();
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for m in self.method_trials(method) {
            let nulls = m.null_pvalues(&truth);
            pooled.extend_from_slice(nulls);
            for (i, &p) in nulls.iter().enumerate() {
                if offsets.len() <= i {
                    offsets.push(Vec::new());
                }
                offsets[i].push(p);
            }
            if nulls.len() >= 2 {
                first.push(nulls[0]);
                second.push(nulls[1]);
            }
        }
        let below = |v: &[f64]| v.iter().filter(|&&p| p <= 0.05).count() as f64 / v.len().max(1) as f64;
        NullSummary {
            method,
            ks: KsResult::of(&pooled),
            frac_below_05: below(&pooled),
            pair_correlation: if first.len() > 2 { correlation(&first, &second) } else { f64::NAN },
            pairs: first.len(),
            by_offset: offsets
                .iter()
                .enumerate()
                .map(|(i, v)| OffsetSummary { offset: i + 1, ks: KsResult::of(v), frac_below_05: below(v) })
                .collect(),
        }
    }

    /// One row per replication, method and step.
    pub fn write_pvalues_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let truth = self.truth();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "method", "step", "variable", "k0", "p"])?;
        for t in &self.trials {
            for m in &t.methods {
                let k0 = m.k0(&truth);
                for (i, p) in m.pvalues.iter().enumerate() {
                    w.write_record([t.rep.to_string(), m.method.name().into(), (i + 1).to_string(), m.entrants[i].to_string(), k0.to_string(), p.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Replications of the sparse regression design. Replication `r` draws its
/// data from stream `(seed, r)`; method `m` samples with seed `mix(mix(seed, r), m)`.
pub fn sparse_experiment(config: &SimConfig, exec: Execution) -> Result<SparseReport> {
    config.validate()?;
    let steps = config.path_steps();
    let trials = exec.try_map(config.reps, |rep| -> Result<SparseTrial> {
        let data = generate_design(config, &mut rng_for(config.seed, rep as u64))?;
        let mut fs: Option<ModelPath> = None;
        let mut lasso: Option<ModelPath> = None;
        let mut methods = Vec::with_capacity(config.methods.len());
        for (mi, &method) in config.methods.iter().enumerate() {
            let path = match method {
                Method::NextEntry => {
                    if lasso.is_none() {
                        lasso = Some(lasso_path(&data, LassoMode::Exact, steps.min(config.p))?);
                    }
                    lasso.as_ref().unwrap()
                }
                _ => {
                    if fs.is_none() {
                        fs = Some(forward_stepwise(&data, steps)?);
                    }
                    fs.as_ref().unwrap()
                }
            };
            let cfg = config.sampler.with_seed(mix(mix(config.seed, rep as u64), mi as u64));
            let data = if method.needs_sigma2() || method == Method::NextEntry { data.clone() } else { data.clone().without_sigma2() };
            let pvalues = (1..=path.len()).map(|k| pvalue(&data, path, k, method, &cfg).map(|p| p.p)).collect::<Result<Vec<_>>>()?;
            methods.push(MethodTrial { method, entrants: path.entrants(), pvalues });
        }
        Ok(SparseTrial { rep, methods })
    })?;
    Ok(SparseReport { config: config.clone(), trials })
}

// ---------------------------------------------------------------------------
// bivariate example

/// Counts of p-value pairs in 0.2-wide bins; `counts[i][j]` has `p1` in bin
/// `i` and `p2` in bin `j`, bins `(0, 0.2], ..., (0.8, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contingency {
    pub counts: [[usize; 5]; 5],
    pub total: usize,
}

impl Contingency {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let bin = |p: f64| ((p * 5.0).ceil() as usize).clamp(1, 5) - 1;
        let mut counts = [[0; 5]; 5];
        for &(a, b) in pairs {
            counts[bin(a)][bin(b)] += 1;
        }
        Contingency { counts, total: pairs.len() }
    }

    pub fn percent(&self, i: usize, j: usize) -> f64 {
        100.0 * self.counts[i][j] as f64 / self.total as f64
    }

    /// Percentages with row and column totals.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        const BINS: [&str; 5] = ["(0,0.2]", "(0.2,0.4]", "(0.4,0.6]", "(0.6,0.8]", "(0.8,1]"];
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["p1\\p2"];
        header.extend(BINS);
        header.push("total");
        w.write_record(&header)?;
        let fmt = |v: f64| format!("{v:.2}");
        for (i, name) in BINS.iter().enumerate() {
            let mut rec = vec![name.to_string()];
            rec.extend((0..5).map(|j| fmt(self.percent(i, j))));
            rec.push(fmt((0..5).map(|j| self.percent(i, j)).sum()));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["total".to_string()];
        rec.extend((0..5).map(|j| fmt((0..5).map(|i| self.percent(i, j)).sum())));
        rec.push(fmt(100.0));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PValuePairs {
    pub contingency: Contingency,
    pub correlation: f64,
    pub ks_first: KsResult,
    pub ks_second: KsResult,
    #[serde(skip)]
    pub pairs: Vec<(f64, f64)>,
}

impl PValuePairs {
    fn new(pairs: Vec<(f64, f64)>) -> Self {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        PValuePairs {
            contingency: Contingency::from_pairs(&pairs),
            correlation: correlation(&a, &b),
            ks_first: KsResult::of(&a),
            ks_second: KsResult::of(&b),
            pairs,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BivariateReport {
    pub reps: usize,
    pub seed: u64,
    pub saturated: PValuePairs,
    pub selected: PValuePairs,
}

/// Global-null replications of the two-variable identity design with unit
/// noise variance: saturated-model and selected-model (max-z) p-values of
/// both stepwise steps.
pub fn bivariate_experiment(reps: usize, cfg: &SamplerConfig, exec: Execution) -> Result<BivariateReport> {
    if reps < 3 {
        return invalid("need at least three replications");
    }
    let rows = exec.try_map(reps, |rep| -> Result<[(f64, f64); 2]> {
        let mut rng = rng_for(cfg.seed, rep as u64);
        let y = DVector::from_fn(2, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let data = Dataset::new(DMatrix::identity(2, 2), y)?.with_sigma2(1.0)?;
        let path = forward_stepwise(&data, 2)?;
        let sat = (saturated_pvalue(&data, &path, 1)?.p, saturated_pvalue(&data, &path, 2)?.p);
        let sel = (
            max_z_with_rng(&data, &path, 1, cfg, false, &mut rng)?.p,
            max_z_with_rng(&data, &path, 2, cfg, false, &mut rng)?.p,
        );
        Ok([sat, sel])
    })?;
    let saturated = PValuePairs::new(rows.iter().map(|r| r[0]).collect());
    let selected = PValuePairs::new(rows.iter().map(|r| r[1]).collect());
    Ok(BivariateReport { reps, seed: cfg.seed, saturated, selected })
}

// ---------------------------------------------------------------------------
// adversarial path

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleArm {
    pub fwer: Estimate,
    pub fdr: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub alpha: f64,
    pub signal: f64,
    pub reps: usize,
    pub seed: u64,
    /// `2 alpha - alpha^2`.
    pub limit: f64,
    /// Order 1, 2, 3 when `|Y_3| > z_{alpha/2}`, else 2, 1, 3.
    pub adversarial: CounterexampleArm,
    /// Ordinary forward stepwise on the same data.
    pub stepwise: CounterexampleArm,
}

/// Max-z p-value of `max_{j not in E} |y_j|` for the identity design, drawn
/// from the null law given `(E, y_E)` restricted to `event`.
fn identity_max_z<R: Rng + ?Sized>(
    data: &Dataset,
    active: &[usize],
    event: &(dyn Fn(&DVector<f64>) -> bool + Sync),
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<f64> {
    let set = ActiveSet::from_entries(active.to_vec(), data)?;
    let xty = DVector::from_iterator(active.len(), active.iter().map(|&j| data.y()[j]));
    let stat = |y: nalgebra::DVectorView<f64>| (0..y.len()).filter(|j| !active.contains(j)).map(|j| y[j].abs()).fold(0.0, f64::max);
    let observed = stat(data.y().as_view());
    let draws = accept_reject(data, &set, &xty, &FnEvent(event), NullLaw::Gaussian { sigma: 1.0 }, cfg, rng)?;
    let exceed = draws.samples.column_iter().filter(|c| stat(c.as_view()) >= observed).count();
    Ok((1.0 + exceed as f64) / (1.0 + draws.len() as f64))
}

/// FWER and FDR of BasicStop at `alpha` on the three-variable identity design
/// with mean `(0, signal, 0)`, for the adversarial path and for forward
/// stepwise. p-values are evaluated lazily, up to the first one above `alpha`.
pub fn counterexample_experiment(alpha: f64, signal: f64, reps: usize, cfg: &SamplerConfig, exec: Execution) -> Result<CounterexampleReport> {
    if !(alpha > 0.0 && alpha < 1.0) || reps == 0 {
        return invalid("alpha must lie in (0, 1) and reps must be positive");
    }
    let z = norm_isf(alpha / 2.0);
    let truth: Vec<usize> = if signal != 0.0 { vec![1] } else { vec![] };
    let rows = exec.try_map(reps, |rep| -> Result<[TrialOutcome; 2]> {
        let mut rng = rng_for(cfg.seed, rep as u64);
        let y = DVector::from_fn(3, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            if i == 1 { signal + e } else { e }
        });
        let data = Dataset::new(DMatrix::identity(3, 3), y)?.with_sigma2(1.0)?;

        let flip = data.y()[2].abs() > z;
        let order = if flip { vec![0, 1, 2] } else { vec![1, 0, 2] };
        let mut k_hat = 0;
        for k in 1..=3 {
            let prev = &order[..k - 1];
            let p = match k {
                1 => identity_max_z(&data, prev, &|_| true, cfg, &mut rng)?,
                // E_1 = {0} exactly when |Y_3| > z
                2 => identity_max_z(&data, prev, &move |y: &DVector<f64>| (y[2].abs() > z) == flip, cfg, &mut rng)?,
                _ => identity_max_z(&data, prev, &|_| true, cfg, &mut rng)?,
            };
            if p > alpha {
                break;
            }
            k_hat = k;
        }
        let adversarial = TrialOutcome::new(&order, &truth, k_hat);

        let path = forward_stepwise(&data, 3)?;
        let mut k_hat = 0;
        for k in 1..=3 {
            if max_z_with_rng(&data, &path, k, cfg, false, &mut rng)?.p > alpha {
                break;
            }
            k_hat = k;
        }
        Ok([adversarial, TrialOutcome::new(&path.entrants(), &truth, k_hat)])
    })?;
    let arm = |i: usize| -> Result<CounterexampleArm> {
        let outcomes: Vec<TrialOutcome> = rows.iter().map(|r| r[i].clone()).collect();
        let m = compute_metrics(&outcomes)?;
        Ok(CounterexampleArm { fwer: m.fwer, fdr: m.fdr })
    };
    Ok(CounterexampleReport {
        alpha,
        signal,
        reps,
        seed: cfg.seed,
        limit: 2.0 * alpha - alpha * alpha,
        adversarial: arm(0)?,
        stepwise: arm(1)?,
    })
}

// ---------------------------------------------------------------------------
// changepoint null

#[derive(Debug, Clone, Serialize)]
pub struct ChangepointNullReport {
    pub reps: usize,
    pub length: usize,
    pub seed: u64,
    pub ks_first: KsResult,
    pub ks_second: KsResult,
    pub correlation: f64,
    #[serde(skip)]
    pub pairs: Vec<(f64, f64)>,
}

/// Accepted permutations are exact conditional draws whatever the budget, so a
/// low acceptance rate is met by retrying with a larger budget.
fn changepoint_with_budget<R: Rng + ?Sized>(values: &[f64], path: &ChangepointPath, k: usize, cfg: &SamplerConfig, rng: &mut R) -> Result<f64> {
    let mut cfg = *cfg;
    loop {
        match changepoint_with_rng(values, path, k, &cfg, true, rng) {
            Err(Error::LowAcceptance { .. }) if cfg.budget < MAX_PERMUTATION_BUDGET => cfg.budget *= 4,
            other => return other.map(|p| p.p),
        }
    }
}

const MAX_PERMUTATION_BUDGET: usize = 5_000_000;

/// Randomized permutation p-values of the first two greedy splits of i.i.d.
/// standard normal series.
pub fn changepoint_null_experiment(reps: usize, length: usize, cfg: &SamplerConfig, exec: Execution) -> Result<ChangepointNullReport> {
    if reps < 3 || length < 6 {
        return invalid("need at least three replications and series of length six");
    }
    let pairs = exec.try_map(reps, |rep| -> Result<(f64, f64)> {
        let mut rng = rng_for(cfg.seed, rep as u64);
        let values: Vec<f64> = (0..length).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).collect();
        let path = greedy_path(&values, 2)?;
        let p1 = changepoint_with_budget(&values, &path, 1, cfg, &mut rng)?;
        let p2 = changepoint_with_budget(&values, &path, 2, cfg, &mut rng)?;
        Ok((p1, p2))
    })?;
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok(ChangepointNullReport {
        reps,
        length,
        seed: cfg.seed,
        ks_first: KsResult::of(&a),
        ks_second: KsResult::of(&b),
        correlation: correlation(&a, &b),
        pairs,
    })
}
