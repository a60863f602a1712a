//! Samplers for the conditional null law of `Y` given a selection event and
//! `X_E'Y = u`: Gaussian on the affine set when the noise variance is known,
//! uniform on the sphere `{X_E'y = u, ||y||^2 = ||y_obs||^2}` otherwise.
//!
//! Everything runs in coordinates `y = y0 + B w`, where `B` is an orthonormal
//! basis of the orthogonal complement of `span(X_E)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActiveSet, Dataset, Projector};
use crate::polytope::SelectionPolytope;
use crate::stats::{random_unit, truncnorm_sample};

/// Anything with a membership test for `y`.
pub trait SelectionEvent: Sync {
    fn contains(&self, y: &DVector<f64>) -> bool;

    fn as_polytope(&self) -> Option<&SelectionPolytope> {
        None
    }
}

impl SelectionEvent for SelectionPolytope {
    fn contains(&self, y: &DVector<f64>) -> bool {
        SelectionPolytope::contains(self, y)
    }

    fn as_polytope(&self) -> Option<&SelectionPolytope> {
        Some(self)
    }
}

/// A membership test given by a closure.
pub struct FnEvent<F>(pub F);

impl<F: Fn(&DVector<f64>) -> bool + Sync> SelectionEvent for FnEvent<F> {
    fn contains(&self, y: &DVector<f64>) -> bool {
        (self.0)(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMethod {
    /// Accept/reject, falling back to hit-and-run on low acceptance.
    Auto,
    AcceptReject,
    HitAndRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Maximum accept/reject proposals.
    pub budget: usize,
    /// Accept/reject is abandoned when fewer draws than this are accepted.
    pub min_accepted: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Number of retained null draws.
    pub chain_length: usize,
    pub seed: u64,
    pub method: SamplerMethod,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { budget: 75_000, min_accepted: 300, burn_in: 2_000, thin: 5, chain_length: 999, seed: 0, method: SamplerMethod::Auto }
    }
}

impl SamplerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_chain_length(mut self, n: usize) -> Self {
        self.chain_length = n;
        self
    }

    pub fn with_method(mut self, method: SamplerMethod) -> Self {
        self.method = method;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.chain_length == 0 || self.thin == 0 || self.budget == 0 {
            return Err(Error::InvalidInput("chain length, thinning and budget must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional null law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullLaw {
    Gaussian { sigma: f64 },
    Sphere,
}

impl NullLaw {
    /// Gaussian when the data carry a noise variance, sphere otherwise.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        match dataset.sigma2() {
            Some(s2) => NullLaw::Gaussian { sigma: s2.sqrt() },
            None => NullLaw::Sphere,
        }
    }
}

/// The affine conditioning set in reduced coordinates.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub y0: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub law: NullLaw,
    /// Sphere radius in reduced coordinates.
    pub radius: f64,
}

impl Geometry {
    pub fn new(dataset: &Dataset, active: &ActiveSet, xty: &DVector<f64>, law: NullLaw) -> Result<Self> {
        let n = dataset.n();
        let xe = dataset.columns(active.as_slice());
        let proj = Projector::new(&xe)?;
        let y0 = proj.min_norm_point(xty);
        // columns |E|.. of Q from a QR of [X_E | I] span the complement
        let mut aug = DMatrix::zeros(n, xe.ncols() + n);
        aug.columns_mut(0, xe.ncols()).copy_from(&xe);
        aug.columns_mut(xe.ncols(), n).fill_with_identity();
        let q = aug.qr().q();
        let basis = q.columns(xe.ncols(), n - xe.ncols()).into_owned();
        let radius = match law {
            NullLaw::Gaussian { .. } => 0.0,
            NullLaw::Sphere => {
                let r2 = dataset.y().norm_squared() - y0.norm_squared();
                let scale = dataset.y().norm_squared().max(f64::MIN_POSITIVE);
                if !(r2 > 1e-12 * scale) {
                    return Err(Error::DegenerateSphere(r2.max(0.0).sqrt()));
                }
                r2.sqrt()
            }
        };
        if basis.ncols() == 0 {
            return Err(Error::DegenerateSphere(0.0));
        }
        Ok(Geometry { y0, basis, law, radius })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn lift(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.basis * w;
        for mut col in y.column_iter_mut() {
            col += &self.y0;
        }
        y
    }

    pub fn reduce(&self, y: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&(y - &self.y0))
    }

    fn fill_proposals<R: Rng + ?Sized>(&self, rng: &mut R, w: &mut DMatrix<f64>) {
        for v in w.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        match self.law {
            NullLaw::Gaussian { sigma } => *w *= sigma,
            NullLaw::Sphere => {
                for mut col in w.column_iter_mut() {
                    let norm = col.norm();
                    col *= self.radius / norm;
                }
            }
        }
    }
}

/// Null draws, one per column.
#[derive(Debug, Clone)]
pub struct NullSampleSet {
    pub samples: DMatrix<f64>,
    pub method: SamplerMethod,
    pub acceptance_rate: Option<f64>,
    pub proposals: usize,
    /// Number of retained draws.
    pub effective_count: usize,
}

impl NullSampleSet {
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// One row per draw, columns `y1..yn`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.samples.nrows()).map(|i| format!("y{i}")).collect();
        w.write_record(&header)?;
        for col in self.samples.column_iter() {
            w.write_record(col.iter().map(|v| format!("{v:.17e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Polytope rows in reduced coordinates: `A w >= b`.
struct ReducedPolytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl ReducedPolytope {
    fn new(poly: &SelectionPolytope, geo: &Geometry) -> Self {
        let a = poly.gamma() * &geo.basis;
        let b = poly.u() - poly.gamma() * &geo.y0;
        ReducedPolytope { a, b }
    }
}

const BLOCK: usize = 256;

/// Accept/reject: draw from the unconstrained law on the affine set and keep
/// draws inside the event.
pub fn accept_reject<R: Rng + ?Sized>(
    dataset: &Dataset,
    active: &ActiveSet,
    xty: &DVector<f64>,
    event: &dyn SelectionEvent,
    law: NullLaw,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<NullSampleSet> {
    cfg.validate()?;
    let geo = Geometry::new(dataset, active, xty, law)?;
    let reduced = event.as_polytope().map(|p| ReducedPolytope::new(p, &geo));
    let d = geo.dim();
    let n = dataset.n();
    let mut kept: Vec<f64> = Vec::with_capacity(cfg.chain_length * n);
    let mut accepted = 0;
    let mut proposals = 0;
    let mut w = DMatrix::zeros(d, BLOCK);
    while accepted < cfg.chain_length && proposals < cfg.budget {
        let block = BLOCK.min(cfg.budget - proposals);
        if w.ncols() != block {
            w = DMatrix::zeros(d, block);
        }
        geo.fill_proposals(rng, &mut w);
        proposals += block;
        let slack = reduced.as_ref().map(|r| &r.a * &w);
        let y = geo.lift(&w);
        for c in 0..block {
            if accepted == cfg.chain_length {
                break;
            }
            if let (Some(s), Some(r)) = (&slack, &reduced) {
                if s.column(c).iter().zip(r.b.iter()).any(|(v, b)| v < b) {
                    continue;
                }
            }
            let yc = y.column(c).into_owned();
            if event.contains(&yc) {
                kept.extend(yc.iter());
                accepted += 1;
            }
        }
    }
    if accepted < cfg.min_accepted.min(cfg.chain_length) {
        return Err(Error::LowAcceptance { accepted, proposals, required: cfg.min_accepted.min(cfg.chain_length) });
    }
    Ok(NullSampleSet {
        samples: DMatrix::from_vec(n, accepted, kept),
        method: SamplerMethod::AcceptReject,
        acceptance_rate: Some(accepted as f64 / proposals as f64),
        proposals,
        effective_count: accepted,
    })
}

/// Accept/reject for the Gaussian law on the affine set of a polytope.
pub fn sample_hyperplane_gaussian<R: Rng + ?Sized>(dataset: &Dataset, poly: &SelectionPolytope, cfg: &SamplerConfig, rng: &mut R) -> Result<NullSampleSet> {
    let law = NullLaw::Gaussian { sigma: dataset.sigma()? };
    accept_reject(dataset, &poly.active, &poly.xty, poly, law, cfg, rng)
}

/// Accept/reject for the uniform law on the conditioning sphere of a polytope.
pub fn sample_sphere_uniform<R: Rng + ?Sized>(dataset: &Dataset, poly: &SelectionPolytope, cfg: &SamplerConfig, rng: &mut R) -> Result<NullSampleSet> {
    accept_reject(dataset, &poly.active, &poly.xty, poly, NullLaw::Sphere, cfg, rng)
}

/// Hit-and-run on a polytope, started at the observed response.
pub fn hit_and_run<R: Rng + ?Sized>(
    dataset: &Dataset,
    poly: &SelectionPolytope,
    law: NullLaw,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<NullSampleSet> {
    cfg.validate()?;
    let geo = Geometry::new(dataset, &poly.active, &poly.xty, law)?;
    let red = ReducedPolytope::new(poly, &geo);
    let mut w = geo.reduce(dataset.y());
    if let NullLaw::Sphere = law {
        let norm = w.norm();
        w *= geo.radius / norm;
    }
    let mut aw = &red.a * &w;
    if aw.iter().zip(red.b.iter()).any(|(&v, &b)| v < b - 1e-9 * (1.0 + b.abs())) {
        return Err(Error::InfeasibleObservation);
    }
    let n = dataset.n();
    let total = cfg.burn_in + cfg.chain_length * cfg.thin;
    let mut kept: Vec<f64> = Vec::with_capacity(cfg.chain_length * n);
    let mut last_good = dataset.y().clone();
    for step in 1..=total {
        match law {
            NullLaw::Gaussian { sigma } => gaussian_move(rng, &red, &mut w, &mut aw, sigma)?,
            NullLaw::Sphere => sphere_move(rng, &red, &mut w, &mut aw, geo.radius),
        }
        if step % 256 == 0 {
            if let NullLaw::Sphere = law {
                let norm = w.norm();
                w *= geo.radius / norm;
            }
            aw = &red.a * &w;
        }
        if step > cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0 {
            let y = &geo.y0 + &geo.basis * &w;
            if poly.contains(&y) {
                last_good = y;
            }
            kept.extend(last_good.iter());
        }
    }
    let count = kept.len() / n;
    Ok(NullSampleSet {
        samples: DMatrix::from_vec(n, count, kept),
        method: SamplerMethod::HitAndRun,
        acceptance_rate: None,
        proposals: total,
        effective_count: count,
    })
}

pub fn hit_and_run_gaussian<R: Rng + ?Sized>(dataset: &Dataset, poly: &SelectionPolytope, cfg: &SamplerConfig, rng: &mut R) -> Result<NullSampleSet> {
    let law = NullLaw::Gaussian { sigma: dataset.sigma()? };
    hit_and_run(dataset, poly, law, cfg, rng)
}

pub fn hit_and_run_sphere<R: Rng + ?Sized>(dataset: &Dataset, poly: &SelectionPolytope, cfg: &SamplerConfig, rng: &mut R) -> Result<NullSampleSet> {
    hit_and_run(dataset, poly, NullLaw::Sphere, cfg, rng)
}

/// Null draws for a polytope under the dataset's null law, using the method
/// in `cfg`. `Auto` tries accept/reject first and switches to hit-and-run when
/// too few proposals are accepted.
pub fn sample_null<R: Rng + ?Sized>(dataset: &Dataset, poly: &SelectionPolytope, cfg: &SamplerConfig, rng: &mut R) -> Result<NullSampleSet> {
    let law = NullLaw::for_dataset(dataset);
    match cfg.method {
        SamplerMethod::AcceptReject => accept_reject(dataset, &poly.active, &poly.xty, poly, law, cfg, rng),
        SamplerMethod::HitAndRun => hit_and_run(dataset, poly, law, cfg, rng),
        SamplerMethod::Auto => {
            if poly.nrows() == 0 {
                return accept_reject(dataset, &poly.active, &poly.xty, poly, law, cfg, rng);
            }
            match accept_reject(dataset, &poly.active, &poly.xty, poly, law, cfg, rng) {
                Err(Error::LowAcceptance { .. }) => hit_and_run(dataset, poly, law, cfg, rng),
                other => other,
            }
        }
    }
}

/// Feasible step range `[lo, hi]` along direction `alpha = A nu`.
fn line_range(aw: &DVector<f64>, b: &DVector<f64>, alpha: &DVector<f64>) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..alpha.len() {
        let s = (aw[i] - b[i]).max(0.0);
        let a = alpha[i];
        if a > 0.0 {
            lo = lo.max(-s / a);
        } else if a < 0.0 {
            hi = hi.min(s / -a);
        }
    }
    (lo, hi)
}

fn gaussian_move<R: Rng + ?Sized>(rng: &mut R, red: &ReducedPolytope, w: &mut DVector<f64>, aw: &mut DVector<f64>, sigma: f64) -> Result<()> {
    let nu = DVector::from_vec(random_unit(rng, w.len()));
    let alpha = &red.a * &nu;
    let (lo, hi) = line_range(aw, &red.b, &alpha);
    // along w + t nu the law of t is N(-w'nu, sigma^2) cut to [lo, hi]
    let center = -w.dot(&nu);
    let shrink = 1e-12 * (1.0 + w.norm());
    let (lo, hi) = (lo + shrink, hi - shrink);
    if !(hi > lo) {
        return Ok(());
    }
    let z = truncnorm_sample(rng, (lo - center) / sigma, (hi - center) / sigma)?;
    let t = (center + sigma * z).clamp(lo, hi);
    w.axpy(t, &nu, 1.0);
    aw.axpy(t, &alpha, 1.0);
    Ok(())
}

/// Great-circle move: `w(phi) = cos(phi) w + sin(phi) r nu`, with `phi`
/// uniform over the union of feasible arcs.
fn sphere_move<R: Rng + ?Sized>(rng: &mut R, red: &ReducedPolytope, w: &mut DVector<f64>, aw: &mut DVector<f64>, radius: f64) {
    let d = w.len();
    let g: DVector<f64> = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    let unit = &*w / radius;
    let mut nu = &g - &unit * unit.dot(&g);
    let norm = nu.norm();
    if norm < 1e-12 {
        return;
    }
    nu /= norm;
    let anu = &red.a * &nu * radius;
    let tau = std::f64::consts::TAU;
    let mut blocked: Vec<(f64, f64)> = Vec::new();
    for i in 0..anu.len() {
        let (p, q, b) = (aw[i], anu[i], red.b[i]);
        let rho = p.hypot(q);
        if b <= -rho {
            continue;
        }
        if b >= rho {
            return;
        }
        let psi = q.atan2(p);
        let h = (b / rho).acos();
        let start = (psi + h).rem_euclid(tau);
        let len = tau - 2.0 * h;
        if start + len <= tau {
            blocked.push((start, start + len));
        } else {
            blocked.push((start, tau));
            blocked.push((0.0, start + len - tau));
        }
    }
    blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut free: Vec<(f64, f64)> = Vec::new();
    let mut cursor = 0.0;
    for (s, e) in blocked {
        if s > cursor {
            free.push((cursor, s));
        }
        cursor = f64::max(cursor, e);
    }
    if cursor < tau {
        free.push((cursor, tau));
    }
    let total: f64 = free.iter().map(|(s, e)| e - s).sum();
    if !(total > 0.0) {
        return;
    }
    let mut target = rng.random::<f64>() * total;
    let mut phi = 0.0;
    for (s, e) in &free {
        if target <= e - s {
            phi = s + target;
            break;
        }
        target -= e - s;
    }
    let (sn, cs) = phi.sin_cos();
    *w = &*w * cs + &nu * (radius * sn);
    *aw = &*aw * cs + anu * sn;
}
