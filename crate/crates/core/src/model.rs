//! Regression data, active sets, sufficient statistics and least-squares fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative threshold below which a projected column counts as zero.
pub const DEGENERATE_TOL: f64 = 1e-10;

/// A design matrix and response, with optional known noise variance.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    sigma2: Option<f64>,
    column_names: Vec<String>,
    intercept: Option<usize>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return invalid(format!("design has {} rows but response has {} entries", x.nrows(), y.len()));
        }
        if x.nrows() < 2 || x.ncols() == 0 {
            return invalid("need at least two observations and one column");
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return invalid("design and response must be finite");
        }
        let column_names = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        Ok(Dataset { x, y, sigma2: None, column_names, intercept: None })
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return invalid(format!("noise variance must be positive, got {sigma2}"));
        }
        self.sigma2 = Some(sigma2);
        Ok(self)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.ncols() {
            return invalid(format!("{} names for {} columns", names.len(), self.x.ncols()));
        }
        self.column_names = names;
        Ok(self)
    }

    /// Append a column of ones that is forced into every model.
    pub fn with_intercept(mut self) -> Self {
        if self.intercept.is_some() {
            return self;
        }
        let p = self.x.ncols();
        self.x = self.x.insert_column(p, 1.0);
        self.column_names.push("(intercept)".into());
        self.intercept = Some(p);
        self
    }

    /// Rescale every column to unit Euclidean norm.
    pub fn normalized(mut self) -> Result<Self> {
        for j in 0..self.x.ncols() {
            let norm = self.x.column(j).norm();
            if norm == 0.0 {
                return Err(Error::SingularDesign(format!("column {j} is identically zero")));
            }
            self.x.column_mut(j).scale_mut(1.0 / norm);
        }
        Ok(self)
    }

    /// Declare an existing column as the forced-in intercept.
    pub fn mark_intercept(mut self, column: Option<usize>) -> Self {
        self.intercept = column.filter(|&c| c < self.x.ncols());
        self
    }

    /// Drop the noise variance, switching to the unknown-variance null law.
    pub fn without_sigma2(mut self) -> Self {
        self.sigma2 = None;
        self
    }

    /// Same design and metadata with a different response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return invalid("response length does not match design");
        }
        Ok(Dataset { y, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn sigma2(&self) -> Option<f64> {
        self.sigma2
    }
    pub fn sigma(&self) -> Result<f64> {
        self.sigma2.map(f64::sqrt).ok_or(Error::MissingSigma2)
    }
    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }
    pub fn intercept_column(&self) -> Option<usize> {
        self.intercept
    }

    /// Columns eligible to enter a path (everything but the intercept).
    pub fn candidates(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| Some(j) != self.intercept).collect()
    }

    /// The forced-in set E_0.
    pub fn base_active(&self) -> ActiveSet {
        match self.intercept {
            Some(j) => ActiveSet { entries: vec![j], includes_intercept: true },
            None => ActiveSet::empty(),
        }
    }

    pub fn columns(&self, idx: &[usize]) -> DMatrix<f64> {
        self.x.select_columns(idx)
    }

    pub fn sufficient_stat(&self, active: &ActiveSet) -> SufficientStat {
        SufficientStat::of(self, active)
    }
}

/// Ordered list of active variables; order is entry order along a path.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActiveSet {
    pub entries: Vec<usize>,
    pub includes_intercept: bool,
}

impl ActiveSet {
    pub fn empty() -> Self {
        ActiveSet::default()
    }

    pub fn from_entries(entries: Vec<usize>, dataset: &Dataset) -> Result<Self> {
        let mut seen = vec![false; dataset.p()];
        for &j in &entries {
            if j >= dataset.p() {
                return invalid(format!("column index {j} out of range"));
            }
            if std::mem::replace(&mut seen[j], true) {
                return invalid(format!("column {j} listed twice"));
            }
        }
        let includes_intercept = dataset.intercept_column().is_some_and(|c| entries.contains(&c));
        Ok(ActiveSet { entries, includes_intercept })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn contains(&self, j: usize) -> bool {
        self.entries.contains(&j)
    }
    pub fn as_slice(&self) -> &[usize] {
        &self.entries
    }

    pub fn with(&self, j: usize) -> ActiveSet {
        let mut e = self.clone();
        e.entries.push(j);
        e
    }

    /// Same members regardless of order.
    pub fn same_set(&self, other: &ActiveSet) -> bool {
        let mut a = self.entries.clone();
        let mut b = other.entries.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }
}

/// `X_E'y`, listed in the order of the active set, plus `||y||^2` when the
/// noise variance is unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStat {
    pub xty: DVector<f64>,
    pub y_norm_sq: Option<f64>,
}

impl SufficientStat {
    pub fn of(dataset: &Dataset, active: &ActiveSet) -> Self {
        let xe = dataset.columns(active.as_slice());
        let xty = xe.tr_mul(dataset.y());
        let y_norm_sq = dataset.sigma2().is_none().then(|| dataset.y().norm_squared());
        SufficientStat { xty, y_norm_sq }
    }
}

/// Least-squares coefficients and residual sum of squares.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
}

/// Orthonormal basis of `span(X_E)`, used for projections.
#[derive(Debug, Clone)]
pub struct Projector {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Projector {
    pub fn new(xe: &DMatrix<f64>) -> Result<Self> {
        let n = xe.nrows();
        if xe.ncols() == 0 {
            return Ok(Projector { q: DMatrix::zeros(n, 0), r: DMatrix::zeros(0, 0) });
        }
        if xe.ncols() > n {
            return Err(Error::SingularDesign(format!("{} columns exceed {} observations", xe.ncols(), n)));
        }
        let qr = xe.clone().qr();
        let r = qr.r();
        for i in 0..r.ncols() {
            let scale = xe.column(i).norm().max(f64::MIN_POSITIVE);
            if r[(i, i)].abs() <= DEGENERATE_TOL * scale {
                return Err(Error::SingularDesign(format!("column {i} of the active design is dependent on earlier ones")));
            }
        }
        Ok(Projector { q: qr.q(), r })
    }

    pub fn for_active(dataset: &Dataset, active: &ActiveSet) -> Result<Self> {
        Projector::new(&dataset.columns(active.as_slice())).map_err(|e| match e {
            Error::SingularDesign(_) => Error::SingularDesign(format!("active set {:?} is rank deficient", active.entries)),
            e => e,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// `P_perp v`.
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return v.clone();
        }
        let c = self.q.tr_mul(v);
        v - &self.q * c
    }

    /// `P_perp X` column by column.
    pub fn residual_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.q.ncols() == 0 {
            return m.clone();
        }
        let c = self.q.tr_mul(m);
        m - &self.q * c
    }

    /// Least-squares coefficients for a response.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return DVector::zeros(0);
        }
        let qty = self.q.tr_mul(y);
        self.r.solve_upper_triangular(&qty).expect("checked nonsingular")
    }

    /// The point `X_E (X_E'X_E)^{-1} u`, the minimum-norm `y` with `X_E'y = u`.
    pub fn min_norm_point(&self, u: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return DVector::zeros(self.q.nrows());
        }
        let a = self.r.tr_solve_upper_triangular(u).expect("checked nonsingular");
        &self.q * a
    }
}

/// Least squares of `y` on `X_E` via QR.
pub fn fit_least_squares(dataset: &Dataset, active: &ActiveSet) -> Result<LeastSquaresFit> {
    let proj = Projector::for_active(dataset, active)?;
    let coefficients = proj.solve(dataset.y());
    let residuals = proj.residual(dataset.y());
    let rss = residuals.norm_squared();
    Ok(LeastSquaresFit { coefficients, residuals, rss })
}

fn check_candidate(dataset: &Dataset, active: &ActiveSet, j: usize) -> Result<()> {
    if j >= dataset.p() {
        return invalid(format!("column index {j} out of range"));
    }
    if active.contains(j) {
        return invalid(format!("variable {j} is already active"));
    }
    Ok(())
}

/// Residualized column `P_perp_E X_j` and its norm, rejecting degenerate ones.
pub(crate) fn residual_column(dataset: &Dataset, proj: &Projector, j: usize) -> Result<(DVector<f64>, f64)> {
    let xj = dataset.x().column(j).into_owned();
    let r = proj.residual(&xj);
    let norm = r.norm();
    if norm <= DEGENERATE_TOL * xj.norm() || norm == 0.0 {
        return Err(Error::DegenerateVariable(j));
    }
    Ok((r, norm))
}

/// Partial t-statistic of variable `j` added to `E`, with
/// `t^2 = (n - |E| - 1)(RSS_E - RSS_{E+j}) / RSS_{E+j}` and the sign of its
/// coefficient. Returns a signed infinity when the enlarged fit is exact.
pub fn t_statistic(dataset: &Dataset, active: &ActiveSet, j: usize) -> Result<f64> {
    check_candidate(dataset, active, j)?;
    let n = dataset.n();
    if n <= active.len() + 1 {
        return invalid(format!("need n > |E| + 1, have n = {n}, |E| = {}", active.len()));
    }
    let proj = Projector::for_active(dataset, active)?;
    let (r, rnorm) = residual_column(dataset, &proj, j)?;
    let resid = proj.residual(dataset.y());
    let rss_e = resid.norm_squared();
    let proj_coef = r.dot(&resid) / rnorm;
    let drop = proj_coef * proj_coef;
    let rss_ej = (rss_e - drop).max(0.0);
    let sign = if proj_coef >= 0.0 { 1.0 } else { -1.0 };
    if rss_ej <= 1e-14 * rss_e.max(f64::MIN_POSITIVE) {
        return Ok(sign * f64::INFINITY);
    }
    let df = (n - active.len() - 1) as f64;
    Ok(sign * (df * drop / rss_ej).sqrt())
}

/// z-statistic `X_j'(y - X_E beta_E) / (sigma ||P_perp_E X_j||)`.
pub fn z_statistic(dataset: &Dataset, active: &ActiveSet, j: usize) -> Result<f64> {
    check_candidate(dataset, active, j)?;
    let sigma = dataset.sigma()?;
    let proj = Projector::for_active(dataset, active)?;
    let (r, rnorm) = residual_column(dataset, &proj, j)?;
    Ok(r.dot(dataset.y()) / (sigma * rnorm))
}
