//! Selection events as polytopes `{y : Gamma y >= u}` inside the affine set
//! `{y : X_E'y = X_E'y_obs}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{residual_column, ActiveSet, Dataset, Projector, SufficientStat, DEGENERATE_TOL};
use crate::paths::{restricted_lasso_path, Algorithm, LassoMode, LassoProblem, ModelPath};

/// Interval that a statistic `w_j'y` of an inactive variable must fall in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableBound {
    pub variable: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPolytope {
    gamma: DMatrix<f64>,
    u: DVector<f64>,
    /// Active set whose sufficient statistic is held fixed.
    pub active: ActiveSet,
    /// `X_E'y` of the observed response, aligned with `active.entries`.
    pub xty: DVector<f64>,
    pub bounds: Vec<VariableBound>,
}

impl SelectionPolytope {
    pub fn new(gamma: DMatrix<f64>, u: DVector<f64>, active: ActiveSet, xty: DVector<f64>) -> Result<Self> {
        if gamma.nrows() != u.len() {
            return invalid(format!("{} constraint rows but {} offsets", gamma.nrows(), u.len()));
        }
        if xty.len() != active.len() {
            return invalid("conditioning statistic does not match the active set");
        }
        Ok(SelectionPolytope { gamma, u, active, xty, bounds: Vec::new() })
    }

    /// No inequality constraints.
    pub fn unconstrained(n: usize, active: ActiveSet, xty: DVector<f64>) -> Self {
        SelectionPolytope { gamma: DMatrix::zeros(0, n), u: DVector::zeros(0), active, xty, bounds: Vec::new() }
    }

    /// Rows `w_j'` and `-w_j'` for every finite bound.
    fn from_bounds(n: usize, rows_of: impl Fn(usize) -> DVector<f64>, bounds: Vec<VariableBound>, active: ActiveSet, xty: DVector<f64>) -> Self {
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut offsets = Vec::new();
        for b in &bounds {
            let w = rows_of(b.variable);
            if b.lower.is_finite() {
                rows.push(w.clone());
                offsets.push(b.lower);
            }
            if b.upper.is_finite() {
                rows.push(-w);
                offsets.push(-b.upper);
            }
        }
        let gamma = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        SelectionPolytope { gamma, u: DVector::from_vec(offsets), active, xty, bounds }
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }
    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }
    pub fn nrows(&self) -> usize {
        self.gamma.nrows()
    }
    pub fn dim(&self) -> usize {
        self.gamma.ncols()
    }

    /// `Gamma y - u`.
    pub fn slack(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.gamma * y - &self.u
    }

    /// True iff `Gamma y >= u` row by row.
    pub fn contains(&self, y: &DVector<f64>) -> bool {
        self.gamma.row_iter().zip(self.u.iter()).all(|(row, &b)| row.transpose().dot(y) >= b)
    }

    pub fn to_json(&self) -> PolytopeJson {
        PolytopeJson {
            gamma: self.gamma.row_iter().map(|r| r.iter().copied().collect()).collect(),
            u: self.u.iter().copied().collect(),
            active: self.active.entries.clone(),
            xty: self.xty.iter().copied().collect(),
            bounds: self
                .bounds
                .iter()
                .map(|b| BoundJson { variable: b.variable, lower: b.lower.is_finite().then_some(b.lower), upper: b.upper.is_finite().then_some(b.upper) })
                .collect(),
        }
    }

    pub fn from_json(json: &PolytopeJson) -> Result<Self> {
        let m = json.gamma.len();
        let n = json.gamma.first().map_or(0, Vec::len);
        if json.gamma.iter().any(|r| r.len() != n) {
            return invalid("ragged constraint matrix");
        }
        let gamma = DMatrix::from_fn(m, n, |i, j| json.gamma[i][j]);
        let mut p = SelectionPolytope::new(
            gamma,
            DVector::from_vec(json.u.clone()),
            ActiveSet { entries: json.active.clone(), includes_intercept: false },
            DVector::from_vec(json.xty.clone()),
        )?;
        p.bounds = json
            .bounds
            .iter()
            .map(|b| VariableBound {
                variable: b.variable,
                lower: b.lower.unwrap_or(f64::NEG_INFINITY),
                upper: b.upper.unwrap_or(f64::INFINITY),
            })
            .collect();
        Ok(p)
    }
}

/// Interchange form: `gamma` is a list of rows; unbounded sides are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeJson {
    pub gamma: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub active: Vec<usize>,
    pub xty: Vec<f64>,
    pub bounds: Vec<BoundJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundJson {
    pub variable: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

fn check_step(path: &ModelPath, k: usize, algorithm: Algorithm) -> Result<()> {
    if path.algorithm != algorithm {
        return invalid(format!("expected a {algorithm:?} path"));
    }
    if k > path.len() {
        return Err(Error::StepOutOfRange { step: k, len: path.len() });
    }
    Ok(())
}

/// The event `{E_k(Y) = E_k}` of a forward stepwise path given `X_{E_k}'Y`.
///
/// For each inactive `j`, step `i < k` requires
/// `|X_j'(y - X_{E_i} beta_i)| <= C_i ||P_perp_{E_i} X_j||`, where `C_i` is the
/// winning normalized score at step `i`; `beta_i` and `C_i` depend on `y` only
/// through `X_{E_k}'y`.
pub fn fs_constraints(dataset: &Dataset, path: &ModelPath, k: usize) -> Result<SelectionPolytope> {
    check_step(path, k, Algorithm::ForwardStepwise)?;
    let ek = path.active_at(k)?.clone();
    let xty = SufficientStat::of(dataset, &ek).xty;
    let outside: Vec<usize> = dataset.candidates().into_iter().filter(|&j| !ek.contains(j)).collect();
    let mut lower = vec![f64::NEG_INFINITY; outside.len()];
    let mut upper = vec![f64::INFINITY; outside.len()];
    let y = dataset.y();
    for i in 0..k {
        let ei = path.active_at(i)?;
        let proj = Projector::for_active(dataset, ei)?;
        let fitted = y - proj.residual(y);
        let resid = proj.residual(y);
        let entrant = path.step(i + 1)?.entered;
        let (r_in, n_in) = residual_column(dataset, &proj, entrant)?;
        let c_star = r_in.dot(&resid).abs() / n_in;
        for (pos, &j) in outside.iter().enumerate() {
            let xj = dataset.x().column(j).into_owned();
            let rj = proj.residual(&xj);
            let s = rj.norm();
            if s <= DEGENERATE_TOL * xj.norm() {
                continue;
            }
            let m = xj.dot(&fitted);
            lower[pos] = lower[pos].max(m - c_star * s);
            upper[pos] = upper[pos].min(m + c_star * s);
        }
    }
    let bounds = outside.iter().zip(lower.iter().zip(&upper)).map(|(&variable, (&lower, &upper))| VariableBound { variable, lower, upper }).collect();
    let x = dataset.x();
    Ok(SelectionPolytope::from_bounds(dataset.n(), |j| x.column(j).into_owned(), bounds, ek, xty))
}

/// The event `{E_k(Y) = E_k}` of a lasso path (exact or grid) given
/// `X_{E_k}'Y`: every inactive `j` satisfies
/// `sup_{l >= l_k}(a_j(l) - l) <= X~_j'y <= inf_{l >= l_k}(a_j(l) + l)`.
pub fn lasso_constraints(dataset: &Dataset, path: &ModelPath, k: usize) -> Result<SelectionPolytope> {
    check_step(path, k, Algorithm::Lasso)?;
    let ek = path.active_at(k)?.clone();
    let xty = SufficientStat::of(dataset, &ek).xty;
    if k == 0 {
        return Ok(SelectionPolytope::unconstrained(dataset.n(), ek, xty));
    }
    let problem = LassoProblem::new(dataset)?;
    let mode = lasso_mode(path)?;
    let rp = restricted_lasso_path(&problem, &ek, &xty, &mode)?;
    let floor = rp.completion_lambda()?;
    let outside: Vec<usize> = dataset.candidates().into_iter().filter(|&j| !ek.contains(j)).collect();
    let (lower, upper) = rp.exclusion_bounds(&outside, &rp.evaluation_points(floor, false))?;
    let bounds = outside.iter().zip(lower.iter().zip(&upper)).map(|(&variable, (&lower, &upper))| VariableBound { variable, lower, upper }).collect();
    let design = problem.design();
    Ok(SelectionPolytope::from_bounds(dataset.n(), |j| design.column(j).into_owned(), bounds, ek, xty))
}

/// Penalty mode a lasso path was computed in.
pub fn lasso_mode(path: &ModelPath) -> Result<LassoMode> {
    let knots = path.knots.as_ref().ok_or_else(|| Error::InvalidInput("lasso path carries no knots".into()))?;
    Ok(if knots.exact { LassoMode::Exact } else { LassoMode::Grid(knots.knots.iter().map(|k| k.lambda).collect()) })
}

/// The event that forward stepwise selects `j_1, ..., j_k` in order with the
/// observed signs, as a polytope in `y` with no conditioning (`u = 0`).
pub fn signed_sequence_constraints(dataset: &Dataset, path: &ModelPath, k: usize) -> Result<SelectionPolytope> {
    check_step(path, k, Algorithm::ForwardStepwise)?;
    let n = dataset.n();
    let y = dataset.y();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for i in 0..k {
        let ei = path.active_at(i)?;
        let proj = Projector::for_active(dataset, ei)?;
        let entrant = path.step(i + 1)?.entered;
        let (r_in, n_in) = residual_column(dataset, &proj, entrant)?;
        let a_in = r_in / n_in;
        let s = if a_in.dot(y) >= 0.0 { 1.0 } else { -1.0 };
        let lead = a_in * s;
        for j in dataset.candidates() {
            if j == entrant || ei.contains(j) {
                continue;
            }
            let Ok((rj, nj)) = residual_column(dataset, &proj, j) else { continue };
            let a = rj / nj;
            rows.push(&lead - &a);
            rows.push(&lead + &a);
        }
        rows.push(lead);
    }
    let gamma = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    SelectionPolytope::new(gamma, DVector::zeros(rows.len()), ActiveSet::empty(), DVector::zeros(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{forward_stepwise, lasso_path};
    use crate::rng::seeded;
    use nalgebra::dvector;
    use rand_distr::{Distribution, StandardNormal};

    fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = seeded(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn observed_response_is_inside() {
        for seed in 0..30 {
            let d = random_dataset(seed, 15, 6);
            let fs = forward_stepwise(&d, 4).unwrap();
            let la = lasso_path(&d, LassoMode::Exact, 4).unwrap();
            for k in 0..=4 {
                assert!(fs_constraints(&d, &fs, k).unwrap().contains(d.y()));
                assert!(signed_sequence_constraints(&d, &fs, k).unwrap().contains(d.y()));
                if k <= la.len() {
                    assert!(lasso_constraints(&d, &la, k).unwrap().contains(d.y()));
                }
            }
        }
    }

    #[test]
    fn row_counts() {
        let d = random_dataset(3, 15, 7);
        let fs = forward_stepwise(&d, 3).unwrap();
        assert_eq!(fs_constraints(&d, &fs, 0).unwrap().nrows(), 0);
        for k in 1..=3 {
            assert_eq!(fs_constraints(&d, &fs, k).unwrap().nrows(), 2 * (7 - k));
        }
        let la = lasso_path(&d, LassoMode::Exact, 3).unwrap();
        for k in 1..=3 {
            assert!(lasso_constraints(&d, &la, k).unwrap().nrows() <= 2 * (7 - k));
        }
    }

    #[test]
    fn identity_design_bounds() {
        // first step picks the largest |y_j|; the rest must be smaller
        let d = Dataset::new(DMatrix::identity(4, 4), dvector![1.0, 3.0, -2.0, 0.5]).unwrap();
        let fs = forward_stepwise(&d, 1).unwrap();
        let poly = fs_constraints(&d, &fs, 1).unwrap();
        for b in &poly.bounds {
            assert!((b.lower + 3.0).abs() < 1e-12 && (b.upper - 3.0).abs() < 1e-12);
        }
        assert!(!poly.contains(&dvector![3.5, 3.0, 0.0, 0.0]));
        assert!(poly.contains(&dvector![-2.9, 3.0, 2.9, 0.0]));
    }

    #[test]
    fn json_round_trip() {
        let d = random_dataset(4, 12, 5);
        let fs = forward_stepwise(&d, 2).unwrap();
        let poly = fs_constraints(&d, &fs, 2).unwrap();
        let text = serde_json::to_string(&poly.to_json()).unwrap();
        let back = SelectionPolytope::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.gamma(), poly.gamma());
        assert_eq!(back.u(), poly.u());
        assert_eq!(back.bounds, poly.bounds);
    }

    #[test]
    fn wrong_algorithm_or_step_is_rejected() {
        let d = random_dataset(5, 12, 5);
        let fs = forward_stepwise(&d, 2).unwrap();
        assert!(lasso_constraints(&d, &fs, 1).is_err());
        assert!(matches!(fs_constraints(&d, &fs, 3), Err(Error::StepOutOfRange { .. })));
    }
}
