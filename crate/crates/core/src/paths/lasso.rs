use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Algorithm, ModelPath, PathStep};
use crate::error::{invalid, Error, Result};
use crate::model::{ActiveSet, Dataset, Projector, SufficientStat};

/// Relative gap below which two path events count as simultaneous.
const EVENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LassoMode {
    /// Exact knots of the piecewise-linear path.
    Exact,
    /// Solutions on a fixed, strictly decreasing grid of penalties.
    Grid(Vec<f64>),
}

/// Solution at one penalty value. `beta` is indexed by design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub lambda: f64,
    pub beta: DVector<f64>,
    /// Support after any event at this knot, in entry order.
    pub active: Vec<usize>,
}

/// Knots of a lasso path. In exact mode the last knot may sit at
/// `lambda = 0`, the least-squares end of the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoKnots {
    pub exact: bool,
    pub knots: Vec<Knot>,
}

/// Lasso in Gram form, with the forced-in columns projected out so they are
/// left unpenalized.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    design: DMatrix<f64>,
    gram: DMatrix<f64>,
    base: Vec<usize>,
    base_proj: Projector,
    raw: DMatrix<f64>,
    candidates: Vec<usize>,
}

impl LassoProblem {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let base = dataset.base_active().entries;
        let base_proj = Projector::new(&dataset.columns(&base))?;
        let mut design = base_proj.residual_matrix(dataset.x());
        for &b in &base {
            design.column_mut(b).fill(0.0);
        }
        let gram = design.tr_mul(&design);
        Ok(LassoProblem { design, gram, base, base_proj, raw: dataset.x().clone(), candidates: dataset.candidates() })
    }

    /// Columns with the forced-in set projected out.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    /// Projected correlations `X~_j'y` for every candidate column.
    pub fn correlations(&self, y: &DVector<f64>) -> DVector<f64> {
        self.design.tr_mul(y)
    }

    /// Projected correlations of the members of `active` computed from
    /// `u = X_E'y` alone.
    pub fn correlations_from_stat(&self, active: &ActiveSet, u: &DVector<f64>) -> Result<DVector<f64>> {
        let u0 = self
            .base
            .iter()
            .map(|b| {
                active
                    .entries
                    .iter()
                    .position(|e| e == b)
                    .map(|i| u[i])
                    .ok_or_else(|| Error::ReconstructionFailure("forced-in column missing from the active set".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        // P_0 y is determined by u0, and X~_j'y = X_j'y - X_j'P_0 y
        let y0 = self.base_proj.min_norm_point(&DVector::from_vec(u0));
        let mut out = DVector::zeros(active.len());
        for (i, &j) in active.entries.iter().enumerate() {
            if !self.base.contains(&j) {
                out[i] = u[i] - self.raw.column(j).dot(&y0);
            }
        }
        Ok(out)
    }

    /// Ever-active entry order of the first `k` entries for a response with
    /// projected correlations `c`.
    pub fn entry_order(&self, c: &DVector<f64>, mode: &LassoMode, k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let cands = &self.candidates;
        let g = self.gram.select_rows(cands).select_columns(cands);
        let cl = DVector::from_iterator(cands.len(), cands.iter().map(|&j| c[j]));
        match mode {
            LassoMode::Exact => {
                let knots = homotopy(&g, &cl, cands, Stop { max_entries: Some(k), floor: 0.0 })?;
                let (order, lambdas) = entries_from_knots(&knots, k);
                Ok((order.into_iter().map(|i| cands[i]).collect(), lambdas))
            }
            LassoMode::Grid(grid) => {
                let knots = homotopy(&g, &cl, cands, Stop { max_entries: None, floor: *grid.last().unwrap() })?;
                let (order, lambdas) = grid_entries(&knots, grid, k, cands.len())?;
                Ok((order.into_iter().map(|i| cands[i]).collect(), lambdas))
            }
        }
    }

    /// Penalties at which the ever-active set first reaches sizes `1..=k`.
    /// Unlike [`LassoProblem::entry_order`], simultaneous entries on a grid
    /// are allowed.
    pub fn entry_lambdas(&self, c: &DVector<f64>, mode: &LassoMode, k: usize) -> Result<Vec<f64>> {
        match mode {
            LassoMode::Exact => Ok(self.entry_order(c, mode, k)?.1),
            LassoMode::Grid(grid) => {
                let cands = &self.candidates;
                let g = self.gram.select_rows(cands).select_columns(cands);
                let cl = DVector::from_iterator(cands.len(), cands.iter().map(|&j| c[j]));
                let knots = homotopy(&g, &cl, cands, Stop { max_entries: None, floor: *grid.last().unwrap() })?;
                let (_, mut lambdas) = grid_entries_with(&knots, grid, k, cands.len(), true)?;
                lambdas.truncate(k);
                Ok(lambdas)
            }
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return invalid("penalty grid is empty");
    }
    if grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return invalid("penalty grid values must be positive and finite");
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("penalty grid must be strictly decreasing");
    }
    Ok(())
}

/// Lasso path over the candidate columns, stopped after `steps` ever-active
/// entries.
pub fn lasso_path(dataset: &Dataset, mode: LassoMode, steps: usize) -> Result<ModelPath> {
    if steps == 0 {
        return invalid("number of steps must be positive");
    }
    if let LassoMode::Grid(g) = &mode {
        check_grid(g)?;
    }
    let problem = LassoProblem::new(dataset)?;
    let cands = problem.candidates.clone();
    if steps > cands.len() {
        return invalid(format!("{steps} steps exceed the {} candidate columns", cands.len()));
    }
    let g = problem.gram.select_rows(&cands).select_columns(&cands);
    let c_all = problem.correlations(dataset.y());
    let c = DVector::from_iterator(cands.len(), cands.iter().map(|&j| c_all[j]));
    let (local_knots, order, lambdas, exact) = match &mode {
        LassoMode::Exact => {
            let knots = homotopy(&g, &c, &cands, Stop { max_entries: Some(steps), floor: 0.0 })?;
            let (order, lambdas) = entries_from_knots(&knots, steps);
            (knots, order, lambdas, true)
        }
        LassoMode::Grid(grid) => {
            let knots = homotopy(&g, &c, &cands, Stop { max_entries: None, floor: *grid.last().unwrap() })?;
            let (order, lambdas) = grid_entries(&knots, grid, steps, cands.len())?;
            let on_grid = grid
                .iter()
                .map(|&l| {
                    let beta = interpolate(&knots, l, cands.len())?;
                    Ok(LocalKnot { lambda: l, active: support(&beta), beta })
                })
                .collect::<Result<Vec<_>>>()?;
            (on_grid, order, lambdas, false)
        }
    };
    let p = dataset.p();
    let knots = local_knots
        .iter()
        .map(|k| {
            let mut beta = DVector::zeros(p);
            for (i, &j) in cands.iter().enumerate() {
                beta[j] = k.beta[i];
            }
            Knot { lambda: k.lambda, beta, active: k.active.iter().map(|&i| cands[i]).collect() }
        })
        .collect();
    let base = dataset.base_active();
    let mut active = base.clone();
    let steps_out = order
        .iter()
        .zip(&lambdas)
        .enumerate()
        .map(|(i, (&j, &l))| {
            active = active.with(cands[j]);
            PathStep { k: i + 1, entered: cands[j], statistic: l, lambda: Some(l), active_after: active.clone() }
        })
        .collect();
    Ok(ModelPath {
        algorithm: Algorithm::Lasso,
        base,
        steps: steps_out,
        requested: steps,
        knots: Some(LassoKnots { exact, knots }),
    })
}

/// Lasso path restricted to the penalized members of an active set, built
/// from `u = X_E'y` only. This is the path the full problem follows for
/// penalties above the point where the set is completed.
#[derive(Debug, Clone)]
pub struct RestrictedPath {
    members: Vec<usize>,
    gram_rows: DMatrix<f64>,
    knots: Vec<LocalKnot>,
    grid: Option<Vec<f64>>,
}

pub fn restricted_lasso_path(
    problem: &LassoProblem,
    active: &ActiveSet,
    u: &DVector<f64>,
    mode: &LassoMode,
) -> Result<RestrictedPath> {
    if u.len() != active.len() {
        return invalid("sufficient statistic does not match the active set");
    }
    let c_active = problem.correlations_from_stat(active, u)?;
    let idx: Vec<usize> = (0..active.len()).filter(|&i| !problem.base.contains(&active.entries[i])).collect();
    let members: Vec<usize> = idx.iter().map(|&i| active.entries[i]).collect();
    let c = DVector::from_iterator(idx.len(), idx.iter().map(|&i| c_active[i]));
    let g = problem.gram.select_rows(&members).select_columns(&members);
    let knots = if members.is_empty() {
        Vec::new()
    } else {
        homotopy(&g, &c, &members, Stop { max_entries: None, floor: 0.0 })?
    };
    let grid = match mode {
        LassoMode::Exact => None,
        LassoMode::Grid(g) => {
            check_grid(g)?;
            Some(g.clone())
        }
    };
    let gram_rows = problem.gram.select_columns(&members);
    Ok(RestrictedPath { members, gram_rows, knots, grid })
}

impl RestrictedPath {
    /// Penalized members, in the path's own entry order.
    pub fn entry_order(&self) -> Vec<usize> {
        let (order, _) = entries_from_knots(&self.knots, self.members.len());
        order.into_iter().map(|i| self.members[i]).collect()
    }

    /// Penalty at which the path has picked up every member: the exact entry
    /// knot or, on a grid, the first grid value whose solution does so.
    pub fn completion_lambda(&self) -> Result<f64> {
        let m = self.members.len();
        if m == 0 {
            return Ok(f64::INFINITY);
        }
        match &self.grid {
            None => {
                let (order, lambdas) = entries_from_knots(&self.knots, m);
                if order.len() < m {
                    return Err(Error::ReconstructionFailure("restricted path never activates every member".into()));
                }
                Ok(lambdas[m - 1])
            }
            Some(grid) => {
                let (order, lambdas) = grid_entries(&self.knots, grid, m, m)?;
                if order.len() < m {
                    return Err(Error::ReconstructionFailure("restricted path never activates every member on the grid".into()));
                }
                Ok(lambdas[m - 1])
            }
        }
    }

    /// Penalties at which the exclusion bounds must be checked: path knots
    /// (or grid values) at or above `floor` (strictly above when `strict`),
    /// plus `floor` itself in exact mode.
    pub fn evaluation_points(&self, floor: f64, strict: bool) -> Vec<f64> {
        let keep = |l: f64| if strict { l > floor } else { l >= floor };
        match &self.grid {
            None => {
                let mut pts: Vec<f64> = self.knots.iter().map(|k| k.lambda).filter(|&l| keep(l)).collect();
                if !strict && floor.is_finite() && pts.last().is_none_or(|&l| l > floor) {
                    pts.push(floor);
                }
                pts
            }
            Some(grid) => grid.iter().copied().filter(|&l| keep(l)).collect(),
        }
    }

    /// Solution of the restricted problem at penalty `lambda`, by member.
    pub fn theta(&self, lambda: f64) -> Result<DVector<f64>> {
        interpolate(&self.knots, lambda, self.members.len())
    }

    /// For each column in `outside`, the interval `(v-, v+)` that `X~_j'y`
    /// must lie in for `j` to stay inactive at every penalty in `lambdas`:
    /// `v- = max(a_j(l) - l)`, `v+ = min(a_j(l) + l)`, `a_j(l) = X~_j'X~_E theta(l)`.
    pub fn exclusion_bounds(&self, outside: &[usize], lambdas: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lower = vec![f64::NEG_INFINITY; outside.len()];
        let mut upper = vec![f64::INFINITY; outside.len()];
        for &l in lambdas {
            let theta = self.theta(l)?;
            for (i, &j) in outside.iter().enumerate() {
                let a = if self.members.is_empty() { 0.0 } else { self.gram_rows.row(j).transpose().dot(&theta) };
                lower[i] = lower[i].max(a - l);
                upper[i] = upper[i].min(a + l);
            }
        }
        Ok((lower, upper))
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }
}

pub(super) fn reconstruct(dataset: &Dataset, active: &ActiveSet, suff: &SufficientStat) -> Result<Vec<usize>> {
    let problem = LassoProblem::new(dataset)?;
    let path = restricted_lasso_path(&problem, active, &suff.xty, &LassoMode::Exact)
        .map_err(|e| Error::ReconstructionFailure(e.to_string()))?;
    let order = path.entry_order();
    if order.len() != path.members.len() {
        return Err(Error::ReconstructionFailure("restricted path never activates every member".into()));
    }
    Ok(order)
}

/// Knot in the local index space of a homotopy run.
#[derive(Debug, Clone)]
struct LocalKnot {
    lambda: f64,
    beta: DVector<f64>,
    active: Vec<usize>,
}

struct Stop {
    max_entries: Option<usize>,
    floor: f64,
}

/// LARS-lasso homotopy on `(G, c)`. `names` maps local indices to design
/// columns for error messages.
fn homotopy(g: &DMatrix<f64>, c: &DVector<f64>, names: &[usize], stop: Stop) -> Result<Vec<LocalKnot>> {
    let m = c.len();
    let mut knots = Vec::new();
    if m == 0 {
        return Ok(knots);
    }
    let (j0, lam0) = c.iter().enumerate().map(|(j, v)| (j, v.abs())).fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
    if lam0 == 0.0 {
        return Ok(knots);
    }
    if let Some((j1, _)) = c.iter().enumerate().find(|&(j, v)| j != j0 && lam0 - v.abs() <= EVENT_TOL * lam0) {
        return Err(Error::Tie(names[j0].min(names[j1]), names[j0].max(names[j1])));
    }
    let mut active = vec![j0];
    let mut signs = vec![c[j0].signum()];
    let mut ever = vec![false; m];
    ever[j0] = true;
    let mut entries = 1;
    let mut lambda = lam0;
    let mut beta = DVector::zeros(m);
    knots.push(LocalKnot { lambda, beta: beta.clone(), active: active.clone() });
    let done = |entries: usize, lambda: f64| stop.max_entries.is_some_and(|k| entries >= k) || lambda <= stop.floor;
    if done(entries, lambda) {
        return Ok(knots);
    }

    loop {
        let gaa = g.select_rows(&active).select_columns(&active);
        let chol = gaa.cholesky().ok_or_else(|| {
            Error::NonUniqueSolution(format!("active columns {:?} are linearly dependent", active.iter().map(|&i| names[i]).collect::<Vec<_>>()))
        })?;
        let ca = DVector::from_iterator(active.len(), active.iter().map(|&i| c[i]));
        let sa = DVector::from_vec(signs.clone());
        let e = chol.solve(&ca);
        let f = chol.solve(&sa);

        let ceiling = lambda * (1.0 - EVENT_TOL);
        // (lambda, variable, entering sign or 0 for a drop)
        let mut events: Vec<(f64, usize, f64)> = Vec::new();
        for j in 0..m {
            if active.contains(&j) {
                continue;
            }
            let gja = DVector::from_iterator(active.len(), active.iter().map(|&i| g[(j, i)]));
            let a = c[j] - gja.dot(&e);
            let b = gja.dot(&f);
            for s in [1.0, -1.0] {
                // a + l b = s l
                let den = s - b;
                if den.abs() < 1e-14 {
                    continue;
                }
                let cand = a / den;
                if cand > 0.0 && cand < ceiling {
                    events.push((cand, j, s));
                }
            }
        }
        for (pos, &i) in active.iter().enumerate() {
            if f[pos].abs() < 1e-300 {
                continue;
            }
            let cand = e[pos] / f[pos];
            if cand > 0.0 && cand < ceiling {
                events.push((cand, i, 0.0));
            }
        }
        if events.is_empty() {
            beta.fill(0.0);
            for (pos, &i) in active.iter().enumerate() {
                beta[i] = e[pos];
            }
            knots.push(LocalKnot { lambda: 0.0, beta: beta.clone(), active: active.clone() });
            return Ok(knots);
        }
        events.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (next, j, s) = events[0];
        if let Some(&(l2, j2, _)) = events.iter().skip(1).find(|ev| ev.1 != j) {
            if next - l2 <= EVENT_TOL * next {
                return Err(Error::Tie(names[j].min(names[j2]), names[j].max(names[j2])));
            }
        }
        beta.fill(0.0);
        for (pos, &i) in active.iter().enumerate() {
            beta[i] = e[pos] - next * f[pos];
        }
        if s == 0.0 {
            let pos = active.iter().position(|&i| i == j).unwrap();
            active.remove(pos);
            signs.remove(pos);
            beta[j] = 0.0;
        } else {
            active.push(j);
            signs.push(s);
            if !ever[j] {
                ever[j] = true;
                entries += 1;
            }
        }
        lambda = next;
        knots.push(LocalKnot { lambda, beta: beta.clone(), active: active.clone() });
        if done(entries, lambda) {
            return Ok(knots);
        }
    }
}

/// Ever-active entries read off exact knots: first appearances in order.
fn entries_from_knots(knots: &[LocalKnot], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut order = Vec::new();
    let mut lambdas = Vec::new();
    for knot in knots {
        for &j in &knot.active {
            if !order.contains(&j) && order.len() < k {
                order.push(j);
                lambdas.push(knot.lambda);
            }
        }
    }
    (order, lambdas)
}

/// Ever-active entries on a grid.
fn grid_entries(knots: &[LocalKnot], grid: &[f64], k: usize, m: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    grid_entries_with(knots, grid, k, m, false)
}

/// With `allow_ties`, variables appearing at the same grid point are listed in
/// index order with a shared penalty.
fn grid_entries_with(knots: &[LocalKnot], grid: &[f64], k: usize, m: usize, allow_ties: bool) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut order: Vec<usize> = Vec::new();
    let mut lambdas = Vec::new();
    for &l in grid {
        if order.len() >= k {
            break;
        }
        let beta = interpolate(knots, l, m)?;
        let new: Vec<usize> = support(&beta).into_iter().filter(|j| !order.contains(j)).collect();
        match new.len() {
            0 => {}
            1 => {
                order.push(new[0]);
                lambdas.push(l);
            }
            _ if allow_ties => {
                lambdas.extend(std::iter::repeat_n(l, new.len()));
                order.extend(new);
            }
            _ => return Err(Error::SimultaneousEntry(l)),
        }
    }
    Ok((order, lambdas))
}

fn support(beta: &DVector<f64>) -> Vec<usize> {
    beta.iter().enumerate().filter(|(_, &b)| b != 0.0).map(|(j, _)| j).collect()
}

fn interpolate(knots: &[LocalKnot], lambda: f64, m: usize) -> Result<DVector<f64>> {
    let Some(first) = knots.first() else { return Ok(DVector::zeros(m)) };
    if lambda >= first.lambda {
        return Ok(DVector::zeros(m));
    }
    for w in knots.windows(2) {
        let (hi, lo) = (&w[0], &w[1]);
        if lambda <= hi.lambda && lambda >= lo.lambda {
            if lambda == lo.lambda {
                return Ok(lo.beta.clone());
            }
            let t = (hi.lambda - lambda) / (hi.lambda - lo.lambda);
            let mut beta = &hi.beta * (1.0 - t) + &lo.beta * t;
            // members inactive on the whole segment stay exactly zero
            for j in 0..m {
                if hi.beta[j] == 0.0 && lo.beta[j] == 0.0 {
                    beta[j] = 0.0;
                }
            }
            return Ok(beta);
        }
    }
    Err(Error::InvalidInput(format!("penalty {lambda} lies below the computed part of the path")))
}
