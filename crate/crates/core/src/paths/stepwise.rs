use nalgebra::{DMatrix, DVector};

use super::{Algorithm, ModelPath, PathStep};
use crate::error::{invalid, Error, Result};
use crate::model::{ActiveSet, Dataset, SufficientStat, DEGENERATE_TOL};

const TIE_TOL: f64 = 1e-12;

/// Greedy forward stepwise selection by largest `|t|` (equivalently, largest
/// drop in RSS) for `steps` steps.
///
/// At most `min(n - |E0| - 2, p)` steps, so every step keeps residual degrees
/// of freedom. With a known noise variance the limit is `min(n - |E0|, p)`.
pub fn forward_stepwise(dataset: &Dataset, steps: usize) -> Result<ModelPath> {
    let base = dataset.base_active();
    let cands = dataset.candidates();
    let n = dataset.n();
    if steps == 0 {
        return invalid("number of steps must be positive");
    }
    let reserve = if dataset.sigma2().is_some() { 0 } else { 2 };
    if steps + base.len() + reserve > n || steps > cands.len() {
        return invalid(format!(
            "{steps} steps exceed min(n - |E0| - {reserve}, p) = {}",
            (n.saturating_sub(base.len() + reserve)).min(cands.len())
        ));
    }
    let run = run_stepwise(dataset.x(), dataset.y(), &base.entries, &cands, steps)?;
    let mut active = base.clone();
    let mut out = Vec::with_capacity(run.entrants.len());
    for (i, (&j, &score)) in run.entrants.iter().zip(&run.scores).enumerate() {
        let rss = run.rss_before[i];
        let df = (n - active.len() - 1) as f64;
        let rest = rss - score;
        let t = if rest <= 1e-14 * rss { f64::INFINITY } else { (df * score / rest).sqrt() };
        active = active.with(j);
        out.push(PathStep { k: i + 1, entered: j, statistic: t, lambda: None, active_after: active.clone() });
    }
    Ok(ModelPath { algorithm: Algorithm::ForwardStepwise, base, steps: out, requested: steps, knots: None })
}

/// Entry order of the first `steps` stepwise steps for an arbitrary response.
/// Used to rerun a path on resampled data.
pub fn stepwise_entry_order(dataset: &Dataset, y: &DVector<f64>, steps: usize) -> Result<Vec<usize>> {
    let base = dataset.base_active();
    let run = run_stepwise(dataset.x(), y, &base.entries, &dataset.candidates(), steps)?;
    Ok(run.entrants)
}

struct StepwiseRun {
    entrants: Vec<usize>,
    /// Squared projection of the residual on the entrant's residualized column.
    scores: Vec<f64>,
    rss_before: Vec<f64>,
}

/// Modified Gram-Schmidt on the columns, keeping `P_perp X` and `P_perp y`
/// current as variables enter.
fn run_stepwise(x: &DMatrix<f64>, y: &DVector<f64>, base: &[usize], cands: &[usize], steps: usize) -> Result<StepwiseRun> {
    let n = x.nrows();
    let p = x.ncols();
    let mut r = x.clone();
    let mut res = y.clone();
    let col_norm: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();
    let mut qs: Vec<DVector<f64>> = Vec::new();
    let mut active = vec![false; p];

    let absorb = |j: usize, r: &mut DMatrix<f64>, res: &mut DVector<f64>, qs: &mut Vec<DVector<f64>>| -> Result<()> {
        let mut q = r.column(j).into_owned();
        for prev in qs.iter() {
            let c = prev.dot(&q);
            q.axpy(-c, prev, 1.0);
        }
        let norm = q.norm();
        if norm <= DEGENERATE_TOL * col_norm[j] || norm == 0.0 {
            return Err(Error::SingularDesign(format!("column {j} is dependent on the active set")));
        }
        q /= norm;
        for l in 0..p {
            let c = q.dot(&r.column(l));
            r.column_mut(l).axpy(-c, &q, 1.0);
        }
        let c = q.dot(res);
        res.axpy(-c, &q, 1.0);
        qs.push(q);
        Ok(())
    };

    for &b in base {
        absorb(b, &mut r, &mut res, &mut qs)?;
        active[b] = true;
    }

    let mut run = StepwiseRun { entrants: Vec::new(), scores: Vec::new(), rss_before: Vec::new() };
    for _ in 0..steps {
        let mut best: Option<(usize, f64)> = None;
        let mut second: Option<(usize, f64)> = None;
        for &l in cands {
            if active[l] {
                continue;
            }
            let col = r.column(l);
            let nrm2 = col.norm_squared();
            if nrm2.sqrt() <= DEGENERATE_TOL * col_norm[l] || nrm2 == 0.0 {
                continue;
            }
            let proj = col.dot(&res);
            let score = proj * proj / nrm2;
            match best {
                Some((_, s)) if score <= s => {
                    if second.is_none_or(|(_, s2)| score > s2) {
                        second = Some((l, score));
                    }
                }
                _ => {
                    second = best;
                    best = Some((l, score));
                }
            }
        }
        let Some((j, score)) = best else { break };
        if let Some((j2, s2)) = second {
            if score - s2 <= TIE_TOL * score.max(f64::MIN_POSITIVE) {
                return Err(Error::Tie(j.min(j2), j.max(j2)));
            }
        }
        run.rss_before.push(res.norm_squared());
        run.entrants.push(j);
        run.scores.push(score);
        active[j] = true;
        if run.entrants.len() < steps && qs.len() + 1 < n {
            absorb(j, &mut r, &mut res, &mut qs)?;
        } else if run.entrants.len() < steps {
            break;
        }
    }
    Ok(run)
}

/// Stepwise order recovered from the Gram matrix of `E` and `X_E'y`.
pub(super) fn reconstruct(dataset: &Dataset, active: &ActiveSet, suff: &SufficientStat) -> Result<Vec<usize>> {
    let e = &active.entries;
    let xe = dataset.columns(e);
    let g = xe.tr_mul(&xe);
    let c = &suff.xty;
    let base_pos: Vec<usize> = dataset.base_active().entries.iter().map(|b| e.iter().position(|x| x == b).unwrap()).collect();
    let mut chosen: Vec<usize> = base_pos.clone();
    let mut order = Vec::new();
    while chosen.len() < e.len() {
        let (gdd_chol, cd) = if chosen.is_empty() {
            (None, DVector::zeros(0))
        } else {
            let gdd = g.select_rows(&chosen).select_columns(&chosen);
            let chol = gdd
                .cholesky()
                .ok_or_else(|| Error::ReconstructionFailure("Gram matrix of the active set is singular".into()))?;
            (Some(chol), DVector::from_iterator(chosen.len(), chosen.iter().map(|&i| c[i])))
        };
        let mut best: Option<(usize, f64)> = None;
        let mut second = f64::NEG_INFINITY;
        for i in 0..e.len() {
            if chosen.contains(&i) {
                continue;
            }
            let (num, den) = match &gdd_chol {
                None => (c[i], g[(i, i)]),
                Some(chol) => {
                    let gdi = DVector::from_iterator(chosen.len(), chosen.iter().map(|&d| g[(d, i)]));
                    let a = chol.solve(&gdi);
                    (c[i] - a.dot(&cd), g[(i, i)] - a.dot(&gdi))
                }
            };
            if den <= (DEGENERATE_TOL * DEGENERATE_TOL) * g[(i, i)] {
                continue;
            }
            let score = num * num / den;
            match best {
                Some((_, s)) if score <= s => second = second.max(score),
                _ => {
                    if let Some((_, s)) = best {
                        second = second.max(s);
                    }
                    best = Some((i, score));
                }
            }
        }
        let (i, s) = best.ok_or_else(|| Error::ReconstructionFailure("no admissible variable left".into()))?;
        if s - second <= TIE_TOL * s {
            return Err(Error::ReconstructionFailure("tie in reconstructed order".into()));
        }
        chosen.push(i);
        order.push(e[i]);
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_least_squares, t_statistic};
    use crate::paths::reconstruct_subpath;
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
    fn identity_design_orders_by_magnitude() {
        let d = Dataset::new(DMatrix::identity(3, 3), dvector![1.0, 3.0, -2.0]).unwrap();
        // n - 2 = 1 step allowed
        let path = forward_stepwise(&d, 1).unwrap();
        assert_eq!(path.entrants(), vec![1]);
        assert_eq!(stepwise_entry_order(&d, d.y(), 3).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn statistics_match_model_t() {
        let d = random_dataset(3, 30, 6);
        let path = forward_stepwise(&d, 5).unwrap();
        for k in 1..=5 {
            let step = path.step(k).unwrap();
            let prev = path.active_at(k - 1).unwrap();
            let t = t_statistic(&d, prev, step.entered).unwrap();
            assert!((t.abs() - step.statistic).abs() < 1e-9 * t.abs().max(1.0));
            // no other candidate has a larger |t|
            for j in d.candidates() {
                if !prev.contains(j) {
                    assert!(t_statistic(&d, prev, j).unwrap().abs() <= step.statistic + 1e-9);
                }
            }
        }
    }

    #[test]
    fn entrant_minimizes_rss() {
        let d = random_dataset(11, 25, 7);
        let path = forward_stepwise(&d, 4).unwrap();
        for k in 1..=4 {
            let prev = path.active_at(k - 1).unwrap();
            let chosen = fit_least_squares(&d, &path.step(k).unwrap().active_after).unwrap().rss;
            for j in d.candidates().into_iter().filter(|&j| !prev.contains(j)) {
                assert!(chosen <= fit_least_squares(&d, &prev.with(j)).unwrap().rss + 1e-9);
            }
        }
    }

    #[test]
    fn intercept_is_forced_first() {
        let d = random_dataset(5, 20, 4).with_intercept();
        let path = forward_stepwise(&d, 3).unwrap();
        assert_eq!(path.base.entries, vec![4]);
        assert_eq!(path.step(1).unwrap().active_after.entries[0], 4);
        assert!(path.entrants().iter().all(|&j| j < 4));
    }

    #[test]
    fn duplicate_columns_tie() {
        let mut d = random_dataset(8, 12, 3);
        let col = d.x().column(0).into_owned();
        let mut x = d.x().clone();
        x.set_column(1, &col);
        d = Dataset::new(x, d.y().clone()).unwrap();
        let y = d.x().column(0) * 5.0 + d.y();
        let d = d.with_response(y).unwrap();
        assert!(matches!(forward_stepwise(&d, 1), Err(Error::Tie(0, 1))));
    }

    #[test]
    fn degenerate_candidates_are_skipped() {
        let d = random_dataset(9, 10, 3);
        let mut x = d.x().clone();
        x.column_mut(1).fill(2.0);
        let d = Dataset::new(x, d.y().clone()).unwrap().with_intercept();
        let order = stepwise_entry_order(&d, d.y(), 3).unwrap();
        assert_eq!(order.len(), 2);
        assert!(!order.contains(&1));
    }

    #[test]
    fn too_many_steps_rejected() {
        let d = random_dataset(1, 6, 5);
        assert!(forward_stepwise(&d, 5).is_err());
        assert!(forward_stepwise(&d, 0).is_err());
        assert!(forward_stepwise(&d, 4).is_ok());
    }

    #[test]
    fn reconstruction_recovers_order() {
        for seed in 0..50 {
            let d = random_dataset(100 + seed, 15, 6);
            let path = forward_stepwise(&d, 4).unwrap();
            let mut shuffled = path.step(4).unwrap().active_after.clone();
            shuffled.entries.reverse();
            let suff = SufficientStat::of(&d, &shuffled);
            let order = reconstruct_subpath(&d, &shuffled, &suff, Algorithm::ForwardStepwise).unwrap();
            assert_eq!(order, path.entrants());
        }
    }
}
