//! Greedy binary segmentation for changes in mean, and permutation
//! selected-model p-values for its steps.
//!
//! A split `s` in `1..T` separates `y[..s]` from `y[s..]`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pvalues::PValue;
use crate::rng::rng_for;
use crate::samplers::{SamplerConfig, SamplerMethod};

const TIE_TOL: f64 = 1e-12;

/// Two-sample statistic for splitting `[lo, hi)` at `s`: the absolute
/// difference of side means times the square root of the harmonic mean of
/// the side lengths. Depends on each side only through its mean.
pub fn two_sample_stat(prefix: &[f64], lo: usize, s: usize, hi: usize) -> f64 {
    let nl = (s - lo) as f64;
    let nr = (hi - s) as f64;
    let ml = (prefix[s] - prefix[lo]) / nl;
    let mr = (prefix[hi] - prefix[s]) / nr;
    (ml - mr).abs() * (2.0 * nl * nr / (nl + nr)).sqrt()
}

fn prefix_sums(values: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(values.len() + 1);
    p.push(0.0);
    let mut acc = 0.0;
    for v in values {
        acc += v;
        p.push(acc);
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointStep {
    pub k: usize,
    pub split: usize,
    pub statistic: f64,
    /// Splits after this step, in entry order.
    pub active_after: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointPath {
    pub len: usize,
    pub steps: Vec<ChangepointStep>,
}

impl ChangepointPath {
    /// `E_k` as an ordered list; `k = 0` is empty.
    pub fn active_at(&self, k: usize) -> Result<Vec<usize>> {
        if k > self.steps.len() {
            return Err(Error::StepOutOfRange { step: k, len: self.steps.len() });
        }
        Ok(if k == 0 { Vec::new() } else { self.steps[k - 1].active_after.clone() })
    }

    pub fn splits(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.split).collect()
    }
}

/// Best split given existing boundaries `active` (sorted), as `(split, W)`.
fn best_split(prefix: &[f64], sorted: &[usize], len: usize) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    let mut second: Option<(usize, f64)> = None;
    let mut lo = 0;
    for seg_end in sorted.iter().copied().chain(std::iter::once(len)) {
        for s in lo + 1..seg_end {
            let w = two_sample_stat(prefix, lo, s, seg_end);
            match best {
                Some((_, b)) if w <= b => {
                    if second.is_none_or(|(_, s2)| w > s2) {
                        second = Some((s, w));
                    }
                }
                _ => {
                    second = best;
                    best = Some((s, w));
                }
            }
        }
        lo = seg_end;
    }
    if let (Some((s1, w1)), Some((s2, w2))) = (best, second) {
        if w1 - w2 <= TIE_TOL * w1.max(f64::MIN_POSITIVE) {
            return Err(Error::Tie(s1.min(s2), s1.max(s2)));
        }
    }
    Ok(best)
}

fn insert_sorted(sorted: &mut Vec<usize>, s: usize) {
    let pos = sorted.partition_point(|&x| x < s);
    sorted.insert(pos, s);
}

/// Greedy binary segmentation for `steps` steps.
pub fn greedy_path(values: &[f64], steps: usize) -> Result<ChangepointPath> {
    let t = values.len();
    if t < 2 {
        return invalid("series needs at least two observations");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("series values must be finite");
    }
    if steps == 0 || steps > t - 1 {
        return invalid(format!("number of steps must lie in 1..={}", t - 1));
    }
    let prefix = prefix_sums(values);
    let mut sorted = Vec::new();
    let mut order = Vec::new();
    let mut out = Vec::new();
    for k in 1..=steps {
        let (s, w) = best_split(&prefix, &sorted, t)?.expect("a free split remains");
        insert_sorted(&mut sorted, s);
        order.push(s);
        out.push(ChangepointStep { k, split: s, statistic: w, active_after: order.clone() });
    }
    Ok(ChangepointPath { len: t, steps: out })
}

/// Greedy splits of a series for `k` steps as a sorted set, or `None` on a
/// tie. Allocation-light version used inside the permutation loop.
fn greedy_set(prefix: &[f64], len: usize, k: usize, sorted: &mut Vec<usize>) -> Option<()> {
    sorted.clear();
    for _ in 0..k {
        let (s, _) = best_split(prefix, sorted, len).ok()??;
        insert_sorted(sorted, s);
    }
    Some(())
}

/// Entry order of the splits in `active`, from the values of each segment
/// between consecutive splits (any order within a segment).
pub fn reconstruct_changepoints(active: &[usize], segments: &[Vec<f64>]) -> Result<Vec<usize>> {
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    if segments.len() != sorted.len() + 1 {
        return invalid("need one segment more than there are splits");
    }
    let mut bounds = vec![0];
    let mut acc = 0;
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return invalid("empty segment");
        }
        acc += seg.len();
        if i < sorted.len() && sorted[i] != acc {
            return invalid("segment lengths do not match the splits");
        }
        bounds.push(acc);
    }
    // cumulative sums at segment boundaries are all the greedy steps can see
    let mut cum = vec![0.0];
    for seg in segments {
        cum.push(cum.last().unwrap() + seg.iter().sum::<f64>());
    }
    let at = |pos: usize| cum[bounds.iter().position(|&b| b == pos).unwrap()];
    let mut chosen: Vec<usize> = Vec::new();
    let mut order = Vec::new();
    while order.len() < sorted.len() {
        let mut best: Option<(usize, f64)> = None;
        let mut second = f64::NEG_INFINITY;
        for &s in sorted.iter().filter(|s| !chosen.contains(s)) {
            let lo = chosen.iter().copied().filter(|&c| c < s).max().unwrap_or(0);
            let hi = chosen.iter().copied().filter(|&c| c > s).min().unwrap_or(acc);
            let nl = (s - lo) as f64;
            let nr = (hi - s) as f64;
            let w = ((at(s) - at(lo)) / nl - (at(hi) - at(s)) / nr).abs() * (2.0 * nl * nr / (nl + nr)).sqrt();
            match best {
                Some((_, b)) if w <= b => second = second.max(w),
                _ => {
                    if let Some((_, b)) = best {
                        second = second.max(b);
                    }
                    best = Some((s, w));
                }
            }
        }
        let (s, w) = best.unwrap();
        if w - second <= TIE_TOL * w {
            return Err(Error::ReconstructionFailure("tie in reconstructed split order".into()));
        }
        chosen.push(s);
        order.push(s);
    }
    Ok(order)
}

/// Permutation p-value for step `k`: permute within the segments of
/// `E_{k-1}`, keep permutations that reproduce `E_{k-1}`, and compare the
/// next greedy statistic. With `randomize`, ties are split uniformly.
pub fn changepoint_pvalue(values: &[f64], path: &ChangepointPath, k: usize, cfg: &SamplerConfig, randomize: bool) -> Result<PValue> {
    changepoint_with_rng(values, path, k, cfg, randomize, &mut rng_for(cfg.seed, k as u64))
}

pub fn changepoint_with_rng<R: Rng + ?Sized>(
    values: &[f64],
    path: &ChangepointPath,
    k: usize,
    cfg: &SamplerConfig,
    randomize: bool,
    rng: &mut R,
) -> Result<PValue> {
    if k == 0 || k > path.steps.len() {
        return Err(Error::StepOutOfRange { step: k, len: path.steps.len() });
    }
    if values.len() != path.len {
        return invalid("series does not match the path");
    }
    let observed = path.steps[k - 1].statistic;
    let mut target = path.active_at(k - 1)?;
    target.sort_unstable();
    let t = values.len();
    let mut bounds = vec![0];
    bounds.extend(&target);
    bounds.push(t);

    let mut work = values.to_vec();
    let mut sorted = Vec::with_capacity(k);
    let mut prefix = vec![0.0; t + 1];
    let (mut gt, mut eq, mut accepted, mut proposals) = (0usize, 0usize, 0usize, 0usize);
    while accepted < cfg.chain_length && proposals < cfg.budget {
        proposals += 1;
        for w in bounds.windows(2) {
            work[w[0]..w[1]].shuffle(rng);
        }
        let mut acc = 0.0;
        for (i, v) in work.iter().enumerate() {
            acc += v;
            prefix[i + 1] = acc;
        }
        if greedy_set(&prefix, t, k - 1, &mut sorted).is_none() || sorted != target {
            continue;
        }
        let Ok(Some((_, w))) = best_split(&prefix, &target, t).or_else(|e| match e {
            // a tie in the next step does not affect its maximal value
            Error::Tie(s, _) => Ok(Some((s, max_stat(&prefix, &target, t)))),
            e => Err(e),
        }) else {
            continue;
        };
        accepted += 1;
        if (w - observed).abs() <= TIE_TOL * observed.abs().max(1.0) {
            eq += 1;
        } else if w > observed {
            gt += 1;
        }
    }
    let required = cfg.min_accepted.min(cfg.chain_length);
    if accepted < required {
        return Err(Error::LowAcceptance { accepted, proposals, required });
    }
    let n = accepted as f64;
    let p = if randomize {
        (gt as f64 + rng.random::<f64>() * (eq as f64 + 1.0)) / (n + 1.0)
    } else {
        (1.0 + (gt + eq) as f64) / (n + 1.0)
    };
    let q = (gt + eq) as f64 / n;
    Ok(PValue { p, stderr: (q * (1.0 - q) / n).sqrt(), statistic: observed, samples: accepted, sampler: Some(SamplerMethod::AcceptReject) })
}

fn max_stat(prefix: &[f64], sorted: &[usize], len: usize) -> f64 {
    let mut best: f64 = 0.0;
    let mut lo = 0;
    for hi in sorted.iter().copied().chain(std::iter::once(len)) {
        for s in lo + 1..hi {
            best = best.max(two_sample_stat(prefix, lo, s, hi));
        }
        lo = hi;
    }
    best
}

/// Read a single-column series, skipping a non-numeric header line.
pub fn read_series<R: std::io::Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return invalid(format!("line {}: '{field}' is not a number", i + 1)),
        }
    }
    Ok(out)
}
