//! Sequential stopping rules that turn a p-value sequence into a model size.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// A non-negative function on `[0, 1]` with unit integral.
#[derive(Clone)]
pub struct AccumulationFn {
    name: String,
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for AccumulationFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccumulationFn({})", self.name)
    }
}

impl AccumulationFn {
    /// Register a custom function, checking non-negativity on a grid and a
    /// numerical integral within `1e-6` of one.
    pub fn new(name: impl Into<String>, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let f = AccumulationFn { name: name.into(), h: Arc::new(h) };
        let integral = f.integral();
        if !((integral - 1.0).abs() <= 1e-6) {
            return Err(Error::AccumulationIntegral(integral));
        }
        Ok(f)
    }

    /// `h(t) = -log(1 - t)`, which gives ForwardStop.
    pub fn forward_stop() -> Self {
        AccumulationFn::new("forward-stop", |t| -(-t).ln_1p()).expect("unit integral")
    }

    /// `h(t) = C log(1 / (C (1 - t)))` on `t > 1 - 1/C`, zero below.
    pub fn hinge_exp(c: f64) -> Result<Self> {
        if !(c >= 1.0) {
            return invalid("hinge constant must be at least 1");
        }
        AccumulationFn::new(format!("hinge-exp({c})"), move |t| if t > 1.0 - 1.0 / c { c * (1.0 / (c * (1.0 - t))).ln() } else { 0.0 })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.h)(t)
    }

    /// Trapezoid rule after `t = 1 - (1 - s)^3`, which tames an integrable
    /// singularity at `t = 1`.
    fn integral(&self) -> f64 {
        const N: usize = 200_000;
        let g = |s: f64| {
            let w = 1.0 - s;
            if w == 0.0 {
                return 0.0;
            }
            let v = self.eval(1.0 - w * w * w);
            if !(v >= 0.0) {
                return f64::NAN;
            }
            3.0 * w * w * v
        };
        let h = 1.0 / N as f64;
        let mut sum = 0.5 * (g(0.0) + g(1.0));
        for i in 1..N {
            sum += g(i as f64 * h);
        }
        sum * h
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRule {
    /// Stop before the first p-value above `alpha`.
    Basic,
    /// Largest `k` with `-(1/k) sum_{i<=k} log(1 - p_i) <= alpha`.
    Forward,
    /// Largest `k` with `(1/k) sum_{i<=k} h(p_i) <= alpha`.
    #[serde(skip)]
    Accumulation(AccumulationFn),
}

impl StoppingRule {
    pub fn name(&self) -> String {
        match self {
            StoppingRule::Basic => "basic".into(),
            StoppingRule::Forward => "forward".into(),
            StoppingRule::Accumulation(h) => format!("accumulation:{}", h.name()),
        }
    }

    /// Number of selected steps `k_hat` in `0..=d`.
    pub fn select(&self, pvalues: &[f64], alpha: f64) -> Result<usize> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return invalid(format!("p-value {bad} outside [0, 1]"));
        }
        Ok(match self {
            StoppingRule::Basic => pvalues.iter().position(|&p| p > alpha).unwrap_or(pvalues.len()),
            StoppingRule::Forward => accumulate(pvalues, alpha, |p| -(-p).ln_1p()),
            StoppingRule::Accumulation(h) => accumulate(pvalues, alpha, |p| h.eval(p)),
        })
    }
}

fn accumulate(pvalues: &[f64], alpha: f64, h: impl Fn(f64) -> f64) -> usize {
    let mut sum = 0.0;
    let mut best = 0;
    for (i, &p) in pvalues.iter().enumerate() {
        sum += h(p);
        if sum / (i + 1) as f64 <= alpha {
            best = i + 1;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MAX_T: [f64; 20] = [0.00, 0.00, 0.00, 0.02, 0.08, 0.06, 0.00, 0.32, 0.94, 0.91, 0.25, 0.01, 0.04, 0.85, 0.03, 0.40, 0.58, 0.82, 0.51, 0.44];
    const SATURATED: [f64; 20] = [0.00, 0.00, 0.05, 0.33, 0.76, 0.25, 0.00, 0.03, 0.55, 0.91, 0.37, 0.15, 0.07, 0.97, 0.15, 0.05, 0.45, 0.71, 0.40, 0.60];
    const NOMINAL: [f64; 20] = [0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.02, 0.11, 0.17, 0.15, 0.06, 0.00, 0.19, 0.08, 0.18, 0.23, 0.31, 0.22, 0.27];

    #[test]
    fn diabetes_table_selections() {
        assert_eq!(StoppingRule::Forward.select(&MAX_T, 0.1).unwrap(), 8);
        assert_eq!(StoppingRule::Forward.select(&SATURATED, 0.1).unwrap(), 3);
        assert_eq!(StoppingRule::Forward.select(&NOMINAL, 0.1).unwrap(), 18);
    }

    #[test]
    fn basic_stop_examples() {
        assert_eq!(StoppingRule::Basic.select(&[0.01, 0.02, 0.2, 0.01], 0.05).unwrap(), 2);
        assert_eq!(StoppingRule::Basic.select(&[0.01; 5], 0.05).unwrap(), 5);
        assert_eq!(StoppingRule::Basic.select(&[], 0.05).unwrap(), 0);
    }

    #[test]
    fn forward_stop_all_ones_is_zero() {
        assert_eq!(StoppingRule::Forward.select(&[1.0; 6], 0.2).unwrap(), 0);
    }

    #[test]
    fn accumulation_with_log_matches_forward() {
        let rule = StoppingRule::Accumulation(AccumulationFn::forward_stop());
        assert_eq!(rule.select(&MAX_T, 0.1).unwrap(), 8);
    }

    #[test]
    fn registration_checks_integral() {
        assert!(AccumulationFn::new("linear", |t| 2.0 * t).is_ok());
        assert!(AccumulationFn::hinge_exp(2.0).is_ok());
        assert!(matches!(AccumulationFn::new("half", |_| 0.5), Err(Error::AccumulationIntegral(_))));
        assert!(AccumulationFn::new("negative", |t| 4.0 * t - 1.0).is_err());
    }

    #[test]
    fn bad_inputs() {
        assert!(StoppingRule::Basic.select(&[0.5], 0.0).is_err());
        assert!(StoppingRule::Forward.select(&[1.5], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_alpha(ps in prop::collection::vec(0.0f64..=1.0, 0..30), a in 0.01f64..0.5, b in 0.01f64..0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for rule in [StoppingRule::Basic, StoppingRule::Forward] {
                let k_lo = rule.select(&ps, lo).unwrap();
                let k_hi = rule.select(&ps, hi).unwrap();
                prop_assert!(k_lo <= k_hi);
                prop_assert!(k_hi <= ps.len());
            }
        }

        #[test]
        fn basic_stop_never_passes_a_large_pvalue(ps in prop::collection::vec(0.0f64..=1.0, 0..30), alpha in 0.01f64..0.5) {
            let k = StoppingRule::Basic.select(&ps, alpha).unwrap();
            prop_assert!(ps[..k].iter().all(|&p| p <= alpha));
        }
    }
}
