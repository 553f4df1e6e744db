//! Expected revelations in a reporting unit of `n` independent voters.
//!
//! Each voter abstains with probability `s` and otherwise votes for candidate
//! `h` with probability `w[h]`. A unit outcome is revealing when some
//! category (abstention or a candidate) holds at least `n - alpha` of the
//! votes; it then reveals `n - alpha` voters (`n` when `alpha == 0`). The
//! all-abstain outcome counts as revealing here, unlike the empirical
//! default in [`crate::revelation`].

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::error::{Error, Result};

/// Largest outcome space `enumerate_exact` will walk.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u64,
    pub w: Vec<f64>,
    pub s: f64,
    #[serde(default)]
    pub alpha: u64,
}

impl ModelParams {
    pub fn new(n: u64, w: &[f64], s: f64, alpha: u64) -> Result<ModelParams> {
        let p = ModelParams {
            n,
            w: w.to_vec(),
            s,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.w.is_empty() {
            return bad("at least one candidate is required".into());
        }
        if self.w.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return bad(format!("support probabilities {:?} outside [0, 1]", self.w));
        }
        let total: f64 = self.w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("support probabilities sum to {total}, not 1"));
        }
        if !(0.0..=1.0).contains(&self.s) {
            return bad(format!("abstention probability {} outside [0, 1]", self.s));
        }
        Ok(())
    }

    pub fn with_n(&self, n: u64) -> ModelParams {
        ModelParams { n, ..self.clone() }
    }

    pub fn with_alpha(&self, alpha: u64) -> ModelParams {
        ModelParams {
            alpha,
            ..self.clone()
        }
    }

    /// Category probabilities: abstention first, then each candidate.
    pub fn categories(&self) -> Vec<f64> {
        std::iter::once(self.s)
            .chain(self.w.iter().map(|w| (1.0 - self.s) * w))
            .collect()
    }

    /// Voters revealed when the largest category holds `largest` votes.
    fn revealed(&self, largest: u64) -> u64 {
        let need = self.n.saturating_sub(self.alpha);
        if largest >= need.max(1) {
            need
        } else {
            0
        }
    }
}

/// `ln(p^k)`, with `0^0 = 1`.
fn ln_pow(p: f64, k: u64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * p.ln()
    }
}

fn binomial_pmf(n: u64, m: u64, p: f64) -> f64 {
    (ln_binomial(n, m) + ln_pow(p, m) + ln_pow(1.0 - p, n - m)).exp()
}

/// P(X >= lo) for X ~ Binomial(n, p).
fn binomial_upper_tail(n: u64, lo: u64, p: f64) -> f64 {
    (lo..=n).map(|m| binomial_pmf(n, m, p)).sum()
}

/// `N (s^N + (1-s)^N sum_h w_h^N)`, evaluated in log space.
pub fn expected_public(params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let n = params.n;
    let ln_n = (n as f64).ln();
    let abstain = (ln_n + ln_pow(params.s, n)).exp();
    let vote: f64 = params
        .w
        .iter()
        .map(|&w| (ln_n + ln_pow(1.0 - params.s, n) + ln_pow(w, n)).exp())
        .sum();
    Ok(abstain + vote)
}

/// Closed form for coalitions of `1 <= alpha < n/2`.
pub fn expected_local(params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let (n, alpha) = (params.n, params.alpha);
    if alpha == 0 || 2 * alpha >= n {
        return Err(Error::ClosedFormUndefined { n, alpha });
    }
    let lo = n - alpha;
    let total: f64 = params
        .categories()
        .iter()
        .map(|&p| binomial_upper_tail(n, lo, p))
        .sum();
    Ok((n - alpha) as f64 * total)
}

/// Exact expectation by summing over every multinomial outcome.
pub fn enumerate_exact(params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let k = params.w.len() as u64 + 1;
    let outcomes = (k as f64).powf(params.n as f64);
    if outcomes > ENUMERATION_BUDGET as f64 {
        return Err(Error::BudgetExceeded {
            outcomes,
            budget: ENUMERATION_BUDGET,
        });
    }
    let probs = params.categories();
    let mut counts = vec![0u64; probs.len()];
    let mut total = 0.0;
    walk(params, &probs, &mut counts, 0, params.n, &mut total);
    Ok(total)
}

fn walk(
    params: &ModelParams,
    probs: &[f64],
    counts: &mut [u64],
    slot: usize,
    left: u64,
    total: &mut f64,
) {
    if slot == probs.len() - 1 {
        counts[slot] = left;
        let revealed = params.revealed(*counts.iter().max().unwrap());
        if revealed > 0 {
            let ln_p = ln_factorial(params.n)
                + counts
                    .iter()
                    .zip(probs)
                    .map(|(&c, &p)| ln_pow(p, c) - ln_factorial(c))
                    .sum::<f64>();
            *total += revealed as f64 * ln_p.exp();
        }
        return;
    }
    for c in 0..=left {
        counts[slot] = c;
        walk(params, probs, counts, slot + 1, left - c, total);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: u64,
}

/// Monte Carlo estimate; deterministic for a given seed.
pub fn simulate_revelation(params: &ModelParams, draws: u64, seed: u64) -> Result<Estimate> {
    params.validate()?;
    if draws == 0 {
        return Err(Error::InvalidParams("draws must be at least 1".into()));
    }
    let probs = params.categories();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        // sequential conditional binomials give one multinomial draw
        let mut left = params.n;
        let mut mass = 1.0;
        let mut largest = 0;
        for (i, &p) in probs.iter().enumerate() {
            let c = if i == probs.len() - 1 || mass <= 0.0 {
                left
            } else {
                let q = (p / mass).clamp(0.0, 1.0);
                Binomial::new(left, q).expect("valid binomial").sample(&mut rng)
            };
            largest = largest.max(c);
            left -= c;
            mass -= p;
        }
        let r = params.revealed(largest) as f64;
        sum += r;
        sum_sq += r * r;
    }
    let d = draws as f64;
    let mean = sum / d;
    let std_error = if draws > 1 {
        let var = (sum_sq - d * mean * mean).max(0.0) / (d - 1.0);
        (var / d).sqrt()
    } else {
        0.0
    };
    Ok(Estimate {
        mean,
        std_error,
        draws,
    })
}

/// Smallest `N*` with `E[R](N) < threshold` for every scanned `N >= N*`.
/// The scan runs to `bound` and requires `E[R]` to be decreasing over its
/// final stretch.
pub fn tipping_point(w: &[f64], s: f64, threshold: f64, bound: u64) -> Result<u64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParams(format!("threshold {threshold} must be positive")));
    }
    let base = ModelParams::new(1, w, s, 0)?;
    let values: Vec<f64> = (1..=bound)
        .map(|n| expected_public(&base.with_n(n)))
        .collect::<Result<_>>()?;
    let unreachable = Error::Unreachable { threshold, bound };
    let last_above = values.iter().rposition(|&v| v >= threshold);
    let start = match last_above {
        None => 0,
        Some(i) if i + 1 == values.len() => return Err(unreachable),
        Some(i) => i + 1,
    };
    let tail = &values[start..];
    let decreasing = tail.windows(2).rev().take(64).all(|p| p[1] <= p[0]);
    if !decreasing {
        return Err(unreachable);
    }
    Ok(start as u64 + 1)
}

/// N at which `E[R]` peaks within `1..=bound`.
pub fn public_maximizer(w: &[f64], s: f64, bound: u64) -> Result<(u64, f64)> {
    let base = ModelParams::new(1, w, s, 0)?;
    let mut best = (1, f64::MIN);
    for n in 1..=bound {
        let v = expected_public(&base.with_n(n))?;
        if v > best.1 {
            best = (n, v);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub w: Vec<f64>,
    #[serde(default)]
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Enumeration,
    Simulation,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::Enumeration => "enumeration",
            Method::Simulation => "simulation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub scenario: String,
    pub n: u64,
    pub alpha: u64,
    pub method: Method,
    pub expected: f64,
    pub std_error: f64,
}

/// Expected revelations for one parameter set, picking the closed form where
/// it holds and falling back to enumeration, then simulation.
pub fn evaluate(params: &ModelParams, draws: u64, seed: u64) -> Result<(Method, Estimate)> {
    let exact = |mean| Estimate {
        mean,
        std_error: 0.0,
        draws: 0,
    };
    if params.alpha == 0 {
        return Ok((Method::ClosedForm, exact(expected_public(params)?)));
    }
    match expected_local(params) {
        Ok(v) => return Ok((Method::ClosedForm, exact(v))),
        Err(Error::ClosedFormUndefined { .. }) => {}
        Err(e) => return Err(e),
    }
    if params.alpha >= params.n {
        // every outcome reveals nobody
        return Ok((Method::ClosedForm, exact(0.0)));
    }
    match enumerate_exact(params) {
        Ok(v) => Ok((Method::Enumeration, exact(v))),
        Err(Error::BudgetExceeded { .. }) => {
            Ok((Method::Simulation, simulate_revelation(params, draws, seed)?))
        }
        Err(e) => Err(e),
    }
}

/// Scenario x N x alpha table of expected revelations.
pub fn sweep(
    scenarios: &[Scenario],
    ns: &[u64],
    alphas: &[u64],
    draws: u64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for sc in scenarios {
        for &n in ns {
            for &alpha in alphas {
                let params = ModelParams::new(n, &sc.w, sc.s, alpha)?;
                let (method, est) = evaluate(&params, draws, seed)?;
                rows.push(SweepRow {
                    scenario: sc.name.clone(),
                    n,
                    alpha,
                    method,
                    expected: est.mean,
                    std_error: est.std_error,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over every per-voter assignment, independent of the
    /// composition walk above.
    fn per_voter(params: &ModelParams) -> f64 {
        let probs = params.categories();
        let k = probs.len();
        let mut total = 0.0;
        for code in 0..k.pow(params.n as u32) {
            let mut counts = vec![0u64; k];
            let mut p = 1.0;
            let mut x = code;
            for _ in 0..params.n {
                counts[x % k] += 1;
                p *= probs[x % k];
                x /= k;
            }
            total += p * params.revealed(*counts.iter().max().unwrap()) as f64;
        }
        total
    }

    #[test]
    fn single_voter_always_revealed() {
        for (w, s) in [(vec![1.0], 0.0), (vec![0.3, 0.7], 0.4), (vec![0.2, 0.3, 0.5], 1.0)] {
            let p = ModelParams::new(1, &w, s, 0).unwrap();
            assert!((expected_public(&p).unwrap() - 1.0).abs() < 1e-15);
            assert!((enumerate_exact(&p).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn three_voters_with_abstention() {
        let p = ModelParams::new(3, &[0.5, 0.5], 0.2, 0).unwrap();
        assert!((expected_public(&p).unwrap() - 0.408).abs() < 1e-12);
        assert!((per_voter(&p) - 0.408).abs() < 1e-12);
    }

    #[test]
    fn three_voters_local() {
        let p = ModelParams::new(3, &[0.5, 0.5], 0.0, 1).unwrap();
        assert!((expected_local(&p).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_forms_match_brute_force() {
        let grids: [(&[f64], f64); 4] = [
            (&[1.0], 0.1),
            (&[0.7, 0.3], 0.0),
            (&[0.5, 0.25, 0.25], 0.15),
            (&[0.6, 0.4], 0.3),
        ];
        for (w, s) in grids {
            for n in 1..=7u64 {
                for alpha in 0..n {
                    let p = ModelParams::new(n, w, s, alpha).unwrap();
                    let brute = per_voter(&p);
                    assert!((enumerate_exact(&p).unwrap() - brute).abs() < 1e-12);
                    if alpha == 0 {
                        assert!((expected_public(&p).unwrap() - brute).abs() < 1e-12);
                    } else if 2 * alpha < n {
                        assert!((expected_local(&p).unwrap() - brute).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn closed_form_refuses_large_alpha() {
        let p = ModelParams::new(4, &[0.5, 0.5], 0.0, 2).unwrap();
        assert!(matches!(
            expected_local(&p),
            Err(Error::ClosedFormUndefined { n: 4, alpha: 2 })
        ));
    }

    #[test]
    fn enumeration_budget() {
        let p = ModelParams::new(40, &[0.5, 0.5], 0.0, 0).unwrap();
        assert!(matches!(enumerate_exact(&p), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(3, &[0.5, 0.6], 0.0, 0).is_err());
        assert!(ModelParams::new(0, &[1.0], 0.0, 0).is_err());
        assert!(ModelParams::new(3, &[1.0], 1.5, 0).is_err());
    }

    #[test]
    fn large_n_does_not_underflow_to_nan() {
        let p = ModelParams::new(5000, &[0.7, 0.3], 0.0, 1).unwrap();
        let v = expected_local(&p).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn simulation_is_deterministic_and_close() {
        let p = ModelParams::new(6, &[0.6, 0.4], 0.1, 3).unwrap();
        let a = simulate_revelation(&p, 20_000, 7).unwrap();
        let b = simulate_revelation(&p, 20_000, 7).unwrap();
        assert_eq!(a, b);
        let exact = enumerate_exact(&p).unwrap();
        assert!((a.mean - exact).abs() < 4.0 * a.std_error);
    }

    #[test]
    fn full_coalition_minus_one_reveals_one() {
        let p = ModelParams::new(5, &[0.6, 0.4], 0.2, 4).unwrap();
        assert!((enumerate_exact(&p).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(simulate_revelation(&p, 50, 1).unwrap().mean, 1.0);
    }

    #[test]
    fn tipping_points() {
        assert_eq!(tipping_point(&[0.7, 0.3], 0.0, 0.01, 2000).unwrap(), 22);
        assert_eq!(tipping_point(&[0.7, 0.3], 0.0, 0.001, 2000).unwrap(), 29);
        assert_eq!(tipping_point(&[0.7, 0.3], 0.0, 1.5, 2000).unwrap(), 1);
        assert!(matches!(
            tipping_point(&[1.0], 0.0, 0.01, 100),
            Err(Error::Unreachable { .. })
        ));
    }
}
