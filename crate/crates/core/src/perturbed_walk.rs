//! Perturbed random walks `T_k = S_{k-1} + η_k` and their functionals.
//!
//! `S` is a zero-delayed random walk with nonnegative steps `ξ`; each step
//! carries a nonnegative perturbation `η` that may depend on it. Functionals
//! that involve `exp(-t e^{-x})` take `ln t` so that `t` may be far beyond the
//! floating range (the sieve needs `t = e^{10^4}`).

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{domain, range, Result};
use crate::rng::{par_replicates, sample_uniform01, standard_exponential};
use crate::special::integrate;
use crate::stats::McAccumulator;

/// Margin added to `ln t` beyond which the terms of the infinite sums are
/// below `e^{-40}`.
pub const HORIZON_MARGIN: f64 = 40.0;

const MAX_WALK_STEPS: usize = 50_000_000;

/// A law of the pair `(ξ, η)` driving a perturbed random walk.
pub trait PairLaw: Sync {
    /// One draw of `(ξ, η)`, both nonnegative.
    fn sample_pair(&self, rng: &mut dyn RngCore) -> (f64, f64);
    /// `F̄(x) = P{ξ > x}`.
    fn xi_tail(&self, x: f64) -> f64;
    /// `Ḡ(x) = P{η > x}`.
    fn eta_tail(&self, x: f64) -> f64;
}

/// Built-in marginal laws on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StepLaw {
    /// Point mass at `value`.
    Constant { value: f64 },
    Exponential { mean: f64 },
    /// `P{X > x} = x^{-index}` for `x ≥ 1`.
    Pareto { index: f64 },
    /// `P{X > x} = 1/(1 + ln x)` for `x ≥ 1`; slowly varying tail.
    LogSlow,
}

impl StepLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepLaw::Constant { value } => value >= 0.0 && !value.is_nan(),
            StepLaw::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            StepLaw::Pareto { index } => index > 0.0 && index.is_finite(),
            StepLaw::LogSlow => true,
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("invalid step law {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            StepLaw::Constant { value } => value,
            StepLaw::Exponential { mean } => mean * standard_exponential(rng),
            StepLaw::Pareto { index } => sample_uniform01(rng).powf(-1.0 / index),
            StepLaw::LogSlow => (1.0 / sample_uniform01(rng) - 1.0).exp(),
        }
    }

    /// `P{X > x}`.
    pub fn tail(&self, x: f64) -> f64 {
        match *self {
            StepLaw::Constant { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
            StepLaw::Exponential { mean } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x / mean).exp()
                }
            }
            StepLaw::Pareto { index } => {
                if x <= 1.0 {
                    1.0
                } else {
                    x.powf(-index)
                }
            }
            StepLaw::LogSlow => {
                if x <= 1.0 {
                    1.0
                } else {
                    1.0 / (1.0 + x.ln())
                }
            }
        }
    }

    /// Inverse CDF at `v ∈ (0, 1)`.
    pub fn quantile(&self, v: f64) -> f64 {
        match *self {
            StepLaw::Constant { value } => value,
            StepLaw::Exponential { mean } => -mean * (-v).ln_1p(),
            StepLaw::Pareto { index } => (1.0 - v).powf(-1.0 / index),
            StepLaw::LogSlow => (1.0 / (1.0 - v) - 1.0).exp(),
        }
    }
}

/// How `η` is produced from the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coupling", rename_all = "snake_case")]
pub enum EtaLaw {
    /// Independent of `ξ`.
    Independent { law: StepLaw },
    /// `η = multiplier · ξ`.
    Scaled { multiplier: f64 },
}

/// Built-in pair law: a step law for `ξ` and an independent or coupled `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrwLaw {
    pub xi: StepLaw,
    pub eta: EtaLaw,
}

impl PrwLaw {
    pub fn independent(xi: StepLaw, eta: StepLaw) -> Result<Self> {
        Self::new(xi, EtaLaw::Independent { law: eta })
    }

    pub fn coupled(xi: StepLaw, multiplier: f64) -> Result<Self> {
        Self::new(xi, EtaLaw::Scaled { multiplier })
    }

    pub fn new(xi: StepLaw, eta: EtaLaw) -> Result<Self> {
        xi.validate()?;
        if xi == (StepLaw::Constant { value: 0.0 }) {
            return Err(domain("ξ must not be degenerate at zero"));
        }
        match eta {
            EtaLaw::Independent { law } => law.validate()?,
            EtaLaw::Scaled { multiplier } => {
                if !(multiplier >= 0.0 && multiplier.is_finite()) {
                    return Err(domain(format!("coupling multiplier must be finite and nonnegative, got {multiplier}")));
                }
            }
        }
        Ok(Self { xi, eta })
    }

    fn eta_quantile(&self, v: f64) -> f64 {
        match self.eta {
            EtaLaw::Independent { law } => law.quantile(v),
            EtaLaw::Scaled { multiplier } => multiplier * self.xi.quantile(v),
        }
    }

    fn eta_constant(&self) -> Option<f64> {
        match self.eta {
            EtaLaw::Independent { law: StepLaw::Constant { value } } => Some(value),
            EtaLaw::Scaled { multiplier: 0.0 } => Some(0.0),
            EtaLaw::Scaled { multiplier } => match self.xi {
                StepLaw::Constant { value } => Some(multiplier * value),
                _ => None,
            },
            _ => None,
        }
    }

    /// `φ(u) = E exp(-u e^{-η})` at `u = e^{log_u}`: closed form for a
    /// constant `η`, otherwise adaptive quadrature of the quantile transform.
    pub fn phi_log(&self, log_u: f64) -> f64 {
        if let Some(c) = self.eta_constant() {
            return (-(log_u - c).exp()).exp();
        }
        integrate(|v| {
            if v <= 0.0 {
                (-(log_u - self.eta_quantile(0.0)).exp()).exp()
            } else if v >= 1.0 {
                1.0
            } else {
                (-(log_u - self.eta_quantile(v)).exp()).exp()
            }
        }, 0.0, 1.0, 1e-10)
    }
}

impl PairLaw for PrwLaw {
    fn sample_pair(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let xi = self.xi.sample(rng);
        let eta = match self.eta {
            EtaLaw::Independent { law } => law.sample(rng),
            EtaLaw::Scaled { multiplier } => multiplier * xi,
        };
        (xi, eta)
    }

    fn xi_tail(&self, x: f64) -> f64 {
        self.xi.tail(x)
    }

    fn eta_tail(&self, x: f64) -> f64 {
        match self.eta {
            EtaLaw::Independent { law } => law.tail(x),
            EtaLaw::Scaled { multiplier } => {
                if multiplier == 0.0 {
                    if x < 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.xi.tail(x / multiplier)
                }
            }
        }
    }
}

/// One realization `S_0 = 0, S_1, ...` with perturbations `η_1, η_2, ...`,
/// extended until the walk passes `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    s_values: Vec<f64>,
    eta_values: Vec<f64>,
    horizon: f64,
}

impl WalkPath {
    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }

    pub fn eta_values(&self) -> &[f64] {
        &self.eta_values
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `T_k = S_{k-1} + η_k` for `k ≥ 1`.
    pub fn perturbed(&self, k: usize) -> f64 {
        self.s_values[k - 1] + self.eta_values[k - 1]
    }
}

/// Draw pairs until `S_k > horizon`, keeping the crossing pair.
pub fn generate_path<L: PairLaw + ?Sized, R: RngCore>(law: &L, horizon: f64, rng: &mut R) -> Result<WalkPath> {
    if !horizon.is_finite() {
        return Err(domain(format!("walk horizon must be finite, got {horizon}")));
    }
    let mut s_values = vec![0.0];
    let mut eta_values = Vec::new();
    let mut s = 0.0;
    while s <= horizon {
        if eta_values.len() >= MAX_WALK_STEPS {
            return Err(range("walk did not pass its horizon within the step limit"));
        }
        let (xi, eta) = law.sample_pair(rng);
        s += xi;
        s_values.push(s);
        eta_values.push(eta);
    }
    Ok(WalkPath { s_values, eta_values, horizon: horizon.max(0.0) })
}

fn check_within(path: &WalkPath, t: f64) -> Result<()> {
    if t > path.horizon {
        return Err(range(format!("t = {t} lies beyond the path horizon {}", path.horizon)));
    }
    Ok(())
}

/// `ρ(t) = #{k ≥ 0 : S_k ≤ t}`.
pub fn rho(path: &WalkPath, t: f64) -> Result<u64> {
    check_within(path, t)?;
    Ok(path.s_values.partition_point(|&s| s <= t) as u64)
}

/// One point of a renewal-function estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenewalPoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of `U(t) = E ρ(t)` on a grid, one path per
/// replicate shared across all grid points.
pub fn renewal_function_estimate<L: PairLaw + ?Sized>(
    law: &L,
    t_grid: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<Vec<RenewalPoint>> {
    if replicates < 100 {
        return Err(domain(format!("renewal estimate needs at least 100 replicates, got {replicates}")));
    }
    let horizon = t_grid.iter().copied().fold(0.0, f64::max);
    let counts: Vec<Result<Vec<u64>>> = par_replicates(seed, replicates, |rng| {
        let path = generate_path(law, horizon, rng)?;
        t_grid.iter().map(|&t| rho(&path, t)).collect()
    });
    let counts: Vec<Vec<u64>> = counts.into_iter().collect::<Result<_>>()?;
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let est = counts.iter().map(|c| c[i] as f64).collect::<McAccumulator>().estimate();
            RenewalPoint { t, mean: est.mean, stderr: est.stderr }
        })
        .collect())
}

/// `e^{-a} - e^{-b}` for `a = e^{x}`, `b = e^{y}`, accurate when both are small.
fn exp_neg_diff(log_a: f64, log_b: f64) -> f64 {
    (-log_a.exp()).exp_m1() - (-log_b.exp()).exp_m1()
}

/// `T(t) = Σ_{k≥1} (exp(-t e^{-T_k}) - exp(-t e^{-S_{k-1}}))` given `ln t`.
pub fn functional_t_log(path: &WalkPath, log_t: f64) -> Result<f64> {
    functional_t_log_with_margin(path, log_t, HORIZON_MARGIN)
}

/// [`functional_t_log`] for finite `t > 0`.
pub fn functional_t(path: &WalkPath, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(domain(format!("T(t) needs t > 0, got {t}")));
    }
    functional_t_log(path, t.ln())
}

/// [`functional_t_log`] summing over `S_{k-1} ≤ ln t + margin`; the omitted
/// terms are each below `e^{-margin}`.
pub fn functional_t_log_with_margin(path: &WalkPath, log_t: f64, margin: f64) -> Result<f64> {
    let cut = log_t + margin;
    if path.horizon < cut {
        return Err(range(format!("path horizon {} is below ln t + {margin} = {cut}", path.horizon)));
    }
    let mut sum = 0.0;
    for k in 1..path.s_values.len() {
        let s_prev = path.s_values[k - 1];
        if s_prev > cut {
            break;
        }
        sum += exp_neg_diff(log_t - path.perturbed(k), log_t - s_prev);
    }
    Ok(sum)
}

/// Busy-server count `R(t) = Σ_{k≥0} 1{S_k ≤ t < S_k + η_{k+1}}`.
pub fn functional_r(path: &WalkPath, t: f64) -> Result<u64> {
    check_within(path, t)?;
    let count = path
        .s_values
        .iter()
        .zip(&path.eta_values)
        .take_while(|(&s, _)| s <= t)
        .filter(|(&s, &eta)| t < s + eta)
        .count();
    Ok(count as u64)
}

/// Shot-noise `V(t) = Σ_{k≥0} (φ(t e^{-S_k}) - exp(-t e^{-S_k}))` given `ln t`,
/// with `phi_log(ℓ) = φ(e^ℓ)`.
pub fn shot_noise_v_log<F: Fn(f64) -> f64>(path: &WalkPath, log_t: f64, phi_log: F) -> Result<f64> {
    let cut = log_t + HORIZON_MARGIN;
    if path.horizon < cut {
        return Err(range(format!("path horizon {} is below ln t + {HORIZON_MARGIN} = {cut}", path.horizon)));
    }
    let mut sum = 0.0;
    for &s in path.s_values.iter().take_while(|&&s| s <= cut) {
        let arg = log_t - s;
        sum += phi_log(arg) - (-arg.exp()).exp();
    }
    Ok(sum)
}

/// `(F̄(t)/Q(t)) Σ_{k : S_k ≤ t} Q(t - S_k)`.
pub fn lemma_tech_statistic<Q, F>(path: &WalkPath, t: f64, q: Q, f_bar: F) -> Result<f64>
where
    Q: Fn(f64) -> f64,
    F: Fn(f64) -> f64,
{
    check_within(path, t)?;
    let qt = q(t);
    if !(qt > 0.0) {
        return Err(domain(format!("Q(t) must be positive, got {qt}")));
    }
    let sum: f64 = path.s_values.iter().take_while(|&&s| s <= t).map(|&s| q(t - s)).sum();
    Ok(f_bar(t) / qt * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn path_from(steps: &[(f64, f64)], horizon: f64) -> WalkPath {
        let mut s_values = vec![0.0];
        let mut eta_values = Vec::new();
        for &(xi, eta) in steps {
            s_values.push(s_values.last().unwrap() + xi);
            eta_values.push(eta);
        }
        WalkPath { s_values, eta_values, horizon }
    }

    fn unit_law(eta: StepLaw) -> PrwLaw {
        PrwLaw::independent(StepLaw::Constant { value: 1.0 }, eta).unwrap()
    }

    #[test]
    fn degenerate_unit_steps() {
        let law = unit_law(StepLaw::Constant { value: 0.0 });
        let path = generate_path(&law, 3.5, &mut RngStream::new(1, 0).rng()).unwrap();
        assert_eq!(path.s_values(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rho(&path, 2.5).unwrap(), 3);
        assert_eq!(rho(&path, 0.0).unwrap(), 1);
        assert_eq!(rho(&path, -1.0).unwrap(), 0);
        assert!(rho(&path, 3.6).is_err());
    }

    #[test]
    fn zero_horizon_needs_one_positive_step() {
        let law = PrwLaw::independent(StepLaw::Pareto { index: 0.5 }, StepLaw::Constant { value: 0.0 }).unwrap();
        let path = generate_path(&law, 0.0, &mut RngStream::new(2, 0).rng()).unwrap();
        assert_eq!(path.s_values().len(), 2);
        assert!(path.s_values()[1] > 0.0);
    }

    #[test]
    fn degenerate_xi_rejected() {
        assert!(PrwLaw::independent(StepLaw::Constant { value: 0.0 }, StepLaw::LogSlow).is_err());
        assert!(PrwLaw::independent(StepLaw::Pareto { index: -1.0 }, StepLaw::LogSlow).is_err());
        assert!(PrwLaw::coupled(StepLaw::LogSlow, -2.0).is_err());
    }

    #[test]
    fn functional_t_single_step_and_zero_eta() {
        let log_t = 2.0f64;
        let p = path_from(&[(50.0, 0.7)], 50.0);
        let want = (-(log_t - 0.7).exp()).exp() - (-log_t.exp()).exp();
        assert!((functional_t_log(&p, log_t).unwrap() - want).abs() < 1e-15);

        let law = PrwLaw::independent(StepLaw::Pareto { index: 0.5 }, StepLaw::Constant { value: 0.0 }).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        for _ in 0..20 {
            let path = generate_path(&law, 100.0, &mut rng).unwrap();
            assert_eq!(functional_t_log(&path, 10.0).unwrap(), 0.0);
            assert_eq!(functional_r(&path, 50.0).unwrap(), 0);
            let v = shot_noise_v_log(&path, 10.0, |l| law.phi_log(l)).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn functional_t_needs_horizon() {
        let p = path_from(&[(1.0, 0.0); 5], 4.0);
        assert!(matches!(functional_t_log(&p, 1.0), Err(crate::Error::Range(_))));
        assert!(functional_t(&p, 0.0).is_err());
    }

    #[test]
    fn functional_r_huge_eta_equals_rho() {
        let law = PrwLaw::independent(StepLaw::Exponential { mean: 1.0 }, StepLaw::Constant { value: 1e9 }).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..50 {
            let path = generate_path(&law, 20.0, &mut rng).unwrap();
            for &t in &[0.0, 3.3, 19.9] {
                assert_eq!(functional_r(&path, t).unwrap(), rho(&path, t).unwrap());
            }
        }
    }

    #[test]
    fn shot_noise_constant_eta_first_term() {
        let c = 0.8;
        let law = unit_law(StepLaw::Constant { value: c });
        let log_t = 1.5f64;
        let p = path_from(&[(100.0, c)], 100.0);
        let v = shot_noise_v_log(&p, log_t, |l| law.phi_log(l)).unwrap();
        let t = log_t.exp();
        let want = (-t * (-c).exp()).exp() - (-t).exp();
        assert!((v - want).abs() < 1e-15);
    }

    #[test]
    fn phi_quadrature_against_closed_form() {
        // η ~ Exp(1): φ(u) = E exp(-u e^{-η}) = ∫_0^1 exp(-u z) dz = (1 - e^{-u})/u
        let law = PrwLaw::independent(StepLaw::Pareto { index: 0.5 }, StepLaw::Exponential { mean: 1.0 }).unwrap();
        for &u in &[0.01f64, 0.5, 3.0, 40.0] {
            let want = -(-u).exp_m1() / u;
            assert!((law.phi_log(u.ln()) - want).abs() < 1e-9, "u = {u}");
        }
    }

    #[test]
    fn renewal_sum_statistic_reduces_to_rho() {
        let law = PrwLaw::independent(StepLaw::Pareto { index: 0.5 }, StepLaw::Constant { value: 0.0 }).unwrap();
        let path = generate_path(&law, 1e3, &mut RngStream::new(5, 0).rng()).unwrap();
        let t = 500.0;
        let stat = lemma_tech_statistic(&path, t, |_| 1.0, |x| law.xi_tail(x)).unwrap();
        assert!((stat - law.xi_tail(t) * rho(&path, t).unwrap() as f64).abs() < 1e-12);
    }

    #[test]
    fn renewal_function_exact_cases() {
        let law = unit_law(StepLaw::Constant { value: 0.0 });
        let est = renewal_function_estimate(&law, &[0.5, 2.0, 7.3], 100, 1).unwrap();
        for p in &est {
            assert_eq!(p.mean, p.t.floor() + 1.0);
            assert_eq!(p.stderr, 0.0);
        }
        assert!(renewal_function_estimate(&law, &[1.0], 99, 1).is_err());

        let law = PrwLaw::independent(StepLaw::Exponential { mean: 1.0 }, StepLaw::Constant { value: 0.0 }).unwrap();
        let est = renewal_function_estimate(&law, &[1.0, 5.0, 10.0], 20_000, 2).unwrap();
        for p in &est {
            if p.t == 1.0 || p.t == 10.0 {
                assert!((p.mean - (p.t + 1.0)).abs() < 3.0 * p.stderr, "{p:?}");
            }
        }
        assert!(est.windows(2).all(|w| w[0].mean <= w[1].mean));
    }

    #[test]
    fn tail_soundness_under_doubled_margin() {
        let law = PrwLaw::independent(StepLaw::Pareto { index: 0.5 }, StepLaw::Pareto { index: 0.25 }).unwrap();
        let mut rng = RngStream::new(6, 0).rng();
        for _ in 0..50 {
            let path = generate_path(&law, 300.0, &mut rng).unwrap();
            let a = functional_t_log_with_margin(&path, 100.0, 40.0).unwrap();
            let b = functional_t_log_with_margin(&path, 100.0, 80.0).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_law_tails() {
        let law = PrwLaw::coupled(StepLaw::Pareto { index: 0.5 }, 2.0).unwrap();
        assert!((law.eta_tail(8.0) - 0.5).abs() < 1e-15);
        let (xi, eta) = law.sample_pair(&mut RngStream::new(7, 0).rng());
        assert_eq!(eta, 2.0 * xi);
    }

    fn any_step_law() -> impl Strategy<Value = StepLaw> {
        prop_oneof![
            (0.1f64..3.0).prop_map(|value| StepLaw::Constant { value }),
            (0.1f64..3.0).prop_map(|mean| StepLaw::Exponential { mean }),
            (0.1f64..0.95).prop_map(|index| StepLaw::Pareto { index }),
            Just(StepLaw::LogSlow),
        ]
    }

    proptest! {
        #[test]
        fn walk_invariants(xi in any_step_law(), eta in any_step_law(), seed in 0u64..1000) {
            let law = PrwLaw::independent(xi, eta).unwrap();
            let path = generate_path(&law, 60.0, &mut RngStream::new(seed, 0).rng()).unwrap();
            prop_assert!(path.s_values().windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(*path.s_values().last().unwrap() > 60.0);
            let mut prev = 0;
            for i in 0..=60 {
                let t = i as f64;
                let r = functional_r(&path, t).unwrap();
                let n = rho(&path, t).unwrap();
                prop_assert!(r <= n);
                prop_assert!(n >= prev);
                prev = n;
            }
        }

        #[test]
        fn tails_monotone_in_unit_interval(xi in any_step_law(), a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (tl, th) = (xi.tail(lo), xi.tail(hi));
            prop_assert!((0.0..=1.0).contains(&tl) && (0.0..=1.0).contains(&th));
            prop_assert!(th <= tl);
        }
    }
}
