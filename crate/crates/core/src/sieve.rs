//! The Bernoulli sieve: stick-breaking frequencies, ball allocation and the
//! number of empty boxes within the occupancy range.
//!
//! Frequencies are kept in log space. `Q_k = W_1 ⋯ W_k` is stored as
//! `ln Q_k = -(|ln W_1| + … + |ln W_k|)` and `P_k = Q_{k-1}(1 - W_k)` through
//! `ln(1 - W_k)`, so laws with heavy-tailed `|ln W|` (where `W` or `1 - W`
//! underflows in linear scale) sample exactly at any depth.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{domain, range, Result};
use crate::limit_law::{sample_z_pathint, AlphaBeta};
use crate::perturbed_walk::{PairLaw, HORIZON_MARGIN};
use crate::rng::{ln_gamma_variate, par_replicates, sample_binomial, sample_poisson, sample_uniform01, RngStream};
use crate::special::{ln_beta_unchecked, reg_inc_beta};
use crate::stats::{ks_two_sample, McAccumulator, McEstimate};

/// Depth beyond which the multinomial allocator stops thinning and puts all
/// remaining balls in the next box.
pub const MAX_ALLOCATION_DEPTH: usize = 100_000_000;

/// Law of the tail of `1 - W` in the log-Pareto mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tail", rename_all = "snake_case")]
pub enum NearOneTail {
    /// `P{V' > x} = x^{-beta}`, `x ≥ 1`.
    Pareto { beta: f64 },
    /// `P{V' > x} = 1/(1 + ln x)`, `x ≥ 1`; the `β = 0` regime.
    LogSlow,
}

impl NearOneTail {
    fn tail(&self, x: f64) -> f64 {
        if x <= 1.0 {
            return 1.0;
        }
        match *self {
            NearOneTail::Pareto { beta } => x.powf(-beta),
            NearOneTail::LogSlow => 1.0 / (1.0 + x.ln()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = sample_uniform01(rng);
        match *self {
            NearOneTail::Pareto { beta } => u.powf(-1.0 / beta),
            NearOneTail::LogSlow => (1.0 / u - 1.0).exp().min(f64::MAX),
        }
    }
}

/// Law of the stick-breaking factor `W ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WLaw {
    Uniform,
    Beta { a: f64, b: f64 },
    /// With probability `p`, `W = e^{-V}` with `P{V > x} = x^{-alpha}` on
    /// `[1, ∞)`; otherwise `W = 1 - e^{-V'}` with `V'` from `near_one`.
    /// For `ln n ≥ 1`: `P{W ≤ 1/n} = p (ln n)^{-alpha}` and
    /// `P{1 - W ≤ 1/n} = (1-p) P{V' ≥ ln n}`.
    LogMixture { p: f64, alpha: f64, near_one: NearOneTail },
}

/// One draw of `W` as `(ln W, ln(1 - W))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WDraw {
    pub log_w: f64,
    pub log_1mw: f64,
}

impl WDraw {
    pub fn w(&self) -> f64 {
        self.log_w.exp()
    }
}

impl WLaw {
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Self::Beta { a, b }.validated()
    }

    /// The mixture with Pareto tails on both sides, `0 < beta < alpha < 1`
    /// admissible.
    pub fn log_pareto_mixture(p: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::LogMixture { p, alpha, near_one: NearOneTail::Pareto { beta } }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            WLaw::Uniform => true,
            WLaw::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            WLaw::LogMixture { p, alpha, near_one } => {
                p > 0.0
                    && p < 1.0
                    && alpha > 0.0
                    && alpha.is_finite()
                    && match near_one {
                        NearOneTail::Pareto { beta } => beta > 0.0 && beta.is_finite(),
                        NearOneTail::LogSlow => true,
                    }
            }
        };
        if ok {
            Ok(self)
        } else {
            Err(domain(format!("invalid W law {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WDraw {
        match *self {
            WLaw::Uniform => {
                let u = sample_uniform01(rng);
                WDraw { log_w: u.ln(), log_1mw: (-u).ln_1p() }
            }
            WLaw::Beta { a, b } => {
                let lx = ln_gamma_variate(a, rng);
                let ly = ln_gamma_variate(b, rng);
                let hi = lx.max(ly);
                let ln_sum = hi + ((lx - hi).exp() + (ly - hi).exp()).ln();
                WDraw { log_w: lx - ln_sum, log_1mw: ly - ln_sum }
            }
            WLaw::LogMixture { p, alpha, near_one } => {
                if sample_uniform01(rng) < p {
                    let v = sample_uniform01(rng).powf(-1.0 / alpha);
                    WDraw { log_w: -v, log_1mw: (-(-v).exp()).ln_1p() }
                } else {
                    let v = near_one.sample(rng);
                    WDraw { log_w: (-(-v).exp()).ln_1p(), log_1mw: -v }
                }
            }
        }
    }

    /// `P{|ln W| ≥ y}`, i.e. `P{W ≤ e^{-y}}`.
    pub fn abs_log_w_tail(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        match *self {
            WLaw::Uniform => (-y).exp(),
            WLaw::Beta { a, b } => reg_inc_beta(a, b, (-y).exp()).unwrap_or(0.0),
            WLaw::LogMixture { p, alpha, near_one } => {
                let pareto = if y <= 1.0 { 1.0 } else { y.powf(-alpha) };
                // -ln(1 - e^{-V'}) ≥ y  ⇔  V' ≤ -ln(1 - e^{-y})
                let v = -(-(-y).exp()).ln_1p();
                p * pareto + (1.0 - p) * (1.0 - near_one.tail(v))
            }
        }
    }

    /// `P{|ln(1 - W)| ≥ y}`, i.e. `P{1 - W ≤ e^{-y}}`.
    pub fn abs_log_1mw_tail(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        match *self {
            WLaw::Uniform => (-y).exp(),
            WLaw::Beta { a, b } => reg_inc_beta(b, a, (-y).exp()).unwrap_or(0.0),
            WLaw::LogMixture { p, alpha, near_one } => {
                let v = -(-(-y).exp()).ln_1p();
                let pareto_le = if v <= 1.0 { 0.0 } else { 1.0 - v.powf(-alpha) };
                p * pareto_le + (1.0 - p) * near_one.tail(y)
            }
        }
    }

    /// `P{W ≤ x}`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            self.abs_log_w_tail(-x.ln())
        }
    }

    /// `P{1 - W ≤ x}`.
    pub fn cdf_one_minus(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            self.abs_log_1mw_tail(-x.ln())
        }
    }

    /// `E W^j (1-W)^m` where a closed form exists (beta family).
    pub fn mixed_moment(&self, j: u64, m: u64) -> Option<f64> {
        let (a, b) = match *self {
            WLaw::Uniform => (1.0, 1.0),
            WLaw::Beta { a, b } => (a, b),
            WLaw::LogMixture { .. } => return None,
        };
        Some(self.ln_mixed_moment(a, b, j, m).exp())
    }

    fn ln_mixed_moment(&self, a: f64, b: f64, j: u64, m: u64) -> f64 {
        ln_beta_unchecked(a + j as f64, b + m as f64) - ln_beta_unchecked(a, b)
    }

    /// Shape parameters when the law is in the beta family.
    pub fn beta_shapes(&self) -> Option<(f64, f64)> {
        match *self {
            WLaw::Uniform => Some((1.0, 1.0)),
            WLaw::Beta { a, b } => Some((a, b)),
            WLaw::LogMixture { .. } => None,
        }
    }
}

/// The sieve as a perturbed random walk: `ξ = |ln W|`, `η = |ln(1 - W)|`.
impl PairLaw for WLaw {
    fn sample_pair(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let d = self.sample(rng);
        (-d.log_w, -d.log_1mw)
    }

    fn xi_tail(&self, x: f64) -> f64 {
        self.abs_log_w_tail(x)
    }

    fn eta_tail(&self, x: f64) -> f64 {
        self.abs_log_1mw_tail(x)
    }
}

/// Prefix of the residual sequence `Q_0 = 1 > Q_1 > …` with the box
/// frequencies `P_k = Q_{k-1} - Q_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySeq {
    /// `ln Q_0 = 0, ln Q_1, …`
    log_q: Vec<f64>,
    /// `ln(1 - W_k)` for boxes `k = 1, 2, …`
    log_1mw: Vec<f64>,
}

impl Default for FrequencySeq {
    fn default() -> Self {
        Self::new()
    }
}

impl FrequencySeq {
    pub fn new() -> Self {
        Self { log_q: vec![0.0], log_1mw: Vec::new() }
    }

    /// Frequencies deep enough that `Q_depth < e^{log_level}`.
    pub fn generate<R: Rng + ?Sized>(law: &WLaw, log_level: f64, rng: &mut R) -> Self {
        let mut f = Self::new();
        f.extend_below(law, log_level, rng);
        f
    }

    /// Frequencies built from explicit factors `W_1, W_2, …`.
    pub fn from_factors(ws: &[f64]) -> Result<Self> {
        let mut f = Self::new();
        for &w in ws {
            if !(w > 0.0 && w < 1.0) {
                return Err(domain(format!("stick-breaking factor {w} outside (0,1)")));
            }
            f.push(WDraw { log_w: w.ln(), log_1mw: (-w).ln_1p() });
        }
        Ok(f)
    }

    pub fn push(&mut self, draw: WDraw) {
        let last = *self.log_q.last().unwrap();
        self.log_q.push(last + draw.log_w);
        self.log_1mw.push(draw.log_1mw);
    }

    pub fn extend_below<R: Rng + ?Sized>(&mut self, law: &WLaw, log_level: f64, rng: &mut R) {
        while self.last_log_q() >= log_level {
            self.push(law.sample(rng));
        }
    }

    /// Number of boxes with known frequency.
    pub fn depth(&self) -> usize {
        self.log_1mw.len()
    }

    pub fn last_log_q(&self) -> f64 {
        *self.log_q.last().unwrap()
    }

    /// `ln Q_k` for `0 ≤ k ≤ depth`.
    pub fn log_q(&self, k: usize) -> f64 {
        self.log_q[k]
    }

    /// `ln P_k` for `1 ≤ k ≤ depth`.
    pub fn log_p(&self, k: usize) -> f64 {
        self.log_q[k - 1] + self.log_1mw[k - 1]
    }

    pub fn p(&self, k: usize) -> f64 {
        self.log_p(k).exp()
    }

    /// Residual mass `1 - P_1 - … - P_depth = Q_depth`.
    pub fn residual(&self) -> f64 {
        self.last_log_q().exp()
    }
}

/// Occupancy statistics of one allocation of `n` balls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyResult {
    /// `K_n`, the number of occupied boxes.
    pub occupied: u64,
    /// `M_n`, the index of the last occupied box.
    pub last: u64,
    /// `L_n = M_n - K_n`, empty boxes within the occupancy range.
    pub empty: u64,
    pub balls: u64,
    /// The multinomial allocator hit its depth guard and placed the
    /// remaining balls together.
    pub truncated: bool,
}

impl OccupancyResult {
    fn from_counts(occupied: u64, last: u64, balls: u64, truncated: bool) -> Self {
        debug_assert!(balls == 0 || (occupied >= 1 && occupied <= last.min(balls)));
        Self { occupied, last, empty: last - occupied, balls, truncated }
    }
}

/// Place `n` uniform points in the boxes `(Q_k, Q_{k-1})` delimited by
/// `boundary(k) = ln Q_k`. Points are produced as descending order statistics
/// (`ln U_(m) = ln U_(m+1) + ln V / m`), which has the law of a sorted
/// i.i.d. uniform sample.
fn allocate_sorted<R, B>(n: u64, rng: &mut R, mut boundary: B) -> Result<OccupancyResult>
where
    R: Rng + ?Sized,
    B: FnMut(usize, &mut R) -> Result<f64>,
{
    let mut log_u = 0.0;
    let mut k = 1usize;
    let mut lower = boundary(1, rng)?;
    let mut occupied = 0u64;
    let mut last_marked = 0usize;
    for m in (1..=n).rev() {
        log_u += sample_uniform01(rng).ln() / m as f64;
        while log_u <= lower {
            k += 1;
            lower = boundary(k, rng)?;
        }
        if k != last_marked {
            occupied += 1;
            last_marked = k;
        }
    }
    Ok(OccupancyResult::from_counts(occupied, last_marked as u64, n, false))
}

/// Exact occupancy sample via the uniform-points representation, extending
/// the frequencies lazily until they pass the smallest point.
pub fn allocate_uniform<R: Rng + ?Sized>(law: &WLaw, n: u64, rng: &mut R) -> OccupancyResult {
    let mut log_q = 0.0;
    allocate_sorted(n, rng, |_, rng| {
        log_q += law.sample(rng).log_w;
        Ok(log_q)
    })
    .expect("lazy boundaries never fail")
}

/// Allocation on fixed frequencies; a range error if some point falls past
/// the stored depth.
pub fn allocate_on<R: Rng + ?Sized>(freqs: &FrequencySeq, n: u64, rng: &mut R) -> Result<OccupancyResult> {
    allocate_sorted(n, rng, |k, _| {
        if k > freqs.depth() {
            Err(range(format!("a ball fell below Q_{} = e^{}", freqs.depth(), freqs.last_log_q())))
        } else {
            Ok(freqs.log_q(k))
        }
    })
}

/// Exact occupancy sample by sequential binomial thinning: box `k` receives
/// `Binomial(remaining, P_k / Q_{k-1}) = Binomial(remaining, 1 - W_k)`.
/// Cost grows with the number of boxes, not balls.
pub fn allocate_multinomial<R: Rng + ?Sized>(law: &WLaw, n: u64, rng: &mut R) -> OccupancyResult {
    let mut remaining = n;
    let mut k = 0u64;
    let mut occupied = 0u64;
    let mut last = 0u64;
    while remaining > 0 {
        k += 1;
        if k as usize > MAX_ALLOCATION_DEPTH {
            return OccupancyResult::from_counts(occupied + 1, k, n, true);
        }
        let d = law.sample(rng);
        let count = sample_binomial(remaining, d.log_1mw.exp(), rng).expect("probability in [0,1]");
        if count > 0 {
            occupied += 1;
            last = k;
            remaining -= count;
        }
    }
    OccupancyResult::from_counts(occupied, last, n, false)
}

/// `Poisson(t)` balls, then [`allocate_uniform`].
pub fn poissonized_occupancy<R: Rng + ?Sized>(law: &WLaw, t: f64, rng: &mut R) -> Result<OccupancyResult> {
    let n = sample_poisson(t, rng)?;
    Ok(allocate_uniform(law, n, rng))
}

fn check_depth(freqs: &FrequencySeq, log_t: f64) -> Result<()> {
    let need = -HORIZON_MARGIN - log_t;
    if freqs.last_log_q() >= need {
        return Err(range(format!(
            "frequencies reach ln Q = {} but ln t = {log_t} needs below {need}",
            freqs.last_log_q()
        )));
    }
    Ok(())
}

/// Log level to which frequencies must be generated for the conditional
/// formulas at `ln t`.
pub fn required_log_level(log_t: f64) -> f64 {
    -HORIZON_MARGIN - log_t - 1.0
}

/// `E(L(t) | (P_k)) = Σ_k (e^{-tP_k} - e^{-t(1 - P_1 - … - P_{k-1})})`.
pub fn conditional_mean_l(freqs: &FrequencySeq, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(domain(format!("t must be finite and nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    conditional_mean_l_log(freqs, t.ln())
}

/// [`conditional_mean_l`] given `ln t`.
pub fn conditional_mean_l_log(freqs: &FrequencySeq, log_t: f64) -> Result<f64> {
    check_depth(freqs, log_t)?;
    Ok((1..=freqs.depth()).map(|k| box_terms(freqs, log_t, k).mean).sum())
}

struct BoxTerms {
    /// `e^{-tP_k} - 1`
    a_m1: f64,
    /// `e^{-tQ_{k-1}}`
    b: f64,
    /// `e^{-tP_k} - e^{-tQ_{k-1}}`
    mean: f64,
}

fn box_terms(freqs: &FrequencySeq, log_t: f64, k: usize) -> BoxTerms {
    let tp = (log_t + freqs.log_p(k)).exp();
    let tq = (log_t + freqs.log_q(k - 1)).exp();
    let a_m1 = (-tp).exp_m1();
    let b_m1 = (-tq).exp_m1();
    BoxTerms { a_m1, b: 1.0 + b_m1, mean: a_m1 - b_m1 }
}

/// `Var(L(t) | (P_k)) = y_1 + y_2 + 2 y_3` with
/// `y_1 = Σ (e^{-tP_k} - e^{-2tP_k})`,
/// `y_2 = Σ e^{-tR_k}(2e^{-tP_k} - e^{-tR_k} - 1)`,
/// `y_3 = Σ_{i<j} e^{-tR_i}(e^{-tP_j} - e^{-tR_j})`, where
/// `R_k = 1 - P_1 - … - P_{k-1} = Q_{k-1}`.
pub fn conditional_var_l(freqs: &FrequencySeq, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(domain(format!("t must be finite and nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    conditional_var_l_log(freqs, t.ln())
}

/// [`conditional_var_l`] given `ln t`.
pub fn conditional_var_l_log(freqs: &FrequencySeq, log_t: f64) -> Result<f64> {
    check_depth(freqs, log_t)?;
    let (mut y1, mut y2, mut y3) = (0.0, 0.0, 0.0);
    let mut prefix_b = 0.0;
    for k in 1..=freqs.depth() {
        let BoxTerms { a_m1, b, mean } = box_terms(freqs, log_t, k);
        let a = 1.0 + a_m1;
        y1 += a * -a_m1;
        // 2a - b - 1 = (a - 1) + (a - b)
        y2 += b * (a_m1 + mean);
        y3 += prefix_b * mean;
        prefix_b += b;
    }
    Ok((y1 + y2 + 2.0 * y3).max(0.0))
}

/// `P{W ≤ 1/n} / P{1 - W ≤ 1/n}`.
pub fn normalization_ratio(law: &WLaw, n: u64) -> Result<f64> {
    if n < 3 {
        return Err(domain(format!("normalization needs n >= 3, got {n}")));
    }
    let y = (n as f64).ln();
    let num = law.abs_log_w_tail(y);
    let den = law.abs_log_1mw_tail(y);
    if !(den > 0.0) {
        return Err(domain(format!("P{{1 - W <= 1/{n}}} = 0: no normalization for this law")));
    }
    Ok(num / den)
}

/// Settings of the normalized-`L_n` trend experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremConfig {
    pub n_grid: Vec<u64>,
    pub replicates: usize,
    pub limit: AlphaBeta,
    pub z_draws: usize,
    pub grid_step: f64,
    pub seed: u64,
}

/// One grid point of the trend experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremRow {
    pub n: u64,
    pub ratio: f64,
    pub mean_l: McEstimate,
    pub mean_normalized: McEstimate,
    pub ks_to_limit: f64,
}

/// Per `n`: mean of `L_n` and of `ratio(n)·L_n`, and the KS distance of the
/// normalized sample to one shared path-integral sample of the limit.
pub fn theorem_main_experiment(law: &WLaw, config: &TheoremConfig) -> Result<Vec<TheoremRow>> {
    if config.replicates == 0 || config.z_draws == 0 {
        return Err(domain("experiment needs positive replicate counts"));
    }
    let z_seed = RngStream::derive_seed(config.seed, "limit-reference");
    let reference: Vec<f64> = par_replicates(z_seed, config.z_draws, |rng| {
        sample_z_pathint(config.limit, config.grid_step, rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    config
        .n_grid
        .iter()
        .map(|&n| {
            let ratio = normalization_ratio(law, n)?;
            let seed = RngStream::derive_seed(config.seed, &format!("sieve-n{n}"));
            let ls: Vec<u64> = par_replicates(seed, config.replicates, |rng| allocate_multinomial(law, n, rng).empty);
            let mean_l = ls.iter().map(|&l| l as f64).collect::<McAccumulator>().estimate();
            let normalized: Vec<f64> = ls.iter().map(|&l| ratio * l as f64).collect();
            let mean_normalized = normalized.iter().copied().collect::<McAccumulator>().estimate();
            let ks_to_limit = ks_two_sample(&normalized, &reference)?;
            Ok(TheoremRow { n, ratio, mean_l, mean_normalized, ks_to_limit })
        })
        .collect()
}

/// Least-squares slope of `ln E L_n` against `ln ln n`.
pub fn log_log_slope(rows: &[TheoremRow]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(domain("slope needs at least two grid points"));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln().ln(), r.mean_l.mean.ln()))
        .collect();
    crate::stats::ols_slope(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{tv_distance, Pmf};
    use proptest::prelude::*;

    fn rng(seed: u64) -> crate::rng::StreamRng {
        RngStream::new(seed, 0).rng()
    }

    #[test]
    fn zero_and_one_ball() {
        let law = WLaw::Uniform;
        let mut r = rng(1);
        let zero = OccupancyResult { occupied: 0, last: 0, empty: 0, balls: 0, truncated: false };
        assert_eq!(allocate_uniform(&law, 0, &mut r), zero);
        assert_eq!(allocate_multinomial(&law, 0, &mut r), zero);
        assert_eq!(poissonized_occupancy(&law, 0.0, &mut r).unwrap(), zero);
        for _ in 0..200 {
            let o = allocate_uniform(&law, 1, &mut r);
            assert_eq!(o.occupied, 1);
            assert_eq!(o.empty, o.last - 1);
        }
    }

    #[test]
    fn half_split_single_ball_is_geometric() {
        // W ≡ 1/2 emulated by fixed frequencies P_k = 2^{-k}
        let freqs = FrequencySeq::from_factors(&[0.5; 80]).unwrap();
        let mut r = rng(2);
        let n = 100_000;
        let mut counts = [0u64; 12];
        for _ in 0..n {
            let o = allocate_on(&freqs, 1, &mut r).unwrap();
            if (o.last as usize) < 12 {
                counts[o.last as usize] += 1;
            }
        }
        for (k, &c) in counts.iter().enumerate().skip(1).take(6) {
            let p = 0.5f64.powi(k as i32);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 4.0 * se, "box {k}");
        }
    }

    #[test]
    fn allocate_on_reports_insufficient_depth() {
        let freqs = FrequencySeq::from_factors(&[0.5, 0.5]).unwrap();
        let mut r = rng(3);
        let res: Vec<_> = (0..100).map(|_| allocate_on(&freqs, 20, &mut r)).collect();
        assert!(res.iter().any(|x| matches!(x, Err(crate::Error::Range(_)))));
    }

    #[test]
    fn conditional_formulas_at_zero_and_first_term() {
        let law = WLaw::Uniform;
        let freqs = FrequencySeq::generate(&law, required_log_level(5f64.ln()), &mut rng(4));
        assert_eq!(conditional_mean_l(&freqs, 0.0).unwrap(), 0.0);
        assert_eq!(conditional_var_l(&freqs, 0.0).unwrap(), 0.0);
        let t = 5.0;
        let k1 = (-t * freqs.p(1)).exp() - (-t).exp();
        let bt = box_terms(&freqs, t.ln(), 1);
        assert!((bt.mean - k1).abs() < 1e-15);
        let shallow = FrequencySeq::from_factors(&[0.5; 3]).unwrap();
        assert!(conditional_mean_l(&shallow, 5.0).is_err());
        assert!(conditional_var_l(&shallow, 5.0).is_err());
    }

    #[test]
    fn conditional_variance_matches_covariance_form() {
        // Var = Σ m_k(1-m_k) + 2 Σ_{i<j} e^{-tQ_{i-1}} m_j, evaluated naively
        let law = WLaw::beta(2.0, 3.0).unwrap();
        let mut r = rng(5);
        for &t in &[3.0f64, 100.0, 1e4] {
            let freqs = FrequencySeq::generate(&law, required_log_level(t.ln()), &mut r);
            let d = freqs.depth();
            let p: Vec<f64> = (1..=d).map(|k| freqs.p(k)).collect();
            let q: Vec<f64> = (0..d).map(|k| freqs.log_q(k).exp()).collect();
            let m: Vec<f64> = (0..d).map(|k| (-t * p[k]).exp() - (-t * q[k]).exp()).collect();
            let mut naive: f64 = m.iter().map(|x| x * (1.0 - x)).sum();
            for i in 0..d {
                for j in i + 1..d {
                    naive += 2.0 * (-t * q[i]).exp() * m[j];
                }
            }
            let got = conditional_var_l(&freqs, t).unwrap();
            assert!((got - naive).abs() < 1e-10 * (1.0 + naive), "t {t}: {got} vs {naive}");
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn normalization_ratio_cases() {
        let mix = WLaw::log_pareto_mixture(0.5, 0.6, 0.3).unwrap();
        for &n in &[3u64, 10, 1000, 1_000_000] {
            let want = (n as f64).ln().powf(-0.3);
            assert!(((normalization_ratio(&mix, n).unwrap() - want) / want).abs() < 1e-12, "n {n}");
            assert!((normalization_ratio(&WLaw::Uniform, n).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(normalization_ratio(&mix, 2).is_err());
        let b = WLaw::beta(2.0, 3.0).unwrap();
        let r = normalization_ratio(&b, 50).unwrap();
        assert!(r > 0.0 && r.is_finite());
    }

    #[test]
    fn mixture_tails_are_exact() {
        let mix = WLaw::log_pareto_mixture(0.25, 0.6, 0.3).unwrap();
        for &n in &[10.0f64, 1e3, 1e8] {
            let y = n.ln();
            assert!((mix.cdf(1.0 / n) - 0.25 * y.powf(-0.6)).abs() < 1e-14);
            assert!((mix.cdf_one_minus(1.0 / n) - 0.75 * y.powf(-0.3)).abs() < 1e-14);
        }
    }

    #[test]
    fn empirical_tails_match_evaluators() {
        let laws = [
            WLaw::Uniform,
            WLaw::beta(2.0, 3.0).unwrap(),
            WLaw::log_pareto_mixture(0.5, 0.6, 0.3).unwrap(),
            WLaw::LogMixture { p: 0.5, alpha: 0.6, near_one: NearOneTail::LogSlow },
        ];
        let mut r = rng(6);
        for law in laws {
            let draws: Vec<WDraw> = (0..50_000).map(|_| law.sample(&mut r)).collect();
            for &y in &[0.3, 1.0, 2.0, 7.0] {
                let emp = draws.iter().filter(|d| -d.log_w >= y).count() as f64 / draws.len() as f64;
                let want = law.abs_log_w_tail(y);
                assert!((emp - want).abs() < 4.0 * (want * (1.0 - want) / 5e4).sqrt() + 1e-9, "{law:?} y {y}");
                let emp = draws.iter().filter(|d| -d.log_1mw >= y).count() as f64 / draws.len() as f64;
                let want = law.abs_log_1mw_tail(y);
                assert!((emp - want).abs() < 4.0 * (want * (1.0 - want) / 5e4).sqrt() + 1e-9, "{law:?} y {y}");
            }
        }
    }

    #[test]
    fn beta_mixed_moments() {
        let u = WLaw::Uniform;
        // E W^j (1-W)^m = j! m! / (j+m+1)!
        assert!((u.mixed_moment(2, 3).unwrap() - 2.0 * 6.0 / 720.0).abs() < 1e-15);
        assert!(WLaw::log_pareto_mixture(0.5, 0.6, 0.3).unwrap().mixed_moment(1, 1).is_none());
    }

    #[test]
    fn symmetric_w_small_n_is_geometric() {
        let law = WLaw::Uniform;
        let ls: Vec<u64> = par_replicates(7, 40_000, |r| allocate_uniform(&law, 10, r).empty);
        let emp = Pmf::from_samples(&ls).unwrap();
        assert!(tv_distance(&emp, &Pmf::geometric(0.5, 60)) < 0.015);
    }

    #[test]
    fn allocators_agree_on_mean_l() {
        let law = WLaw::beta(2.0, 3.0).unwrap();
        let a: McAccumulator = par_replicates(8, 30_000, |r| allocate_uniform(&law, 60, r).empty as f64).into_iter().collect();
        let b: McAccumulator = par_replicates(9, 30_000, |r| allocate_multinomial(&law, 60, r).empty as f64).into_iter().collect();
        let (a, b) = (a.estimate(), b.estimate());
        assert!((a.mean - b.mean).abs() < 4.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt());
    }

    #[test]
    fn poissonized_ball_count_mean() {
        let law = WLaw::Uniform;
        let est: McAccumulator = par_replicates(10, 20_000, |r| poissonized_occupancy(&law, 30.0, r).unwrap().balls as f64)
            .into_iter()
            .collect();
        assert!(est.estimate().within(30.0, 4.0, 0.0));
    }

    #[test]
    fn poissonization_consistency() {
        // E L(t) = E[E(L(t) | P)]
        let law = WLaw::beta(2.0, 3.0).unwrap();
        let t = 50.0f64;
        let direct: McAccumulator = par_replicates(11, 40_000, |r| poissonized_occupancy(&law, t, r).unwrap().empty as f64)
            .into_iter()
            .collect();
        let cond: McAccumulator = par_replicates(12, 40_000, |r| {
            let f = FrequencySeq::generate(&law, required_log_level(t.ln()), r);
            conditional_mean_l(&f, t).unwrap()
        })
        .into_iter()
        .collect();
        let (a, b) = (direct.estimate(), cond.estimate());
        assert!((a.mean - b.mean).abs() < 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt(), "{a:?} {b:?}");
    }

    #[test]
    fn huge_ball_counts_multinomial() {
        let law = WLaw::beta(2.0, 1.0).unwrap();
        let o = allocate_multinomial(&law, 10_000_000, &mut rng(13));
        assert_eq!(o.empty, o.last - o.occupied);
        assert!(!o.truncated);
        let mix = WLaw::log_pareto_mixture(0.5, 0.6, 0.3).unwrap();
        let o = allocate_uniform(&mix, 10_000_000, &mut rng(14));
        assert!(o.occupied >= 1);
    }

    fn any_law() -> impl Strategy<Value = WLaw> {
        prop_oneof![
            Just(WLaw::Uniform),
            (0.2f64..5.0, 0.2f64..5.0).prop_map(|(a, b)| WLaw::Beta { a, b }),
            (0.1f64..0.9, 0.2f64..0.9, 0.05f64..0.9)
                .prop_map(|(p, alpha, beta)| WLaw::LogMixture { p, alpha, near_one: NearOneTail::Pareto { beta } }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn occupancy_invariants(law in any_law(), n in 0u64..400, seed in 0u64..10_000) {
            for o in [allocate_uniform(&law, n, &mut rng(seed)), allocate_multinomial(&law, n, &mut rng(seed))] {
                prop_assert_eq!(o.balls, n);
                prop_assert_eq!(o.empty, o.last - o.occupied);
                if n == 0 {
                    prop_assert_eq!((o.occupied, o.last), (0, 0));
                } else {
                    prop_assert!(o.occupied >= 1 && o.occupied <= n.min(o.last));
                }
            }
        }

        #[test]
        fn frequencies_valid(law in any_law(), seed in 0u64..10_000) {
            let f = FrequencySeq::generate(&law, -30.0, &mut rng(seed));
            let mut sum_p = 0.0;
            for k in 1..=f.depth() {
                prop_assert!(f.log_q(k) <= f.log_q(k - 1));
                sum_p += f.p(k);
            }
            prop_assert!((sum_p + f.residual() - 1.0).abs() < 1e-9);
            prop_assert!(f.residual() < (-30.0f64).exp());
        }

        #[test]
        fn draws_inside_unit_interval(a in 0.2f64..5.0, b in 0.2f64..5.0, seed in 0u64..10_000) {
            let mut r = rng(seed);
            for law in [WLaw::Uniform, WLaw::Beta { a, b }] {
                let d = law.sample(&mut r);
                prop_assert!(d.w() > 0.0 && d.w() < 1.0);
                prop_assert!((d.log_w.exp() + d.log_1mw.exp() - 1.0).abs() < 1e-12);
            }
        }
    }
}
