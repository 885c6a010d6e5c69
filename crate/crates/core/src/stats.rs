//! Distances between samples and laws, and Monte Carlo bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: u64,
}

impl McEstimate {
    /// Whether `target` lies within `k` standard errors plus an absolute slack.
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + slack
    }
}

/// Single-pass mean/variance accumulator (Welford updates, Chan merges).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl McAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combine with the accumulator of a disjoint batch.
    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * na * nb / n as f64;
        Self { count: n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self) -> McEstimate {
        let stderr = if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        };
        McEstimate { mean: self.mean, stderr, count: self.count }
    }

    /// Estimate, or a domain error for an empty stream.
    pub fn try_estimate(&self) -> Result<McEstimate> {
        if self.count == 0 {
            return Err(domain("no values accumulated"));
        }
        Ok(self.estimate())
    }
}

impl FromIterator<f64> for McAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        acc.extend(iter);
        acc
    }
}

impl Extend<f64> for McAccumulator {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}

/// Accumulate a stream of values into an estimate.
pub fn mc_accumulate<I: IntoIterator<Item = f64>>(values: I) -> Result<McEstimate> {
    values.into_iter().collect::<McAccumulator>().try_estimate()
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(domain("ecdf of an empty sample"));
        }
        if xs.iter().any(|x| x.is_nan()) {
            return Err(domain("ecdf sample contains NaN"));
        }
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

pub fn ecdf(xs: &[f64]) -> Result<Ecdf> {
    Ecdf::new(xs)
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F_x - F_y|`, exact via a
/// merged walk over both sorted samples (ties advance together).
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let a = Ecdf::new(xs)?;
    let b = Ecdf::new(ys)?;
    let (a, b) = (a.sorted(), b.sorted());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample Kolmogorov–Smirnov distance against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> Result<f64> {
    let e = Ecdf::new(xs)?;
    let n = e.len() as f64;
    let d = e
        .sorted()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(d)
}

/// Distribution on `{0, 1, ..., len-1}` plus unaccounted mass beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    masses: Vec<f64>,
    tail_deficit: f64,
}

impl Pmf {
    /// Mass-conservation tolerance for `sum + tail_deficit = 1`.
    pub const MASS_TOL: f64 = 1e-9;

    pub fn new(masses: Vec<f64>, tail_deficit: f64) -> Result<Self> {
        if masses.iter().any(|&m| !(m >= 0.0)) || !(tail_deficit >= 0.0) {
            return Err(domain("pmf masses and deficit must be nonnegative"));
        }
        let total: f64 = masses.iter().sum::<f64>() + tail_deficit;
        if (total - 1.0).abs() > Self::MASS_TOL {
            return Err(domain(format!("pmf mass plus deficit is {total}, not 1")));
        }
        Ok(Self { masses, tail_deficit })
    }

    /// Point mass at `m`.
    pub fn point(m: usize) -> Self {
        let mut masses = vec![0.0; m + 1];
        masses[m] = 1.0;
        Self { masses, tail_deficit: 0.0 }
    }

    /// Empirical pmf of nonnegative integer samples.
    pub fn from_samples(samples: &[u64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain("empirical pmf of an empty sample"));
        }
        let max = *samples.iter().max().unwrap() as usize;
        let mut counts = vec![0u64; max + 1];
        for &s in samples {
            counts[s as usize] += 1;
        }
        let n = samples.len() as f64;
        Ok(Self { masses: counts.into_iter().map(|c| c as f64 / n).collect(), tail_deficit: 0.0 })
    }

    /// Geometric law on `{0,1,...}` with success probability `p`, truncated
    /// at `len` atoms with the remainder carried as deficit.
    pub fn geometric(p: f64, len: usize) -> Self {
        let masses: Vec<f64> = (0..len).map(|m| p * (1.0 - p).powi(m as i32)).collect();
        let tail_deficit = (1.0 - p).powi(len as i32);
        Self { masses, tail_deficit }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn tail_deficit(&self) -> f64 {
        self.tail_deficit
    }

    pub fn mass(&self, m: usize) -> f64 {
        self.masses.get(m).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.masses.iter().enumerate().map(|(m, p)| m as f64 * p).sum()
    }
}

/// Total variation distance `½Σ|p - q| + ½|deficit_p - deficit_q|`.
pub fn tv_distance(p: &Pmf, q: &Pmf) -> f64 {
    let len = p.len().max(q.len());
    let body: f64 = (0..len).map(|m| (p.mass(m) - q.mass(m)).abs()).sum();
    (0.5 * body + 0.5 * (p.tail_deficit - q.tail_deficit).abs()).min(1.0)
}

/// Pearson chi-square statistic over bins with positive expected count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
}

pub fn chi_square(observed: &[f64], expected: &[f64]) -> Result<ChiSquare> {
    if observed.is_empty() || observed.len() != expected.len() {
        return Err(domain("chi-square needs nonempty, equally long bins"));
    }
    let mut statistic = 0.0;
    let mut bins = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            statistic += (o - e) * (o - e) / e;
            bins += 1;
        } else if o > 0.0 {
            return Err(domain("observed count in a bin with zero expectation"));
        }
    }
    if bins < 2 {
        return Err(domain("chi-square needs at least two populated bins"));
    }
    Ok(ChiSquare { statistic, dof: bins - 1 })
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(domain("slope needs at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(domain("slope needs distinct abscissae"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ols_slope_of_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        assert!((ols_slope(&pts).unwrap() + 0.5).abs() < 1e-14);
        assert!(ols_slope(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn constant_stream_has_zero_stderr() {
        let est = mc_accumulate(std::iter::repeat_n(2.5, 100)).unwrap();
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.count, 100);
    }

    #[test]
    fn alternating_bernoulli() {
        let est = mc_accumulate((0..10_000).map(|i| (i % 2) as f64)).unwrap();
        assert!((est.mean - 0.5).abs() < 1e-15);
        // sample sd = sqrt(10000/9999 * 0.25)
        assert!((est.stderr - 0.005).abs() < 1e-6);
    }

    #[test]
    fn empty_inputs_are_domain_errors() {
        assert!(mc_accumulate(std::iter::empty()).is_err());
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(ecdf(&[]).is_err());
        assert!(Pmf::from_samples(&[]).is_err());
    }

    #[test]
    fn ks_edge_cases() {
        let xs = [0.3, 1.2, 5.0, 2.2];
        assert_eq!(ks_two_sample(&xs, &xs).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0, 4.0]).unwrap(), 1.0);
        // ties across samples
        assert_eq!(ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn ks_one_sample_uniform_grid() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn ecdf_is_right_continuous() {
        let e = ecdf(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(2.0), 0.75);
        assert_eq!(e.eval(3.0), 1.0);
    }

    #[test]
    fn tv_edge_cases() {
        let g = Pmf::geometric(0.5, 40);
        assert_eq!(tv_distance(&g, &g), 0.0);
        assert_eq!(tv_distance(&Pmf::point(0), &Pmf::point(1)), 1.0);
        let d = Pmf::new(vec![0.5], 0.5).unwrap();
        assert!((tv_distance(&d, &Pmf::point(0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pmf_rejects_bad_mass() {
        assert!(Pmf::new(vec![0.5, 0.4], 0.0).is_err());
        assert!(Pmf::new(vec![-0.1, 1.1], 0.0).is_err());
        assert!(Pmf::new(vec![0.5, 0.4], 0.1).is_ok());
    }

    #[test]
    fn chi_square_counts_dof() {
        let c = chi_square(&[10.0, 20.0, 30.0], &[20.0, 20.0, 20.0]).unwrap();
        assert_eq!(c.dof, 2);
        assert!((c.statistic - 10.0).abs() < 1e-12);
        assert!(chi_square(&[1.0, 2.0], &[0.0, 3.0]).is_err());
    }

    fn pmf_strategy() -> impl Strategy<Value = Pmf> {
        prop::collection::vec(0.0f64..1.0, 1..12).prop_map(|w| {
            let s: f64 = w.iter().sum::<f64>() + 1e-3;
            let masses: Vec<f64> = w.iter().map(|x| x / s).collect();
            let deficit = (1.0 - masses.iter().sum::<f64>()).max(0.0);
            Pmf::new(masses, deficit).unwrap()
        })
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_bounded(
            xs in prop::collection::vec(-5.0f64..5.0, 1..60),
            ys in prop::collection::vec(-5.0f64..5.0, 1..60),
        ) {
            let d1 = ks_two_sample(&xs, &ys).unwrap();
            let d2 = ks_two_sample(&ys, &xs).unwrap();
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1));
        }

        #[test]
        fn tv_metric_properties(p in pmf_strategy(), q in pmf_strategy(), r in pmf_strategy()) {
            let pq = tv_distance(&p, &q);
            prop_assert!((pq - tv_distance(&q, &p)).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!(pq <= tv_distance(&p, &r) + tv_distance(&r, &q) + 1e-12);
        }

        #[test]
        fn merge_matches_concatenation(
            xs in prop::collection::vec(-1e3f64..1e3, 0..80),
            ys in prop::collection::vec(-1e3f64..1e3, 0..80),
            zs in prop::collection::vec(-1e3f64..1e3, 0..80),
        ) {
            let a: McAccumulator = xs.iter().copied().collect();
            let b: McAccumulator = ys.iter().copied().collect();
            let c: McAccumulator = zs.iter().copied().collect();
            let all: McAccumulator = xs.iter().chain(&ys).chain(&zs).copied().collect();
            let left = a.merge(&b).merge(&c);
            let right = a.merge(&b.merge(&c));
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs()));
            prop_assert_eq!(left.count(), all.count());
            prop_assert!(close(left.mean(), all.mean()));
            prop_assert!(close(left.variance(), all.variance()));
            prop_assert!(close(left.mean(), right.mean()));
            prop_assert!(close(left.variance(), right.variance()));
        }
    }
}
