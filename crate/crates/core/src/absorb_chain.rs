//! Nonincreasing Markov chains on the integers that are absorbed at a floor
//! `M`, and the number of zero decrements (repeats) they make before
//! absorption.
//!
//! The Bernoulli sieve fits this frame: with `Y_k(n)` the number of balls
//! not placed in the first `k` boxes, `Y` is a chain with
//! `s_{i,j} = C(i,j) E W^j (1-W)^{i-j}` and floor `0`, and its zero
//! decrements are exactly the empty boxes `L_n`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, range, spec, Error, Result};
use crate::rng::sample_uniform01;
use crate::sieve::WLaw;
use crate::special::ln_gamma_unchecked;
use crate::stats::Pmf;

/// Default mass that the exact pmf may leave unassigned.
pub const DEFAULT_DEFICIT_CAP: f64 = 1e-12;

/// Largest zero-decrement count the DP will tabulate.
pub const MAX_DP_COUNT: usize = 10_000;

/// Largest state for which dense rows are supported.
pub const MAX_STATES: usize = 5000;

const ROW_SUM_TOL: f64 = 1e-12;

/// Transition rows `s_{i,M}, …, s_{i,i}` for states `M+1, …, n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    floor: usize,
    rows: Vec<Vec<f64>>,
}

impl ChainSpec {
    /// `rows[r]` belongs to state `floor + 1 + r` and has `r + 2` entries.
    pub fn new(floor: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() > MAX_STATES {
            return Err(spec(format!("{} states exceed the supported {MAX_STATES}", rows.len())));
        }
        for (r, row) in rows.iter().enumerate() {
            let i = floor + 1 + r;
            if row.len() != r + 2 {
                return Err(spec(format!("row {i} has {} entries, expected {}", row.len(), r + 2)));
            }
            if let Some(x) = row.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
                return Err(spec(format!("row {i} has invalid probability {x}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(spec(format!("row {i} sums to {sum}")));
            }
            if !(row[r] > 0.0) {
                return Err(spec(format!("s_{{{i},{}}} = 0: absorption is not certain", i - 1)));
            }
        }
        Ok(Self { floor, rows })
    }

    pub fn floor(&self) -> usize {
        self.floor
    }

    /// Largest state with a row.
    pub fn max_state(&self) -> usize {
        self.floor + self.rows.len()
    }

    /// `s_{i,floor..=i}`.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        if i <= self.floor || i > self.max_state() {
            return Err(spec(format!("no row for state {i} (floor {}, max {})", self.floor, self.max_state())));
        }
        Ok(&self.rows[i - self.floor - 1])
    }

    /// `s_{i,j}`, zero outside `floor ≤ j ≤ i`.
    pub fn prob(&self, i: usize, j: usize) -> Result<f64> {
        let row = self.row(i)?;
        Ok(if j < self.floor || j > i { 0.0 } else { row[j - self.floor] })
    }

    /// Whether `s_{i,M} = s_{i,i}` for every state, which forces the
    /// zero-decrement count to be geometric with parameter 1/2.
    pub fn floor_matches_diagonal(&self, tol: f64) -> bool {
        self.rows.iter().all(|row| (row[0] - row[row.len() - 1]).abs() <= tol)
    }

    fn check_start(&self, n: usize) -> Result<()> {
        if n < self.floor {
            return Err(spec(format!("start {n} lies below the floor {}", self.floor)));
        }
        if n > self.max_state() {
            return Err(spec(format!("row for state {n} missing (max {})", self.max_state())));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(r, row)| (self.floor + 1 + r, row.iter().map(|x| x.to_string()).collect()))
            .collect();
        serde_json::to_string_pretty(&ChainSpecJson { floor: self.floor, rows }).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ChainSpecJson = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let mut rows = Vec::with_capacity(raw.rows.len());
        for (expect, (i, row)) in (raw.floor + 1..).zip(&raw.rows) {
            if *i != expect {
                return Err(spec(format!("rows must cover states {}.. contiguously, found {i}", raw.floor + 1)));
            }
            let parsed = row
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("row {i}: {s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(parsed);
        }
        Self::new(raw.floor, rows)
    }
}

#[derive(Serialize, Deserialize)]
struct ChainSpecJson {
    floor: usize,
    rows: BTreeMap<usize, Vec<String>>,
}

/// Law of the zero-decrement count from start `n`, via
/// `P{Z_i = j} = s_{i,i} P{Z_i = j-1} + Σ_{M≤k<i} s_{i,k} P{Z_k = j}` and
/// `P{Z_M = 0} = 1`, tabulated one count `j` at a time until the mass at `n`
/// exceeds `1 - deficit_cap`.
pub fn exact_zero_decrement_pmf(spec_: &ChainSpec, n: usize, deficit_cap: f64) -> Result<Pmf> {
    if !(deficit_cap > 0.0 && deficit_cap <= 1e-9) {
        return Err(domain(format!("deficit cap must lie in (0, 1e-9], got {deficit_cap}")));
    }
    spec_.check_start(n)?;
    let m = spec_.floor;
    if n == m {
        return Ok(Pmf::point(0));
    }
    let width = n - m + 1;
    let mut prev = vec![0.0; width];
    let mut col = vec![0.0; width];
    let mut masses = Vec::new();
    let mut total = 0.0;
    for j in 0..=MAX_DP_COUNT {
        col[0] = if j == 0 { 1.0 } else { 0.0 };
        for r in 1..width {
            let row = &spec_.rows[r - 1];
            let mut acc = row[r] * prev[r];
            for (s, p) in row[..r].iter().zip(&col[..r]) {
                acc += s * p;
            }
            col[r] = acc;
        }
        masses.push(col[width - 1]);
        total += col[width - 1];
        if total > 1.0 - deficit_cap {
            return Pmf::new(masses, (1.0 - total).max(0.0));
        }
        std::mem::swap(&mut prev, &mut col);
    }
    Err(range(format!("mass {total} after {MAX_DP_COUNT} counts, deficit cap {deficit_cap} unreachable")))
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let target = sample_uniform01(rng) * total;
    let mut acc = 0.0;
    for (idx, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return idx;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Run the chain from `n` and count the steps that stay put.
pub fn simulate_zero_decrements<R: Rng + ?Sized>(spec_: &ChainSpec, n: usize, rng: &mut R) -> Result<u64> {
    spec_.check_start(n)?;
    let m = spec_.floor;
    let mut state = n;
    let mut repeats = 0u64;
    while state > m {
        let row = &spec_.rows[state - m - 1];
        let next = m + sample_index(row, 1.0, rng);
        if next == state {
            repeats += 1;
        }
        state = next;
    }
    Ok(repeats)
}

/// Sample the count as a sum of independent geometric holding counts along
/// the strictly decreasing embedded chain `ŝ_{i,j} = s_{i,j} / (1 - s_{i,i})`.
pub fn geometric_rep_sampler<R: Rng + ?Sized>(spec_: &ChainSpec, n: usize, rng: &mut R) -> Result<u64> {
    spec_.check_start(n)?;
    let m = spec_.floor;
    let mut state = n;
    let mut repeats = 0u64;
    while state > m {
        let row = &spec_.rows[state - m - 1];
        let below = &row[..row.len() - 1];
        let leave: f64 = below.iter().sum();
        if !(leave > 0.0) {
            return Err(spec(format!("s_{{{state},{state}}} = 1: state {state} never decreases")));
        }
        if leave < 1.0 {
            // failures before the first success of probability `leave`
            let ln_stay = (-leave).ln_1p();
            repeats += (sample_uniform01(rng).ln() / ln_stay).floor() as u64;
        }
        state = m + sample_index(below, leave, rng);
    }
    Ok(repeats)
}

/// Ball-count chain of the sieve with a beta-family `W`:
/// `s_{i,j} = C(i,j) B(a+j, b+i-j) / B(a,b)`, floor `0`.
pub fn sieve_chain_spec(law: &WLaw, n_max: usize) -> Result<ChainSpec> {
    let (a, b) = law
        .beta_shapes()
        .ok_or_else(|| spec(format!("no closed-form mixed moments for {law:?}")))?;
    let rows = (1..=n_max)
        .map(|i| {
            let fi = i as f64;
            // ln s_{i,0} = ln Γ(b+i)Γ(a+b) / Γ(b)Γ(a+b+i)
            let mut ln_s = ln_gamma_unchecked(b + fi) + ln_gamma_unchecked(a + b)
                - ln_gamma_unchecked(b)
                - ln_gamma_unchecked(a + b + fi);
            let mut row = Vec::with_capacity(i + 1);
            for j in 0..=i {
                row.push(ln_s);
                if j < i {
                    let fj = j as f64;
                    ln_s += ((fi - fj) / (fj + 1.0)).ln() + ((a + fj) / (b + fi - fj - 1.0)).ln();
                }
            }
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut row: Vec<f64> = row.into_iter().map(|x| (x - hi).exp()).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
            row
        })
        .collect();
    ChainSpec::new(0, rows)
}

/// Law of the jumps `τ` of the walk with barrier, on `{1, 2, …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StepPmf {
    /// `p_k = masses[k-1]`.
    Finite { masses: Vec<f64> },
    /// `p_k = (1 - ratio) ratio^{k-1}`; `ratio = 1/2` gives `p_k = 2^{-k}`.
    Geometric { ratio: f64 },
}

impl StepPmf {
    pub fn validate(&self) -> Result<()> {
        match self {
            StepPmf::Finite { masses } => {
                if masses.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return Err(domain("step masses must be finite and nonnegative"));
                }
                let sum: f64 = masses.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(domain(format!("step masses sum to {sum}")));
                }
            }
            StepPmf::Geometric { ratio } => {
                if !(*ratio >= 0.0 && *ratio < 1.0) {
                    return Err(domain(format!("geometric ratio must lie in [0,1), got {ratio}")));
                }
            }
        }
        Ok(())
    }

    /// `p_k`, `k ≥ 1`.
    pub fn mass(&self, k: usize) -> f64 {
        match self {
            StepPmf::Finite { masses } => masses.get(k.wrapping_sub(1)).copied().unwrap_or(0.0),
            StepPmf::Geometric { ratio } => {
                if k == 0 {
                    0.0
                } else {
                    (1.0 - ratio) * ratio.powi(k as i32 - 1)
                }
            }
        }
    }

    /// `Σ_{j ≥ k} p_j`.
    pub fn tail(&self, k: usize) -> f64 {
        match self {
            StepPmf::Finite { masses } => masses.iter().skip(k.saturating_sub(1)).sum(),
            StepPmf::Geometric { ratio } => ratio.powi(k.saturating_sub(1) as i32),
        }
    }
}

/// The walk `W_k(n) = W_{k-1}(n) + τ_k 1{W_{k-1}(n) + τ_k < n}` seen through
/// `n - W_k(n)`: `s_{i,j} = p_{i-j}` for `i > j`, `s_{i,i} = Σ_{k≥i} p_k`,
/// floor `1`.
pub fn barrier_chain_spec(p: &StepPmf, n_max: usize) -> Result<ChainSpec> {
    p.validate()?;
    if !(p.mass(1) > 0.0) {
        return Err(spec("p_1 = 0: absorption at the barrier is not certain"));
    }
    let rows = (2..=n_max.max(1))
        .map(|i| {
            let mut row: Vec<f64> = (1..i).map(|j| p.mass(i - j)).collect();
            row.push(p.tail(i));
            row
        })
        .collect();
    ChainSpec::new(1, rows)
}

/// Data handed to [`mixed_poisson_diagnostic`].
#[derive(Debug, Clone, Copy)]
pub enum CountData<'a> {
    Exact(&'a Pmf),
    Samples(&'a [u64]),
}

/// Moment checks that every mixed Poisson law passes.
///
/// For `Z` mixed Poisson with intensity `Λ`, the factorial moment `φ_r` equals
/// `E Λ^r`, so `Var Z - E Z = Var Λ ≥ 0` and the Hankel determinants of
/// `(1, φ_1, …, φ_4)` and of `(φ_1, φ_2, φ_3)` are nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPoissonReport {
    pub factorial_moments: [f64; 4],
    pub mean: f64,
    pub variance: f64,
    /// `Var Z - E Z = φ_2 - φ_1^2`, also the 2×2 Hankel determinant.
    pub overdispersion: f64,
    pub overdispersion_se: f64,
    pub hankel3: f64,
    pub hankel3_se: f64,
    /// `φ_1 φ_3 - φ_2^2`.
    pub hankel_shifted: f64,
    pub hankel_shifted_se: f64,
    pub violations: Vec<String>,
}

impl MixedPoissonReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Allowed shortfall below zero, in standard errors.
pub const HANKEL_SE_MULTIPLIER: f64 = 5.0;

fn falling(z: f64) -> [f64; 4] {
    [z, z * (z - 1.0), z * (z - 1.0) * (z - 2.0), z * (z - 1.0) * (z - 2.0) * (z - 3.0)]
}

pub fn mixed_poisson_diagnostic(data: CountData<'_>) -> Result<MixedPoissonReport> {
    // φ and the covariance of the φ estimator (zero for exact input)
    let (phi, cov) = match data {
        CountData::Exact(pmf) => {
            let mut phi = [0.0; 4];
            for (m, &p) in pmf.masses().iter().enumerate() {
                for (acc, f) in phi.iter_mut().zip(falling(m as f64)) {
                    *acc += p * f;
                }
            }
            (phi, [[0.0; 4]; 4])
        }
        CountData::Samples(xs) => {
            if xs.len() < 2 {
                return Err(domain("diagnostic needs at least two samples"));
            }
            let n = xs.len() as f64;
            let mut phi = [0.0; 4];
            for &x in xs {
                for (acc, f) in phi.iter_mut().zip(falling(x as f64)) {
                    *acc += f;
                }
            }
            phi.iter_mut().for_each(|v| *v /= n);
            let mut cov = [[0.0; 4]; 4];
            for &x in xs {
                let f = falling(x as f64);
                for r in 0..4 {
                    for c in 0..4 {
                        cov[r][c] += (f[r] - phi[r]) * (f[c] - phi[c]);
                    }
                }
            }
            cov.iter_mut().flatten().for_each(|v| *v /= (n - 1.0) * n);
            (phi, cov)
        }
    };
    let [a, b, c, d] = phi;
    let se = |grad: [f64; 4]| -> f64 {
        let mut v = 0.0;
        for r in 0..4 {
            for k in 0..4 {
                v += grad[r] * cov[r][k] * grad[k];
            }
        }
        v.max(0.0).sqrt()
    };
    let overdispersion = b - a * a;
    let overdispersion_se = se([-2.0 * a, 1.0, 0.0, 0.0]);
    let hankel3 = b * d - c * c - a * a * d + 2.0 * a * b * c - b * b * b;
    let hankel3_se = se([2.0 * b * c - 2.0 * a * d, d + 2.0 * a * c - 3.0 * b * b, 2.0 * a * b - 2.0 * c, b - a * a]);
    let hankel_shifted = a * c - b * b;
    let hankel_shifted_se = se([c, -2.0 * b, a, 0.0]);

    let mut violations = Vec::new();
    let mut check = |name: &str, value: f64, se: f64, scale: f64| {
        // rounding slack for exact input, where degenerate laws sit at zero
        let slack = HANKEL_SE_MULTIPLIER * se + 1e-9 * scale.max(1.0);
        if value < -slack {
            violations.push(format!("{name} = {value:.6e} below -{slack:.3e}"));
        }
    };
    check("overdispersion", overdispersion, overdispersion_se, b.abs() + a * a);
    check("hankel3", hankel3, hankel3_se, (b * d).abs() + c * c + a * a * d.abs() + b.abs().powi(3));
    check("hankel_shifted", hankel_shifted, hankel_shifted_se, (a * c).abs() + b * b);

    Ok(MixedPoissonReport {
        factorial_moments: phi,
        mean: a,
        variance: b + a - a * a,
        overdispersion,
        overdispersion_se,
        hankel3,
        hankel3_se,
        hankel_shifted,
        hankel_shifted_se,
        violations,
    })
}
