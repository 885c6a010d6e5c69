//! Reproducible checks of the whole library at full size, one function per
//! criterion. Each returns its metrics and a verdict; none of them panics on
//! a failed check.

use serde::{Deserialize, Serialize};

use crate::absorb_chain::{
    barrier_chain_spec, exact_zero_decrement_pmf, geometric_rep_sampler, mixed_poisson_diagnostic,
    sieve_chain_spec, simulate_zero_decrements, ChainSpec, CountData, StepPmf, DEFAULT_DEFICIT_CAP,
};
use crate::error::{domain, Result};
use crate::limit_law::{
    mittag_leffler_moment, phi_alpha, sample_mittag_leffler, sample_y, sample_z_expfunctional, sample_z_pathint,
    z_moment, AlphaBeta, SmallJumps, DEFAULT_EPS, DEFAULT_GRID_STEP,
};
use crate::perturbed_walk::{
    functional_r, functional_t_log, generate_path, lemma_tech_statistic, PrwLaw, StepLaw, HORIZON_MARGIN,
};
use crate::rng::{par_replicates, sample_poisson, RngStream};
use crate::sieve::{
    allocate_multinomial, allocate_on, allocate_uniform, conditional_mean_l, conditional_var_l, log_log_slope,
    required_log_level, theorem_main_experiment, FrequencySeq, TheoremConfig, WLaw,
};
use crate::special::{factorial, gamma_fn};
use crate::stats::{ks_one_sample, ks_two_sample, tv_distance, McAccumulator, Pmf};

pub const CRITERION_COUNT: u8 = 15;

/// Which criteria to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Closed-form and dynamic-programming checks; sub-second.
    Exact,
    /// Monte Carlo checks; tens of minutes on one core.
    Mc,
    All,
}

impl Suite {
    pub fn ids(self) -> Vec<u8> {
        match self {
            Suite::Exact => vec![1, 2],
            Suite::Mc => (3..=CRITERION_COUNT).collect(),
            Suite::All => (1..=CRITERION_COUNT).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub metrics: Vec<Metric>,
    pub checks: Vec<String>,
}

impl Outcome {
    fn new(id: u8) -> Self {
        Self { id, name: criterion_name(id).to_string(), pass: true, metrics: Vec::new(), checks: Vec::new() }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push(Metric { name: name.into(), value });
    }

    /// Record `value` and require `value ≤ bound`.
    fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        let name = name.into();
        self.require(value <= bound, format!("{name} = {value:.6e} <= {bound:e}"));
        self.metric(name, value);
    }

    fn require(&mut self, ok: bool, what: String) {
        self.checks.push(format!("[{}] {what}", if ok { "ok" } else { "FAIL" }));
        self.pass &= ok;
    }

    /// The metrics rendered with round-trip precision, for reproducibility checks.
    pub fn fingerprint(&self) -> String {
        self.metrics.iter().map(|m| format!("{}={:?}\n", m.name, m.value)).collect()
    }
}

pub fn criterion_name(id: u8) -> &'static str {
    match id {
        1 => "exact DP geometric law",
        2 => "moment-formula identities",
        3 => "Z sampler moments",
        4 => "special-case laws of Z",
        5 => "exponential-functional sampler",
        6 => "Laplace exponent of Y",
        7 => "chain sampler agreement",
        8 => "symmetric W gives geometric L_n",
        9 => "sieve chain DP vs allocation",
        10 => "conditional moments of L(t)",
        11 => "renewal-sum mean limit",
        12 => "perturbed-walk functionals at x = 1e4",
        13 => "log-Pareto sieve trend",
        14 => "mixed-Poisson diagnostics",
        15 => "determinism across thread counts",
        _ => "unknown",
    }
}

pub fn run_criterion(id: u8, seed: u64) -> Result<Outcome> {
    let seed = RngStream::derive_seed(seed, &format!("criterion-{id}"));
    match id {
        1 => exact_dp_geometric(),
        2 => moment_identities(),
        3 => z_sampler_moments(seed),
        4 => special_case_laws(seed),
        5 => expfunctional_vs_pathint(seed),
        6 => laplace_exponent(seed),
        7 => chain_sampler_agreement(seed),
        8 => symmetric_w_geometric(seed),
        9 => sieve_chain_vs_allocation(seed),
        10 => conditional_moments(seed),
        11 => renewal_mean_limit(seed),
        12 => walk_functionals(seed),
        13 => sieve_trend(seed),
        14 => mixed_poisson(seed),
        15 => determinism(seed),
        _ => Err(domain(format!("no criterion {id}; valid ids are 1..={CRITERION_COUNT}"))),
    }
}

fn max_geometric_half_error(pmf: &Pmf) -> f64 {
    (0..=40).map(|m| (pmf.mass(m) - 0.5f64.powi(m as i32 + 1)).abs()).fold(0.0, f64::max)
}

fn exact_dp_geometric() -> Result<Outcome> {
    let mut out = Outcome::new(1);
    let cases: [(&str, ChainSpec); 3] = [
        ("uniform_sieve", sieve_chain_spec(&WLaw::Uniform, 60)?),
        ("beta22_sieve", sieve_chain_spec(&WLaw::beta(2.0, 2.0)?, 60)?),
        ("barrier_half", barrier_chain_spec(&StepPmf::Geometric { ratio: 0.5 }, 60)?),
    ];
    for (label, spec) in &cases {
        out.require(spec.floor_matches_diagonal(1e-12), format!("{label}: s_(j,M) = s_(j,j)"));
        let mut worst: f64 = 0.0;
        for n in spec.floor() + 1..=60 {
            worst = worst.max(max_geometric_half_error(&exact_zero_decrement_pmf(spec, n, DEFAULT_DEFICIT_CAP)?));
        }
        out.at_most(format!("{label}_max_abs_error"), worst, 1e-10);
    }
    Ok(out)
}

fn moment_identities() -> Result<Outcome> {
    let mut out = Outcome::new(2);
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let (mut e_exp, mut e_ml, mut e_phi) = (0.0f64, 0.0f64, 0.0f64);
    for i in 1..=9 {
        let alpha = i as f64 / 10.0;
        let gam = gamma_fn(1.0 - alpha)?;
        let mut prod = 1.0;
        for n in 1..=6u32 {
            e_exp = e_exp.max(rel(z_moment(AlphaBeta::new(alpha, alpha)?, n)?, factorial(n)));
            e_ml = e_ml.max(rel(z_moment(AlphaBeta::new(alpha, 0.0)?, n)?, mittag_leffler_moment(alpha, n)?));
            prod *= phi_alpha(alpha, n as f64)? + 1.0;
            e_phi = e_phi.max(rel(prod, gamma_fn(1.0 + n as f64 * alpha)? * gam.powi(n as i32)));
        }
    }
    out.at_most("max_rel_error_beta_eq_alpha", e_exp, 1e-10);
    out.at_most("max_rel_error_beta_zero", e_ml, 1e-10);
    out.at_most("max_rel_error_phi_product", e_phi, 1e-10);
    Ok(out)
}

fn pathint_sample(params: AlphaBeta, count: usize, seed: u64) -> Result<Vec<f64>> {
    par_replicates(seed, count, |rng| sample_z_pathint(params, DEFAULT_GRID_STEP, rng)).into_iter().collect()
}

fn z_sampler_moments(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(3);
    for (alpha, beta) in [(0.5, 0.0), (0.5, 0.25), (0.75, 0.5), (0.5, 0.5)] {
        let params = AlphaBeta::new(alpha, beta)?;
        let zs = pathint_sample(params, 100_000, RngStream::derive_seed(seed, &format!("{alpha}-{beta}")))?;
        for order in 1..=2u32 {
            let est = zs.iter().map(|z| z.powi(order as i32)).collect::<McAccumulator>().estimate();
            let target = z_moment(params, order)?;
            let label = format!("a{alpha}_b{beta}_m{order}");
            out.metric(format!("{label}_estimate"), est.mean);
            out.metric(format!("{label}_stderr"), est.stderr);
            out.metric(format!("{label}_target"), target);
            out.require(
                est.within(target, 3.0, 0.02 * target),
                format!("{label}: |{:.5} - {target:.5}| <= 3 SE + 2%", est.mean),
            );
        }
    }
    Ok(out)
}

fn special_case_laws(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(4);
    for alpha in [0.5, 0.75] {
        let zs = pathint_sample(AlphaBeta::new(alpha, alpha)?, 10_000, RngStream::derive_seed(seed, &format!("exp-{alpha}")))?;
        let d = ks_one_sample(&zs, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })?;
        out.at_most(format!("ks_exp_a{alpha}"), d, 0.02);

        let zs = pathint_sample(AlphaBeta::new(alpha, 0.0)?, 10_000, RngStream::derive_seed(seed, &format!("ml-pi-{alpha}")))?;
        let ml: Vec<f64> = par_replicates(RngStream::derive_seed(seed, &format!("ml-direct-{alpha}")), 10_000, |rng| {
            sample_mittag_leffler(alpha, rng)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        out.at_most(format!("ks_mittag_leffler_a{alpha}"), ks_two_sample(&zs, &ml)?, 0.025);
    }
    Ok(out)
}

fn expfunctional_vs_pathint(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(5);
    let params = AlphaBeta::new(0.5, 0.25)?;
    let ef: Vec<f64> = par_replicates(RngStream::derive_seed(seed, "expfunctional"), 10_000, |rng| {
        sample_z_expfunctional(params, DEFAULT_EPS, rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let pi = pathint_sample(params, 10_000, RngStream::derive_seed(seed, "pathint"))?;
    out.at_most("ks_expfunctional_vs_pathint", ks_two_sample(&ef, &pi)?, 0.03);
    Ok(out)
}

fn laplace_exponent(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(6);
    let xs = [0.5, 1.0, 2.0];
    for alpha in [0.3, 0.5, 0.8] {
        let ys: Vec<f64> = par_replicates(RngStream::derive_seed(seed, &format!("y-{alpha}")), 100_000, |rng| {
            sample_y(alpha, DEFAULT_EPS, 1.0, SmallJumps::Drift, rng)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        for x in xs {
            let est = ys.iter().map(|y| (-x * y).exp()).collect::<McAccumulator>().estimate();
            let target = (-phi_alpha(alpha, x)?).exp();
            let label = format!("a{alpha}_x{x}");
            out.metric(format!("{label}_estimate"), est.mean);
            out.metric(format!("{label}_target"), target);
            out.require(
                est.within(target, 3.0, 0.01 * target),
                format!("{label}: |{:.5} - {target:.5}| <= 3 SE + 1%", est.mean),
            );
        }
    }
    Ok(out)
}

fn chain_sampler_agreement(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(7);
    let n = 30;
    for (label, law) in [("beta23", WLaw::beta(2.0, 3.0)?), ("uniform", WLaw::Uniform)] {
        let spec = sieve_chain_spec(&law, n)?;
        let exact = exact_zero_decrement_pmf(&spec, n, DEFAULT_DEFICIT_CAP)?;
        let direct: Vec<u64> = par_replicates(RngStream::derive_seed(seed, &format!("{label}-direct")), 100_000, |rng| {
            simulate_zero_decrements(&spec, n, rng)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let rep: Vec<u64> = par_replicates(RngStream::derive_seed(seed, &format!("{label}-rep")), 100_000, |rng| {
            geometric_rep_sampler(&spec, n, rng)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let (direct, rep) = (Pmf::from_samples(&direct)?, Pmf::from_samples(&rep)?);
        out.at_most(format!("{label}_tv_direct_dp"), tv_distance(&direct, &exact), 0.01);
        out.at_most(format!("{label}_tv_rep_dp"), tv_distance(&rep, &exact), 0.01);
        out.at_most(format!("{label}_tv_direct_rep"), tv_distance(&direct, &rep), 0.01);
    }
    Ok(out)
}

fn symmetric_w_geometric(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(8);
    let geo = Pmf::geometric(0.5, 200);
    for (label, law) in [("uniform", WLaw::Uniform), ("beta22", WLaw::beta(2.0, 2.0)?)] {
        for n in [5u64, 50, 500] {
            let ls = par_replicates(RngStream::derive_seed(seed, &format!("{label}-{n}")), 100_000, |rng| {
                allocate_uniform(&law, n, rng).empty
            });
            out.at_most(format!("{label}_n{n}_tv"), tv_distance(&Pmf::from_samples(&ls)?, &geo), 0.01);
        }
    }
    Ok(out)
}

fn sieve_chain_vs_allocation(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(9);
    let spec = sieve_chain_spec(&WLaw::Uniform, 100)?;
    let exact = exact_zero_decrement_pmf(&spec, 100, DEFAULT_DEFICIT_CAP)?;
    let ls = par_replicates(seed, 100_000, |rng| allocate_uniform(&WLaw::Uniform, 100, rng).empty);
    out.at_most("tv_dp_vs_allocation", tv_distance(&Pmf::from_samples(&ls)?, &exact), 0.01);
    Ok(out)
}

fn conditional_moments(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(10);
    let t = 100.0f64;
    let law = WLaw::Uniform;
    let freqs = FrequencySeq::generate(&law, required_log_level(t.ln()), &mut RngStream::new(seed, u64::MAX).rng());
    let mean = conditional_mean_l(&freqs, t)?;
    let var = conditional_var_l(&freqs, t)?;
    let ls: Vec<f64> = par_replicates(seed, 10_000, |rng| -> Result<f64> {
        let n = sample_poisson(t, rng)?;
        Ok(allocate_on(&freqs, n, rng)?.empty as f64)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let acc: McAccumulator = ls.iter().copied().collect();
    let est = acc.estimate();
    out.metric("formula_mean", mean);
    out.metric("empirical_mean", est.mean);
    out.metric("empirical_mean_stderr", est.stderr);
    out.require(est.within(mean, 3.0, 0.0), format!("|{:.5} - {mean:.5}| <= 3 SE ({:.2e})", est.mean, est.stderr));
    out.metric("formula_variance", var);
    out.at_most("variance_rel_error", ((acc.variance() - var) / var).abs(), 0.05);
    Ok(out)
}

fn renewal_mean_limit(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(11);
    let (alpha, beta) = (0.5, 0.25);
    let target = z_moment(AlphaBeta::new(alpha, beta)?, 1)?;
    let law = PrwLaw::independent(StepLaw::Pareto { index: alpha }, StepLaw::Constant { value: 0.0 })?;
    let q = |x: f64| (1.0 + x).powf(-beta);
    let f_bar = |x: f64| StepLaw::Pareto { index: alpha }.tail(x);
    let mut errors = Vec::new();
    for t in [1e2, 1e3, 1e4] {
        let stats: Vec<f64> = par_replicates(RngStream::derive_seed(seed, &format!("t{t}")), 1_000_000, |rng| {
            let path = generate_path(&law, t, rng)?;
            lemma_tech_statistic(&path, t, q, f_bar)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let est = stats.iter().copied().collect::<McAccumulator>().estimate();
        let err = ((est.mean - target) / target).abs();
        out.metric(format!("t{t:e}_mean"), est.mean);
        out.metric(format!("t{t:e}_stderr"), est.stderr);
        out.metric(format!("t{t:e}_rel_error"), err);
        errors.push(err);
    }
    out.metric("target", target);
    out.require(errors[2] <= 0.15, format!("relative error at t = 1e4 is {:.4} <= 0.15", errors[2]));
    out.require(
        errors[0] > errors[1] && errors[1] > errors[2],
        format!("errors decrease: {:.4} > {:.4} > {:.4}", errors[0], errors[1], errors[2]),
    );
    Ok(out)
}

fn walk_functionals(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(12);
    let (alpha, beta, x) = (0.5, 0.25, 1e4f64);
    let xi = StepLaw::Pareto { index: alpha };
    let eta = StepLaw::Pareto { index: beta };
    let law = PrwLaw::independent(xi, eta)?;
    let scale = xi.tail(x) / eta.tail(x);
    let pairs: Vec<(f64, f64)> = par_replicates(RngStream::derive_seed(seed, "walks"), 10_000, |rng| {
        let path = generate_path(&law, x + HORIZON_MARGIN, rng)?;
        Ok((scale * functional_t_log(&path, x)?, scale * functional_r(&path, x)? as f64))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let reference = pathint_sample(AlphaBeta::new(alpha, beta)?, 10_000, RngStream::derive_seed(seed, "reference"))?;
    let (t_vals, r_vals): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    out.metric("normalization", scale);
    out.at_most("ks_t_vs_limit", ks_two_sample(&t_vals, &reference)?, 0.05);
    out.at_most("ks_r_vs_limit", ks_two_sample(&r_vals, &reference)?, 0.05);
    Ok(out)
}

/// Mixture weight of the log-Pareto law used by the trend check.
pub const TREND_MIXTURE_WEIGHT: f64 = 0.5;

fn sieve_trend(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(13);
    let (alpha, beta) = (0.6, 0.3);
    let law = WLaw::log_pareto_mixture(TREND_MIXTURE_WEIGHT, alpha, beta)?;
    let config = TheoremConfig {
        n_grid: vec![1_000, 10_000, 100_000, 1_000_000],
        replicates: 100_000,
        limit: AlphaBeta::new(alpha, beta)?,
        z_draws: 100_000,
        grid_step: DEFAULT_GRID_STEP,
        seed,
    };
    let rows = theorem_main_experiment(&law, &config)?;
    for r in &rows {
        out.metric(format!("n{}_mean_l", r.n), r.mean_l.mean);
        out.metric(format!("n{}_mean_normalized", r.n), r.mean_normalized.mean);
        out.metric(format!("n{}_ks", r.n), r.ks_to_limit);
    }
    let slope = log_log_slope(&rows)?;
    out.metric("slope", slope);
    out.require((slope - (alpha - beta)).abs() <= 0.1, format!("slope {slope:.4} within 0.3 +- 0.1"));
    let ks: Vec<f64> = rows.iter().map(|r| r.ks_to_limit).collect();
    out.require(ks.windows(2).all(|w| w[1] <= w[0]), format!("KS non-increasing across the grid: {ks:.4?}"));
    Ok(out)
}

fn mixed_poisson(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(14);
    let theta = 2.0;
    let count = 100_000;

    let lam = 2.0f64;
    let mut poisson = vec![(-lam).exp()];
    for m in 1..100 {
        let last = poisson[m - 1];
        poisson.push(last * lam / m as f64);
    }
    let constructed: [(&str, Pmf); 2] = [("poisson_pmf", Pmf::new(poisson, 0.0)?), ("geometric_pmf", Pmf::geometric(0.5, 400))];
    for (label, pmf) in &constructed {
        let rep = mixed_poisson_diagnostic(CountData::Exact(pmf))?;
        out.metric(format!("{label}_hankel3"), rep.hankel3);
        out.require(rep.passes(), format!("{label} passes: {:?}", rep.violations));
    }
    let poisson_draws = par_replicates(RngStream::derive_seed(seed, "poisson"), count, |rng| sample_poisson(lam, rng))
        .into_iter()
        .collect::<Result<Vec<u64>>>()?;
    let beta_w = WLaw::beta(theta, 1.0)?;
    let mixed = par_replicates(RngStream::derive_seed(seed, "beta-theta-mixture"), count, |rng| {
        let draw = beta_w.sample(rng);
        sample_poisson(-theta * draw.log_1mw, rng)
    })
    .into_iter()
    .collect::<Result<Vec<u64>>>()?;
    let sieve = par_replicates(RngStream::derive_seed(seed, "beta-theta-sieve"), count, |rng| {
        allocate_multinomial(&beta_w, 100_000, rng).empty
    });
    for (label, xs) in [("poisson_samples", &poisson_draws), ("mixture_samples", &mixed), ("sieve_samples", &sieve)] {
        let rep = mixed_poisson_diagnostic(CountData::Samples(xs))?;
        out.metric(format!("{label}_overdispersion"), rep.overdispersion);
        out.metric(format!("{label}_hankel3"), rep.hankel3);
        out.metric(format!("{label}_hankel_shifted"), rep.hankel_shifted);
        out.require(rep.passes(), format!("{label} passes: {:?}", rep.violations));
    }
    out.at_most("tv_sieve_vs_mixture", tv_distance(&Pmf::from_samples(&sieve)?, &Pmf::from_samples(&mixed)?), 0.02);
    Ok(out)
}

/// Criteria rerun under different thread counts by [`determinism`].
pub const DETERMINISM_PROBES: [u8; 3] = [5, 7, 10];

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| domain(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn determinism(seed: u64) -> Result<Outcome> {
    let mut out = Outcome::new(15);
    for id in DETERMINISM_PROBES {
        let one = in_pool(1, || run_criterion(id, seed))??;
        let many = in_pool(4, || run_criterion(id, seed))??;
        out.metric(format!("criterion{id}_metric_count"), one.metrics.len() as f64);
        out.require(
            one.fingerprint() == many.fingerprint(),
            format!("criterion {id}: metrics identical with 1 and 4 threads"),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_suite_passes() {
        for id in Suite::Exact.ids() {
            let out = run_criterion(id, 1).unwrap();
            assert!(out.pass, "{out:?}");
        }
    }

    #[test]
    fn unknown_criterion_is_an_error() {
        assert!(run_criterion(0, 1).is_err());
        assert!(run_criterion(16, 1).is_err());
        assert_eq!(Suite::All.ids().len(), CRITERION_COUNT as usize);
    }
}
