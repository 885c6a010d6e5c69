//! `bsieve`: run sieve, walk, chain and limit-law experiments and the
//! verification suite, writing a CSV of records and a JSON summary.
//!
//! Exit status: 0 when every criterion in scope passes, 1 when one fails,
//! 2 for an invalid configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use bernoulli_sieve::absorb_chain::{
    barrier_chain_spec, exact_zero_decrement_pmf, geometric_rep_sampler, sieve_chain_spec,
    simulate_zero_decrements, ChainSpec, StepPmf, DEFAULT_DEFICIT_CAP,
};
use bernoulli_sieve::limit_law::{
    sample_z_expfunctional, sample_z_pathint, z_moment, z_moment_laplace_form, AlphaBeta, DEFAULT_EPS,
    DEFAULT_GRID_STEP, MAX_MOMENT_ORDER,
};
use bernoulli_sieve::perturbed_walk::{
    functional_r, functional_t_log, generate_path, EtaLaw, PrwLaw, StepLaw, HORIZON_MARGIN,
};
use bernoulli_sieve::rng::{par_replicates, RngStream};
use bernoulli_sieve::sieve::{allocate_multinomial, allocate_uniform, normalization_ratio, NearOneTail, WLaw};
use bernoulli_sieve::stats::{ks_two_sample, tv_distance, McAccumulator, Pmf};
use bernoulli_sieve::verify::{run_criterion, Suite};
use bernoulli_sieve::{Error, Result};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "bsieve", version, about = "Bernoulli sieve experiments and verification")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: u64,
    /// Directory receiving `<experiment>.csv` and `<experiment>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Moments of Z_{α,β} by both closed forms.
    Moments {
        #[command(flatten)]
        params: MomentsParams,
        #[command(flatten)]
        common: Common,
    },
    /// Draws of Z_{α,β} with a moment check.
    SampleZ {
        #[command(flatten)]
        params: SampleZParams,
        #[command(flatten)]
        common: Common,
    },
    /// Empty boxes L_n of the Bernoulli sieve.
    Sieve {
        #[command(flatten)]
        params: SieveParams,
        #[command(flatten)]
        common: Common,
    },
    /// Normalized perturbed-walk functionals T(e^x) and R(x).
    Prw {
        #[command(flatten)]
        params: PrwParams,
        #[command(flatten)]
        common: Common,
    },
    /// Zero decrements of a nonincreasing chain: exact law and two samplers.
    Markov {
        #[command(flatten)]
        params: MarkovParams,
        #[command(flatten)]
        common: Common,
    },
    /// Run acceptance criteria.
    Verify {
        #[command(flatten)]
        params: VerifyParams,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Serialize)]
struct MomentsParams {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 6)]
    max_order: u32,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ZMethod {
    Pathint,
    Expfunctional,
}

#[derive(Args, Serialize)]
struct SampleZParams {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    /// Number of draws.
    #[arg(long = "n", alias = "reps", default_value_t = 10_000)]
    draws: usize,
    #[arg(long, value_enum, default_value_t = ZMethod::Pathint)]
    method: ZMethod,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Allocator {
    Uniform,
    Multinomial,
}

#[derive(Args, Serialize)]
struct SieveParams {
    /// `uniform`, `beta:A,B`, `log-pareto:P,ALPHA,BETA` or `log-slow:P,ALPHA`.
    #[arg(long, value_parser = parse_wlaw)]
    wlaw: WLaw,
    #[arg(long)]
    balls: u64,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, value_enum, default_value_t = Allocator::Uniform)]
    allocator: Allocator,
}

#[derive(Args, Serialize)]
struct PrwParams {
    /// Step law of ξ: `pareto:INDEX`, `exp:MEAN`, `const:VALUE` or `logslow`.
    #[arg(long, value_parser = parse_step)]
    xi: StepLaw,
    /// Law of η: a step law as for `--xi`, or `scaled:MULTIPLIER` for η = m·ξ.
    #[arg(long, value_parser = parse_eta)]
    eta: EtaLaw,
    /// Log-time x; T is evaluated at e^x and R at x.
    #[arg(long, default_value_t = 1e4)]
    x: f64,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    /// Draws of the limit law for the KS comparison (Pareto pairs only).
    #[arg(long, default_value_t = 10_000)]
    z_draws: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
}

#[derive(Args, Serialize)]
struct MarkovParams {
    /// `uniform-sieve`, `beta-sieve:A,B`, `barrier-geometric:RATIO` or `file:PATH`.
    #[arg(long)]
    chain: String,
    /// Starting state.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    /// Also write the chain as JSON to this path.
    #[arg(long)]
    #[serde(skip)]
    export: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SuiteArg {
    Exact,
    Mc,
    All,
}

#[derive(Args, Serialize)]
struct VerifyParams {
    #[arg(long, value_enum, default_value_t = SuiteArg::Exact)]
    suite: SuiteArg,
    /// Run only these criterion ids (overrides `--suite`).
    #[arg(long = "criterion")]
    criteria: Vec<u8>,
}

fn numbers(spec: &str, count: usize) -> std::result::Result<Vec<f64>, String> {
    let xs: Vec<f64> = spec
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if xs.len() != count {
        return Err(format!("expected {count} comma-separated numbers, got {spec:?}"));
    }
    Ok(xs)
}

fn parse_wlaw(s: &str) -> std::result::Result<WLaw, String> {
    let (family, args) = s.split_once(':').unwrap_or((s, ""));
    let law = match family {
        "uniform" => WLaw::Uniform,
        "beta" => {
            let v = numbers(args, 2)?;
            WLaw::Beta { a: v[0], b: v[1] }
        }
        "log-pareto" => {
            let v = numbers(args, 3)?;
            WLaw::LogMixture { p: v[0], alpha: v[1], near_one: NearOneTail::Pareto { beta: v[2] } }
        }
        "log-slow" => {
            let v = numbers(args, 2)?;
            WLaw::LogMixture { p: v[0], alpha: v[1], near_one: NearOneTail::LogSlow }
        }
        _ => return Err(format!("unknown W law {s:?}")),
    };
    law.validated().map_err(|e| e.to_string())
}

fn parse_step(s: &str) -> std::result::Result<StepLaw, String> {
    let (family, args) = s.split_once(':').unwrap_or((s, ""));
    let law = match family {
        "pareto" => StepLaw::Pareto { index: numbers(args, 1)?[0] },
        "exp" => StepLaw::Exponential { mean: numbers(args, 1)?[0] },
        "const" => StepLaw::Constant { value: numbers(args, 1)?[0] },
        "logslow" => StepLaw::LogSlow,
        _ => return Err(format!("unknown step law {s:?}")),
    };
    law.validate().map_err(|e| e.to_string())?;
    Ok(law)
}

fn parse_eta(s: &str) -> std::result::Result<EtaLaw, String> {
    match s.strip_prefix("scaled:") {
        Some(m) => Ok(EtaLaw::Scaled { multiplier: numbers(m, 1)?[0] }),
        None => Ok(EtaLaw::Independent { law: parse_step(s)? }),
    }
}

#[derive(Serialize)]
struct CriterionRecord {
    name: String,
    pass: bool,
    detail: String,
}

struct Report {
    experiment: &'static str,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    metrics: BTreeMap<String, f64>,
    criteria: Vec<CriterionRecord>,
}

impl Report {
    fn new(experiment: &'static str, header: Vec<&'static str>) -> Self {
        Self { experiment, header, rows: Vec::new(), metrics: BTreeMap::new(), criteria: Vec::new() }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn criterion(&mut self, name: impl Into<String>, pass: bool, detail: String) {
        self.criteria.push(CriterionRecord { name: name.into(), pass, detail });
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn moments(p: &MomentsParams) -> Result<Report> {
    if p.max_order == 0 || p.max_order > MAX_MOMENT_ORDER {
        return Err(Error::Domain(format!("max order must lie in 1..={MAX_MOMENT_ORDER}")));
    }
    let params = AlphaBeta::new(p.alpha, p.beta)?;
    let mut r = Report::new("moments", vec!["order", "beta_form", "laplace_form", "rel_diff"]);
    let mut worst: f64 = 0.0;
    for n in 1..=p.max_order {
        let a = z_moment(params, n)?;
        let b = z_moment_laplace_form(params, n)?;
        let rel = ((a - b) / a).abs();
        worst = worst.max(rel);
        r.metric(format!("moment_{n}"), a);
        r.row(vec![n.to_string(), num(a), num(b), num(rel)]);
    }
    r.metric("max_rel_diff", worst);
    r.criterion("closed_forms_agree", worst <= 1e-10, format!("max relative difference {worst:e} <= 1e-10"));
    Ok(r)
}

fn sample_z(p: &SampleZParams, seed: u64) -> Result<Report> {
    let params = AlphaBeta::new(p.alpha, p.beta)?;
    if p.draws < 2 {
        return Err(Error::Domain("need at least two draws".into()));
    }
    let zs: Vec<f64> = par_replicates(seed, p.draws, |rng| match p.method {
        ZMethod::Pathint => sample_z_pathint(params, p.grid_step, rng),
        ZMethod::Expfunctional => sample_z_expfunctional(params, p.eps, rng),
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut r = Report::new("sample-z", vec!["replicate", "z"]);
    for (i, z) in zs.iter().enumerate() {
        r.row(vec![i.to_string(), num(*z)]);
    }
    for order in 1..=2u32 {
        let est = zs.iter().map(|z| z.powi(order as i32)).collect::<McAccumulator>().estimate();
        let target = z_moment(params, order)?;
        r.metric(format!("moment_{order}_estimate"), est.mean);
        r.metric(format!("moment_{order}_stderr"), est.stderr);
        r.metric(format!("moment_{order}_exact"), target);
        r.criterion(
            format!("moment_{order}"),
            est.within(target, 3.0, 0.02 * target),
            format!("|{:.6} - {target:.6}| <= 3 SE ({:.2e}) + 2%", est.mean, est.stderr),
        );
    }
    Ok(r)
}

fn sieve(p: &SieveParams, seed: u64) -> Result<Report> {
    if p.reps < 2 {
        return Err(Error::Domain("need at least two replicates".into()));
    }
    let law = p.wlaw;
    let results = par_replicates(seed, p.reps, |rng| match p.allocator {
        Allocator::Uniform => allocate_uniform(&law, p.balls, rng),
        Allocator::Multinomial => allocate_multinomial(&law, p.balls, rng),
    });
    let ls: Vec<u64> = results.iter().map(|o| o.empty).collect();
    let pmf = Pmf::from_samples(&ls)?;
    let symmetric = match law {
        WLaw::Uniform => true,
        WLaw::Beta { a, b } => a == b,
        WLaw::LogMixture { .. } => false,
    };
    let mut r = Report::new("sieve", vec!["m", "count", "empirical_pmf", "geometric_half_pmf"]);
    for (m, &mass) in pmf.masses().iter().enumerate() {
        let count = ls.iter().filter(|&&l| l == m as u64).count();
        r.row(vec![m.to_string(), count.to_string(), num(mass), num(0.5f64.powi(m as i32 + 1))]);
    }
    let mean = |f: &dyn Fn(&bernoulli_sieve::sieve::OccupancyResult) -> u64| {
        results.iter().map(|o| f(o) as f64).collect::<McAccumulator>().estimate()
    };
    let l = mean(&|o| o.empty);
    r.metric("mean_empty", l.mean);
    r.metric("mean_empty_stderr", l.stderr);
    r.metric("mean_occupied", mean(&|o| o.occupied).mean);
    r.metric("mean_last", mean(&|o| o.last).mean);
    r.metric("truncated_runs", results.iter().filter(|o| o.truncated).count() as f64);
    if p.balls >= 3 {
        r.metric("normalization_ratio", normalization_ratio(&law, p.balls)?);
    }
    let tv = tv_distance(&pmf, &Pmf::geometric(0.5, pmf.len().max(200)));
    r.metric("tv_vs_geometric_half", tv);
    if symmetric && p.balls >= 1 {
        r.criterion("geometric_half", tv <= 0.01, format!("TV {tv:.5} <= 0.01 for symmetric W"));
    }
    Ok(r)
}

fn prw(p: &PrwParams, seed: u64) -> Result<Report> {
    let law = PrwLaw::new(p.xi, p.eta)?;
    if p.reps < 2 {
        return Err(Error::Domain("need at least two replicates".into()));
    }
    let eta_tail = |x: f64| match p.eta {
        EtaLaw::Independent { law } => law.tail(x),
        EtaLaw::Scaled { multiplier } => p.xi.tail(x / multiplier),
    };
    let scale = p.xi.tail(p.x) / eta_tail(p.x);
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Domain(format!("normalization F̄(x)/Ḡ(x) = {scale} is not usable")));
    }
    let walk_seed = RngStream::derive_seed(seed, "walks");
    let pairs: Vec<(f64, f64)> = par_replicates(walk_seed, p.reps, |rng| {
        let path = generate_path(&law, p.x + HORIZON_MARGIN, rng)?;
        Ok((scale * functional_t_log(&path, p.x)?, scale * functional_r(&path, p.x)? as f64))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut r = Report::new("prw", vec!["replicate", "t_normalized", "r_normalized"]);
    for (i, (t, rr)) in pairs.iter().enumerate() {
        r.row(vec![i.to_string(), num(*t), num(*rr)]);
    }
    let (ts, rs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    r.metric("normalization", scale);
    r.metric("mean_t_normalized", ts.iter().copied().collect::<McAccumulator>().mean());
    r.metric("mean_r_normalized", rs.iter().copied().collect::<McAccumulator>().mean());
    if let (StepLaw::Pareto { index: alpha }, EtaLaw::Independent { law: StepLaw::Pareto { index: beta } }) = (p.xi, p.eta) {
        if beta < alpha && alpha < 1.0 {
            let params = AlphaBeta::new(alpha, beta)?;
            r.metric("limit_mean", z_moment(params, 1)?);
            let reference: Vec<f64> = par_replicates(RngStream::derive_seed(seed, "reference"), p.z_draws, |rng| {
                sample_z_pathint(params, p.grid_step, rng)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            for (name, xs) in [("t", &ts), ("r", &rs)] {
                let d = ks_two_sample(xs, &reference)?;
                r.metric(format!("ks_{name}_vs_limit"), d);
                r.criterion(format!("ks_{name}"), d <= 0.05, format!("KS {d:.5} <= 0.05"));
            }
        }
    }
    Ok(r)
}

fn build_chain(desc: &str, n: usize) -> Result<ChainSpec> {
    let (kind, arg) = desc.split_once(':').unwrap_or((desc, ""));
    let bad = |e: String| Error::Domain(format!("--chain {desc:?}: {e}"));
    match kind {
        "uniform-sieve" => sieve_chain_spec(&WLaw::Uniform, n),
        "beta-sieve" => {
            let v = numbers(arg, 2).map_err(bad)?;
            sieve_chain_spec(&WLaw::beta(v[0], v[1])?, n)
        }
        "barrier-geometric" => {
            let v = numbers(arg, 1).map_err(bad)?;
            barrier_chain_spec(&StepPmf::Geometric { ratio: v[0] }, n)
        }
        "file" => ChainSpec::from_json(&fs::read_to_string(arg).map_err(|e| bad(e.to_string()))?),
        _ => Err(bad("unknown chain kind".into())),
    }
}

fn markov(p: &MarkovParams, seed: u64) -> Result<Report> {
    let spec = build_chain(&p.chain, p.n)?;
    if let Some(path) = &p.export {
        fs::write(path, spec.to_json()).map_err(|e| Error::Domain(format!("{}: {e}", path.display())))?;
    }
    if p.reps < 1 {
        return Err(Error::Domain("need at least one replicate".into()));
    }
    let exact = exact_zero_decrement_pmf(&spec, p.n, DEFAULT_DEFICIT_CAP)?;
    let direct: Vec<u64> = par_replicates(RngStream::derive_seed(seed, "direct"), p.reps, |rng| {
        simulate_zero_decrements(&spec, p.n, rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let rep: Vec<u64> = par_replicates(RngStream::derive_seed(seed, "geometric-rep"), p.reps, |rng| {
        geometric_rep_sampler(&spec, p.n, rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (direct, rep) = (Pmf::from_samples(&direct)?, Pmf::from_samples(&rep)?);
    let mut r = Report::new("markov", vec!["m", "exact_pmf", "direct_pmf", "geometric_rep_pmf"]);
    let len = exact.len().max(direct.len()).max(rep.len());
    for m in 0..len {
        r.row(vec![m.to_string(), num(exact.mass(m)), num(direct.mass(m)), num(rep.mass(m))]);
    }
    r.metric("exact_mean", exact.mean());
    r.metric("exact_tail_deficit", exact.tail_deficit());
    for (name, a, b) in [("direct_vs_exact", &direct, &exact), ("rep_vs_exact", &rep, &exact), ("direct_vs_rep", &direct, &rep)] {
        let tv = tv_distance(a, b);
        r.metric(format!("tv_{name}"), tv);
        r.criterion(format!("tv_{name}"), tv <= 0.01, format!("TV {tv:.5} <= 0.01"));
    }
    Ok(r)
}

fn verify(p: &VerifyParams, seed: u64) -> Result<Report> {
    let ids = if p.criteria.is_empty() {
        match p.suite {
            SuiteArg::Exact => Suite::Exact,
            SuiteArg::Mc => Suite::Mc,
            SuiteArg::All => Suite::All,
        }
        .ids()
    } else {
        p.criteria.clone()
    };
    let mut r = Report::new("verify", vec!["criterion", "name", "metric", "value", "pass"]);
    for id in ids {
        let out = run_criterion(id, seed)?;
        for m in &out.metrics {
            r.row(vec![id.to_string(), out.name.clone(), m.name.clone(), num(m.value), out.pass.to_string()]);
            r.metric(format!("c{id}.{}", m.name), m.value);
        }
        r.criterion(format!("criterion_{id}"), out.pass, format!("{}: {}", out.name, out.checks.join("; ")));
    }
    Ok(r)
}

fn config_hash(experiment: &str, params: &Value, seed: u64) -> String {
    let canonical = json!({ "experiment": experiment, "params": params, "seed": seed }).to_string();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn render_csv(report: &Report, hash: &str, seed: u64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["config_hash", "seed"];
    header.extend(&report.header);
    w.write_record(&header).map_err(io)?;
    let seed = seed.to_string();
    for row in &report.rows {
        w.write_record([hash, seed.as_str()].into_iter().chain(row.iter().map(String::as_str))).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn value<T: Serialize>(params: &T) -> Value {
    serde_json::to_value(params).expect("parameters serialize")
}

fn execute(command: &Command) -> Result<(Report, Value, &Common)> {
    Ok(match command {
        Command::Moments { params, common } => (moments(params)?, value(params), common),
        Command::SampleZ { params, common } => (sample_z(params, common.seed)?, value(params), common),
        Command::Sieve { params, common } => (sieve(params, common.seed)?, value(params), common),
        Command::Prw { params, common } => (prw(params, common.seed)?, value(params), common),
        Command::Markov { params, common } => (markov(params, common.seed)?, value(params), common),
        Command::Verify { params, common } => (verify(params, common.seed)?, value(params), common),
    })
}

fn run(cli: &Cli) -> Result<bool> {
    let (report, params, common) = execute(&cli.command)?;
    let hash = config_hash(report.experiment, &params, common.seed);
    let csv = render_csv(&report, &hash, common.seed)?;
    let pass = report.criteria.iter().all(|c| c.pass);
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": report.experiment,
        "params": params,
        "seed": common.seed,
        "config_hash": hash,
        "metrics": report.metrics,
        "criteria": report.criteria,
        "pass": pass,
    });
    let summary = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if let Some(dir) = &common.out {
        let io = |e: std::io::Error| Error::Domain(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join(format!("{}.csv", report.experiment)), &csv).map_err(io)?;
        fs::write(dir.join(format!("{}.json", report.experiment)), &summary).map_err(io)?;
    }
    match common.format {
        Format::Csv => print!("{csv}"),
        Format::Json => print!("{summary}"),
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("bsieve: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("bsieve: {e}");
            ExitCode::from(2)
        }
    }
}
