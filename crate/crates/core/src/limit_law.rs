//! The limit law `Z_{α,β} = ∫_0^1 (1-s)^{-β} dX_α^←(s)`.
//!
//! Analytic side: the Laplace exponent `Φ_α` of the auxiliary subordinator
//! `Y_α`, its Lévy tail, and the moments of `Z_{α,β}`. Simulation side: three
//! samplers of the same law,
//!
//! * the path integral against a grid-discretized inverse stable subordinator,
//! * the exponential functional `∫_0^T exp(-c Y_α(t)) dt`, `c = (α-β)/α`,
//! * the direct Mittag-Leffler draw (only for `β = 0`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, range, Result};
use crate::rng::{sample_standard_stable, sample_uniform01, standard_exponential, StableSpec};
use crate::special::{beta_fn, factorial, gamma_unchecked};

/// Largest moment order evaluated.
pub const MAX_MOMENT_ORDER: u32 = 20;

/// Default grid step of the path-integral sampler.
pub const DEFAULT_GRID_STEP: f64 = 1e-4;

/// Default jump truncation level of `Y_α`.
pub const DEFAULT_EPS: f64 = 1e-4;

const MAX_PATH_STEPS: usize = 200_000_000;

/// Parameters `(α, β)` with `0 ≤ β ≤ α < 1` and `α + β > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    alpha: f64,
    beta: f64,
}

impl AlphaBeta {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0 <= beta && beta <= alpha && alpha < 1.0 && alpha + beta > 0.0) {
            return Err(domain(format!(
                "(alpha, beta) = ({alpha}, {beta}) outside 0 <= beta <= alpha < 1, alpha + beta > 0"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `c = (α - β)/α`, the time change in the exponential functional.
    pub fn exponent_scale(&self) -> f64 {
        (self.alpha - self.beta) / self.alpha
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

fn check_order(n: u32) -> Result<()> {
    if n == 0 {
        return Err(domain("moment order must be positive"));
    }
    if n > MAX_MOMENT_ORDER {
        return Err(range(format!("moment order {n} exceeds {MAX_MOMENT_ORDER}")));
    }
    Ok(())
}

/// Laplace exponent of `Y_α`:
/// `Φ_α(x) = Γ(1-α)Γ(αx+1)/Γ(α(x-1)+1) - 1`.
pub fn phi_alpha(alpha: f64, x: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(domain(format!("phi_alpha needs finite x >= 0, got {x}")));
    }
    Ok(gamma_unchecked(1.0 - alpha) * gamma_unchecked(alpha * x + 1.0)
        / gamma_unchecked(alpha * (x - 1.0) + 1.0)
        - 1.0)
}

/// `E X_α^←(1)^n = n! / (Γ(1+nα) Γ(1-α)^n)`.
pub fn mittag_leffler_moment(alpha: f64, n: u32) -> Result<f64> {
    check_alpha(alpha)?;
    check_order(n)?;
    Ok(factorial(n) / (gamma_unchecked(1.0 + n as f64 * alpha) * gamma_unchecked(1.0 - alpha).powi(n as i32)))
}

/// `E Z_{α,β}^n = n! / ∏_{k=1}^n (1-α+k(α-β)) B(1-α, 1+k(α-β))`.
pub fn z_moment(params: AlphaBeta, n: u32) -> Result<f64> {
    check_order(n)?;
    let (a, d) = (params.alpha, params.alpha - params.beta);
    let mut denom = 1.0;
    for k in 1..=n {
        let kd = k as f64 * d;
        denom *= (1.0 - a + kd) * beta_fn(1.0 - a, 1.0 + kd)?;
    }
    Ok(factorial(n) / denom)
}

/// The same moments through the Laplace exponent:
/// `E Z_{α,β}^n = n! / ∏_{k=1}^n (Φ_α(ck) + 1)`.
pub fn z_moment_laplace_form(params: AlphaBeta, n: u32) -> Result<f64> {
    check_order(n)?;
    let c = params.exponent_scale();
    let mut denom = 1.0;
    for k in 1..=n {
        denom *= phi_alpha(params.alpha, c * k as f64)? + 1.0;
    }
    Ok(factorial(n) / denom)
}

/// Lévy tail `ν_α([eps, ∞)) = (1 - e^{-eps/α})^{-α} - 1` for the measure
/// `ν_α(dt) = e^{-t/α}(1-e^{-t/α})^{-(α+1)} dt`.
pub fn levy_tail_mass(alpha: f64, eps: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(eps > 0.0) {
        return Err(domain(format!("truncation level must be positive, got {eps}")));
    }
    if eps.is_infinite() {
        return Ok(0.0);
    }
    let y = -(-eps / alpha).exp_m1();
    Ok(y.powf(-alpha) - 1.0)
}

/// Mean of the jumps below `eps` per unit time, `∫_0^eps t ν_α(dt)`.
///
/// With `y = 1 - e^{-t/α}` the measure becomes `α y^{-α-1} dy` and the
/// integral is `α² Σ_{m≥1} y_eps^{m-α} / (m(m-α))`.
pub fn levy_small_jump_mean(alpha: f64, eps: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(domain(format!("truncation level must be finite and positive, got {eps}")));
    }
    let y = -(-eps / alpha).exp_m1();
    let mut sum = 0.0;
    let mut pow = y.powf(1.0 - alpha);
    for m in 1..10_000 {
        let mf = m as f64;
        let term = pow / (mf * (mf - alpha));
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
        pow *= y;
    }
    Ok(alpha * alpha * sum)
}

fn levy_jump_from_uniform(alpha: f64, tail_mass: f64, v: f64) -> f64 {
    // solve y^{-α} - 1 = v Λ(eps) for y = 1 - e^{-t/α}
    let y = (1.0 + v * tail_mass).powf(-1.0 / alpha);
    -alpha * (-y).ln_1p()
}

/// Jump of `Y_α` conditioned to be at least `eps`, by inverting the tail.
pub fn sample_levy_jump<R: Rng + ?Sized>(alpha: f64, eps: f64, rng: &mut R) -> Result<f64> {
    let tail = levy_tail_mass(alpha, eps)?;
    if !eps.is_finite() {
        return Err(domain("cannot sample jumps beyond an infinite level"));
    }
    Ok(levy_jump_from_uniform(alpha, tail, sample_uniform01(rng)).max(eps))
}

/// Grid-discretized path `X(0), X(h), X(2h), ...` of a stable subordinator,
/// stopped at the first value at or above a crossing level.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPath {
    grid_step: f64,
    values: Vec<f64>,
    level: f64,
}

impl SubordinatorPath {
    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn crossing_level(&self) -> f64 {
        self.level
    }

    /// Number of grid indices before the crossing.
    pub fn steps_before_crossing(&self) -> usize {
        self.values.len() - 1
    }

    /// Discretized first passage `X^←(level) ≈ steps · h`.
    pub fn first_passage(&self) -> f64 {
        self.steps_before_crossing() as f64 * self.grid_step
    }

    /// `Σ_i (1 - X(ih)/level)^{-β} h` over pre-crossing grid points; for
    /// `level = 1` this is the Stieltjes integral of `(1-s)^{-β}` against the
    /// discretized inverse path.
    pub fn weighted_passage(&self, beta: f64) -> f64 {
        let pre = &self.values[..self.values.len() - 1];
        if beta == 0.0 {
            return pre.len() as f64 * self.grid_step;
        }
        pre.iter().map(|x| (1.0 - x / self.level).powf(-beta)).sum::<f64>() * self.grid_step
    }
}

/// Accumulate i.i.d. stable increments of duration `grid_step` until the
/// running value reaches `crossing_level`.
pub fn sample_subordinator_path<R: Rng + ?Sized>(
    spec: &StableSpec,
    grid_step: f64,
    crossing_level: f64,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    check_grid(grid_step, crossing_level)?;
    let scale = spec.increment_scale(grid_step);
    let mut values = vec![0.0];
    let mut x = 0.0;
    while x < crossing_level {
        if values.len() > MAX_PATH_STEPS {
            return Err(range("subordinator path did not cross within the step limit"));
        }
        x += scale * sample_standard_stable(spec.alpha(), rng);
        values.push(x);
    }
    Ok(SubordinatorPath { grid_step, values, level: crossing_level })
}

fn check_grid(grid_step: f64, crossing_level: f64) -> Result<()> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(domain(format!("grid step must be finite and positive, got {grid_step}")));
    }
    if !(crossing_level > 0.0 && crossing_level.is_finite()) {
        return Err(domain(format!("crossing level must be finite and positive, got {crossing_level}")));
    }
    Ok(())
}

/// Path-integral draw of `Z_{α,β}`.
///
/// Streams the same increments as [`sample_subordinator_path`] with level 1
/// and `laplace_scale = Γ(1-α)`, returning
/// [`SubordinatorPath::weighted_passage`] without storing the path.
pub fn sample_z_pathint<R: Rng + ?Sized>(params: AlphaBeta, grid_step: f64, rng: &mut R) -> Result<f64> {
    check_grid(grid_step, 1.0)?;
    let spec = StableSpec::sieve_normalized(params.alpha)?;
    let scale = spec.increment_scale(grid_step);
    let beta = params.beta;
    let mut x = 0.0f64;
    let mut sum = 0.0;
    let mut steps = 0usize;
    while x < 1.0 {
        sum += if beta == 0.0 { 1.0 } else { (1.0 - x).powf(-beta) };
        steps += 1;
        if steps > MAX_PATH_STEPS {
            return Err(range("subordinator path did not cross within the step limit"));
        }
        x += scale * sample_standard_stable(params.alpha, rng);
    }
    Ok(sum * grid_step)
}

/// What to do with the jumps of `Y_α` below the truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SmallJumps {
    /// Drop them; `Y` is underestimated by `levy_small_jump_mean` per unit time.
    #[default]
    Discard,
    /// Replace them by their mean as a linear drift.
    Drift,
}

/// Compound Poisson path of the jumps of `Y_α` of size at least `eps` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpProcessPath {
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub truncation_eps: f64,
    pub horizon: f64,
    /// Drift per unit time standing in for the discarded small jumps.
    pub drift: f64,
}

impl JumpProcessPath {
    /// `Y(t)` for `t` within the horizon.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.jump_sizes[..k].iter().sum::<f64>() + self.drift * t
    }
}

pub fn sample_jump_path<R: Rng + ?Sized>(
    alpha: f64,
    eps: f64,
    horizon: f64,
    small_jumps: SmallJumps,
    rng: &mut R,
) -> Result<JumpProcessPath> {
    let rate = levy_tail_mass(alpha, eps)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(domain(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    let drift = match small_jumps {
        SmallJumps::Discard => 0.0,
        SmallJumps::Drift => levy_small_jump_mean(alpha, eps)?,
    };
    let mut jump_times = Vec::new();
    let mut jump_sizes = Vec::new();
    let mut t = standard_exponential(rng) / rate;
    while t <= horizon {
        jump_times.push(t);
        jump_sizes.push(levy_jump_from_uniform(alpha, rate, sample_uniform01(rng)).max(eps));
        t += standard_exponential(rng) / rate;
    }
    Ok(JumpProcessPath { jump_times, jump_sizes, truncation_eps: eps, horizon, drift })
}

/// `Y_α(time)` from the eps-truncated jump process.
pub fn sample_y<R: Rng + ?Sized>(
    alpha: f64,
    eps: f64,
    time: f64,
    small_jumps: SmallJumps,
    rng: &mut R,
) -> Result<f64> {
    let path = sample_jump_path(alpha, eps, time, small_jumps, rng)?;
    Ok(path.jump_sizes.iter().sum::<f64>() + path.drift * time)
}

/// Exponential-functional draw `∫_0^T exp(-c Y_α(t)) dt` with small jumps discarded.
pub fn sample_z_expfunctional<R: Rng + ?Sized>(params: AlphaBeta, eps: f64, rng: &mut R) -> Result<f64> {
    sample_z_expfunctional_with(params, eps, SmallJumps::Discard, rng)
}

/// Exponential-functional draw with an explicit small-jump policy.
///
/// `Y` is piecewise constant (or piecewise linear under [`SmallJumps::Drift`])
/// between jumps, so each segment integrates in closed form.
pub fn sample_z_expfunctional_with<R: Rng + ?Sized>(
    params: AlphaBeta,
    eps: f64,
    small_jumps: SmallJumps,
    rng: &mut R,
) -> Result<f64> {
    let alpha = params.alpha;
    let rate = levy_tail_mass(alpha, eps)?;
    let horizon = standard_exponential(rng);
    let c = params.exponent_scale();
    if c == 0.0 {
        return Ok(horizon);
    }
    let drift = match small_jumps {
        SmallJumps::Discard => 0.0,
        SmallJumps::Drift => levy_small_jump_mean(alpha, eps)?,
    };
    let cd = c * drift;
    let mut t = 0.0;
    let mut y = 0.0;
    let mut integral = 0.0;
    loop {
        let next = t + standard_exponential(rng) / rate;
        let end = next.min(horizon);
        let dt = end - t;
        let level = (-c * y).exp();
        integral += if cd > 0.0 { level * -(-cd * dt).exp_m1() / cd } else { level * dt };
        y += drift * dt;
        if next >= horizon || c * y > 800.0 {
            break;
        }
        y += levy_jump_from_uniform(alpha, rate, sample_uniform01(rng)).max(eps);
        t = next;
    }
    Ok(integral)
}

/// Direct draw of `X_α^←(1) = Γ(1-α)^{-1} S^{-α}` for a standard stable `S`.
pub fn sample_mittag_leffler<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    check_alpha(alpha)?;
    let s = sample_standard_stable(alpha, rng);
    Ok(s.powf(-alpha) / gamma_unchecked(1.0 - alpha))
}
