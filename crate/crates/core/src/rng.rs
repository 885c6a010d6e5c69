//! Seeded random streams and primitive variate generators.
//!
//! Every replicate of every experiment draws from its own [`RngStream`]: a
//! ChaCha8 keystream keyed by the 64-bit seed and selected by the 64-bit
//! stream id. Streams are indexable, so replicate `i` produces the same
//! variates whether it runs first, last, or on another thread.

use std::f64::consts::PI;

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// The generator handed to samplers.
pub type StreamRng = ChaCha8Rng;

/// Address of one deterministic random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Materialize the generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derive a seed for an independent family of streams, labelled by
    /// purpose. Used to keep e.g. the walk paths and the limit-law reference
    /// sample of one experiment disjoint.
    pub fn derive_seed(seed: u64, label: &str) -> u64 {
        let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
        for b in label.bytes() {
            h ^= b as u64;
            h = splitmix64(h);
        }
        splitmix64(h)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run `f` once per replicate `0..count`, each on stream `(seed, index)`.
///
/// Output order is the replicate order, whatever the thread count of the
/// enclosing rayon pool.
pub fn par_replicates<T, F>(seed: u64, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng) -> T + Sync + Send,
{
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i).rng();
            f(&mut rng)
        })
        .collect()
}

/// One-sided strictly stable law with Laplace transform
/// `E exp(-s X) = exp(-laplace_scale * s^alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableSpec {
    alpha: f64,
    laplace_scale: f64,
}

impl StableSpec {
    pub fn new(alpha: f64, laplace_scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(domain(format!("stable index must lie in (0,1), got {alpha}")));
        }
        if !(laplace_scale > 0.0 && laplace_scale.is_finite()) {
            return Err(domain(format!("laplace scale must be finite and positive, got {laplace_scale}")));
        }
        Ok(Self { alpha, laplace_scale })
    }

    /// The normalization of the subordinator in the limit law of the sieve:
    /// `laplace_scale = Γ(1 - alpha)`.
    pub fn sieve_normalized(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(domain(format!("stable index must lie in (0,1), got {alpha}")));
        }
        Self::new(alpha, crate::special::gamma_unchecked(1.0 - alpha))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn laplace_scale(&self) -> f64 {
        self.laplace_scale
    }

    /// Multiplier turning a standard draw into an increment over `time_scale`.
    pub fn increment_scale(&self, time_scale: f64) -> f64 {
        (self.laplace_scale * time_scale).powf(1.0 / self.alpha)
    }
}

/// Uniform variate on the open interval `(0, 1)`.
pub fn sample_uniform01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

/// Exponential variate with the given mean.
pub fn sample_exponential<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<f64> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(domain(format!("exponential mean must be finite and positive, got {mean}")));
    }
    Ok(mean * standard_exponential(rng))
}

pub(crate) fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -sample_uniform01(rng).ln()
}

/// Poisson variate with the given mean.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(domain(format!("poisson mean must be finite and nonnegative, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = rand_distr::Poisson::new(mean).map_err(|e| domain(format!("poisson({mean}): {e}")))?;
    let draw: f64 = dist.sample(rng);
    Ok(draw as u64)
}

/// Binomial variate: number of successes among `trials` with success
/// probability `p`.
pub fn sample_binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("binomial probability must lie in [0,1], got {p}")));
    }
    if trials == 0 || p == 0.0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(trials);
    }
    let dist = rand_distr::Binomial::new(trials, p).map_err(|e| domain(format!("binomial: {e}")))?;
    Ok(dist.sample(rng))
}

/// Natural log of a Gamma(shape, 1) variate.
pub(crate) fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    // shape < 1: Gamma(a) = Gamma(a+1) * U^(1/a), done in log space so tiny
    // shapes never underflow to zero
    if shape < 1.0 {
        let g = rand_distr::Gamma::new(shape + 1.0, 1.0).expect("positive shape");
        let x: f64 = g.sample(rng);
        return x.ln() + sample_uniform01(rng).ln() / shape;
    }
    let g = rand_distr::Gamma::new(shape, 1.0).expect("positive shape");
    let x: f64 = g.sample(rng);
    x.ln()
}

/// Standard one-sided stable variate: `E exp(-s S) = exp(-s^alpha)`.
///
/// Kanter's representation,
/// `S = sin(αU) sin((1-α)U)^((1-α)/α) / sin(U)^(1/α) · E^(-(1-α)/α)`
/// with `U ~ Uniform(0, π)` and `E ~ Exp(1)`, evaluated in log space.
pub fn sample_standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * sample_uniform01(rng);
    let e = standard_exponential(rng);
    let beta = (1.0 - alpha) / alpha;
    let ln_s = (alpha * u).sin().ln() + beta * ((1.0 - alpha) * u).sin().ln()
        - u.sin().ln() / alpha
        - beta * e.ln();
    ln_s.exp()
}

/// Increment of the subordinator `spec` over a duration `time_scale`.
pub fn sample_stable<R: Rng + ?Sized>(spec: &StableSpec, time_scale: f64, rng: &mut R) -> Result<f64> {
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        return Err(domain(format!("time scale must be finite and positive, got {time_scale}")));
    }
    Ok(spec.increment_scale(time_scale) * sample_standard_stable(spec.alpha, rng))
}
