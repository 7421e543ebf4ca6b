//! Seeded random streams and the samplers used by the simulation settings.
//!
//! Every stream is a ChaCha8 generator (`rand_chacha::ChaCha8Rng`) seeded
//! from a 64-bit value. Replication `k` of a run with base seed `s` uses the
//! sub-seed `s ^ splitmix64(k)`, so replications can be regenerated one at a
//! time and in any order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Open01, StandardNormal};

use crate::error::{DartError, Result};

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th independent sub-stream of `seed`.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index)
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn substream(seed: u64, index: u64) -> Self {
        Self::new(substream_seed(seed, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        self.inner.sample(Open01)
    }

    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    #[inline]
    pub fn std_exponential(&mut self) -> f64 {
        self.inner.sample(Exp1)
    }

    /// Index uniform on `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DartError::Domain(format!("{name} must be positive, got {v}")))
    }
}

pub fn sample_normal(rng: &mut SeededRng, mean: f64, sd: f64) -> Result<f64> {
    positive("sd", sd)?;
    Ok(mean + sd * rng.std_normal())
}

pub fn sample_unif(rng: &mut SeededRng, a: f64, b: f64) -> Result<f64> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(DartError::Domain(format!(
            "uniform bounds must satisfy a < b, got ({a}, {b})"
        )));
    }
    Ok(a + (b - a) * rng.uniform())
}

/// Laplace draw by inversion.
pub fn sample_laplace(rng: &mut SeededRng, loc: f64, scale: f64) -> Result<f64> {
    positive("scale", scale)?;
    Ok(laplace(rng, loc, scale))
}

#[inline]
pub(crate) fn laplace(rng: &mut SeededRng, loc: f64, scale: f64) -> f64 {
    let u = rng.uniform_open() - 0.5;
    loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Noncentral t with 5 degrees of freedom, built as (Z + ncp) / sqrt(V / 5)
/// with V a sum of five squared standard normals.
pub fn sample_noncentral_t5(rng: &mut SeededRng, ncp: f64) -> Result<f64> {
    if !ncp.is_finite() {
        return Err(DartError::Domain(format!(
            "noncentrality must be finite, got {ncp}"
        )));
    }
    Ok(noncentral_t5(rng, ncp))
}

#[inline]
pub(crate) fn noncentral_t5(rng: &mut SeededRng, ncp: f64) -> f64 {
    let z = rng.std_normal();
    let v: f64 = (0..5)
        .map(|_| {
            let e = rng.std_normal();
            e * e
        })
        .sum();
    (z + ncp) / (v / 5.0).sqrt()
}

pub fn sample_exponential(rng: &mut SeededRng, rate: f64) -> Result<f64> {
    positive("rate", rate)?;
    Ok(rng.std_exponential() / rate)
}

pub fn sample_bernoulli(rng: &mut SeededRng, p: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DartError::Domain(format!("p must lie in [0,1], got {p}")));
    }
    Ok(rng.uniform() < p)
}
