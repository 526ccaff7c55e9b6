use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::sexpr::SampleSet;
use crate::stats::{Family, SummaryStats};

/// A target distribution with validated parameters and an exact sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    family: Family,
    theta: Vec<f64>,
}

impl ReferenceDistribution {
    pub fn new(family: Family, theta: &[f64]) -> Result<Self, HarnessError> {
        family.validate(theta).map_err(|e| HarnessError::InvalidParameter(e.to_string()))?;
        Ok(ReferenceDistribution { family, theta: theta.to_vec() })
    }

    pub fn bernoulli(p: f64) -> Result<Self, HarnessError> {
        Self::new(Family::Bernoulli, &[p])
    }

    pub fn poisson(lambda: f64) -> Result<Self, HarnessError> {
        Self::new(Family::Poisson, &[lambda])
    }

    pub fn gamma(a: f64) -> Result<Self, HarnessError> {
        Self::new(Family::Gamma, &[a])
    }

    pub fn beta(a: f64) -> Result<Self, HarnessError> {
        Self::new(Family::Beta, &[a])
    }

    pub fn std_normal() -> Self {
        ReferenceDistribution { family: Family::StdNormal, theta: Vec::new() }
    }

    pub fn normal(mu: f64, sigma: f64) -> Result<Self, HarnessError> {
        Self::new(Family::Normal, &[mu, sigma])
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn moments(&self) -> SummaryStats {
        self.family.moments(&self.theta)
    }

    /// CDF for continuous families, the step CDF for discrete ones.
    pub fn cdf(&self, x: f64) -> f64 {
        self.family.cdf(&self.theta, x)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = &self.theta;
        match self.family {
            Family::Bernoulli => {
                if rng.random::<f64>() < t[0] {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Poisson => knuth_poisson(t[0], rng),
            Family::Gamma => gamma(t[0], rng),
            Family::Beta => unit_open(rng).powf(1.0 / t[0]),
            Family::StdNormal => box_muller(rng),
            Family::Normal => t[0] + t[1] * box_muller(rng),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> SampleSet {
        SampleSet::new((0..count).map(|_| self.draw(rng)).collect())
    }
}

/// Uniform on (0, 1].
fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

fn box_muller<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u = unit_open(rng);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}

fn knuth_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    let limit = (-lambda).exp();
    let mut k = 0.0;
    let mut p: f64 = rng.random();
    while p > limit {
        k += 1.0;
        p *= rng.random::<f64>();
    }
    k
}

/// Marsaglia-Tsang, with the `u^(1/a)` boost for shape below one.
fn gamma<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 1.0 {
        return gamma(a + 1.0, rng) * unit_open(rng).powf(1.0 / a);
    }
    let d = a - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = box_muller(rng);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u = unit_open(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}
