use std::f64::consts::PI;

use statrs::distribution::{Discrete, DiscreteCDF, Poisson};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use super::StatsError;

/// `P(X <= x)` for `X ~ chi^2(k)`: the regularized lower incomplete gamma `P(k/2, x/2)`.
pub fn chi2_cdf(x: f64, k: u32) -> f64 {
    assert!(k >= 1, "degrees of freedom must be positive");
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(k as f64 / 2.0, x / 2.0)
    }
}

fn chi2_sf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(k as f64 / 2.0, x / 2.0)
    }
}

/// G-test p-value of observed counts against expected counts, with
/// `cells - 1` degrees of freedom; `0 ln 0 = 0`.
pub fn g_test_cells(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    if observed.len() < 2 {
        return 1.0;
    }
    let g: f64 = 2.0
        * observed
            .iter()
            .zip(expected)
            .filter(|(o, _)| **o > 0)
            .map(|(&o, &e)| o as f64 * (o as f64 / e).ln())
            .sum::<f64>();
    chi2_sf(g.max(0.0), observed.len() - 1)
}

/// G-test of a 0/1 sample against Bernoulli(theta). Samples with any other
/// value get p = 0.
pub fn g_test_p_value(samples: &[f64], theta: f64) -> Result<f64, StatsError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(StatsError::DegenerateTheta(theta));
    }
    if samples.is_empty() {
        return Err(StatsError::SampleTooSmall { needed: 1, got: 0 });
    }
    if samples.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Ok(0.0);
    }
    let ones = samples.iter().filter(|&&x| x == 1.0).count() as u64;
    let n = samples.len() as u64;
    let nf = n as f64;
    Ok(g_test_cells(&[n - ones, ones], &[nf * (1.0 - theta), nf * theta]))
}

/// Multi-cell G-test against Poisson(lambda). Cells run over the observed
/// range with adjacent values pooled until each cell expects at least one
/// draw; the upper tail joins the last cell. Non-integer or negative values
/// get p = 0.
pub fn g_test_poisson(samples: &[f64], lambda: f64) -> Result<f64, StatsError> {
    let dist = Poisson::new(lambda).map_err(|_| StatsError::InvalidParameter(format!("poisson rate {lambda}")))?;
    if samples.is_empty() {
        return Err(StatsError::SampleTooSmall { needed: 1, got: 0 });
    }
    if samples.iter().any(|&x| !(x >= 0.0 && x.fract() == 0.0 && x < 1e15)) {
        return Ok(0.0);
    }
    let nf = samples.len() as f64;
    let max = samples.iter().fold(0.0f64, |m, &x| m.max(x)) as u64;
    let mut hist = vec![0u64; max as usize + 1];
    for &x in samples {
        hist[x as usize] += 1;
    }
    let mut observed = Vec::new();
    let mut expected = Vec::new();
    let (mut o, mut e) = (0u64, 0.0);
    for (k, &c) in hist.iter().enumerate() {
        o += c;
        e += nf * dist.pmf(k as u64);
        if e >= 1.0 {
            observed.push(o);
            expected.push(e);
            o = 0;
            e = 0.0;
        }
    }
    e += nf * dist.sf(max);
    if e >= 1.0 || observed.is_empty() {
        observed.push(o);
        expected.push(e);
    } else {
        *observed.last_mut().expect("non-empty") += o;
        *expected.last_mut().expect("non-empty") += e;
    }
    Ok(g_test_cells(&observed, &expected))
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Asymptotic Kolmogorov survival function `Q_KS(lambda)`.
pub fn q_ks(lambda: f64) -> f64 {
    const EPS: f64 = 1e-10;
    if !(lambda > 0.0) {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        let mut sum = 0.0;
        for j in 1..=100 {
            let m = (2 * j - 1) as f64;
            let term = (-m * m * PI * PI / (8.0 * lambda * lambda)).exp();
            sum += term;
            if term < EPS {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = 2.0 * (-2.0 * jf * jf * lambda * lambda).exp();
            sum += sign * term;
            sign = -sign;
            if term < EPS {
                break;
            }
        }
        sum
    };
    p.clamp(0.0, 1.0)
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    q_ks((s + 0.12 + 0.11 / s) * d)
}

/// Two-sample test. Empirical CDFs are right-continuous step functions, so
/// tied values are consumed together before the gap is measured.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    for s in [a, b] {
        if s.len() < 5 {
            return Err(StatsError::SampleTooSmall { needed: 5, got: s.len() });
        }
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
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
    Ok(KsResult { d, p: ks_p(d, na * nb / (na + nb)) })
}

/// One-sample test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult, StatsError> {
    if samples.len() < 5 {
        return Err(StatsError::SampleTooSmall { needed: 5, got: samples.len() });
    }
    let x = sorted(samples);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult { d, p: ks_p(d, n) })
}
