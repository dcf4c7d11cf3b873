//! Goodness-of-fit, tail exponents, conditional-law invariance and empirical
//! Laplace transforms.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

use crate::error::{Error, Result};
use crate::rng::{replica_seed, rng};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub name: String,
    pub ks_stat: Option<f64>,
    pub ks_pvalue: Option<f64>,
    pub sample_sizes: Vec<usize>,
    pub binning: Option<String>,
    /// `(estimate, ci_lo, ci_hi)`.
    pub exponent: Option<(f64, f64, f64)>,
    pub values: BTreeMap<String, f64>,
    pub pass: BTreeMap<String, bool>,
}

impl ComparisonReport {
    pub fn new(name: &str) -> Self {
        ComparisonReport { name: name.to_string(), ..Default::default() }
    }

    pub fn all_pass(&self) -> bool {
        self.pass.values().all(|&b| b)
    }

    pub fn with_ks(mut self, ks: &Ks) -> Self {
        self.ks_stat = Some(ks.stat);
        self.ks_pvalue = Some(ks.pvalue);
        self.sample_sizes = ks.sizes.clone();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ks {
    pub stat: f64,
    pub pvalue: f64,
    pub sizes: Vec<usize>,
}

/// Asymptotic Kolmogorov survival `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_pvalue(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

fn sorted_finite(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Stats("empty sample".into()));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Stats("sample contains NaN".into()));
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn just_below(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else if x == 0.0 {
        -f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// One-sample KS statistic against a CDF; tied sample values are compared
/// with the CDF's left and right limits, so distributions with atoms are allowed.
pub fn ks_one_sample<F: Fn(f64) -> f64 + Sync>(x: &[f64], cdf: F) -> Result<Ks> {
    let v = sorted_finite(x)?;
    let n = v.len() as f64;
    let mut runs = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        runs.push((i, j));
        i = j + 1;
    }
    let d = runs
        .par_iter()
        .map(|&(i, j)| {
            let xi = v[i];
            let right = cdf(xi);
            let left = if i == j { right } else { cdf(just_below(xi)) };
            (left - i as f64 / n).abs().max(((j + 1) as f64 / n - right).abs())
        })
        .reduce(|| 0.0, f64::max);
    Ok(Ks { stat: d, pvalue: ks_pvalue(d, n), sizes: vec![v.len()] })
}

/// Two-sample KS statistic; infinite values act as a common censoring point.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<Ks> {
    let a = sorted_finite(x)?;
    let b = sorted_finite(y)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(Ks { stat: d, pvalue: ks_pvalue(d, n * m / (n + m)), sizes: vec![a.len(), b.len()] })
}

/// Two-sided exact binomial test of `k` successes in `n` trials against `p`.
pub fn binomial_test(k: u64, n: u64, p: f64) -> Result<f64> {
    if n == 0 || !(0.0..=1.0).contains(&p) || k > n {
        return Err(Error::Stats(format!("invalid binomial test k={k} n={n} p={p}")));
    }
    if p == 0.0 || p == 1.0 {
        let expected = if p == 0.0 { 0 } else { n };
        return Ok(if k == expected { 1.0 } else { 0.0 });
    }
    let dist = Binomial::new(p, n).map_err(|e| Error::Stats(e.to_string()))?;
    let pk = dist.pmf(k);
    let tol = pk * (1.0 + 1e-7);
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    let mean = n as f64 * p;
    // Outcomes further than 40 sd from the mean carry no mass at f64 precision.
    let lo = (mean - 40.0 * sd - 2.0).max(0.0) as u64;
    let hi = ((mean + 40.0 * sd + 2.0) as u64).min(n);
    let mut s = 0.0;
    for j in lo..=hi {
        let q = dist.pmf(j);
        if q <= tol {
            s += q;
        }
    }
    if k < lo || k > hi {
        s += pk;
    }
    Ok(s.min(1.0))
}

/// Censored comparison: KS of the uncensored parts plus an exact binomial test
/// on the censoring count against `censor_prob`.
pub fn ks_censored<F: Fn(f64) -> f64 + Sync>(
    uncensored: &[f64],
    n_censored: usize,
    conditional_cdf: F,
    censor_prob: f64,
) -> Result<(Option<Ks>, f64)> {
    let n = uncensored.len() + n_censored;
    let ks = if uncensored.is_empty() { None } else { Some(ks_one_sample(uncensored, conditional_cdf)?) };
    let p = binomial_test(n_censored as u64, n as u64, censor_prob)?;
    Ok((ks, p))
}

/// Pearson chi-square test with bins of expected count below 5 pooled into their neighbour.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> Result<(f64, usize, f64)> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::Stats("chi-square bins mismatch".into()));
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&ob, &ex) in observed.iter().zip(expected) {
        o += ob as f64;
        e += ex;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    if bins.len() < 2 {
        return Err(Error::Stats("too few populated bins for chi-square".into()));
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Stats(e.to_string()))?;
    Ok((stat, dof, 1.0 - dist.cdf(stat)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub threshold: f64,
    pub exceedances: usize,
}

/// Exponential tail rate from the excesses over the `quantile` threshold,
/// with a percentile-bootstrap 95% interval.
pub fn tail_exponent(samples: &[f64], quantile: f64, n_boot: usize, seed: u64) -> Result<TailFit> {
    let v = sorted_finite(samples)?;
    if !(0.0..1.0).contains(&quantile) {
        return Err(Error::Stats(format!("threshold quantile {quantile} outside [0,1)")));
    }
    let k = ((v.len() as f64) * quantile).floor() as usize;
    let u = v[k.min(v.len() - 1)];
    let exc: Vec<f64> = v.iter().filter(|&&x| x > u && x.is_finite()).map(|&x| x - u).collect();
    if exc.len() < 1000 {
        return Err(Error::Stats(format!("only {} exceedances above threshold, need 1000", exc.len())));
    }
    let rate = exc.len() as f64 / exc.iter().sum::<f64>();
    let mut boots: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut r = rng(replica_seed(seed, b as u64));
            let mut s = 0.0;
            for _ in 0..exc.len() {
                s += exc[r.gen_range(0..exc.len())];
            }
            exc.len() as f64 / s
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let (ci_lo, ci_hi) = percentile_interval(&boots, rate);
    Ok(TailFit { rate, ci_lo, ci_hi, threshold: u, exceedances: exc.len() })
}

fn percentile_interval(sorted: &[f64], fallback: f64) -> (f64, f64) {
    if sorted.is_empty() {
        return (fallback, fallback);
    }
    let at = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    (at(0.025), at(0.975))
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Stats("correlation needs two equal samples of size >= 3".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Stats("constant sample in correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// One row of a conditional-invariance dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CondRow {
    pub conditioner: f64,
    pub label: Option<i64>,
    pub response: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub lo: f64,
    pub hi: f64,
    pub label: Option<i64>,
    pub n0: usize,
    pub n1: usize,
    pub ks: Option<f64>,
    pub pvalue: Option<f64>,
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub bins: Vec<BinResult>,
    pub occupied: usize,
    pub passing: usize,
    pub pass: bool,
}

/// Per-bin two-sample KS of the response given (binned conditioner, label).
/// Passes iff at least 95% of occupied bins have `p > 0.01`.
pub fn conditional_invariance(d0: &[CondRow], d1: &[CondRow], n_bins: usize, min_per_bin: usize) -> Result<InvarianceReport> {
    if d0.is_empty() || d1.is_empty() || n_bins == 0 {
        return Err(Error::Stats("conditional invariance needs two nonempty datasets".into()));
    }
    let mut pooled: Vec<f64> = d0.iter().chain(d1).map(|r| r.conditioner).collect();
    pooled.sort_by(f64::total_cmp);
    let mut edges = vec![f64::NEG_INFINITY];
    for k in 1..n_bins {
        edges.push(pooled[(pooled.len() * k) / n_bins]);
    }
    edges.push(f64::INFINITY);
    edges.dedup();
    let mut labels: Vec<Option<i64>> = d0.iter().chain(d1).map(|r| r.label).collect();
    labels.sort();
    labels.dedup();
    let mut bins = Vec::new();
    for w in edges.windows(2) {
        for &lab in &labels {
            let pick = |d: &[CondRow]| -> Vec<f64> {
                d.iter()
                    .filter(|r| r.label == lab && r.conditioner > w[0] && r.conditioner <= w[1])
                    .map(|r| r.response)
                    .collect()
            };
            let (x0, x1) = (pick(d0), pick(d1));
            if x0.is_empty() && x1.is_empty() {
                continue;
            }
            let skipped = x0.len() < min_per_bin || x1.len() < min_per_bin;
            let (ks, pvalue) = if skipped {
                (None, None)
            } else {
                let k = ks_two_sample(&x0, &x1)?;
                (Some(k.stat), Some(k.pvalue))
            };
            bins.push(BinResult { lo: w[0], hi: w[1], label: lab, n0: x0.len(), n1: x1.len(), ks, pvalue, skipped });
        }
    }
    let occupied = bins.iter().filter(|b| !b.skipped).count();
    if occupied == 0 {
        return Err(Error::Stats(format!("no bin holds {min_per_bin} samples from both datasets")));
    }
    let passing = bins.iter().filter(|b| b.pvalue.is_some_and(|p| p > 0.01)).count();
    let pass = passing as f64 >= 0.95 * occupied as f64;
    Ok(InvarianceReport { bins, occupied, passing, pass })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacePoint {
    pub nu: f64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// `E[e^{-νσ}]` per `ν` with a percentile-bootstrap 95% interval.
pub fn laplace_empirical(samples: &[f64], nu_grid: &[f64], n_boot: usize, seed: u64) -> Result<Vec<LaplacePoint>> {
    if samples.is_empty() {
        return Err(Error::Stats("empty sample".into()));
    }
    nu_grid
        .iter()
        .map(|&nu| {
            if !(nu >= 0.0) {
                return Err(Error::Stats(format!("nu must be nonnegative, got {nu}")));
            }
            let vals: Vec<f64> = samples.iter().map(|&s| (-nu * s).exp()).collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let mut boots: Vec<f64> = (0..n_boot)
                .into_par_iter()
                .map(|b| {
                    let mut r = rng(replica_seed(seed ^ nu.to_bits(), b as u64));
                    (0..n).map(|_| vals[r.gen_range(0..n)]).sum::<f64>() / n as f64
                })
                .collect();
            boots.sort_by(f64::total_cmp);
            let (ci_lo, ci_hi) = percentile_interval(&boots, mean);
            Ok(LaplacePoint { nu, mean, ci_lo, ci_hi })
        })
        .collect()
}
