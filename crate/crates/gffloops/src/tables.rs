//! Numerical inverse-CDF sampling for densities known only pointwise.

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadControl};

/// Behaviour of the distribution beyond the last grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail {
    /// Mass beyond the grid is negligible or the support ends there.
    None,
    /// Survival `∝ t^{-1/2}` beyond the grid (hitting times of a level).
    PowerHalf,
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    /// First grid point; mass below it is integrated exactly from 0.
    pub lo: f64,
    /// Last grid point of the log-spaced part (ignored when `support_end` is set).
    pub hi: f64,
    pub per_decade: usize,
    /// Finite right end of the support; the grid then accumulates towards it.
    pub support_end: Option<f64>,
    pub tail: Tail,
    /// Exact total mass if known (used to size the tail); otherwise the grid mass.
    pub mass: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct InvCdf {
    t: Vec<f64>,
    cdf: Vec<f64>,
    slope: Vec<f64>,
    mass: f64,
    tail: Tail,
}

fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let n = (((hi / lo).log10()) * per_decade as f64).ceil().max(1.0) as usize;
    (0..=n).map(|k| lo * (hi / lo).powf(k as f64 / n as f64)).collect()
}

impl InvCdf {
    pub fn build<F: Fn(f64) -> Result<f64>>(f: F, spec: &GridSpec) -> Result<Self> {
        let mut t = match spec.support_end {
            None => log_grid(spec.lo, spec.hi, spec.per_decade),
            Some(end) => {
                let mid = end / 2.0;
                let mut g = if spec.lo < mid { log_grid(spec.lo, mid, spec.per_decade) } else { vec![mid] };
                let back = log_grid(end * 1e-16, mid, spec.per_decade);
                g.extend(back.iter().rev().skip(1).map(|d| end - d));
                g.push(end);
                g
            }
        };
        t.dedup();
        let mut err = None;
        let mut eval = |x: f64| -> f64 {
            if x <= 0.0 {
                return 0.0;
            }
            match f(x) {
                Ok(v) if v.is_finite() => v.max(0.0),
                Ok(_) => 0.0,
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            }
        };
        let ctl = QuadControl { abs_tol: 1e-17, rel_tol: 1e-11, max_panels: 2000 };
        let mut cdf = Vec::with_capacity(t.len());
        cdf.push(integrate(&mut eval, 0.0, t[0], ctl)?);
        for w in t.windows(2) {
            let inc = integrate(&mut eval, w[0], w[1], ctl)?;
            cdf.push(cdf.last().unwrap() + inc);
        }
        let mut slope: Vec<f64> = t.iter().map(|&x| eval(x)).collect();
        if let Some(e) = err {
            return Err(e);
        }
        // Fritsch–Carlson clamp so each Hermite piece is monotone.
        for i in 0..t.len() - 1 {
            let sec = (cdf[i + 1] - cdf[i]) / (t[i + 1] - t[i]);
            if sec <= 0.0 {
                slope[i] = 0.0;
                slope[i + 1] = 0.0;
                continue;
            }
            slope[i] = slope[i].min(3.0 * sec);
            slope[i + 1] = slope[i + 1].min(3.0 * sec);
        }
        let grid_mass = *cdf.last().unwrap();
        let mass = match spec.mass {
            Some(m) => m.max(grid_mass),
            None => grid_mass,
        };
        Ok(InvCdf { t, cdf, slope, mass, tail: spec.tail })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    fn hermite(&self, i: usize, x: f64) -> f64 {
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let s = (x - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.cdf[i] + h10 * h * self.slope[i] + h01 * self.cdf[i + 1] + h11 * h * self.slope[i + 1]
    }

    /// Sub-distribution function (not normalized by the mass).
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.t.len();
        if x <= 0.0 {
            return 0.0;
        }
        if x <= self.t[0] {
            return self.cdf[0] * x / self.t[0];
        }
        if x >= self.t[n - 1] {
            let top = self.cdf[n - 1];
            return match self.tail {
                Tail::None => top,
                Tail::PowerHalf => self.mass - (self.mass - top) * (self.t[n - 1] / x).sqrt(),
            };
        }
        let i = self.t.partition_point(|&v| v <= x) - 1;
        self.hermite(i, x)
    }

    /// Normalized CDF.
    pub fn cdf_normalized(&self, x: f64) -> f64 {
        self.cdf(x) / self.mass
    }

    /// Inverse of the sub-distribution function at level `p ∈ [0, mass)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        let n = self.t.len();
        if !(p >= 0.0) || p >= self.mass + 1e-15 {
            return Err(Error::Numeric(format!("quantile level {p} outside [0, {})", self.mass)));
        }
        if p <= self.cdf[0] {
            return Ok(if self.cdf[0] > 0.0 { self.t[0] * p / self.cdf[0] } else { self.t[0] });
        }
        if p >= self.cdf[n - 1] {
            return match self.tail {
                Tail::None => Ok(self.t[n - 1]),
                Tail::PowerHalf => {
                    let rem = (self.mass - p).max(1e-300);
                    let top = self.mass - self.cdf[n - 1];
                    Ok(self.t[n - 1] * (top / rem).powi(2))
                }
            };
        }
        let i = self.cdf.partition_point(|&c| c <= p) - 1;
        let (mut lo, mut hi) = (self.t[i], self.t[i + 1]);
        if !(self.cdf[i] <= p && p <= self.cdf[i + 1]) {
            return Err(Error::Numeric(format!("bracketing failed at level {p}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.hermite(i, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Sample with a uniform `u ∈ (0,1)`, normalized to the table mass.
    pub fn sample(&self, u: f64) -> Result<f64> {
        self.quantile(u * self.mass)
    }
}

const GL8_X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL8_W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// 8-point Gauss–Legendre on `[a, b]`, with `t = a + (b-a)s²` when `sqrt_sub` is set.
fn gl8<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, sqrt_sub: bool) -> f64 {
    if sqrt_sub {
        // ∫_a^b f = ∫_0^1 f(a + w s²) 2 w s ds
        let w = b - a;
        let mut acc = 0.0;
        for k in 0..4 {
            for sgn in [-1.0, 1.0] {
                let s = 0.5 + 0.5 * sgn * GL8_X[k];
                acc += GL8_W[k] * f(a + w * s * s) * 2.0 * w * s;
            }
        }
        return 0.5 * acc;
    }
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for k in 0..4 {
        acc += GL8_W[k] * (f(c - h * GL8_X[k]) + f(c + h * GL8_X[k]));
    }
    acc * h
}

/// Draws from the density proportional to `f` on `(0, t)` by panel quadrature and
/// bisection. `f` may have an integrable `x^{-1/2}` singularity at 0 and should
/// concentrate on O(1) scales near either end.
pub fn sample_on_interval<F: FnMut(f64) -> f64>(mut f: F, t: f64, u: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Numeric(format!("empty interval (0, {t})")));
    }
    let mut pts = vec![0.0, t];
    let mut h = 1.0 / 64.0;
    while h < t {
        pts.push(h);
        pts.push(t - h);
        h *= 2.0;
    }
    pts.retain(|&p| (0.0..=t).contains(&p));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    // Halve each piece once more.
    let mut edges = Vec::with_capacity(2 * pts.len());
    for w in pts.windows(2) {
        edges.push(w[0]);
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(t);
    let mut cum = vec![0.0];
    for (k, w) in edges.windows(2).enumerate() {
        let m = gl8(&mut f, w[0], w[1], k == 0).max(0.0);
        cum.push(cum.last().unwrap() + m);
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric(format!("non-positive mass {total} on (0, {t})")));
    }
    let target = u * total;
    let k = (cum.partition_point(|&c| c <= target).max(1) - 1).min(edges.len() - 2);
    let (a, b) = (edges[k], edges[k + 1]);
    let need = target - cum[k];
    let (mut lo, mut hi) = (a, b);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gl8(&mut f, a, mid, k == 0) < need {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
