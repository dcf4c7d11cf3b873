//! Adaptive Gauss–Kronrod quadrature (7-point Gauss / 15-point Kronrod).

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7K15 panel: (Kronrod estimate, error estimate).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    let rk = rk * h;
    let rg = rg * h;
    (rk, (rk - rg).abs())
}

#[derive(Clone, Copy, Debug)]
pub struct QuadControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadControl {
    fn default() -> Self {
        QuadControl { abs_tol: 1e-13, rel_tol: 1e-10, max_panels: 4000 }
    }
}

/// Globally adaptive integration of `f` over `[a, b]` (finite).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, ctl: QuadControl) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Precondition(format!("integration bounds must be finite: [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    let (sign, lo, hi) = if a < b { (1.0, a, b) } else { (-1.0, b, a) };
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(&mut f, lo, hi);
    panels.push((lo, hi, v, e));
    let mut total = v;
    let mut err = e;
    while err > ctl.abs_tol.max(ctl.rel_tol * total.abs()) {
        if panels.len() >= ctl.max_panels {
            return Err(Error::Integration(format!(
                "no convergence on [{lo}, {hi}]: estimate {total}, error {err}"
            )));
        }
        let (k, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (pa, pb, pv, pe) = panels.swap_remove(k);
        let m = 0.5 * (pa + pb);
        if m <= pa || m >= pb {
            return Err(Error::Integration(format!("panel underflow near {pa}")));
        }
        let (v1, e1) = gk15(&mut f, pa, m);
        let (v2, e2) = gk15(&mut f, m, pb);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        panels.push((pa, m, v1, e1));
        panels.push((m, pb, v2, e2));
        if err < 0.0 {
            err = panels.iter().map(|p| p.3).sum();
        }
    }
    Ok(sign * panels.iter().map(|p| p.2).sum::<f64>())
}

/// Integral over `[a, ∞)` via `t = a + s/(1-s)`.
pub fn integrate_to_inf<F: FnMut(f64) -> f64>(mut f: F, a: f64, ctl: QuadControl) -> Result<f64> {
    integrate(
        |s| {
            if s >= 1.0 {
                return 0.0;
            }
            let one = 1.0 - s;
            let t = a + s / one;
            let v = f(t) / (one * one);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        ctl,
    )
}

/// Integral over `[a, ∞)` for integrands with a `t^{-3/2}`-type tail: `[a, m]`
/// directly and `[m, ∞)` through `t = m/u²`, which makes the tail integrand bounded.
pub fn integrate_power_tail<F: FnMut(f64) -> f64>(mut f: F, a: f64, m: f64, ctl: QuadControl) -> Result<f64> {
    let head = integrate_log_split(&mut f, a, m, 30, ctl)?;
    let tail = integrate(
        |u| {
            if u <= 0.0 {
                return 0.0;
            }
            let t = m / (u * u);
            let v = f(t) * 2.0 * m / (u * u * u);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        ctl,
    )?;
    Ok(head + tail)
}

/// Integral over `[0, t]` of a convolution-type integrand with mass near both
/// ends on O(1) scales: breakpoints at `s = 2^k/4` and `t - 2^k/4`.
pub fn integrate_convolution<F: FnMut(f64) -> f64>(mut f: F, t: f64, ctl: QuadControl) -> Result<f64> {
    let mut pts = vec![0.0, t];
    let mut h = 0.25;
    while h < t {
        pts.push(h);
        pts.push(t - h);
        h *= 2.0;
    }
    pts.retain(|&p| (0.0..=t).contains(&p));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut s = 0.0;
    for w in pts.windows(2) {
        s += integrate(&mut f, w[0], w[1], ctl)?;
    }
    Ok(s)
}

/// Integral over `[a, b]` split at log-spaced breakpoints, useful when
/// the integrand is concentrated near `a` on a scale much smaller than `b - a`.
pub fn integrate_log_split<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    pieces: usize,
    ctl: QuadControl,
) -> Result<f64> {
    if b <= a {
        return integrate(f, a, b, ctl);
    }
    let w = b - a;
    let mut edges = vec![a];
    for k in (1..pieces).rev() {
        edges.push(a + w * 2f64.powi(-(k as i32)));
    }
    edges.push(b);
    let mut s = 0.0;
    for p in edges.windows(2) {
        s += integrate(&mut f, p[0], p[1], ctl)?;
    }
    Ok(s)
}
