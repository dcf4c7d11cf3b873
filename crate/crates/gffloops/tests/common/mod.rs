#![allow(dead_code)]
//! Independent closed-form oracles for the Brownian functionals, written
//! directly from image sums and eigenfunction expansions.

use std::f64::consts::PI;

use statrs::function::erf::erfc;

pub const LAMBDA: f64 = 0.626_657_068_657_750_1;
pub const GAP: f64 = 2.0 * LAMBDA;

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / 2f64.sqrt())
}

/// `P(T_{-a,b} ≤ t)` for Brownian motion from 0.
pub fn interval_exit_cdf(a: f64, b: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let l = a + b;
    if t < l * l {
        let st = t.sqrt();
        let mut surv = 0.0;
        for k in -30i32..=30 {
            let s = 2.0 * k as f64 * l;
            surv += phi((b - s) / st) - phi((-a - s) / st) - phi((b + 2.0 * a + s) / st) + phi((a + s) / st);
        }
        1.0 - surv
    } else {
        let mut surv = 0.0;
        for k in (1..400).step_by(2) {
            let kf = k as f64;
            surv += 4.0 / (kf * PI) * (kf * PI * a / l).sin() * (-kf * kf * PI * PI * t / (2.0 * l * l)).exp();
        }
        1.0 - surv
    }
}

/// `P(T_{-a} ≤ t) = erfc(a/√(2t))`.
pub fn hit_cdf(a: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        erfc(a / (2.0 * t).sqrt())
    }
}

/// CDF of the Bessel-3 hitting time of `x` from 0.
pub fn beta_cdf(x: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t <= x * x {
        let mut s = 0.0;
        for k in 0..50 {
            let m = (2 * k + 1) as f64;
            s += 2.0 * x * (2.0 / (PI * t)).sqrt() * (-m * m * x * x / (2.0 * t)).exp();
        }
        s
    } else {
        let mut surv = 0.0;
        for n in 1..200 {
            let nf = n as f64;
            let term = 2.0 * (-nf * nf * PI * PI * t / (2.0 * x * x)).exp();
            surv += if n % 2 == 1 { term } else { -term };
        }
        1.0 - surv
    }
}

/// `∫₀ᵗ e^{-z²/2s}/√(2πs) ds`.
pub fn occupation(t: f64, z: f64) -> f64 {
    let z = z.abs();
    (2.0 * t / PI).sqrt() * (-z * z / (2.0 * t)).exp() - z * erfc(z / (2.0 * t).sqrt())
}

/// Normalized CDF of the last passage `τ_{-a}` at `-a + 2λ` before `T_{-a}`, atom at 0 included.
pub fn fps_tau_cdf(a: f64, t: f64) -> f64 {
    let y = -a + GAP;
    let atom = 1.0 - a.min(GAP) / GAP;
    if t <= 0.0 {
        return if t == 0.0 { atom } else { 0.0 };
    }
    atom + (occupation(t, y) - occupation(t, y + 2.0 * a)) / (2.0 * GAP)
}

/// Side-conditional CDF of the last passage at the recording level of `side` before `T_{-a,b}`.
pub fn tvs_tau_cdf(a: f64, b: f64, lower: bool, t: f64) -> f64 {
    let l = a + b;
    let y = if lower { -a + GAP } else { b - GAP };
    let pside = if lower { b / l } else { a / l };
    let green = if y > -a && y < b { 2.0 * (y.min(0.0) + a) * (b - y.max(0.0)) / l } else { 0.0 };
    let cont = green / (2.0 * GAP);
    let atom = pside - cont;
    if t <= 0.0 {
        return if t == 0.0 { atom / pside } else { 0.0 };
    }
    if t > 12.0 * l * l {
        return 1.0;
    }
    let mut s = 0.0;
    for k in -40i32..=40 {
        let sh = 2.0 * k as f64 * l;
        s += occupation(t, y - sh) - occupation(t, y + 2.0 * a + sh);
    }
    (atom + s / (2.0 * GAP)) / pside
}

pub fn ks_ok(stat: f64, tol: f64) -> bool {
    stat <= tol
}
