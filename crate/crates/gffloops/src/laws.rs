//! Explicit Brownian densities: heat kernels with absorption, hitting-time
//! densities, last-passage joint densities and the Bessel-3 hitting transform.
//!
//! Time is measured in extremal-distance units and space in field units, so
//! the height gap between nested interfaces is `2λ` with `λ = √(π/8)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_convolution, integrate_log_split, QuadControl};

/// `λ = √(π/8)`.
pub const LAMBDA: f64 = 0.626_657_068_657_750_1;

/// Height gap `2λ`.
pub const GAP: f64 = 2.0 * LAMBDA;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesControl {
    pub abs_tol: f64,
    pub max_terms: usize,
    /// Reflection series is used for `t < crossover_ratio · width²`.
    pub crossover_ratio: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl { abs_tol: 1e-16, max_terms: 64, crossover_ratio: 0.35 }
    }
}

impl SeriesControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || self.max_terms < 8 || !(self.crossover_ratio > 0.0) {
            return Err(Error::Precondition(format!("invalid series control {self:?}")));
        }
        Ok(())
    }
}

/// Which absorbing barrier was hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Side {
    /// The lower barrier `-a`.
    Lower,
    /// The upper barrier `b`.
    Upper,
}

impl Side {
    pub fn level(self, a: f64, b: f64) -> f64 {
        match self {
            Side::Lower => -a,
            Side::Upper => b,
        }
    }

    /// Level at distance `2λ` from the barrier, on the inside.
    pub fn recording_level(self, a: f64, b: f64) -> f64 {
        match self {
            Side::Lower => -a + GAP,
            Side::Upper => b - GAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    Free,
    HalfLine { a: f64 },
    Interval { a: f64, b: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExitKind {
    /// Hitting time of `-a` from 0.
    Qa { a: f64 },
    /// Exit time of `(-a, b)` through the given side (sub-density).
    Qab { a: f64, b: f64, side: Side },
    /// Bessel-3 hitting time of `x` from 0.
    Beta { x: f64 },
    /// Exit of `(-2λ, 2λ)` followed by the return to 0.
    QCheck0,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JointKind {
    Fps { a: f64 },
    Tvs { a: f64, b: f64, side: Side },
    FpsBridge { a: f64, v: f64, l: f64 },
    TvsBridge { a: f64, b: f64, side: Side, v: f64, l: f64 },
    /// One-dimensional; only `t2` is used.
    ClusterBridgeT { v: f64, l: f64 },
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Precondition(format!("time must be positive and finite, got {t}")));
    }
    Ok(())
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Precondition(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

#[inline]
fn gauss(t: f64, z: f64) -> f64 {
    (-z * z / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// Free Gaussian kernel `p(t, x, y)`.
pub fn free_kernel(t: f64, x: f64, y: f64) -> f64 {
    gauss(t, y - x)
}

pub fn heat_kernel(kind: Kernel, t: f64, x: f64, y: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_time(t)?;
    match kind {
        Kernel::Free => Ok(gauss(t, y - x)),
        Kernel::HalfLine { a } => {
            check_pos("a", a)?;
            if x < -a || y < -a {
                return Err(Error::Precondition(format!("points ({x}, {y}) below barrier -{a}")));
            }
            Ok((gauss(t, y - x) - gauss(t, y + x + 2.0 * a)).max(0.0))
        }
        Kernel::Interval { a, b } => {
            let w = a + b;
            if t < ctrl.crossover_ratio * w * w {
                interval_kernel_reflection(a, b, t, x, y, ctrl)
            } else {
                interval_kernel_spectral(a, b, t, x, y, ctrl)
            }
        }
    }
}

fn check_interval(a: f64, b: f64, x: f64, y: f64) -> Result<()> {
    check_pos("a", a)?;
    check_pos("b", b)?;
    if x < -a || x > b || y < -a || y > b {
        return Err(Error::Precondition(format!("points ({x}, {y}) outside [-{a}, {b}]")));
    }
    Ok(())
}

/// Method of images for the kernel killed at `-a` and `b`.
pub fn interval_kernel_reflection(a: f64, b: f64, t: f64, x: f64, y: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_time(t)?;
    check_interval(a, b, x, y)?;
    let w = a + b;
    let term = |k: f64| gauss(t, y - x + 2.0 * k * w) - gauss(t, y + x + 2.0 * a + 2.0 * k * w);
    let mut s = term(0.0);
    for n in 1..=ctrl.max_terms {
        let k = n as f64;
        let tp = term(k);
        let tm = term(-k);
        s += tp + tm;
        // Image distances grow linearly; once both are past the peak the terms only shrink.
        let past = (2.0 * k * w - (x.abs() + y.abs() + 2.0 * a)) > 0.0;
        if past && tp.abs().max(tm.abs()) < ctrl.abs_tol {
            return Ok(s.max(0.0));
        }
    }
    Err(Error::Truncation { terms: ctrl.max_terms, partial: s, last: term(ctrl.max_terms as f64) })
}

/// Eigenfunction expansion of the kernel killed at `-a` and `b`.
pub fn interval_kernel_spectral(a: f64, b: f64, t: f64, x: f64, y: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_time(t)?;
    check_interval(a, b, x, y)?;
    let w = a + b;
    let c = (b - a) / 2.0;
    let (xi, eta) = (x - c, y - c);
    let mut s = 0.0;
    let pref = 2.0 / w;
    for j in 0..ctrl.max_terms {
        let k_odd = (2 * j + 1) as f64;
        let e_odd = (-(k_odd * k_odd) * PI * PI * t / (2.0 * w * w)).exp();
        s += (k_odd * PI * xi / w).cos() * (k_odd * PI * eta / w).cos() * e_odd;
        let k_even = (2 * j + 2) as f64;
        let e_even = (-(k_even * k_even) * PI * PI * t / (2.0 * w * w)).exp();
        s += (k_even * PI * xi / w).sin() * (k_even * PI * eta / w).sin() * e_even;
        if pref * e_odd < ctrl.abs_tol {
            return Ok((pref * s).max(0.0));
        }
    }
    Err(Error::Truncation {
        terms: ctrl.max_terms,
        partial: pref * s,
        last: pref * (-((2 * ctrl.max_terms + 1) as f64).powi(2) * PI * PI * t / (2.0 * w * w)).exp(),
    })
}

/// `q_{-a}(t) = a/√(2πt³) e^{-a²/2t}`.
pub fn q_a(a: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    a / (2.0 * PI * t * t * t).sqrt() * (-a * a / (2.0 * t)).exp()
}

/// CDF of the hitting time of `-a`: `erfc(a/√(2t))`.
pub fn q_a_cdf(a: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    statrs::function::erf::erfc(a / (2.0 * t).sqrt())
}

fn qab_reflection(dist: f64, w: f64, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    let term = |k: f64| {
        let z = dist + 2.0 * k * w;
        z / (2.0 * PI * t * t * t).sqrt() * (-z * z / (2.0 * t)).exp()
    };
    let mut s = term(0.0);
    for n in 1..=ctrl.max_terms {
        let k = n as f64;
        let (tp, tm) = (term(k), term(-k));
        s += tp + tm;
        if 2.0 * k * w > dist + (3.0 * t).sqrt() && tp.abs().max(tm.abs()) < ctrl.abs_tol {
            return Ok(s.max(0.0));
        }
    }
    Err(Error::Truncation { terms: ctrl.max_terms, partial: s, last: term(ctrl.max_terms as f64) })
}

fn qab_spectral(a: f64, w: f64, side: Side, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    let mut s = 0.0;
    for k in 1..=ctrl.max_terms {
        let kf = k as f64;
        let amp = kf * PI / (w * w) * (-(kf * kf) * PI * PI * t / (2.0 * w * w)).exp();
        let sign = match side {
            Side::Lower => 1.0,
            Side::Upper => {
                if k % 2 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        s += sign * amp * (kf * PI * a / w).sin();
        if k > 2 && amp < ctrl.abs_tol {
            return Ok(s.max(0.0));
        }
    }
    Err(Error::Truncation { terms: ctrl.max_terms, partial: s, last: 0.0 })
}

/// Density of the exit time of `(-a, b)` through `side` (mass `b/(a+b)` for the lower side).
pub fn q_ab(a: f64, b: f64, side: Side, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_pos("a", a)?;
    check_pos("b", b)?;
    check_time(t)?;
    let w = a + b;
    if t < ctrl.crossover_ratio * w * w {
        let dist = match side {
            Side::Lower => a,
            Side::Upper => b,
        };
        qab_reflection(dist, w, t, ctrl)
    } else {
        qab_spectral(a, w, side, t, ctrl)
    }
}

/// Bessel-3 hitting density of level `x`, image-sum form.
pub fn beta_reflection(x: f64, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_pos("x", x)?;
    check_time(t)?;
    let pref = 2f64.sqrt() * x / (PI * t.powi(5)).sqrt();
    let mut s = 0.0;
    for k in 0..ctrl.max_terms {
        let m = (2 * k + 1) as f64;
        let mx2 = m * m * x * x;
        let term = (mx2 - t) * (-mx2 / (2.0 * t)).exp();
        s += term;
        if mx2 > 3.0 * t && (pref * term).abs() < ctrl.abs_tol {
            return Ok((pref * s).max(0.0));
        }
    }
    Err(Error::Truncation { terms: ctrl.max_terms, partial: pref * s, last: 0.0 })
}

/// Bessel-3 hitting density of level `x`, eigenfunction form.
pub fn beta_spectral(x: f64, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_pos("x", x)?;
    check_time(t)?;
    let mut s = 0.0;
    for n in 1..=ctrl.max_terms {
        let nf = n as f64;
        let amp = nf * nf * PI * PI / (x * x) * (-(nf * nf) * PI * PI * t / (2.0 * x * x)).exp();
        s += if n % 2 == 1 { amp } else { -amp };
        if n > 1 && amp < ctrl.abs_tol {
            return Ok(s.max(0.0));
        }
    }
    Err(Error::Truncation { terms: ctrl.max_terms, partial: s, last: 0.0 })
}

pub fn beta(x: f64, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    if t < ctrl.crossover_ratio * 4.0 * x * x {
        beta_reflection(x, t, ctrl)
    } else {
        beta_spectral(x, t, ctrl)
    }
}

/// `q̌₀(t) = ∫₀ᵗ (q_{-2λ,2λ}(s,2λ) + q_{-2λ,2λ}(s,-2λ)) q_{-2λ}(t-s) ds`.
pub fn q_check0(t: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_time(t)?;
    let mut err = None;
    let f = |s: f64| {
        if s <= 0.0 || s >= t {
            return 0.0;
        }
        let exit = match (q_ab(GAP, GAP, Side::Lower, s, ctrl), q_ab(GAP, GAP, Side::Upper, s, ctrl)) {
            (Ok(l), Ok(u)) => l + u,
            (Err(e), _) | (_, Err(e)) => {
                err = Some(e);
                0.0
            }
        };
        exit * q_a(GAP, t - s)
    };
    let ctl = QuadControl { abs_tol: 1e-16, rel_tol: 1e-10, max_panels: 4000 };
    let v = integrate_convolution(f, t, ctl)?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(v.max(0.0))
}

pub fn exit_density(kind: ExitKind, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    check_time(t)?;
    match kind {
        ExitKind::Qa { a } => {
            check_pos("a", a)?;
            Ok(q_a(a, t))
        }
        ExitKind::Qab { a, b, side } => q_ab(a, b, side, t, ctrl),
        ExitKind::Beta { x } => beta(x, t, ctrl),
        ExitKind::QCheck0 => q_check0(t, ctrl),
    }
}

/// Total mass of the exit density for `kind`.
pub fn exit_mass(kind: ExitKind) -> f64 {
    match kind {
        ExitKind::Qab { a, b, side } => match side {
            Side::Lower => b / (a + b),
            Side::Upper => a / (a + b),
        },
        _ => 1.0,
    }
}

/// `p(L - t, c, v) / p(L, 0, v)`, the bridge reweighting for an event at time `t` and level `c`.
pub fn bridge_weight(c: f64, v: f64, l: f64, t: f64) -> f64 {
    if t >= l {
        return 0.0;
    }
    free_kernel(l - t, c, v) / free_kernel(l, 0.0, v)
}

/// Density of the last visit to `y` before the first hit of `-a` (sub-density, via the half-line kernel).
pub fn fps_tau_density(a: f64, t1: f64, ctrl: &SeriesControl) -> Result<f64> {
    heat_kernel(Kernel::HalfLine { a }, t1, 0.0, -a + GAP, ctrl).map(|p| p / (2.0 * GAP))
}

/// Side-joint density of the last visit to the recording level before the exit of `(-a, b)`.
pub fn tvs_tau_density(a: f64, b: f64, side: Side, t1: f64, ctrl: &SeriesControl) -> Result<f64> {
    let y = side.recording_level(a, b);
    heat_kernel(Kernel::Interval { a, b }, t1, 0.0, y, ctrl).map(|p| p / (2.0 * GAP))
}

pub fn joint_density(kind: JointKind, t1: f64, t2: f64, ctrl: &SeriesControl) -> Result<f64> {
    if let JointKind::ClusterBridgeT { v, l } = kind {
        check_time(t2)?;
        check_pos("L", l)?;
        if t2 >= l {
            return Err(Error::Precondition(format!("t = {t2} must be below L = {l}")));
        }
        return Ok(q_check0(t2, ctrl)? * bridge_weight(0.0, v, l, t2));
    }
    if !(t1 > 0.0 && t1 < t2) || !t2.is_finite() {
        return Err(Error::Precondition(format!("need 0 < t1 < t2, got t1={t1}, t2={t2}")));
    }
    let gap = beta(GAP, t2 - t1, ctrl)?;
    match kind {
        JointKind::Fps { a } => Ok(fps_tau_density(a, t1, ctrl)? * gap),
        JointKind::Tvs { a, b, side } => Ok(tvs_tau_density(a, b, side, t1, ctrl)? * gap),
        JointKind::FpsBridge { a, v, l } => {
            check_pos("L", l)?;
            if t2 >= l {
                return Err(Error::Precondition(format!("t2 = {t2} must be below L = {l}")));
            }
            Ok(fps_tau_density(a, t1, ctrl)? * gap * bridge_weight(-a, v, l, t2))
        }
        JointKind::TvsBridge { a, b, side, v, l } => {
            check_pos("L", l)?;
            if t2 >= l {
                return Err(Error::Precondition(format!("t2 = {t2} must be below L = {l}")));
            }
            let c = side.level(a, b);
            Ok(tvs_tau_density(a, b, side, t1, ctrl)? * gap * bridge_weight(c, v, l, t2))
        }
        JointKind::ClusterBridgeT { .. } => unreachable!(),
    }
}

/// Hitting density of `(T̂, side)` for the bridge of length `l` ending at `v`.
pub fn bridge_exit_density(a: f64, b: f64, side: Side, v: f64, l: f64, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    if t >= l {
        return Ok(0.0);
    }
    Ok(q_ab(a, b, side, t, ctrl)? * bridge_weight(side.level(a, b), v, l, t))
}

/// Hitting density of `T̂_{-a}` for the bridge of length `l` ending at `v`.
pub fn bridge_hit_density(a: f64, v: f64, l: f64, t: f64) -> f64 {
    if t >= l {
        return 0.0;
    }
    q_a(a, t) * bridge_weight(-a, v, l, t)
}

/// `E[e^{-ν T_x}]` for the Bessel-3 hitting time of `x`, continued to `ν < 0`.
pub fn bessel3_laplace(x: f64, nu: f64) -> Result<f64> {
    check_pos("x", x)?;
    if !nu.is_finite() {
        return Err(Error::Precondition(format!("nu must be finite, got {nu}")));
    }
    let z = x * (2.0 * nu.abs()).sqrt();
    if z < 1e-4 {
        let z2 = if nu >= 0.0 { z * z } else { -z * z };
        return Ok(1.0 - z2 / 6.0 + 7.0 * z2 * z2 / 360.0);
    }
    if nu > 0.0 {
        Ok(z / z.sinh())
    } else {
        if z >= PI {
            return Err(Error::Pole(format!(
                "nu = {nu} at or beyond -π²/(2x²) = {}",
                -PI * PI / (2.0 * x * x)
            )));
        }
        Ok(z / z.sin())
    }
}

/// Probability that a Brownian bridge from `u` to `w` over time `s` stays strictly inside `(lo, hi)`.
pub fn bridge_stay_probability(u: f64, w: f64, lo: f64, hi: f64, s: f64) -> f64 {
    if !(u > lo && u < hi && w > lo && w < hi) {
        return 0.0;
    }
    let d = hi - lo;
    let g = |z: f64| (-z * z / (2.0 * s)).exp();
    let base = g(w - u);
    let mut acc = 0.0;
    for n in 0..200 {
        let ks: &[f64] = if n == 0 { &[0.0] } else { &[n as f64, -(n as f64)] };
        let mut mx: f64 = 0.0;
        for &k in ks {
            let t1 = g(w - u + 2.0 * k * d);
            let t2 = g(w + u - 2.0 * lo + 2.0 * k * d);
            acc += t1 - t2;
            mx = mx.max(t1).max(t2);
        }
        if n > 0 && mx < 1e-17 * base.max(1e-300) {
            break;
        }
    }
    (acc / base).clamp(0.0, 1.0)
}

/// Integral of the free kernel `∫_{-a}^{b} p_{-a,b}(t,0,y) dy`, survival of the exit time.
pub fn interval_survival(a: f64, b: f64, t: f64, ctrl: &SeriesControl) -> Result<f64> {
    let mut err = None;
    let v = integrate(
        |y| match heat_kernel(Kernel::Interval { a, b }, t, 0.0, y, ctrl) {
            Ok(p) => p,
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        -a,
        b,
        QuadControl { abs_tol: 1e-14, rel_tol: 1e-12, max_panels: 2000 },
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Integral of `f` over `(0, ∞)` for densities with an essential zero at 0 and
/// at most a power-law tail; the tail beyond `t_max` must be supplied by the caller.
pub fn integrate_density<F: FnMut(f64) -> f64>(f: F, t_max: f64) -> Result<f64> {
    integrate_log_split(f, 0.0, t_max, 40, QuadControl { abs_tol: 1e-14, rel_tol: 1e-11, max_panels: 4000 })
}
