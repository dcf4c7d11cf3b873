//! Closed-form self-consistency checks of the hitting and last-passage densities.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::{run, samples_csv, ConfigInput, ExperimentConfig, ExperimentId, Profile};
use crate::geometry::{distortion_report, fixture_loop, fixtures, measure_loop, parse_fixtures, GeometryContext};
use crate::interfaces::{iterated_loops, BoundarySelector, FineGrid, Scene, DEFAULT_ITERATION_CAP};
use crate::lattice::{build_domain, sample_dgff, Shape};
use crate::laws::*;
use crate::reference::{draw_many, oracle_many, BarrierSpec, BridgeSampler, ClusterSampler, FpsSampler, FunctionalSample, OracleConfig, TvsSampler, PI_UNITS};
use crate::rng::substream;
use crate::stats::{ks_two_sample, ComparisonReport};
use crate::quad::{integrate, integrate_convolution, integrate_power_tail, integrate_to_inf, QuadControl};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Largest observed deviation.
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &str, deviation: f64, tolerance: f64) -> Check {
    Check { name: name.to_string(), deviation, tolerance, pass: deviation.is_finite() && deviation <= tolerance }
}

fn ctl() -> QuadControl {
    QuadControl { abs_tol: 1e-14, rel_tol: 1e-11, max_panels: 8000 }
}

fn loose() -> QuadControl {
    QuadControl { abs_tol: 1e-12, rel_tol: 1e-9, max_panels: 4000 }
}

fn sc() -> SeriesControl {
    SeriesControl::default()
}

/// Maximum over `items` of `f(item)`, propagating the first error.
fn worst<T>(items: impl IntoIterator<Item = T>, mut f: impl FnMut(T) -> Result<f64>) -> Result<f64> {
    let mut m: f64 = 0.0;
    for it in items {
        m = m.max(f(it)?);
    }
    Ok(m)
}

fn marginal_over_t1(kind: JointKind, t2: f64) -> Result<f64> {
    let mut err = None;
    let v = integrate_convolution(
        |t1| {
            if t1 <= 0.0 || t1 >= t2 {
                return 0.0;
            }
            joint_density(kind, t1, t2, &sc()).unwrap_or_else(|e| {
                err = Some(e);
                0.0
            })
        },
        t2,
        ctl(),
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Runs every normalization, marginalization, flux, dual-series and Laplace identity.
pub fn density_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let pairs = [(1.0, 1.0), (GAP, GAP), (GAP, 3.0 * GAP), (0.3, 2.0)];
    let dev = worst(pairs, |(a, b)| {
        let w: f64 = a + b;
        let mut m: f64 = 0.0;
        for tr in [0.02, 0.1, 0.35, 0.8, 2.0] {
            for i in 0..=8 {
                for j in 0..=8 {
                    let (x, y) = (-a + w * i as f64 / 8.0, -a + w * j as f64 / 8.0);
                    let r = interval_kernel_reflection(a, b, tr * w * w, x, y, &sc())?;
                    let s = interval_kernel_spectral(a, b, tr * w * w, x, y, &sc())?;
                    m = m.max((r - s).abs());
                }
            }
        }
        Ok(m)
    })?;
    out.push(check("interval kernel: reflection vs spectral series", dev, 1e-10));

    let dev = worst([0.5, GAP, std::f64::consts::PI], |x| {
        worst([0.03, 0.1, 0.35, 1.0, 3.0], |tr| {
            let t = tr * 4.0 * x * x;
            let r = beta_reflection(x, t, &sc())?;
            Ok((r - beta_spectral(x, t, &sc())?).abs() / (1.0 + r.abs()))
        })
    })?;
    out.push(check("Bessel-3 hitting density: reflection vs spectral series", dev, 1e-10));

    let m = integrate_to_inf(|t| q_a(1.3, t), 0.0, ctl())?;
    out.push(check("q_a normalization", (m - 1.0).abs(), 1e-6));
    let part = integrate(|t| q_a(1.3, t), 0.0, 5.0, ctl())?;
    out.push(check("q_a closed-form CDF", (part - q_a_cdf(1.3, 5.0)).abs(), 1e-10));

    let dev = worst([(1.0, 1.0), (1.0, 3.0), (GAP, 3.0 * GAP)], |(a, b)| {
        let lo = integrate_to_inf(|t| q_ab(a, b, Side::Lower, t, &sc()).unwrap_or(f64::NAN), 0.0, ctl())?;
        let up = integrate_to_inf(|t| q_ab(a, b, Side::Upper, t, &sc()).unwrap_or(f64::NAN), 0.0, ctl())?;
        Ok((lo - b / (a + b)).abs().max((up - a / (a + b)).abs()))
    })?;
    out.push(check("q_ab side masses b/(a+b), a/(a+b)", dev, 1e-6));

    let m = integrate_to_inf(|t| beta(GAP, t, &sc()).unwrap_or(f64::NAN), 0.0, ctl())?;
    out.push(check("Bessel-3 hitting density normalization", (m - 1.0).abs(), 1e-8));

    let m = integrate_power_tail(|t| q_check0(t, &sc()).unwrap_or(f64::NAN), 0.0, 20.0, loose())?;
    out.push(check("exit-then-return density normalization", (m - 1.0).abs(), 1e-6));

    let dev = worst([(1.0, 1.0), (GAP, 3.0 * GAP), (0.4, 1.1)], |(a, b)| {
        worst([0.2, 0.7, 1.5, 4.0], |t| {
            let h = 1e-4;
            let d = (interval_survival(a, b, t + h, &sc())? - interval_survival(a, b, t - h, &sc())?) / (2.0 * h);
            let flux = q_ab(a, b, Side::Lower, t, &sc())? + q_ab(a, b, Side::Upper, t, &sc())?;
            Ok((flux + d).abs())
        })
    })?;
    out.push(check("flux identity -dS/dt = exit density", dev, 1e-6));

    let (a, b) = (1.0, 1.5);
    let dev = worst([(0.3, 0.5, 0.0, 0.2), (1.0, 2.0, -0.5, 1.0), (0.05, 3.0, 0.9, -0.9)], |(s, t, x, y)| {
        let k = Kernel::Interval { a, b };
        let lhs = integrate(|z| heat_kernel(k, s, x, z, &sc()).unwrap_or(f64::NAN) * heat_kernel(k, t, z, y, &sc()).unwrap_or(f64::NAN), -a, b, ctl())?;
        Ok((lhs - heat_kernel(k, s + t, x, y, &sc())?).abs())
    })?;
    out.push(check("Chapman-Kolmogorov for the interval kernel", dev, 1e-7));

    let mut dev: f64 = 0.0;
    for (a, b) in [(GAP, GAP), (GAP, 3.0 * GAP), (1.5 * GAP, 2.5 * GAP)] {
        for side in [Side::Lower, Side::Upper] {
            for t2 in [0.3, 1.0, 2.5, 6.0] {
                dev = dev.max((marginal_over_t1(JointKind::Tvs { a, b, side }, t2)? - q_ab(a, b, side, t2, &sc())?).abs());
            }
        }
    }
    out.push(check("two-sided joint density marginalizes to the exit density", dev, 1e-8));

    let mut dev: f64 = 0.0;
    for a in [GAP, 2.0 * GAP] {
        for t2 in [0.3, 1.0, 4.0, 20.0] {
            dev = dev.max((marginal_over_t1(JointKind::Fps { a }, t2)? - q_a(a, t2)).abs());
        }
    }
    out.push(check("one-sided joint density marginalizes to the hitting density", dev, 1e-8));

    let inner = integrate_to_inf(|s| beta(GAP, s, &sc()).unwrap_or(f64::NAN), 0.0, ctl())?;
    let dev = worst([GAP, 2.0 * GAP, 3.0], |a| {
        let outer = integrate_to_inf(|t1| if t1 <= 0.0 { 0.0 } else { fps_tau_density(a, t1, &sc()).unwrap_or(f64::NAN) }, 0.0, ctl())?;
        Ok((inner * outer - 1.0).abs())
    })?;
    out.push(check("one-sided joint density total mass", dev, 1e-6));

    let dev = worst([(1.0, 0.0, 1.0), (GAP, GAP, 0.3), (0.5, 2.0, 4.0)], |(a, v, l)| {
        let m = integrate(|t| bridge_hit_density(a, v, l, t), 0.0, l, ctl())?;
        Ok((m - (-2.0 * a * (a + v) / l).exp()).abs())
    })?;
    out.push(check("bridge hitting mass vs reflection principle", dev, 1e-8));

    let dev = worst([(GAP, GAP, 0.0, 0.26), (GAP, GAP, GAP, 0.26), (1.0, 2.0, 0.5, 3.0)], |(a, b, v, l)| {
        let mut m = 0.0;
        for s in [Side::Lower, Side::Upper] {
            m += integrate(|t| bridge_exit_density(a, b, s, v, l, t, &sc()).unwrap_or(f64::NAN), 0.0, l, ctl())?;
        }
        let oracle = if v >= b || v <= -a { 1.0 } else { 1.0 - bridge_stay_probability(0.0, v, -a, b, l) };
        Ok((m - oracle).abs())
    })?;
    out.push(check("bridge exit mass vs stay probability", dev, 1e-7));

    let mut dev: f64 = 0.0;
    for side in [Side::Lower, Side::Upper] {
        for t2 in [0.5, 2.0, 4.5] {
            let (a, b, v, l) = (GAP, 3.0 * GAP, 0.5, 5.0);
            let m = marginal_over_t1(JointKind::TvsBridge { a, b, side, v, l }, t2)?;
            dev = dev.max((m - bridge_exit_density(a, b, side, v, l, t2, &sc())?).abs());
        }
    }
    out.push(check("bridged joint density marginalizes", dev, 1e-8));

    let dev = worst([0.25, 0.5, 1.0, 2.0], |nu| {
        let num = integrate_to_inf(|t| (-nu * t).exp() * beta(GAP, t, &sc()).unwrap_or(f64::NAN), 0.0, ctl())?;
        Ok((num - bessel3_laplace(GAP, nu)?).abs())
    })?;
    out.push(check("Bessel-3 Laplace transform identity", dev, 1e-8));

    Ok(out)
}

/// KS gate between exact samplers and the walk oracle.
pub const CROSSVAL_KS: f64 = 0.02;
/// FPS walks are censored here; both samples are compared with the same censoring.
pub const CROSSVAL_FPS_HORIZON: f64 = 1e3;

fn ks_pair(name: &str, x: &[f64], y: &[f64]) -> Result<ComparisonReport> {
    let ks = ks_two_sample(x, y)?;
    let mut rep = ComparisonReport::new(name).with_ks(&ks);
    rep.values.insert("gate".into(), CROSSVAL_KS);
    rep.pass.insert("ks".into(), ks.stat <= CROSSVAL_KS);
    Ok(rep)
}

fn side_freq(name: &str, xs: &[FunctionalSample], p_lower: f64) -> ComparisonReport {
    let n = xs.len();
    let k = xs.iter().filter(|x| x.side == Some(Side::Lower)).count();
    let f = k as f64 / n as f64;
    let se = (p_lower * (1.0 - p_lower) / n as f64).sqrt();
    let mut rep = ComparisonReport::new(name);
    rep.sample_sizes = vec![n];
    rep.values.insert("observed".into(), f);
    rep.values.insert("predicted".into(), p_lower);
    rep.values.insert("se".into(), se);
    rep.pass.insert("within_3se".into(), (f - p_lower).abs() <= 3.0 * se);
    rep
}

fn column(xs: &[FunctionalSample], f: impl Fn(&FunctionalSample) -> f64) -> Vec<f64> {
    xs.iter().map(f).collect()
}

/// Exact samplers against the discretized walk, `n` paths each.
pub fn reference_crossval(n: usize, seed: u64) -> Result<Vec<ComparisonReport>> {
    let mut out = Vec::new();
    let exact_seed = substream(seed, 1);
    let walk_seed = substream(seed, 2);

    let s = FpsSampler::new(GAP)?;
    let e = draw_many(n, exact_seed, |r| s.draw(r))?;
    let cfg = OracleConfig { horizon: CROSSVAL_FPS_HORIZON, ..OracleConfig::new(BarrierSpec::OneSided { a: GAP }) };
    let o = oracle_many(&cfg, n, walk_seed)?;
    let cens = |x: &FunctionalSample, v: f64| if x.truncated || x.t > CROSSVAL_FPS_HORIZON { f64::INFINITY } else { v };
    out.push(ks_pair("FPS tau (censored at horizon)", &column(&e, |x| cens(x, x.tau)), &column(&o, |x| cens(x, x.tau)))?);
    out.push(ks_pair("FPS T (censored at horizon)", &column(&e, |x| cens(x, x.t)), &column(&o, |x| cens(x, x.t)))?);

    for (a, b) in [(GAP, GAP), (GAP, 3.0 * GAP)] {
        let s = TvsSampler::new(a, b)?;
        let e = draw_many(n, substream(exact_seed, b.to_bits()), |r| s.draw(r))?;
        let o = oracle_many(&OracleConfig::new(BarrierSpec::TwoSided { a, b }), n, substream(walk_seed, b.to_bits()))?;
        let tag = format!("TVS(a={a:.4}, b={b:.4})");
        out.push(ks_pair(&format!("{tag} tau"), &column(&e, |x| x.tau), &column(&o, |x| x.tau))?);
        out.push(ks_pair(&format!("{tag} T"), &column(&e, |x| x.t), &column(&o, |x| x.t))?);
        out.push(side_freq(&format!("{tag} exact lower-exit frequency"), &e, b / (a + b)));
        out.push(side_freq(&format!("{tag} walk lower-exit frequency"), &o, b / (a + b)));
    }

    let (v, l) = (0.5, 1.0);
    let s = BridgeSampler::new(GAP, Some(GAP), v, l)?;
    let e = draw_many(n, substream(exact_seed, 3), |r| s.draw(r))?;
    let cfg = OracleConfig { bridge: Some((v, l)), ..OracleConfig::new(BarrierSpec::TwoSided { a: GAP, b: GAP }) };
    let o = oracle_many(&cfg, n, substream(walk_seed, 3))?;
    out.push(ks_pair("bridge tau", &column(&e, |x| x.tau), &column(&o, |x| x.tau))?);
    out.push(ks_pair("bridge T", &column(&e, |x| x.t), &column(&o, |x| x.t))?);
    out.push(ks_pair("bridge exit value", &column(&e, |x| x.x.unwrap_or(f64::NAN)), &column(&o, |x| x.x.unwrap_or(f64::NAN)))?);

    let s = ClusterSampler::new()?;
    let e = draw_many(n, substream(exact_seed, 4), |r| s.draw(r))?;
    let o = oracle_many(&OracleConfig::new(BarrierSpec::Cluster), n, substream(walk_seed, 4))?;
    // walks returning to 0 after the horizon are truncated; censor the exact draws the same way
    let horizon = OracleConfig::new(BarrierSpec::Cluster).horizon * PI_UNITS;
    let un = |x: &FunctionalSample, v: Option<f64>| {
        if x.truncated || x.t_bar.is_some_and(|t| t > horizon) {
            f64::INFINITY
        } else {
            v.unwrap_or(f64::NAN)
        }
    };
    for (name, f) in [
        ("cluster tau", (|x: &FunctionalSample| Some(x.tau)) as fn(&FunctionalSample) -> Option<f64>),
        ("cluster T", |x| Some(x.t)),
        ("cluster tau_bar", |x| x.tau_bar),
        ("cluster T_bar", |x| x.t_bar),
    ] {
        out.push(ks_pair(name, &column(&e, |x| un(x, f(x))), &column(&o, |x| un(x, f(x))))?);
    }
    Ok(out)
}

/// Paths per functional in the reduced cross-validation run by `selftest`.
pub const SELFTEST_CROSSVAL_N: usize = 20_000;

fn pass_fail(name: &str, pass: bool) -> Check {
    Check { name: name.to_string(), deviation: if pass { 0.0 } else { 1.0 }, tolerance: 0.0, pass }
}

/// The reduced property suite behind `gffloops selftest`. A fixture file that fails to
/// parse is an error naming the fixture; everything else is reported as checks.
pub fn run_selftest(fixture_text: Option<&str>) -> Result<Vec<Check>> {
    let fx = match fixture_text {
        Some(t) => parse_fixtures(t)?,
        None => fixtures()?,
    };
    let mut out = density_checks()?;

    for rep in reference_crossval(SELFTEST_CROSSVAL_N, 11)? {
        let (dev, tol) = match (rep.ks_stat, rep.values.get("se")) {
            (Some(ks), _) => (ks, CROSSVAL_KS),
            (None, Some(se)) => ((rep.values["observed"] - rep.values["predicted"]).abs(), 3.0 * se),
            _ => (f64::NAN, 0.0),
        };
        out.push(Check { name: format!("walk vs exact: {}", rep.name), deviation: dev, tolerance: tol, pass: rep.all_pass() });
    }

    let dom = build_domain(Shape::Disk { radius: 1.0 }, 128)?;
    let grid = FineGrid::new(&dom);
    let ctx = GeometryContext::new(&dom, &grid)?;
    for f in &fx.fixture {
        let g = measure_loop(&ctx, &fixture_loop(&grid, f), None)?;
        let cr = g.neg_log_cr.unwrap_or(f64::NAN);
        out.push(check(&format!("fixture {}: -log CR at mesh 128", f.name), ((cr - f.neg_log_cr) / f.neg_log_cr).abs(), 0.05));
        out.push(pass_fail(&format!("fixture {}: distortion bounds", f.name), distortion_report(&g).map(|d| d.all()).unwrap_or(false)));
    }

    let field = sample_dgff(&dom, 0.0, 5)?;
    let scene = Scene::new(&dom, &grid, &field);
    let it = iterated_loops(&scene, Some((GAP, 3.0 * GAP)), BoundarySelector::Outer, DEFAULT_ITERATION_CAP)?;
    let steps_ok = it.sequence.labels.windows(2).all(|w| ((w[1] - w[0]).abs() - GAP).abs() < 1e-9);
    out.push(pass_fail("iterated labels move by 2λ", steps_ok));

    let cfg = ExperimentConfig::resolve(ConfigInput {
        experiment: Some(ExperimentId::ThmMain),
        profile: Some(Profile::Quick),
        mesh: Some(48),
        samples: Some(6),
        reference_samples: Some(2000),
        seed: Some(3),
        ..Default::default()
    })?;
    let (x, y) = (run(&cfg)?, run(&cfg)?);
    let same = samples_csv(&x.rows)? == samples_csv(&y.rows)? && serde_json::to_string(&x.summary).ok() == serde_json::to_string(&y.summary).ok();
    out.push(pass_fail("seeded replay reproduces samples and summary", same));
    Ok(out)
}
