//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//! Set `GFFLOOPS_ACCEPT=1,4,10` to run a subset.

use std::time::Instant;

use gffloops::experiment::{run, samples_csv, write_outputs, ConfigInput, ExperimentConfig, ExperimentId, Outcome, Profile};
use gffloops::laws::GAP;
use gffloops::selftest::{reference_crossval, CROSSVAL_KS};
use gffloops::stats::ComparisonReport;

const SEED: u64 = 20240611;
/// Lattice-versus-Brownian KS gate.
const KS_LATTICE: f64 = 0.08;
/// Exact-versus-walk replicas per functional.
const CROSSVAL_N: usize = 100_000;
const REVERSAL_N: usize = 200;

struct Verdict {
    pass: bool,
    detail: String,
}

fn cfg(experiment: ExperimentId, f: impl FnOnce(&mut ConfigInput)) -> ExperimentConfig {
    let mut c = ConfigInput {
        experiment: Some(experiment),
        profile: Some(Profile::Desk),
        seed: Some(SEED),
        out: Some(std::env::temp_dir().join("gffloops-acceptance").join(experiment.name())),
        ..Default::default()
    };
    f(&mut c);
    ExperimentConfig::resolve(c).expect("valid acceptance config")
}

fn report<'a>(o: &'a Outcome, prefix: &str) -> Option<&'a ComparisonReport> {
    o.summary.reports.iter().find(|r| r.name.starts_with(prefix))
}

fn ks(o: &Outcome, prefix: &str) -> f64 {
    report(o, prefix).and_then(|r| r.ks_stat).unwrap_or(f64::NAN)
}

fn ks_ok(x: f64) -> bool {
    x <= KS_LATTICE
}

fn fmt(x: f64) -> String {
    format!("{x:.4}")
}

/// Names of failing gates, for the detail column.
fn failing(o: &Outcome) -> Vec<String> {
    o.summary.gates.iter().filter(|(_, v)| !**v).map(|(k, _)| k.clone()).collect()
}

fn c1() -> Verdict {
    let o = run(&cfg(ExperimentId::DensitiesSelftest, |_| {})).unwrap();
    let worst = o.summary.checks.iter().map(|c| c.deviation / c.tolerance).fold(0.0, f64::max);
    Verdict { pass: o.summary.pass, detail: format!("{} checks, worst deviation/tolerance {worst:.2e}", o.summary.checks.len()) }
}

fn c2() -> Verdict {
    let reps = reference_crossval(CROSSVAL_N, SEED).unwrap();
    let worst = reps.iter().filter_map(|r| r.ks_stat).fold(0.0, f64::max);
    let bad: Vec<&str> = reps.iter().filter(|r| !r.all_pass()).map(|r| r.name.as_str()).collect();
    Verdict {
        pass: bad.is_empty(),
        detail: format!("N={CROSSVAL_N}, worst KS {worst:.4} (gate {CROSSVAL_KS}), failing {bad:?}"),
    }
}

fn c3() -> Verdict {
    let o = run(&cfg(ExperimentId::Exponents, |c| c.samples = Some(1_000_000))).unwrap();
    let rate = |p| report(&o, p).and_then(|r| r.exponent).map(|e| e.0).unwrap_or(f64::NAN);
    let (t, g) = (rate("tail rate of T"), rate("tail rate of T - tau"));
    let pass = (t - 0.125).abs() <= 0.01 && (g - 0.5).abs() <= 0.02;
    Verdict { pass, detail: format!("rate(T) {t:.4} (0.125±0.01), rate(T-τ) {g:.4} (0.5±0.02)") }
}

fn c4() -> Verdict {
    let run_at = |mesh| run(&cfg(ExperimentId::ThmMain, |c| c.mesh = Some(mesh))).unwrap();
    let (lo, hi) = (run_at(128), run_at(256));
    let (e_lo, c_lo) = (ks(&lo, "2π ED("), ks(&lo, "-log CR"));
    let (e_hi, c_hi) = (ks(&hi, "2π ED("), ks(&hi, "-log CR"));
    let frac = |p| report(&hi, p).and_then(|r| r.values.get("fraction").copied()).unwrap_or(f64::NAN);
    let (ineq, dist) = (frac("2π ED <="), frac("distortion"));
    let pass = ks_ok(e_hi) && ks_ok(c_hi) && e_hi < e_lo && c_hi < c_lo && ineq == 1.0 && dist == 1.0 && hi.summary.counts.ok >= 500;
    Verdict {
        pass,
        detail: format!(
            "KS(ED) {} -> {}, KS(CR) {} -> {} (mesh 128 -> 256), inequality {ineq}, distortion {dist}, loops {}/{} attempts",
            fmt(e_lo),
            fmt(e_hi),
            fmt(c_lo),
            fmt(c_hi),
            hi.summary.counts.ok,
            hi.summary.counts.attempted
        ),
    }
}

fn c5() -> Verdict {
    let o = run(&cfg(ExperimentId::LoopSoup, |_| {})).unwrap();
    let names = ["2π ED(∂D, ℓo)", "-log CR(ℓo)", "2π ED(ℓo, ℓi)", "-log CR(ℓi)"];
    let k: Vec<String> = names.iter().map(|n| fmt(ks(&o, n))).collect();
    let sp: Vec<String> = o
        .summary
        .reports
        .iter()
        .filter(|r| r.name.starts_with("spearman"))
        .map(|r| format!("{:.3}/{:.3}", r.values.get("lattice").unwrap_or(&f64::NAN), r.values.get("brownian").unwrap_or(&f64::NAN)))
        .collect();
    Verdict {
        pass: o.summary.pass,
        detail: format!("KS {k:?}, spearman lattice/brownian {sp:?}, clusters {}/{}", o.summary.counts.ok, o.summary.counts.attempted),
    }
}

fn c6() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, b) in [(GAP, GAP), (GAP, 3.0 * GAP)] {
        let o = run(&cfg(ExperimentId::TvsGeneral, |c| {
            c.a = Some(a);
            c.b = Some(b);
        }))
        .unwrap();
        let f = report(&o, "label -a").map(|r| r.all_pass()).unwrap_or(false);
        let (e, t) = (ks(&o, "2π ED("), ks(&o, "-log CR"));
        pass &= ks_ok(e) && ks_ok(t) && f && o.summary.pass;
        parts.push(format!("tvs({:.0}λ,{:.0}λ): KS {} {} labels {}", 2.0 * a / GAP, 2.0 * b / GAP, fmt(e), fmt(t), if f { "ok" } else { "off" }));
    }
    for a in [GAP, 2.0 * GAP] {
        let o = run(&cfg(ExperimentId::Fps, |c| c.a = Some(a))).unwrap();
        let (e, t) = (ks(&o, "2π ED("), ks(&o, "-log CR"));
        pass &= ks_ok(e) && ks_ok(t) && o.summary.pass;
        parts.push(format!("fps({:.0}λ): KS {} {}", 2.0 * a / GAP, fmt(e), fmt(t)));
    }
    Verdict { pass, detail: parts.join("; ") }
}

fn c7() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for v in [0.0, GAP] {
        let o = run(&cfg(ExperimentId::AnnulusMarginal, |c| {
            c.v = Some(v);
            c.inner_radius = Some(0.2);
        }))
        .unwrap();
        let e = ks(&o, "2π ED");
        let cens = report(&o, "boundary-contact").map(|r| (r.all_pass(), r.values.clone())).unwrap();
        pass &= ks_ok(e) && cens.0;
        parts.push(format!(
            "v={v:.4}: KS {} (n={}), censoring {:.4} vs {:.4}",
            fmt(e),
            report(&o, "2π ED").map(|r| r.sample_sizes.first().copied().unwrap_or(0)).unwrap_or(0),
            cens.1.get("observed").unwrap_or(&f64::NAN),
            cens.1.get("predicted").unwrap_or(&f64::NAN)
        ));
    }
    Verdict { pass, detail: parts.join("; ") }
}

fn c8() -> Verdict {
    let frac = |mesh| {
        let o = run(&cfg(ExperimentId::Reversibility, |c| {
            c.mesh = Some(mesh);
            c.samples = Some(REVERSAL_N);
        }))
        .unwrap();
        report(&o, "loop sequences").and_then(|r| r.values.get("fraction").copied()).unwrap_or(f64::NAN)
    };
    let (f256, f512) = (frac(256), frac(512));
    Verdict { pass: f256 >= 0.9 && (f512 > f256 || f512 == 1.0), detail: format!("matched fraction {f256:.3} (mesh 256) -> {f512:.3} (mesh 512), need >= 0.9 and improving") }
}

fn c9() -> Verdict {
    let o = run(&cfg(ExperimentId::RnInvariance, |c| c.v = Some(GAP))).unwrap();
    let parts: Vec<String> = o
        .summary
        .reports
        .iter()
        .map(|r| {
            let v = |k: &str| r.values.get(k).map(|x| x.to_string()).unwrap_or("-".into());
            format!("{}: {} ({}/{} bins, n={:?})", r.name, if r.all_pass() { "ok" } else { "fail" }, v("passing_bins"), v("occupied_bins"), r.sample_sizes)
        })
        .collect();
    Verdict { pass: o.summary.pass, detail: format!("{}; failing gates {:?}", parts.join("; "), failing(&o)) }
}

fn c10() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for e in [ExperimentId::ThmMain, ExperimentId::AnnulusJoint] {
        let c = cfg(e, |c| {
            c.profile = Some(Profile::Quick);
            c.samples = Some(20);
        });
        let read = || {
            let o = run(&c).unwrap();
            write_outputs(&c, &o).unwrap();
            std::fs::read(c.out.join("samples.csv")).unwrap()
        };
        let (x, y) = (read(), read());
        let same = x == y && !x.is_empty();
        pass &= same;
        parts.push(format!("{}: {} bytes {}", e.name(), x.len(), if same { "identical" } else { "differ" }));
    }
    let c = cfg(ExperimentId::Exponents, |c| c.samples = Some(5000));
    let same = samples_csv(&run(&c).unwrap().rows).unwrap() == samples_csv(&run(&c).unwrap().rows).unwrap();
    pass &= same;
    parts.push(format!("exponents: {}", if same { "identical" } else { "differ" }));
    Verdict { pass, detail: parts.join("; ") }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("GFFLOOPS_ACCEPT").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Verdict); 10] = [
        (1, "closed-form self-consistency", c1),
        (2, "exact samplers vs walk oracle", c2),
        (3, "Brownian tail exponents", c3),
        (4, "first CLE4 loop: ED and CR laws", c4),
        (5, "loop-soup cluster quadruple", c5),
        (6, "general two-valued and first passage sets", c6),
        (7, "annulus marginals", c7),
        (8, "reversibility", c8),
        (9, "conditional invariance in v", c9),
        (10, "reproducibility", c10),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n}: {} {name} [{:.0}s] {}", if v.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), v.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
