//! Experiment configuration, replica execution and the files a run leaves behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distortion_report, measure_loop, GeometryContext, LoopGeometry};
use crate::interfaces::{
    check_stop_levels, cluster_loops, fps_component, hausdorff, iterated_loops, sign_clusters_outermost, BoundarySelector, Explorer, FineGrid, Loop,
    Scene, DEFAULT_ITERATION_CAP,
};
use crate::lattice::{build_domain, sample_dgff, GridDomain, Shape};
use crate::laws::GAP;
use crate::reference::{draw_many, BridgeSampler, ClusterSampler, FpsSampler, FunctionalSample, TvsSampler, PI_UNITS};
use crate::rng::{replica_seed, substream};
use crate::selftest::{density_checks, Check};
use crate::stats::{conditional_invariance, ks_two_sample, spearman, tail_exponent, ComparisonReport, CondRow};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "GFFLOOPS_WORKERS";

/// KS gate for lattice-versus-Brownian comparisons.
pub const KS_GATE: f64 = 0.08;
/// Gate on Spearman correlation differences.
pub const SPEARMAN_GATE: f64 = 0.05;
/// Largest tolerated fraction of failed replicas.
pub const FAILURE_BUDGET: f64 = 0.01;
/// At most this many replicas per requested non-degenerate sample are attempted.
pub const ATTEMPT_FACTOR: usize = 4;
/// Reversal match threshold, in lattice cells.
pub const REVERSAL_CELLS: f64 = 2.0;
pub const REVERSAL_FRACTION: f64 = 0.9;
/// Minimum per-bin occupancy and bin count for conditional invariance.
pub const INVARIANCE_MIN_PER_BIN: usize = 50;
pub const INVARIANCE_BINS: usize = 8;
pub const BOOTSTRAP: usize = 1000;
/// Relative distance within which a, b and v are snapped to a multiple of `2λ`.
pub const SNAP_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    DensitiesSelftest,
    ThmMain,
    LoopSoup,
    TvsGeneral,
    Fps,
    AnnulusMarginal,
    AnnulusJoint,
    Reversibility,
    Exponents,
    RnInvariance,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::DensitiesSelftest => "densities-selftest",
            ExperimentId::ThmMain => "thm-main",
            ExperimentId::LoopSoup => "loop-soup",
            ExperimentId::TvsGeneral => "tvs-general",
            ExperimentId::Fps => "fps",
            ExperimentId::AnnulusMarginal => "annulus-marginal",
            ExperimentId::AnnulusJoint => "annulus-joint",
            ExperimentId::Reversibility => "reversibility",
            ExperimentId::Exponents => "exponents",
            ExperimentId::RnInvariance => "rn-invariance",
        }
    }

    fn annulus(self) -> bool {
        matches!(self, ExperimentId::AnnulusMarginal | ExperimentId::AnnulusJoint | ExperimentId::Reversibility | ExperimentId::RnInvariance)
    }

    fn lattice(self) -> bool {
        !matches!(self, ExperimentId::DensitiesSelftest | ExperimentId::Exponents)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Quick,
    #[default]
    Desk,
    Deep,
}

impl Profile {
    /// `(mesh, geometry replicas, reference-law replicas)`.
    pub fn scale(self) -> (usize, usize, usize) {
        match self {
            Profile::Quick => (64, 50, 10_000),
            Profile::Desk => (256, 500, 100_000),
            Profile::Deep => (512, 2000, 1_000_000),
        }
    }
}

/// Partially specified configuration, as read from flags or a TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigInput {
    pub experiment: Option<ExperimentId>,
    pub profile: Option<Profile>,
    pub mesh: Option<usize>,
    pub samples: Option<usize>,
    pub reference_samples: Option<usize>,
    pub seed: Option<u64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub v: Option<f64>,
    pub inner_radius: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ConfigInput {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    /// Fields set in `over` win.
    pub fn merge(self, over: ConfigInput) -> ConfigInput {
        ConfigInput {
            experiment: over.experiment.or(self.experiment),
            profile: over.profile.or(self.profile),
            mesh: over.mesh.or(self.mesh),
            samples: over.samples.or(self.samples),
            reference_samples: over.reference_samples.or(self.reference_samples),
            seed: over.seed.or(self.seed),
            a: over.a.or(self.a),
            b: over.b.or(self.b),
            v: over.v.or(self.v),
            inner_radius: over.inner_radius.or(self.inner_radius),
            out: over.out.or(self.out),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub profile: Profile,
    pub outer_radius: f64,
    pub inner_radius: Option<f64>,
    pub mesh: usize,
    /// Geometry replicas (non-degenerate target), or exact samples for `exponents`.
    pub samples: usize,
    pub reference_samples: usize,
    pub seed: u64,
    pub a: f64,
    pub b: f64,
    pub v: f64,
    pub out: PathBuf,
}

fn on_gap_lattice(x: f64) -> bool {
    let m = x / GAP;
    (m - m.round()).abs() < 1e-6
}

impl ExperimentConfig {
    /// Fills defaults and validates every experiment-specific constraint.
    pub fn resolve(input: ConfigInput) -> Result<Self> {
        let experiment = input.experiment.ok_or_else(|| Error::Config("no experiment given".into()))?;
        let profile = input.profile.unwrap_or_default();
        let (mesh, n_geo, n_ref) = profile.scale();
        let samples = input.samples.unwrap_or(match experiment {
            ExperimentId::Exponents => n_ref.max(1_000_000),
            _ => n_geo,
        });
        let default_v = match experiment {
            ExperimentId::Reversibility => 2.0 * GAP,
            ExperimentId::RnInvariance => GAP,
            _ => 0.0,
        };
        // values typed with four decimals, like 1.2533, mean the nearby multiple of 2λ
        let snap = |x: f64| {
            let m = (x / GAP).round();
            if m != 0.0 && (x - m * GAP).abs() <= SNAP_TOLERANCE * x.abs() {
                m * GAP
            } else {
                x
            }
        };
        let cfg = ExperimentConfig {
            experiment,
            profile,
            outer_radius: 1.0,
            inner_radius: if experiment.annulus() { Some(input.inner_radius.unwrap_or(0.2)) } else { None },
            mesh: input.mesh.unwrap_or(mesh),
            samples,
            reference_samples: input.reference_samples.unwrap_or(n_ref),
            seed: input.seed.unwrap_or(0),
            a: snap(input.a.unwrap_or(GAP)),
            b: snap(input.b.unwrap_or(GAP)),
            v: snap(input.v.unwrap_or(default_v)),
            out: input.out.unwrap_or_else(|| PathBuf::from("out").join(experiment.name())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.experiment;
        if self.samples == 0 || self.reference_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.a > 0.0 && self.b > 0.0) || !self.a.is_finite() || !self.b.is_finite() || !self.v.is_finite() {
            return Err(Error::Config(format!("invalid law parameters a={}, b={}, v={}", self.a, self.b, self.v)));
        }
        if e.lattice() && self.mesh < 32 {
            return Err(Error::Config(format!("mesh {} below 32 cells", self.mesh)));
        }
        if let Some(r) = self.inner_radius {
            if !(r > 0.0 && r < self.outer_radius) || (e.lattice() && r / self.outer_radius < 4.0 / self.mesh as f64) {
                return Err(Error::Config(format!("inner radius {r} invalid at mesh {}", self.mesh)));
            }
        }
        match e {
            ExperimentId::TvsGeneral | ExperimentId::AnnulusMarginal | ExperimentId::AnnulusJoint => {
                check_stop_levels(self.a, self.b).map_err(|err| Error::Config(err.to_string()))?
            }
            ExperimentId::Reversibility => {
                if !on_gap_lattice(self.v) {
                    return Err(Error::Config(format!("reversibility needs v in 2λℤ, got {}", self.v)));
                }
            }
            ExperimentId::RnInvariance => {
                if self.v == 0.0 {
                    return Err(Error::Config("rn-invariance compares v = 0 against a nonzero v".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn shape(&self) -> Shape {
        match self.inner_radius {
            Some(r) => Shape::Annulus { inner: r, outer: self.outer_radius },
            None => Shape::Disk { radius: self.outer_radius },
        }
    }

    /// Extremal distance of the annulus, in the units where the barrier is `2λ`.
    fn annulus_ed(&self) -> Option<f64> {
        self.inner_radius.map(|r| (self.outer_radius / r).ln() / (2.0 * std::f64::consts::PI))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    #[default]
    Ok,
    Degenerate,
    Failed,
}

/// One line of `samples.csv`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub replica: u64,
    pub seed: u64,
    pub role: String,
    pub status: Status,
    pub flags: Vec<String>,
    pub ed_outer: Option<f64>,
    pub ed_inner: Option<f64>,
    pub neg_log_cr: Option<f64>,
    pub r_minus: Option<f64>,
    pub r_plus: Option<f64>,
    pub label: Option<f64>,
    /// Experiment-specific scalar: label purity, or the reversal distance in cells.
    pub metric: Option<f64>,
    pub tau: Option<f64>,
    pub t: Option<f64>,
    pub tau_bar: Option<f64>,
    pub t_bar: Option<f64>,
    pub x: Option<f64>,
    pub censored: Option<bool>,
}

pub const CSV_HEADER: [&str; 18] = [
    "replica", "seed", "role", "status", "flags", "ed_outer", "ed_inner", "neg_log_cr", "r_minus", "r_plus", "label", "metric", "tau", "T",
    "tau_bar", "T_bar", "X", "censored",
];

fn fmt_f(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

impl Row {
    fn new(replica: u64, seed: u64, role: &str) -> Self {
        Row { replica, seed, role: role.to_string(), ..Default::default() }
    }

    fn flag(&mut self, f: &str) {
        self.flags.push(f.to_string());
    }

    fn with_functional(mut self, s: &FunctionalSample) -> Self {
        self.tau = Some(s.tau);
        self.t = Some(s.t);
        self.tau_bar = s.tau_bar;
        self.t_bar = s.t_bar;
        self.x = s.x;
        self.censored = Some(s.censored);
        self
    }

    pub fn fields(&self) -> Vec<String> {
        let status = match self.status {
            Status::Ok => "ok",
            Status::Degenerate => "degenerate",
            Status::Failed => "failed",
        };
        vec![
            self.replica.to_string(),
            self.seed.to_string(),
            self.role.clone(),
            status.to_string(),
            self.flags.join("|"),
            fmt_f(self.ed_outer),
            fmt_f(self.ed_inner),
            fmt_f(self.neg_log_cr),
            fmt_f(self.r_minus),
            fmt_f(self.r_plus),
            fmt_f(self.label),
            fmt_f(self.metric),
            fmt_f(self.tau),
            fmt_f(self.t),
            fmt_f(self.tau_bar),
            fmt_f(self.t_bar),
            fmt_f(self.x),
            self.censored.map(|c| c.to_string()).unwrap_or_default(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replica: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub attempted: usize,
    pub ok: usize,
    pub degenerate: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentId,
    pub version: String,
    pub config: ExperimentConfig,
    pub counts: Counts,
    pub reports: Vec<ComparisonReport>,
    pub checks: Vec<Check>,
    pub failures: Vec<Failure>,
    pub gates: BTreeMap<String, bool>,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub summary: Summary,
}

/// Worker pool sized by [`WORKERS_ENV`] (default: all cores).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(s) = std::env::var(WORKERS_ENV) {
        let n: usize = s.trim().parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}={s} is not a worker count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Lattice objects shared by all replicas of a run.
struct Lattice {
    dom: GridDomain,
    grid: FineGrid,
}

impl Lattice {
    fn new(shape: Shape, mesh: usize) -> Result<Self> {
        let dom = build_domain(shape, mesh)?;
        let grid = FineGrid::new(&dom);
        Ok(Lattice { dom, grid })
    }
}

struct Collected {
    rows: Vec<Row>,
    failures: Vec<Failure>,
    counts: Counts,
}

/// Runs replicas `0, 1, ...` of `master` until `want` of them are non-degenerate or
/// `ATTEMPT_FACTOR · want` have been tried. A replica counts as non-degenerate when its
/// first row is `Ok`.
fn collect<F>(master: u64, want: usize, f: F) -> Collected
where
    F: Fn(u64, u64) -> Result<Vec<Row>> + Sync,
{
    let mut out = Collected { rows: Vec::new(), failures: Vec::new(), counts: Counts::default() };
    let mut next = 0u64;
    let cap = (ATTEMPT_FACTOR * want) as u64;
    while out.counts.ok < want && next < cap {
        let batch = ((want - out.counts.ok) as u64).max(8).min(cap - next);
        let results: Vec<(u64, u64, Result<Vec<Row>>)> = (next..next + batch)
            .into_par_iter()
            .map(|i| {
                let seed = replica_seed(master, i);
                (i, seed, f(i, seed))
            })
            .collect();
        next += batch;
        for (i, seed, r) in results {
            if out.counts.ok >= want {
                break;
            }
            out.counts.attempted += 1;
            match r {
                Ok(rows) => {
                    match rows.first().map(|r| r.status) {
                        Some(Status::Ok) => out.counts.ok += 1,
                        _ => out.counts.degenerate += 1,
                    }
                    out.rows.extend(rows);
                }
                Err(e) => {
                    eprintln!("replica {i} (seed {seed}) failed: {e}");
                    out.counts.failed += 1;
                    out.failures.push(Failure { replica: i, seed, error: e.to_string() });
                    let mut row = Row::new(i, seed, "failed");
                    row.status = Status::Failed;
                    row.flag("error");
                    out.rows.push(row);
                }
            }
        }
    }
    out
}

fn geometry_flags(row: &mut Row, g: &LoopGeometry) {
    let f = &g.flags;
    for (on, name) in [
        (f.no_loop, "no_loop"),
        (f.touches_boundary, "touches_boundary"),
        (f.near_origin, "near_origin"),
        (f.origin_on_cluster, "origin_on_cluster"),
        (f.puncture_mismatch, "puncture_mismatch"),
    ] {
        if on {
            row.flag(name);
        }
    }
}

/// Measures `l` and turns the result into a row; disk loops are also checked against the distortion bounds.
/// A loop that encloses no lattice vertex gives a degenerate row rather than an error.
fn loop_row(ctx: &GeometryContext, l: &Loop, label: Option<f64>, mut row: Row) -> Result<Row> {
    let g = match measure_loop(ctx, l, label) {
        Ok(g) => g,
        Err(Error::Precondition(_)) => {
            row.label = label;
            return Ok(degenerate(row, "unresolved_loop"));
        }
        Err(e) => return Err(e),
    };
    geometry_flags(&mut row, &g);
    row.ed_outer = Some(g.ed_outer);
    row.ed_inner = g.ed_inner;
    row.neg_log_cr = g.neg_log_cr;
    row.r_minus = Some(g.r_minus);
    row.r_plus = Some(g.r_plus);
    row.label = label;
    if g.flags.degenerate() {
        row.status = Status::Degenerate;
    } else if g.neg_log_cr.is_some() {
        let d = distortion_report(&g)?;
        for (ok, name) in [(d.koebe, "koebe_fail"), (d.r_plus_ed, "r_plus_ed_fail"), (d.ratio, "ratio_fail"), (d.ed_cr, "ed_cr_fail")] {
            if !ok {
                row.flag(name);
            }
        }
    }
    Ok(row)
}

fn degenerate(mut row: Row, flag: &str) -> Row {
    row.status = Status::Degenerate;
    row.flag(flag);
    row
}

fn ok_rows<'r>(rows: &'r [Row], role: &'r str) -> impl Iterator<Item = &'r Row> + 'r {
    rows.iter().filter(move |r| r.status == Status::Ok && r.role == role)
}

fn has_flag(r: &Row, f: &str) -> bool {
    r.flags.iter().any(|x| x == f)
}

fn ks_report(name: &str, x: &[f64], y: &[f64], gate: f64) -> ComparisonReport {
    let mut rep = ComparisonReport::new(name);
    match ks_two_sample(x, y) {
        Ok(ks) => {
            rep.pass.insert("ks".into(), ks.stat <= gate);
            rep = rep.with_ks(&ks);
        }
        Err(e) => {
            rep.binning = Some(format!("not evaluated: {e}"));
            rep.pass.insert("ks".into(), false);
        }
    }
    rep.values.insert("ks_gate".into(), gate);
    rep
}

/// Frequency test: `k` of `n` against `p`, within 3 standard errors.
fn frequency_report(name: &str, k: usize, n: usize, p: f64) -> ComparisonReport {
    let mut rep = ComparisonReport::new(name);
    let f = if n > 0 { k as f64 / n as f64 } else { f64::NAN };
    let se = (p * (1.0 - p) / n.max(1) as f64).sqrt();
    rep.sample_sizes = vec![n];
    rep.values.insert("observed".into(), f);
    rep.values.insert("predicted".into(), p);
    rep.values.insert("se".into(), se);
    rep.pass.insert("within_3se".into(), n > 0 && (f - p).abs() <= 3.0 * se);
    rep
}

fn fraction_report(name: &str, ok: usize, n: usize, need: f64) -> ComparisonReport {
    let mut rep = ComparisonReport::new(name);
    let f = if n > 0 { ok as f64 / n as f64 } else { f64::NAN };
    rep.sample_sizes = vec![n];
    rep.values.insert("fraction".into(), f);
    rep.values.insert("required".into(), need);
    rep.pass.insert("fraction".into(), n > 0 && f >= need);
    rep
}

fn reference<F>(n: usize, seed: u64, f: F) -> Result<Vec<FunctionalSample>>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<FunctionalSample> + Sync,
{
    draw_many(n, substream(seed, 0x5eed_4ef), f)
}

fn field_scene_seed(seed: u64) -> u64 {
    substream(seed, 1)
}

/// Runs an experiment in memory.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let pool = worker_pool()?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    let mut gates = BTreeMap::new();
    let collected = match cfg.experiment {
        ExperimentId::DensitiesSelftest => {
            checks = density_checks()?;
            for c in &checks {
                gates.insert(c.name.clone(), c.pass);
            }
            Collected { rows: Vec::new(), failures: Vec::new(), counts: Counts::default() }
        }
        ExperimentId::Exponents => exponents(cfg, &mut reports)?,
        ExperimentId::ThmMain => thm_main(cfg, &mut reports)?,
        ExperimentId::LoopSoup => loop_soup(cfg, &mut reports)?,
        ExperimentId::TvsGeneral | ExperimentId::Fps => tvs_or_fps(cfg, &mut reports)?,
        ExperimentId::AnnulusMarginal | ExperimentId::AnnulusJoint => annulus_laws(cfg, &mut reports)?,
        ExperimentId::Reversibility => reversibility(cfg, &mut reports)?,
        ExperimentId::RnInvariance => rn_invariance(cfg, &mut reports)?,
    };
    for r in &reports {
        for (k, v) in &r.pass {
            gates.insert(format!("{}: {k}", r.name), *v);
        }
    }
    if collected.counts.attempted > 0 {
        let frac = collected.counts.failed as f64 / collected.counts.attempted as f64;
        gates.insert("failure budget".into(), frac <= FAILURE_BUDGET);
    }
    let pass = gates.values().all(|&g| g);
    let summary = Summary {
        experiment: cfg.experiment,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        counts: collected.counts,
        reports,
        checks,
        failures: collected.failures,
        gates,
        pass,
    };
    Ok(Outcome { rows: collected.rows, summary })
}

fn exponents(cfg: &ExperimentConfig, reports: &mut Vec<ComparisonReport>) -> Result<Collected> {
    let s = TvsSampler::new(GAP, GAP)?;
    let xs = draw_many(cfg.samples, cfg.seed, |r| s.draw(r))?;
    let t: Vec<f64> = xs.iter().map(|x| x.t * PI_UNITS).collect();
    let gap: Vec<f64> = xs.iter().map(|x| (x.t - x.tau) * PI_UNITS).collect();
    for (name, data, target, tol) in [("tail rate of T", &t, 0.125, 0.01), ("tail rate of T - tau", &gap, 0.5, 0.02)] {
        let mut rep = ComparisonReport::new(name);
        rep.sample_sizes = vec![data.len()];
        match tail_exponent(data, 0.9, BOOTSTRAP, substream(cfg.seed, 7)) {
            Ok(fit) => {
                rep.exponent = Some((fit.rate, fit.ci_lo, fit.ci_hi));
                rep.values.insert("threshold".into(), fit.threshold);
                rep.values.insert("exceedances".into(), fit.exceedances as f64);
                rep.pass.insert("rate".into(), (fit.rate - target).abs() <= tol);
                // threshold sensitivity
                if let Ok(f2) = tail_exponent(data, 0.95, 0, 0) {
                    rep.values.insert("rate_at_q95".into(), f2.rate);
                }
            }
            Err(e) => {
                rep.binning = Some(format!("not evaluated: {e}"));
                rep.pass.insert("rate".into(), false);
            }
        }
        rep.values.insert("target".into(), target);
        rep.values.insert("tolerance".into(), tol);
        reports.push(rep);
    }
    let rows = xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = Row::new(i as u64, replica_seed(cfg.seed, i as u64), "exact").with_functional(&x.scaled_pi());
            r.status = Status::Ok;
            r
        })
        .collect();
    Ok(Collected { rows, failures: Vec::new(), counts: Counts { attempted: xs.len(), ok: xs.len(), ..Default::default() } })
}

trait PiUnits {
    fn scaled_pi(&self) -> FunctionalSample;
}

impl PiUnits for FunctionalSample {
    fn scaled_pi(&self) -> FunctionalSample {
        FunctionalSample {
            tau: self.tau * PI_UNITS,
            t: self.t * PI_UNITS,
            tau_bar: self.tau_bar.map(|v| v * PI_UNITS),
            t_bar: self.t_bar.map(|v| v * PI_UNITS),
            ..*self
        }
    }
}

fn two_pi(x: f64) -> f64 {
    x * PI_UNITS
}

/// Gates on the deterministic inequalities and method agreement over non-degenerate disk rows.
fn deterministic_reports(rows: &[&Row], reports: &mut Vec<ComparisonReport>) {
    let n = rows.len();
    let ed_cr = rows.iter().filter(|r| !has_flag(r, "ed_cr_fail")).count();
    let all = rows
        .iter()
        .filter(|r| !["koebe_fail", "r_plus_ed_fail", "ratio_fail", "ed_cr_fail"].iter().any(|f| has_flag(r, f)))
        .count();
    let agree = rows.iter().filter(|r| !has_flag(r, "puncture_mismatch")).count();
    reports.push(fraction_report("2π ED <= -log CR + slack", ed_cr, n, 1.0));
    reports.push(fraction_report("distortion report", all, n, 1.0));
    reports.push(fraction_report("conformal radius method agreement", agree, n, 1.0));
}

fn thm_main(cfg: &ExperimentConfig, reports: &mut Vec<ComparisonReport>) -> Result<Collected> {
    let lat = Lattice::new(cfg.shape(), cfg.mesh)?;
    lat.dom.factor()?;
    let ctx = GeometryContext::new(&lat.dom, &lat.grid)?;
    let c = collect(cfg.seed, cfg.samples, |i, seed| {
        let field = sample_dgff(&lat.dom, 0.0, field_scene_seed(seed))?;
        let scene = Scene::new(&lat.dom, &lat.grid, &field);
        let s = Explorer::new(&scene, BoundarySelector::Outer)?.step(-GAP, GAP)?;
        let row = Row::new(i, seed, "tvs");
        let Some(l) = s.loop_ else { return Ok(vec![degenerate(row, "no_loop")]) };
        let mut row = loop_row(&ctx, &l, s.label, row)?;
        row.metric = Some(s.purity);
        Ok(vec![row])
    });
    let good: Vec<&Row> = ok_rows(&c.rows, "tvs").collect();
    let ed: Vec<f64> = good.iter().map(|r| two_pi(r.ed_outer.unwrap())).collect();
    let cr: Vec<f64> = good.iter().map(|r| r.neg_log_cr.unwrap()).collect();
    let s = TvsSampler::new(GAP, GAP)?;
    let refs = reference(cfg.reference_samples, cfg.seed, |r| s.draw(r))?;
    let rt: Vec<f64> = refs.iter().map(|x| two_pi(x.tau)).collect();
    let r_big_t: Vec<f64> = refs.iter().map(|x| two_pi(x.t)).collect();
    reports.push(ks_report("2π ED(∂D, loop) vs τ", &ed, &rt, KS_GATE));
    reports.push(ks_report("-log CR vs T", &cr, &r_big_t, KS_GATE));
    reports.push(fraction_report("non-degenerate loops collected", good.len(), cfg.samples, 1.0));
    deterministic_reports(&good, reports);
    Ok(c)
}

fn loop_soup(cfg: &ExperimentConfig, reports: &mut Vec<ComparisonReport>) -> Result<Collected> {
    let lat = Lattice::new(cfg.shape(), cfg.mesh)?;
    lat.dom.factor()?;
    let ctx = GeometryContext::new(&lat.dom, &lat.grid)?;
    let c = collect(cfg.seed, cfg.samples, |i, seed| {
        let field = sample_dgff(&lat.dom, 0.0, field_scene_seed(seed))?;
        let scene = Scene::new(&lat.dom, &lat.grid, &field);
        let row_o = Row::new(i, seed, "cluster_outer");
        let Some(cl) = sign_clusters_outermost(&scene)? else { return Ok(vec![degenerate(row_o, "no_cluster")]) };
        let mut ro = loop_row(&ctx, &cl.outer, Some(cl.label), row_o)?;
        let mut ri = loop_row(&ctx, &cl.inner, Some(cl.label), Row::new(i, seed, "cluster_inner"))?;
        match ctx.ed_between(&cl.outer, &cl.inner) {
            Ok(ed) => ri.ed_inner = Some(ed),
            // a cluster thinner than one lattice spacing
            Err(Error::Precondition(_)) => ro.flag("unresolved_band"),
            Err(e) => return Err(e),
        }
        if ri.ed_inner.is_none() {
            ro.status = Status::Degenerate;
        }
        if cl.origin_on_cluster {
            ro.flag("origin_on_cluster");
            ro.status = Status::Degenerate;
        }
        if ri.status == Status::Degenerate {
            ro.status = Status::Degenerate;
        }
        if ro.status == Status::Degenerate {
            ri.status = Status::Degenerate;
        }
        Ok(vec![ro, ri])
    });
    let outer: Vec<&Row> = ok_rows(&c.rows, "cluster_outer").collect();
    let inner: Vec<&Row> = ok_rows(&c.rows, "cluster_inner").collect();
    let col = |rows: &[&Row], f: &dyn Fn(&Row) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let ed_o = col(&outer, &|r| two_pi(r.ed_outer.unwrap()));
    let cr_o = col(&outer, &|r| r.neg_log_cr.unwrap());
    let ed_oi = col(&inner, &|r| two_pi(r.ed_inner.unwrap()));
    let cr_i = col(&inner, &|r| r.neg_log_cr.unwrap());
    let ed_i = col(&inner, &|r| two_pi(r.ed_outer.unwrap()));
    let s = ClusterSampler::new()?;
    let refs = reference(cfg.reference_samples, cfg.seed, |r| s.draw(r))?;
    let rc = |f: &dyn Fn(&FunctionalSample) -> f64| refs.iter().map(f).collect::<Vec<f64>>();
    let (r_tau, r_t, r_taub, r_tb) = (rc(&|x| x.tau), rc(&|x| x.t), rc(&|x| x.tau_bar.unwrap()), rc(&|x| x.t_bar.unwrap()));
    let r_inner_ed = rc(&|x| x.tau_bar.unwrap() + x.t);
    reports.push(ks_report("2π ED(∂D, ℓo) vs τ", &ed_o, &r_tau, KS_GATE));
    reports.push(ks_report("-log CR(ℓo) vs T", &cr_o, &r_t, KS_GATE));
    reports.push(ks_report("2π ED(ℓo, ℓi) vs τ̄", &ed_oi, &r_taub, KS_GATE));
    reports.push(ks_report("-log CR(ℓi) vs T̄", &cr_i, &r_tb, KS_GATE));
    for (name, x, y, rx, ry) in [
        ("spearman (2π ED(∂D,ℓo), 2π ED(ℓo,ℓi)) vs (τ, τ̄)", &ed_o, &ed_oi, &r_tau, &r_taub),
        ("spearman (2π ED(∂D,ℓo), 2π ED(∂D,ℓi)) vs (τ, τ̄ + T)", &ed_o, &ed_i, &r_tau, &r_inner_ed),
    ] {
        let mut rep = ComparisonReport::new(name);
        rep.sample_sizes = vec![x.len(), rx.len()];
        match (spearman(x, y), spearman(rx, ry)) {
            (Ok(a), Ok(b)) => {
                rep.values.insert("lattice".into(), a);
                rep.values.insert("brownian".into(), b);
                rep.pass.insert("within_gate".into(), (a - b).abs() <= SPEARMAN_GATE);
            }
            (a, b) => {
                rep.binning = Some(format!("not evaluated: {:?} {:?}", a.err(), b.err()));
                rep.pass.insert("within_gate".into(), false);
            }
        }
        reports.push(rep);
    }
    reports.push(fraction_report("non-degenerate clusters collected", outer.len(), cfg.samples, 1.0));
    let both: Vec<&Row> = outer.iter().chain(inner.iter()).copied().collect();
    deterministic_reports(&both, reports);
    Ok(c)
}

fn tvs_or_fps(cfg: &ExperimentConfig, reports: &mut Vec<ComparisonReport>) -> Result<Collected> {
    let fps = cfg.experiment == ExperimentId::Fps;
    let lat = Lattice::new(cfg.shape(), cfg.mesh)?;
    lat.dom.factor()?;
    let ctx = GeometryContext::new(&lat.dom, &lat.grid)?;
    let role = if fps { "fps" } else { "tvs" };
    let c = collect(cfg.seed, cfg.samples, |i, seed| {
        let field = sample_dgff(&lat.dom, 0.0, field_scene_seed(seed))?;
        let scene = Scene::new(&lat.dom, &lat.grid, &field);
        let row = Row::new(i, seed, role);
        let (l, label, purity) = if fps {
            match fps_component(&scene, cfg.a, BoundarySelector::Outer)?.loop_ {
                Some(l) => (l, -cfg.a, None),
                None => return Ok(vec![degenerate(row, "no_loop")]),
            }
        } else {
            let it = iterated_loops(&scene, Some((cfg.a, cfg.b)), BoundarySelector::Outer, DEFAULT_ITERATION_CAP)?;
            let Some(k) = it.stopped_at else { return Ok(vec![degenerate(row, "no_loop")]) };
            let p = it.sequence.purity.iter().copied().fold(1.0, f64::min);
            (it.sequence.loops[k].clone(), it.sequence.labels[k], Some(p))
        };
        let mut row = loop_row(&ctx, &l, Some(label), row)?;
        row.metric = purity;
        Ok(vec![row])
    });
    let good: Vec<&Row> = ok_rows(&c.rows, role).collect();
    let ed: Vec<f64> = good.iter().map(|r| two_pi(r.ed_outer.unwrap())).collect();
    let cr: Vec<f64> = good.iter().map(|r| r.neg_log_cr.unwrap()).collect();
    let refs = if fps {
        let s = FpsSampler::new(cfg.a)?;
        reference(cfg.reference_samples, cfg.seed, |r| s.draw(r))?
    } else {
        let s = TvsSampler::new(cfg.a, cfg.b)?;
        reference(cfg.reference_samples, cfg.seed, |r| s.draw(r))?
    };
    let rt: Vec<f64> = refs.iter().map(|x| two_pi(x.tau)).collect();
    let r_big_t: Vec<f64> = refs.iter().map(|x| two_pi(x.t)).collect();
    reports.push(ks_report("2π ED(∂D, loop) vs τ", &ed, &rt, KS_GATE));
    reports.push(ks_report("-log CR vs T", &cr, &r_big_t, KS_GATE));
    if !fps {
        let lower = good.iter().filter(|r| r.label.is_some_and(|l| (l + cfg.a).abs() < 1e-9)).count();
        reports.push(frequency_report("label -a frequency vs b/(a+b)", lower, good.len(), cfg.b / (cfg.a + cfg.b)));
    }
    reports.push(fraction_report("non-degenerate loops collected", good.len(), cfg.samples, 1.0));
    deterministic_reports(&good, reports);
    Ok(c)
}

fn annulus_laws(cfg: &ExperimentConfig, reports: &mut Vec<ComparisonReport>) -> Result<Collected> {
    let joint = cfg.experiment == ExperimentId::AnnulusJoint;
    let lat = Lattice::new(cfg.shape(), cfg.mesh)?;
    lat.dom.factor()?;
    let ctx = GeometryContext::new(&lat.dom, &lat.grid)?;
    let l_ed = cfg.annulus_ed().expect("annulus");
    let c = collect(cfg.seed, cfg.samples, |i, seed| {
        let field = sample_dgff(&lat.dom, cfg.v, field_scene_seed(seed))?;
        let scene = Scene::new(&lat.dom, &lat.grid, &field);
        let mut row = Row::new(i, seed, "tvs");
        let it = iterated_loops(&scene, Some((cfg.a, cfg.b)), BoundarySelector::Outer, DEFAULT_ITERATION_CAP)?;
        let Some(k) = it.stopped_at else {
            row.censored = Some(true);
            row.flag("censored");
            return Ok(vec![row]);
        };
        let mut row = loop_row(&ctx, &it.sequence.loops[k], Some(it.sequence.labels[k]), row)?;
        row.censored = Some(false);
        row.metric = Some(it.sequence.purity.iter().copied().fold(1.0, f64::min));
        Ok(vec![row])
    });
    let good: Vec<&Row> = ok_rows(&c.rows, "tvs").collect();
    let unc: Vec<&Row> = good.iter().filter(|r| r.censored == Some(false)).copied().collect();
    let n_cens = good.len() - unc.len();
    let s = BridgeSampler::new(cfg.a, Some(cfg.b), cfg.v, l_ed)?;
    let refs = reference(cfg.reference_samples, cfg.seed, |r| s.draw(r))?;
    let ref_unc: Vec<&FunctionalSample> = refs.iter().filter(|x| !x.censored).collect();
    let ed: Vec<f64> = unc.iter().map(|r| two_pi(r.ed_outer.unwrap())).collect();
    let rt: Vec<f64> = ref_unc.iter().map(|x| two_pi(x.tau)).collect();
    reports.push(ks_report("2π ED(∂o, loop) vs bridge τ̂ (uncensored)", &ed, &rt, KS_GATE));
    reports.push(frequency_report("boundary-contact frequency vs bridge censoring", n_cens, good.len(), s.censor_mass));
    if joint {
        let back: Vec<f64> = unc.iter().map(|r| two_pi(l_ed - r.ed_inner.unwrap())).collect();
        let r_big_t: Vec<f64> = ref_unc.iter().map(|x| two_pi(x.t)).collect();
        reports.push(ks_report("2π (L - ED(loop, ∂i)) vs bridge T̂ (uncensored)", &back, &r_big_t, KS_GATE));
        let (ml, mu) = s.side_masses();
        let lower = unc.iter().filter(|r| r.label.is_some_and(|l| (l + cfg.a).abs() < 1e-9)).count();
        reports.push(frequency_report("label -a frequency vs bridge side mass", lower, unc.len(), ml / (ml + mu)));
        let slack = 2.0 * lat.dom.h;
        let sup = unc.iter().filter(|r| r.ed_outer.unwrap() + r.ed_inner.unwrap() <= l_ed * (1.0 + slack)).count();
        reports.push(fraction_report("ED(∂o,ℓ) + ED(ℓ,∂i) <= ED(∂o,∂i)", sup, unc.len(), 1.0));
    }
    Ok(c)
}

fn reversibility(cfg: &ExperimentConfig, reports: &mut Vec<ComparisonReport>) -> Result<Collected> {
    let lat = Lattice::new(cfg.shape(), cfg.mesh)?;
    lat.dom.factor()?;
    let h = lat.dom.h;
    let c = collect(cfg.seed, cfg.samples, |i, seed| {
        let field = sample_dgff(&lat.dom, cfg.v, field_scene_seed(seed))?;
        let scene = Scene::new(&lat.dom, &lat.grid, &field);
        let out = iterated_loops(&scene, None, BoundarySelector::Outer, DEFAULT_ITERATION_CAP)?.sequence;
        let inw = iterated_loops(&scene, None, BoundarySelector::Inner, DEFAULT_ITERATION_CAP)?.sequence;
        let mut row = Row::new(i, seed, "reversal");
        let n = out.loops.len();
        row.label = Some(n as f64);
        if n != inw.loops.len() {
            row.flag("count_mismatch");
            row.metric = Some(f64::INFINITY);
        } else {
            let d = (0..n).map(|j| hausdorff(&out.loops[j], &inw.loops[n - 1 - j])).fold(0.0, f64::max);
            row.metric = Some(d / h);
            if n == 0 {
                row.flag("empty");
            }
        }
        Ok(vec![row])
    });
    let rows: Vec<&Row> = ok_rows(&c.rows, "reversal").collect();
    let matched = rows.iter().filter(|r| r.metric.is_some_and(|m| m <= REVERSAL_CELLS)).count();
    let mut rep = fraction_report("loop sequences match in reverse order", matched, rows.len(), REVERSAL_FRACTION);
    let nonempty = rows.iter().filter(|r| !has_flag(r, "empty")).count();
    rep.values.insert("nonempty_runs".into(), nonempty as f64);
    let mean_loops = rows.iter().map(|r| r.label.unwrap_or(0.0)).sum::<f64>() / rows.len().max(1) as f64;
    rep.values.insert("mean_outward_loops".into(), mean_loops);
    reports.push(rep);
    Ok(c)
}

#[derive(Clone, Copy)]
enum Variant {
    Tvs,
    Fps,
    Cluster,
}

fn rn_invariance(cfg: &ExperimentConfig, reports: &mut Vec<ComparisonReport>) -> Result<Collected> {
    let lat = Lattice::new(cfg.shape(), cfg.mesh)?;
    lat.dom.factor()?;
    let ctx = GeometryContext::new(&lat.dom, &lat.grid)?;
    let mut all = Collected { rows: Vec::new(), failures: Vec::new(), counts: Counts::default() };
    for (vi, variant, name) in [(0u64, Variant::Tvs, "tvs"), (1, Variant::Fps, "fps"), (2, Variant::Cluster, "cluster")] {
        let mut data: Vec<Vec<CondRow>> = Vec::new();
        for (k, v) in [0.0, cfg.v].into_iter().enumerate() {
            let role = format!("{name}:v{k}");
            let master = substream(cfg.seed, 100 + 10 * vi + k as u64);
            let c = collect(master, cfg.samples, |i, seed| {
                let field = sample_dgff(&lat.dom, v, field_scene_seed(seed))?;
                let scene = Scene::new(&lat.dom, &lat.grid, &field);
                let row = Row::new(i, seed, &role);
                let found = match variant {
                    Variant::Tvs => {
                        let s = Explorer::new(&scene, BoundarySelector::Outer)?.step(-GAP, GAP)?;
                        s.loop_.zip(s.label)
                    }
                    Variant::Fps => fps_component(&scene, GAP, BoundarySelector::Outer)?.loop_.map(|l| (l, -GAP)),
                    Variant::Cluster => cluster_loops(&scene)?.map(|(_, l2, alpha)| (l2, alpha)),
                };
                let Some((l, label)) = found else {
                    let mut row = degenerate(row, "censored");
                    row.censored = Some(true);
                    return Ok(vec![row]);
                };
                let mut row = loop_row(&ctx, &l, Some(label), row)?;
                row.censored = Some(false);
                Ok(vec![row])
            });
            data.push(
                ok_rows(&c.rows, &role)
                    .map(|r| CondRow {
                        conditioner: r.ed_inner.unwrap(),
                        label: r.label.map(|l| (l / GAP).round() as i64),
                        response: r.ed_outer.unwrap(),
                    })
                    .collect(),
            );
            all.rows.extend(c.rows);
            all.failures.extend(c.failures);
            all.counts.attempted += c.counts.attempted;
            all.counts.ok += c.counts.ok;
            all.counts.degenerate += c.counts.degenerate;
            all.counts.failed += c.counts.failed;
        }
        let mut rep = ComparisonReport::new(&format!("conditional invariance ({name})"));
        rep.sample_sizes = vec![data[0].len(), data[1].len()];
        rep.binning = Some(format!("{INVARIANCE_BINS} pooled equal-probability bins of ED(loop, ∂i) × label, ≥{INVARIANCE_MIN_PER_BIN} per bin"));
        match conditional_invariance(&data[0], &data[1], INVARIANCE_BINS, INVARIANCE_MIN_PER_BIN) {
            Ok(inv) => {
                rep.values.insert("occupied_bins".into(), inv.occupied as f64);
                rep.values.insert("passing_bins".into(), inv.passing as f64);
                rep.values.insert("skipped_bins".into(), inv.bins.iter().filter(|b| b.skipped).count() as f64);
                rep.pass.insert("invariance".into(), inv.pass);
            }
            Err(e) => {
                rep.binning = Some(format!("not evaluated: {e}"));
                rep.pass.insert("invariance".into(), false);
            }
        }
        reports.push(rep);
    }
    Ok(all)
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn samples_csv(rows: &[Row]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r.fields()).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    master_seed: u64,
    version: &'a str,
    workers: usize,
    written_unix_seconds: u64,
}

/// Writes `samples.csv`, `summary.json` and `manifest.json` into the configured directory.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &Outcome) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let csv = samples_csv(&outcome.rows)?;
    let summary = serde_json::to_vec_pretty(&outcome.summary).map_err(|e| Error::Io(e.to_string()))?;
    let manifest = Manifest {
        config: cfg,
        master_seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        workers: worker_pool()?.current_num_threads(),
        written_unix_seconds: std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let manifest = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&cfg.out.join("samples.csv"), &csv)?;
    write_atomic(&cfg.out.join("summary.json"), &summary)?;
    write_atomic(&cfg.out.join("manifest.json"), &manifest)?;
    Ok(())
}

/// Runs, writes outputs and returns whether every gate passed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let outcome = run(cfg)?;
    write_outputs(cfg, &outcome)?;
    Ok(outcome)
}

/// One-line human summary of the gates.
pub fn gate_lines(s: &Summary) -> String {
    let mut out = String::new();
    for (k, v) in &s.gates {
        let _ = writeln!(out, "{} {k}", if *v { "PASS" } else { "FAIL" });
    }
    out
}
