//! Samplers for the Brownian functionals `(τ, T, τ̄, T̄, X)`: exact ones built on
//! inverse-CDF tables of the closed-form densities, and a discretized walk.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{
    beta, bridge_stay_probability, bridge_weight, heat_kernel, q_a, q_ab, q_check0, Kernel, SeriesControl, Side, GAP,
};
use crate::rng::{replica_seed, rng};
use crate::tables::{sample_on_interval, GridSpec, InvCdf, Tail};

/// Time scale factor from extremal-distance units (barrier `2λ`) to the units
/// in which the barrier sits at `π`.
pub const PI_UNITS: f64 = 2.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub tau: f64,
    pub t: f64,
    pub tau_bar: Option<f64>,
    pub t_bar: Option<f64>,
    /// Exit value: `-a`, `b`, or the bridge endpoint `v` when censored.
    pub x: Option<f64>,
    pub side: Option<Side>,
    /// Bridge event did not happen before `L`; then `tau = t = L`.
    pub censored: bool,
    /// Walk stopped at the horizon before the event; times are not meaningful.
    pub truncated: bool,
}

impl FunctionalSample {
    fn scaled(mut self, k: f64) -> Self {
        self.tau *= k;
        self.t *= k;
        self.tau_bar = self.tau_bar.map(|v| v * k);
        self.t_bar = self.t_bar.map(|v| v * k);
        self
    }
}

fn ctrl() -> SeriesControl {
    SeriesControl::default()
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Precondition(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

const PER_DECADE: usize = 80;

/// Inverse CDF of the Bessel-3 hitting time of `x` from 0.
pub fn beta_table(x: f64) -> Result<InvCdf> {
    let spec = GridSpec {
        lo: 1e-2 * x * x,
        hi: 12.0 * x * x,
        per_decade: PER_DECADE,
        support_end: None,
        tail: Tail::None,
        mass: None,
    };
    InvCdf::build(|t| beta(x, t, &ctrl()), &spec)
}

/// Green function at `(0, y)` of Brownian motion killed on leaving `(-a, b)`
/// (`b = ∞` allowed), normalized so that the occupation density is `G`.
fn green0(a: f64, b: f64, y: f64) -> f64 {
    if !(y > -a && y < b) {
        return 0.0;
    }
    let lo = y.min(0.0) + a;
    if b.is_infinite() {
        return 2.0 * lo;
    }
    2.0 * lo * (b - y.max(0.0)) / (a + b)
}

fn kernel_lo(y: f64) -> f64 {
    if y.abs() < 1e-9 {
        1e-12
    } else {
        1e-2 * y * y
    }
}

/// One exit side's `τ` law: a continuous part with density `p(τ,0,y)/(4λ)`
/// and, when the start lies strictly between the barrier and the recording
/// level, an atom at `τ = 0` whose `T` is the exit through the barrier of the
/// strip between barrier and recording level.
#[derive(Clone, Debug)]
struct SideLaw {
    cont: Option<InvCdf>,
    cont_mass: f64,
    atom: Option<InvCdf>,
    atom_mass: f64,
    /// Atom exit law parameters `(a', b', side)` for `q_{a',b'}`.
    atom_exit: Option<(f64, f64, Side)>,
    kernel: Kernel,
    side: Side,
    y: f64,
}

impl SideLaw {
    fn build(a: f64, b: f64, side: Side) -> Result<Self> {
        let y = side.recording_level(a, if b.is_infinite() { f64::MAX } else { b });
        let kernel = if b.is_infinite() { Kernel::HalfLine { a } } else { Kernel::Interval { a, b } };
        let cont_mass = green0(a, b, y) / (2.0 * GAP);
        let side_mass = if b.is_infinite() {
            1.0
        } else {
            match side {
                Side::Lower => b / (a + b),
                Side::Upper => a / (a + b),
            }
        };
        let cont = if cont_mass > 0.0 {
            let width = if b.is_infinite() { a.max(GAP) } else { a + b };
            let (hi, tail) = if b.is_infinite() { (1e6 * width * width, Tail::PowerHalf) } else { (10.0 * width * width, Tail::None) };
            let spec = GridSpec {
                lo: kernel_lo(y).min(1e-2 * width * width),
                hi,
                per_decade: PER_DECADE,
                support_end: None,
                tail,
                mass: Some(cont_mass),
            };
            Some(InvCdf::build(|t| heat_kernel(kernel, t, 0.0, y, &ctrl()).map(|p| p / (2.0 * GAP)), &spec)?)
        } else {
            None
        };
        let atom_mass = (side_mass - cont_mass).max(0.0);
        let atom_exit = if atom_mass > 1e-14 {
            Some(match side {
                Side::Lower => (a, (GAP - a).min(b), Side::Lower),
                Side::Upper => ((GAP - b).min(a), b, Side::Upper),
            })
        } else {
            None
        };
        let atom = match atom_exit {
            Some((aa, bb, s)) => {
                let w = aa + bb;
                let d = match s {
                    Side::Lower => aa,
                    Side::Upper => bb,
                };
                let spec = GridSpec {
                    lo: 1e-2 * d * d,
                    hi: 10.0 * w * w,
                    per_decade: PER_DECADE,
                    support_end: None,
                    tail: Tail::None,
                    mass: Some(atom_mass),
                };
                Some(InvCdf::build(|t| q_ab(aa, bb, s, t, &ctrl()), &spec)?)
            }
            None => None,
        };
        Ok(SideLaw { cont, cont_mass, atom, atom_mass, atom_exit, kernel, side, y })
    }

    fn mass(&self) -> f64 {
        self.cont_mass + self.atom_mass
    }

    /// Joint density of `(τ, T)` restricted to the continuous part.
    fn joint(&self, t1: f64, t2: f64) -> f64 {
        if !(t1 > 0.0 && t1 < t2) {
            return 0.0;
        }
        let p = heat_kernel(self.kernel, t1, 0.0, self.y, &ctrl()).unwrap_or(0.0);
        p / (2.0 * GAP) * beta(GAP, t2 - t1, &ctrl()).unwrap_or(0.0)
    }

    /// Density of `T` restricted to the atom `τ = 0`.
    fn atom_density(&self, t2: f64) -> f64 {
        match self.atom_exit {
            Some((aa, bb, s)) => q_ab(aa, bb, s, t2, &ctrl()).unwrap_or(0.0),
            None => 0.0,
        }
    }

    /// Draw `(τ, T)` given that this side occurs.
    fn draw(&self, gap: &InvCdf, r: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let u: f64 = r.gen();
        if u * self.mass() < self.atom_mass {
            let t = self.atom.as_ref().unwrap().sample(r.gen())?;
            return Ok((0.0, t));
        }
        let tau = self.cont.as_ref().unwrap().sample(r.gen())?;
        let g = gap.sample(r.gen())?;
        Ok((tau, tau + g))
    }

    /// Draw `τ` given `T = t2` on this side.
    fn draw_tau_given(&self, t2: f64, r: &mut ChaCha8Rng) -> Result<f64> {
        let atom = self.atom_density(t2);
        let total = self.exit_density(t2);
        let u: f64 = r.gen();
        if self.cont.is_none() || u * total < atom {
            return Ok(0.0);
        }
        let v: f64 = r.gen();
        sample_on_interval(|t1| self.joint(t1, t2), t2, v)
    }

    /// Exit density of this side, which is the `T`-marginal of continuous part plus atom.
    fn exit_density(&self, t2: f64) -> f64 {
        match (self.kernel, self.side) {
            (Kernel::Interval { a, b }, s) => q_ab(a, b, s, t2, &ctrl()).unwrap_or(0.0),
            (Kernel::HalfLine { a }, _) => q_a(a, t2),
            (Kernel::Free, _) => 0.0,
        }
    }
}

/// Exact sampler of the first-passage pair `(τ_{-a}, T_{-a})`.
#[derive(Clone, Debug)]
pub struct FpsSampler {
    pub a: f64,
    law: SideLaw,
    gap: InvCdf,
}

impl FpsSampler {
    pub fn new(a: f64) -> Result<Self> {
        check_pos("a", a)?;
        Ok(FpsSampler { a, law: SideLaw::build(a, f64::INFINITY, Side::Lower)?, gap: beta_table(GAP)? })
    }

    pub fn draw(&self, r: &mut ChaCha8Rng) -> Result<FunctionalSample> {
        let (tau, t) = self.law.draw(&self.gap, r)?;
        Ok(FunctionalSample { tau, t, tau_bar: None, t_bar: None, x: Some(-self.a), side: Some(Side::Lower), censored: false, truncated: false })
    }

    /// Probability of the atom `τ = 0` (positive only for `a < 2λ`).
    pub fn atom_mass(&self) -> f64 {
        self.law.atom_mass
    }
}

/// Exact sampler of the two-valued triple `(τ_{-a,b}, T_{-a,b}, X)`.
#[derive(Clone, Debug)]
pub struct TvsSampler {
    pub a: f64,
    pub b: f64,
    lower: SideLaw,
    upper: SideLaw,
    gap: InvCdf,
}

impl TvsSampler {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        check_pos("a", a)?;
        check_pos("b", b)?;
        Ok(TvsSampler {
            a,
            b,
            lower: SideLaw::build(a, b, Side::Lower)?,
            upper: SideLaw::build(a, b, Side::Upper)?,
            gap: beta_table(GAP)?,
        })
    }

    pub fn draw(&self, r: &mut ChaCha8Rng) -> Result<FunctionalSample> {
        let u: f64 = r.gen();
        let side = if u < self.b / (self.a + self.b) { Side::Lower } else { Side::Upper };
        let law = match side {
            Side::Lower => &self.lower,
            Side::Upper => &self.upper,
        };
        let (tau, t) = law.draw(&self.gap, r)?;
        Ok(FunctionalSample { tau, t, tau_bar: None, t_bar: None, x: Some(side.level(self.a, self.b)), side: Some(side), censored: false, truncated: false })
    }
}

/// Exact sampler of bridge triples `(τ̂, T̂, B̂_T̂)` for a bridge of length `L`
/// ending at `v`; one-sided when `b` is `None`.
#[derive(Clone, Debug)]
pub struct BridgeSampler {
    pub a: f64,
    pub b: Option<f64>,
    pub v: f64,
    pub l: f64,
    lower: SideLaw,
    upper: Option<SideLaw>,
    lower_hit: Option<InvCdf>,
    upper_hit: Option<InvCdf>,
    /// Probability that no barrier is hit before `L`.
    pub censor_mass: f64,
}

fn bridge_hit_table<F: Fn(f64) -> Result<f64>>(f: F, d: f64, l: f64) -> Result<Option<InvCdf>> {
    let spec = GridSpec {
        lo: (1e-2 * d * d).min(1e-3 * l),
        hi: l,
        per_decade: PER_DECADE,
        support_end: Some(l),
        tail: Tail::None,
        mass: None,
    };
    let tab = InvCdf::build(f, &spec)?;
    Ok(if tab.mass() > 0.0 { Some(tab) } else { None })
}

impl BridgeSampler {
    pub fn new(a: f64, b: Option<f64>, v: f64, l: f64) -> Result<Self> {
        check_pos("a", a)?;
        check_pos("L", l)?;
        if let Some(b) = b {
            check_pos("b", b)?;
        }
        if !v.is_finite() {
            return Err(Error::Precondition(format!("bridge endpoint must be finite, got {v}")));
        }
        let bb = b.unwrap_or(f64::INFINITY);
        let lower = SideLaw::build(a, bb, Side::Lower)?;
        let upper = match b {
            Some(b) => Some(SideLaw::build(a, b, Side::Upper)?),
            None => None,
        };
        let lower_hit = match b {
            Some(b) => bridge_hit_table(|t| Ok(q_ab(a, b, Side::Lower, t, &ctrl())? * bridge_weight(-a, v, l, t)), a, l)?,
            None => bridge_hit_table(|t| Ok(q_a(a, t) * bridge_weight(-a, v, l, t)), a, l)?,
        };
        let upper_hit = match b {
            Some(b) => bridge_hit_table(|t| Ok(q_ab(a, b, Side::Upper, t, &ctrl())? * bridge_weight(b, v, l, t)), b, l)?,
            None => None,
        };
        let censor_mass = match b {
            Some(b) => bridge_stay_probability(0.0, v, -a, b, l),
            None => {
                let hit = if v <= -a { 1.0 } else { (-2.0 * a * (a + v) / l).exp() };
                1.0 - hit
            }
        };
        Ok(BridgeSampler { a, b, v, l, lower, upper, lower_hit, upper_hit, censor_mass })
    }

    /// Tabulated hit masses per side.
    pub fn side_masses(&self) -> (f64, f64) {
        (
            self.lower_hit.as_ref().map_or(0.0, |t| t.mass()),
            self.upper_hit.as_ref().map_or(0.0, |t| t.mass()),
        )
    }

    pub fn draw(&self, r: &mut ChaCha8Rng) -> Result<FunctionalSample> {
        let (ml, mu) = self.side_masses();
        let u: f64 = r.gen();
        let total = ml + mu + self.censor_mass;
        let pick = u * total;
        if pick >= ml + mu {
            return Ok(FunctionalSample {
                tau: self.l,
                t: self.l,
                tau_bar: None,
                t_bar: None,
                x: Some(self.v),
                side: None,
                censored: true,
                truncated: false,
            });
        }
        let (side, tab, law) = if pick < ml {
            (Side::Lower, self.lower_hit.as_ref().unwrap(), &self.lower)
        } else {
            (Side::Upper, self.upper_hit.as_ref().unwrap(), self.upper.as_ref().unwrap())
        };
        let t = tab.sample(r.gen())?;
        let tau = law.draw_tau_given(t, r)?;
        let x = match side {
            Side::Lower => -self.a,
            Side::Upper => self.b.unwrap(),
        };
        Ok(FunctionalSample { tau, t, tau_bar: None, t_bar: None, x: Some(x), side: Some(side), censored: false, truncated: false })
    }
}

/// Exact sampler of the quadruple `(τ, T, τ̄, T̄)` with barrier `±π`.
#[derive(Clone, Debug)]
pub struct ClusterSampler {
    tvs: TvsSampler,
    fps: FpsSampler,
}

impl ClusterSampler {
    pub fn new() -> Result<Self> {
        Ok(ClusterSampler { tvs: TvsSampler::new(GAP, GAP)?, fps: FpsSampler::new(GAP)? })
    }

    /// Draw in extremal-distance units (barrier `±2λ`).
    pub fn draw_ed(&self, r: &mut ChaCha8Rng) -> Result<FunctionalSample> {
        let first = self.tvs.draw(r)?;
        let second = self.fps.draw(r)?;
        Ok(FunctionalSample { tau_bar: Some(second.tau), t_bar: Some(first.t + second.t), ..first })
    }

    pub fn draw(&self, r: &mut ChaCha8Rng) -> Result<FunctionalSample> {
        Ok(self.draw_ed(r)?.scaled(PI_UNITS))
    }
}

/// Sampler of the bridged time `T̄̂`: exit of `(-2λ, 2λ)` and return to 0,
/// for a bridge of length `L` ending at `v`. Censored when `T̄̂ ≥ L`.
#[derive(Clone, Debug)]
pub struct ClusterBridgeSampler {
    pub v: f64,
    pub l: f64,
    tab: Option<InvCdf>,
}

impl ClusterBridgeSampler {
    pub fn new(v: f64, l: f64) -> Result<Self> {
        check_pos("L", l)?;
        let tab = bridge_hit_table(|t| Ok(q_check0(t, &ctrl())? * bridge_weight(0.0, v, l, t)), GAP, l)?;
        Ok(ClusterBridgeSampler { v, l, tab })
    }

    pub fn hit_mass(&self) -> f64 {
        self.tab.as_ref().map_or(0.0, |t| t.mass())
    }

    pub fn draw(&self, r: &mut ChaCha8Rng) -> Result<FunctionalSample> {
        let u: f64 = r.gen();
        let m = self.hit_mass().min(1.0);
        if u >= m {
            return Ok(FunctionalSample { tau: self.l, t: self.l, tau_bar: None, t_bar: None, x: Some(self.v), side: None, censored: true, truncated: false });
        }
        let t = self.tab.as_ref().unwrap().sample(r.gen())?;
        Ok(FunctionalSample { tau: t, t, tau_bar: None, t_bar: None, x: Some(0.0), side: None, censored: false, truncated: false })
    }
}

/// Draws `n` samples with per-replica seeds split from `seed`.
pub fn draw_many<F>(n: usize, seed: u64, f: F) -> Result<Vec<FunctionalSample>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<FunctionalSample> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(replica_seed(seed, i as u64));
            f(&mut r)
        })
        .collect()
}

pub fn sample_fps_pair(a: f64, seed: u64) -> Result<FunctionalSample> {
    FpsSampler::new(a)?.draw(&mut rng(seed))
}

pub fn sample_tvs_triple(a: f64, b: f64, seed: u64) -> Result<FunctionalSample> {
    TvsSampler::new(a, b)?.draw(&mut rng(seed))
}

pub fn sample_bridge_triple(a: f64, b: Option<f64>, v: f64, l: f64, seed: u64) -> Result<FunctionalSample> {
    BridgeSampler::new(a, b, v, l)?.draw(&mut rng(seed))
}

pub fn sample_cluster_quadruple(seed: u64) -> Result<FunctionalSample> {
    ClusterSampler::new()?.draw(&mut rng(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BarrierSpec {
    TwoSided { a: f64, b: f64 },
    OneSided { a: f64 },
    /// Exit of `(-2λ, 2λ)`, then return to 0; reported in `π` units.
    Cluster,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub dt: f64,
    /// `(v, L)` for bridge mode.
    pub bridge: Option<(f64, f64)>,
    pub barrier: BarrierSpec,
    /// Paths still running at this time are flagged truncated.
    pub horizon: f64,
}

impl OracleConfig {
    pub fn new(barrier: BarrierSpec) -> Self {
        OracleConfig { dt: 1e-4, bridge: None, barrier, horizon: 1e4 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::Config(format!("dt and horizon must be positive: {self:?}")));
        }
        match self.barrier {
            BarrierSpec::TwoSided { a, b } => {
                check_pos("a", a)?;
                check_pos("b", b)?;
            }
            BarrierSpec::OneSided { a } => check_pos("a", a)?,
            BarrierSpec::Cluster => {}
        }
        if let Some((v, l)) = self.bridge {
            if !v.is_finite() || !(l > 0.0) {
                return Err(Error::Config(format!("invalid bridge ({v}, {l})")));
            }
            let steps = l / self.dt;
            if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
                return Err(Error::Config(format!("L/dt = {steps} is not an integer")));
            }
            if matches!(self.barrier, BarrierSpec::Cluster) {
                return Err(Error::Config("bridge mode is not available for the cluster walk".into()));
            }
        }
        Ok(())
    }
}

/// Discretized Brownian path (optionally a bridge) with block skipping: when
/// every watched level is more than eight block standard deviations away, a
/// block of steps is drawn as one Gaussian, which leaves the grid walk's law
/// unchanged up to probability `~1e-15` per block. Level crossings inside a
/// single step are detected with the Brownian-bridge crossing probability.
struct Walk {
    r: ChaCha8Rng,
    dt: f64,
    x: f64,
    n: u64,
    end: u64,
    bridge_end: Option<(f64, u64)>,
}

enum PhaseEnd {
    Hit { time: f64, level: f64 },
    Horizon,
    Censored,
}

impl Walk {
    fn time(&self) -> f64 {
        self.n as f64 * self.dt
    }

    fn step(&mut self, dist: f64) -> (f64, u64) {
        let rem = self.end - self.n;
        let mut k: u64 = 1;
        let free_cap = (dist * dist / (64.0 * self.dt)).floor();
        if free_cap >= 2.0 {
            k = 1u64 << (free_cap.log2().floor() as u32).min(40);
        }
        k = k.min(rem.max(1));
        loop {
            let (mean, sd) = self.moments(k);
            if k == 1 || mean.abs() + 8.0 * sd <= dist {
                let z: f64 = self.r.sample(StandardNormal);
                return (mean + sd * z, k);
            }
            k /= 2;
        }
    }

    fn moments(&self, k: u64) -> (f64, f64) {
        match self.bridge_end {
            None => (0.0, (k as f64 * self.dt).sqrt()),
            Some((v, total)) => {
                let m = (total - self.n) as f64;
                let kf = k as f64;
                let mean = (v - self.x) * kf / m;
                let var = self.dt * kf * (m - kf) / m;
                (mean, var.max(0.0).sqrt())
            }
        }
    }

    /// Runs until leaving `(lo, hi)`, recording the last crossing time of each level in `rec`.
    fn run(&mut self, lo: f64, hi: f64, rec: &[f64], last: &mut [f64]) -> PhaseEnd {
        loop {
            if self.n >= self.end {
                return match self.bridge_end {
                    Some((_, total)) if self.n >= total => PhaseEnd::Censored,
                    _ => PhaseEnd::Horizon,
                };
            }
            let mut dist = (self.x - lo).min(hi - self.x);
            for &y in rec {
                dist = dist.min((self.x - y).abs());
            }
            let t0 = self.time();
            let x0 = self.x;
            let (dx, k) = self.step(dist);
            let x1 = match self.bridge_end {
                Some((v, total)) if self.n + k >= total => v,
                _ => x0 + dx,
            };
            self.n += k;
            self.x = x1;
            let h = k as f64 * self.dt;
            // Between grid points the path is a Brownian bridge; a level on one
            // side of both endpoints is crossed with probability exp(-2 d0 d1 / h).
            let crossed = |r: &mut ChaCha8Rng, y: f64| -> bool {
                let p = (-2.0 * (x0 - y) * (x1 - y) / h).exp();
                p > 1e-300 && r.gen::<f64>() < p
            };
            for (j, &y) in rec.iter().enumerate() {
                if (x0 - y) * (x1 - y) < 0.0 || x1 == y {
                    last[j] = t0 + h * (y - x0) / (x1 - x0);
                } else if k == 1 && crossed(&mut self.r, y) {
                    last[j] = t0 + 0.5 * h;
                }
            }
            if x1 <= lo {
                return PhaseEnd::Hit { time: t0 + h * (lo - x0) / (x1 - x0), level: lo };
            }
            if x1 >= hi {
                return PhaseEnd::Hit { time: t0 + h * (hi - x0) / (x1 - x0), level: hi };
            }
            if k == 1 {
                if crossed(&mut self.r, lo) {
                    return PhaseEnd::Hit { time: t0 + 0.5 * h, level: lo };
                }
                if crossed(&mut self.r, hi) {
                    return PhaseEnd::Hit { time: t0 + 0.5 * h, level: hi };
                }
            }
        }
    }
}

/// One path of the discretized walk, read off into the same functionals as the exact samplers.
pub fn sample_walk_oracle(cfg: &OracleConfig, seed: u64) -> Result<FunctionalSample> {
    cfg.validate()?;
    let horizon_steps = (cfg.horizon / cfg.dt).ceil() as u64;
    let (end, bridge_end) = match cfg.bridge {
        Some((v, l)) => {
            let total = (l / cfg.dt).round() as u64;
            (total, Some((v, total)))
        }
        None => (horizon_steps, None),
    };
    let mut w = Walk { r: rng(seed), dt: cfg.dt, x: 0.0, n: 0, end, bridge_end };
    let trunc = FunctionalSample { tau: f64::INFINITY, t: f64::INFINITY, tau_bar: None, t_bar: None, x: None, side: None, censored: false, truncated: true };
    let (a, b) = match cfg.barrier {
        BarrierSpec::TwoSided { a, b } => (a, b),
        BarrierSpec::OneSided { a } => (a, f64::INFINITY),
        BarrierSpec::Cluster => (GAP, GAP),
    };
    let rec = [-a + GAP, b - GAP];
    let mut last = [0.0, 0.0];
    let end1 = w.run(-a, b, &rec, &mut last);
    let (t, level) = match end1 {
        PhaseEnd::Hit { time, level } => (time, level),
        PhaseEnd::Horizon => return Ok(trunc),
        PhaseEnd::Censored => {
            let (v, l) = cfg.bridge.unwrap();
            return Ok(FunctionalSample { tau: l, t: l, tau_bar: None, t_bar: None, x: Some(v), side: None, censored: true, truncated: false });
        }
    };
    let side = if level <= -a { Side::Lower } else { Side::Upper };
    let tau = match side {
        Side::Lower => last[0],
        Side::Upper => last[1],
    };
    let first = FunctionalSample { tau, t, tau_bar: None, t_bar: None, x: Some(level), side: Some(side), censored: false, truncated: false };
    if !matches!(cfg.barrier, BarrierSpec::Cluster) {
        return Ok(first);
    }
    let mut last2 = [t];
    let (lo, hi) = match side {
        Side::Lower => (f64::NEG_INFINITY, 0.0),
        Side::Upper => (0.0, f64::INFINITY),
    };
    match w.run(lo, hi, &[level], &mut last2) {
        PhaseEnd::Hit { time, .. } => Ok(FunctionalSample { tau_bar: Some(last2[0] - t), t_bar: Some(time), ..first }.scaled(PI_UNITS)),
        _ => Ok(trunc),
    }
}

/// Oracle paths for replicas `0..n` of `seed`.
pub fn oracle_many(cfg: &OracleConfig, n: usize, seed: u64) -> Result<Vec<FunctionalSample>> {
    cfg.validate()?;
    (0..n).into_par_iter().map(|i| sample_walk_oracle(cfg, replica_seed(seed, i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn green_masses_add_up() {
        let (a, b) = (1.0, 3.0);
        let lo = SideLaw::build(a, b, Side::Lower).unwrap();
        let up = SideLaw::build(a, b, Side::Upper).unwrap();
        assert!((lo.mass() - 0.75).abs() < 1e-12);
        assert!((up.mass() - 0.25).abs() < 1e-12);
        assert!(lo.atom_mass > 0.0 && up.atom_mass == 0.0);
    }

    #[test]
    fn walk_is_deterministic() {
        let cfg = OracleConfig::new(BarrierSpec::TwoSided { a: 1.0, b: 1.0 });
        assert_eq!(sample_walk_oracle(&cfg, 5).unwrap(), sample_walk_oracle(&cfg, 5).unwrap());
    }
}
