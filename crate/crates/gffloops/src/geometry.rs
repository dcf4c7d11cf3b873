//! Extremal distances, conformal radii and radius bounds of lattice loops.
//!
//! A lattice edge crossing a loop is cut at its midpoint: the free endpoint
//! couples to the loop value with conductance 2. Domain boundary vertices
//! keep conductance 1.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interfaces::{FineGrid, Loop};
use crate::lattice::{GridDomain, Link, MaskedProblem, Site};

pub const PCG_TOL: f64 = 1e-10;
pub const PCG_MAX_ITER: usize = 20_000;
/// Hole radii (in cells) for the puncture cross-check.
pub const PUNCTURE_RADII: [f64; 2] = [4.0, 8.0];
/// Smallest `r_minus` (in cells) at which the puncture cross-check runs.
pub const PUNCTURE_MIN_CELLS: f64 = 12.0;
/// Smallest `r_minus` (in cells) at which a conformal radius is reported.
pub const CR_MIN_CELLS: f64 = 2.0;

/// Shared per-domain data for geometry measurements.
pub struct GeometryContext<'a> {
    pub dom: &'a GridDomain,
    pub grid: &'a FineGrid,
    /// Green function at the origin of the reference lattice disk of radius `R`.
    pub g_ref: f64,
    ed_ref_puncture: [f64; 2],
}

enum OuterSide<'l> {
    Domain,
    Loop(&'l Loop),
    /// Lattice disk `i² + j² < K²` with midpoint-cut edges.
    RefDisk,
}

enum InnerSide<'l> {
    Boundary,
    Loop(&'l Loop),
    /// Lattice points within this many cells of the origin.
    Hole(f64),
    None,
}

impl<'a> GeometryContext<'a> {
    pub fn new(dom: &'a GridDomain, grid: &'a FineGrid) -> Result<Self> {
        let mut ctx = GeometryContext { dom, grid, g_ref: 0.0, ed_ref_puncture: [0.0; 2] };
        if dom.boundary_inner.is_empty() {
            ctx.g_ref = ctx.green_at_origin(&OuterSide::RefDisk)?;
            for (k, &rho) in PUNCTURE_RADII.iter().enumerate() {
                ctx.ed_ref_puncture[k] = ctx.band_ed(&OuterSide::RefDisk, &InnerSide::Hole(rho))?;
            }
        }
        Ok(ctx)
    }

    fn in_outer(&self, o: &OuterSide, i: i32, j: i32) -> bool {
        match o {
            OuterSide::Domain => matches!(self.dom.site(i, j), Site::Interior(_)),
            OuterSide::Loop(l) => matches!(self.dom.site(i, j), Site::Interior(_)) && l.contains_vertex(self.grid, i, j),
            OuterSide::RefDisk => ((i * i + j * j) as f64) < (self.dom.k as f64).powi(2),
        }
    }

    fn in_inner(&self, s: &InnerSide, i: i32, j: i32) -> bool {
        match s {
            InnerSide::Boundary => self.dom.site(i, j) == Site::Inner,
            InnerSide::Loop(l) => l.contains_vertex(self.grid, i, j),
            InnerSide::Hole(rho) => ((i * i + j * j) as f64) <= rho * rho,
            InnerSide::None => false,
        }
    }

    /// Free vertices lie inside `outer` and outside `inner`; outer side held at 0, inner side at 1.
    fn problem(&self, outer: &OuterSide, inner: &InnerSide) -> Result<MaskedProblem> {
        let free = |i: i32, j: i32| self.in_outer(outer, i, j) && !self.in_inner(inner, i, j);
        let link = |_: (i32, i32), (a, b): (i32, i32)| {
            if self.in_inner(inner, a, b) {
                let c = if matches!(inner, InnerSide::Loop(_)) { 2.0 } else { 1.0 };
                return Link::Fixed { conductance: c, value: 1.0 };
            }
            match (outer, self.dom.site(a, b)) {
                (OuterSide::RefDisk, _) => Link::Fixed { conductance: 2.0, value: 0.0 },
                (_, Site::Outer) => Link::Fixed { conductance: 1.0, value: 0.0 },
                (_, Site::Inner) => Link::Fixed { conductance: 1.0, value: 1.0 },
                (OuterSide::Loop(_), Site::Interior(_)) => Link::Fixed { conductance: 2.0, value: 0.0 },
                _ => Link::None,
            }
        };
        MaskedProblem::new(self.dom, &free, &link)
    }

    fn band_ed(&self, outer: &OuterSide, inner: &InnerSide) -> Result<f64> {
        let p = self.problem(outer, inner)?;
        if p.cells().is_empty() {
            return Err(Error::Precondition("no lattice vertex between the two boundaries".into()));
        }
        let u = p.solve(None, PCG_TOL, PCG_MAX_ITER)?;
        let e = p.energy(&u);
        if e == 0.0 {
            return Err(Error::Precondition("inner side holds no lattice vertex linked to the band".into()));
        }
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::Solver(format!("degenerate Dirichlet energy {e}")));
        }
        Ok(1.0 / e)
    }

    fn green_at_origin(&self, outer: &OuterSide) -> Result<f64> {
        let p = self.problem(outer, &InnerSide::None)?;
        let o = p
            .index_of(0, 0)
            .ok_or_else(|| Error::Precondition("origin vertex is not free".into()))?;
        let mut e = vec![0.0; p.n()];
        e[o] = 1.0;
        let u = p.solve(Some(&e), PCG_TOL, PCG_MAX_ITER)?;
        Ok(u[o])
    }

    /// `ED(loop, outer boundary)`.
    pub fn ed_outer(&self, l: &Loop) -> Result<f64> {
        self.band_ed(&OuterSide::Domain, &InnerSide::Loop(l))
    }

    /// `ED(loop, inner boundary)` in an annulus.
    pub fn ed_inner(&self, l: &Loop) -> Result<f64> {
        if self.dom.boundary_inner.is_empty() {
            return Err(Error::Precondition("inner extremal distance needs an annulus".into()));
        }
        self.band_ed(&OuterSide::Loop(l), &InnerSide::Boundary)
    }

    /// `ED(outer, inner)` for nested loops (`inner` on the inside of `outer`).
    pub fn ed_between(&self, outer: &Loop, inner: &Loop) -> Result<f64> {
        self.band_ed(&OuterSide::Loop(outer), &InnerSide::Loop(inner))
    }

    /// `ED(∂_o, ∂_i)` of the annulus, with boundary-fitted conductances: an edge leaving the
    /// domain is cut where it meets the circle, at fraction `t` of its length, and gets conductance `1/t`.
    pub fn ed_domain(&self) -> Result<f64> {
        if self.dom.boundary_inner.is_empty() {
            return Err(Error::Precondition("domain extremal distance needs an annulus".into()));
        }
        let k = self.dom.k as f64;
        let rk = self.dom.inner_index_radius();
        let free = |i: i32, j: i32| matches!(self.dom.site(i, j), Site::Interior(_));
        let link = |(i, j): (i32, i32), (a, b): (i32, i32)| {
            let (rho, value) = match self.dom.site(a, b) {
                Site::Outer => (k, 0.0),
                Site::Inner => (rk, 1.0),
                _ => return Link::None,
            };
            let t = circle_crossing((i as f64, j as f64), ((a - i) as f64, (b - j) as f64), rho).max(MIN_CUT);
            Link::Fixed { conductance: 1.0 / t, value }
        };
        let p = MaskedProblem::new(self.dom, &free, &link)?;
        // start from the continuum profile
        let guess: Vec<f64> = p
            .cells()
            .iter()
            .map(|&(i, j)| (((i * i + j * j) as f64).sqrt() / k).ln() / (rk / k).ln())
            .map(|u| u.clamp(0.0, 1.0))
            .collect();
        let u = p.solve_from(None, Some(&guess), PCG_TOL, PCG_MAX_ITER)?;
        Ok(1.0 / p.energy(&u))
    }

    fn cr_ready(&self, l: &Loop) -> Result<bool> {
        if !self.dom.boundary_inner.is_empty() {
            return Err(Error::Precondition("conformal radius is measured in disk domains".into()));
        }
        let (rm, _) = loop_metrics(l);
        Ok(l.surrounds_origin && l.contains_vertex(self.grid, 0, 0) && rm >= CR_MIN_CELLS * self.dom.h)
    }

    /// `-log CR(0, interior of loop)` by Green calibration; `None` when the loop is within two cells of the origin.
    pub fn conformal_radius(&self, l: &Loop) -> Result<Option<f64>> {
        if !self.cr_ready(l)? {
            return Ok(None);
        }
        let g = self.green_at_origin(&OuterSide::Loop(l))?;
        let r_ref = self.dom.shape.outer_radius();
        Ok(Some(-r_ref.ln() + 2.0 * PI * (self.g_ref - g)))
    }

    /// Puncture estimate: `2π (ED_ref(ρ) - ED_loop(ρ))` against the reference disk, extrapolated in `ρ`.
    pub fn conformal_radius_puncture(&self, l: &Loop) -> Result<Option<f64>> {
        if !self.cr_ready(l)? || loop_metrics(l).0 < PUNCTURE_MIN_CELLS * self.dom.h {
            return Ok(None);
        }
        let r_ref = self.dom.shape.outer_radius();
        let mut v = [0.0; 2];
        for (k, &rho) in PUNCTURE_RADII.iter().enumerate() {
            let ed = self.band_ed(&OuterSide::Loop(l), &InnerSide::Hole(rho))?;
            v[k] = 2.0 * PI * (self.ed_ref_puncture[k] - ed) - r_ref.ln();
        }
        let ratio = PUNCTURE_RADII[1] / PUNCTURE_RADII[0];
        Ok(Some((ratio * v[0] - v[1]) / (ratio - 1.0)))
    }
}

/// Smallest cut fraction; keeps conductances bounded when a vertex sits on the circle.
const MIN_CUT: f64 = 0.01;

/// Fraction `t ∈ [0, 1]` along `x + t d` at which `|·| = rho`, crossing from one side to the other.
fn circle_crossing(x: (f64, f64), d: (f64, f64), rho: f64) -> f64 {
    // |x|² + 2t x·d + t²|d|² = rho²
    let a = d.0 * d.0 + d.1 * d.1;
    let b = x.0 * d.0 + x.1 * d.1;
    let c = x.0 * x.0 + x.1 * x.1 - rho * rho;
    let disc = (b * b - a * c).max(0.0).sqrt();
    let roots = [(-b - disc) / a, (-b + disc) / a];
    roots.into_iter().filter(|t| (0.0..=1.0).contains(t)).fold(1.0, f64::min)
}

/// Extremal distance between two vertex sets: harmonic potential 0 on `a`, 1 on `b`, insulated elsewhere.
pub fn extremal_distance(dom: &GridDomain, a: &[(i32, i32)], b: &[(i32, i32)]) -> Result<f64> {
    use std::collections::HashSet;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("extremal distance needs two nonempty sets".into()));
    }
    let sa: HashSet<(i32, i32)> = a.iter().copied().collect();
    let sb: HashSet<(i32, i32)> = b.iter().copied().collect();
    if !sa.is_disjoint(&sb) {
        return Err(Error::Precondition("sets overlap".into()));
    }
    for &(i, j) in a {
        for (di, dj) in crate::lattice::NEIGHBORS {
            if sb.contains(&(i + di, j + dj)) {
                return Err(Error::Precondition(format!("sets touch at ({i},{j})")));
            }
        }
    }
    let free = |i: i32, j: i32| matches!(dom.site(i, j), Site::Interior(_)) && !sa.contains(&(i, j)) && !sb.contains(&(i, j));
    let link = |_: (i32, i32), to: (i32, i32)| {
        if sa.contains(&to) {
            Link::Fixed { conductance: 1.0, value: 0.0 }
        } else if sb.contains(&to) {
            Link::Fixed { conductance: 1.0, value: 1.0 }
        } else {
            Link::None
        }
    };
    let p = MaskedProblem::new(dom, &free, &link)?;
    let u = p.solve(None, PCG_TOL, PCG_MAX_ITER)?;
    let e = p.energy(&u);
    if !(e > 0.0) {
        return Err(Error::Precondition("sets are not connected through the domain".into()));
    }
    Ok(1.0 / e)
}

/// `(r_minus, r_plus)`: extreme distances of the loop's dual-edge midpoints from the origin.
pub fn loop_metrics(l: &Loop) -> (f64, f64) {
    l.dual_edges
        .iter()
        .map(|p| p.0.hypot(p.1))
        .fold((f64::INFINITY, 0.0), |(a, b), r| (a.min(r), b.max(r)))
}

/// Loop bounding the non-solid cells whose centres satisfy `inside(x, y)`.
pub fn loop_from_shape(grid: &FineGrid, inside: impl Fn(f64, f64) -> bool) -> Loop {
    let mask = (0..grid.len())
        .map(|c| {
            let (x, y) = grid.point(c);
            !grid.is_solid(c) && inside(x, y)
        })
        .collect();
    Loop::from_inside(grid, mask)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryFlags {
    pub no_loop: bool,
    pub touches_boundary: bool,
    pub near_origin: bool,
    pub origin_on_cluster: bool,
    pub puncture_mismatch: bool,
}

impl GeometryFlags {
    pub fn degenerate(&self) -> bool {
        self.no_loop || self.near_origin || self.origin_on_cluster
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopGeometry {
    pub ed_outer: f64,
    pub ed_inner: Option<f64>,
    pub neg_log_cr: Option<f64>,
    pub neg_log_cr_puncture: Option<f64>,
    pub r_minus: f64,
    pub r_plus: f64,
    pub label: Option<f64>,
    /// Lattice spacing, used as the discretization slack.
    pub cell: f64,
    pub flags: GeometryFlags,
}

/// Relative agreement required between the two conformal radius methods.
pub const METHOD_AGREEMENT: f64 = 0.03;

/// Measures a loop: ED to the outer boundary, ED to the inner boundary (annulus) and `-log CR` (disk).
pub fn measure_loop(ctx: &GeometryContext, l: &Loop, label: Option<f64>) -> Result<LoopGeometry> {
    let (r_minus, r_plus) = loop_metrics(l);
    let h = ctx.dom.h;
    let mut g = LoopGeometry { r_minus, r_plus, label, cell: h, ..Default::default() };
    g.flags.touches_boundary = l.touches_boundary;
    g.ed_outer = ctx.ed_outer(l)?;
    if ctx.dom.boundary_inner.is_empty() {
        g.flags.near_origin = r_minus < CR_MIN_CELLS * h || !l.contains_vertex(ctx.grid, 0, 0);
        g.neg_log_cr = ctx.conformal_radius(l)?;
        g.neg_log_cr_puncture = ctx.conformal_radius_puncture(l)?;
        if let (Some(a), Some(b)) = (g.neg_log_cr, g.neg_log_cr_puncture) {
            g.flags.puncture_mismatch = (a - b).abs() > METHOD_AGREEMENT * a.abs().max(b.abs());
        }
    } else {
        g.ed_inner = Some(ctx.ed_inner(l)?);
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub koebe: bool,
    pub r_plus_ed: bool,
    pub ratio: bool,
    pub ed_cr: bool,
}

impl DistortionReport {
    pub fn all(&self) -> bool {
        self.koebe && self.r_plus_ed && self.ratio && self.ed_cr
    }
}

/// Deterministic conformal-geometry bounds, each with one cell diameter of slack.
pub fn distortion_report(g: &LoopGeometry) -> Result<DistortionReport> {
    let nlc = g.neg_log_cr.ok_or_else(|| Error::Precondition("distortion report needs a conformal radius".into()))?;
    let s = g.cell * std::f64::consts::SQRT_2;
    let cr = (-nlc).exp();
    let e = (-2.0 * PI * g.ed_outer).exp();
    let log_slack = s / g.r_minus + s / g.r_plus;
    let ratio = (g.r_plus / g.r_minus).ln();
    let ratio_lo = (e / cr).ln();
    Ok(DistortionReport {
        koebe: cr / 4.0 - s <= g.r_minus && g.r_minus <= cr + s,
        r_plus_ed: e - s <= g.r_plus && g.r_plus <= 4.0 * e + s,
        ratio: ratio_lo - log_slack <= ratio && ratio <= ratio_lo + 16f64.ln() + log_slack,
        ed_cr: 2.0 * PI * g.ed_outer <= nlc + s / g.r_minus,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFixture {
    pub name: String,
    pub kind: String,
    pub semi_axes: [f64; 2],
    pub neg_log_cr: f64,
    #[serde(default)]
    pub ed_outer: Option<f64>,
    pub method: String,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub version: u32,
    pub fixture: Vec<ShapeFixture>,
}

pub const FIXTURES: &str = include_str!("../fixtures/geometry.toml");

/// Parses and validates a fixtures file.
pub fn parse_fixtures(text: &str) -> Result<FixtureFile> {
    let f: FixtureFile = toml::from_str(text).map_err(|e| Error::Fixture(format!("geometry fixtures: {e}")))?;
    if f.version != 1 {
        return Err(Error::Fixture(format!("geometry fixtures: unsupported version {}", f.version)));
    }
    for x in &f.fixture {
        let [a, b] = x.semi_axes;
        let ok = a > 0.0 && b > 0.0 && a < 1.0 && b <= a && x.neg_log_cr.is_finite() && x.neg_log_cr > 0.0;
        let ok = ok && matches!(x.kind.as_str(), "circle" | "ellipse") && (x.kind != "circle" || a == b);
        if !ok {
            return Err(Error::Fixture(format!("fixture '{}' is malformed", x.name)));
        }
        if x.kind == "circle" && (x.neg_log_cr - (1.0 / a).ln()).abs() > 1e-12 {
            return Err(Error::Fixture(format!("fixture '{}' disagrees with -log r", x.name)));
        }
    }
    Ok(f)
}

pub fn fixtures() -> Result<FixtureFile> {
    parse_fixtures(FIXTURES)
}

/// Loop of a fixture shape centred at the origin.
pub fn fixture_loop(grid: &FineGrid, f: &ShapeFixture) -> Loop {
    let [a, b] = f.semi_axes;
    loop_from_shape(grid, |x, y| (x / a).powi(2) + (y / b).powi(2) < 1.0)
}
