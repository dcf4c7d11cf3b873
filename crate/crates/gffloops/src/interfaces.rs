//! Metric-graph level sets of a lattice field on a doubled ("fine") grid.
//!
//! Fine cell `(p, q)` is a lattice vertex when both coordinates are even, an
//! edge midpoint when exactly one is odd, and a plaquette when both are odd.
//! Clusters and explorations live on vertex and edge cells; their
//! complements additionally contain plaquettes, which touch their four
//! corner vertices diagonally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{FieldSample, GridDomain, Site};
use crate::laws::{bridge_stay_probability, GAP};
use crate::rng::hashed_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Vertex,
    Edge,
    Face,
    Outer,
    Inner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Per-edge Brownian bridge extrema.
    Bridge,
    /// Linear interpolation along edges (deterministic test mode).
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySelector {
    Outer,
    Inner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    OuterToInner,
    InnerToOuter,
}

#[derive(Clone, Debug)]
pub struct FineGrid {
    /// Lattice index radius of the domain.
    pub k: i32,
    pub n: usize,
    pub h: f64,
    kind: Vec<CellKind>,
}

impl FineGrid {
    pub fn new(dom: &GridDomain) -> Self {
        let k = dom.k;
        let o = 2 * k + 2;
        let n = (2 * o + 1) as usize;
        let mid = 0.5 * (dom.inner_index_radius() + k as f64);
        let annulus = !dom.boundary_inner.is_empty();
        let solid_of = |i: i32, j: i32| match dom.site(i, j) {
            Site::Inner => CellKind::Inner,
            Site::Outer => CellKind::Outer,
            _ => {
                if annulus && (((i * i + j * j) as f64).sqrt() < mid) {
                    CellKind::Inner
                } else {
                    CellKind::Outer
                }
            }
        };
        let in_domain = |i: i32, j: i32| !matches!(dom.site(i, j), Site::Exterior);
        let interior = |i: i32, j: i32| matches!(dom.site(i, j), Site::Interior(_));
        let mut kind = vec![CellKind::Outer; n * n];
        for q in -o..=o {
            for p in -o..=o {
                let c = (p + o) as usize + n * (q + o) as usize;
                let (pe, qe) = (p.rem_euclid(2) == 0, q.rem_euclid(2) == 0);
                kind[c] = match (pe, qe) {
                    (true, true) => {
                        let (i, j) = (p / 2, q / 2);
                        if interior(i, j) {
                            CellKind::Vertex
                        } else {
                            solid_of(i, j)
                        }
                    }
                    (false, true) | (true, false) => {
                        let ((i1, j1), (i2, j2)) = edge_ends_of(p, q);
                        if (interior(i1, j1) || interior(i2, j2)) && in_domain(i1, j1) && in_domain(i2, j2) {
                            CellKind::Edge
                        } else if solid_of(i1, j1) == CellKind::Inner || solid_of(i2, j2) == CellKind::Inner {
                            CellKind::Inner
                        } else {
                            CellKind::Outer
                        }
                    }
                    (false, false) => {
                        let (i0, j0) = ((p - 1) / 2, (q - 1) / 2);
                        let corners = [(i0, j0), (i0 + 1, j0), (i0, j0 + 1), (i0 + 1, j0 + 1)];
                        if corners.iter().all(|&(i, j)| interior(i, j)) {
                            CellKind::Face
                        } else if corners.iter().any(|&(i, j)| !interior(i, j) && solid_of(i, j) == CellKind::Inner) {
                            CellKind::Inner
                        } else {
                            CellKind::Outer
                        }
                    }
                };
            }
        }
        FineGrid { k, n, h: dom.h, kind }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.kind.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.kind.is_empty()
    }

    #[inline]
    fn off(&self) -> i32 {
        2 * self.k + 2
    }

    #[inline]
    pub fn cell(&self, p: i32, q: i32) -> Option<usize> {
        let o = self.off();
        (p >= -o && p <= o && q >= -o && q <= o).then(|| (p + o) as usize + self.n * (q + o) as usize)
    }

    #[inline]
    pub fn pos(&self, c: usize) -> (i32, i32) {
        let o = self.off();
        ((c % self.n) as i32 - o, (c / self.n) as i32 - o)
    }

    #[inline]
    pub fn kind(&self, c: usize) -> CellKind {
        self.kind[c]
    }

    pub fn is_solid(&self, c: usize) -> bool {
        matches!(self.kind[c], CellKind::Outer | CellKind::Inner)
    }

    pub fn vertex_cell(&self, i: i32, j: i32) -> Option<usize> {
        self.cell(2 * i, 2 * j)
    }

    /// The plaquette whose lower-left corner is the origin vertex.
    pub fn origin_cell(&self) -> usize {
        self.cell(1, 1).expect("origin plaquette in grid")
    }

    /// Domain coordinates of a cell centre.
    pub fn point(&self, c: usize) -> (f64, f64) {
        let (p, q) = self.pos(c);
        (p as f64 * 0.5 * self.h, q as f64 * 0.5 * self.h)
    }

    #[inline]
    pub fn neighbors4(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (p, q) = self.pos(c);
        [(1, 0), (0, 1), (-1, 0), (0, -1)].into_iter().filter_map(move |(a, b)| self.cell(p + a, q + b))
    }

    /// 4-neighbours plus plaquette/corner-vertex diagonals.
    #[inline]
    pub fn neighbors_planar(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (p, q) = self.pos(c);
        let diag = p.rem_euclid(2) == q.rem_euclid(2);
        [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)]
            .into_iter()
            .enumerate()
            .filter(move |&(n, _)| n < 4 || diag)
            .filter_map(move |(_, (a, b))| self.cell(p + a, q + b))
    }

    /// Lattice endpoints of an edge cell.
    pub fn edge_ends(&self, c: usize) -> ((i32, i32), (i32, i32)) {
        let (p, q) = self.pos(c);
        edge_ends_of(p, q)
    }

    pub fn cells_of_kind(&self, k: CellKind) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&c| self.kind[c] == k)
    }

    /// Solid cells at even-even positions: boundary vertices of one component.
    pub fn boundary_vertex_cells(&self, k: CellKind) -> Vec<usize> {
        (0..self.len())
            .filter(|&c| {
                let (p, q) = self.pos(c);
                self.kind[c] == k && p.rem_euclid(2) == 0 && q.rem_euclid(2) == 0
            })
            .collect()
    }
}

fn edge_ends_of(p: i32, q: i32) -> ((i32, i32), (i32, i32)) {
    if p.rem_euclid(2) == 1 {
        let i = (p - 1).div_euclid(2);
        ((i, q / 2), (i + 1, q / 2))
    } else {
        let j = (q - 1).div_euclid(2);
        ((p / 2, j), (p / 2, j + 1))
    }
}

/// `P(max < hi | min = m)` for a unit-time Brownian bridge from `u` to `w`.
pub fn bridge_max_below_given_min(u: f64, w: f64, m: f64, hi: f64) -> f64 {
    if hi <= u.max(w) {
        return 0.0;
    }
    if !hi.is_finite() {
        return 1.0;
    }
    let d = hi - m;
    let z20 = w + u - 2.0 * m;
    if z20 <= 0.0 {
        return 1.0;
    }
    let e = |z: f64| (-(z * z - z20 * z20) / 2.0).exp();
    let mut num = 0.0;
    for n in 0..200i32 {
        let ks: &[i32] = if n == 0 { &[0] } else { &[n, -n] };
        let mut mx: f64 = 0.0;
        for &k in ks {
            let kf = k as f64;
            let z1 = w - u + 2.0 * kf * d;
            let z2 = w + u - 2.0 * m + 2.0 * kf * d;
            let t = 2.0 * kf * z1 * e(z1) - (2.0 + 2.0 * kf) * z2 * e(z2);
            num += t;
            mx = mx.max(t.abs());
        }
        if n > 0 && mx < 1e-16 * num.abs().max(1e-300) {
            break;
        }
    }
    (num / (-2.0 * z20)).clamp(0.0, 1.0)
}

fn stay_probability(u: f64, w: f64, lo: f64, hi: f64, s: f64) -> f64 {
    if !(u > lo && u < hi && w > lo && w < hi) {
        return 0.0;
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => bridge_stay_probability(u, w, lo, hi, s),
        (true, false) => 1.0 - (-2.0 * (u - lo) * (w - lo) / s).exp(),
        (false, true) => 1.0 - (-2.0 * (hi - u) * (hi - w) / s).exp(),
        (false, false) => 1.0,
    }
}

/// A field together with its fine grid and edge-refinement randomness.
#[derive(Clone, Copy)]
pub struct Scene<'a> {
    pub dom: &'a GridDomain,
    pub grid: &'a FineGrid,
    pub field: &'a FieldSample,
    pub seed: u64,
    pub refinement: Refinement,
}

impl<'a> Scene<'a> {
    pub fn new(dom: &'a GridDomain, grid: &'a FineGrid, field: &'a FieldSample) -> Self {
        Scene { dom, grid, field, seed: field.edge_seed, refinement: Refinement::Bridge }
    }

    pub fn with_refinement(mut self, r: Refinement) -> Self {
        self.refinement = r;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    #[inline]
    pub fn value(&self, i: i32, j: i32) -> f64 {
        self.field.at(self.dom, i, j).unwrap_or(f64::NAN)
    }

    /// Field value at a vertex cell (interior or boundary vertex).
    #[inline]
    pub fn cell_value(&self, c: usize) -> f64 {
        let (p, q) = self.grid.pos(c);
        self.value(p / 2, q / 2)
    }

    #[inline]
    fn edge_values(&self, c: usize) -> (f64, f64) {
        let ((i1, j1), (i2, j2)) = self.grid.edge_ends(c);
        (self.value(i1, j1), self.value(i2, j2))
    }

    /// Minimum of the edge bridge, driven by the edge's first hashed uniform.
    #[inline]
    pub fn edge_min(&self, c: usize) -> f64 {
        let (a, b) = self.edge_values(c);
        match self.refinement {
            Refinement::Off => a.min(b),
            Refinement::Bridge => {
                let u = hashed_uniform(self.seed, c as u64, 0);
                let h = 0.5 * (a - b);
                0.5 * (a + b) - (h * h - 0.5 * u.ln()).sqrt()
            }
        }
    }

    #[inline]
    fn edge_max_below(&self, c: usize, m: f64, hi: f64) -> bool {
        if !hi.is_finite() {
            return true;
        }
        let (a, b) = self.edge_values(c);
        match self.refinement {
            Refinement::Off => a.max(b) < hi,
            Refinement::Bridge => hashed_uniform(self.seed, c as u64, 1) < bridge_max_below_given_min(a, b, m, hi),
        }
    }

    /// Whether the metric-graph edge stays strictly inside `(lo, hi)`.
    pub fn edge_in_window(&self, c: usize, lo: f64, hi: f64) -> bool {
        let (a, b) = self.edge_values(c);
        if !(a > lo && a < hi && b > lo && b < hi) {
            return false;
        }
        let m = if lo.is_finite() || hi.is_finite() { self.edge_min(c) } else { return true };
        m > lo && self.edge_max_below(c, m, hi)
    }

    #[inline]
    pub fn vertex_in_window(&self, c: usize, lo: f64, hi: f64) -> bool {
        let v = self.cell_value(c);
        v > lo && v < hi
    }

    /// Barrier first reached along edge `c` when leaving `(lo, hi)` from value `from` towards `to`.
    fn exit_level(&self, c: usize, to: f64, lo: f64, hi: f64, along_edge: bool) -> f64 {
        if to >= hi {
            return hi;
        }
        if to <= lo {
            return lo;
        }
        if !lo.is_finite() {
            return hi;
        }
        if !hi.is_finite() {
            return lo;
        }
        if along_edge && self.edge_min(c) <= lo {
            return lo;
        }
        if along_edge {
            return hi;
        }
        if to - lo < hi - to {
            lo
        } else {
            hi
        }
    }

    /// Connection probability test for a partial edge re-entered from level `alpha`.
    fn entry_open(&self, c: usize, alpha: f64, to: f64, lo: f64, hi: f64) -> bool {
        if !(to > lo && to < hi) {
            return false;
        }
        match self.refinement {
            Refinement::Off => true,
            Refinement::Bridge => hashed_uniform(self.seed, c as u64, 2) < stay_probability(alpha, to, lo, hi, 0.5),
        }
    }
}

/// Lattice edges open at level `h`: both endpoints above `h` and the bridge minimum above `h`.
pub fn open_edges_at_level(scene: &Scene, h: f64) -> Vec<((i32, i32), (i32, i32))> {
    scene
        .grid
        .cells_of_kind(CellKind::Edge)
        .filter(|&c| scene.edge_in_window(c, h, f64::INFINITY))
        .map(|c| scene.grid.edge_ends(c))
        .collect()
}

/// An interface between two fine-cell regions.
#[derive(Clone, Debug)]
pub struct Loop {
    /// Cells on the origin / inner-boundary side.
    pub inside: Vec<bool>,
    /// Midpoints of the separating cell faces, in domain coordinates.
    pub dual_edges: Vec<(f64, f64)>,
    pub surrounds_origin: bool,
    /// Within one lattice cell of the outer boundary.
    pub touches_boundary: bool,
}

impl Loop {
    pub fn from_inside(grid: &FineGrid, inside: Vec<bool>) -> Self {
        let mut dual_edges = Vec::new();
        let mut touches = false;
        for c in 0..grid.len() {
            if !inside[c] {
                continue;
            }
            let (p, q) = grid.pos(c);
            for d in grid.neighbors4(c) {
                if !inside[d] {
                    let (a, b) = grid.pos(d);
                    dual_edges.push(((p + a) as f64 * 0.25 * grid.h, (q + b) as f64 * 0.25 * grid.h));
                }
            }
            if !touches && grid.kind(c) != CellKind::Inner {
                for a in -2..=2 {
                    for b in -2..=2 {
                        if let Some(d) = grid.cell(p + a, q + b) {
                            if grid.kind(d) == CellKind::Outer && !inside[d] {
                                touches = true;
                            }
                        }
                    }
                }
            }
        }
        let surrounds_origin = inside[grid.origin_cell()];
        Loop { inside, dual_edges, surrounds_origin, touches_boundary: touches }
    }

    pub fn contains_vertex(&self, grid: &FineGrid, i: i32, j: i32) -> bool {
        grid.vertex_cell(i, j).is_some_and(|c| self.inside[c])
    }

    /// Interior lattice vertices on the inside of the loop.
    pub fn enclosed_vertices(&self, grid: &FineGrid) -> Vec<(i32, i32)> {
        grid.cells_of_kind(CellKind::Vertex)
            .filter(|&c| self.inside[c])
            .map(|c| {
                let (p, q) = grid.pos(c);
                (p / 2, q / 2)
            })
            .collect()
    }
}

fn flood(grid: &FineGrid, seeds: &[usize], planar: bool, pass: impl Fn(usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; grid.len()];
    let mut stack = Vec::with_capacity(seeds.len());
    for &s in seeds {
        if !seen[s] {
            seen[s] = true;
            stack.push(s);
        }
    }
    while let Some(c) = stack.pop() {
        let mut visit = |d: usize| {
            if !seen[d] && pass(d) {
                seen[d] = true;
                stack.push(d);
            }
        };
        if planar {
            grid.neighbors_planar(c).for_each(&mut visit);
        } else {
            grid.neighbors4(c).for_each(&mut visit);
        }
    }
    seen
}

struct Dsu {
    parent: Vec<u32>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb) as usize] = ra.min(rb);
        }
    }
}

const NO_CLUSTER: u32 = u32::MAX;

/// Sign-cluster labels per fine cell (`NO_CLUSTER` off the clusters) and the sign of each cell.
fn sign_cluster_labels(scene: &Scene) -> Vec<u32> {
    let g = scene.grid;
    let open: Vec<i8> = (0..g.len())
        .map(|c| match g.kind(c) {
            CellKind::Vertex => {
                let v = scene.cell_value(c);
                (v > 0.0) as i8 - (v < 0.0) as i8
            }
            CellKind::Edge => {
                if scene.edge_in_window(c, 0.0, f64::INFINITY) {
                    1
                } else if scene.edge_in_window(c, f64::NEG_INFINITY, 0.0) {
                    -1
                } else {
                    0
                }
            }
            _ => 0,
        })
        .collect();
    let mut dsu = Dsu::new(g.len());
    for c in 0..g.len() {
        if g.kind(c) != CellKind::Edge || open[c] == 0 {
            continue;
        }
        for d in g.neighbors4(c) {
            if g.kind(d) == CellKind::Vertex && open[d] == open[c] {
                dsu.union(c as u32, d as u32);
            }
        }
    }
    (0..g.len()).map(|c| if open[c] != 0 { dsu.find(c as u32) } else { NO_CLUSTER }).collect()
}

#[derive(Clone, Debug)]
pub struct ClusterResult {
    /// `+1` or `-1`.
    pub sign: f64,
    /// Sign times `2λ`.
    pub label: f64,
    pub cells: Vec<usize>,
    /// Outer boundary of the cluster.
    pub outer: Loop,
    /// Boundary of the complementary component containing the origin.
    pub inner: Loop,
    pub origin_on_cluster: bool,
}

/// Outermost sign cluster surrounding the origin, ignoring clusters adjacent to the boundary.
pub fn sign_clusters_outermost(scene: &Scene) -> Result<Option<ClusterResult>> {
    if !scene.dom.boundary_inner.is_empty() {
        return Err(Error::Precondition("sign cluster extraction needs a disk domain".into()));
    }
    let g = scene.grid;
    if g.kind(g.origin_cell()) != CellKind::Face {
        return Err(Error::Precondition("origin plaquette is not interior".into()));
    }
    let label = sign_cluster_labels(scene);
    let mut excluded = std::collections::HashSet::new();
    // a cluster vertex with a boundary neighbour reaches the boundary in the continuum limit
    for &(i, j) in &scene.dom.boundary_outer {
        for (di, dj) in crate::lattice::NEIGHBORS {
            if let Some(c) = g.vertex_cell(i + di, j + dj) {
                if g.kind(c) == CellKind::Vertex && label[c] != NO_CLUSTER {
                    excluded.insert(label[c]);
                }
            }
        }
    }
    let outer_seeds: Vec<usize> = g.cells_of_kind(CellKind::Outer).collect();
    let r0 = flood(g, &outer_seeds, true, |d| {
        !g.is_solid(d) && (label[d] == NO_CLUSTER || excluded.contains(&label[d]))
    });
    let mut w = std::collections::HashSet::new();
    for c in 0..g.len() {
        if r0[c] {
            for d in g.neighbors_planar(c) {
                let l = label[d];
                if l != NO_CLUSTER && !excluded.contains(&l) {
                    w.insert(l);
                }
            }
        }
    }
    let origin = g.origin_cell();
    let region = flood(g, &[origin], true, |d| !g.is_solid(d) && (label[d] == NO_CLUSTER || !w.contains(&label[d])));
    if (0..g.len()).any(|c| region[c] && r0[c]) {
        return Ok(None);
    }
    let mut adjacent = std::collections::BTreeSet::new();
    for c in 0..g.len() {
        if region[c] {
            for d in g.neighbors_planar(c) {
                if w.contains(&label[d]) {
                    adjacent.insert(label[d]);
                }
            }
        }
    }
    let star = match adjacent.len() {
        1 => *adjacent.iter().next().unwrap(),
        0 => return Err(Error::Exploration("origin region enclosed without a surrounding cluster".into())),
        n => return Err(Error::Exploration(format!("{n} outermost clusters surround the origin"))),
    };
    let cells: Vec<usize> = (0..g.len()).filter(|&c| label[c] == star).collect();
    let sign = if scene.cell_value(*cells.iter().find(|&&c| g.kind(c) == CellKind::Vertex).unwrap()) > 0.0 { 1.0 } else { -1.0 };
    let outside = flood(g, &outer_seeds, true, |d| label[d] != star);
    let outer = Loop::from_inside(g, outside.iter().map(|&o| !o).collect());
    let inner_region = flood(g, &[origin], true, |d| !g.is_solid(d) && label[d] != star);
    let inner = Loop::from_inside(g, inner_region);
    let origin_on_cluster = g.vertex_cell(0, 0).is_some_and(|c| label[c] == star);
    Ok(Some(ClusterResult { sign, label: sign * GAP, cells, outer, inner, origin_on_cluster }))
}

/// Result of one exploration step.
#[derive(Clone, Debug)]
pub struct Step {
    /// Cells added by the step.
    pub explored: Vec<bool>,
    /// `None` when the step reached the terminal boundary or origin.
    pub loop_: Option<Loop>,
    pub label: Option<f64>,
    /// Fraction of frontier edges agreeing with the label.
    pub purity: f64,
}

/// Nested local-set exploration from one boundary towards the origin or the other boundary.
pub struct Explorer<'s, 'a> {
    scene: &'s Scene<'a>,
    target_seeds: Vec<usize>,
    target_kind: Option<CellKind>,
    start_seeds: Vec<usize>,
    /// Current region still to be explored (target side of the last loop).
    pub region: Vec<bool>,
    /// Boundary value of the region on its explored side.
    pub alpha: f64,
    first: bool,
    pub terminated: bool,
}

impl<'s, 'a> Explorer<'s, 'a> {
    pub fn new(scene: &'s Scene<'a>, from: BoundarySelector) -> Result<Self> {
        let g = scene.grid;
        let annulus = !scene.dom.boundary_inner.is_empty();
        let (start_kind, target_kind) = match (from, annulus) {
            (BoundarySelector::Outer, false) => (CellKind::Outer, None),
            (BoundarySelector::Outer, true) => (CellKind::Outer, Some(CellKind::Inner)),
            (BoundarySelector::Inner, true) => (CellKind::Inner, Some(CellKind::Outer)),
            (BoundarySelector::Inner, false) => {
                return Err(Error::Precondition("inner-boundary exploration needs an annulus".into()))
            }
        };
        let target_seeds = match target_kind {
            None => {
                if g.kind(g.origin_cell()) != CellKind::Face {
                    return Err(Error::Precondition("origin plaquette is not interior".into()));
                }
                vec![g.origin_cell()]
            }
            Some(k) => g.cells_of_kind(k).collect(),
        };
        let region = (0..g.len()).map(|c| g.kind(c) != start_kind).collect();
        let alpha = if start_kind == CellKind::Inner { scene.field.inner_value } else { scene.field.outer_value };
        Ok(Explorer {
            scene,
            target_seeds,
            target_kind,
            start_seeds: g.boundary_vertex_cells(start_kind),
            region,
            alpha,
            first: true,
            terminated: false,
        })
    }

    /// Explores the set connected to the current loop on which the field stays in `(lo, hi)`.
    pub fn step(&mut self, lo: f64, hi: f64) -> Result<Step> {
        if self.terminated {
            return Err(Error::Exploration("exploration already terminated".into()));
        }
        let sc = self.scene;
        let g = sc.grid;
        let mut explored = vec![false; g.len()];
        let mut stack = Vec::new();
        let mut touched_target = false;
        if self.first {
            for &s in &self.start_seeds {
                for d in g.neighbors4(s) {
                    if g.kind(d) == CellKind::Edge && !explored[d] && sc.edge_in_window(d, lo, hi) {
                        explored[d] = true;
                        stack.push(d);
                    }
                }
            }
        } else {
            for c in g.cells_of_kind(CellKind::Edge) {
                if !self.region[c] {
                    continue;
                }
                let ((i1, j1), (i2, j2)) = g.edge_ends(c);
                let (c1, c2) = (g.vertex_cell(i1, j1).unwrap(), g.vertex_cell(i2, j2).unwrap());
                let y = match (self.region[c1], self.region[c2]) {
                    (false, true) => c2,
                    (true, false) => c1,
                    _ => continue,
                };
                if g.kind(y) == CellKind::Vertex && sc.entry_open(c, self.alpha, sc.cell_value(y), lo, hi) {
                    explored[c] = true;
                    stack.push(c);
                }
            }
        }
        while let Some(c) = stack.pop() {
            match g.kind(c) {
                CellKind::Edge => {
                    let ((i1, j1), (i2, j2)) = g.edge_ends(c);
                    for v in [g.vertex_cell(i1, j1).unwrap(), g.vertex_cell(i2, j2).unwrap()] {
                        match g.kind(v) {
                            CellKind::Vertex => {
                                if !explored[v] && self.region[v] && sc.vertex_in_window(v, lo, hi) {
                                    explored[v] = true;
                                    stack.push(v);
                                }
                            }
                            k if Some(k) == self.target_kind => touched_target = true,
                            _ => {}
                        }
                    }
                }
                CellKind::Vertex => {
                    for d in g.neighbors4(c) {
                        if !explored[d] && self.region[d] && g.kind(d) == CellKind::Edge && sc.edge_in_window(d, lo, hi) {
                            explored[d] = true;
                            stack.push(d);
                        }
                    }
                }
                _ => {}
            }
        }
        let origin_reached = self.target_kind.is_none() && g.vertex_cell(0, 0).is_some_and(|c| explored[c]);
        let region = &self.region;
        let new_region = flood(g, &self.target_seeds, true, |d| region[d] && !explored[d] && !g.is_solid(d));
        let has_vertex = (0..g.len()).any(|c| new_region[c] && g.kind(c) == CellKind::Vertex);
        if touched_target || origin_reached || !has_vertex {
            self.terminated = true;
            return Ok(Step { explored, loop_: None, label: None, purity: 1.0 });
        }
        let (label, purity) = self.vote(&explored, &new_region, lo, hi);
        let lp = Loop::from_inside(g, new_region.clone());
        self.region = new_region;
        self.alpha = label;
        self.first = false;
        Ok(Step { explored, loop_: Some(lp), label: Some(label), purity })
    }

    fn vote(&self, explored: &[bool], new_region: &[bool], lo: f64, hi: f64) -> (f64, f64) {
        let sc = self.scene;
        let g = sc.grid;
        let (mut n_lo, mut n_hi) = (0usize, 0usize);
        for c in g.cells_of_kind(CellKind::Edge) {
            if !new_region[c] {
                continue;
            }
            let ((i1, j1), (i2, j2)) = g.edge_ends(c);
            let (c1, c2) = (g.vertex_cell(i1, j1).unwrap(), g.vertex_cell(i2, j2).unwrap());
            let level = match (new_region[c1], new_region[c2]) {
                (false, true) | (true, false) => {
                    let (x, y) = if new_region[c2] { (c1, c2) } else { (c2, c1) };
                    let along = explored[x] || (self.first && g.is_solid(x));
                    sc.exit_level(c, sc.cell_value(y), lo, hi, along)
                }
                (false, false) if explored[c1] && explored[c2] => sc.exit_level(c, sc.cell_value(c2), lo, hi, true),
                _ => continue,
            };
            if level == lo {
                n_lo += 1;
            } else {
                n_hi += 1;
            }
        }
        let total = (n_lo + n_hi).max(1) as f64;
        if n_hi >= n_lo {
            (hi, n_hi as f64 / total)
        } else {
            (lo, n_lo as f64 / total)
        }
    }
}

/// First passage set of level `-a` grown from a boundary, with the loop around the origin
/// (disk) or around the opposite boundary (annulus).
#[derive(Clone, Debug)]
pub struct FpsResult {
    pub explored: Vec<bool>,
    pub loop_: Option<Loop>,
}

pub fn fps_component(scene: &Scene, a: f64, from: BoundarySelector) -> Result<FpsResult> {
    if !(a > 0.0) {
        return Err(Error::Precondition(format!("FPS depth must be positive, got {a}")));
    }
    let mut ex = Explorer::new(scene, from)?;
    let s = ex.step(-a, f64::INFINITY)?;
    Ok(FpsResult { explored: s.explored, loop_: s.loop_ })
}

#[derive(Clone, Debug)]
pub struct LabeledLoopSequence {
    pub loops: Vec<Loop>,
    pub labels: Vec<f64>,
    pub purity: Vec<f64>,
    pub direction: Direction,
}

#[derive(Clone, Debug)]
pub struct IteratedResult {
    pub sequence: LabeledLoopSequence,
    /// Index into `sequence` of the loop where the stop levels were met.
    pub stopped_at: Option<usize>,
    /// The exploration reached the terminal boundary (or collapsed onto the origin).
    pub terminated: bool,
}

pub const DEFAULT_ITERATION_CAP: usize = 64;

/// `a + b` must be a positive multiple of `2λ`.
pub fn check_stop_levels(a: f64, b: f64) -> Result<()> {
    let m = (a + b) / GAP;
    if !(a > 0.0 && b > 0.0) || (m - m.round()).abs() > 1e-6 || m.round() < 1.0 {
        return Err(Error::Precondition(format!("stop levels (-{a}, {b}) need a, b > 0 and a+b in 2λℕ")));
    }
    if ((a / GAP) - (a / GAP).round()).abs() > 1e-6 {
        return Err(Error::Precondition(format!("stop level -{a} is not on the 2λ lattice")));
    }
    Ok(())
}

/// Iterated `A_{-2λ,2λ}` exploration; `stop = Some((a, b))` stops at the first label
/// (relative to the starting boundary value) in `{-a, b}`.
pub fn iterated_loops(scene: &Scene, stop: Option<(f64, f64)>, from: BoundarySelector, cap: usize) -> Result<IteratedResult> {
    if let Some((a, b)) = stop {
        check_stop_levels(a, b)?;
    }
    let mut ex = Explorer::new(scene, from)?;
    let alpha0 = ex.alpha;
    let direction = match from {
        BoundarySelector::Outer => Direction::OuterToInner,
        BoundarySelector::Inner => Direction::InnerToOuter,
    };
    let mut seq = LabeledLoopSequence { loops: vec![], labels: vec![], purity: vec![], direction };
    for _ in 0..cap {
        let alpha = ex.alpha;
        let s = ex.step(alpha - GAP, alpha + GAP)?;
        let (Some(lp), Some(label)) = (s.loop_, s.label) else {
            return Ok(IteratedResult { sequence: seq, stopped_at: None, terminated: true });
        };
        seq.loops.push(lp);
        seq.labels.push(label);
        seq.purity.push(s.purity);
        if let Some((a, b)) = stop {
            let rel = label - alpha0;
            if (rel + a).abs() < 1e-9 || (rel - b).abs() < 1e-9 {
                let at = seq.loops.len() - 1;
                return Ok(IteratedResult { sequence: seq, stopped_at: Some(at), terminated: false });
            }
        }
    }
    Err(Error::Exploration(format!("iteration cap {cap} exceeded")))
}

/// Annulus cluster construction: the first `A_{-2λ,2λ}` loop from the outer boundary, then the
/// level-0 first passage set grown inward from it; returns `(ℓ, ℓ̌, α)` with `ℓ̌` the outer
/// boundary of the annular component around the inner boundary.
pub fn cluster_loops(scene: &Scene) -> Result<Option<(Loop, Loop, f64)>> {
    let mut ex = Explorer::new(scene, BoundarySelector::Outer)?;
    let s1 = ex.step(-GAP, GAP)?;
    let (Some(l1), Some(alpha)) = (s1.loop_, s1.label) else { return Ok(None) };
    let (lo, hi) = if alpha > 0.0 { (0.0, f64::INFINITY) } else { (f64::NEG_INFINITY, 0.0) };
    let s2 = ex.step(lo, hi)?;
    Ok(s2.loop_.map(|l2| (l1, l2, alpha)))
}

/// Symmetric Hausdorff distance between the dual-edge point sets of two loops.
pub fn hausdorff(a: &Loop, b: &Loop) -> f64 {
    if a.dual_edges.is_empty() || b.dual_edges.is_empty() {
        return f64::INFINITY;
    }
    directed_hausdorff(&a.dual_edges, &b.dual_edges).max(directed_hausdorff(&b.dual_edges, &a.dual_edges))
}

/// `max_{p ∈ x} min_{q ∈ y} |p - q|`, with `y` bucketed on a square grid and searched ring by ring.
fn directed_hausdorff(x: &[(f64, f64)], y: &[(f64, f64)]) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in y {
        x0 = x0.min(p.0);
        y0 = y0.min(p.1);
        x1 = x1.max(p.0);
        y1 = y1.max(p.1);
    }
    // about as many buckets as points
    let ext = (x1 - x0).max(y1 - y0);
    let side = if ext > 0.0 { ext / (y.len() as f64).sqrt() } else { 1.0 };
    let nx = ((x1 - x0) / side) as i64 + 1;
    let ny = ((y1 - y0) / side) as i64 + 1;
    let mut start = vec![0usize; (nx * ny + 1) as usize];
    let key = |p: &(f64, f64)| {
        let i = (((p.0 - x0) / side) as i64).clamp(0, nx - 1);
        let j = (((p.1 - y0) / side) as i64).clamp(0, ny - 1);
        (i, j)
    };
    for p in y {
        let (i, j) = key(p);
        start[(j * nx + i) as usize + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut fill = start.clone();
    let mut pts = vec![(0.0, 0.0); y.len()];
    for p in y {
        let (i, j) = key(p);
        let k = (j * nx + i) as usize;
        pts[fill[k]] = *p;
        fill[k] += 1;
    }
    let mut worst: f64 = 0.0;
    for p in x {
        let ci = ((p.0 - x0) / side).floor() as i64;
        let cj = ((p.1 - y0) / side).floor() as i64;
        let mut best = f64::INFINITY;
        // rings closer than the bucket grid are empty
        let mut r = [0, -ci, ci - (nx - 1), -cj, cj - (ny - 1)].into_iter().max().unwrap();
        loop {
            // every bucket at Chebyshev ring distance r is at least (r - 1) * side away
            if r > 0 && ((r - 1) as f64 * side).powi(2) > best {
                break;
            }
            let (ilo, ihi, jlo, jhi) = (ci - r, ci + r, cj - r, cj + r);
            for j in jlo..=jhi {
                if j < 0 || j >= ny {
                    continue;
                }
                let ring_row = j == jlo || j == jhi;
                let mut i = ilo;
                while i <= ihi {
                    if i >= 0 && i < nx {
                        let k = (j * nx + i) as usize;
                        for q in &pts[start[k]..start[k + 1]] {
                            best = best.min((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2));
                        }
                    }
                    i += if ring_row || r == 0 { 1 } else { ihi - ilo };
                }
            }
            if ilo <= 0 && jlo <= 0 && ihi >= nx - 1 && jhi >= ny - 1 {
                break;
            }
            r += 1;
        }
        worst = worst.max(best);
    }
    worst.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::bridge_stay_probability;

    #[test]
    fn bucketed_hausdorff_matches_brute_force() {
        let brute = |x: &[(f64, f64)], y: &[(f64, f64)]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
                .sqrt()
        };
        let mut r = crate::rng::rng(4);
        use rand::Rng;
        for n in [1usize, 2, 7, 50, 400] {
            let x: Vec<(f64, f64)> = (0..n).map(|_| (r.gen_range(-1.0..1.0), r.gen_range(-0.3..0.2))).collect();
            let y: Vec<(f64, f64)> = (0..n + 3).map(|k| ((k as f64 * 0.7).cos() * 0.5, (k as f64 * 0.7).sin() * 0.5)).collect();
            assert!((directed_hausdorff(&x, &y) - brute(&x, &y)).abs() < 1e-12);
            assert!((directed_hausdorff(&y, &x) - brute(&y, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_max_matches_finite_difference() {
        let (u, w, m) = (0.7, 1.3, 0.2);
        for hi in [1.5, 2.0, 3.0] {
            let e = 1e-5;
            let s = |lo: f64, hi: f64| bridge_stay_probability(u, w, lo, hi, 1.0);
            let num = (s(m + e, hi) - s(m - e, hi)) / (2.0 * e);
            let den = (s(m + e, 1e3) - s(m - e, 1e3)) / (2.0 * e);
            let p = bridge_max_below_given_min(u, w, m, hi);
            assert!((p - num / den).abs() < 1e-5, "hi={hi}: {p} vs {}", num / den);
        }
    }
}
