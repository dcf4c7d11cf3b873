//! Lattice disks and annuli, discrete GFF sampling and Dirichlet solves.
//!
//! Vertices sit on `hℤ²` with `h = R/K`, `K = ⌊mesh_cells/2⌋`. A vertex is
//! interior when its index radius is strictly inside the shape; boundary
//! vertices are the masked-out nearest neighbours of interior vertices.

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disk { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl Shape {
    pub fn outer_radius(&self) -> f64 {
        match *self {
            Shape::Disk { radius } => radius,
            Shape::Annulus { outer, .. } => outer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    Exterior,
    Interior(u32),
    Outer,
    Inner,
}

/// Serializable record of a domain, embedded in output headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDescriptor {
    pub shape: Shape,
    pub mesh_cells: usize,
    pub spacing: f64,
    pub interior_vertices: usize,
    pub outer_boundary_vertices: usize,
    pub inner_boundary_vertices: usize,
}

pub const MIN_MESH_CELLS: usize = 4;

#[derive(Clone, Debug)]
pub struct GridDomain {
    pub shape: Shape,
    pub mesh_cells: usize,
    /// Index radius of the outer circle.
    pub k: i32,
    /// Lattice spacing in domain units.
    pub h: f64,
    pub side: usize,
    site: Vec<Site>,
    pub interior: Vec<(i32, i32)>,
    pub boundary_outer: Vec<(i32, i32)>,
    pub boundary_inner: Vec<(i32, i32)>,
    factor: Arc<OnceLock<std::result::Result<Skyline, Error>>>,
}

pub const NEIGHBORS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

impl GridDomain {
    #[inline]
    pub fn idx(&self, i: i32, j: i32) -> usize {
        let o = self.k + 1;
        (i + o) as usize + self.side * (j + o) as usize
    }

    #[inline]
    pub fn in_grid(&self, i: i32, j: i32) -> bool {
        let o = self.k + 1;
        i >= -o && i <= o && j >= -o && j <= o
    }

    #[inline]
    pub fn site(&self, i: i32, j: i32) -> Site {
        if !self.in_grid(i, j) {
            return Site::Exterior;
        }
        self.site[self.idx(i, j)]
    }

    pub fn interior_index(&self, i: i32, j: i32) -> Option<usize> {
        match self.site(i, j) {
            Site::Interior(n) => Some(n as usize),
            _ => None,
        }
    }

    pub fn coord(&self, i: i32, j: i32) -> (f64, f64) {
        (i as f64 * self.h, j as f64 * self.h)
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn descriptor(&self) -> DomainDescriptor {
        DomainDescriptor {
            shape: self.shape,
            mesh_cells: self.mesh_cells,
            spacing: self.h,
            interior_vertices: self.interior.len(),
            outer_boundary_vertices: self.boundary_outer.len(),
            inner_boundary_vertices: self.boundary_inner.len(),
        }
    }

    /// Inner radius in index units (0 for a disk).
    pub fn inner_index_radius(&self) -> f64 {
        match self.shape {
            Shape::Disk { .. } => 0.0,
            Shape::Annulus { inner, outer } => inner / outer * self.k as f64,
        }
    }

    /// Cholesky factor of the interior Laplacian, built on first use.
    pub fn factor(&self) -> Result<&Skyline> {
        self.factor.get_or_init(|| Skyline::laplacian(self)).as_ref().map_err(Clone::clone)
    }
}

pub fn build_domain(shape: Shape, mesh_cells: usize) -> Result<GridDomain> {
    if mesh_cells < MIN_MESH_CELLS {
        return Err(Error::Construction(format!("mesh_cells must be at least {MIN_MESH_CELLS}, got {mesh_cells}")));
    }
    let (big_r, small_r) = match shape {
        Shape::Disk { radius } => {
            if !(radius > 0.0) || !radius.is_finite() {
                return Err(Error::Construction(format!("disk radius must be positive, got {radius}")));
            }
            (radius, 0.0)
        }
        Shape::Annulus { inner, outer } => {
            if !(outer > 0.0) || !(inner > 0.0) || inner >= outer || !outer.is_finite() {
                return Err(Error::Construction(format!("annulus needs 0 < r < R, got r={inner}, R={outer}")));
            }
            if inner / outer < 4.0 / mesh_cells as f64 {
                return Err(Error::Construction(format!(
                    "inner hole r/R = {} spans fewer than 4 cells at mesh {mesh_cells}",
                    inner / outer
                )));
            }
            (outer, inner)
        }
    };
    let k = (mesh_cells / 2) as i32;
    let h = big_r / k as f64;
    let rk2 = (k as f64).powi(2);
    let rin = small_r / big_r * k as f64;
    let rin2 = rin * rin;
    let side = (2 * k + 3) as usize;
    let o = k + 1;
    let mut site = vec![Site::Exterior; side * side];
    let mut interior = Vec::new();
    let is_int = |i: i32, j: i32| {
        let d2 = (i * i + j * j) as f64;
        d2 < rk2 && (small_r == 0.0 || d2 > rin2)
    };
    for j in -k..=k {
        for i in -k..=k {
            if is_int(i, j) {
                site[(i + o) as usize + side * (j + o) as usize] = Site::Interior(interior.len() as u32);
                interior.push((i, j));
            }
        }
    }
    let mid = 0.5 * (rin + k as f64);
    let mut boundary_outer = Vec::new();
    let mut boundary_inner = Vec::new();
    for &(i, j) in &interior {
        for (di, dj) in NEIGHBORS {
            let (a, b) = (i + di, j + dj);
            let s = &mut site[(a + o) as usize + side * (b + o) as usize];
            if *s == Site::Exterior {
                let r = ((a * a + b * b) as f64).sqrt();
                if small_r > 0.0 && r < mid {
                    *s = Site::Inner;
                    boundary_inner.push((a, b));
                } else {
                    *s = Site::Outer;
                    boundary_outer.push((a, b));
                }
            }
        }
    }
    if interior.is_empty() || boundary_outer.is_empty() || (small_r > 0.0 && boundary_inner.is_empty()) {
        return Err(Error::Construction("degenerate lattice domain".into()));
    }
    boundary_outer.sort_by_key(|&(i, j)| (j, i));
    boundary_inner.sort_by_key(|&(i, j)| (j, i));
    let dom = GridDomain {
        shape,
        mesh_cells,
        k,
        h,
        side,
        site,
        interior,
        boundary_outer,
        boundary_inner,
        factor: Arc::new(OnceLock::new()),
    };
    check_connected(&dom)?;
    Ok(dom)
}

/// Every interior vertex must reach the outer boundary.
fn check_connected(dom: &GridDomain) -> Result<()> {
    let mut seen = vec![false; dom.interior.len()];
    let mut stack = Vec::new();
    for &(i, j) in &dom.boundary_outer {
        for (di, dj) in NEIGHBORS {
            if let Some(n) = dom.interior_index(i + di, j + dj) {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
    }
    while let Some(n) = stack.pop() {
        let (i, j) = dom.interior[n];
        for (di, dj) in NEIGHBORS {
            if let Some(m) = dom.interior_index(i + di, j + dj) {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::Construction("interior vertex without a lattice path to the outer boundary".into()))
    }
}

/// Envelope (skyline) Cholesky factor `L Lᵀ` of the interior Laplacian in row-major order.
#[derive(Clone, Debug)]
pub struct Skyline {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    pub fn n(&self) -> usize {
        self.first.len()
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[self.offset[r]..self.offset[r + 1]]
    }

    fn laplacian(dom: &GridDomain) -> Result<Self> {
        let n = dom.interior.len();
        let mut first = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for (r, &(i, j)) in dom.interior.iter().enumerate() {
            let mut f = r;
            for (di, dj) in [(-1, 0), (0, -1)] {
                if let Some(m) = dom.interior_index(i + di, j + dj) {
                    f = f.min(m);
                }
            }
            first.push(f);
            offset.push(offset[r] + (r - f + 1));
        }
        let mut data = vec![0.0; offset[n]];
        for (r, &(i, j)) in dom.interior.iter().enumerate() {
            let base = offset[r] - first[r];
            data[base + r] = 4.0;
            for (di, dj) in [(-1, 0), (0, -1)] {
                if let Some(m) = dom.interior_index(i + di, j + dj) {
                    data[base + m] = -1.0;
                }
            }
        }
        for r in 0..n {
            let fr = first[r];
            let (head, tail) = data.split_at_mut(offset[r]);
            let row = &mut tail[..r - fr + 1];
            for c in fr..r {
                let fc = first[c];
                let lo = fr.max(fc);
                let crow = &head[offset[c]..offset[c + 1]];
                let mut s = row[c - fr];
                let a = &row[lo - fr..c - fr];
                let b = &crow[lo - fc..c - fc];
                s -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                row[c - fr] = s / crow[c - fc];
            }
            let d = row[r - fr] - row[..r - fr].iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) {
                return Err(Error::Solver(format!("Cholesky pivot {d} at row {r}")));
            }
            row[r - fr] = d.sqrt();
        }
        Ok(Skyline { first, offset, data })
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for r in 0..self.n() {
            let row = self.row(r);
            let f = self.first[r];
            let s: f64 = row[..r - f].iter().zip(&b[f..r]).map(|(x, y)| x * y).sum();
            b[r] = (b[r] - s) / row[r - f];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward(&self, y: &mut [f64]) {
        for r in (0..self.n()).rev() {
            let row = self.row(r);
            let f = self.first[r];
            let x = y[r] / row[r - f];
            y[r] = x;
            for (k, l) in row[..r - f].iter().enumerate() {
                y[f + k] -= l * x;
            }
        }
    }

    pub fn solve(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }
}

/// One discrete GFF realization on a domain.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    /// Values at interior vertices, in the domain's interior order.
    pub values: Vec<f64>,
    pub outer_value: f64,
    pub inner_value: f64,
    /// Seed reserved for metric-graph edge decisions.
    pub edge_seed: u64,
}

impl FieldSample {
    /// Field value at any interior or boundary vertex.
    #[inline]
    pub fn at(&self, dom: &GridDomain, i: i32, j: i32) -> Option<f64> {
        match dom.site(i, j) {
            Site::Interior(n) => Some(self.values[n as usize]),
            Site::Outer => Some(self.outer_value),
            Site::Inner => Some(self.inner_value),
            Site::Exterior => None,
        }
    }
}

/// Right-hand side from boundary data given per boundary vertex.
fn boundary_rhs(dom: &GridDomain, data: &dyn Fn(i32, i32) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; dom.n_interior()];
    for (n, &(i, j)) in dom.interior.iter().enumerate() {
        for (di, dj) in NEIGHBORS {
            if matches!(dom.site(i + di, j + dj), Site::Outer | Site::Inner) {
                b[n] += data(i + di, j + dj);
            }
        }
    }
    b
}

/// Discrete harmonic extension of `0` on the outer and `v` on the inner boundary.
pub fn harmonic_extension(dom: &GridDomain, v: f64) -> Result<Vec<f64>> {
    let mut b = boundary_rhs(dom, &|i, j| if dom.site(i, j) == Site::Inner { v } else { 0.0 });
    dom.factor()?.solve(&mut b);
    Ok(b)
}

pub fn sample_dgff(dom: &GridDomain, v: f64, seed: u64) -> Result<FieldSample> {
    if !v.is_finite() {
        return Err(Error::Precondition(format!("inner boundary value must be finite, got {v}")));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..dom.n_interior()).map(|_| StandardNormal.sample(&mut r)).collect();
    dom.factor()?.backward(&mut z);
    if v != 0.0 {
        for (zi, hi) in z.iter_mut().zip(harmonic_extension(dom, v)?) {
            *zi += hi;
        }
    }
    let edge_seed = crate::rng::substream(seed, 0xed9e);
    Ok(FieldSample { values: z, outer_value: 0.0, inner_value: v, edge_seed })
}

/// Dirichlet energy `Σ_edges (f(x) - f(y))²` over edges with an interior endpoint.
pub fn dirichlet_energy(dom: &GridDomain, values: &[f64], data: &dyn Fn(i32, i32) -> f64) -> f64 {
    let mut e = 0.0;
    for (n, &(i, j)) in dom.interior.iter().enumerate() {
        for (di, dj) in NEIGHBORS {
            let (a, b) = (i + di, j + dj);
            match dom.site(a, b) {
                Site::Interior(m) if (m as usize) > n => e += (values[n] - values[m as usize]).powi(2),
                Site::Outer | Site::Inner => e += (values[n] - data(a, b)).powi(2),
                _ => {}
            }
        }
    }
    e
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletSolution {
    pub values: Vec<f64>,
    pub energy: f64,
}

/// Harmonic interior values for boundary data given per boundary vertex.
pub fn solve_dirichlet(dom: &GridDomain, data: &dyn Fn(i32, i32) -> f64) -> Result<DirichletSolution> {
    for &(i, j) in dom.boundary_outer.iter().chain(&dom.boundary_inner) {
        if !data(i, j).is_finite() {
            return Err(Error::Precondition(format!("boundary datum at ({i},{j}) is not finite")));
        }
    }
    let mut b = boundary_rhs(dom, data);
    dom.factor()?.solve(&mut b);
    let energy = dirichlet_energy(dom, &b, data);
    Ok(DirichletSolution { values: b, energy })
}

/// Column of the discrete Green function `L⁻¹ e_v` for interior vertex `(i, j)`.
pub fn green_column(dom: &GridDomain, i: i32, j: i32) -> Result<Vec<f64>> {
    let n = dom
        .interior_index(i, j)
        .ok_or_else(|| Error::Precondition(format!("({i},{j}) is not interior")))?;
    let mut b = vec![0.0; dom.n_interior()];
    b[n] = 1.0;
    dom.factor()?.solve(&mut b);
    Ok(b)
}

/// How a free vertex couples to a lattice neighbour in a masked problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Link {
    Free,
    Fixed { conductance: f64, value: f64 },
    None,
}

/// Weighted Laplace problem on a subset of grid vertices, solved by MIC(0)-PCG.
#[derive(Clone, Debug)]
pub struct MaskedProblem {
    side: usize,
    k: i32,
    /// Grid index → free index.
    free_index: Vec<u32>,
    cells: Vec<(i32, i32)>,
    diag: Vec<f64>,
    /// Conductance to the +x and +y free neighbours (0 if none).
    east: Vec<f64>,
    north: Vec<f64>,
    rhs_fixed: Vec<f64>,
    fixed_terms: Vec<Vec<(f64, f64)>>,
    /// Free neighbours in the order +x, +y, -x, -y (`NONE` if absent).
    nbr: Vec<[u32; 4]>,
}

const NONE: u32 = u32::MAX;

impl MaskedProblem {
    /// `free(i, j)` selects unknowns; `link(from, to)` classifies each lattice edge out of a free vertex
    /// (it is only called when `to` is not free).
    pub fn new(
        dom: &GridDomain,
        free: &dyn Fn(i32, i32) -> bool,
        link: &dyn Fn((i32, i32), (i32, i32)) -> Link,
    ) -> Result<Self> {
        let side = dom.side;
        let mut free_index = vec![NONE; side * side];
        let mut cells = Vec::new();
        let o = dom.k + 1;
        for j in -o..=o {
            for i in -o..=o {
                if free(i, j) {
                    free_index[dom.idx(i, j)] = cells.len() as u32;
                    cells.push((i, j));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Precondition("masked problem without unknowns".into()));
        }
        let n = cells.len();
        let mut p = MaskedProblem {
            side,
            k: dom.k,
            free_index,
            cells,
            diag: vec![0.0; n],
            east: vec![0.0; n],
            north: vec![0.0; n],
            rhs_fixed: vec![0.0; n],
            fixed_terms: vec![Vec::new(); n],
            nbr: Vec::new(),
        };
        p.nbr = p
            .cells
            .iter()
            .map(|&(i, j)| {
                let f = |a, b| p.free_at(a, b).map_or(NONE, |v| v as u32);
                [f(i + 1, j), f(i, j + 1), f(i - 1, j), f(i, j - 1)]
            })
            .collect();
        for q in 0..n {
            let (i, j) = p.cells[q];
            for (di, dj) in NEIGHBORS {
                let (a, b) = (i + di, j + dj);
                if p.free_at(a, b).is_some() {
                    p.diag[q] += 1.0;
                    if (di, dj) == (1, 0) {
                        p.east[q] = 1.0;
                    } else if (di, dj) == (0, 1) {
                        p.north[q] = 1.0;
                    }
                    continue;
                }
                match link((i, j), (a, b)) {
                    Link::Fixed { conductance, value } => {
                        p.diag[q] += conductance;
                        p.rhs_fixed[q] += conductance * value;
                        p.fixed_terms[q].push((conductance, value));
                    }
                    Link::None => {}
                    Link::Free => {
                        return Err(Error::Precondition(format!("link to ({a},{b}) declared free but not selected")));
                    }
                }
            }
        }
        Ok(p)
    }

    #[inline]
    fn free_at(&self, i: i32, j: i32) -> Option<usize> {
        let o = self.k + 1;
        if i < -o || i > o || j < -o || j > o {
            return None;
        }
        let v = self.free_index[(i + o) as usize + self.side * (j + o) as usize];
        (v != NONE).then_some(v as usize)
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[(i32, i32)] {
        &self.cells
    }

    pub fn index_of(&self, i: i32, j: i32) -> Option<usize> {
        self.free_at(i, j)
    }

    #[inline]
    fn nb(&self, q: usize, d: usize) -> Option<usize> {
        let v = self.nbr[q][d];
        (v != NONE).then_some(v as usize)
    }

    fn neighbours(&self, q: usize) -> [Option<usize>; 4] {
        [self.nb(q, 0), self.nb(q, 1), self.nb(q, 2), self.nb(q, 3)]
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for q in 0..self.n() {
            let mut s = self.diag[q] * x[q];
            for m in self.neighbours(q).into_iter().flatten() {
                s -= x[m];
            }
            y[q] = s;
        }
    }

    fn mic0(&self) -> Vec<f64> {
        const TAU: f64 = 0.97;
        const SIGMA: f64 = 0.25;
        let n = self.n();
        let mut prec = vec![0.0; n];
        for q in 0..n {
            let mut e = self.diag[q];
            if let Some(w) = self.nb(q, 2) {
                let a = -self.east[w] * prec[w];
                e -= a * a + TAU * (-self.east[w]) * (-self.north[w]) * prec[w] * prec[w];
            }
            if let Some(s) = self.nb(q, 3) {
                let a = -self.north[s] * prec[s];
                e -= a * a + TAU * (-self.north[s]) * (-self.east[s]) * prec[s] * prec[s];
            }
            if e < SIGMA * self.diag[q] {
                e = self.diag[q];
            }
            prec[q] = 1.0 / e.sqrt();
        }
        prec
    }

    fn precondition(&self, prec: &[f64], r: &[f64], z: &mut [f64]) {
        let n = self.n();
        let mut q = vec![0.0; n];
        for p in 0..n {
            let mut t = r[p];
            if let Some(w) = self.nb(p, 2) {
                t -= -self.east[w] * prec[w] * q[w];
            }
            if let Some(s) = self.nb(p, 3) {
                t -= -self.north[s] * prec[s] * q[s];
            }
            q[p] = t * prec[p];
        }
        for p in (0..n).rev() {
            let mut t = q[p];
            if let Some(e) = self.nb(p, 0) {
                t -= -self.east[p] * prec[p] * z[e];
            }
            if let Some(nn) = self.nb(p, 1) {
                t -= -self.north[p] * prec[p] * z[nn];
            }
            z[p] = t * prec[p];
        }
    }

    /// Solves `A u = b + (fixed-boundary terms)`; `extra` is added to the right-hand side.
    pub fn solve(&self, extra: Option<&[f64]>, rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        self.solve_from(extra, None, rel_tol, max_iter)
    }

    /// As [`MaskedProblem::solve`], starting from `guess` (indexed like [`MaskedProblem::cells`]).
    pub fn solve_from(&self, extra: Option<&[f64]>, guess: Option<&[f64]>, rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let n = self.n();
        let mut b = self.rhs_fixed.clone();
        if let Some(e) = extra {
            for (bi, ei) in b.iter_mut().zip(e) {
                *bi += ei;
            }
        }
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b;
        if let Some(g) = guess {
            if g.len() != n {
                return Err(Error::Precondition("initial guess has the wrong length".into()));
            }
            x.copy_from_slice(g);
            let mut ax = vec![0.0; n];
            self.apply(&x, &mut ax);
            for (rq, a) in r.iter_mut().zip(&ax) {
                *rq -= a;
            }
        }
        let prec = self.mic0();
        let mut z = vec![0.0; n];
        self.precondition(&prec, &r, &mut z);
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        for _ in 0..max_iter {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(Error::Solver(format!("non-positive curvature {pap} in PCG")));
            }
            let alpha = rz / pap;
            for q in 0..n {
                x[q] += alpha * p[q];
                r[q] -= alpha * ap[q];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= rel_tol * bnorm {
                return Ok(x);
            }
            self.precondition(&prec, &r, &mut z);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for q in 0..n {
                p[q] = z[q] + beta * p[q];
            }
        }
        Err(Error::Solver(format!("PCG did not converge in {max_iter} iterations")))
    }

    /// `Σ c (Δu)²` over free–free and free–fixed edges.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut e = 0.0;
        for q in 0..self.n() {
            if let Some(m) = self.nb(q, 0) {
                e += (u[q] - u[m]).powi(2);
            }
            if let Some(m) = self.nb(q, 1) {
                e += (u[q] - u[m]).powi(2);
            }
            for &(c, v) in &self.fixed_terms[q] {
                e += c * (u[q] - v).powi(2);
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skyline_matches_pcg() {
        let dom = build_domain(Shape::Disk { radius: 1.0 }, 24).unwrap();
        let col = green_column(&dom, 0, 0).unwrap();
        let p = MaskedProblem::new(
            &dom,
            &|i, j| dom.interior_index(i, j).is_some(),
            &|_, to| match dom.site(to.0, to.1) {
                Site::Outer => Link::Fixed { conductance: 1.0, value: 0.0 },
                _ => Link::None,
            },
        )
        .unwrap();
        let mut e = vec![0.0; p.n()];
        e[p.index_of(0, 0).unwrap()] = 1.0;
        let u = p.solve(Some(&e), 1e-12, 2000).unwrap();
        let n0 = dom.interior_index(0, 0).unwrap();
        assert!((u[p.index_of(0, 0).unwrap()] - col[n0]).abs() < 1e-9);
    }
}
