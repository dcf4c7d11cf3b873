use gffloops::interfaces::*;
use gffloops::lattice::{build_domain, sample_dgff, FieldSample, GridDomain, Shape};
use gffloops::laws::GAP;
use gffloops::stats::binomial_test;
use gffloops::Error;
use proptest::prelude::*;

fn disk(mesh: usize) -> GridDomain {
    build_domain(Shape::Disk { radius: 1.0 }, mesh).unwrap()
}

/// Field defined by a function of the lattice index radius.
fn radial_field(d: &GridDomain, f: impl Fn(f64) -> f64) -> FieldSample {
    let values = d.interior.iter().map(|&(i, j)| f(((i * i + j * j) as f64).sqrt())).collect();
    FieldSample { values, outer_value: 0.0, inner_value: 0.0, edge_seed: 1 }
}

fn vertex_radii(g: &FineGrid, cells: &[usize]) -> (f64, f64) {
    cells
        .iter()
        .filter(|&&c| g.kind(c) == CellKind::Vertex)
        .map(|&c| {
            let (p, q) = g.pos(c);
            (((p * p + q * q) as f64).sqrt()) / 2.0
        })
        .fold((f64::MAX, 0.0), |(a, b), r| (a.min(r), b.max(r)))
}

fn dual_radii(l: &Loop, h: f64) -> (f64, f64) {
    l.dual_edges.iter().map(|p| p.0.hypot(p.1) / h).fold((f64::MAX, 0.0), |(a, b), r| (a.min(r), b.max(r)))
}

#[test]
fn endpoint_below_level_closes_edge() {
    let d = disk(16);
    let g = FineGrid::new(&d);
    let f = radial_field(&d, |r| if r < 3.0 { 0.5 } else { 2.0 });
    for seed in 0..20 {
        let sc = Scene::new(&d, &g, &f).with_seed(seed);
        for ((i1, j1), (i2, j2)) in open_edges_at_level(&sc, 0.5) {
            assert!(sc.value(i1, j1) > 0.5 && sc.value(i2, j2) > 0.5);
        }
    }
}

#[test]
fn half_open_at_sqrt_ln2_over_2() {
    let d = disk(16);
    let g = FineGrid::new(&d);
    let x = (2f64.ln() / 2.0).sqrt();
    let f = radial_field(&d, |_| x);
    // edges between two interior vertices; boundary edges end at 0 and are always closed
    let interior_edges = g
        .cells_of_kind(CellKind::Edge)
        .filter(|&c| {
            let ((i1, j1), (i2, j2)) = g.edge_ends(c);
            d.interior_index(i1, j1).is_some() && d.interior_index(i2, j2).is_some()
        })
        .count() as u64;
    let mut open = 0u64;
    let seeds = 200;
    for seed in 0..seeds {
        open += open_edges_at_level(&Scene::new(&d, &g, &f).with_seed(seed), 0.0).len() as u64;
    }
    let n = interior_edges * seeds;
    let p = binomial_test(open, n, 0.5).unwrap();
    assert!(p > 1e-3, "{open} of {n}, p = {p}");
    // deep above the level almost every edge opens
    let f = radial_field(&d, |_| 6.0);
    let deep = open_edges_at_level(&Scene::new(&d, &g, &f), 0.0).len() as u64;
    assert_eq!(deep, interior_edges);
}

#[test]
fn moat_fixture_selects_moat() {
    let d = disk(64);
    let g = FineGrid::new(&d);
    let f = radial_field(&d, |r| if (10.0..13.0).contains(&r) { -1.0 } else { 1.0 });
    let sc = Scene::new(&d, &g, &f).with_refinement(Refinement::Off);
    let c = sign_clusters_outermost(&sc).unwrap().expect("moat surrounds the origin");
    assert_eq!(c.sign, -1.0);
    assert_eq!(c.label, -GAP);
    let (rmin, rmax) = vertex_radii(&g, &c.cells);
    assert!(rmin >= 10.0 && rmax < 13.0);
    let (o_lo, o_hi) = dual_radii(&c.outer, d.h);
    assert!(o_lo > 11.0 && o_hi < 13.5, "outer loop radii {o_lo}..{o_hi}");
    let (i_lo, i_hi) = dual_radii(&c.inner, d.h);
    assert!(i_lo > 9.0 && i_hi < 11.0, "inner loop radii {i_lo}..{i_hi}");
    assert!(c.inner.surrounds_origin && c.outer.surrounds_origin);
    assert!(!c.origin_on_cluster && !c.outer.touches_boundary);
    for &(i, j) in &c.inner.enclosed_vertices(&g) {
        assert!(c.outer.contains_vertex(&g, i, j));
    }
}

#[test]
fn nested_moats_select_outer() {
    let d = disk(64);
    let g = FineGrid::new(&d);
    let f = radial_field(&d, |r| if (6.0..8.0).contains(&r) || (18.0..21.0).contains(&r) { -1.0 } else { 1.0 });
    let sc = Scene::new(&d, &g, &f).with_refinement(Refinement::Off);
    let c = sign_clusters_outermost(&sc).unwrap().unwrap();
    let (rmin, rmax) = vertex_radii(&g, &c.cells);
    assert!(rmin >= 18.0 && rmax < 21.0);
}

#[test]
fn cluster_reaching_boundary_is_degenerate() {
    let d = disk(32);
    let g = FineGrid::new(&d);
    let f = radial_field(&d, |_| 1.0);
    let sc = Scene::new(&d, &g, &f).with_refinement(Refinement::Off);
    assert!(sign_clusters_outermost(&sc).unwrap().is_none());
    let a = build_domain(Shape::Annulus { inner: 0.3, outer: 1.0 }, 32).unwrap();
    let ga = FineGrid::new(&a);
    let fa = sample_dgff(&a, 0.0, 1).unwrap();
    assert!(matches!(sign_clusters_outermost(&Scene::new(&a, &ga, &fa)), Err(Error::Precondition(_))));
}

#[test]
fn fps_fills_domain_when_field_stays_above() {
    let d = disk(32);
    let g = FineGrid::new(&d);
    let f = radial_field(&d, |_| 0.5);
    let sc = Scene::new(&d, &g, &f).with_refinement(Refinement::Off);
    let r = fps_component(&sc, 1.0, BoundarySelector::Outer).unwrap();
    assert!(r.loop_.is_none());
    assert!(g.cells_of_kind(CellKind::Vertex).all(|c| r.explored[c]));
    assert!(matches!(fps_component(&sc, 0.0, BoundarySelector::Outer), Err(Error::Precondition(_))));
}

#[test]
fn fps_stops_at_moat() {
    let d = disk(64);
    let g = FineGrid::new(&d);
    let a = 1.0;
    let f = radial_field(&d, |r| if (12.0..14.0).contains(&r) { -a - 1.0 } else { 0.3 });
    let sc = Scene::new(&d, &g, &f).with_refinement(Refinement::Off);
    let r = fps_component(&sc, a, BoundarySelector::Outer).unwrap();
    let l = r.loop_.expect("loop around the origin");
    let (lo, hi) = dual_radii(&l, d.h);
    assert!(lo > 13.0 && hi < 15.0, "{lo}..{hi}");
    assert!(l.surrounds_origin);
}

#[test]
fn first_tvs_step_labels() {
    let d = disk(64);
    let g = FineGrid::new(&d);
    let mut seen = 0;
    for seed in 0..40 {
        let f = sample_dgff(&d, 0.0, seed).unwrap();
        let sc = Scene::new(&d, &g, &f);
        let r = iterated_loops(&sc, Some((GAP, GAP)), BoundarySelector::Outer, DEFAULT_ITERATION_CAP).unwrap();
        if let Some(k) = r.stopped_at {
            assert_eq!(k, 0);
            assert!((r.sequence.labels[0].abs() - GAP).abs() < 1e-12);
            seen += 1;
        } else {
            assert!(r.terminated && r.sequence.loops.is_empty());
        }
    }
    assert!(seen > 0);
    assert!(matches!(
        iterated_loops(&Scene::new(&d, &g, &sample_dgff(&d, 0.0, 1).unwrap()), Some((GAP, 1.0)), BoundarySelector::Outer, 64),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn annulus_termination_label_matches_inner_value() {
    let d = build_domain(Shape::Annulus { inner: 0.25, outer: 1.0 }, 64).unwrap();
    let g = FineGrid::new(&d);
    for n in [-1i32, 1, 2] {
        let v = n as f64 * GAP;
        for seed in 0..15 {
            let f = sample_dgff(&d, v, 100 + seed).unwrap();
            let sc = Scene::new(&d, &g, &f);
            let r = iterated_loops(&sc, None, BoundarySelector::Outer, DEFAULT_ITERATION_CAP).unwrap();
            assert!(r.terminated);
            let last = r.sequence.labels.last().copied().unwrap_or(0.0);
            assert!((last - v).abs() < 1e-9, "N={n} seed {seed}: labels {:?}", r.sequence.labels);
        }
    }
}

#[test]
fn labels_step_by_gap_and_loops_nest() {
    let d = build_domain(Shape::Annulus { inner: 0.2, outer: 1.0 }, 64).unwrap();
    let g = FineGrid::new(&d);
    for seed in 0..20 {
        let f = sample_dgff(&d, 2.0 * GAP, seed).unwrap();
        let sc = Scene::new(&d, &g, &f);
        for from in [BoundarySelector::Outer, BoundarySelector::Inner] {
            let r = iterated_loops(&sc, None, from, DEFAULT_ITERATION_CAP).unwrap();
            let start = if from == BoundarySelector::Outer { 0.0 } else { 2.0 * GAP };
            let mut prev = start;
            for (k, &l) in r.sequence.labels.iter().enumerate() {
                assert!(((l - prev).abs() - GAP).abs() < 1e-9);
                prev = l;
                if k > 0 {
                    let (a, b) = (&r.sequence.loops[k - 1], &r.sequence.loops[k]);
                    assert!((0..g.len()).all(|c| !b.inside[c] || a.inside[c]));
                }
            }
        }
    }
}

#[test]
fn cluster_inner_loop_inside_outer() {
    let d = disk(96);
    let g = FineGrid::new(&d);
    let mut found = 0;
    for seed in 0..60 {
        let f = sample_dgff(&d, 0.0, 500 + seed).unwrap();
        if let Some(c) = sign_clusters_outermost(&Scene::new(&d, &g, &f)).unwrap() {
            found += 1;
            assert!(c.inner.surrounds_origin && c.outer.surrounds_origin);
            assert!((0..g.len()).all(|x| !c.inner.inside[x] || c.outer.inside[x]));
        }
    }
    assert!(found > 0);
}

#[test]
fn annulus_cluster_construction() {
    let d = build_domain(Shape::Annulus { inner: 0.2, outer: 1.0 }, 64).unwrap();
    let g = FineGrid::new(&d);
    for seed in 0..20 {
        let f = sample_dgff(&d, 0.0, seed).unwrap();
        if let Some((l, lc, alpha)) = cluster_loops(&Scene::new(&d, &g, &f)).unwrap() {
            assert!((alpha.abs() - GAP).abs() < 1e-12);
            assert!((0..g.len()).all(|x| !lc.inside[x] || l.inside[x]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn fps_monotone_in_depth(seed in 0u64..10_000, a in 0.2f64..1.5, extra in 0.05f64..1.5) {
        let d = disk(32);
        let g = FineGrid::new(&d);
        let f = sample_dgff(&d, 0.0, seed).unwrap();
        let sc = Scene::new(&d, &g, &f);
        let small = fps_component(&sc, a, BoundarySelector::Outer).unwrap();
        let big = fps_component(&sc, a + extra, BoundarySelector::Outer).unwrap();
        prop_assert!((0..g.len()).all(|c| !small.explored[c] || big.explored[c]));
    }

    #[test]
    fn extraction_is_deterministic(seed in 0u64..10_000) {
        let d = disk(32);
        let g = FineGrid::new(&d);
        let f = sample_dgff(&d, 0.0, seed).unwrap();
        let sc = Scene::new(&d, &g, &f);
        let x = iterated_loops(&sc, Some((GAP, 3.0 * GAP)), BoundarySelector::Outer, 64).unwrap();
        let y = iterated_loops(&sc, Some((GAP, 3.0 * GAP)), BoundarySelector::Outer, 64).unwrap();
        prop_assert_eq!(x.sequence.labels, y.sequence.labels);
        prop_assert_eq!(x.stopped_at, y.stopped_at);
    }
}
