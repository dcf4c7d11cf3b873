use std::f64::consts::PI;

use gffloops::lattice::{build_domain, dirichlet_energy, green_column, harmonic_extension, sample_dgff, solve_dirichlet, GridDomain, Shape, Site, NEIGHBORS};
use gffloops::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMBDA: f64 = 0.626_657_068_657_750_1;

fn disk(mesh: usize) -> GridDomain {
    build_domain(Shape::Disk { radius: 1.0 }, mesh).unwrap()
}

fn annulus(r: f64, mesh: usize) -> GridDomain {
    build_domain(Shape::Annulus { inner: r, outer: 1.0 }, mesh).unwrap()
}

#[test]
fn five_cell_fixture() {
    let d = disk(5);
    assert_eq!(d.n_interior(), 9);
    assert_eq!(d.boundary_outer.len(), 12);
    assert!(d.boundary_inner.is_empty());
    for &(i, j) in &d.interior {
        assert!(i.abs() <= 1 && j.abs() <= 1);
    }
    for &(i, j) in &d.boundary_outer {
        assert!(i.abs() <= 2 && j.abs() <= 2 && (i.abs() == 2 || j.abs() == 2));
        assert!(!(i.abs() == 2 && j.abs() == 2));
    }
}

#[test]
fn annulus_classification() {
    let d = annulus(0.5, 16);
    assert!(!d.boundary_inner.is_empty() && !d.boundary_outer.is_empty());
    for b in &d.boundary_inner {
        assert!(!d.boundary_outer.contains(b));
        let r = ((b.0 * b.0 + b.1 * b.1) as f64).sqrt() * d.h;
        assert!(r < 0.75);
    }
    for &(i, j) in &d.interior {
        let r = ((i * i + j * j) as f64).sqrt() * d.h;
        assert!(r > 0.5 && r < 1.0);
        // no isolated interior vertex
        let deg = NEIGHBORS.iter().filter(|(a, b)| d.site(i + a, j + b) != Site::Exterior).count();
        assert_eq!(deg, 4);
    }
    let desc = d.descriptor();
    let back: gffloops::lattice::DomainDescriptor = serde_json::from_str(&serde_json::to_string(&desc).unwrap()).unwrap();
    assert_eq!(back, desc);
}

#[test]
fn construction_errors() {
    let bad = [
        Shape::Annulus { inner: 1.0, outer: 1.0 },
        Shape::Annulus { inner: 1.5, outer: 1.0 },
        Shape::Annulus { inner: 0.01, outer: 1.0 },
        Shape::Disk { radius: -1.0 },
    ];
    for s in bad {
        assert!(matches!(build_domain(s, 64), Err(Error::Construction(_))), "{s:?}");
    }
    assert!(matches!(build_domain(Shape::Disk { radius: 1.0 }, 3), Err(Error::Construction(_))));
}

#[test]
fn constant_data_constant_solution() {
    let d = annulus(0.3, 40);
    let s = solve_dirichlet(&d, &|_, _| 2.5).unwrap();
    assert!(s.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    assert!(s.energy < 1e-20);
    assert!(matches!(solve_dirichlet(&d, &|_, _| f64::NAN), Err(Error::Precondition(_))));
}

#[test]
fn annulus_energy_converges() {
    let target = 2.0 * PI / 2f64.ln();
    let err = |mesh| {
        let d = annulus(0.5, mesh);
        let s = solve_dirichlet(&d, &|i, j| if d.site(i, j) == Site::Inner { 1.0 } else { 0.0 }).unwrap();
        (s.energy - target) / target
    };
    let e128 = err(128);
    let e256 = err(256);
    assert!(e256.abs() < 0.02, "relative error {e256}");
    assert!(e256.abs() < e128.abs(), "{e128} -> {e256}");
}

#[test]
fn maximum_principle_and_rotation() {
    let d = disk(48);
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let vals: Vec<f64> = d.boundary_outer.iter().map(|_| r.gen_range(-1.0..1.0)).collect();
    let look = |i: i32, j: i32| {
        let p = d.boundary_outer.iter().position(|&b| b == (i, j)).unwrap();
        vals[p]
    };
    let s = solve_dirichlet(&d, &look).unwrap();
    let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(s.values.iter().all(|&v| v >= lo && v <= hi));
    // rotate data by 90°: g(i, j) = f(j, -i)
    let rot = solve_dirichlet(&d, &|i, j| look(j, -i)).unwrap();
    for (n, &(i, j)) in d.interior.iter().enumerate() {
        let m = d.interior_index(j, -i).unwrap();
        assert!((rot.values[n] - s.values[m]).abs() < 1e-12);
    }
    assert!((rot.energy - s.energy).abs() < 1e-10 * s.energy);
}

#[test]
fn boundary_pinned_and_mean_is_harmonic() {
    let d = annulus(0.25, 32);
    let v = 2.0 * LAMBDA;
    let h = harmonic_extension(&d, v).unwrap();
    let probes: Vec<usize> = [(9, 0), (0, -12), (-5, 5), (3, 14), (-11, -6)].iter().map(|&(i, j)| d.interior_index(i, j).unwrap()).collect();
    let n = 10_000;
    let mut sum = vec![0.0; probes.len()];
    let mut sq = vec![0.0; probes.len()];
    for s in 0..n {
        let f = sample_dgff(&d, v, 1000 + s).unwrap();
        if s == 0 {
            for &(i, j) in &d.boundary_inner {
                assert_eq!(f.at(&d, i, j), Some(v));
            }
            for &(i, j) in &d.boundary_outer {
                assert_eq!(f.at(&d, i, j), Some(0.0));
            }
            assert!(f.values.iter().all(|x| x.is_finite()));
        }
        for (k, &p) in probes.iter().enumerate() {
            sum[k] += f.values[p];
            sq[k] += f.values[p] * f.values[p];
        }
    }
    for (k, &p) in probes.iter().enumerate() {
        let m = sum[k] / n as f64;
        let var = sq[k] / n as f64 - m * m;
        let se = (var / n as f64).sqrt();
        assert!((m - h[p]).abs() < 3.0 * se, "probe {k}: {m} vs {}", h[p]);
    }
}

#[test]
fn center_variance_matches_green_diagonal() {
    let d = disk(256);
    let g = green_column(&d, 0, 0).unwrap();
    let c = d.interior_index(0, 0).unwrap();
    let n = 2000;
    let x: Vec<f64> = (0..n).map(|s| sample_dgff(&d, 0.0, 77 + s).unwrap().values[c]).collect();
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let m4 = x.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
    let se = ((m4 - m2 * m2) / n as f64).sqrt();
    assert!((m2 - g[c]).abs() < 3.0 * se, "{m2} vs {} (se {se})", g[c]);
    // (2π)⁻¹ log normalization: G(0,0) grows like log K / 2π
    let gd = disk(128);
    let g128 = green_column(&gd, 0, 0).unwrap()[gd.interior_index(0, 0).unwrap()];
    assert!(((g[c] - g128) - 2f64.ln() / (2.0 * PI)).abs() < 2e-3);
}

#[test]
fn covariance_and_normality() {
    let d = disk(32);
    let pairs = [((0, 0), (3, 0)), ((2, 5), (-4, 1)), ((10, 0), (10, 1))];
    let cols: Vec<(usize, usize, f64)> = pairs
        .iter()
        .map(|&(a, b)| {
            let g = green_column(&d, a.0, a.1).unwrap();
            let ib = d.interior_index(b.0, b.1).unwrap();
            (d.interior_index(a.0, a.1).unwrap(), ib, g[ib])
        })
        .collect();
    let n = 10_000;
    let fields: Vec<Vec<f64>> = (0..n).map(|s| sample_dgff(&d, 0.0, 9000 + s).unwrap().values).collect();
    for &(a, b, cov) in &cols {
        let prods: Vec<f64> = fields.iter().map(|f| f[a] * f[b]).collect();
        let m = prods.iter().sum::<f64>() / n as f64;
        let v = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n as f64;
        assert!((m - cov).abs() < 4.0 * (v / n as f64).sqrt(), "{m} vs {cov}");
    }
    // a linear functional: sum over a block of vertices
    let block: Vec<usize> = d.interior.iter().enumerate().filter(|(_, &(i, j))| i.abs() < 4 && j.abs() < 4).map(|(k, _)| k).collect();
    let y: Vec<f64> = fields.iter().map(|f| block.iter().map(|&k| f[k]).sum()).collect();
    let m = y.iter().sum::<f64>() / n as f64;
    let s2 = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    let skew = y.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n as f64 / s2.powf(1.5);
    let kurt = y.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n as f64 / (s2 * s2) - 3.0;
    let nf = n as f64;
    assert!(skew.abs() < 4.0 * (6.0 / nf).sqrt(), "skew {skew}");
    assert!(kurt.abs() < 4.0 * (24.0 / nf).sqrt(), "kurtosis {kurt}");
}

#[test]
fn sampling_is_deterministic() {
    let d = annulus(0.3, 40);
    let a = sample_dgff(&d, 1.0, 5).unwrap();
    let b = sample_dgff(&d, 1.0, 5).unwrap();
    let c = sample_dgff(&d, 1.0, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.values, c.values);
    assert!(matches!(sample_dgff(&d, f64::INFINITY, 1), Err(Error::Precondition(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn dirichlet_form_bilinear_psd(seed in 0u64..1_000_000, s in -3.0f64..3.0) {
        let d = disk(12);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = d.n_interior();
        let f: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let q = |x: &[f64]| dirichlet_energy(&d, x, &|_, _| 0.0);
        let comb = |a: &[f64], b: &[f64], t: f64| a.iter().zip(b).map(|(x, y)| x + t * y).collect::<Vec<_>>();
        let bil = |a: &[f64], b: &[f64]| 0.25 * (q(&comb(a, b, 1.0)) - q(&comb(a, b, -1.0)));
        prop_assert!(q(&f) >= 0.0);
        let lhs = bil(&comb(&f, &g, s), &h);
        let rhs = bil(&f, &h) + s * bil(&g, &h);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        prop_assert!(bil(&f, &f) * bil(&g, &g) + 1e-9 >= bil(&f, &g).powi(2));
    }
}
