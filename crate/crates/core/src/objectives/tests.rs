use super::*;
use crate::domain::{make_grid, sample};
use crate::kernels::{in_delta_set, mixture_density};
use crate::transport::{ot_lp, DiscreteMeasure};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::vec::Vec;

fn unit(n: usize) -> Domain {
    Domain::unit_square(n).unwrap()
}

fn bump(p: Point2, m: Point2, s: f64) -> f64 {
    libm::exp(-p.dist_sq(m) / (2.0 * s * s))
}

/// Two blobs over a floor, so the target charges every cell.
fn target(n: usize) -> GridDensity {
    make_grid(unit(n), |p| {
        bump(p, Point2::new(0.3, 0.35), 0.12) + 0.8 * bump(p, Point2::new(0.7, 0.65), 0.15) + 0.2
    })
    .unwrap()
}

fn mirrored_target(n: usize) -> GridDensity {
    make_grid(unit(n), |p| {
        bump(p, Point2::new(0.3, 0.4), 0.12) + bump(p, Point2::new(0.7, 0.4), 0.12) + 0.2
    })
    .unwrap()
}

fn pts(v: &[(f64, f64)]) -> Vec<Point2> {
    v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

fn cfg(x: &[Point2], d: &Domain) -> ParticleConfig {
    ParticleConfig::new(x.to_vec(), d).unwrap()
}

fn four_agents() -> Vec<Point2> {
    pts(&[(0.3, 0.3), (0.62, 0.41), (0.45, 0.7), (0.75, 0.76)])
}

fn kernel(h: f64) -> KernelSpec {
    KernelSpec::truncated_gaussian(h).unwrap()
}

/// Central differences of `value`, one coordinate at a time.
fn finite_difference(x: &[Point2], step: f64, value: impl Fn(&[Point2]) -> f64) -> Vec<Point2> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut g = [0.0; 2];
        for (k, gk) in g.iter_mut().enumerate() {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            if k == 0 {
                a[i].x += step;
                b[i].x -= step;
            } else {
                a[i].y += step;
                b[i].y -= step;
            }
            *gk = (value(&a) - value(&b)) / (2.0 * step);
        }
        out.push(Point2::new(g[0], g[1]));
    }
    out
}

/// `max_i |a_i - b_i|_inf / max_i |b_i|_inf`.
fn relative_gap(a: &[Point2], b: &[Point2]) -> f64 {
    let inf = |p: Point2| p.x.abs().max(p.y.abs());
    let err = a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max(inf(*p - *q)));
    let scale = b.iter().fold(0.0f64, |m, q| m.max(inf(*q)));
    err / scale
}

#[test]
fn hf_single_agent_at_center() {
    for n in [8, 16, 31] {
        let d = unit(n);
        let spec = ObjectiveSpec::distortion(GridDensity::uniform(d), CostKind::Quadratic);
        let v = eval_hf(&cfg(&[Point2::new(0.5, 0.5)], &d), &spec).unwrap();
        let h = 1.0 / n as f64;
        // midpoint rule for the second moment of a uniform square
        assert!((v - (1.0 - h * h) / 6.0).abs() < 1e-12);
        assert!((v - 1.0 / 6.0).abs() <= h * h / 6.0 + 1e-15);
    }
}

#[test]
fn hf_vanishes_with_an_agent_on_every_cell() {
    let d = unit(8);
    let spec = ObjectiveSpec::distortion(target(8), CostKind::Linear);
    assert_eq!(eval_hf(&cfg(&d.centers(), &d), &spec).unwrap(), 0.0);
}

#[test]
fn hf_equals_voronoi_decomposition() {
    let d = unit(24);
    let mu = target(24);
    for f in [CostKind::Quadratic, CostKind::Linear] {
        let spec = ObjectiveSpec::distortion(mu.clone(), f);
        for seed in 0..5 {
            let x = sample(&GridDensity::uniform(d), 7, seed).unwrap();
            let direct = eval_hf(&x, &spec).unwrap();
            let split = voronoi(&x, &mu).transport_cost(&mu, f);
            assert!((direct - split).abs() < 1e-14);
        }
    }
}

#[test]
fn wrong_kind_is_rejected() {
    let d = unit(8);
    let x = cfg(&[Point2::new(0.5, 0.5)], &d);
    let k = ObjectiveSpec::kernel(target(8), kernel(0.2)).unwrap();
    assert!(eval_hf(&x, &k).is_err());
    assert!(eval_hbar(&x, &k).is_err());
    assert!(free_weight_check(&x, &k).is_err());
    assert!(eval_fhn(&x, &ObjectiveSpec::distortion(target(8), CostKind::Quadratic)).is_err());
}

#[test]
fn hbar_single_agent_is_hf() {
    let d = unit(16);
    let x = cfg(&[Point2::new(0.4, 0.55)], &d);
    for f in [CostKind::Quadratic, CostKind::Linear] {
        let (v, _) = eval_hbar(&x, &ObjectiveSpec::balanced(target(16), f)).unwrap();
        let h = eval_hf(&x, &ObjectiveSpec::distortion(target(16), f)).unwrap();
        assert!((v - h).abs() < 1e-14);
    }
}

#[test]
fn hbar_symmetric_pair_needs_no_weights() {
    let d = unit(32);
    let mu = mirrored_target(32);
    let x = cfg(&pts(&[(0.3, 0.45), (0.7, 0.45)]), &d);
    let (v, w) = eval_hbar(&x, &ObjectiveSpec::balanced(mu.clone(), CostKind::Quadratic)).unwrap();
    assert!(w.omega().iter().all(|o| o.abs() < 1e-12));
    assert!((v - voronoi(&x, &mu).transport_cost(&mu, CostKind::Quadratic)).abs() < 1e-14);
}

#[test]
fn hbar_matches_lp() {
    let d = unit(16);
    let mu = target(16);
    for f in [CostKind::Quadratic, CostKind::Linear] {
        let spec = ObjectiveSpec::balanced(mu.clone(), f);
        for seed in 0..3 {
            let x = sample(&GridDensity::uniform(d), 5, 90 + seed).unwrap();
            let (v, _) = eval_hbar(&x, &spec).unwrap();
            let lp = ot_lp(
                &DiscreteMeasure::uniform(x.positions().to_vec()).unwrap(),
                &DiscreteMeasure::from_grid(&mu),
                f,
            )
            .unwrap();
            assert!((v - lp.cost).abs() < 1e-9, "{v} vs {}", lp.cost);
        }
    }
}

#[test]
fn free_weights_single_agent() {
    let d = unit(16);
    let spec = ObjectiveSpec::distortion(target(16), CostKind::Quadratic);
    let r = free_weight_check(&cfg(&[Point2::new(0.2, 0.8)], &d), &spec).unwrap();
    assert!(r.gap < 1e-12);
    assert!((r.w_lp[0] - 1.0).abs() < 1e-12);
}

#[test]
fn free_weights_symmetric_pair() {
    let d = unit(16);
    let spec = ObjectiveSpec::distortion(GridDensity::uniform(d), CostKind::Quadratic);
    let r = free_weight_check(&cfg(&pts(&[(0.25, 0.5), (0.75, 0.5)]), &d), &spec).unwrap();
    assert!(r.gap < 1e-12);
    for w in &r.w_lp {
        assert!((w - 0.5).abs() < 1e-12);
    }
}

#[test]
fn free_weights_random_instances() {
    let mut r = ChaCha8Rng::seed_from_u64(44);
    for trial in 0..20 {
        let side = [8, 12, 16][trial % 3];
        let d = unit(side);
        let f = if trial % 2 == 0 { CostKind::Quadratic } else { CostKind::Linear };
        let spec = ObjectiveSpec::distortion(target(side), f);
        let n = r.random_range(1..=FREE_WEIGHT_MAX_AGENTS);
        let x = sample(&GridDensity::uniform(d), n, r.random()).unwrap();
        let rep = free_weight_check(&x, &spec).unwrap();
        assert!(rep.gap <= 1e-9 * (1.0 + rep.h_f), "trial {trial}: gap {}", rep.gap);
        assert!(rep.weight_deviation <= rep.boundary_mass + 1e-12, "trial {trial}");
        assert!((rep.w_lp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn free_weights_guard() {
    let d = unit(64);
    let spec = ObjectiveSpec::distortion(GridDensity::uniform(d), CostKind::Quadratic);
    assert!(matches!(
        free_weight_check(&cfg(&[Point2::new(0.5, 0.5)], &d), &spec),
        Err(Error::TooLarge { .. })
    ));
    let d = unit(8);
    let spec = ObjectiveSpec::distortion(GridDensity::uniform(d), CostKind::Quadratic);
    let many = sample(&GridDensity::uniform(d), FREE_WEIGHT_MAX_AGENTS + 1, 1).unwrap();
    assert!(matches!(free_weight_check(&many, &spec), Err(Error::TooLarge { .. })));
}

#[test]
fn fhn_vanishes_on_matched_fixture() {
    let d = unit(64);
    let x = cfg(&four_agents(), &d);
    let k = kernel(0.08);
    let spec = ObjectiveSpec::kernel(mixture_density(&x, &k, &d).unwrap(), k).unwrap();
    assert!(eval_fhn(&x, &spec).unwrap().abs() < 1e-14);
    let g = grad_fhn(&x, &spec).unwrap();
    assert!(g.iter().all(|p| p.norm() < 1e-12));
}

#[test]
fn fhn_translation() {
    let d = unit(64);
    let x0 = pts(&[(0.3, 0.3), (0.6, 0.35), (0.4, 0.65)]);
    let k = kernel(0.08);
    let spec = ObjectiveSpec::kernel(mixture_density(&cfg(&x0, &d), &k, &d).unwrap(), k).unwrap();
    // displacements of a few cells; below that the rasterization floor dominates
    let t = Point2::new(0.05, -0.04);
    let moved: Vec<Point2> = x0.iter().map(|p| *p + t).collect();
    let v = eval_fhn(&cfg(&moved, &d), &spec).unwrap();
    assert!((v - t.norm_sq()).abs() <= 0.05 * t.norm_sq(), "{v} vs {}", t.norm_sq());
}

#[test]
fn fhn_converges_to_balanced_limit_as_h_shrinks() {
    // h -> 0 leaves the empirical measure, whose cost to the target is H-bar
    let d = unit(32);
    let mu = target(32);
    let x = cfg(&four_agents(), &d);
    let (limit, _) = eval_hbar(&x, &ObjectiveSpec::balanced(mu.clone(), CostKind::Quadratic)).unwrap();
    let err: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| limit - eval_fhn(&x, &ObjectiveSpec::kernel(mu.clone(), kernel(h)).unwrap()).unwrap())
        .collect();
    assert!(err.iter().all(|e| *e > 0.0));
    for w in err.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.4..0.75).contains(&ratio), "{err:?}");
    }
}

#[test]
fn fhn_rejects_agents_near_the_boundary() {
    let d = unit(32);
    let spec = ObjectiveSpec::kernel(target(32), kernel(0.1)).unwrap();
    let x = cfg(&pts(&[(0.05, 0.5)]), &d);
    assert!(matches!(eval_fhn(&x, &spec), Err(Error::ParticleTooCloseToBoundary(0))));
}

#[test]
fn grad_fhn_mirror_symmetry() {
    let d = unit(64);
    let spec = ObjectiveSpec::kernel(mirrored_target(64), kernel(0.1)).unwrap();
    let x = cfg(&pts(&[(0.3, 0.3), (0.7, 0.3), (0.4, 0.7), (0.6, 0.7)]), &d);
    let g = grad_fhn(&x, &spec).unwrap();
    for (a, b) in [(0, 1), (2, 3)] {
        assert!((g[a].x + g[b].x).abs() < 1e-6);
        assert!((g[a].y - g[b].y).abs() < 1e-6);
    }
}

#[test]
fn grad_fhn_matches_finite_differences() {
    // the LP value is piecewise linear in the cell masses, so small
    // components carry a few percent of kink noise; compare against the
    // largest component instead
    let d = unit(64);
    let spec = ObjectiveSpec::kernel(target(64), kernel(0.1)).unwrap();
    let x = four_agents();
    let g = grad_fhn(&cfg(&x, &d), &spec).unwrap();
    let fd = finite_difference(&x, 1e-3, |y| eval_fhn(&cfg(y, &d), &spec).unwrap());
    assert!(relative_gap(&g, &fd) <= 1e-2, "{g:?} vs {fd:?}");
    let q = grad_fhn_quadrature(&cfg(&x, &d), &spec).unwrap();
    assert!(relative_gap(&q, &fd) <= 3e-2, "{q:?} vs {fd:?}");
}

#[test]
fn grad_fhn_boundary_clamp() {
    let d = unit(32);
    let spec = ObjectiveSpec::kernel(make_grid(d, |p| p.x).unwrap(), kernel(0.1)).unwrap();
    // on the left wall of the admissible region the target pulls right; a
    // negative gradient component is allowed, a positive outward one is not
    let x = cfg(&pts(&[(0.1, 0.5)]), &d);
    let g = grad_fhn(&x, &spec).unwrap();
    assert!(g[0].x <= 0.0);
    let y = cfg(&pts(&[(0.9, 0.5)]), &d);
    let g = grad_fhn(&y, &spec).unwrap();
    assert!(g[0].x == 0.0 || g[0].x > 0.0);
    let s = spec.shrunken_domain().unwrap();
    assert_eq!(s.clamp_outward(Point2::new(0.9, 0.5), Point2::new(-1.0, 0.3)), Point2::new(0.0, 0.3));
}

#[test]
fn grad_hbar_vanishes_at_the_centroid() {
    let d = unit(32);
    let mu = target(32);
    let spec = ObjectiveSpec::balanced(mu.clone(), CostKind::Quadratic);
    let g = grad_hbar(&cfg(&[mu.mean()], &d), &spec).unwrap();
    assert!(g[0].norm() < 1e-14);
}

#[test]
fn grad_hbar_is_scaled_centroid_gap() {
    let d = unit(32);
    let spec = ObjectiveSpec::balanced(target(32), CostKind::Quadratic);
    let x = cfg(&four_agents(), &d);
    let g = grad_hbar(&x, &spec).unwrap();
    let solved = solve_hbar(&x, &spec, None).unwrap();
    let b = solved.partition.centroid();
    let w = solved.partition.mass();
    for i in 0..4 {
        let expect = (x.positions()[i] - b[i]) * (2.0 * w[i]);
        assert!(g[i].dist(expect) < 1e-12);
        assert!((w[i] - 0.25).abs() < 1e-4);
    }
}

#[test]
fn grad_hbar_symmetric_pair() {
    let d = unit(32);
    let spec = ObjectiveSpec::balanced(mirrored_target(32), CostKind::Quadratic);
    let g = grad_hbar(&cfg(&pts(&[(0.2, 0.55), (0.8, 0.55)]), &d), &spec).unwrap();
    assert!((g[0].norm() - g[1].norm()).abs() < 1e-12);
    assert!((g[0].x + g[1].x).abs() < 1e-12);
    assert!(g[0].x.abs() > 1e-3);
}

#[test]
fn grad_hbar_matches_finite_differences() {
    let d = unit(64);
    let x = four_agents();
    let opts = CapacityOptions {
        tol: 1e-6,
        ..CapacityOptions::for_sites(4)
    };
    for f in [CostKind::Quadratic, CostKind::Linear] {
        let spec = ObjectiveSpec::balanced(target(64), f).with_capacity_options(opts);
        let g = grad_hbar(&cfg(&x, &d), &spec).unwrap();
        let fd = finite_difference(&x, 1e-3, |y| eval_hbar(&cfg(y, &d), &spec).unwrap().0);
        assert!(relative_gap(&g, &fd) <= 2e-2, "{f:?}: {g:?} vs {fd:?}");
    }
}

#[test]
fn grad_hf_matches_finite_differences() {
    let d = unit(64);
    let spec = ObjectiveSpec::distortion(target(64), CostKind::Quadratic);
    let x = four_agents();
    let g = grad_hf(&cfg(&x, &d), &spec).unwrap();
    let fd = finite_difference(&x, 1e-3, |y| eval_hf(&cfg(y, &d), &spec).unwrap());
    assert!(relative_gap(&g, &fd) <= 2e-2, "{g:?} vs {fd:?}");
}

#[test]
fn smoothness_of_fixtures() {
    let mut s = PairSampler::new(Point2::ZERO, Point2::new(1.0, 1.0), 5, 0.1, 1);
    assert_eq!(estimate_smoothness(&ConstantToy(3.0), || s.sample(), 10).unwrap(), 0.0);
    let toy = QuadraticToy {
        anchors: pts(&[(0.4, 0.6)]),
        scale: 2.0,
    };
    let mut s = PairSampler::new(Point2::ZERO, Point2::new(1.0, 1.0), 1, 0.1, 2);
    let a = estimate_smoothness(&toy, || s.sample(), 20).unwrap();
    assert!((a - 2.0).abs() <= 0.2);
    assert!(estimate_smoothness(&toy, || s.sample(), 0).is_err());
}

#[test]
fn kernel_smoothness_scales_like_one_over_n() {
    let spec = ObjectiveSpec::kernel(target(64), kernel(0.05)).unwrap();
    let (lo, hi) = (Point2::new(0.08, 0.08), Point2::new(0.92, 0.92));
    let est = |n: usize| {
        let mut s = PairSampler::new(lo, hi, n, 0.03, 7);
        estimate_smoothness(&spec, || s.sample(), 10).unwrap()
    };
    let ratio = est(8) / est(16);
    assert!((1.5..=3.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn objective_trait_dispatch() {
    let d = unit(16);
    let x = four_agents();
    let hf = ObjectiveSpec::distortion(target(16), CostKind::Quadratic);
    assert_eq!(Objective::value(&hf, &x).unwrap(), eval_hf(&cfg(&x, &d), &hf).unwrap());
    let field = hf.freeze(&x).unwrap();
    let g = hf.gradient(&x).unwrap();
    for i in 0..4 {
        assert!(field.agent_gradient(i, x[i]).dist(g[i]) < 1e-15);
    }
    let hb = ObjectiveSpec::balanced(target(16), CostKind::Quadratic);
    let field = hb.freeze(&x).unwrap();
    let g = hb.gradient(&x).unwrap();
    for i in 0..4 {
        assert!(field.agent_gradient(i, x[i]).dist(g[i]) < 1e-15);
    }
    let k = ObjectiveSpec::kernel(target(16), kernel(0.2)).unwrap();
    assert_eq!(k.project(Point2::new(0.0, 0.5)), Point2::new(0.2, 0.5));
    assert_eq!(hf.project(Point2::new(-1.0, 0.5)), Point2::new(0.0, 0.5));
}

fn delta_config(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, delta: f64) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::new();
    while out.len() < n {
        let p = Point2::new(r.random_range(lo..hi), r.random_range(lo..hi));
        if out.iter().all(|q| q.dist(p) > delta) {
            out.push(p);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn comparison_on_monotone_pairs(seed in 0u64..10_000) {
        let d = unit(32);
        let (h, delta) = (0.06, 0.15);
        let spec = ObjectiveSpec::kernel(target(32), kernel(h)).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = delta_config(&mut r, 4, 0.1, 0.9, delta);
        prop_assume!(in_delta_set(&cfg(&x, &d), &d, delta));
        let y: Vec<Point2> = x
            .iter()
            .map(|p| {
                let t = r.random_range(0.0..core::f64::consts::TAU);
                let s = r.random_range(0.0..0.45 * delta);
                spec.project(*p + Point2::new(s * libm::cos(t), s * libm::sin(t)))
            })
            .collect();
        prop_assume!(cyclically_monotone_with(&x, &y, MonotoneMode::Auto).unwrap());
        let fx = eval_fhn(&cfg(&x, &d), &spec).unwrap();
        let fy = eval_fhn(&cfg(&y, &d), &spec).unwrap();
        let g = grad_fhn(&cfg(&x, &d), &spec).unwrap();
        let lin: f64 = g.iter().zip(x.iter().zip(&y)).map(|(g, (a, b))| g.dot(*b - *a)).sum();
        let cw = d.cell_width();
        let tol = 3.0 * (1e-9 + cw * cw / 3.0);
        prop_assert!(fy >= fx + lin - tol, "{fy} < {fx} + {lin} - {tol}");
    }

    #[test]
    fn objectives_are_permutation_invariant(seed in 0u64..10_000) {
        let mu = target(16);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = delta_config(&mut r, 5, 0.2, 0.8, 0.05);
        let mut y = x.clone();
        y.rotate_left(2);
        y.swap(0, 3);
        let hf = ObjectiveSpec::distortion(mu.clone(), CostKind::Quadratic);
        prop_assert_eq!(hf.value(&x).unwrap(), hf.value(&y).unwrap());
        let hb = ObjectiveSpec::balanced(mu.clone(), CostKind::Quadratic);
        prop_assert!((hb.value(&x).unwrap() - hb.value(&y).unwrap()).abs() < 1e-12);
        let k = ObjectiveSpec::kernel(mu, kernel(0.15)).unwrap();
        prop_assert!((k.value(&x).unwrap() - k.value(&y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn balanced_dominates_distortion(seed in 0u64..10_000, n in 1usize..8) {
        let d = unit(16);
        let mu = target(16);
        let x = sample(&GridDensity::uniform(d), n, seed).unwrap();
        for f in [CostKind::Quadratic, CostKind::Linear] {
            let h = eval_hf(&x, &ObjectiveSpec::distortion(mu.clone(), f)).unwrap();
            let (b, _) = eval_hbar(&x, &ObjectiveSpec::balanced(mu.clone(), f)).unwrap();
            prop_assert!(b >= h - 1e-12);
        }
    }
}
