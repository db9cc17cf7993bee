use super::*;
use crate::domain::{make_grid, sample, Domain};
use crate::transport::{ot_lp, DiscreteMeasure};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::vec::Vec;

fn unit(n: usize) -> Domain {
    Domain::unit_square(n).unwrap()
}

fn bimodal(n: usize) -> GridDensity {
    let g = |p: Point2, m: Point2, s: f64| libm::exp(-p.dist_sq(m) / (2.0 * s * s));
    make_grid(unit(n), |p| g(p, Point2::new(0.3, 0.35), 0.1) + 0.8 * g(p, Point2::new(0.7, 0.65), 0.12)).unwrap()
}

fn config(points: &[(f64, f64)], d: &Domain) -> ParticleConfig {
    ParticleConfig::new(points.iter().map(|&(x, y)| Point2::new(x, y)).collect(), d).unwrap()
}

fn brute_assign(sites: &[Point2], d: &Domain, score: impl Fn(Point2, usize) -> f64) -> Vec<usize> {
    (0..d.num_cells())
        .map(|c| {
            let p = d.center(c);
            let mut best = 0;
            for i in 1..sites.len() {
                if score(p, i) < score(p, best) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[test]
fn single_site_owns_everything() {
    let d = unit(16);
    let mu = GridDensity::uniform(d);
    let p = voronoi(&config(&[(0.2, 0.7)], &d), &mu);
    assert!((p.mass()[0] - 1.0).abs() < 1e-12);
    assert!(p.centroid()[0].dist(Point2::new(0.5, 0.5)) < 1e-12);
    assert!(p.boundary_cells().is_empty());
}

#[test]
fn two_mirror_sites_split_evenly() {
    let d = unit(15);
    let mu = GridDensity::uniform(d);
    let p = voronoi(&config(&[(0.25, 0.5), (0.75, 0.5)], &d), &mu);
    // with an odd grid the middle column is a tie and goes to site 0
    let row_mass = 1.0 / 15.0;
    assert!((p.mass()[0] - 0.5).abs() <= row_mass);
    assert!((p.mass()[0] + p.mass()[1] - 1.0).abs() < 1e-12);
    assert_eq!(p.boundary_cells().len(), 15);
    let even = voronoi(&config(&[(0.25, 0.5), (0.75, 0.5)], &unit(16)), &GridDensity::uniform(unit(16)));
    assert!((even.mass()[0] - 0.5).abs() < 1e-12);
}

#[test]
fn voronoi_matches_brute_force() {
    let d = unit(24);
    let mu = bimodal(24);
    for seed in 0..5 {
        let sites = sample(&GridDensity::uniform(d), 5, seed).unwrap();
        let p = voronoi(&sites, &mu);
        let x = sites.positions();
        let expect = brute_assign(x, &d, |c, i| c.dist(x[i]));
        assert_eq!(p.assign(), &expect[..]);
    }
}

#[test]
fn equal_weights_reproduce_voronoi() {
    let d = unit(20);
    let mu = bimodal(20);
    let sites = sample(&GridDensity::uniform(d), 6, 3).unwrap();
    let plain = voronoi(&sites, &mu);
    let shifted = weighted_voronoi(&sites, &mu, CostKind::Quadratic, &[0.3; 6]).unwrap();
    assert_eq!(plain.assign(), shifted.assign());
    assert_eq!(plain.mass(), shifted.mass());
    assert!(weighted_voronoi(&sites, &mu, CostKind::Quadratic, &[0.0; 5]).is_err());
}

#[test]
fn own_weight_grows_own_cell() {
    let d = unit(32);
    let mu = GridDensity::uniform(d);
    let sites = config(&[(0.25, 0.5), (0.75, 0.5)], &d);
    let p = weighted_voronoi(&sites, &mu, CostKind::Quadratic, &[0.1, -0.1]).unwrap();
    assert!(p.mass()[0] > 0.5);
}

#[test]
fn weighted_voronoi_matches_brute_force() {
    let d = unit(24);
    let mu = bimodal(24);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for f in [CostKind::Quadratic, CostKind::Linear] {
        for seed in 0..4 {
            let sites = sample(&GridDensity::uniform(d), 6, 40 + seed).unwrap();
            let w: Vec<f64> = (0..6).map(|_| r.random_range(-0.05..0.05)).collect();
            let p = weighted_voronoi(&sites, &mu, f, &w).unwrap();
            let x = sites.positions();
            let expect = brute_assign(x, &d, |c, i| f.cost(c, x[i]) - w[i]);
            assert_eq!(p.assign(), &expect[..]);
        }
    }
}

#[test]
fn centroids_examples() {
    let d = unit(16);
    let mu = bimodal(16);
    let single = voronoi(&config(&[(0.1, 0.9)], &d), &mu);
    assert!(centroids(&single, &mu)[0].dist(mu.mean()) < 1e-12);

    let uni = GridDensity::uniform(d);
    let pair = voronoi(&config(&[(0.3, 0.4), (0.7, 0.4)], &d), &uni);
    let b = centroids(&pair, &uni);
    assert!((b[0].mirror_x(0.5) - b[1]).norm() < 1e-12);

    let sites = sample(&uni, 7, 9).unwrap();
    let p = voronoi(&sites, &mu);
    let b = centroids(&p, &mu);
    for i in 0..7 {
        let (mut m, mut s) = (0.0, Point2::ZERO);
        for c in 0..d.num_cells() {
            if p.assign()[c] == i {
                m += mu.mass()[c];
                s += d.center(c) * mu.mass()[c];
            }
        }
        let expect = if m > 0.0 { s * (1.0 / m) } else { sites.positions()[i] };
        assert!(b[i].dist(expect) < 1e-12);
        assert!(b[i].dist(p.centroid()[i]) < 1e-15);
    }
}

#[test]
fn empty_cells_keep_site_position() {
    let d = unit(8);
    let mu = GridDensity::one_hot(d, 0).unwrap();
    let sites = config(&[(0.05, 0.05), (0.9, 0.9)], &d);
    let p = voronoi(&sites, &mu);
    assert_eq!(p.mass()[1], 0.0);
    assert_eq!(centroids(&p, &mu)[1], Point2::new(0.9, 0.9));
}

#[test]
fn symmetric_capacity_problem_has_zero_weights() {
    let d = unit(32);
    let mu = bimodal(32);
    let mu_sym = GridDensity::from_weights(
        d,
        (0..d.num_cells())
            .map(|c| {
                let (ix, iy) = d.coords(c);
                mu.mass()[c] + mu.mass()[d.index(d.nx() - 1 - ix, iy)]
            })
            .collect(),
    )
    .unwrap();
    let sites = config(&[(0.3, 0.45), (0.7, 0.45)], &d);
    let opts = CapacityOptions::for_sites(2);
    let out = solve_capacity_weights(&sites, &mu_sym, CostKind::Quadratic, &[0.5, 0.5], &opts).unwrap();
    assert!(out.weights.omega().iter().all(|w| w.abs() < 1e-12));
    assert!(out.weights.max_residual() <= opts.tol);
    assert_eq!(out.iterations, 0);
}

#[test]
fn random_capacity_problem_meets_tolerance() {
    let d = unit(32);
    let mu = GridDensity::uniform(d);
    for seed in 0..4 {
        let sites = sample(&mu, 4, 70 + seed).unwrap();
        let opts = CapacityOptions {
            tol: 1e-4,
            ..CapacityOptions::for_sites(4)
        };
        let out = solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &[0.25; 4], &opts).unwrap();
        assert!(out.weights.max_residual() <= 1e-4);
        // recount from the pieces
        let mut m = [0.0; 4];
        for &(_, i, x) in out.partition.pieces() {
            m[i] += x;
        }
        for i in 0..4 {
            assert!((m[i] - 0.25).abs() <= 1e-4);
        }
        let w = out.weights.omega();
        assert!(w.iter().sum::<f64>().abs() < 1e-12);
        // whole-cell Laguerre cells under the solved weights differ only on shared cells
        let lag = weighted_voronoi(&sites, &mu, CostKind::Quadratic, w).unwrap();
        for c in 0..d.num_cells() {
            if lag.assign()[c] != out.partition.assign()[c] {
                assert!(out.partition.boundary_cells().contains(&c));
            }
        }
    }
}

#[test]
fn voronoi_masses_are_a_fixed_point() {
    let d = unit(24);
    let mu = bimodal(24);
    let sites = sample(&GridDensity::uniform(d), 5, 2).unwrap();
    let part = voronoi(&sites, &mu);
    let out = solve_capacity_weights(&sites, &mu, CostKind::Quadratic, part.mass(), &CapacityOptions::for_sites(5)).unwrap();
    assert_eq!(out.iterations, 0);
    assert!(!out.polished);
    assert!(out.weights.omega().iter().all(|w| w.abs() < 1e-15));
}

#[test]
fn polished_solution_is_optimal_transport() {
    let d = unit(16);
    let mu = bimodal(16);
    for f in [CostKind::Quadratic, CostKind::Linear] {
        let sites = sample(&GridDensity::uniform(d), 5, 17).unwrap();
        let t = [0.1, 0.3, 0.2, 0.25, 0.15];
        let out = solve_capacity_weights(&sites, &mu, f, &t, &CapacityOptions::for_sites(5)).unwrap();
        assert!(out.weights.max_residual() < 1e-12);
        let lp = ot_lp(
            &DiscreteMeasure::new(sites.positions().to_vec(), t.to_vec()).unwrap(),
            &DiscreteMeasure::from_grid(&mu),
            f,
        )
        .unwrap();
        assert!((out.partition.transport_cost(&mu, f) - lp.cost).abs() < 1e-12);
        // every piece sits where its site minimizes the Laguerre score
        let w = out.weights.omega();
        for &(c, i, _) in out.partition.pieces() {
            let p = d.center(c);
            let own = f.cost(p, sites.positions()[i]) - w[i];
            for j in 0..5 {
                assert!(own <= f.cost(p, sites.positions()[j]) - w[j] + 1e-9);
            }
        }
    }
}

#[test]
fn unpolished_ascent_reports_failure() {
    let d = unit(16);
    let mu = GridDensity::uniform(d);
    let sites = config(&[(0.3, 0.3), (0.3, 0.3), (0.7, 0.7)], &d);
    let opts = CapacityOptions {
        tol: 1e-9,
        max_iter: 50,
        polish: false,
    };
    let t = [1.0 / 3.0; 3];
    match solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &t, &opts) {
        Err(Error::MaxIterExceeded { best }) => assert!(best.max_residual() > 1e-9),
        Err(Error::CapacityUnreachable { site }) => assert!(site < 2),
        other => panic!("expected a failure, got {other:?}"),
    }
    // with polishing the duplicate sites share their cells
    let out = solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &t, &CapacityOptions::for_sites(3)).unwrap();
    assert!(out.weights.max_residual() < 1e-12);
}

#[test]
fn capacity_argument_checks() {
    let d = unit(8);
    let mu = GridDensity::uniform(d);
    let sites = config(&[(0.3, 0.3), (0.6, 0.6)], &d);
    let opts = CapacityOptions::for_sites(2);
    assert!(solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &[1.0], &opts).is_err());
    assert!(solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &[0.7, 0.7], &opts).is_err());
    assert!(solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &[1.0, 0.0], &opts).is_err());
}

#[test]
fn dual_ascent_never_decreases_the_dual() {
    let d = unit(24);
    let mu = bimodal(24);
    let sites = sample(&GridDensity::uniform(d), 6, 8).unwrap();
    let t = [1.0 / 6.0; 6];
    let base = Scores {
        sites: sites.positions(),
        centers: mu.support().iter().map(|&c| d.center(c)).collect(),
        mass: mu.support().iter().map(|&c| mu.mass()[c]).collect(),
        cells: mu.support(),
        f_kind: CostKind::Quadratic,
    };
    let mut masses = [0.0; 6];
    let mut last = f64::NEG_INFINITY;
    for k in 0..30 {
        let opts = CapacityOptions {
            tol: 1e-12,
            max_iter: k,
            polish: false,
        };
        let omega = match solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &t, &opts) {
            Err(Error::MaxIterExceeded { best }) => best.omega().to_vec(),
            other => panic!("unexpected {other:?}"),
        };
        let phi = base.evaluate(&omega, &t, &mut masses);
        assert!(phi >= last - 1e-15, "step {k}: {phi} < {last}");
        last = phi;
    }
}

#[test]
fn warm_start_reaches_same_partition() {
    let d = unit(32);
    let mu = bimodal(32);
    let sites = sample(&GridDensity::uniform(d), 8, 4).unwrap();
    let t = [0.125; 8];
    let opts = CapacityOptions::for_sites(8);
    let cold = solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &t, &opts).unwrap();
    let warm = solve_capacity_weights_from(&sites, &mu, CostKind::Quadratic, &t, Some(cold.weights.omega()), &opts).unwrap();
    let (a, b) = (cold.partition.transport_cost(&mu, CostKind::Quadratic), warm.partition.transport_cost(&mu, CostKind::Quadratic));
    assert!((a - b).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masses_sum_to_one(seed in 0u64..10_000, n in 1usize..9) {
        let mu = bimodal(12);
        let sites = sample(&GridDensity::uniform(unit(12)), n, seed).unwrap();
        let p = voronoi(&sites, &mu);
        prop_assert!((p.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let t = vec![1.0 / n as f64; n];
        let out = solve_capacity_weights(&sites, &mu, CostKind::Quadratic, &t, &CapacityOptions::for_sites(n)).unwrap();
        prop_assert!((out.partition.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(out.weights.max_residual() <= 1e-4 / n as f64);
    }

    #[test]
    fn cells_monotone_in_own_weight(seed in 0u64..10_000, i in 0usize..5, bump in 0.0f64..0.2) {
        let mu = GridDensity::uniform(unit(12));
        let sites = sample(&mu, 5, seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..5).map(|_| r.random_range(-0.05..0.05)).collect();
        let mut w2 = w.clone();
        w2[i] += bump;
        let a = weighted_voronoi(&sites, &mu, CostKind::Quadratic, &w).unwrap();
        let b = weighted_voronoi(&sites, &mu, CostKind::Quadratic, &w2).unwrap();
        for c in 0..144 {
            if a.assign()[c] == i {
                prop_assert_eq!(b.assign()[c], i);
            }
        }
    }

    #[test]
    fn centroids_lie_in_cell_hull(seed in 0u64..10_000) {
        let d = unit(12);
        let mu = bimodal(12);
        let sites = sample(&GridDensity::uniform(d), 5, seed).unwrap();
        let p = voronoi(&sites, &mu);
        for i in 0..5 {
            let cells: Vec<Point2> = (0..144).filter(|&c| p.assign()[c] == i && mu.mass()[c] > 0.0).map(|c| d.center(c)).collect();
            if cells.is_empty() {
                continue;
            }
            let b = p.centroid()[i];
            let (lx, hx) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), q| (l.min(q.x), h.max(q.x)));
            let (ly, hy) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), q| (l.min(q.y), h.max(q.y)));
            prop_assert!(b.x >= lx - 1e-12 && b.x <= hx + 1e-12 && b.y >= ly - 1e-12 && b.y <= hy + 1e-12);
        }
    }
}
