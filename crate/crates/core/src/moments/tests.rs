use super::*;
use crate::linalg::expm_metzler;
use crate::model::WalkKernel;
use proptest::prelude::*;

fn line_model(beta: f64) -> BrwModel {
    BrwModel::new(WalkKernel::simple(1, 1.0).unwrap(), OffspringLaw::binary(0.0, beta).unwrap()).unwrap()
}

fn tight() -> OdeOptions {
    OdeOptions::with_tolerances(1e-12, 1e-11)
}

/// Brute-force source term straight from the composition sum.
fn g_by_compositions(law: &OffspringLaw, lower: &[f64]) -> f64 {
    let n = lower.len() + 1;
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    (2..=n)
        .map(|r| {
            let inner: f64 = combinatorics::compositions(n, r)
                .iter()
                .map(|c| {
                    let denom: f64 = c.iter().map(|&i| fact(i)).product();
                    let prod: f64 = c.iter().map(|&i| lower[i - 1]).product();
                    fact(n) / denom * prod
                })
                .sum();
            law.factorial_moment(r) / fact(r) * inner
        })
        .sum()
}

#[test]
fn g2_and_g3_closed_forms() {
    let law = OffspringLaw::new(0.4, &[0.7, 0.3]).unwrap();
    let (b2, b3) = (law.factorial_moment(2), law.factorial_moment(3));
    let (m1, m2) = (1.3, 2.9);
    assert!((g_n(&law, &[m1]).unwrap() - b2 * m1 * m1).abs() < 1e-12);
    let expected = 3.0 * b2 * m1 * m2 + b3 * m1.powi(3);
    assert!((g_n(&law, &[m1, m2]).unwrap() - expected).abs() < 1e-12);
    assert_eq!(g_n(&law, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
    assert!(g_n(&law, &[]).is_err());
}

#[test]
fn composition_identity_exact_up_to_six() {
    let primes = [2i128, 3, 5, 7, 11, 13];
    for n in 2..=6 {
        for r in 2..=n {
            assert_eq!(
                combinatorics::composition_form(n, r, &primes),
                combinatorics::partition_form(n, r, &primes),
                "n={n} r={r}"
            );
        }
    }
}

proptest! {
    #[test]
    fn g_n_matches_composition_enumeration(
        b0 in 0.0..2.0f64,
        higher in proptest::collection::vec(0.0..2.0f64, 1..5),
        lower in proptest::collection::vec(0.0..4.0f64, 1..6),
    ) {
        let law = OffspringLaw::new(b0, &higher).unwrap();
        let fast = g_n(&law, &lower).unwrap();
        let slow = g_by_compositions(&law, &lower);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0));
    }
}

#[test]
fn time_grid_validation() {
    assert!(TimeGrid::uniform(-1.0, 4).is_err());
    assert!(TimeGrid::uniform(1.0, 0).is_err());
    assert!(TimeGrid::from_times(vec![0.0, 1.0, 1.0]).is_err());
    assert!(TimeGrid::from_times(vec![0.5, 1.0]).is_err());
    let g = TimeGrid::uniform(2.0, 4).unwrap();
    assert_eq!(g.times(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    assert_eq!(g.uniform_step(), Some(0.5));
    assert_eq!(TimeGrid::from_times(vec![0.0, 1.0, 3.0]).unwrap().uniform_step(), None);
}

#[test]
fn pure_walk_conserves_total_mean_in_interior() {
    let model = line_model(0.0);
    let lattice = LatticeBox::new(1, 30).unwrap();
    let grid = TimeGrid::uniform(2.0, 4).unwrap();
    let m = evolve_first_moment(&model, lattice, Flavor::Total, &grid, &OdeOptions::default()).unwrap();
    for k in 0..grid.len() {
        for x in -5..=5 {
            let v = m.value(k, &Site::new(&[x]).unwrap()).unwrap();
            assert!((v - 1.0).abs() < 1e-8, "t={} x={x}: {v}", grid.times()[k]);
        }
    }
}

#[test]
fn initial_slices_match_flavors() {
    let model = line_model(1.0);
    let lattice = LatticeBox::new(1, 5).unwrap();
    let grid = TimeGrid::uniform(1.0, 2).unwrap();
    let target = Site::new(&[2]).unwrap();
    let local = evolve_first_moment(&model, lattice, Flavor::Local { target }, &grid, &OdeOptions::default()).unwrap();
    for (i, site) in lattice.sites().enumerate() {
        assert_eq!(local.slice(0)[i], if site == target { 1.0 } else { 0.0 });
    }
    let fwd = evolve_forward_first_moment(&model, lattice, &grid, &OdeOptions::default()).unwrap();
    assert!(fwd.slice(0).iter().all(|&v| v == 1.0));
    assert_eq!(fwd.flavor(), Flavor::ForwardInfinite);
    let outside = Flavor::Local { target: Site::new(&[9]).unwrap() };
    assert!(evolve_first_moment(&model, lattice, outside, &grid, &OdeOptions::default()).is_err());
}

#[test]
fn first_moment_matches_matrix_exponential() {
    let model = line_model(2.0);
    let lattice = LatticeBox::new(1, 20).unwrap();
    let grid = TimeGrid::from_times(vec![0.0, 0.5, 1.0]).unwrap();
    let m = evolve_first_moment(&model, lattice, Flavor::Total, &grid, &OdeOptions::default()).unwrap();
    let h = build_operator(&model, lattice, true).unwrap().to_dense();
    let e = expm_metzler(&h, 1.0);
    let o = lattice.origin_index();
    let exact: f64 = e.row(o).iter().sum();
    let got = m.slice(2)[o];
    assert!(((got - exact) / exact).abs() < 1e-8, "{got} vs {exact}");
}

#[test]
fn order_one_cascade_equals_first_moment() {
    let model = line_model(0.5);
    let lattice = LatticeBox::new(1, 10).unwrap();
    let grid = TimeGrid::uniform(1.0, 5).unwrap();
    let opts = OdeOptions::default();
    let cascade = evolve_higher_moments(&model, lattice, Flavor::Total, 1, &grid, &opts).unwrap();
    let direct = evolve_first_moment(&model, lattice, Flavor::Total, &grid, &opts).unwrap();
    assert_eq!(cascade[0], direct);
}

#[test]
fn lyapunov_inequalities_hold() {
    for flavor in [Flavor::Total, Flavor::Local { target: Site::new(&[1]).unwrap() }] {
        let model = line_model(0.8);
        let lattice = LatticeBox::new(1, 12).unwrap();
        let grid = TimeGrid::uniform(3.0, 12).unwrap();
        let fields = evolve_higher_moments(&model, lattice, flavor, 4, &grid, &OdeOptions::default()).unwrap();
        for k in 0..grid.len() {
            for i in 0..lattice.len() {
                let m: Vec<f64> = fields.iter().map(|f| f.slice(k)[i]).collect();
                assert!(m.iter().all(|&v| v >= -1e-12));
                assert!(m[1] >= m[0] * m[0] - 1e-10, "{flavor} k={k} i={i}");
                assert!(m[3] >= m[1] * m[1] - 1e-8 * m[3].max(1.0));
            }
        }
    }
}

#[test]
fn forward_moments_beyond_first_are_rejected() {
    let model = line_model(0.5);
    let lattice = LatticeBox::new(1, 4).unwrap();
    let grid = TimeGrid::uniform(1.0, 2).unwrap();
    assert!(evolve_higher_moments(&model, lattice, Flavor::ForwardInfinite, 2, &grid, &OdeOptions::default()).is_err());
    assert!(evolve_higher_moments(&model, lattice, Flavor::Total, 0, &grid, &OdeOptions::default()).is_err());
}

#[test]
fn simpson_weights_integrate_cubics_exactly() {
    for m in 2..9 {
        let h = 0.3;
        let w = simpson_weights(m, h);
        let integral: f64 = w.iter().enumerate().map(|(j, w)| w * (j as f64 * h).powi(3)).sum();
        let exact = (m as f64 * h).powi(4) / 4.0;
        assert!((integral - exact).abs() < 1e-12, "m={m}");
    }
    let w = simpson_weights(1, 0.5);
    assert_eq!(w, vec![0.25, 0.25]);
}

#[test]
fn integral_oracle_agrees_with_cascade() {
    let model = line_model(0.5);
    let lattice = LatticeBox::new(1, 20).unwrap();
    let grid = TimeGrid::uniform(2.0, 399).unwrap();
    let opts = tight();
    let ode = evolve_higher_moments(&model, lattice, Flavor::Total, 2, &grid, &opts).unwrap();
    let oracle = integral_moment_oracle(&model, lattice, Flavor::Total, 2, &grid, &opts).unwrap();
    let last = grid.len() - 1;
    for x in [0, 3, -7] {
        let s = Site::new(&[x]).unwrap();
        let a = ode[1].value(last, &s).unwrap();
        let b = oracle.value(last, &s).unwrap();
        assert!(((a - b) / a).abs() < 1e-4, "x={x}: {a} vs {b}");
    }
    let first = integral_moment_oracle(&model, lattice, Flavor::Total, 1, &grid, &opts).unwrap();
    assert_eq!(first, evolve_first_moment(&model, lattice, Flavor::Total, &grid, &opts).unwrap());
}

#[test]
fn integral_oracle_rejects_coarse_grids() {
    let model = line_model(0.5);
    let lattice = LatticeBox::new(1, 4).unwrap();
    let grid = TimeGrid::uniform(1.0, 1).unwrap();
    let err = integral_moment_oracle(&model, lattice, Flavor::Total, 2, &grid, &OdeOptions::default()).unwrap_err();
    assert!(matches!(err, Error::GridTooCoarse(_)));
    let uneven = TimeGrid::from_times(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
    assert!(integral_moment_oracle(&model, lattice, Flavor::Total, 2, &uneven, &OdeOptions::default()).is_err());
}

#[test]
fn generating_function_fixed_point_at_zero() {
    let model = line_model(1.5);
    let lattice = LatticeBox::new(1, 8).unwrap();
    let grid = TimeGrid::uniform(2.0, 4).unwrap();
    for flavor in [Flavor::Total, Flavor::Local { target: Site::origin(1) }] {
        let f = solve_generating_function(&model, lattice, LaplaceParameter::Finite(0.0), flavor, &grid, &OdeOptions::default())
            .unwrap();
        for k in 0..grid.len() {
            assert!(f.slice(k).iter().all(|&v| (v - 1.0).abs() < 1e-14));
        }
    }
    assert!(solve_generating_function(&model, lattice, LaplaceParameter::Finite(-0.1), Flavor::Total, &grid, &OdeOptions::default())
        .is_err());
}

#[test]
fn extinction_probability_is_monotone_in_time() {
    let model = BrwModel::new(WalkKernel::simple(1, 1.0).unwrap(), OffspringLaw::binary(0.5, 3.0).unwrap()).unwrap();
    let lattice = LatticeBox::new(1, 15).unwrap();
    let grid = TimeGrid::uniform(5.0, 50).unwrap();
    let f = solve_generating_function(&model, lattice, LaplaceParameter::Infinite, Flavor::Total, &grid, &OdeOptions::default())
        .unwrap();
    let series = f.series(&Site::origin(1)).unwrap();
    assert_eq!(series[0], 0.0);
    for w in series.windows(2) {
        assert!(w[1] >= w[0] - 1e-12 && w[1] <= 1.0);
    }
}

#[test]
fn pure_death_single_site_closed_form() {
    let b0 = 0.7;
    let model = BrwModel::new(WalkKernel::simple(1, 1e-9).unwrap(), OffspringLaw::new(b0, &[]).unwrap()).unwrap();
    let lattice = LatticeBox::new(1, 1).unwrap();
    let grid = TimeGrid::uniform(4.0, 8).unwrap();
    let f = solve_generating_function(&model, lattice, LaplaceParameter::Infinite, Flavor::Total, &grid, &tight()).unwrap();
    for (k, t) in grid.times().iter().enumerate() {
        let exact = 1.0 - (-b0 * t).exp();
        let got = f.value(k, &Site::origin(1)).unwrap();
        assert!((got - exact).abs() < 1e-7, "t={t}: {got} vs {exact}");
    }
}

#[test]
fn generating_function_decreases_in_z() {
    let model = line_model(1.0);
    let lattice = LatticeBox::new(1, 10).unwrap();
    let grid = TimeGrid::uniform(1.5, 3).unwrap();
    let zs = [
        LaplaceParameter::Finite(0.0),
        LaplaceParameter::Finite(0.3),
        LaplaceParameter::Finite(2.0),
        LaplaceParameter::Infinite,
    ];
    let target = Flavor::Local { target: Site::new(&[1]).unwrap() };
    let fields: Vec<_> = zs
        .iter()
        .map(|&z| solve_generating_function(&model, lattice, z, target, &grid, &OdeOptions::default()).unwrap())
        .collect();
    for w in fields.windows(2) {
        for k in 0..grid.len() {
            for (a, b) in w[0].slice(k).iter().zip(w[1].slice(k)) {
                assert!(b <= &(a + 1e-12));
            }
        }
    }
}

#[test]
fn z_derivative_recovers_first_moment() {
    let model = line_model(0.5);
    let lattice = LatticeBox::new(1, 15).unwrap();
    let grid = TimeGrid::uniform(2.0, 8).unwrap();
    let opts = tight();
    for flavor in [Flavor::Total, Flavor::Local { target: Site::origin(1) }] {
        let fd = first_moment_from_generating_function(&model, lattice, flavor, &grid, 1e-4, &opts).unwrap();
        let m = evolve_first_moment(&model, lattice, flavor, &grid, &opts).unwrap();
        for k in 0..grid.len() {
            for (a, b) in fd.slice(k).iter().zip(m.slice(k)) {
                assert!((a - b).abs() < 1e-4, "{flavor} k={k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn halving_tolerance_is_stable() {
    let model = line_model(0.5);
    let lattice = LatticeBox::new(1, 20).unwrap();
    let grid = TimeGrid::uniform(2.0, 4).unwrap();
    let base = OdeOptions::default();
    let half = OdeOptions::with_tolerances(base.atol / 2.0, base.rtol / 2.0);
    let a = evolve_higher_moments(&model, lattice, Flavor::Total, 3, &grid, &base).unwrap();
    let b = evolve_higher_moments(&model, lattice, Flavor::Total, 3, &grid, &half).unwrap();
    for (fa, fb) in a.iter().zip(&b) {
        for k in 0..grid.len() {
            for (x, y) in fa.slice(k).iter().zip(fb.slice(k)) {
                assert!((x - y).abs() < 1e-8 * x.abs().max(1.0), "order {}", fa.order());
            }
        }
    }
}
