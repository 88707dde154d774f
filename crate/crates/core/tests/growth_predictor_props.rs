use gridabs_core::growth::{check_growth_monotone, GrowthBound, PredictorTerm};
use gridabs_core::numat::{expm, Matrix};
use gridabs_core::predictor::{
    exact_expected_cells, mc_expected_cells, predict_family, predict_single, GridParameter,
};
use proptest::prelude::*;

fn growth_bound() -> impl Strategy<Value = GrowthBound> {
    (1usize..=4).prop_flat_map(|n| {
        (
            proptest::collection::vec(-2.0..1.0f64, n),
            proptest::collection::vec(prop_oneof![Just(0.0), 0.0..1.5f64], n * n),
            proptest::collection::vec(0.0..0.5f64, n),
            0.01..1.0f64,
        )
            .prop_map(move |(d, off, v, tau)| {
                let l = Matrix::from_fn(n, n, |i, j| if i == j { d[i] } else { off[i * n + j] });
                GrowthBound::new(l, v, tau).unwrap()
            })
    })
}

fn positive_vec(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn growth_bounds_are_monotone(gb in growth_bound(), seed in any::<u64>()) {
        prop_assert!(check_growth_monotone(&gb, 50, seed));
        prop_assert_eq!(gb.eval(&vec![0.0; gb.dim()]).unwrap(), gb.v().to_vec());
    }

    #[test]
    fn predictor_equals_expected_cells_of_inflated_radius(
        (gb, eta, z) in growth_bound().prop_flat_map(|gb| {
            let n = gb.dim();
            (Just(gb), positive_vec(n, 0.01, 3.0), positive_vec(n, 0.0, 0.2))
        })
    ) {
        let term = gb.to_predictor_term(&z).unwrap();
        let r0: Vec<f64> = eta.iter().zip(&z).map(|(e, z)| e / 2.0 + z).collect();
        let beta = gb.eval(&r0).unwrap();
        let r: Vec<f64> = beta.iter().zip(&r0).map(|(b, r)| b + r).collect();
        let eta = GridParameter::new(eta).unwrap();
        let lhs = predict_single(&term, &eta).unwrap();
        let rhs = exact_expected_cells(&eta, &r).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn predictor_term_structure(gb in growth_bound()) {
        let n = gb.dim();
        let term = gb.to_predictor_term(&vec![0.0; n]).unwrap();
        let flow = expm(gb.l(), gb.tau()).unwrap();
        for i in 0..n {
            prop_assert!(term.a()[(i, i)] >= 1.0);
            prop_assert!((term.p()[i] - 2.0 * gb.v()[i]).abs() <= 1e-15 * (1.0 + gb.v()[i]));
            for j in 0..n {
                let expect = flow[(i, j)] + if i == j { 1.0 } else { 0.0 };
                prop_assert!((term.a()[(i, j)] - expect).abs() <= 1e-12 * (1.0 + expect));
            }
        }
    }

    #[test]
    fn zero_offset_predictor_is_scale_invariant(
        (a, eta) in (1usize..=4).prop_flat_map(|n| (
            proptest::collection::vec(0.0..2.0f64, n * n), positive_vec(n, 0.05, 4.0))),
        t in 0.01..100.0f64,
    ) {
        let n = eta.len();
        let a = Matrix::from_fn(n, n, |i, j| if i == j { a[i * n + j] + 0.1 } else { a[i * n + j] });
        let term = PredictorTerm::new(a, vec![0.0; n]).unwrap();
        let base = predict_single(&term, &GridParameter::new(eta.clone()).unwrap()).unwrap();
        let scaled = predict_single(
            &term,
            &GridParameter::new(eta.iter().map(|e| e * t).collect()).unwrap(),
        )
        .unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base);
    }

    #[test]
    fn predictor_is_monotone_in_offset_and_additive(
        (a, p, dp, eta) in (1usize..=4).prop_flat_map(|n| (
            proptest::collection::vec(0.0..2.0f64, n * n),
            positive_vec(n, 0.0, 1.0),
            positive_vec(n, 0.0, 1.0),
            positive_vec(n, 0.05, 4.0))),
    ) {
        let n = eta.len();
        let a = Matrix::from_fn(n, n, |i, j| if i == j { a[i * n + j] + 0.1 } else { a[i * n + j] });
        let eta = GridParameter::new(eta).unwrap();
        let low = PredictorTerm::new(a.clone(), p.clone()).unwrap();
        let high = PredictorTerm::new(a, p.iter().zip(&dp).map(|(x, d)| x + d).collect()).unwrap();
        let el = predict_single(&low, &eta).unwrap();
        let eh = predict_single(&high, &eta).unwrap();
        prop_assert!(el <= eh);
        let fam = predict_family(&[low, high], &eta).unwrap();
        prop_assert!((fam - (el + eh)).abs() <= 1e-14 * fam);
    }
}

#[test]
fn monte_carlo_is_thread_count_independent() {
    let eta = GridParameter::new(vec![0.3, 1.1]).unwrap();
    let r = [0.4, 1.7];
    let a = mc_expected_cells(&eta, &r, 100_000, 5).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| mc_expected_cells(&eta, &r, 100_000, 5).unwrap());
    assert_eq!(a.to_bits(), b.to_bits());
    let exact = exact_expected_cells(&eta, &r).unwrap();
    assert!((a - exact).abs() / exact < 0.01);
}
