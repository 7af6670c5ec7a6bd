mod common;

use comonotone_core::bounds::{check_trace, BoundKind, BoundSpec};
use comonotone_core::interpolation::{
    check_interpolable, shift_from_monotone, shift_to_monotone, InterpolationDataset, Pair,
};
use comonotone_core::operators::{LinearOperator, Operator, Point};
use comonotone_core::pep::{build_pp_pep, gram_from_trace, PepSpec};
use comonotone_core::sdp::{low_rank_factor, project_psd, SymmetricMatrix};
use comonotone_core::solvers::{run_eg_with, run_pp_with, Method, RunOptions, StepSizes, Trace};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn point(v: Vec<f64>) -> Point {
    Point::new(v).unwrap()
}

fn coords(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, dim)
}

fn dataset() -> impl Strategy<Value = InterpolationDataset> {
    (1usize..4).prop_flat_map(|dim| {
        prop::collection::vec((coords(dim), coords(dim)), 1..7).prop_map(|pairs| {
            let pairs = pairs.into_iter().map(|(x, g)| Pair { x: point(x), g: point(g) }).collect();
            InterpolationDataset::new(pairs, None).unwrap()
        })
    })
}

fn symmetric(n: usize) -> impl Strategy<Value = SymmetricMatrix> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| {
        let m = DMatrix::from_row_slice(n, n, &v);
        SymmetricMatrix::from_dense(&((&m + m.transpose()) * 0.5)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_preserves_interpolability(ds in dataset(), rho in 0.0..2.0f64) {
        let a = check_interpolable(&ds, rho, 1e-9).unwrap().ok;
        let b = check_interpolable(&shift_to_monotone(&ds, rho), 0.0, 1e-9).unwrap().ok;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn shift_round_trip(ds in dataset(), rho in 0.0..2.0f64) {
        let back = shift_from_monotone(&shift_to_monotone(&ds, rho), rho);
        for (p, q) in back.pairs().iter().zip(ds.pairs()) {
            prop_assert!(p.x.distance_squared(&q.x).sqrt() <= 1e-12 * (1.0 + q.x.norm() + rho * q.g.norm()));
            prop_assert_eq!(&p.g, &q.g);
        }
    }

    #[test]
    fn interpolability_is_monotone_in_rho(ds in dataset(), rho in 0.0..1.0f64, extra in 0.0..1.0f64) {
        if check_interpolable(&ds, rho, 1e-9).unwrap().ok {
            prop_assert!(check_interpolable(&ds, rho + extra, 1e-9).unwrap().ok);
        }
    }

    #[test]
    fn psd_projection_is_psd_and_idempotent(m in symmetric(4)) {
        let p = project_psd(&m).unwrap();
        prop_assert!(p.min_eigenvalue() >= -1e-12);
        let pp = project_psd(&p).unwrap();
        prop_assert!(pp.add(&p.scaled(-1.0)).frobenius_norm() <= 1e-10 * (1.0 + p.frobenius_norm()));
        // projection is the nearest PSD matrix: no worse than clipping to zero
        prop_assert!(m.add(&p.scaled(-1.0)).frobenius_norm() <= m.frobenius_norm() + 1e-12);
    }

    #[test]
    fn factor_reproduces_low_rank(v in prop::collection::vec(-2.0..2.0f64, 10)) {
        let vm = DMatrix::from_row_slice(2, 5, &v);
        let g = SymmetricMatrix::from_dense(&(vm.transpose() * &vm)).unwrap();
        let f = low_rank_factor(&g, 1e-6).unwrap();
        prop_assert!(f.rank <= 2);
        prop_assert!(f.error <= 1e-5 * (1.0 + g.frobenius_norm()));
    }

    #[test]
    fn tight_rotation_certified_at_its_modulus(rho in 0.01..0.9f64, l in 0.2..3.0f64) {
        let rho = rho / l;
        let op = common::tight_rotation(rho, l);
        let (ok, cert) = op.certify_comonotone(rho, 1e-9).unwrap();
        prop_assert!(ok);
        prop_assert!((cert.tightest_rho - rho).abs() <= 1e-6 * rho.max(1e-3));
        prop_assert!(!op.certify_comonotone(0.9 * rho, 1e-9).unwrap().0);
    }

    #[test]
    fn pp_meets_its_rate(seed in any::<u64>(), n in 1usize..30) {
        let mut g = common::rng(seed);
        let (op, rho) = common::random_comonotone(&mut g, 0.2);
        let gamma = 2.0 * rho + 0.05 + (seed % 7) as f64 * 0.1;
        let x0 = common::random_point(&mut g, op.dim(), 1.0);
        let t = run_pp_with(&op, &x0, gamma, n, &RunOptions::with_reference(Point::zeros(op.dim()))).unwrap();
        for kind in [BoundKind::BestIterate, BoundKind::LastIterate] {
            let spec = BoundSpec { method: Method::Pp, kind, rho, l: 1.0, r: 1.0, gamma1: gamma, gamma2: gamma, n };
            let rep = check_trace(&t, &spec, None).unwrap();
            prop_assert!(rep.satisfied, "{:?}", rep.first_violation);
        }
    }

    #[test]
    fn eg_meets_best_iterate_rate(seed in any::<u64>(), frac in 0.0..1.0f64) {
        let mut g = common::rng(seed);
        let (op, rho) = common::random_comonotone(&mut g, 0.2);
        // gamma1 in (2 rho, 1/L), gamma2 <= gamma1 - 2 rho
        let g1 = 2.0 * rho + (1.0 - 2.0 * rho) * (0.05 + 0.9 * frac);
        let g2 = (g1 - 2.0 * rho) * 0.9;
        let x0 = common::random_point(&mut g, op.dim(), 1.0);
        let steps = StepSizes::new(g1, g2).unwrap();
        let t = run_eg_with(&op, &x0, steps, 40, &RunOptions::with_reference(Point::zeros(op.dim()))).unwrap();
        let spec = BoundSpec { method: Method::Eg, kind: BoundKind::BestIterate, rho, l: 1.0, r: 1.0, gamma1: g1, gamma2: g2, n: 40 };
        let rep = check_trace(&t, &spec, None).unwrap();
        prop_assert!(rep.satisfied, "{:?}", rep.first_violation);
    }

    #[test]
    fn gram_encoding_matches_vectors(seed in any::<u64>(), n in 1usize..7) {
        let mut g = common::rng(seed);
        let (op, _) = common::random_comonotone(&mut g, 0.1);
        let spec = PepSpec::new(n, 0.5, 0.1, 1.0).unwrap();
        let x0 = common::random_point(&mut g, op.dim(), 0.8);
        let t = run_pp_with(&op, &x0, 0.5, n, &RunOptions::with_reference(Point::zeros(op.dim()))).unwrap();
        let gram = gram_from_trace(&t).unwrap();
        let p = build_pp_pep(&spec).unwrap();
        prop_assert!((p.objective.inner(&gram) - t.x[n].distance_squared(&t.x[n - 1])).abs() <= 1e-10);
        prop_assert!(p.max_violation(&gram) <= 1e-10);
    }

    #[test]
    fn trace_json_round_trip(seed in any::<u64>(), n in 1usize..10) {
        let mut g = common::rng(seed);
        let (op, _) = common::random_comonotone(&mut g, 0.2);
        let x0 = common::random_point(&mut g, op.dim(), 1.0);
        let t = run_eg_with(&op, &x0, StepSizes::new(0.4, 0.3).unwrap(), n, &RunOptions::default()).unwrap();
        let back = Trace::from_json(&t.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn operator_json_round_trip(v in prop::collection::vec(-5.0..5.0f64, 9), gain in 0.1..4.0f64) {
        let op = LinearOperator::new(DMatrix::from_row_slice(3, 3, &v), gain).unwrap();
        let back = LinearOperator::from_json(&op.to_json().unwrap()).unwrap();
        let x = point(vec![0.3, -1.0, 2.0]);
        prop_assert_eq!(back.apply(&x).unwrap(), op.apply(&x).unwrap());
    }
}
