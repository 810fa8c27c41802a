use halpern_core::iteration::{halpern_run, km_run};
use halpern_core::moduli::verify_moduli;
use halpern_core::operators::{check_nonexpansive, OpKind, PlaneRotation};
use halpern_core::oracle::{check_product_bound, simulate_recurrence, RecurrenceInstance};
use halpern_core::{NonexpansiveOp, NormSpec, Point, Schedule};
use proptest::prelude::*;

fn projections(dim: usize) -> Vec<NonexpansiveOp> {
    let e = NormSpec::Euclidean;
    vec![
        NonexpansiveOp::new(OpKind::BallProjection { center: vec![0.25; dim], radius: 0.7 }, dim, 2.0, e).unwrap(),
        NonexpansiveOp::new(OpKind::BoxProjection { lo: vec![-0.5; dim], hi: vec![0.3; dim] }, dim, 2.0, e).unwrap(),
        NonexpansiveOp::new(
            OpKind::HalfspaceProjection { normal: (0..dim).map(|i| 1.0 + i as f64).collect(), offset: 0.2 },
            dim,
            2.0,
            e,
        )
        .unwrap(),
    ]
}

fn point_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projections_are_idempotent(x in point_strategy(3)) {
        let x = Point::new(x).unwrap();
        for p in projections(3) {
            let once = p.apply(&x).unwrap();
            let twice = p.apply(&once).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rotations_are_isometries(x in point_strategy(4), y in point_strategy(4), a in -360.0f64..360.0, b in -360.0f64..360.0) {
        let op = NonexpansiveOp::new(
            OpKind::Rotation { planes: vec![PlaneRotation { i: 0, j: 2, degrees: a }, PlaneRotation { i: 1, j: 3, degrees: b }] },
            4,
            1.0,
            NormSpec::Euclidean,
        ).unwrap();
        let (x, y) = (Point::new(x).unwrap(), Point::new(y).unwrap());
        let before = NormSpec::Euclidean.distance(&x, &y);
        let after = NormSpec::Euclidean.distance(&op.apply(&x).unwrap(), &op.apply(&y).unwrap());
        prop_assert!((before - after).abs() <= 1e-12 * (1.0 + before));
    }

    #[test]
    fn norm_axioms(x in point_strategy(5), y in point_strategy(5), t in -4.0f64..4.0) {
        for norm in [NormSpec::Euclidean, NormSpec::Max, NormSpec::Sum] {
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            prop_assert!(norm.norm(&sum) <= norm.norm(&x) + norm.norm(&y) + 1e-12);
            let scaled: Vec<f64> = x.iter().map(|a| t * a).collect();
            prop_assert!((norm.norm(&scaled) - t.abs() * norm.norm(&x)).abs() <= 1e-12 * (1.0 + norm.norm(&scaled)));
        }
    }

    #[test]
    fn halpern_stays_in_invariant_ball(x in point_strategy(2), deg in 0.0f64..360.0, sched in 0usize..3) {
        let len = NormSpec::Euclidean.norm(&x);
        prop_assume!(len > 0.0);
        let anchor = Point::new(x.iter().map(|c| c / len.max(1.0)).collect()).unwrap();
        let op = NonexpansiveOp::new(
            OpKind::Composition { maps: vec![
                OpKind::Rotation { planes: vec![PlaneRotation { i: 0, j: 1, degrees: deg }] },
                OpKind::BoxProjection { lo: vec![-0.6, -0.9], hi: vec![0.8, 0.4] },
            ] },
            2,
            1.0,
            NormSpec::Euclidean,
        ).unwrap();
        let schedule = [Schedule::harmonic(), Schedule::inverse_sqrt(), Schedule::shifted_harmonic()][sched].clone();
        let traj = halpern_run(&op, &anchor, &schedule, 300).unwrap();
        prop_assert!(traj.steps.iter().all(|s| s.norm_x <= 1.0 + 1e-12));
        prop_assert!(traj.steps.iter().all(|s| s.residual >= 0.0 && s.step_gap.unwrap_or(0.0) >= 0.0));
        let km = km_run(&op, &anchor, &schedule, 300).unwrap();
        prop_assert!(km.steps.iter().all(|s| s.norm_x <= 1.0 + 1e-12));
    }

    #[test]
    fn product_bound_holds_on_random_instances(seed in 0u64..10_000, n in 1u64..150, m in 1u64..150) {
        let inst = RecurrenceInstance::random(seed);
        let a = simulate_recurrence(&inst, 300).unwrap();
        let pb = check_product_bound(&inst, &a, n, m, 1e-9).unwrap();
        prop_assert!(pb.passed, "{} n={n} m={m}: {pb:?}", inst.describe());
    }

    #[test]
    fn decreasing_beta_equals_alpha(eps in 1e-4f64..10.0) {
        for s in [Schedule::harmonic(), Schedule::shifted_harmonic(), Schedule::inverse_sqrt()] {
            prop_assert_eq!(s.beta_of(eps).unwrap(), s.alpha_of(eps).unwrap());
        }
    }

    #[test]
    fn divergence_moduli_dominate_identity(n in 1u64..5000) {
        for s in [Schedule::inverse_sqrt(), Schedule::constant(0.5).unwrap(), Schedule::constant(1.0).unwrap()] {
            prop_assert!(s.theta_of(n).unwrap() >= n);
        }
        if n < 2000 {
            prop_assert!(Schedule::harmonic().theta_of(n).unwrap() >= n);
        }
    }
}

#[test]
fn compositions_of_builtins_pass_the_nonexpansive_check() {
    let e = NormSpec::Euclidean;
    let ops = vec![
        OpKind::BallProjection { center: vec![0.0, 0.0, 0.0], radius: 1.0 },
        OpKind::Rotation { planes: vec![PlaneRotation { i: 0, j: 1, degrees: 33.0 }] },
        OpKind::BoxProjection { lo: vec![-0.5; 3], hi: vec![0.5; 3] },
        OpKind::HalfspaceProjection { normal: vec![1.0, -1.0, 0.5], offset: 0.1 },
        OpKind::AveragedAffine {
            matrix: vec![vec![0.5, 0.0, 0.0], vec![0.0, 0.0, 0.5], vec![0.0, 0.5, 0.0]],
            shift: vec![0.0; 3],
        },
    ];
    let composed = NonexpansiveOp::new(OpKind::Composition { maps: ops }, 3, 1.0, e).unwrap();
    let report = check_nonexpansive(&composed, 2000, 11, 1e-12);
    assert!(report.all_passed(), "{report:?}");
}

#[test]
fn builtin_moduli_verify_at_moderate_horizon() {
    for s in [Schedule::harmonic(), Schedule::shifted_harmonic(), Schedule::inverse_sqrt(), Schedule::constant(0.5).unwrap()] {
        let report = verify_moduli(&s, 100_000, &[0.1, 0.01]);
        assert!(report.all_passed(), "{}: {:?}", s.name(), report.failures().collect::<Vec<_>>());
    }
}
