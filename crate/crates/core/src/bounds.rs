//! Certified rates of asymptotic regularity.
//!
//! All five rates are evaluated in exact arithmetic: accuracies are the exact
//! rationals of their `f64` inputs, moduli produce big naturals, and the only
//! transcendental step (`ceil(ln(..))`) is rounded upward and certified.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;

use crate::error::{Error, Result};
use crate::index::{ceil_ln_upper, ceil_nonneg, exact_rational, BoundIndex};
use crate::moduli::{ModulusFn, ModulusKind, Schedule};

fn check_eps(eps: f64) -> Result<BigRational> {
    if !(eps > 0.0 && eps < 2.0) {
        return Err(Error::Domain {
            name: "eps",
            value: eps.to_string(),
            domain: "(0, 2)",
        });
    }
    exact_rational(eps, "eps")
}

fn check_m(m: u64) -> Result<()> {
    if m == 0 {
        return Err(Error::Domain {
            name: "M",
            value: "0".into(),
            domain: "N* = {1, 2, ...}",
        });
    }
    Ok(())
}

fn int(v: impl Into<BigInt>) -> BigRational {
    BigRational::from_integer(v.into())
}

/// `M := max(1, ceil(3 d_C))` for a domain of norm radius `d_C`.
pub fn norm_bound_for_radius(d_c: f64) -> Result<u64> {
    if !(d_c.is_finite() && d_c >= 0.0) {
        return Err(Error::Domain {
            name: "d_C",
            value: d_c.to_string(),
            domain: "[0, inf)",
        });
    }
    let three_d = exact_rational(d_c, "d_C")? * int(3);
    let m = ceil_nonneg(&three_d);
    u64::try_from(m)
        .map(|m| m.max(1))
        .map_err(|_| Error::BoundTooLarge(format!("M for d_C = {d_c}")))
}

/// The rate for sequences with `a_{n+1} <= (1 - lambda_{n+1}) a_n + b_n`:
/// `delta(gamma(eps/2) + 1 + ceil(ln(2D/eps)))`.
fn liu_rate<G>(gamma: G, delta: &ModulusFn, d: &BigUint, eps: &BigRational) -> Result<BigUint>
where
    G: Fn(&BigRational) -> Result<BigUint>,
{
    let half = eps / int(2);
    let n = gamma(&half)? + 1u32;
    let log_term = ceil_ln_upper(&(int(BigInt::from(d.clone())) * int(2) / eps))?;
    delta.at_target_exact(&(n + BigUint::from(log_term)))
}

/// `Phi(alpha, beta, theta, M, eps) =
/// max{ theta(beta(eps/8M) + 1 + ceil(ln(8M/eps))), alpha(eps/4M) }`.
///
/// Composed as in the underlying argument: the step gaps
/// `a_n = ||x_n - x_{n-1}||` obey the recurrence with `b_n = 2M|lambda_{n+1} - lambda_n|`,
/// bound `D = 2M` and Cauchy modulus `gamma(e) = beta(e/2M)`; that rate at
/// accuracy `eps/2` is `h1`, and `h2 = alpha(eps/4M)` controls `2M lambda_n`.
pub fn phi_general(alpha: &ModulusFn, beta: &ModulusFn, theta: &ModulusFn, m: u64, eps: f64) -> Result<BoundIndex> {
    let eps = check_eps(eps)?;
    check_m(m)?;
    alpha.expect_kind(ModulusKind::RateOfConvergence)?;
    beta.expect_kind(ModulusKind::CauchyModulus)?;
    theta.expect_kind(ModulusKind::RateOfDivergence)?;

    let m = BigInt::from(m);
    let two_m = int(&m * 2);
    let gamma = |e: &BigRational| beta.at_accuracy_exact(&(e / &two_m));
    let d = (&m * 2u32).to_biguint().expect("M is positive");
    let h1 = liu_rate(gamma, theta, &d, &(&eps / int(2)))?;
    let h2 = alpha.at_accuracy_exact(&(&eps / int(&m * 4)))?;
    Ok(BoundIndex::new(h1.max(h2)))
}

/// [`phi_general`] on a convex domain whose points have norm at most `d_c`,
/// with `M = max(1, ceil(3 d_C))`.
pub fn phi_bounded(alpha: &ModulusFn, beta: &ModulusFn, theta: &ModulusFn, d_c: f64, eps: f64) -> Result<BoundIndex> {
    check_eps(eps)?;
    let m = norm_bound_for_radius(d_c)?;
    phi_general(alpha, beta, theta, m, eps)
}

/// `Psi(alpha, theta, M, eps)`: for a decreasing schedule, `alpha` is itself
/// a Cauchy modulus of the variation sums, so this is `phi_general` with
/// `beta := alpha`.
pub fn psi_decreasing(alpha: &ModulusFn, theta: &ModulusFn, m: u64, eps: f64) -> Result<BoundIndex> {
    alpha.expect_kind(ModulusKind::RateOfConvergence)?;
    let beta = alpha.relabel(ModulusKind::CauchyModulus)?;
    phi_general(alpha, &beta, theta, m, eps)
}

/// [`psi_decreasing`] with the schedule's own moduli; fails unless the
/// schedule is declared decreasing.
pub fn psi_for_schedule(schedule: &Schedule, m: u64, eps: f64) -> Result<BoundIndex> {
    if !schedule.is_decreasing() {
        return Err(Error::Precondition(format!(
            "schedule `{}` is not declared decreasing",
            schedule.name()
        )));
    }
    psi_decreasing(schedule.alpha()?, schedule.theta()?, m, eps)
}

/// [`phi_general`] with the schedule's own moduli (beta falls back to alpha
/// for decreasing schedules).
pub fn phi_for_schedule(schedule: &Schedule, m: u64, eps: f64) -> Result<BoundIndex> {
    phi_general(schedule.alpha()?, &schedule.beta()?, schedule.theta()?, m, eps)
}

/// The closed-form rate for `lambda_n = 1/n`: `4^ceil(16M/eps + 3)` with
/// `M = max(1, ceil(3 d_C))`. The exponent is rounded up, giving an integer
/// upper bound of `exp(ln 4 * (16M/eps + 3))`.
pub fn phi_harmonic(d_c: f64, eps: f64) -> Result<BoundIndex> {
    let eps = check_eps(eps)?;
    let m = norm_bound_for_radius(d_c)?;
    let exponent = ceil_nonneg(&(int(BigInt::from(m) * 16) / eps + int(3)));
    let exponent = u32::try_from(exponent)
        .ok()
        .filter(|&e| e <= 1 << 25)
        .ok_or_else(|| Error::BoundTooLarge(format!("4^(16*{m}/eps + 3)")))?;
    Ok(BoundIndex::new(BigUint::from(4u32).pow(exponent)))
}

/// `h(gamma, delta, D, eps) = delta(gamma(eps/2) + 1 + ceil(ln(2D/eps)))`:
/// past this index, `a_n < eps` for every nonnegative sequence with
/// `a_n <= D` and `a_{n+1} <= (1 - lambda_{n+1}) a_n + b_n`, where `gamma` is
/// a Cauchy modulus of `sum b_i` and `delta` a rate of divergence of
/// `sum lambda_i`.
pub fn h_liu(gamma: &ModulusFn, delta: &ModulusFn, d: u64, eps: f64) -> Result<BoundIndex> {
    let eps = check_eps(eps)?;
    if d == 0 {
        return Err(Error::Domain {
            name: "D",
            value: "0".into(),
            domain: "N* = {1, 2, ...}",
        });
    }
    gamma.expect_kind(ModulusKind::CauchyModulus)?;
    delta.expect_kind(ModulusKind::RateOfDivergence)?;
    let h = liu_rate(|e| gamma.at_accuracy_exact(e), delta, &BigUint::from(d), &eps)?;
    Ok(BoundIndex::new(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moduli::ModulusRule;
    use proptest::prelude::*;

    fn harmonic() -> (ModulusFn, ModulusFn, ModulusFn) {
        let s = Schedule::harmonic();
        (s.alpha().unwrap().clone(), s.beta().unwrap(), s.theta().unwrap().clone())
    }

    fn inverse_sqrt() -> (ModulusFn, ModulusFn, ModulusFn) {
        let s = Schedule::inverse_sqrt();
        (s.alpha().unwrap().clone(), s.beta().unwrap(), s.theta().unwrap().clone())
    }

    /// Independent evaluation for eps = p/q, harmonic moduli, in u128.
    /// alpha(e) = ceil(1/e) + 1, theta(n) = 4^n = 1 << 2n.
    fn harmonic_phi_u128(m: u128, p: u128, q: u128) -> Option<u128> {
        let ceil_div = |a: u128, b: u128| a.div_ceil(b);
        let beta = ceil_div(8 * m * q, p) + 1;
        let ln = ((8 * m * q) as f64 / p as f64).ln().ceil() as u128;
        let arg = beta + 1 + ln;
        if arg > 63 {
            return None;
        }
        let h1 = 1u128 << (2 * arg);
        let h2 = ceil_div(4 * m * q, p) + 1;
        Some(h1.max(h2))
    }

    #[test]
    fn phi_general_harmonic_example() {
        let (a, b, t) = harmonic();
        let phi = phi_general(&a, &b, &t, 3, 1.0).unwrap();
        assert_eq!(*phi.value(), BigUint::from(4u32).pow(30));
        assert_eq!(Some(phi.to_u64().unwrap() as u128), harmonic_phi_u128(3, 1, 1));
    }

    #[test]
    fn phi_general_inverse_sqrt_example() {
        let (a, b, t) = inverse_sqrt();
        // beta(1/96) = 96^2 + 1 = 9217, ceil(ln 96) = 5, theta(9223) = ceil(4612.5^2)
        let expected_h1 = {
            let twice = 9223u64 + 2;
            (twice * twice).div_ceil(4)
        };
        assert_eq!(expected_h1, 21_275_157);
        assert_eq!(phi_general(&a, &b, &t, 3, 0.25).unwrap(), expected_h1);
        // h2 = alpha(0.25/12) = 48^2 + 1 is dominated
        assert_eq!(a.at_accuracy(0.25 / 16.0).unwrap(), 64u64 * 64 + 1);
    }

    #[test]
    fn eps_domain() {
        let (a, b, t) = harmonic();
        for eps in [2.0, 0.0, -1.0, 2.5, f64::NAN, f64::INFINITY] {
            assert!(matches!(phi_general(&a, &b, &t, 3, eps), Err(Error::Domain { .. })), "eps={eps}");
            assert!(phi_harmonic(1.0, eps).is_err());
            assert!(h_liu(&b, &t, 1, eps).is_err());
        }
        assert!(phi_general(&a, &b, &t, 0, 1.0).is_err());
        assert!(phi_bounded(&a, &b, &t, 1.0, 2.5).is_err());
    }

    #[test]
    fn kind_mismatch() {
        let (a, b, t) = harmonic();
        assert!(matches!(phi_general(&b, &a, &t, 3, 1.0), Err(Error::ModulusKind { .. })));
        assert!(matches!(h_liu(&a, &t, 1, 1.0), Err(Error::ModulusKind { .. })));
    }

    #[test]
    fn phi_bounded_examples() {
        let (a, b, t) = harmonic();
        assert_eq!(*phi_bounded(&a, &b, &t, 1.0, 1.0).unwrap().value(), BigUint::from(4u32).pow(30));
        // M = 1: beta(1/8) = 9, ceil(ln 8) = 3, alpha(1/4) = 5
        assert_eq!(*phi_bounded(&a, &b, &t, 0.0, 1.0).unwrap().value(), BigUint::from(4u32).pow(13));
        assert_eq!(harmonic_phi_u128(1, 1, 1), Some(1 << 26));
        assert_eq!(norm_bound_for_radius(0.0).unwrap(), 1);
        assert_eq!(norm_bound_for_radius(1.0).unwrap(), 3);
        assert_eq!(norm_bound_for_radius(0.34).unwrap(), 2);
        assert!(norm_bound_for_radius(-1.0).is_err());
    }

    #[test]
    fn psi_examples() {
        let (a, _, t) = harmonic();
        assert_eq!(*psi_decreasing(&a, &t, 3, 1.0).unwrap().value(), BigUint::from(4u32).pow(30));
        let (a, _, t) = inverse_sqrt();
        assert_eq!(psi_decreasing(&a, &t, 3, 0.25).unwrap(), 21_275_157u64);
    }

    #[test]
    fn psi_requires_decreasing_schedule() {
        let s = Schedule::custom(crate::moduli::CustomRule::new("up", |_| 0.5), false)
            .with_alpha(ModulusFn::rate_of_convergence(ModulusRule::Constant { value: 1 }).unwrap())
            .unwrap()
            .with_theta(ModulusFn::rate_of_divergence(ModulusRule::Linear { rate: 0.5 }).unwrap())
            .unwrap();
        assert!(matches!(psi_for_schedule(&s, 3, 1.0), Err(Error::Precondition(_))));
        assert_eq!(
            psi_for_schedule(&Schedule::harmonic(), 3, 1.0).unwrap(),
            phi_for_schedule(&Schedule::harmonic(), 3, 1.0).unwrap()
        );
    }

    #[test]
    fn phi_harmonic_examples() {
        assert_eq!(*phi_harmonic(1.0, 1.0).unwrap().value(), BigUint::from(4u32).pow(51));
        assert!((phi_harmonic(1.0, 1.0).unwrap().log10_view() - 30.70).abs() < 0.01);
        assert_eq!(*phi_harmonic(0.0, 1.0).unwrap().value(), BigUint::from(4u32).pow(19));
        // 16*3/0.7 + 3 = 71.57.. -> 72
        assert_eq!(*phi_harmonic(1.0, 0.7).unwrap().value(), BigUint::from(4u32).pow(72));
    }

    #[test]
    fn h_liu_examples() {
        let gamma = ModulusFn::cauchy(ModulusRule::GeometricTail { ratio: 0.5 }).unwrap();
        let delta = ModulusFn::rate_of_divergence(ModulusRule::Linear { rate: 0.5 }).unwrap();
        assert_eq!(h_liu(&gamma, &delta, 2, 0.5).unwrap(), 12u64);

        let zero = ModulusFn::cauchy(ModulusRule::Constant { value: 1 }).unwrap();
        let harmonic_delta = Schedule::harmonic().theta().unwrap().clone();
        assert_eq!(h_liu(&zero, &harmonic_delta, 1, 1.0).unwrap(), 64u64);
        assert!(h_liu(&zero, &harmonic_delta, 0, 1.0).is_err());
    }

    #[test]
    fn dominance_grid() {
        let (a, _, t) = harmonic();
        for d_c in [0.0, 1.0, 2.0, 5.0] {
            for eps in [1.5, 1.0, 0.5, 0.1] {
                let m = norm_bound_for_radius(d_c).unwrap();
                let psi = psi_decreasing(&a, &t, m, eps).unwrap();
                let phi = phi_harmonic(d_c, eps).unwrap();
                assert!(psi <= phi, "d_C={d_c} eps={eps}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn antitone_in_eps(e1 in 0.05f64..1.99, e2 in 0.05f64..1.99, m in 1u64..6) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            for (a, b, t) in [inverse_sqrt(), harmonic()] {
                prop_assert!(phi_general(&a, &b, &t, m, lo).unwrap() >= phi_general(&a, &b, &t, m, hi).unwrap());
                prop_assert!(psi_decreasing(&a, &t, m, lo).unwrap() >= psi_decreasing(&a, &t, m, hi).unwrap());
            }
            prop_assert!(phi_harmonic(m as f64, lo).unwrap() >= phi_harmonic(m as f64, hi).unwrap());
            let gamma = ModulusFn::cauchy(ModulusRule::GeometricTail { ratio: 0.5 }).unwrap();
            let delta = Schedule::inverse_sqrt().theta().unwrap().clone();
            prop_assert!(h_liu(&gamma, &delta, m, lo).unwrap() >= h_liu(&gamma, &delta, m, hi).unwrap());
        }

        #[test]
        fn monotone_in_m(m1 in 1u64..40, m2 in 1u64..40, eps in 0.05f64..1.99) {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            let (a, b, t) = inverse_sqrt();
            prop_assert!(phi_general(&a, &b, &t, lo, eps).unwrap() <= phi_general(&a, &b, &t, hi, eps).unwrap());
        }

        #[test]
        fn psi_is_phi_with_beta_alpha(m in 1u64..50, eps in 0.01f64..1.99) {
            for (a, _, t) in [inverse_sqrt(), harmonic()] {
                let b = a.relabel(ModulusKind::CauchyModulus).unwrap();
                prop_assert_eq!(psi_decreasing(&a, &t, m, eps).unwrap(), phi_general(&a, &b, &t, m, eps).unwrap());
            }
        }
    }

    #[test]
    fn harmonic_matches_u128_evaluator_on_dyadic_grid() {
        let (a, b, t) = harmonic();
        let mut compared = 0;
        for m in 1u128..=4 {
            for p in 1u128..16 {
                // eps = p/8 is exact in binary
                let Some(expected) = harmonic_phi_u128(m, p, 8) else { continue };
                let phi = phi_general(&a, &b, &t, m as u64, p as f64 / 8.0).unwrap();
                assert_eq!(*phi.value(), BigUint::from(expected), "M={m} eps={p}/8");
                compared += 1;
            }
        }
        assert!(compared > 10);
    }
}
