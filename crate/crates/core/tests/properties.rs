use approx::assert_abs_diff_eq;
use cascadebo::acquisition::{penalize_observation, PenaltySettings};
use cascadebo::attack::{tighten_limits, BudgetConstraint, TighteningVector};
use cascadebo::campaign::rescale_to_budget;
use cascadebo::gp::{ei_from_moments, fit, posterior, KernelParams};
use proptest::prelude::*;

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, dim)
}

proptest! {
    #[test]
    fn ei_is_nonnegative_and_monotone(
        mean in -10.0..10.0f64,
        delta in 0.0..5.0f64,
        sigma in 0.0..5.0f64,
        best in -10.0..10.0f64,
    ) {
        let a = ei_from_moments(mean, sigma, best);
        let b = ei_from_moments(mean + delta, sigma, best);
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a - 1e-12);
        prop_assert!(a >= (mean - best).max(0.0) - 1e-12);
    }

    #[test]
    fn posterior_variance_below_prior(
        xs in prop::collection::vec(unit_vec(3), 2..12),
        ys in prop::collection::vec(-5.0..5.0f64, 12),
        q in unit_vec(3),
        ell in 0.05..2.0f64,
    ) {
        let ys = &ys[..xs.len()];
        let gp = fit(&xs, ys, &KernelParams::shared(1.0, ell, 1e-3)).unwrap();
        let n = ys.len() as f64;
        let m = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 1e-12 { sd * sd } else { 1.0 };
        let p = posterior(&gp, &q);
        prop_assert!(p.variance >= 0.0);
        prop_assert!(p.variance <= scale * (1.0 + 1e-9));
    }

    #[test]
    fn rescale_meets_budget(u in prop::collection::vec(0.0..=1.0f64, 1..50), frac in 0.0..1.2f64) {
        let dim = u.len();
        let lambda = frac * dim as f64;
        let x = rescale_to_budget(&u, lambda);
        prop_assert_eq!(x.len(), dim);
        prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        let sum: f64 = x.iter().sum();
        assert_abs_diff_eq!(sum, lambda.min(dim as f64), epsilon = 1e-9 * dim as f64);
    }

    #[test]
    fn penalty_only_hits_infeasible(
        x in prop::collection::vec(0.0..=1.0f64, 1..20),
        y in -50.0..50.0f64,
        lambda in 0.0..10.0f64,
        rho in 0.01..100.0f64,
    ) {
        let budget = BudgetConstraint::new(lambda).unwrap();
        let p = PenaltySettings::new(rho).unwrap();
        let v = penalize_observation(y, &x, &budget, &p);
        let excess = budget.value(&x);
        if excess <= 0.0 {
            prop_assert_eq!(v, y);
        } else {
            assert_abs_diff_eq!(v, y - rho * excess, epsilon = 1e-9 * (1.0 + y.abs() + rho * excess));
        }
    }

    #[test]
    fn tightened_limits_stay_between_flow_and_rating(
        rows in prop::collection::vec((0.0..=1.0f64, -1.0..1.0f64, 0.0..1.0f64), 1..30),
    ) {
        let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let flows: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let ratings: Vec<f64> = rows.iter().map(|r| r.1.abs() + r.2).collect();
        let limits = tighten_limits(&TighteningVector::new(x.clone()).unwrap(), &flows, &ratings).unwrap();
        for (i, l) in limits.as_slice().iter().enumerate() {
            prop_assert!(*l >= flows[i].abs() - 1e-12 && *l <= ratings[i] + 1e-12);
        }
        let tighter: Vec<f64> = x.iter().map(|v| (v + 0.1).min(1.0)).collect();
        let l2 = tighten_limits(&TighteningVector::new(tighter).unwrap(), &flows, &ratings).unwrap();
        for (a, b) in limits.as_slice().iter().zip(l2.as_slice()) {
            prop_assert!(b <= &(a + 1e-12));
        }
    }
}
