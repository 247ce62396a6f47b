use proptest::prelude::*;
use restoration::clpu::{load_at_step, sample_curve};
use restoration::netmodel::ClpuParams;

fn params() -> impl Strategy<Value = ClpuParams> {
    (
        1.0f64..3.0,
        0.2f64..1.0,
        0.05f64..3.0,
        0usize..8,
        1usize..30,
    )
        .prop_map(|(ratio, s_d, alpha, delay, n)| ClpuParams {
            id: "p".into(),
            s_u: s_d * ratio,
            s_d,
            alpha_decay: alpha,
            delay_steps: delay,
            n_samples: n,
            sample_period_min: 1.0,
        })
}

proptest! {
    #[test]
    fn pickup_demand_telescopes_to_the_curve(p in params(), start in 0usize..10, tail in 1usize..40) {
        let curve = sample_curve(&p).unwrap();
        let history: Vec<bool> = (0..start + tail).map(|t| t >= start).collect();
        let demand = load_at_step(&curve, &history, 1.0, 0.5).unwrap();
        for (t, (pk, qk)) in demand.iter().enumerate() {
            let expected = if t < start { 0.0 } else { curve.at(t - start + 1) };
            prop_assert!((pk - expected).abs() <= 1e-12, "t {t}: {pk} vs {expected}");
            prop_assert!((qk - 0.5 * expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn curve_is_bounded_and_non_increasing(p in params()) {
        let curve = sample_curve(&p).unwrap();
        prop_assert_eq!(curve.at(1), p.s_u);
        for k in 1..=curve.n() {
            let d = curve.at(k);
            prop_assert!(d <= p.s_u + 1e-12 && d >= p.s_d - 1e-12);
            if k > 1 {
                prop_assert!(d <= curve.at(k - 1) + 1e-12);
            }
        }
        prop_assert_eq!(curve.at(curve.n() + 1), p.s_d);
    }

    #[test]
    fn dropping_a_picked_load_is_rejected(p in params(), on in 1usize..10, off in 1usize..10) {
        let curve = sample_curve(&p).unwrap();
        let mut history = vec![true; on];
        history.extend(std::iter::repeat_n(false, off));
        prop_assert!(load_at_step(&curve, &history, 1.0, 0.0).is_err());
    }
}
