use jeans_core::params::*;
use proptest::prelude::*;

fn tuple() -> impl Strategy<Value = (ModelParams, OdeData)> {
    (1.05f64..3.0, 0.1f64..2.0, 1.02f64..1.48, 0.05f64..0.95, 0.1f64..0.9, 0.5f64..2.0, 0.1f64..3.0, 0.1f64..3.0).prop_filter_map(
        "outside region",
        |(a, b, c, kf, af, t0, fr, f0r)| {
            let (lo, hi) = k_admissible_interval(c).ok()?;
            let gauge = af * 2.0 * b / (3.0 - 2.0 * c);
            let p = validate_params(a, b, c, lo + kf * (hi - lo), 1.0, gauge).ok()?;
            let d = OdeData::new(t0, fr, f0r).ok()?;
            derive_constants(&p, &d).ok()?;
            Some((p, d))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_f_starts_at_inverse_data((p, d) in tuple()) {
        let dc = derive_constants(&p, &d).unwrap();
        let f0 = curve_f(d.t0, &dc);
        prop_assert!((f0 - 1.0 / (1.0 + d.f_ring)).abs() < 1e-13);
        let ft = curve_f(dc.t_star, &dc);
        prop_assert!(ft.abs() < 1e-9, "F(t*) = {}", ft);
        prop_assert!(dc.t_star > d.t0);
    }

    #[test]
    fn curve_l_decreases((p, d) in tuple(), steps in proptest::collection::vec(0.01f64..2.0, 2..20)) {
        let dc = derive_constants(&p, &d).unwrap();
        let mut t = d.t0;
        let mut prev = curve_l(t, &dc, &d);
        for h in steps {
            t += h;
            let l = curve_l(t, &dc, &d);
            prop_assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn upper_time_is_a_zero_of_l((p, d) in tuple()) {
        let dc = derive_constants(&p, &d).unwrap();
        prop_assert_eq!(dc.t_upper_star.is_some(), finite_time_condition(&p, &d));
        if let Some(tu) = dc.t_upper_star {
            prop_assert!(curve_l(tu, &dc, &d).abs() < 1e-10);
            prop_assert!(dc.t_star < tu);
        }
    }

    #[test]
    fn eigenvalue_pair_positive_inside((p, _d) in tuple()) {
        let (_, l) = eigenvalues_tilde(&p).unwrap();
        prop_assert!(l[0] * l[1] > 0.0 && l[0] + l[1] > 0.0 && l[2] > 0.0);
        let (_, hi) = k_admissible_interval(p.c).unwrap();
        let out = eigenvalues_tilde_unchecked(p.b, p.c, hi + 0.1);
        prop_assert!(out[0].min(out[1]) <= 0.0);
    }

    #[test]
    fn derive_constants_is_deterministic((p, d) in tuple()) {
        let x = derive_constants(&p, &d).unwrap();
        let y = derive_constants(&p, &d).unwrap();
        prop_assert_eq!(format!("{x:?}"), format!("{y:?}"));
    }
}

#[test]
fn outside_region_names_inequality() {
    let e = validate_params(4.0 / 3.0, 2.0 / 3.0, 1.6, 2.0, 1.0, 1.0).unwrap_err();
    assert!(e.to_string().contains("1<c<3/2"), "{e}");
    let e = validate_params(4.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 8.0, 1.0, 1.0).unwrap_err();
    assert!(matches!(e, ParamError::OutOfRegion(Constraint::KUpper)), "{e:?}");
}
