use hjmx_core::calibration::{formula_price, implied_vol, SwaptionGeometry, VolConvention};
use hjmx_core::credit::{lambda_delta, CirParams};
use hjmx_core::*;
use proptest::prelude::*;

fn curves() -> MarketCurves {
    MarketCurves::synthetic(&SyntheticCurves::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn implied_vol_inverts_the_formula(
        expiry in 0.5f64..5.0,
        tenor in 1u32..6,
        offset in -0.015f64..0.015,
        nvol in 0.001f64..0.02,
        lvol in 0.05f64..0.8,
    ) {
        let c = curves();
        let g = SwaptionGeometry::new(&c, expiry, tenor as f64, 0.5, offset, offset >= 0.0).unwrap();
        let p = formula_price(&g, VolConvention::Normal, nvol).unwrap();
        prop_assert!((implied_vol(p, &g, VolConvention::Normal).unwrap() - nvol).abs() < 1e-10);
        let conv = VolConvention::Lognormal { shift: 0.03 };
        let p = formula_price(&g, conv, lvol).unwrap();
        prop_assert!((implied_vol(p, &g, conv).unwrap() - lvol).abs() < 1e-10);
    }

    #[test]
    fn cir_survival_is_a_decreasing_probability(
        zeta in 0.05f64..2.0, mu in 0.001f64..0.1, nu in 0.0f64..0.3, y0 in 0.001f64..0.1, t in 0.0f64..30.0,
    ) {
        let p = CirParams { zeta, mu, nu, y0 };
        let s1 = p.log_survival(t).exp();
        let s2 = p.log_survival(t + 0.5).exp();
        prop_assert!(s1 <= 1.0 && s2 > 0.0 && s2 <= s1 + 1e-15);
    }

    #[test]
    fn cure_period_intensity_dominates(lc in 0.0f64..0.5, li in 0.0f64..0.5, ic in 0.0f64..0.1, ii in 0.0f64..0.1) {
        let (dc, di) = lambda_delta(lc, li, ic, ii);
        prop_assert!(dc >= lc && di >= li);
        prop_assert!(dc <= lc + li && di <= li + lc);
    }

    #[test]
    fn knob_correlations_are_valid_or_rejected(r1 in -0.9f64..0.9, r2 in -0.9f64..0.9, b in -0.9f64..0.9, cc in -0.9f64..0.9) {
        let model = HjmParams::preset(ModelFamily::MoreniPallavicini).build().unwrap();
        let knobs = CorrelationKnobs { rate_credit: [r1, r2], basis_credit: [b, b], credit_credit: cc, ..Default::default() };
        if let Ok(spec) = CorrelationSpec::from_knobs(&model, &knobs) {
            let m = spec.matrix();
            for (i, row) in m.iter().enumerate() {
                prop_assert!((row[i] - 1.0).abs() < 1e-12);
                for (j, v) in row.iter().enumerate() {
                    prop_assert!((v - m[j][i]).abs() < 1e-15 && v.abs() <= 1.0 + 1e-12);
                }
            }
            let f = build_correlation(&spec).unwrap();
            prop_assert!(f.repair_distance.unwrap_or(0.0) < 1e-8);
        }
    }

    #[test]
    fn par_swaps_have_zero_value(mat in 1u32..12, tenor_idx in 0usize..2) {
        let c = curves();
        let tenor = [0.25, 0.5][tenor_idx];
        let k = products::irs_par_rate(&c, 0.0, mat as f64, 1.0, tenor).unwrap();
        let t = Trade::irs(mat as f64, k, 1.0, tenor, 1.0, Direction::Payer).unwrap();
        prop_assert!(t.price_perfect_collateral(&c).unwrap().abs() < 1e-12);
    }
}
