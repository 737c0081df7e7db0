use hjmx_core::credit::{calibrate_shift, CreditPreset};
use hjmx_core::stats::mean_se;
use hjmx_core::*;

#[test]
fn simulated_survival_matches_closed_form() {
    let curves = MarketCurves::synthetic(&SyntheticCurves::default()).unwrap();
    let model = HjmParams::preset(ModelFamily::HullWhite).build().unwrap();
    let credit = CreditPair {
        investor: CreditPreset::High.calibrated(10.0).unwrap(),
        counterparty: CreditPreset::Medium.calibrated(10.0).unwrap(),
    };
    let grid = TimeGrid::uniform(10.0, 1.0 / 100.0).unwrap();
    let spec = CorrelationSpec::from_knobs(&model, &CorrelationKnobs::default()).unwrap();
    let f = build_correlation(&spec).unwrap();
    let sim = Simulator::new(&model, &curves, &credit, grid.clone(), &[f]).unwrap();
    let idx: Vec<usize> = [1.0, 5.0, 10.0]
        .iter()
        .map(|t| grid.index_of(*t).unwrap())
        .collect();
    let samples = sim.map_paths(20_000, 8, |_, buf| {
        idx.iter()
            .map(|&k| {
                [
                    (-buf.credit[0].hazard_i[k]).exp(),
                    (-buf.credit[0].hazard_c[k]).exp(),
                ]
            })
            .collect::<Vec<_>>()
    });
    for (j, t) in [1.0, 5.0, 10.0].iter().enumerate() {
        for (who, cir) in [(0, &credit.investor), (1, &credit.counterparty)] {
            let xs: Vec<f64> = samples.iter().map(|s| s[j][who]).collect();
            let (m, se) = mean_se(&xs);
            let exact = cir.survival_probability(*t);
            assert!(
                (m - exact).abs() < 3.0 * se,
                "t={t} who={who}: {m} vs {exact} ({se})"
            );
        }
    }
}

#[test]
fn shift_reprices_hazard_pillars() {
    for preset in [CreditPreset::Medium, CreditPreset::High] {
        let curve = preset.hazard_curve(10.0);
        let cir = calibrate_shift(&preset.params(), &curve).unwrap();
        for (t, cum) in curve.pillars() {
            assert!((-cir.survival_probability(t).ln() - cum).abs() < 1e-10);
        }
    }
}
