use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hjmx_bench::{curves, setup};
use hjmx_core::calibration::{McPricer, SwaptionGeometry};
use hjmx_core::xva::{simulate_xva, wwr_sweep, WwrKnob};
use hjmx_core::{
    build_correlation, CorrelationKnobs, CorrelationSpec, HjmParams, ModelFamily, Simulator,
    TimeGrid,
};

const PATHS: usize = 500;

fn market_paths(c: &mut Criterion) {
    let curves = curves();
    let grid = TimeGrid::uniform(10.0, 1.0 / 12.0).unwrap();
    let mut g = c.benchmark_group("market_paths_10y_monthly");
    g.sample_size(10);
    for fam in ModelFamily::all() {
        let model = HjmParams::preset(fam).build().unwrap();
        let sim = Simulator::market_only(&model, &curves, grid.clone()).unwrap();
        g.bench_function(BenchmarkId::from_parameter(fam.short_name()), |b| {
            b.iter(|| sim.map_paths(PATHS, 1, |_, buf| buf.market.log_numeraire[120]))
        });
    }
    g.finish();
}

fn xva(c: &mut Criterion) {
    let mut g = c.benchmark_group("xva_10y_irs");
    g.sample_size(10);
    for (label, delta) in [("no_gap", 0.0), ("gap", 0.04)] {
        let s = setup(ModelFamily::MoreniPallavicini, delta);
        let f = build_correlation(
            &CorrelationSpec::from_knobs(&s.model, &CorrelationKnobs::default()).unwrap(),
        )
        .unwrap();
        g.bench_function(label, |b| {
            b.iter(|| simulate_xva(&s, std::slice::from_ref(&f), &[0.0], PATHS, 2).unwrap())
        });
    }
    let s = setup(ModelFamily::HullWhite, 0.0);
    let rhos = [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3];
    g.bench_function("wwr_sweep_7_points", |b| {
        b.iter(|| {
            wwr_sweep(
                &s,
                &CorrelationKnobs::default(),
                WwrKnob::RateCredit,
                &rhos,
                0.0,
                PATHS,
                3,
            )
            .unwrap()
        })
    });
    g.finish();
}

fn swaption_pricer(c: &mut Criterion) {
    let curves = curves();
    let model = HjmParams::preset(ModelFamily::Cheyette).build().unwrap();
    let geoms: Vec<SwaptionGeometry> = [(1.0, 5.0), (5.0, 5.0)]
        .iter()
        .flat_map(|&(e, t)| {
            let curves = &curves;
            [-0.01, 0.0, 0.01]
                .into_iter()
                .map(move |off| SwaptionGeometry::new(curves, e, t, 0.5, off, off >= 0.0).unwrap())
        })
        .collect();
    let pricer = McPricer {
        n_paths: PATHS,
        seed: 4,
        step: 0.25,
    };
    let mut g = c.benchmark_group("swaption_pricer");
    g.sample_size(10);
    g.bench_function("six_quotes", |b| {
        b.iter(|| pricer.price(&model, &curves, &geoms).unwrap())
    });
    g.finish();
}

criterion_group!(benches, market_paths, xva, swaption_pricer);
criterion_main!(benches);
