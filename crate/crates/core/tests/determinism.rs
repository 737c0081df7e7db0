use hjmx_core::credit::CreditPreset;
use hjmx_core::products::irs_par_rate;
use hjmx_core::xva::{wwr_sweep, WwrKnob};
use hjmx_core::*;

fn setup(fam: ModelFamily) -> XvaSetup {
    let curves = MarketCurves::synthetic(&SyntheticCurves::default()).unwrap();
    let k = irs_par_rate(&curves, 0.0, 5.0, 1.0, 0.5).unwrap();
    XvaSetup {
        trade: Trade::irs(5.0, k, 1.0, 0.5, 1.0, Direction::Receiver).unwrap(),
        model: HjmParams::preset(fam).build().unwrap(),
        curves,
        credit: CreditPair {
            investor: CreditPreset::High.calibrated(6.0).unwrap(),
            counterparty: CreditPreset::Medium.calibrated(6.0).unwrap(),
        },
        delta: 10.0 / 250.0,
        lgd_i: 0.6,
        lgd_c: 0.6,
        grid_step: 0.25,
    }
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn sweeps_do_not_depend_on_worker_count() {
    for fam in ModelFamily::all() {
        let s = setup(fam);
        let run = || {
            let t = wwr_sweep(
                &s,
                &CorrelationKnobs::default(),
                WwrKnob::RateCredit,
                &[-0.2, 0.0, 0.2],
                0.5,
                300,
                99,
            )
            .unwrap();
            t.rows
                .iter()
                .map(|r| r.result.clone().unwrap())
                .collect::<Vec<_>>()
        };
        let one = in_pool(1, run);
        let three = in_pool(3, run);
        assert_eq!(one, three);
        assert_eq!(one, in_pool(1, run));
    }
}

#[test]
fn path_dump_is_byte_identical_across_workers() {
    let s = setup(ModelFamily::MoreniPallavicini);
    let grid = s.grid().unwrap();
    let f = build_correlation(
        &CorrelationSpec::from_knobs(&s.model, &CorrelationKnobs::default()).unwrap(),
    )
    .unwrap();
    let dump = |threads| {
        in_pool(threads, || {
            let ps =
                engine::simulate(&s.model, &s.curves, &s.credit, &f, grid.clone(), 50, 3).unwrap();
            let mut out = Vec::new();
            ps.write_binary(&mut out).unwrap();
            out
        })
    };
    assert_eq!(dump(1), dump(4));
}

#[test]
fn different_seeds_differ() {
    let s = setup(ModelFamily::HullWhite);
    let a = wwr_sweep(
        &s,
        &CorrelationKnobs::default(),
        WwrKnob::RateCredit,
        &[0.0],
        0.0,
        100,
        1,
    )
    .unwrap();
    let b = wwr_sweep(
        &s,
        &CorrelationKnobs::default(),
        WwrKnob::RateCredit,
        &[0.0],
        0.0,
        100,
        2,
    )
    .unwrap();
    assert_ne!(
        a.rows[0].result.clone().unwrap().bilateral,
        b.rows[0].result.clone().unwrap().bilateral
    );
}
