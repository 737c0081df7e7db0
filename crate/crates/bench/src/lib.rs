//! Fixtures shared by the benchmarks: preset curves, credit and a 10y swap.

use hjmx_core::credit::CreditPreset;
use hjmx_core::products::irs_par_rate;
use hjmx_core::{
    CreditPair, Direction, HjmParams, MarketCurves, ModelFamily, SyntheticCurves, Trade, XvaSetup,
};

pub fn curves() -> MarketCurves {
    MarketCurves::synthetic(&SyntheticCurves::default()).expect("preset curves")
}

pub fn credit() -> CreditPair {
    CreditPair {
        investor: CreditPreset::High.calibrated(11.0).expect("preset"),
        counterparty: CreditPreset::Medium.calibrated(11.0).expect("preset"),
    }
}

pub fn receiver_swap(curves: &MarketCurves, maturity: f64) -> Trade {
    let k = irs_par_rate(curves, 0.0, maturity, 1.0, 0.5).expect("par rate");
    Trade::irs(maturity, k, 1.0, 0.5, 1.0, Direction::Receiver).expect("swap")
}

pub fn setup(family: ModelFamily, delta: f64) -> XvaSetup {
    let curves = curves();
    XvaSetup {
        trade: receiver_swap(&curves, 10.0),
        model: HjmParams::preset(family).build().expect("preset model"),
        curves,
        credit: credit(),
        delta,
        lgd_i: 0.6,
        lgd_c: 0.6,
        grid_step: 1.0 / 12.0,
    }
}
