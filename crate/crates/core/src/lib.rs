//! Multi-curve HJM simulation with collateral-aware bilateral valuation
//! adjustments.

// `!(x > 0.0)` guards are deliberate: they also reject NaN. Dense index
// loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod credit;
pub mod engine;
pub mod error;
pub mod hjm;
pub mod products;
pub mod stats;
pub mod termstructures;
pub mod xva;

pub use credit::{CirPP, CirParams, CreditPair, CreditPreset, HazardCurve};
pub use engine::{
    build_correlation, CholeskyFactor, CorrelationKnobs, CorrelationSpec, PathBuffer, PathSet,
    Simulator, TimeGrid,
};
pub use error::{Error, Result};
pub use hjm::{
    CurveSnapshot, HjmModel, HjmParams, MarkovState, ModelFamily, ShiftKind, StochasticVol, VolSpec,
};
pub use products::{Direction, ExposureKernel, ExposureProfile, FixingStore, Trade, TradeKind};
pub use termstructures::{
    DiscountCurve, ForwardCurve, MarketCurves, ParQuote, QuoteSet, SyntheticCurves,
};
pub use xva::{CollateralSpec, SweepTable, WwrKnob, XvaResult, XvaSamples, XvaSetup};
