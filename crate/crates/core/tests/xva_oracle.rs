//! With every volatility at zero the adjustment is a one-dimensional
//! integral that can be evaluated by quadrature, independently of the
//! simulation and exposure code.

use hjmx_core::credit::{CirPP, CreditPreset};
use hjmx_core::engine::simulate;
use hjmx_core::products::{irs_par_rate, LegKind};
use hjmx_core::xva::{bilateral_adjustment, bilateral_adjustment_gap};
use hjmx_core::*;

fn zero_vol_model() -> HjmModel {
    HjmModel::new(
        &[0.05, 0.4],
        &[vec![0.0, 0.0], vec![0.0, 0.0]],
        ShiftKind::InverseTenor,
        &[0.0, 0.0],
        VolSpec::Deterministic,
    )
    .unwrap()
}

fn zero_vol_credit() -> CreditPair {
    let deterministic = |p: CreditPreset| {
        let mut params = p.params();
        params.nu = 0.0;
        hjmx_core::credit::calibrate_shift(&params, &p.hazard_curve(12.0)).unwrap()
    };
    CreditPair {
        investor: deterministic(CreditPreset::High),
        counterparty: deterministic(CreditPreset::Medium),
    }
}

fn cum_intensity(c: &CirPP, t: f64) -> f64 {
    let p = c.params;
    p.mu * t + (p.y0 - p.mu) * -(-p.zeta * t).exp_m1() / p.zeta + c.shift.integral(t)
}

fn intensity(c: &CirPP, t: f64) -> f64 {
    let p = c.params;
    p.mu + (p.y0 - p.mu) * (-p.zeta * t).exp() + c.shift.value(t)
}

/// Deterministic close-out value at `u` of flows paid strictly after `u`.
fn exposure(trade: &Trade, curves: &MarketCurves, u: f64) -> f64 {
    let p = |t: f64| curves.discount.discount(t) / curves.discount.discount(u);
    trade
        .flows()
        .iter()
        .filter(|f| f.pay > u)
        .map(|f| {
            f.weight
                * match f.kind {
                    LegKind::Fixed { rate } => f.accrual * rate * p(f.pay),
                    LegKind::Libor { tenor, spread } => {
                        f.accrual
                            * (curves.forward(tenor).unwrap().value(f.pay).unwrap() + spread)
                            * p(f.pay)
                    }
                    LegKind::Overnight { spread } => {
                        p(f.reset) - p(f.pay) + spread * f.accrual * p(f.pay)
                    }
                }
        })
        .sum()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `(cva, dva)` by piecewise Simpson between flow dates and hazard pillars.
fn oracle(
    trade: &Trade,
    curves: &MarketCurves,
    credit: &CreditPair,
    alpha: f64,
    lgd: f64,
) -> (f64, f64) {
    let mut breaks = trade.event_dates();
    breaks.extend((1..=trade.maturity.ceil() as usize).map(|i| i as f64));
    breaks.push(0.0);
    breaks.retain(|t| *t <= trade.maturity + 1e-12);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let disc = |u: f64| {
        curves.discount.discount(u)
            * (-cum_intensity(&credit.investor, u) - cum_intensity(&credit.counterparty, u)).exp()
    };
    let (mut cva, mut dva) = (0.0, 0.0);
    for w in breaks.windows(2) {
        // Nudge inside the segment so jumps at the ends take their one-sided values.
        let (a, b) = (w[0] + 1e-13, w[1] - 1e-13);
        cva -= simpson(
            |u| {
                disc(u)
                    * intensity(&credit.counterparty, u)
                    * lgd
                    * ((1.0 - alpha) * exposure(trade, curves, u)).max(0.0)
            },
            a,
            b,
            2000,
        );
        dva -= simpson(
            |u| {
                disc(u)
                    * intensity(&credit.investor, u)
                    * lgd
                    * ((1.0 - alpha) * exposure(trade, curves, u)).min(0.0)
            },
            a,
            b,
            2000,
        );
    }
    (cva, dva)
}

fn run(trade: &Trade, alpha: f64, step: f64, tol: f64) {
    let curves = MarketCurves::synthetic(&SyntheticCurves::default()).unwrap();
    let model = zero_vol_model();
    let credit = zero_vol_credit();
    let grid = TimeGrid::build(trade.maturity, step, &trade.event_dates(), 0.0).unwrap();
    let f = build_correlation(&CorrelationSpec::identity(5)).unwrap();
    let paths = simulate(&model, &curves, &credit, &f, grid, 1, 0).unwrap();
    let c = CollateralSpec {
        alpha,
        delta: 0.0,
        lgd_i: 0.6,
        lgd_c: 0.6,
    };
    let mc = bilateral_adjustment(trade, &model, &curves, &credit, &paths, &c).unwrap();
    let (cva, dva) = oracle(trade, &curves, &credit, alpha, 0.6);
    for (name, got, want) in [("cva", mc.cva, cva), ("dva", mc.dva, dva)] {
        if want == 0.0 {
            assert_eq!(got, 0.0, "{name}");
        } else {
            assert!(((got - want) / want).abs() < tol, "{name}: {got} vs {want}");
        }
    }
}

#[test]
fn one_period_in_the_money_irs_matches_quadrature() {
    let curves = MarketCurves::synthetic(&SyntheticCurves::default()).unwrap();
    let k = irs_par_rate(&curves, 0.0, 0.5, 0.5, 0.5).unwrap() + 0.01;
    let trade = Trade::irs(0.5, k, 0.5, 0.5, 1.0, Direction::Receiver).unwrap();
    run(&trade, 0.0, 1e-4, 1e-8);
    run(&trade, 0.3, 1e-4, 1e-8);
}

#[test]
fn ten_year_par_irs_matches_quadrature() {
    let curves = MarketCurves::synthetic(&SyntheticCurves::default()).unwrap();
    let k = irs_par_rate(&curves, 0.0, 10.0, 1.0, 0.5).unwrap();
    let trade = Trade::irs(10.0, k, 1.0, 0.5, 1.0, Direction::Receiver).unwrap();
    run(&trade, 0.0, 1e-3, 1e-6);
}

#[test]
fn zero_vol_gap_engine_agrees_at_zero_cure_period() {
    let curves = MarketCurves::synthetic(&SyntheticCurves::default()).unwrap();
    let model = zero_vol_model();
    let credit = zero_vol_credit();
    let k = irs_par_rate(&curves, 0.0, 3.0, 1.0, 0.5).unwrap();
    let trade = Trade::irs(3.0, k, 1.0, 0.5, 1.0, Direction::Payer).unwrap();
    let grid = TimeGrid::build(3.0, 0.01, &trade.event_dates(), 0.0).unwrap();
    let f = build_correlation(&CorrelationSpec::identity(5)).unwrap();
    let paths = simulate(&model, &curves, &credit, &f, grid, 1, 0).unwrap();
    let c = CollateralSpec {
        alpha: 0.2,
        delta: 0.0,
        lgd_i: 0.4,
        lgd_c: 0.6,
    };
    assert_eq!(
        bilateral_adjustment(&trade, &model, &curves, &credit, &paths, &c).unwrap(),
        bilateral_adjustment_gap(&trade, &model, &curves, &credit, &paths, &c).unwrap()
    );
}
