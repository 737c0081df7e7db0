//! Bilateral valuation adjustments with partial collateral and cure-period gap risk.
//!
//! Sign convention: `cva` and `dva` are the signed contributions to the
//! pre-default value, `V = eps_0 + cva + dva`, so `cva <= 0` and `dva >= 0`
//! whenever the LGDs are nonnegative. `bilateral = cva + dva`.
//!
//! The time integral is a trapezoid over the base grid nodes. At coupon dates
//! the integrand jumps, so each segment uses the right limit at its left end
//! and the left limit at its right end.

use crate::credit::{lambda_delta, CreditPair};
use crate::engine::{
    build_correlation, CholeskyFactor, CorrelationKnobs, CorrelationSpec, CreditPath, MarketPath,
    PathSet, Simulator, TimeGrid,
};
use crate::error::{Error, Result};
use crate::hjm::HjmModel;
use crate::products::{ExposureKernel, ExposureProfile, Trade};
use crate::stats::{mean_se, ols_slope};
use crate::termstructures::MarketCurves;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollateralSpec {
    pub alpha: f64,
    pub delta: f64,
    pub lgd_i: f64,
    pub lgd_c: f64,
}

impl CollateralSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.alpha) || !unit(self.lgd_i) || !unit(self.lgd_c) {
            return Err(Error::InvalidInput(
                "alpha and LGDs must lie in [0, 1]".into(),
            ));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidInput(
                "cure period must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XvaResult {
    /// Clean price `eps_0` under perfect collateral.
    pub price: f64,
    pub cva: f64,
    pub dva: f64,
    pub bilateral: f64,
    pub se_cva: f64,
    pub se_dva: f64,
    pub se_bilateral: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl XvaResult {
    /// `eps_0 + cva + dva`.
    pub fn adjusted_price(&self) -> f64 {
        self.price + self.bilateral
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            price: self.price * factor,
            cva: self.cva * factor,
            dva: self.dva * factor,
            bilateral: self.bilateral * factor,
            se_cva: self.se_cva * factor.abs(),
            se_dva: self.se_dva * factor.abs(),
            se_bilateral: self.se_bilateral * factor.abs(),
            ..*self
        }
    }
}

/// Integrand inputs at one base node, right and left limits.
#[derive(Debug, Clone, Copy)]
struct NodeValues {
    t: f64,
    discount: f64,
    lambda_c: (f64, f64),
    lambda_i: (f64, f64),
    gap: (f64, f64),
    eps: (f64, f64),
}

/// Left-limit correction of the shift at each grid node: `psi(t-) - psi(t)`.
fn shift_jumps(credit: &CreditPair, grid: &TimeGrid) -> Vec<[f64; 2]> {
    grid.times()
        .iter()
        .map(|&t| {
            [
                credit.investor.shift.value_left(t) - credit.investor.shift.value(t),
                credit.counterparty.shift.value_left(t) - credit.counterparty.shift.value(t),
            ]
        })
        .collect()
}

fn node_values(
    grid: &TimeGrid,
    jumps: &[[f64; 2]],
    b: usize,
    market: &MarketPath,
    credit: &CreditPath,
    prof: &ExposureProfile,
    gap: bool,
) -> NodeValues {
    let k = grid.base()[b];
    let nk = market.log_numeraire[k];
    let discount = (-(nk + credit.hazard_i[k] + credit.hazard_c[k])).exp();
    let lc = credit.lambda_c[k];
    let li = credit.lambda_i[k];
    let lc_left = lc + jumps[k][1];
    let li_left = li + jumps[k][0];
    let eps = (prof.epsilon(k), prof.epsilon_left(k));
    if !gap {
        return NodeValues {
            t: grid.times()[k],
            discount,
            lambda_c: (lc, lc_left),
            lambda_i: (li, li_left),
            gap: eps,
            eps,
        };
    }
    let j = grid.shifted(b);
    let int_c = credit.hazard_c[j] - credit.hazard_c[k];
    let int_i = credit.hazard_i[j] - credit.hazard_i[k];
    let (dc, di) = lambda_delta(lc, li, int_c, int_i);
    let (dc_left, di_left) = lambda_delta(lc_left, li_left, int_c, int_i);
    let g = (
        prof.epsilon_forward(market, k, j),
        prof.epsilon_forward_left(market, k, j),
    );
    NodeValues {
        t: grid.times()[k],
        discount,
        lambda_c: (dc, dc_left),
        lambda_i: (di, di_left),
        gap: g,
        eps,
    }
}

/// Adds `(cva, dva)` for every alpha to `out` for one path.
#[allow(clippy::too_many_arguments)]
fn integrate_path(
    grid: &TimeGrid,
    jumps: &[[f64; 2]],
    market: &MarketPath,
    credit: &CreditPath,
    prof: &ExposureProfile,
    gap: bool,
    alphas: &[f64],
    lgd_i: f64,
    lgd_c: f64,
    out: &mut [[f64; 2]],
) {
    out.iter_mut().for_each(|o| *o = [0.0; 2]);
    let integrand = |v: &NodeValues, alpha: f64, left: bool| -> [f64; 2] {
        let (lc, li, g, e) = if left {
            (v.lambda_c.1, v.lambda_i.1, v.gap.1, v.eps.1)
        } else {
            (v.lambda_c.0, v.lambda_i.0, v.gap.0, v.eps.0)
        };
        let x = g - alpha * e;
        [
            v.discount * lc * lgd_c * x.max(0.0),
            v.discount * li * lgd_i * x.min(0.0),
        ]
    };
    let mut prev = node_values(grid, jumps, 0, market, credit, prof, gap);
    for b in 1..grid.base().len() {
        let cur = node_values(grid, jumps, b, market, credit, prof, gap);
        let h = 0.5 * (cur.t - prev.t);
        for (a, &alpha) in alphas.iter().enumerate() {
            let f0 = integrand(&prev, alpha, false);
            let f1 = integrand(&cur, alpha, true);
            out[a][0] -= h * (f0[0] + f1[0]);
            out[a][1] -= h * (f0[1] + f1[1]);
        }
        prev = cur;
    }
}

fn summarize(price: f64, cva: &[f64], dva: &[f64], seed: u64) -> XvaResult {
    let bil: Vec<f64> = cva.iter().zip(dva).map(|(c, d)| c + d).collect();
    let (c, sc) = mean_se(cva);
    let (d, sd) = mean_se(dva);
    let (b, sb) = mean_se(&bil);
    XvaResult {
        price,
        cva: c,
        dva: d,
        bilateral: b,
        se_cva: sc,
        se_dva: sd,
        se_bilateral: sb,
        n_paths: cva.len(),
        seed,
    }
}

fn adjustment_on_pathset(
    trade: &Trade,
    model: &HjmModel,
    curves: &MarketCurves,
    credit: &CreditPair,
    paths: &PathSet,
    collateral: &CollateralSpec,
    gap: bool,
) -> Result<XvaResult> {
    collateral.validate()?;
    if paths.n_paths() == 0 {
        return Err(Error::InvalidInput("empty path set".into()));
    }
    let grid = &paths.grid;
    if gap && (grid.delta() - collateral.delta).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "grid built for cure period {} but collateral has {}",
            grid.delta(),
            collateral.delta
        )));
    }
    let horizon_idx = grid.index_of(trade.maturity)?;
    if grid.base().last() != Some(&horizon_idx) {
        return Err(Error::InvalidInput(
            "last base node must be the trade maturity".into(),
        ));
    }
    let kernel = ExposureKernel::new(trade, model, curves, grid)?;
    let jumps = shift_jumps(credit, grid);
    let mut prof = kernel.profile();
    let mut cva = Vec::with_capacity(paths.n_paths());
    let mut dva = Vec::with_capacity(paths.n_paths());
    let mut out = [[0.0; 2]];
    let mut price = 0.0;
    for (m, c) in paths.market.iter().zip(&paths.credit) {
        kernel.evaluate(m, &mut prof);
        price = prof.epsilon(0);
        integrate_path(
            grid,
            &jumps,
            m,
            c,
            &prof,
            gap,
            &[collateral.alpha],
            collateral.lgd_i,
            collateral.lgd_c,
            &mut out,
        );
        cva.push(out[0][0]);
        dva.push(out[0][1]);
    }
    Ok(summarize(price, &cva, &dva, paths.seed))
}

/// Adjustment without gap risk on stored paths.
pub fn bilateral_adjustment(
    trade: &Trade,
    model: &HjmModel,
    curves: &MarketCurves,
    credit: &CreditPair,
    paths: &PathSet,
    collateral: &CollateralSpec,
) -> Result<XvaResult> {
    if collateral.delta != 0.0 {
        return Err(Error::InvalidInput(
            "use bilateral_adjustment_gap for a nonzero cure period".into(),
        ));
    }
    adjustment_on_pathset(trade, model, curves, credit, paths, collateral, false)
}

/// Adjustment with cure period `collateral.delta`; the path grid must have been built with the same delta.
pub fn bilateral_adjustment_gap(
    trade: &Trade,
    model: &HjmModel,
    curves: &MarketCurves,
    credit: &CreditPair,
    paths: &PathSet,
    collateral: &CollateralSpec,
) -> Result<XvaResult> {
    adjustment_on_pathset(trade, model, curves, credit, paths, collateral, true)
}

/// Everything fixed across a sweep.
#[derive(Debug, Clone)]
pub struct XvaSetup {
    pub trade: Trade,
    pub model: HjmModel,
    pub curves: MarketCurves,
    pub credit: CreditPair,
    pub delta: f64,
    pub lgd_i: f64,
    pub lgd_c: f64,
    pub grid_step: f64,
}

impl XvaSetup {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::build(
            self.trade.maturity,
            self.grid_step,
            &self.trade.event_dates(),
            self.delta,
        )
    }
}

/// Per-path `(cva, dva)` for every correlation scenario and alpha, streamed
/// from a single set of market paths.
#[derive(Debug, Clone)]
pub struct XvaSamples {
    pub price: f64,
    pub n_paths: usize,
    pub seed: u64,
    n_scen: usize,
    n_alpha: usize,
    data: Vec<[f64; 2]>,
}

impl XvaSamples {
    fn column(&self, scenario: usize, alpha: usize) -> (Vec<f64>, Vec<f64>) {
        let stride = self.n_scen * self.n_alpha;
        let off = scenario * self.n_alpha + alpha;
        (0..self.n_paths)
            .map(|p| {
                (
                    self.data[p * stride + off][0],
                    self.data[p * stride + off][1],
                )
            })
            .unzip()
    }

    pub fn result(&self, scenario: usize, alpha: usize) -> XvaResult {
        let (c, d) = self.column(scenario, alpha);
        summarize(self.price, &c, &d, self.seed)
    }

    /// Per-path bilateral values across scenarios for one alpha.
    pub fn bilateral_paths(&self, alpha: usize) -> Vec<Vec<f64>> {
        let stride = self.n_scen * self.n_alpha;
        (0..self.n_paths)
            .map(|p| {
                (0..self.n_scen)
                    .map(|s| {
                        let v = self.data[p * stride + s * self.n_alpha + alpha];
                        v[0] + v[1]
                    })
                    .collect()
            })
            .collect()
    }

    /// OLS slope of the bilateral adjustment against `knobs` with a
    /// common-random-number standard error from per-path slopes.
    pub fn bilateral_slope(&self, alpha: usize, knobs: &[f64]) -> (f64, f64) {
        let per_path: Vec<f64> = self
            .bilateral_paths(alpha)
            .iter()
            .map(|ys| ols_slope(knobs, ys))
            .collect();
        mean_se(&per_path)
    }
}

/// Runs one market simulation and values every correlation scenario and
/// every collateral fraction on it.
pub fn simulate_xva(
    setup: &XvaSetup,
    factors: &[CholeskyFactor],
    alphas: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<XvaSamples> {
    for a in alphas {
        CollateralSpec {
            alpha: *a,
            delta: setup.delta,
            lgd_i: setup.lgd_i,
            lgd_c: setup.lgd_c,
        }
        .validate()?;
    }
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be at least 1".into()));
    }
    let grid = setup.grid()?;
    let kernel = ExposureKernel::new(&setup.trade, &setup.model, &setup.curves, &grid)?;
    let sim = Simulator::new(
        &setup.model,
        &setup.curves,
        &setup.credit,
        grid.clone(),
        factors,
    )?;
    let jumps = shift_jumps(&setup.credit, &grid);
    let gap = setup.delta > 0.0;
    let n_scen = factors.len();
    let n_alpha = alphas.len();
    let rows = sim.map_paths(n_paths, seed, |_, buf| {
        let mut prof = kernel.profile();
        kernel.evaluate(&buf.market, &mut prof);
        let mut row = vec![[0.0; 2]; n_scen * n_alpha];
        for s in 0..n_scen {
            integrate_path(
                &grid,
                &jumps,
                &buf.market,
                &buf.credit[s],
                &prof,
                gap,
                alphas,
                setup.lgd_i,
                setup.lgd_c,
                &mut row[s * n_alpha..(s + 1) * n_alpha],
            );
        }
        (prof.epsilon(0), row)
    });
    let price = rows.first().map(|r| r.0).unwrap_or(0.0);
    let mut data = Vec::with_capacity(n_paths * n_scen * n_alpha);
    for (_, r) in rows {
        if r.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Numerical {
                module: "xva",
                detail: "non-finite adjustment on a path".into(),
            });
        }
        data.extend(r);
    }
    Ok(XvaSamples {
        price,
        n_paths,
        seed,
        n_scen,
        n_alpha,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WwrKnob {
    RateCredit,
    BasisCredit,
}

impl WwrKnob {
    pub fn name(self) -> &'static str {
        match self {
            WwrKnob::RateCredit => "rate_credit",
            WwrKnob::BasisCredit => "basis_credit",
        }
    }

    pub fn apply(self, base: &CorrelationKnobs, value: f64) -> CorrelationKnobs {
        let mut k = base.clone();
        match self {
            WwrKnob::RateCredit => k.rate_credit = [value; 2],
            WwrKnob::BasisCredit => k.basis_credit = [value; 2],
        }
        k
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub knob: f64,
    pub result: Result<XvaResult>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Slope of the bilateral adjustment in the knob and its standard error,
    /// over the points that could be simulated.
    pub slope: Option<(f64, f64)>,
}

/// Bilateral adjustment across correlation values with common random numbers.
/// Points whose correlation matrix cannot be built are reported individually.
pub fn wwr_sweep(
    setup: &XvaSetup,
    base: &CorrelationKnobs,
    knob: WwrKnob,
    values: &[f64],
    alpha: f64,
    n_paths: usize,
    seed: u64,
) -> Result<SweepTable> {
    let mut factors = Vec::new();
    let mut ok_values = Vec::new();
    let mut rows: Vec<SweepRow> = Vec::new();
    for &v in values {
        let built = CorrelationSpec::from_knobs(&setup.model, &knob.apply(base, v))
            .and_then(|s| build_correlation(&s));
        match built {
            Ok(f) => {
                factors.push(f);
                ok_values.push(v);
                rows.push(SweepRow {
                    knob: v,
                    result: Ok(placeholder()),
                });
            }
            Err(e) => rows.push(SweepRow {
                knob: v,
                result: Err(e),
            }),
        }
    }
    if factors.is_empty() {
        return Ok(SweepTable { rows, slope: None });
    }
    let samples = simulate_xva(setup, &factors, &[alpha], n_paths, seed)?;
    let mut s = 0;
    for row in rows.iter_mut() {
        if row.result.is_ok() {
            row.result = Ok(samples.result(s, 0));
            s += 1;
        }
    }
    let slope = (ok_values.len() >= 2).then(|| samples.bilateral_slope(0, &ok_values));
    Ok(SweepTable { rows, slope })
}

fn placeholder() -> XvaResult {
    XvaResult {
        price: 0.0,
        cva: 0.0,
        dva: 0.0,
        bilateral: 0.0,
        se_cva: 0.0,
        se_dva: 0.0,
        se_bilateral: 0.0,
        n_paths: 0,
        seed: 0,
    }
}

/// Adjustment per collateral fraction, all on the same paths.
pub fn alpha_sweep(
    setup: &XvaSetup,
    knobs: &CorrelationKnobs,
    alphas: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, XvaResult)>> {
    let f = build_correlation(&CorrelationSpec::from_knobs(&setup.model, knobs)?)?;
    let samples = simulate_xva(setup, &[f], alphas, n_paths, seed)?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| (alpha, samples.result(0, a)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credit::{CirPP, CirParams, CreditPreset};
    use crate::engine::simulate;
    use crate::hjm::{HjmParams, ModelFamily};
    use crate::products::{irs_par_rate, Direction};
    use crate::termstructures::SyntheticCurves;

    fn setup(fam: ModelFamily) -> (Trade, HjmModel, MarketCurves, CreditPair) {
        let curves = MarketCurves::synthetic(&SyntheticCurves {
            short_rate: 0.01,
            long_rate: 0.025,
            decay: 3.0,
            horizon: 6.0,
            basis: vec![(0.25, 0.001), (0.5, 0.002)],
        })
        .unwrap();
        let k = irs_par_rate(&curves, 0.0, 3.0, 1.0, 0.5).unwrap();
        let trade = Trade::irs(3.0, k, 1.0, 0.5, 1.0, Direction::Receiver).unwrap();
        let model = HjmParams::preset(fam).build().unwrap();
        let credit = CreditPair {
            investor: CreditPreset::High.calibrated(5.0).unwrap(),
            counterparty: CreditPreset::Medium.calibrated(5.0).unwrap(),
        };
        (trade, model, curves, credit)
    }

    fn paths(
        model: &HjmModel,
        curves: &MarketCurves,
        credit: &CreditPair,
        trade: &Trade,
        delta: f64,
    ) -> PathSet {
        let grid =
            TimeGrid::build(trade.maturity, 1.0 / 12.0, &trade.event_dates(), delta).unwrap();
        let spec = CorrelationSpec::from_knobs(
            model,
            &CorrelationKnobs {
                rate_credit: [0.2, 0.2],
                ..Default::default()
            },
        )
        .unwrap();
        simulate(
            model,
            curves,
            credit,
            &build_correlation(&spec).unwrap(),
            grid,
            200,
            5,
        )
        .unwrap()
    }

    #[test]
    fn full_collateral_without_cure_period_zeroes_adjustments() {
        let (trade, model, curves, credit) = setup(ModelFamily::Cheyette);
        let ps = paths(&model, &curves, &credit, &trade, 0.0);
        let c = CollateralSpec {
            alpha: 1.0,
            delta: 0.0,
            lgd_i: 0.6,
            lgd_c: 0.6,
        };
        let r = bilateral_adjustment(&trade, &model, &curves, &credit, &ps, &c).unwrap();
        assert_eq!((r.cva, r.dva, r.bilateral), (0.0, 0.0, 0.0));
        assert!(
            (r.adjusted_price() - trade.price_perfect_collateral(&curves).unwrap()).abs() < 1e-14
        );
    }

    #[test]
    fn zero_lgd_zeroes_adjustments_and_signs_hold() {
        let (trade, model, curves, credit) = setup(ModelFamily::HullWhite);
        let ps = paths(&model, &curves, &credit, &trade, 0.0);
        let c = CollateralSpec {
            alpha: 0.0,
            delta: 0.0,
            lgd_i: 0.0,
            lgd_c: 0.0,
        };
        let r = bilateral_adjustment(&trade, &model, &curves, &credit, &ps, &c).unwrap();
        assert_eq!((r.cva, r.dva), (0.0, 0.0));
        let c = CollateralSpec {
            lgd_i: 0.6,
            lgd_c: 0.6,
            ..c
        };
        let r = bilateral_adjustment(&trade, &model, &curves, &credit, &ps, &c).unwrap();
        assert!(r.cva < 0.0 && r.dva > 0.0);
        assert!(r.se_cva > 0.0 && r.se_bilateral >= 0.0);
    }

    #[test]
    fn gap_engine_at_zero_delta_is_bit_identical() {
        let (trade, model, curves, credit) = setup(ModelFamily::MoreniPallavicini);
        let ps = paths(&model, &curves, &credit, &trade, 0.0);
        for alpha in [0.0, 0.4, 1.0] {
            let c = CollateralSpec {
                alpha,
                delta: 0.0,
                lgd_i: 0.6,
                lgd_c: 0.6,
            };
            let a = bilateral_adjustment(&trade, &model, &curves, &credit, &ps, &c).unwrap();
            let b = bilateral_adjustment_gap(&trade, &model, &curves, &credit, &ps, &c).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn streaming_matches_stored_paths() {
        let (trade, model, curves, credit) = setup(ModelFamily::Cheyette);
        let delta = 10.0 / 250.0;
        let ps = paths(&model, &curves, &credit, &trade, delta);
        let c = CollateralSpec {
            alpha: 0.5,
            delta,
            lgd_i: 0.6,
            lgd_c: 0.6,
        };
        let stored = bilateral_adjustment_gap(&trade, &model, &curves, &credit, &ps, &c).unwrap();
        let s = XvaSetup {
            trade,
            model,
            curves,
            credit,
            delta,
            lgd_i: 0.6,
            lgd_c: 0.6,
            grid_step: 1.0 / 12.0,
        };
        let knobs = CorrelationKnobs {
            rate_credit: [0.2, 0.2],
            ..Default::default()
        };
        let table = alpha_sweep(&s, &knobs, &[0.0, 0.5], 200, 5).unwrap();
        assert_eq!(table[1].1, stored);
    }

    #[test]
    fn sweep_reports_invalid_points() {
        let (trade, model, curves, credit) = setup(ModelFamily::HullWhite);
        let s = XvaSetup {
            trade,
            model,
            curves,
            credit,
            delta: 0.0,
            lgd_i: 0.6,
            lgd_c: 0.6,
            grid_step: 0.25,
        };
        let t = wwr_sweep(
            &s,
            &CorrelationKnobs::default(),
            WwrKnob::RateCredit,
            &[0.0, 1.5, 0.2],
            0.0,
            50,
            1,
        )
        .unwrap();
        assert!(t.rows[0].result.is_ok() && t.rows[1].result.is_err() && t.rows[2].result.is_ok());
        assert!(t.slope.is_some());
    }

    #[test]
    fn unshifted_zero_vol_credit_is_accepted() {
        let p = CirParams {
            zeta: 0.5,
            mu: 0.02,
            nu: 0.0,
            y0: 0.02,
        };
        let credit = CreditPair {
            investor: CirPP::unshifted(p),
            counterparty: CirPP::unshifted(p),
        };
        let (trade, model, curves, _) = setup(ModelFamily::HullWhite);
        let ps = paths(&model, &curves, &credit, &trade, 0.0);
        assert_eq!(ps.credit[0].lambda_i[5], 0.02);
    }
}
