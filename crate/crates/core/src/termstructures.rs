//! Initial term structures: the collateralized (OIS) discount curve and one
//! Libor forward curve per tenor, bootstrapped from par quotes.
//!
//! The discount curve interpolates linearly in log-discount, so instantaneous
//! forwards are piecewise constant. Libor forward curves are piecewise linear
//! in the payment date and flat before the first pillar.

use std::path::Path;

use crate::error::{Error, Result};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParQuote {
    pub maturity: f64,
    pub rate: f64,
}

/// Market quotes for the initial curves. `irs` holds one quote strip per Libor tenor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuoteSet {
    pub ois: Vec<ParQuote>,
    pub irs: Vec<(f64, Vec<ParQuote>)>,
}

impl QuoteSet {
    pub fn validate(&self) -> Result<()> {
        check_increasing(&self.ois)?;
        for (tenor, quotes) in &self.irs {
            if !(*tenor > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "tenor must be positive, got {tenor}"
                )));
            }
            check_increasing(quotes)?;
        }
        Ok(())
    }

    /// Reads a quote file with header `type,tenor,maturity,value`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["type", "tenor", "maturity", "value"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::InvalidInput(format!(
                "expected header `type,tenor,maturity,value`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut set = QuoteSet::default();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |idx: usize, name: &str| -> Result<f64> {
                record[idx].parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("row {}: bad {name} `{}`", line + 2, &record[idx]))
                })
            };
            let quote = ParQuote {
                maturity: parse(2, "maturity")?,
                rate: parse(3, "value")?,
            };
            match &record[0] {
                "OIS" => set.ois.push(quote),
                "IRS" => {
                    let tenor = parse(1, "tenor")?;
                    match set
                        .irs
                        .iter_mut()
                        .find(|(x, _)| (x - tenor).abs() < TIME_EPS)
                    {
                        Some((_, strip)) => strip.push(quote),
                        None => set.irs.push((tenor, vec![quote])),
                    }
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "row {}: unknown quote type `{other}`",
                        line + 2
                    )))
                }
            }
        }
        set.validate()?;
        Ok(set)
    }
}

fn check_increasing(quotes: &[ParQuote]) -> Result<()> {
    let mut last = 0.0;
    for q in quotes {
        if !(q.maturity > last) || !q.maturity.is_finite() {
            return Err(Error::NonMonotoneMaturities {
                maturity: q.maturity,
            });
        }
        last = q.maturity;
    }
    Ok(())
}

/// Collateralized zero-coupon bond curve `T -> P_0(T;e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountCurve {
    times: Vec<f64>,
    log_dfs: Vec<f64>,
    unbounded: bool,
}

impl DiscountCurve {
    /// Builds a curve from pillars `(T, P_0(T))`; the origin is added if absent.
    pub fn from_discounts(pillars: &[(f64, f64)]) -> Result<Self> {
        let mut times = vec![0.0];
        let mut log_dfs = vec![0.0];
        for &(t, p) in pillars {
            if t.abs() < TIME_EPS {
                continue;
            }
            if !(t > *times.last().unwrap()) {
                return Err(Error::NonMonotoneMaturities { maturity: t });
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "discount factor must be positive at T={t}"
                )));
            }
            times.push(t);
            log_dfs.push(p.ln());
        }
        Ok(Self {
            times,
            log_dfs,
            unbounded: false,
        })
    }

    /// Continuously compounded flat curve, defined on the whole half-line.
    pub fn flat(rate: f64) -> Self {
        Self {
            times: vec![0.0, 1.0],
            log_dfs: vec![0.0, -rate],
            unbounded: true,
        }
    }

    pub fn pillars(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .zip(&self.log_dfs)
            .map(|(t, l)| (*t, l.exp()))
    }

    /// Last pillar time; the curve extrapolates with a flat forward beyond it.
    pub fn max_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        // index k with times[k] <= t < times[k+1], clamped to the last segment
        let n = self.times.len();
        if n < 2 {
            return 0;
        }
        match self.times.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn log_discount(&self, t: f64) -> f64 {
        if self.times.len() < 2 || t <= 0.0 {
            return 0.0;
        }
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (l0, l1) = (self.log_dfs[k], self.log_dfs[k + 1]);
        l0 + (l1 - l0) * (t - t0) / (t1 - t0)
    }

    pub fn discount(&self, t: f64) -> f64 {
        self.log_discount(t).exp()
    }

    /// `f_0(T) = -d/dT log P_0(T)`, right-continuous at pillars.
    pub fn instantaneous_forward(&self, t: f64) -> Result<f64> {
        if t < -TIME_EPS || (!self.unbounded && t > self.max_time() + TIME_EPS) {
            return Err(Error::OutOfDomain {
                t,
                max: self.max_time(),
            });
        }
        Ok(self.forward_unchecked(t))
    }

    pub(crate) fn forward_unchecked(&self, t: f64) -> f64 {
        if self.times.len() < 2 {
            return 0.0;
        }
        let k = self.segment(t.max(0.0));
        -(self.log_dfs[k + 1] - self.log_dfs[k]) / (self.times[k + 1] - self.times[k])
    }
}

/// `E_0(T,x;e) = (P(T-x)/P(T) - 1)/x`, the rate making a one-period OIS fair.
pub fn par_ois_rate(curve: &DiscountCurve, t: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tenor must be positive, got {x}"
        )));
    }
    if t - x < -TIME_EPS {
        return Err(Error::Ordering(format!("T - x = {} < 0", t - x)));
    }
    Ok((curve.discount((t - x).max(0.0)) / curve.discount(t) - 1.0) / x)
}

/// Payment grid of an OIS quote: a single period up to one year, annual
/// periods (front stub) beyond.
pub fn ois_schedule(maturity: f64) -> Vec<(f64, f64)> {
    if maturity <= 1.0 + TIME_EPS {
        return vec![(0.0, maturity)];
    }
    backward_schedule(maturity, 1.0)
}

/// Periods of length `step` rolled back from `maturity`; a short front stub
/// absorbs any remainder.
pub fn backward_schedule(maturity: f64, step: f64) -> Vec<(f64, f64)> {
    let mut ends = Vec::new();
    let mut k = 0usize;
    loop {
        let end = maturity - k as f64 * step;
        if end <= TIME_EPS {
            break;
        }
        ends.push(end);
        k += 1;
    }
    ends.reverse();
    let mut out = Vec::with_capacity(ends.len());
    let mut start = 0.0;
    for end in ends {
        if end - start > TIME_EPS {
            out.push((start, end));
        }
        start = end;
    }
    out
}

/// Fixed-leg value minus floating-leg value of a multi-period OIS per unit
/// notional, with the floating leg telescoped to `P(start) - P(T)`.
pub fn ois_swap_value(curve: &DiscountCurve, maturity: f64, rate: f64) -> f64 {
    let sched = ois_schedule(maturity);
    let annuity: f64 = sched
        .iter()
        .map(|(s, e)| (e - s) * curve.discount(*e))
        .sum();
    rate * annuity - (curve.discount(sched[0].0) - curve.discount(maturity))
}

pub fn bootstrap_discount_curve(quotes: &[ParQuote]) -> Result<DiscountCurve> {
    check_increasing(quotes)?;
    if quotes.is_empty() {
        return Ok(DiscountCurve::flat(0.0));
    }
    let mut times = vec![0.0];
    let mut logs = vec![0.0];
    for q in quotes {
        let t_prev = *times.last().unwrap();
        let l_prev = *logs.last().unwrap();
        let sched = ois_schedule(q.maturity);
        let known = DiscountCurve {
            times: times.clone(),
            log_dfs: logs.clone(),
            unbounded: false,
        };
        // Residual as a function of the unknown log P(T); increasing in `l`.
        let residual = |l: f64| -> (f64, f64) {
            let mut value = 0.0;
            let mut deriv = 0.0;
            for &(s, e) in &sched {
                let (lp, dl) = if e <= t_prev + TIME_EPS {
                    (known.log_discount(e), 0.0)
                } else {
                    let w = (e - t_prev) / (q.maturity - t_prev);
                    (l_prev + w * (l - l_prev), w)
                };
                let p = lp.exp();
                value += q.rate * (e - s) * p;
                deriv += q.rate * (e - s) * p * dl;
            }
            let pt = l.exp();
            (value - (1.0 - pt), deriv + pt)
        };
        let l = solve_monotone(residual, l_prev, -50.0, 50.0)
            .ok_or(Error::SingularBootstrap { pillar: q.maturity })?;
        times.push(q.maturity);
        logs.push(l);
    }
    Ok(DiscountCurve {
        times,
        log_dfs: logs,
        unbounded: false,
    })
}

/// Safeguarded Newton for an increasing function on `[lo, hi]`.
fn solve_monotone(
    f: impl Fn(f64) -> (f64, f64),
    guess: f64,
    mut lo: f64,
    mut hi: f64,
) -> Option<f64> {
    let (flo, _) = f(lo);
    let (fhi, _) = f(hi);
    if !(flo < 0.0 && fhi > 0.0) {
        return None;
    }
    let mut x = guess.clamp(lo, hi);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Some(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

/// Libor forward curve `T -> F_0(T,x;e)` for one tenor, keyed by payment date.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCurve {
    tenor: f64,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ForwardCurve {
    pub fn new(tenor: f64, pillars: &[(f64, f64)]) -> Result<Self> {
        if pillars.is_empty() {
            return Err(Error::InvalidInput(
                "forward curve needs at least one pillar".into(),
            ));
        }
        let mut last = f64::NEG_INFINITY;
        for &(t, _) in pillars {
            if !(t > last) {
                return Err(Error::NonMonotoneMaturities { maturity: t });
            }
            last = t;
        }
        Ok(Self {
            tenor,
            times: pillars.iter().map(|p| p.0).collect(),
            values: pillars.iter().map(|p| p.1).collect(),
        })
    }

    /// Forward curve implied by the discount curve with a constant additive basis.
    pub fn from_ois(
        tenor: f64,
        discount: &DiscountCurve,
        spread: f64,
        horizon: f64,
    ) -> Result<Self> {
        let n = (horizon / tenor).round() as usize;
        let pillars: Vec<(f64, f64)> = (1..=n)
            .map(|i| {
                let t = i as f64 * tenor;
                par_ois_rate(discount, t, tenor).map(|e| (t, e + spread))
            })
            .collect::<Result<_>>()?;
        Self::new(tenor, &pillars)
    }

    pub fn tenor(&self) -> f64 {
        self.tenor
    }

    pub fn max_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn pillars(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    /// `F_0(T,x;e)` for payment date `T`.
    pub fn value(&self, t: f64) -> Result<f64> {
        if t > self.max_time() + TIME_EPS {
            return Err(Error::OutOfDomain {
                t,
                max: self.max_time(),
            });
        }
        Ok(self.value_unchecked(t))
    }

    pub(crate) fn value_unchecked(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = match self.times.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i - 1,
        };
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }
}

/// Value per unit notional of receiving `rate` against Libor on the tenor grid
/// (fixed and floating legs share the schedule).
pub fn irs_swap_value(
    discount: &DiscountCurve,
    forward: &ForwardCurve,
    maturity: f64,
    rate: f64,
) -> Result<f64> {
    let mut v = 0.0;
    for (s, e) in backward_schedule(maturity, forward.tenor()) {
        v += (e - s) * (rate - forward.value(e)?) * discount.discount(e);
    }
    Ok(v)
}

pub fn bootstrap_forward_curve(
    tenor: f64,
    discount: &DiscountCurve,
    quotes: &[ParQuote],
) -> Result<ForwardCurve> {
    check_increasing(quotes)?;
    if quotes.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no IRS quotes for tenor {tenor}"
        )));
    }
    let bounded = !discount.unbounded;
    let mut pillars: Vec<(f64, f64)> = Vec::with_capacity(quotes.len());
    for q in quotes {
        if bounded && q.maturity > discount.max_time() + TIME_EPS {
            return Err(Error::OutOfDomain {
                t: q.maturity,
                max: discount.max_time(),
            });
        }
        let prev = pillars.last().copied();
        let mut known = 0.0;
        let mut coef = 0.0;
        let mut annuity = 0.0;
        for (s, e) in backward_schedule(q.maturity, tenor) {
            let w = (e - s) * discount.discount(e);
            annuity += w;
            match prev {
                Some((tp, _)) if e <= tp + TIME_EPS => {
                    let curve = ForwardCurve::new(tenor, &pillars)?;
                    known += w * curve.value_unchecked(e);
                }
                Some((tp, fp)) => {
                    let lin = (e - tp) / (q.maturity - tp);
                    known += w * (1.0 - lin) * fp;
                    coef += w * lin;
                }
                None => coef += w,
            }
        }
        if coef.abs() < 1e-14 {
            return Err(Error::SingularBootstrap { pillar: q.maturity });
        }
        pillars.push((q.maturity, (q.rate * annuity - known) / coef));
    }
    ForwardCurve::new(tenor, &pillars)
}

/// Initial curves shared by the model: discounting plus one forward curve per tenor.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketCurves {
    pub discount: DiscountCurve,
    pub forwards: Vec<ForwardCurve>,
}

impl MarketCurves {
    pub fn bootstrap(quotes: &QuoteSet) -> Result<Self> {
        quotes.validate()?;
        let discount = bootstrap_discount_curve(&quotes.ois)?;
        let forwards = quotes
            .irs
            .iter()
            .map(|(x, q)| bootstrap_forward_curve(*x, &discount, q))
            .collect::<Result<_>>()?;
        Ok(Self { discount, forwards })
    }

    pub fn forward(&self, tenor: f64) -> Result<&ForwardCurve> {
        self.forwards
            .iter()
            .find(|c| (c.tenor - tenor).abs() < TIME_EPS)
            .ok_or(Error::MissingTenor { tenor })
    }

    /// Parametric curves for experiments: a Nelson-Siegel style zero curve for
    /// OIS and constant additive basis spreads per tenor, both expressed as par
    /// quotes and run through the bootstrappers.
    pub fn synthetic(spec: &SyntheticCurves) -> Result<Self> {
        Self::bootstrap(&spec.quotes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCurves {
    pub short_rate: f64,
    pub long_rate: f64,
    pub decay: f64,
    pub horizon: f64,
    /// `(tenor, spread)` pairs: `F_0 = E_0 + spread` at every tenor pillar.
    pub basis: Vec<(f64, f64)>,
}

impl Default for SyntheticCurves {
    fn default() -> Self {
        Self {
            short_rate: 0.01,
            long_rate: 0.025,
            decay: 3.0,
            horizon: 15.0,
            basis: vec![(0.25, 0.001), (0.5, 0.002)],
        }
    }
}

impl SyntheticCurves {
    pub fn zero_rate(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.short_rate;
        }
        let s = t / self.decay;
        self.long_rate + (self.short_rate - self.long_rate) * (1.0 - (-s).exp()) / s
    }

    pub fn quotes(&self) -> QuoteSet {
        let p = |t: f64| (-self.zero_rate(t) * t).exp();
        let mut mats = vec![0.25, 0.5, 1.0];
        let mut t = 2.0;
        while t <= self.horizon + TIME_EPS {
            mats.push(t);
            t += 1.0;
        }
        let ois = mats
            .iter()
            .map(|&m| {
                let sched = ois_schedule(m);
                let annuity: f64 = sched.iter().map(|(s, e)| (e - s) * p(*e)).sum();
                ParQuote {
                    maturity: m,
                    rate: (1.0 - p(m)) / annuity,
                }
            })
            .collect();
        let irs = self
            .basis
            .iter()
            .map(|&(x, spread)| {
                let n = (self.horizon / x).round() as usize;
                let strip = (1..=n)
                    .map(|i| {
                        let m = i as f64 * x;
                        let sched = backward_schedule(m, x);
                        let annuity: f64 = sched.iter().map(|(s, e)| (e - s) * p(*e)).sum();
                        ParQuote {
                            maturity: m,
                            rate: (1.0 - p(m)) / annuity + spread,
                        }
                    })
                    .collect();
                (x, strip)
            })
            .collect();
        QuoteSet { ois, irs }
    }
}
