//! Swaption pricing by simulation, implied-vol inversion and least-squares
//! model calibration.

use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use statrs::function::erf::erfc;

use crate::engine::{Simulator, TimeGrid};
use crate::error::{Error, Result};
use crate::hjm::{HjmModel, HjmParams, ModelFamily};
use crate::products::{irs_par_rate, Direction, ExposureKernel, Trade};
use crate::stats::mean_se;
use crate::termstructures::MarketCurves;

/// Fixed legs of swaption underlyings pay annually.
pub const FIXED_PERIOD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VolConvention {
    Normal,
    /// Black on `F + shift`, `K + shift`.
    Lognormal {
        shift: f64,
    },
}

impl VolConvention {
    pub fn parse(s: &str, lognormal_shift: f64) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "bachelier" => Ok(Self::Normal),
            "lognormal" | "black" => Ok(Self::Lognormal {
                shift: lognormal_shift,
            }),
            other => Err(Error::InvalidInput(format!(
                "unknown vol convention `{other}`"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Lognormal { .. } => "lognormal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwaptionQuote {
    pub expiry: f64,
    pub tenor_len: f64,
    pub libor_tenor: f64,
    /// Strike minus the forward swap rate.
    pub strike_offset: f64,
    pub vol: f64,
    pub convention: VolConvention,
}

impl SwaptionQuote {
    pub fn validate(&self) -> Result<()> {
        if !(self.expiry > 0.0 && self.tenor_len > 0.0 && self.libor_tenor > 0.0) {
            return Err(Error::InvalidInput(format!(
                "swaption expiry, tenor and Libor tenor must be positive: {self:?}"
            )));
        }
        if !(self.vol >= 0.0) {
            return Err(Error::InvalidInput(format!("negative vol: {self:?}")));
        }
        Ok(())
    }
}

/// Reads `expiry,tenor_len,libor_tenor,strike_offset,vol,convention`.
pub fn read_quotes<R: Read>(reader: R, lognormal_shift: f64) -> Result<Vec<SwaptionQuote>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let expected = [
        "expiry",
        "tenor_len",
        "libor_tenor",
        "strike_offset",
        "vol",
        "convention",
    ];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidInput(format!(
            "swaption quote header must be `{}`",
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!(
                    "row {}: `{}` is not a number in column {}",
                    line + 2,
                    &rec[i],
                    expected[i]
                ))
            })
        };
        let q = SwaptionQuote {
            expiry: num(0)?,
            tenor_len: num(1)?,
            libor_tenor: num(2)?,
            strike_offset: num(3)?,
            vol: num(4)?,
            convention: VolConvention::parse(&rec[5], lognormal_shift)?,
        };
        q.validate()?;
        out.push(q);
    }
    Ok(out)
}

pub fn read_quotes_path(path: &Path, lognormal_shift: f64) -> Result<Vec<SwaptionQuote>> {
    read_quotes(std::fs::File::open(path)?, lognormal_shift)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("swaption quotes: {e}"))
}

/// Option on a forward-start IRS paying fixed annually against Libor.
#[derive(Debug, Clone, PartialEq)]
pub struct SwaptionGeometry {
    pub expiry: f64,
    pub end: f64,
    pub libor_tenor: f64,
    pub forward: f64,
    pub strike: f64,
    pub annuity: f64,
    pub payer: bool,
}

impl SwaptionGeometry {
    pub fn new(
        curves: &MarketCurves,
        expiry: f64,
        tenor_len: f64,
        libor_tenor: f64,
        strike_offset: f64,
        payer: bool,
    ) -> Result<Self> {
        let end = expiry + tenor_len;
        let forward = irs_par_rate(curves, expiry, end, FIXED_PERIOD, libor_tenor)?;
        let annuity = crate::products::aligned_periods(expiry, end, FIXED_PERIOD)?
            .iter()
            .map(|(s, e)| (e - s) * curves.discount.discount(*e))
            .sum();
        Ok(Self {
            expiry,
            end,
            libor_tenor,
            forward,
            strike: forward + strike_offset,
            annuity,
            payer,
        })
    }

    /// Out-of-the-money side: payer for strikes at or above the forward.
    pub fn from_quote(curves: &MarketCurves, q: &SwaptionQuote) -> Result<Self> {
        q.validate()?;
        Self::new(
            curves,
            q.expiry,
            q.tenor_len,
            q.libor_tenor,
            q.strike_offset,
            q.strike_offset >= 0.0,
        )
    }

    pub fn underlying(&self) -> Result<Trade> {
        let dir = if self.payer {
            Direction::Payer
        } else {
            Direction::Receiver
        };
        Trade::irs_forward(
            self.expiry,
            self.end,
            self.strike,
            FIXED_PERIOD,
            self.libor_tenor,
            1.0,
            dir,
        )
    }

    /// Today's value of the underlying swap.
    pub fn forward_value(&self) -> f64 {
        let s = if self.payer { 1.0 } else { -1.0 };
        s * self.annuity * (self.forward - self.strike)
    }

    pub fn intrinsic(&self) -> f64 {
        self.forward_value().max(0.0)
    }
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Closed-form price and vega under `conv`.
pub fn formula_price(g: &SwaptionGeometry, conv: VolConvention, vol: f64) -> Result<f64> {
    Ok(price_and_vega(g, conv, vol)?.0)
}

fn price_and_vega(g: &SwaptionGeometry, conv: VolConvention, vol: f64) -> Result<(f64, f64)> {
    let t = g.expiry;
    let w = if g.payer { 1.0 } else { -1.0 };
    let s = vol * t.sqrt();
    match conv {
        VolConvention::Normal => {
            if s <= 0.0 {
                return Ok((g.intrinsic(), g.annuity * t.sqrt() * norm_pdf(0.0)));
            }
            let d = (g.forward - g.strike) / s;
            let p = g.annuity * (w * (g.forward - g.strike) * norm_cdf(w * d) + s * norm_pdf(d));
            Ok((p, g.annuity * t.sqrt() * norm_pdf(d)))
        }
        VolConvention::Lognormal { shift } => {
            let f = g.forward + shift;
            let k = g.strike + shift;
            if !(f > 0.0 && k > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "shifted forward {f} or strike {k} not positive; raise the lognormal shift"
                )));
            }
            if s <= 0.0 {
                return Ok((g.intrinsic(), 0.0));
            }
            let d1 = ((f / k).ln() + 0.5 * s * s) / s;
            let d2 = d1 - s;
            let p = g.annuity * w * (f * norm_cdf(w * d1) - k * norm_cdf(w * d2));
            Ok((p, g.annuity * f * t.sqrt() * norm_pdf(d1)))
        }
    }
}

/// Vol that reproduces `price` by safeguarded Newton with bisection fallback.
pub fn implied_vol(price: f64, g: &SwaptionGeometry, conv: VolConvention) -> Result<f64> {
    let lower = g.intrinsic();
    let upper = match conv {
        VolConvention::Normal => f64::INFINITY,
        VolConvention::Lognormal { shift } => {
            g.annuity
                * if g.payer {
                    g.forward + shift
                } else {
                    g.strike + shift
                }
        }
    };
    let tol = 1e-14 * g.annuity.max(1.0);
    if !(price >= lower - tol && price < upper) {
        return Err(Error::PriceOutOfBounds {
            price,
            lower,
            upper,
        });
    }
    if price <= lower {
        return Ok(0.0);
    }
    let f = |v: f64| -> Result<(f64, f64)> {
        let (p, vega) = price_and_vega(g, conv, v)?;
        Ok((p - price, vega))
    };
    let (mut lo, mut hi) = (0.0, 0.01);
    while f(hi)?.0 < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical {
                module: "calibration",
                detail: format!("no vol bracket for price {price}"),
            });
        }
    }
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (r, vega) = f(v)?;
        if r.abs() <= 4.0 * f64::EPSILON * price {
            return Ok(v);
        }
        if r > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let newton = v - r / vega;
        v = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(v);
        }
    }
    Ok(v)
}

/// Simulation settings shared by every objective evaluation, so trials see
/// the same random numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPricer {
    pub n_paths: usize,
    pub seed: u64,
    pub step: f64,
}

impl McPricer {
    /// `(price, se)` per swaption, all valued on one set of paths.
    pub fn price(
        &self,
        model: &HjmModel,
        curves: &MarketCurves,
        geoms: &[SwaptionGeometry],
    ) -> Result<Vec<(f64, f64)>> {
        let payoffs = self.payoffs(model, curves, geoms)?;
        Ok(payoffs.iter().map(|xs| mean_se(xs)).collect())
    }

    /// Discounted payoffs, one vector of paths per swaption.
    pub fn payoffs(
        &self,
        model: &HjmModel,
        curves: &MarketCurves,
        geoms: &[SwaptionGeometry],
    ) -> Result<Vec<Vec<f64>>> {
        if geoms.is_empty() {
            return Ok(Vec::new());
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidInput("need at least 2 paths".into()));
        }
        let expiries: Vec<f64> = geoms.iter().map(|g| g.expiry).collect();
        let horizon = expiries.iter().cloned().fold(0.0, f64::max);
        let grid = TimeGrid::build(horizon, self.step, &expiries, 0.0)?;
        let mut kernels = Vec::with_capacity(geoms.len());
        for g in geoms {
            let trade = g.underlying()?;
            let mut times = vec![0.0];
            times.extend(trade.event_dates());
            let kgrid = TimeGrid::from_times(times)?;
            let kernel = ExposureKernel::new(&trade, model, curves, &kgrid)?;
            kernels.push((grid.index_of(g.expiry)?, kgrid.index_of(g.expiry)?, kernel));
        }
        let sim = Simulator::market_only(model, curves, grid)?;
        let payoffs = sim.map_paths(self.n_paths, self.seed, |_, buf| {
            kernels
                .iter()
                .map(|(node, knode, kernel)| {
                    let mut scratch = kernel.profile();
                    let v = kernel
                        .value_at_node(*knode, &buf.market.states[*node], &mut scratch)
                        .unwrap_or(f64::NAN);
                    v.max(0.0) * (-buf.market.log_numeraire[*node]).exp()
                })
                .collect::<Vec<f64>>()
        });
        (0..geoms.len())
            .map(|q| {
                let xs: Vec<f64> = payoffs.iter().map(|p| p[q]).collect();
                if xs.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical {
                        module: "calibration",
                        detail: format!("non-finite swaption payoff for quote {q}"),
                    });
                }
                Ok(xs)
            })
            .collect()
    }
}

/// `(price, se)` of one swaption with a quarterly simulation step.
pub fn price_swaption_mc(
    model: &HjmModel,
    curves: &MarketCurves,
    geometry: &SwaptionGeometry,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let pricer = McPricer {
        n_paths,
        seed,
        step: 0.25,
    };
    Ok(pricer.price(model, curves, std::slice::from_ref(geometry))?[0])
}

/// Model-implied vols for `quotes` in each quote's own convention.
pub fn model_vols(
    model: &HjmModel,
    curves: &MarketCurves,
    quotes: &[SwaptionQuote],
    pricer: &McPricer,
) -> Result<Vec<f64>> {
    let geoms = quotes
        .iter()
        .map(|q| SwaptionGeometry::from_quote(curves, q))
        .collect::<Result<Vec<_>>>()?;
    let prices = pricer.price(model, curves, &geoms)?;
    quotes
        .iter()
        .zip(&geoms)
        .zip(&prices)
        .map(|((q, g), (p, _))| implied_vol(*p, g, q.convention))
        .collect()
}

/// Quotes with vols replaced by those implied by `model`.
pub fn synthetic_quotes(
    model: &HjmModel,
    curves: &MarketCurves,
    geometry: &[SwaptionQuote],
    pricer: &McPricer,
) -> Result<Vec<SwaptionQuote>> {
    let vols = model_vols(model, curves, geometry, pricer)?;
    Ok(geometry
        .iter()
        .zip(vols)
        .map(|(q, vol)| SwaptionQuote { vol, ..*q })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Log,
    Tanh,
    Identity,
}

/// A calibratable scalar inside [`HjmParams`], named as in the config
/// (`a1`, `sigma2`, `rho12`, `eta_v`, `nu0`, `nu1`, `nu2`, `v0`, `rho_vw1`,
/// `gamma`, `eta_q1`, ...). Factor indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeParam {
    pub name: String,
    kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ParamKind {
    MeanReversion(usize),
    FactorVol(usize),
    FactorCorr(usize, usize),
    VolMeanReversion,
    Nu0,
    Nu1,
    Nu2,
    InitialVariance,
    VolCorr(usize),
    Gamma,
    QExponent(usize),
}

impl FreeParam {
    pub fn parse(name: &str, params: &HjmParams) -> Result<Self> {
        let n = params.mean_reversion.len();
        let bad = || Error::InvalidInput(format!("unknown free parameter `{name}`"));
        let idx = |s: &str| -> Result<usize> {
            let i: usize = s.parse().map_err(|_| bad())?;
            if i == 0 || i > n {
                return Err(bad());
            }
            Ok(i - 1)
        };
        let kind = if let Some(r) = name.strip_prefix("rho_vw") {
            ParamKind::VolCorr(idx(r)?)
        } else if let Some(r) = name.strip_prefix("eta_q") {
            ParamKind::QExponent(idx(r)?)
        } else if let Some(r) = name.strip_prefix("sigma") {
            ParamKind::FactorVol(idx(r)?)
        } else if let Some(r) = name.strip_prefix("rho") {
            if r.len() != 2 {
                return Err(bad());
            }
            let (i, j) = (idx(&r[..1])?, idx(&r[1..])?);
            if i >= j {
                return Err(bad());
            }
            ParamKind::FactorCorr(i, j)
        } else if let Some(r) = name.strip_prefix('a') {
            ParamKind::MeanReversion(idx(r)?)
        } else {
            match name {
                "eta_v" => ParamKind::VolMeanReversion,
                "nu0" => ParamKind::Nu0,
                "nu1" => ParamKind::Nu1,
                "nu2" => ParamKind::Nu2,
                "v0" => ParamKind::InitialVariance,
                "gamma" => ParamKind::Gamma,
                _ => return Err(bad()),
            }
        };
        let stochastic = matches!(
            kind,
            ParamKind::VolMeanReversion
                | ParamKind::Nu0
                | ParamKind::Nu1
                | ParamKind::Nu2
                | ParamKind::InitialVariance
                | ParamKind::VolCorr(_)
        );
        if stochastic && params.family == ModelFamily::HullWhite {
            return Err(Error::InvalidInput(format!(
                "`{name}` is not a Hull-White parameter"
            )));
        }
        let mp_only = matches!(kind, ParamKind::Gamma | ParamKind::QExponent(_));
        if mp_only && params.family != ModelFamily::MoreniPallavicini {
            return Err(Error::InvalidInput(format!(
                "`{name}` only applies to the MP family"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            kind,
        })
    }

    fn transform(&self) -> Transform {
        match self.kind {
            ParamKind::FactorCorr(..) | ParamKind::VolCorr(_) => Transform::Tanh,
            ParamKind::Gamma | ParamKind::QExponent(_) => Transform::Identity,
            _ => Transform::Log,
        }
    }

    pub fn get(&self, p: &HjmParams) -> f64 {
        let sv = p.stoch_vol.as_ref();
        match self.kind {
            ParamKind::MeanReversion(i) => p.mean_reversion[i],
            ParamKind::FactorVol(i) => p.factor_vols[i],
            ParamKind::FactorCorr(i, j) => p.factor_corr[i][j],
            ParamKind::VolMeanReversion => sv.map_or(f64::NAN, |s| s.mean_reversion),
            ParamKind::Nu0 => sv.map_or(f64::NAN, |s| s.nu0),
            ParamKind::Nu1 => sv.map_or(f64::NAN, |s| s.nu1),
            ParamKind::Nu2 => sv.map_or(f64::NAN, |s| s.nu2),
            ParamKind::InitialVariance => sv.map_or(f64::NAN, |s| s.initial),
            ParamKind::VolCorr(i) => sv.map_or(f64::NAN, |s| s.corr_w[i]),
            ParamKind::Gamma => p.gamma,
            ParamKind::QExponent(i) => p.q_exponents[i],
        }
    }

    pub fn set(&self, p: &mut HjmParams, v: f64) {
        match self.kind {
            ParamKind::MeanReversion(i) => p.mean_reversion[i] = v,
            ParamKind::FactorVol(i) => p.factor_vols[i] = v,
            ParamKind::FactorCorr(i, j) => {
                p.factor_corr[i][j] = v;
                p.factor_corr[j][i] = v;
            }
            ParamKind::Gamma => p.gamma = v,
            ParamKind::QExponent(i) => p.q_exponents[i] = v,
            kind => {
                if let Some(s) = p.stoch_vol.as_mut() {
                    match kind {
                        ParamKind::VolMeanReversion => s.mean_reversion = v,
                        ParamKind::Nu0 => s.nu0 = v,
                        ParamKind::Nu1 => s.nu1 = v,
                        ParamKind::Nu2 => s.nu2 = v,
                        ParamKind::InitialVariance => s.initial = v,
                        ParamKind::VolCorr(i) => s.corr_w[i] = v,
                        _ => unreachable!(),
                    }
                }
            }
        }
    }

    fn to_internal(&self, v: f64) -> f64 {
        match self.transform() {
            Transform::Log => v.max(1e-300).ln(),
            Transform::Tanh => v.clamp(-0.999_999, 0.999_999).atanh(),
            Transform::Identity => v,
        }
    }

    fn to_external(&self, x: f64) -> f64 {
        match self.transform() {
            Transform::Log => x.exp(),
            Transform::Tanh => x.tanh(),
            Transform::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    /// Simplex iterations per restart.
    pub max_iters: u64,
    pub restarts: usize,
    /// Stop once the RMSE, in bp for normal quotes and percent for
    /// lognormal ones, falls below this.
    pub target_rmse: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_iters: 300,
            restarts: 3,
            target_rmse: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub params: HjmParams,
    /// Root mean square of `model - quote` in quoted vol units.
    pub rmse: f64,
    pub residuals: Vec<f64>,
    pub evaluations: usize,
    pub iterations: u64,
    pub converged: bool,
}

/// Residual scale for the optimizer: bp for normal vols, percent for Black.
fn quote_scale(q: &SwaptionQuote) -> f64 {
    match q.convention {
        VolConvention::Normal => 1e4,
        VolConvention::Lognormal { .. } => 100.0,
    }
}

const PENALTY: f64 = 1e6;

struct Objective<'a> {
    base: &'a HjmParams,
    free: &'a [FreeParam],
    curves: &'a MarketCurves,
    quotes: &'a [SwaptionQuote],
    geoms: Vec<SwaptionGeometry>,
    pricer: McPricer,
    evals: &'a AtomicUsize,
}

impl Objective<'_> {
    fn params(&self, x: &[f64]) -> HjmParams {
        let mut p = self.base.clone();
        for (f, xi) in self.free.iter().zip(x) {
            f.set(&mut p, f.to_external(*xi));
        }
        p
    }

    fn residuals(&self, p: &HjmParams) -> Result<Vec<f64>> {
        let model = p.build()?;
        let prices = self.pricer.price(&model, self.curves, &self.geoms)?;
        self.quotes
            .iter()
            .zip(&self.geoms)
            .zip(&prices)
            .map(|((q, g), (price, _))| Ok(implied_vol(*price, g, q.convention)? - q.vol))
            .collect()
    }

    fn scaled_mse(&self, res: &[f64]) -> f64 {
        res.iter()
            .zip(self.quotes)
            .map(|(r, q)| (r * quote_scale(q)).powi(2))
            .sum::<f64>()
            / res.len() as f64
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        Ok(match self.residuals(&self.params(x)) {
            Ok(r) => self.scaled_mse(&r),
            Err(_) => PENALTY,
        })
    }
}

/// Nelder-Mead on transformed free parameters, restarted from the best
/// vertex with a fresh simplex. Random numbers are common across trials.
pub fn calibrate(
    start: &HjmParams,
    free: &[FreeParam],
    curves: &MarketCurves,
    quotes: &[SwaptionQuote],
    pricer: &McPricer,
    budget: &Budget,
) -> Result<CalibrationReport> {
    if quotes.is_empty() {
        return Err(Error::InvalidInput("no calibration quotes".into()));
    }
    if free.is_empty() {
        return Err(Error::InvalidInput("no free parameters declared".into()));
    }
    let geoms = quotes
        .iter()
        .map(|q| SwaptionGeometry::from_quote(curves, q))
        .collect::<Result<Vec<_>>>()?;
    let evals = AtomicUsize::new(0);
    let obj = Objective {
        base: start,
        free,
        curves,
        quotes,
        geoms,
        pricer: *pricer,
        evals: &evals,
    };
    let target = budget.target_rmse * budget.target_rmse;
    let mut x: Vec<f64> = free.iter().map(|f| f.to_internal(f.get(start))).collect();
    let mut best = obj.cost(&x).map_err(nm_err)?;
    let mut iterations = 0;
    let mut converged = best <= target;
    for restart in 0..=budget.restarts {
        if converged {
            break;
        }
        let step = 0.2 / (1 + restart) as f64;
        let mut simplex = vec![x.clone()];
        for i in 0..x.len() {
            let mut v = x.clone();
            v[i] += step;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(target.min(1e-12))
            .map_err(nm_err)?;
        let res = Executor::new(
            Objective {
                geoms: obj.geoms.clone(),
                ..obj
            },
            solver,
        )
        .configure(|s| s.max_iters(budget.max_iters).target_cost(target))
        .run()
        .map_err(nm_err)?;
        let state = res.state();
        iterations += state.get_iter();
        let cost = state.get_best_cost();
        if let Some(p) = state.get_best_param() {
            if cost < best {
                best = cost;
                x = p.clone();
            }
        }
        converged = best <= target
            || matches!(
                state.get_termination_status(),
                TerminationStatus::Terminated(TerminationReason::TargetCostReached)
            );
    }
    let params = obj.params(&x);
    let residuals = obj.residuals(&params)?;
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(CalibrationReport {
        params,
        rmse,
        residuals,
        evaluations: evals.load(Ordering::Relaxed),
        iterations,
        converged,
    })
}

fn nm_err(e: argmin::core::Error) -> Error {
    Error::Numerical {
        module: "calibration",
        detail: e.to_string(),
    }
}

/// Free parameters of a family, as listed in its characteristics.
pub fn default_free_params(params: &HjmParams) -> Result<Vec<FreeParam>> {
    let n = params.mean_reversion.len();
    let mut names = Vec::new();
    for i in 1..=n {
        names.push(format!("a{i}"));
        names.push(format!("sigma{i}"));
    }
    for i in 1..=n {
        for j in i + 1..=n {
            names.push(format!("rho{i}{j}"));
        }
    }
    if params.family != ModelFamily::HullWhite {
        for s in ["eta_v", "nu0", "nu1", "nu2", "v0"] {
            names.push(s.to_string());
        }
        for i in 1..=n {
            names.push(format!("rho_vw{i}"));
        }
    }
    if params.family == ModelFamily::MoreniPallavicini {
        names.push("gamma".into());
        for i in 1..=n {
            names.push(format!("eta_q{i}"));
        }
    }
    names.iter().map(|s| FreeParam::parse(s, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::termstructures::SyntheticCurves;

    fn curves() -> MarketCurves {
        MarketCurves::synthetic(&SyntheticCurves::default()).unwrap()
    }

    #[test]
    fn atm_bachelier_inverts_in_closed_form() {
        let c = curves();
        let g = SwaptionGeometry::new(&c, 2.0, 5.0, 0.5, 0.0, true).unwrap();
        let price = 0.004 * g.annuity;
        let closed = price / (g.annuity * g.expiry.sqrt() * norm_pdf(0.0));
        let v = implied_vol(price, &g, VolConvention::Normal).unwrap();
        assert!((v - closed).abs() < 1e-12);
        assert!((formula_price(&g, VolConvention::Normal, v).unwrap() - price).abs() < 1e-12);
    }

    #[test]
    fn vol_round_trips_and_bounds() {
        let c = curves();
        for (offset, payer) in [(0.0, true), (0.01, true), (-0.005, false), (0.003, false)] {
            let g = SwaptionGeometry::new(&c, 3.0, 4.0, 0.5, offset, payer).unwrap();
            for conv in [
                VolConvention::Normal,
                VolConvention::Lognormal { shift: 0.02 },
            ] {
                let vol = if conv == VolConvention::Normal {
                    0.0085
                } else {
                    0.3
                };
                let p = formula_price(&g, conv, vol).unwrap();
                let back = implied_vol(p, &g, conv).unwrap();
                assert!(
                    (back - vol).abs() < 1e-10,
                    "{offset} {payer} {conv:?}: {back}"
                );
            }
            let intrinsic = g.intrinsic();
            assert_eq!(
                implied_vol(intrinsic, &g, VolConvention::Normal).unwrap(),
                0.0
            );
            assert!(matches!(
                implied_vol(intrinsic - 1e-6, &g, VolConvention::Normal),
                Err(Error::PriceOutOfBounds { .. })
            ));
        }
        let g = SwaptionGeometry::new(&c, 3.0, 4.0, 0.5, 0.0, true).unwrap();
        let cap = g.annuity * (g.forward + 0.02);
        assert!(implied_vol(cap, &g, VolConvention::Lognormal { shift: 0.02 }).is_err());
    }

    #[test]
    fn quote_csv_parses_and_rejects() {
        let s = "expiry,tenor_len,libor_tenor,strike_offset,vol,convention\n1,5,0.5,0,0.008,normal\n2,5,0.5,0.01,0.25,lognormal\n";
        let q = read_quotes(s.as_bytes(), 0.03).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[1].convention, VolConvention::Lognormal { shift: 0.03 });
        assert!(read_quotes("a,b\n1,2\n".as_bytes(), 0.0).is_err());
        let bad =
            "expiry,tenor_len,libor_tenor,strike_offset,vol,convention\n1,5,0.5,0,0.008,smile\n";
        assert!(read_quotes(bad.as_bytes(), 0.0).is_err());
    }

    #[test]
    fn free_param_names_match_families() {
        let hw = HjmParams::preset(ModelFamily::HullWhite);
        assert_eq!(default_free_params(&hw).unwrap().len(), 5);
        assert!(FreeParam::parse("nu0", &hw).is_err());
        assert!(FreeParam::parse("rho21", &hw).is_err());
        let ch = HjmParams::preset(ModelFamily::Cheyette);
        assert_eq!(default_free_params(&ch).unwrap().len(), 12);
        let mp = HjmParams::preset(ModelFamily::MoreniPallavicini);
        let all = default_free_params(&mp).unwrap();
        let mut p = mp.clone();
        for f in &all {
            let v = f.get(&mp);
            f.set(&mut p, f.to_external(f.to_internal(v)));
            assert!(
                (f.get(&p) - v).abs() < 1e-12 * v.abs().max(1.0),
                "{}",
                f.name
            );
        }
    }

    #[test]
    fn near_zero_vol_prices_intrinsic() {
        let c = curves();
        let mut p = HjmParams::preset(ModelFamily::HullWhite);
        p.factor_vols = vec![1e-9, 1e-9];
        let m = p.build().unwrap();
        for (off, payer) in [(-0.002, true), (0.002, true), (0.002, false)] {
            let g = SwaptionGeometry::new(&c, 2.0, 3.0, 0.5, off, payer).unwrap();
            let (price, _) = price_swaption_mc(&m, &c, &g, 200, 1).unwrap();
            assert!(
                (price - g.intrinsic()).abs() < 1e-8,
                "{price} vs {}",
                g.intrinsic()
            );
        }
    }

    #[test]
    fn parity_and_deep_itm() {
        let c = curves();
        let m = HjmParams::preset(ModelFamily::Cheyette).build().unwrap();
        let pricer = McPricer {
            n_paths: 4000,
            seed: 3,
            step: 0.25,
        };
        let pay = SwaptionGeometry::new(&c, 3.0, 5.0, 0.5, 0.002, true).unwrap();
        let rec = SwaptionGeometry {
            payer: false,
            ..pay.clone()
        };
        let deep = SwaptionGeometry::new(&c, 3.0, 5.0, 0.5, -0.2, true).unwrap();
        let r = pricer
            .price(&m, &c, &[pay.clone(), rec, deep.clone()])
            .unwrap();
        // Same paths: the difference is the discounted swap value on each path.
        let se = (r[0].1.powi(2) + r[1].1.powi(2)).sqrt();
        assert!((r[0].0 - r[1].0 - pay.forward_value()).abs() < 3.0 * se);
        assert!((r[2].0 - deep.forward_value()).abs() < 3.0 * r[2].1);
    }

    #[test]
    fn price_rises_with_volatility_scale() {
        let c = curves();
        let p = HjmParams::preset(ModelFamily::HullWhite);
        let mut bumped = p.clone();
        bumped.factor_vols.iter_mut().for_each(|v| *v *= 1.1);
        let g = [SwaptionGeometry::new(&c, 2.0, 5.0, 0.5, 0.0, true).unwrap()];
        let pricer = McPricer {
            n_paths: 4000,
            seed: 9,
            step: 0.25,
        };
        let a = pricer.payoffs(&p.build().unwrap(), &c, &g).unwrap();
        let b = pricer.payoffs(&bumped.build().unwrap(), &c, &g).unwrap();
        let diff: Vec<f64> = b[0].iter().zip(&a[0]).map(|(x, y)| x - y).collect();
        let (d, se) = mean_se(&diff);
        assert!(d > 3.0 * se, "{d} {se}");
    }

    #[test]
    fn calibration_at_the_truth_stops_immediately() {
        let c = curves();
        let truth = HjmParams::preset(ModelFamily::HullWhite);
        let pricer = McPricer {
            n_paths: 500,
            seed: 2,
            step: 0.5,
        };
        let geom: Vec<SwaptionQuote> = [(1.0, 5.0), (5.0, 5.0)]
            .iter()
            .map(|&(e, t)| SwaptionQuote {
                expiry: e,
                tenor_len: t,
                libor_tenor: 0.5,
                strike_offset: 0.0,
                vol: 0.0,
                convention: VolConvention::Normal,
            })
            .collect();
        let quotes = synthetic_quotes(&truth.build().unwrap(), &c, &geom, &pricer).unwrap();
        let free = default_free_params(&truth).unwrap();
        let r = calibrate(&truth, &free, &c, &quotes, &pricer, &Budget::default()).unwrap();
        assert!(r.converged && r.rmse < 1e-12 && r.iterations == 0);
        assert_eq!(r.evaluations, 1);
    }
}
