//! Builds core objects from a normalized config and writes the artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hjmx_core::calibration::{
    self, read_quotes_path, Budget, CalibrationReport, FreeParam, McPricer, SwaptionQuote,
};
use hjmx_core::credit::{calibrate_shift, CirParams};
use hjmx_core::products::{basis_par_spread, irs_par_rate};
use hjmx_core::xva::{simulate_xva, wwr_sweep, SweepRow, WwrKnob};
use hjmx_core::{
    build_correlation, CholeskyFactor, CorrelationKnobs, CorrelationSpec, CreditPair, Direction,
    HazardCurve, HjmModel, MarketCurves, QuoteSet, SyntheticCurves, Trade, XvaResult, XvaSetup,
};

use crate::config::{ConfigError, ExperimentConfig, NameConfig, SweepConfig, TradeConfig};

/// Failure of a command, mapped to a process exit code.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numerical(hjmx_core::Error),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Numerical(e) => write!(f, "numerical failure: {e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<hjmx_core::Error> for RunError {
    fn from(e: hjmx_core::Error) -> Self {
        match e {
            hjmx_core::Error::Io(s) => RunError::Io(s),
            other => RunError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

type RResult<T> = std::result::Result<T, RunError>;

/// Tags a core error with the config key whose input caused it.
fn keyed<T>(key: &str, r: hjmx_core::Result<T>) -> RResult<T> {
    r.map_err(|e| match e {
        hjmx_core::Error::Io(s) => RunError::Config(ConfigError::new(key, s)),
        other => RunError::Config(ConfigError::new(key, other.to_string())),
    })
}

/// Everything the config describes, built and validated.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub curves: MarketCurves,
    pub model: HjmModel,
    pub credit: Option<CreditPair>,
    pub knobs: CorrelationKnobs,
    pub factor: CholeskyFactor,
    pub trade: Option<Trade>,
    pub reference: Option<Trade>,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> RResult<Self> {
        let mut config = config.normalize()?;
        if config.output_dir.is_relative() {
            config.output_dir = std::env::current_dir()?.join(&config.output_dir);
        }
        let curves = build_curves(&config)?;
        let params = config.model.params()?;
        let model = keyed("model", params.build())?;
        let trade = config
            .trade
            .as_ref()
            .map(|t| build_trade("trade", t, &curves))
            .transpose()?;
        let reference = config
            .reference_trade
            .as_ref()
            .map(|t| build_trade("reference_trade", t, &curves))
            .transpose()?;
        let horizon = [&trade, &reference]
            .iter()
            .filter_map(|t| t.as_ref().map(|t| t.maturity))
            .fold(0.0, f64::max)
            + config.collateral.delta;
        let credit = match &config.credit {
            Some(c) => {
                let h = c.horizon.unwrap_or((horizon.ceil() + 1.0).max(2.0));
                if h < horizon {
                    return Err(ConfigError::new(
                        "credit.horizon",
                        format!("must cover the trade horizon {horizon}"),
                    )
                    .into());
                }
                Some(CreditPair {
                    investor: build_name("credit.investor", &c.investor, h)?,
                    counterparty: build_name("credit.counterparty", &c.counterparty, h)?,
                })
            }
            None => None,
        };
        let cc = &config.correlation;
        let knobs = CorrelationKnobs {
            rate_credit: cc.rate_credit.pair(),
            basis_credit: cc.basis_credit.pair(),
            credit_credit: cc.credit_credit,
            basis_tenors: (cc.basis_tenors[0], cc.basis_tenors[1]),
        };
        let factor = correlation_factor(&config, &model, &knobs)?;
        Ok(Self {
            config,
            curves,
            model,
            credit,
            knobs,
            factor,
            trade,
            reference,
        })
    }

    fn setup(&self, trade: &Trade) -> XvaSetup {
        let col = &self.config.collateral;
        XvaSetup {
            trade: trade.clone(),
            model: self.model.clone(),
            curves: self.curves.clone(),
            credit: self.credit.clone().expect("credit checked by normalize"),
            delta: col.delta,
            lgd_i: col.lgd_i,
            lgd_c: col.lgd_c,
            grid_step: self.config.run.dt,
        }
    }

    /// Adjustment of `trade` at the configured correlation and collateral, in
    /// basis points of notional.
    pub fn headline(&self, trade: &Trade) -> RResult<XvaResult> {
        let run = &self.config.run;
        let s = simulate_xva(
            &self.setup(trade),
            std::slice::from_ref(&self.factor),
            &[self.config.collateral.alpha],
            run.n_paths,
            run.seed,
        )?;
        Ok(s.result(0, 0).scaled(1e4 / trade.notional))
    }

    pub fn sweep(&self, trade: &Trade, sweep: &SweepConfig) -> RResult<SweepOutcome> {
        let run = &self.config.run;
        let bp = 1e4 / trade.notional;
        let setup = self.setup(trade);
        if sweep.knob == "alpha" {
            let s = simulate_xva(
                &setup,
                std::slice::from_ref(&self.factor),
                &sweep.values,
                run.n_paths,
                run.seed,
            )?;
            let rows = sweep
                .values
                .iter()
                .enumerate()
                .map(|(a, &v)| SweepRow {
                    knob: v,
                    result: Ok(s.result(0, a).scaled(bp)),
                })
                .collect();
            return Ok(SweepOutcome { rows, slope: None });
        }
        let knob = if sweep.knob == "rate_credit" {
            WwrKnob::RateCredit
        } else {
            WwrKnob::BasisCredit
        };
        let t = wwr_sweep(
            &setup,
            &self.knobs,
            knob,
            &sweep.values,
            self.config.collateral.alpha,
            run.n_paths,
            run.seed,
        )?;
        let rows = t
            .rows
            .into_iter()
            .map(|r| SweepRow {
                knob: r.knob,
                result: r.result.map(|x| x.scaled(bp)),
            })
            .collect();
        Ok(SweepOutcome {
            rows,
            slope: t.slope.map(|(m, se)| (m * bp, se * bp)),
        })
    }

    pub fn calibrate(&self) -> RResult<Option<CalibrationOutcome>> {
        let Some(c) = &self.config.calibration else {
            return Ok(None);
        };
        let quotes = keyed(
            "calibration.quotes",
            read_quotes_path(&c.quotes, c.lognormal_shift),
        )?;
        let start = self.config.model.params()?;
        let free = c
            .free
            .iter()
            .map(|f| keyed("calibration.free", FreeParam::parse(f, &start)))
            .collect::<RResult<Vec<_>>>()?;
        let pricer = McPricer {
            n_paths: c.n_paths,
            seed: c.seed,
            step: c.step,
        };
        let budget = Budget {
            max_iters: c.max_iters,
            restarts: c.restarts,
            target_rmse: c.target_rmse,
        };
        let report =
            calibration::calibrate(&start, &free, &self.curves, &quotes, &pricer, &budget)?;
        Ok(Some(CalibrationOutcome {
            quotes,
            free,
            report,
        }))
    }
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Bilateral slope and its standard error, bp per unit of the knob.
    pub slope: Option<(f64, f64)>,
}

pub struct CalibrationOutcome {
    pub quotes: Vec<SwaptionQuote>,
    pub free: Vec<FreeParam>,
    pub report: CalibrationReport,
}

fn build_curves(cfg: &ExperimentConfig) -> RResult<MarketCurves> {
    if let Some(q) = &cfg.curves.quotes {
        let quotes = keyed("curves.quotes", QuoteSet::from_csv_path(q))?;
        return keyed("curves.quotes", MarketCurves::bootstrap(&quotes));
    }
    let s = cfg.curves.synthetic.as_ref().expect("normalized");
    keyed(
        "curves.synthetic",
        MarketCurves::synthetic(&SyntheticCurves {
            short_rate: s.short_rate,
            long_rate: s.long_rate.unwrap_or(s.short_rate),
            decay: s.decay,
            horizon: s.horizon,
            basis: s.basis.iter().map(|b| (b[0], b[1])).collect(),
        }),
    )
}

fn build_name(key: &str, n: &NameConfig, horizon: f64) -> RResult<hjmx_core::CirPP> {
    let params = CirParams {
        zeta: n.zeta.expect("normalized"),
        mu: n.mu.expect("normalized"),
        nu: n.nu.expect("normalized"),
        y0: n.y0.expect("normalized"),
    };
    let curve = match (&n.hazard_file, n.flat_hazard) {
        (Some(f), _) => keyed(&format!("{key}.hazard_file"), HazardCurve::from_csv_path(f))?,
        (None, Some(h)) => keyed(
            &format!("{key}.flat_hazard"),
            HazardCurve::flat(h, horizon, 1.0),
        )?,
        (None, None) => unreachable!("normalized"),
    };
    Ok(calibrate_shift(&params, &curve)?)
}

/// The parameter that makes a trade worth zero today; trades are affine in it.
fn par_level(
    build: impl Fn(f64) -> hjmx_core::Result<Trade>,
    curves: &MarketCurves,
) -> hjmx_core::Result<f64> {
    let v0 = build(0.0)?.price_perfect_collateral(curves)?;
    let v1 = build(1.0)?.price_perfect_collateral(curves)?;
    Ok(-v0 / (v1 - v0))
}

fn build_trade(key: &str, t: &TradeConfig, curves: &MarketCurves) -> RResult<Trade> {
    let direction = if t.direction.eq_ignore_ascii_case("payer") {
        Direction::Payer
    } else {
        Direction::Receiver
    };
    let built = match t.kind.to_ascii_uppercase().as_str() {
        "IRS" => {
            let rate = match t.fixed_rate {
                Some(r) => Ok(r),
                None => irs_par_rate(curves, 0.0, t.maturity, t.fixed_period, t.libor_tenor),
            };
            rate.and_then(|r| {
                Trade::irs(
                    t.maturity,
                    r,
                    t.fixed_period,
                    t.libor_tenor,
                    t.notional,
                    direction,
                )
            })
        }
        "OIS" => {
            let mk = |r| Trade::ois(t.maturity, r, t.fixed_period, 1.0, direction);
            let rate = match t.fixed_rate {
                Some(r) => Ok(r),
                None => par_level(mk, curves),
            };
            rate.and_then(|r| Trade::ois(t.maturity, r, t.fixed_period, t.notional, direction))
        }
        _ => {
            let spread = match t.spread {
                Some(s) => Ok(s),
                None => basis_par_spread(curves, t.maturity, t.short_tenor, t.long_tenor),
            };
            spread.and_then(|s| {
                Trade::basis(
                    t.maturity,
                    t.short_tenor,
                    t.long_tenor,
                    s,
                    t.notional,
                    direction,
                )
            })
        }
    };
    let trade = keyed(key, built)?;
    keyed(key, trade.price_perfect_collateral(curves))?;
    Ok(trade)
}

fn correlation_factor(
    cfg: &ExperimentConfig,
    model: &HjmModel,
    knobs: &CorrelationKnobs,
) -> RResult<CholeskyFactor> {
    let key = "correlation.matrix";
    let Some(m) = &cfg.correlation.matrix else {
        return keyed(
            "correlation",
            CorrelationSpec::from_knobs(model, knobs).and_then(|s| build_correlation(&s)),
        );
    };
    let dim = model.factors() + 3;
    if m.len() != dim {
        return Err(ConfigError::new(key, format!("must be {dim}x{dim}")).into());
    }
    let f = keyed(
        key,
        CorrelationSpec::new(m.clone()).and_then(|s| build_correlation(&s)),
    )?;
    if let Some(d) = f.repair_distance {
        if d > cfg.correlation.repair_tolerance {
            return Err(ConfigError::new(
                key,
                format!(
                    "not positive semidefinite: repair distance {d:.3e} exceeds tolerance {:.3e}",
                    cfg.correlation.repair_tolerance
                ),
            )
            .into());
        }
    }
    Ok(f)
}

/// Fixed six decimals; rounding to zero never prints a sign.
fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s.trim_start_matches('-')
        .bytes()
        .all(|b| b == b'0' || b == b'.')
    {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// CSV bytes for one sweep; values in bp of notional.
pub fn sweep_csv(outcome: &SweepOutcome) -> RResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| RunError::Io(e.to_string());
    w.write_record([
        "knob_value",
        "price",
        "cva",
        "dva",
        "bilateral",
        "se_bilateral",
        "status",
    ])
    .map_err(io)?;
    for r in &outcome.rows {
        let rec = match &r.result {
            Ok(x) => vec![
                num(r.knob),
                num(x.adjusted_price()),
                num(x.cva),
                num(x.dva),
                num(x.bilateral),
                num(x.se_bilateral),
                "ok".to_string(),
            ],
            Err(e) => {
                let mut v = vec![num(r.knob)];
                v.extend(std::iter::repeat_n(String::new(), 5));
                v.push(e.to_string());
                v
            }
        };
        w.write_record(&rec).map_err(io)?;
    }
    w.into_inner().map_err(|e| RunError::Io(e.to_string()))
}

pub fn calibration_csv(c: &CalibrationOutcome) -> RResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| RunError::Io(e.to_string());
    w.write_record([
        "expiry",
        "tenor_len",
        "libor_tenor",
        "strike_offset",
        "convention",
        "market_vol",
        "model_vol",
        "residual",
    ])
    .map_err(io)?;
    for (q, r) in c.quotes.iter().zip(&c.report.residuals) {
        w.write_record([
            num(q.expiry),
            num(q.tenor_len),
            num(q.libor_tenor),
            format!("{:.8}", q.strike_offset),
            q.convention.name().to_string(),
            format!("{:.8}", q.vol),
            format!("{:.8}", q.vol + r),
            format!("{:.8}", r),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| RunError::Io(e.to_string()))
}

fn verdict(slope: f64, se: f64) -> &'static str {
    if slope > 3.0 * se {
        "increasing"
    } else if slope < -3.0 * se {
        "decreasing"
    } else {
        "flat"
    }
}

fn describe(out: &mut String, label: &str, x: &XvaResult) {
    let _ = writeln!(
        out,
        "{label}: price {} bp, cva {} ± {}, dva {} ± {}, bilateral {} ± {}, adjusted price {}",
        num(x.price),
        num(x.cva),
        num(x.se_cva),
        num(x.dva),
        num(x.se_dva),
        num(x.bilateral),
        num(x.se_bilateral),
        num(x.adjusted_price())
    );
}

/// Files written by `run`, relative to the output directory.
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Runs the experiment and writes `config_echo.toml`, one CSV per sweep,
/// `calibration.csv` when calibrating, and `summary.txt`.
pub fn run(exp: &Experiment) -> RResult<RunArtifacts> {
    let cfg = &exp.config;
    let dir = cfg.output_dir.join(&cfg.name);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> RResult<()> {
        let p = dir.join(name);
        std::fs::write(&p, bytes)?;
        files.push(p);
        Ok(())
    };
    let echo = toml::to_string(cfg).map_err(|e| RunError::Io(e.to_string()))?;
    write("config_echo.toml", echo.as_bytes())?;

    let mut summary = String::new();
    let _ = writeln!(summary, "experiment {}", cfg.name);
    let _ = writeln!(
        summary,
        "model {}, {} paths, seed {}, dt {:.6}, alpha {}, delta {:.6}",
        cfg.model.family,
        cfg.run.n_paths,
        cfg.run.seed,
        cfg.run.dt,
        cfg.collateral.alpha,
        cfg.collateral.delta
    );
    let _ = writeln!(summary, "values in bp of notional; cva <= 0 and dva >= 0 are signed contributions; bilateral = cva + dva");

    if let Some(trade) = &exp.trade {
        let main = exp.headline(trade)?;
        describe(&mut summary, "trade", &main);
        if let Some(r) = &exp.reference {
            let refv = exp.headline(r)?;
            describe(&mut summary, "reference", &refv);
            let ratio = main.bilateral / refv.bilateral;
            let se = ratio.abs()
                * ((main.se_bilateral / main.bilateral).powi(2)
                    + (refv.se_bilateral / refv.bilateral).powi(2))
                .sqrt();
            let _ = writeln!(
                summary,
                "ratio trade/reference bilateral: {ratio:.6} ± {se:.6} ({})",
                if ratio.abs() + 3.0 * se < 1.0 / 3.0 {
                    "below 1/3 at 3 SE"
                } else {
                    "not below 1/3 at 3 SE"
                }
            );
        }
        for s in &cfg.sweeps {
            let outcome = exp.sweep(trade, s)?;
            write(&format!("{}.csv", s.file_stem()), &sweep_csv(&outcome)?)?;
            let failed = outcome.rows.iter().filter(|r| r.result.is_err()).count();
            let _ = write!(summary, "sweep {} over {}: ", s.file_stem(), s.knob);
            match outcome.slope {
                Some((m, se)) => {
                    let _ = write!(
                        summary,
                        "slope {m:.6} ± {se:.6} bp per unit, trend {}",
                        verdict(m, se)
                    );
                }
                None if s.knob == "alpha" => {
                    let _ = write!(summary, "{}", alpha_verdict(&outcome));
                }
                None => {
                    let _ = write!(summary, "too few valid points for a slope");
                }
            }
            if failed > 0 {
                let _ = write!(summary, ", {failed} point(s) failed");
            }
            summary.push('\n');
        }
    }

    if let Some(c) = exp.calibrate()? {
        write("calibration.csv", &calibration_csv(&c)?)?;
        let r = &c.report;
        let _ = writeln!(
            summary,
            "calibration: rmse {:.6} (quoted vol units), {} evaluations, {} iterations, converged {}",
            r.rmse, r.evaluations, r.iterations, r.converged
        );
        for f in &c.free {
            let _ = writeln!(summary, "  {} = {:.8}", f.name, f.get(&r.params));
        }
    }
    write("summary.txt", summary.as_bytes())?;
    Ok(RunArtifacts { dir, files })
}

fn alpha_verdict(o: &SweepOutcome) -> String {
    let ok: Vec<&XvaResult> = o
        .rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok())
        .collect();
    let mono = |f: fn(&XvaResult) -> (f64, f64)| {
        ok.windows(2).all(|w| {
            let (a, sa) = f(w[0]);
            let (b, sb) = f(w[1]);
            b.abs() <= a.abs() + 3.0 * (sa * sa + sb * sb).sqrt()
        })
    };
    let cva = mono(|x| (x.cva, x.se_cva));
    let dva = mono(|x| (x.dva, x.se_dva));
    format!(
        "|cva| nonincreasing in alpha: {}, |dva| nonincreasing in alpha: {}",
        if cva { "yes" } else { "no" },
        if dva { "yes" } else { "no" }
    )
}

pub fn load(path: &Path) -> RResult<Experiment> {
    Experiment::build(crate::config::load(path)?)
}
