//! Experiment configuration: TOML schema, defaults and validation.
//!
//! Every table rejects unknown keys. `normalize` fills defaults and resolves
//! presets and relative paths, so the echoed config reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hjmx_core::credit::CreditPreset;
use hjmx_core::{HjmParams, ModelFamily, StochasticVol};

/// A configuration problem, tagged with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub curves: CurvesConfig,
    pub model: ModelConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credit: Option<CreditConfig>,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    #[serde(default)]
    pub collateral: CollateralConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trade: Option<TradeConfig>,
    /// Second trade valued on the same settings; the summary reports the
    /// ratio of bilateral adjustments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_trade: Option<TradeConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweeps: Vec<SweepConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quotes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub short_rate: f64,
    #[serde(default)]
    pub long_rate: Option<f64>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// `[tenor, spread]` pairs; zero-spread 3m and 6m curves when empty.
    #[serde(default)]
    pub basis: Vec<[f64; 2]>,
}

fn default_decay() -> f64 {
    3.0
}

fn default_horizon() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_reversion: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_vols: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_corr: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_exponents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stoch_vol: Option<StochVolConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochVolConfig {
    pub mean_reversion: f64,
    pub nu0: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub initial: f64,
    pub corr_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreditConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub investor: NameConfig,
    pub counterparty: NameConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NameConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    /// Flat hazard rate target, annual pillars.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_hazard: Option<f64>,
    /// `maturity,cum_hazard` CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard_file: Option<PathBuf>,
}

/// A scalar applies to both names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerName {
    Both(f64),
    Each([f64; 2]),
}

impl PerName {
    pub fn pair(self) -> [f64; 2] {
        match self {
            PerName::Both(v) => [v, v],
            PerName::Each(p) => p,
        }
    }
}

impl Default for PerName {
    fn default() -> Self {
        PerName::Both(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    #[serde(default)]
    pub rate_credit: PerName,
    #[serde(default)]
    pub basis_credit: PerName,
    #[serde(default)]
    pub credit_credit: f64,
    #[serde(default = "default_basis_tenors")]
    pub basis_tenors: [f64; 2],
    /// Full matrix over `(W_1..W_N, Z_v, Z_I, Z_C)`; replaces the knobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Largest Frobenius distance accepted when repairing `matrix`.
    #[serde(default = "default_repair_tolerance")]
    pub repair_tolerance: f64,
}

fn default_basis_tenors() -> [f64; 2] {
    [0.25, 0.5]
}

fn default_repair_tolerance() -> f64 {
    1e-6
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            rate_credit: PerName::default(),
            basis_credit: PerName::default(),
            credit_credit: 0.0,
            basis_tenors: default_basis_tenors(),
            matrix: None,
            repair_tolerance: default_repair_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollateralConfig {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_lgd")]
    pub lgd_i: f64,
    #[serde(default = "default_lgd")]
    pub lgd_c: f64,
}

fn default_lgd() -> f64 {
    0.6
}

impl Default for CollateralConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            delta: 0.0,
            lgd_i: default_lgd(),
            lgd_c: default_lgd(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeConfig {
    /// `IRS`, `BASIS` or `OIS`.
    pub kind: String,
    pub maturity: f64,
    /// `receiver` or `payer`: receives the fixed rate (IRS, OIS) or the
    /// short Libor leg (BASIS).
    pub direction: String,
    #[serde(default = "one")]
    pub notional: f64,
    /// Fixed rate for IRS and OIS, par when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_rate: Option<f64>,
    #[serde(default = "one")]
    pub fixed_period: f64,
    #[serde(default = "half")]
    pub libor_tenor: f64,
    #[serde(default = "quarter")]
    pub short_tenor: f64,
    #[serde(default = "half")]
    pub long_tenor: f64,
    /// Basis spread on the short leg, par when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn quarter() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_paths() -> usize {
    10_000
}

fn default_dt() -> f64 {
    1.0 / 12.0
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_paths: default_paths(),
            dt: default_dt(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `rate_credit`, `basis_credit` or `alpha`.
    pub knob: String,
    pub values: Vec<f64>,
    /// CSV file stem; defaults to the knob name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl SweepConfig {
    pub fn file_stem(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.knob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// `expiry,tenor_len,libor_tenor,strike_offset,vol,convention` CSV.
    pub quotes: PathBuf,
    /// Free parameter names; all of the family's parameters when empty.
    #[serde(default)]
    pub free: Vec<String>,
    #[serde(default = "default_cal_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "quarter")]
    pub step: f64,
    #[serde(default = "default_iters")]
    pub max_iters: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// RMSE in bp (normal) or percent (lognormal) at which to stop.
    #[serde(default = "default_target")]
    pub target_rmse: f64,
    #[serde(default = "default_shift")]
    pub lognormal_shift: f64,
}

fn default_cal_paths() -> usize {
    2000
}

fn default_iters() -> u64 {
    300
}

fn default_restarts() -> usize {
    3
}

fn default_target() -> f64 {
    1e-3
}

fn default_shift() -> f64 {
    0.02
}

/// Parses TOML text; relative paths are resolved against `base_dir`.
pub fn parse(text: &str, base_dir: &Path) -> CResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let key = unknown_key(&msg).unwrap_or_default();
        ConfigError::new(key, format!("{msg} {}", span_hint(text, e.span())))
    })?;
    cfg.resolve_paths(base_dir);
    Ok(cfg)
}

fn unknown_key(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].lines().count().max(1);
            format!("(line {line})")
        }
        None => String::new(),
    }
}

pub fn load(path: &Path) -> CResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base)
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    };
    std::fs::canonicalize(&joined).unwrap_or(joined)
}

fn family_of(s: &str) -> CResult<ModelFamily> {
    ModelFamily::parse(s)
        .ok_or_else(|| ConfigError::new("model.family", format!("`{s}` is not one of HW, CH, MP")))
}

fn finite(key: &str, v: f64) -> CResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(key, "must be a finite number"))
    }
}

fn positive(key: &str, v: f64) -> CResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(key, format!("must be positive, got {v}")))
    }
}

fn unit(key: &str, v: f64) -> CResult<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ConfigError::new(
            key,
            format!("must lie in [0, 1], got {v}"),
        ))
    }
}

fn corr(key: &str, v: f64) -> CResult<f64> {
    if (-1.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ConfigError::new(
            key,
            format!("must lie in [-1, 1], got {v}"),
        ))
    }
}

impl ExperimentConfig {
    fn resolve_paths(&mut self, base: &Path) {
        if let Some(q) = &self.curves.quotes {
            self.curves.quotes = Some(absolute(base, q));
        }
        if let Some(c) = &mut self.credit {
            for n in [&mut c.investor, &mut c.counterparty] {
                if let Some(h) = &n.hazard_file {
                    n.hazard_file = Some(absolute(base, h));
                }
            }
        }
        if let Some(c) = &mut self.calibration {
            c.quotes = absolute(base, &c.quotes);
        }
    }

    /// Fills presets and defaults and checks every value.
    pub fn normalize(mut self) -> CResult<Self> {
        if self.name.trim().is_empty() || self.name.contains(['/', '\\', '.']) {
            return Err(ConfigError::new(
                "name",
                "must be a nonempty plain directory name",
            ));
        }
        match (&self.curves.quotes, &self.curves.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => {
                positive("curves.synthetic.decay", s.decay)?;
                positive("curves.synthetic.horizon", s.horizon)?;
                finite("curves.synthetic.short_rate", s.short_rate)?;
                for b in &s.basis {
                    positive("curves.synthetic.basis", b[0])?;
                    finite("curves.synthetic.basis", b[1])?;
                }
                let mut s = s.clone();
                s.long_rate.get_or_insert(s.short_rate);
                if s.basis.is_empty() {
                    s.basis = vec![[0.25, 0.0], [0.5, 0.0]];
                }
                self.curves.synthetic = Some(s);
            }
            _ => {
                return Err(ConfigError::new(
                    "curves",
                    "set exactly one of `quotes` and `synthetic`",
                ))
            }
        }
        self.model = self.model.normalize()?;
        if let Some(c) = self.credit.take() {
            self.credit = Some(c.normalize()?);
        }
        let cc = &self.correlation;
        for (i, v) in cc.rate_credit.pair().iter().enumerate() {
            corr(&format!("correlation.rate_credit[{i}]"), *v)?;
        }
        for (i, v) in cc.basis_credit.pair().iter().enumerate() {
            corr(&format!("correlation.basis_credit[{i}]"), *v)?;
        }
        corr("correlation.credit_credit", cc.credit_credit)?;
        if !(cc.basis_tenors[0] > 0.0 && cc.basis_tenors[0] < cc.basis_tenors[1]) {
            return Err(ConfigError::new(
                "correlation.basis_tenors",
                "need 0 < x1 < x2",
            ));
        }
        if cc.repair_tolerance.is_nan() || cc.repair_tolerance < 0.0 {
            return Err(ConfigError::new(
                "correlation.repair_tolerance",
                "must be nonnegative",
            ));
        }
        let col = &self.collateral;
        unit("collateral.alpha", col.alpha)?;
        unit("collateral.lgd_i", col.lgd_i)?;
        unit("collateral.lgd_c", col.lgd_c)?;
        if !(col.delta >= 0.0 && col.delta.is_finite()) {
            return Err(ConfigError::new("collateral.delta", "must be nonnegative"));
        }
        for (key, t) in [
            ("trade", &self.trade),
            ("reference_trade", &self.reference_trade),
        ] {
            if let Some(t) = t {
                t.validate(key)?;
            }
        }
        if self.trade.is_none() && self.reference_trade.is_some() {
            return Err(ConfigError::new(
                "reference_trade",
                "needs a `trade` to compare with",
            ));
        }
        if self.trade.is_some() && self.credit.is_none() {
            return Err(ConfigError::new(
                "credit",
                "required when a trade is valued",
            ));
        }
        if self.trade.is_none() && self.calibration.is_none() {
            return Err(ConfigError::new(
                "trade",
                "nothing to run: add a `trade` or a `calibration` table",
            ));
        }
        if self.run.n_paths < 2 {
            return Err(ConfigError::new("run.n_paths", "must be at least 2"));
        }
        positive("run.dt", self.run.dt)?;
        for (i, s) in self.sweeps.iter().enumerate() {
            let key = format!("sweeps[{i}]");
            if self.trade.is_none() {
                return Err(ConfigError::new(key, "sweeps need a `trade`"));
            }
            if s.values.is_empty() {
                return Err(ConfigError::new(
                    format!("{key}.values"),
                    "must not be empty",
                ));
            }
            match s.knob.as_str() {
                "alpha" => {
                    for v in &s.values {
                        unit(&format!("{key}.values"), *v)?;
                    }
                }
                "rate_credit" | "basis_credit" => {
                    if self.correlation.matrix.is_some() {
                        return Err(ConfigError::new(
                            format!("{key}.knob"),
                            "correlation knobs cannot be swept with an explicit `correlation.matrix`",
                        ));
                    }
                    for v in &s.values {
                        finite(&format!("{key}.values"), *v)?;
                    }
                }
                other => {
                    return Err(ConfigError::new(
                        format!("{key}.knob"),
                        format!("`{other}` is not one of rate_credit, basis_credit, alpha"),
                    ))
                }
            }
            let stem = s.file_stem();
            if stem.is_empty() || stem.contains(['/', '\\', '.']) {
                return Err(ConfigError::new(
                    format!("{key}.name"),
                    "must be a plain file stem",
                ));
            }
            if self.sweeps[..i].iter().any(|o| o.file_stem() == stem) {
                return Err(ConfigError::new(
                    format!("{key}.name"),
                    format!("duplicate output `{stem}`"),
                ));
            }
        }
        if let Some(c) = &mut self.calibration {
            if c.n_paths < 2 {
                return Err(ConfigError::new(
                    "calibration.n_paths",
                    "must be at least 2",
                ));
            }
            positive("calibration.step", c.step)?;
            if c.lognormal_shift.is_nan() || c.lognormal_shift < 0.0 {
                return Err(ConfigError::new(
                    "calibration.lognormal_shift",
                    "must be nonnegative",
                ));
            }
            let params = self.model.params()?;
            if c.free.is_empty() {
                c.free = hjmx_core::calibration::default_free_params(&params)
                    .map_err(|e| ConfigError::new("calibration.free", e.to_string()))?
                    .into_iter()
                    .map(|f| f.name)
                    .collect();
            }
            for f in &c.free {
                hjmx_core::calibration::FreeParam::parse(f, &params)
                    .map_err(|e| ConfigError::new("calibration.free", e.to_string()))?;
            }
        }
        Ok(self)
    }
}

impl ModelConfig {
    fn normalize(self) -> CResult<Self> {
        let family = family_of(&self.family)?;
        let sv_given = self.stoch_vol.is_some();
        let mut p = HjmParams::preset(family);
        if let Some(v) = self.mean_reversion {
            p.mean_reversion = v;
        }
        if let Some(v) = self.factor_vols {
            p.factor_vols = v;
        }
        if let Some(v) = self.factor_corr {
            p.factor_corr = v;
        }
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = self.q_exponents {
            p.q_exponents = v;
        }
        if let Some(s) = self.stoch_vol {
            p.stoch_vol = Some(StochasticVol {
                mean_reversion: s.mean_reversion,
                nu0: s.nu0,
                nu1: s.nu1,
                nu2: s.nu2,
                initial: s.initial,
                corr_w: s.corr_w,
            });
        }
        let n = p.mean_reversion.len();
        if n == 0 || n > hjmx_core::hjm::MAX_FACTORS {
            return Err(ConfigError::new(
                "model.mean_reversion",
                format!("need 1..={} factors", hjmx_core::hjm::MAX_FACTORS),
            ));
        }
        for (key, len) in [
            ("model.factor_vols", p.factor_vols.len()),
            ("model.factor_corr", p.factor_corr.len()),
            ("model.q_exponents", p.q_exponents.len()),
        ] {
            if len != n {
                return Err(ConfigError::new(key, format!("needs {n} entries")));
            }
        }
        if family == ModelFamily::HullWhite && sv_given {
            return Err(ConfigError::new(
                "model.stoch_vol",
                "Hull-White has deterministic volatility",
            ));
        }
        let out = ModelConfig {
            family: family.short_name().to_string(),
            mean_reversion: Some(p.mean_reversion.clone()),
            factor_vols: Some(p.factor_vols.clone()),
            factor_corr: Some(p.factor_corr.clone()),
            gamma: (family == ModelFamily::MoreniPallavicini).then_some(p.gamma),
            q_exponents: (family == ModelFamily::MoreniPallavicini).then(|| p.q_exponents.clone()),
            stoch_vol: p.stoch_vol.as_ref().map(|s| StochVolConfig {
                mean_reversion: s.mean_reversion,
                nu0: s.nu0,
                nu1: s.nu1,
                nu2: s.nu2,
                initial: s.initial,
                corr_w: s.corr_w.clone(),
            }),
        };
        out.params()?
            .build()
            .map_err(|e| ConfigError::new("model", e.to_string()))?;
        Ok(out)
    }

    pub fn family(&self) -> CResult<ModelFamily> {
        family_of(&self.family)
    }

    pub fn params(&self) -> CResult<HjmParams> {
        let family = self.family()?;
        let mut p = HjmParams::preset(family);
        if let Some(v) = &self.mean_reversion {
            p.mean_reversion = v.clone();
        }
        if let Some(v) = &self.factor_vols {
            p.factor_vols = v.clone();
        }
        if let Some(v) = &self.factor_corr {
            p.factor_corr = v.clone();
        }
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = &self.q_exponents {
            p.q_exponents = v.clone();
        }
        if let Some(s) = &self.stoch_vol {
            p.stoch_vol = Some(StochasticVol {
                mean_reversion: s.mean_reversion,
                nu0: s.nu0,
                nu1: s.nu1,
                nu2: s.nu2,
                initial: s.initial,
                corr_w: s.corr_w.clone(),
            });
        }
        if family == ModelFamily::HullWhite {
            p.stoch_vol = None;
        }
        Ok(p)
    }
}

impl CreditConfig {
    fn normalize(self) -> CResult<Self> {
        if let Some(h) = self.horizon {
            positive("credit.horizon", h)?;
        }
        Ok(Self {
            horizon: self.horizon,
            investor: self.investor.normalize("credit.investor")?,
            counterparty: self.counterparty.normalize("credit.counterparty")?,
        })
    }
}

impl NameConfig {
    fn normalize(self, key: &str) -> CResult<Self> {
        let preset = match &self.preset {
            Some(p) => Some(CreditPreset::parse(p).ok_or_else(|| {
                ConfigError::new(
                    format!("{key}.preset"),
                    format!("`{p}` is not one of medium, high"),
                )
            })?),
            None => None,
        };
        let base = preset.map(|p| p.params());
        let pick = |field: &str, v: Option<f64>, from: Option<f64>| -> CResult<f64> {
            v.or(from).ok_or_else(|| {
                ConfigError::new(format!("{key}.{field}"), "missing (no preset given)")
            })
        };
        let zeta = positive(
            &format!("{key}.zeta"),
            pick("zeta", self.zeta, base.map(|b| b.zeta))?,
        )?;
        let mu = positive(
            &format!("{key}.mu"),
            pick("mu", self.mu, base.map(|b| b.mu))?,
        )?;
        let nu = pick("nu", self.nu, base.map(|b| b.nu))?;
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(ConfigError::new(format!("{key}.nu"), "must be nonnegative"));
        }
        let y0 = positive(
            &format!("{key}.y0"),
            pick("y0", self.y0, base.map(|b| b.y0))?,
        )?;
        let (flat_hazard, hazard_file) = match (self.flat_hazard, self.hazard_file) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::new(
                    format!("{key}.hazard_file"),
                    "set at most one of `flat_hazard` and `hazard_file`",
                ))
            }
            (None, Some(f)) => (None, Some(f)),
            (h, None) => {
                let h = pick("flat_hazard", h, preset.map(|p| p.flat_hazard()))?;
                (Some(positive(&format!("{key}.flat_hazard"), h)?), None)
            }
        };
        Ok(Self {
            preset: None,
            zeta: Some(zeta),
            mu: Some(mu),
            nu: Some(nu),
            y0: Some(y0),
            flat_hazard,
            hazard_file,
        })
    }
}

impl TradeConfig {
    fn validate(&self, key: &str) -> CResult<()> {
        match self.kind.to_ascii_uppercase().as_str() {
            "IRS" | "BASIS" | "OIS" => {}
            other => {
                return Err(ConfigError::new(
                    format!("{key}.kind"),
                    format!("`{other}` is not one of IRS, BASIS, OIS"),
                ))
            }
        }
        match self.direction.to_ascii_lowercase().as_str() {
            "receiver" | "payer" => {}
            other => {
                return Err(ConfigError::new(
                    format!("{key}.direction"),
                    format!("`{other}` is not one of receiver, payer"),
                ))
            }
        }
        positive(&format!("{key}.maturity"), self.maturity)?;
        positive(&format!("{key}.notional"), self.notional)?;
        positive(&format!("{key}.fixed_period"), self.fixed_period)?;
        positive(&format!("{key}.libor_tenor"), self.libor_tenor)?;
        positive(&format!("{key}.short_tenor"), self.short_tenor)?;
        positive(&format!("{key}.long_tenor"), self.long_tenor)?;
        if let Some(r) = self.fixed_rate {
            finite(&format!("{key}.fixed_rate"), r)?;
        }
        if let Some(s) = self.spread {
            finite(&format!("{key}.spread"), s)?;
        }
        Ok(())
    }
}
