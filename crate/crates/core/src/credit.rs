//! CIR++ default intensities `lambda_t = y_t + psi(t)`.

use std::path::Path;

use crate::error::{Error, Result};

const PILLAR_EPS: f64 = 1e-9;

/// Square-root part `dy = zeta (mu - y) dt + nu sqrt(y) dZ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirParams {
    pub zeta: f64,
    pub mu: f64,
    pub nu: f64,
    pub y0: f64,
}

impl CirParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.mu > 0.0 && self.y0 > 0.0 && self.nu >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "CIR parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `ln E[exp(-int_0^t y_s ds)]` from the CIR bond formula.
    pub fn log_survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (a, b) = self.affine_coefficients(t);
        a - b * self.y0
    }

    /// `(ln A(t), B(t))`.
    fn affine_coefficients(&self, t: f64) -> (f64, f64) {
        let z = self.zeta;
        let nu2 = self.nu * self.nu;
        if nu2 < 1e-300 {
            // deterministic limit: y_s = mu + (y0 - mu) e^{-zeta s}
            let b = (1.0 - (-z * t).exp()) / z;
            return (-self.mu * (t - b), b);
        }
        let h = (z * z + 2.0 * nu2).sqrt();
        // h - zeta without cancellation
        let d = 2.0 * nu2 / (h + z);
        let r = d / (h + z);
        let ln_a =
            (2.0 * z * self.mu / nu2) * (r.ln_1p() - 0.5 * d * t - (r * (-h * t).exp()).ln_1p());
        let b = 2.0 * (h * t).exp_m1() / ((z + h) * (h * t).exp() + d);
        (ln_a, b)
    }
}

/// Target market survival curve as cumulative hazards `Lambda(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardCurve {
    times: Vec<f64>,
    cum: Vec<f64>,
}

impl HazardCurve {
    /// Pillars `(T, Lambda(T))`, `T` strictly increasing and positive.
    pub fn new(pillars: &[(f64, f64)]) -> Result<Self> {
        if pillars.is_empty() {
            return Err(Error::InvalidInput(
                "hazard curve needs at least one pillar".into(),
            ));
        }
        let mut last_t = 0.0;
        let mut last_c = 0.0;
        for &(t, c) in pillars {
            if !(t > last_t) {
                return Err(Error::NonMonotoneMaturities { maturity: t });
            }
            if !(c >= last_c) || !c.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "cumulative hazard must be nondecreasing at T={t}"
                )));
            }
            last_t = t;
            last_c = c;
        }
        Ok(Self {
            times: pillars.iter().map(|p| p.0).collect(),
            cum: pillars.iter().map(|p| p.1).collect(),
        })
    }

    /// Flat hazard `rate` with pillars every `step` years up to `horizon`.
    pub fn flat(rate: f64, horizon: f64, step: f64) -> Result<Self> {
        let n = (horizon / step).ceil().max(1.0) as usize;
        let pillars: Vec<(f64, f64)> = (1..=n)
            .map(|i| (i as f64 * step, rate * i as f64 * step))
            .collect();
        Self::new(&pillars)
    }

    /// CSV with header `maturity,cum_hazard`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "maturity" || &headers[1] != "cum_hazard" {
            return Err(Error::InvalidInput(
                "hazard CSV header must be `maturity,cum_hazard`".into(),
            ));
        }
        let mut pillars = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("bad number `{}` in hazard CSV", &rec[i]))
                })
            };
            pillars.push((parse(0)?, parse(1)?));
        }
        Self::new(&pillars)
    }

    pub fn pillars(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.cum.iter().copied())
    }

    /// `Lambda(t)`, linear between pillars (piecewise-flat hazard), flat hazard extrapolation.
    pub fn cum_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut t0 = 0.0;
        let mut c0 = 0.0;
        for (k, (&t1, &c1)) in self.times.iter().zip(&self.cum).enumerate() {
            if t <= t1 || k + 1 == self.times.len() {
                return c0 + (c1 - c0) * (t - t0) / (t1 - t0);
            }
            t0 = t1;
            c0 = c1;
        }
        unreachable!()
    }
}

/// Piecewise-constant deterministic shift; `values[k]` applies on `(times[k-1], times[k]]`
/// and the last value is extended beyond the final pillar.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFunction {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ShiftFunction {
    pub fn zero() -> Self {
        Self {
            times: vec![f64::INFINITY],
            values: vec![0.0],
        }
    }

    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidInput(
                "shift needs matching, nonempty pillars and values".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn pillars(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    fn index(&self, t: f64) -> usize {
        self.times
            .partition_point(|p| *p <= t)
            .min(self.times.len() - 1)
    }

    /// Right-continuous value `psi(t)`.
    pub fn value(&self, t: f64) -> f64 {
        self.values[self.index(t)]
    }

    /// Left limit `psi(t-)`.
    pub fn value_left(&self, t: f64) -> f64 {
        self.values[self
            .times
            .partition_point(|p| *p < t)
            .min(self.times.len() - 1)]
    }

    /// `Psi(t) = int_0^t psi`.
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (k, (&p, &v)) in self.times.iter().zip(&self.values).enumerate() {
            let end = if k + 1 == self.times.len() {
                t
            } else {
                p.min(t)
            };
            if end > prev {
                acc += v * (end - prev);
            }
            if t <= p {
                break;
            }
            prev = p;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirPP {
    pub params: CirParams,
    pub shift: ShiftFunction,
}

impl CirPP {
    pub fn unshifted(params: CirParams) -> Self {
        Self {
            params,
            shift: ShiftFunction::zero(),
        }
    }

    /// `E[exp(-int_0^t lambda)] = exp(-Psi(t)) A(t) exp(-B(t) y0)`.
    pub fn survival_probability(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        (self.params.log_survival(t) - self.shift.integral(t)).exp()
    }

    pub fn intensity(&self, y: f64, t: f64) -> f64 {
        y.max(0.0) + self.shift.value(t)
    }
}

/// One full-truncation step of `y`. The drift uses the exact decay factor
/// `1 - exp(-zeta dt)` so the `nu = 0` path solves the ODE exactly; `dz` has
/// variance `dt`.
pub fn evolve_intensity(params: &CirParams, y: f64, dt: f64, dz: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dt must be positive, got {dt}"
        )));
    }
    Ok(step_with(params, -(-params.zeta * dt).exp_m1(), y, dz))
}

#[inline]
pub(crate) fn step_with(params: &CirParams, decay: f64, y: f64, dz: f64) -> f64 {
    let yp = y.max(0.0);
    y + (params.mu - yp) * decay + params.nu * yp.sqrt() * dz
}

/// Fits the shift so the CIR++ survival curve reproduces `curve` at every pillar.
pub fn calibrate_shift(params: &CirParams, curve: &HazardCurve) -> Result<CirPP> {
    params.validate()?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut prev_t = 0.0;
    let mut prev_psi_int = 0.0;
    for (t, cum) in curve.pillars() {
        let psi_int = cum + params.log_survival(t);
        let psi = (psi_int - prev_psi_int) / (t - prev_t);
        if psi < -PILLAR_EPS {
            return Err(Error::NegativeShift { pillar: t, psi });
        }
        times.push(t);
        values.push(psi);
        prev_t = t;
        prev_psi_int = psi_int;
    }
    Ok(CirPP {
        params: *params,
        shift: ShiftFunction::new(times, values)?,
    })
}

/// Cure-period intensities `(lambda^{delta,C}_u, lambda^{delta,I}_u)` with
/// every term taken at `u`: `lambda^C_u + lambda^I_u (1 - exp(-int_u^{u+delta} lambda^C))`
/// and symmetrically for the investor.
pub fn lambda_delta(lambda_c: f64, lambda_i: f64, int_c: f64, int_i: f64) -> (f64, f64) {
    (
        lambda_c + lambda_i * -(-int_c).exp_m1(),
        lambda_i + lambda_c * -(-int_i).exp_m1(),
    )
}

/// Pathwise `lambda_delta` from intensity paths on a grid; the integrals over
/// `[u, u+delta]` use the trapezoid rule on the grid nodes, so `u + delta`
/// must be a node.
pub fn lambda_delta_on_path(
    grid: &[f64],
    lambda_c: &[f64],
    lambda_i: &[f64],
    u: f64,
    delta: f64,
) -> Result<(f64, f64)> {
    let find = |t: f64| {
        grid.iter()
            .position(|g| (g - t).abs() < PILLAR_EPS)
            .ok_or(Error::MissingGridNode { t })
    };
    let k = find(u)?;
    let j = if delta == 0.0 { k } else { find(u + delta)? };
    let trap = |l: &[f64]| {
        (k..j)
            .map(|m| 0.5 * (grid[m + 1] - grid[m]) * (l[m] + l[m + 1]))
            .sum::<f64>()
    };
    Ok(lambda_delta(
        lambda_c[k],
        lambda_i[k],
        trap(lambda_c),
        trap(lambda_i),
    ))
}

/// Named credit settings with flat synthetic hazard targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CreditPreset {
    Medium,
    High,
}

impl CreditPreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "medium" => Some(Self::Medium),
            "high" => Some(Self::High),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Medium => "medium",
            Self::High => "high",
        }
    }

    pub fn flat_hazard(self) -> f64 {
        match self {
            Self::Medium => 0.02,
            Self::High => 0.04,
        }
    }

    pub fn params(self) -> CirParams {
        match self {
            Self::Medium => CirParams {
                zeta: 0.5,
                mu: 0.015,
                nu: 0.08,
                y0: 0.015,
            },
            Self::High => CirParams {
                zeta: 0.5,
                mu: 0.03,
                nu: 0.12,
                y0: 0.03,
            },
        }
    }

    pub fn hazard_curve(self, horizon: f64) -> HazardCurve {
        HazardCurve::flat(self.flat_hazard(), horizon, 1.0).expect("preset hazard curve is valid")
    }

    pub fn calibrated(self, horizon: f64) -> Result<CirPP> {
        calibrate_shift(&self.params(), &self.hazard_curve(horizon))
    }
}

/// Investor and counterparty intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditPair {
    pub investor: CirPP,
    pub counterparty: CirPP,
}
