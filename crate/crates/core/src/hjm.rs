//! Markov multi-curve HJM model.
//!
//! Volatilities are separable, `sigma_t(u;T,x) = h_t q(u;T,x) g(t,u)`, with
//! `h_t = sqrt(v_t) R`, constant mean reversions and a diagonal `q` of the
//! form `exp(x * eta_q)`. Every OIS and Libor quantity is then a closed-form
//! function of the Markov state `(X_t, Y_t, v_t)`; this module holds the
//! volatility structure, the state step and the reconstruction formulas.

use crate::error::{Error, Result};
use crate::termstructures::MarketCurves;

/// Upper bound on the number of Gaussian factors. States are fixed-size arrays.
pub const MAX_FACTORS: usize = 4;

pub type Vector = [f64; MAX_FACTORS];
pub type Matrix = [[f64; MAX_FACTORS]; MAX_FACTORS];

const SERIES_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    HullWhite,
    Cheyette,
    MoreniPallavicini,
}

impl ModelFamily {
    pub fn all() -> [ModelFamily; 3] {
        [
            ModelFamily::HullWhite,
            ModelFamily::Cheyette,
            ModelFamily::MoreniPallavicini,
        ]
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ModelFamily::HullWhite => "HW",
            ModelFamily::Cheyette => "CH",
            ModelFamily::MoreniPallavicini => "MP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HW" => Some(ModelFamily::HullWhite),
            "CH" => Some(ModelFamily::Cheyette),
            "MP" => Some(ModelFamily::MoreniPallavicini),
            _ => None,
        }
    }

    /// Stochastic factor count and free-parameter count for N = 2 factors.
    pub fn characteristics(self) -> (usize, usize) {
        match self {
            ModelFamily::HullWhite => (2, 5),
            ModelFamily::Cheyette => (3, 12),
            ModelFamily::MoreniPallavicini => (3, 14),
        }
    }
}

/// Deterministic Libor shift `kappa(T,x)`; both kinds satisfy `x kappa -> 1` as `x -> 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftKind {
    InverseTenor,
    Damped { gamma: f64 },
}

impl ShiftKind {
    pub fn kappa(&self, x: f64) -> f64 {
        match *self {
            ShiftKind::InverseTenor => 1.0 / x,
            ShiftKind::Damped { gamma } => (-gamma * x).exp() / x,
        }
    }
}

/// Common square-root variance driving all entries of `h`:
/// `dv = eta_v (1 - v) dt + nu0 (1 + (nu1 - 1) e^{-nu2 t}) sqrt(v) dZ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticVol {
    pub mean_reversion: f64,
    pub nu0: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub initial: f64,
    /// Correlation of `Z` with each `W_k`.
    pub corr_w: Vec<f64>,
}

impl StochasticVol {
    pub fn vol_of_vol(&self, t: f64) -> f64 {
        self.nu0 * (1.0 + (self.nu1 - 1.0) * (-self.nu2 * t).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolSpec {
    Deterministic,
    Stochastic(StochasticVol),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjmModel {
    n: usize,
    a: Vector,
    r: Matrix,
    cov: Matrix,
    shift: ShiftKind,
    q_exponents: Vector,
    vol: VolSpec,
}

impl HjmModel {
    /// `r` is the lower-triangular factor loading with `R R^T` the instantaneous
    /// covariance of `X`.
    pub fn new(
        mean_reversion: &[f64],
        r: &[Vec<f64>],
        shift: ShiftKind,
        q_exponents: &[f64],
        vol: VolSpec,
    ) -> Result<Self> {
        let n = mean_reversion.len();
        if n == 0 || n > MAX_FACTORS {
            return Err(Error::InvalidInput(format!(
                "factor count must be in 1..={MAX_FACTORS}, got {n}"
            )));
        }
        if mean_reversion.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidInput(
                "mean reversions must be positive".into(),
            ));
        }
        if r.len() != n || r.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidInput("R must be N x N".into()));
        }
        for i in 0..n {
            if !(r[i][i] >= 0.0) {
                return Err(Error::InvalidInput(
                    "R must have a non-negative diagonal".into(),
                ));
            }
            for k in i + 1..n {
                if r[i][k] != 0.0 {
                    return Err(Error::InvalidInput("R must be lower triangular".into()));
                }
            }
        }
        if q_exponents.len() != n {
            return Err(Error::InvalidInput(
                "q exponents must have N entries".into(),
            ));
        }
        if let ShiftKind::Damped { gamma } = shift {
            if !(gamma >= 0.0) {
                return Err(Error::InvalidInput(
                    "shift damping gamma must be >= 0".into(),
                ));
            }
        }
        if let VolSpec::Stochastic(sv) = &vol {
            if !(sv.mean_reversion > 0.0 && sv.nu0 > 0.0 && sv.initial > 0.0) {
                return Err(Error::InvalidInput(
                    "eta_v, nu0 and initial variance must be positive".into(),
                ));
            }
            if sv.corr_w.len() != n || sv.corr_w.iter().map(|c| c * c).sum::<f64>() > 1.0 {
                return Err(Error::InvalidInput(
                    "vol correlations must have N entries with norm <= 1".into(),
                ));
            }
        }
        let mut a = [0.0; MAX_FACTORS];
        a[..n].copy_from_slice(mean_reversion);
        let mut rm = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        for i in 0..n {
            rm[i][..n].copy_from_slice(&r[i]);
        }
        let mut cov = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        for i in 0..n {
            for k in 0..n {
                cov[i][k] = (0..n).map(|j| rm[i][j] * rm[k][j]).sum();
            }
        }
        let mut q = [0.0; MAX_FACTORS];
        q[..n].copy_from_slice(q_exponents);
        Ok(Self {
            n,
            a,
            r: rm,
            cov,
            shift,
            q_exponents: q,
            vol,
        })
    }

    pub fn factors(&self) -> usize {
        self.n
    }

    pub fn mean_reversion(&self) -> &[f64] {
        &self.a[..self.n]
    }

    pub fn loading(&self) -> &Matrix {
        &self.r
    }

    /// Instantaneous covariance `R R^T` of the `X` diffusion (per unit variance `v`).
    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    pub fn shift(&self) -> ShiftKind {
        self.shift
    }

    pub fn q_exponents(&self) -> &[f64] {
        &self.q_exponents[..self.n]
    }

    pub fn vol(&self) -> &VolSpec {
        &self.vol
    }

    pub fn initial_variance(&self) -> f64 {
        match &self.vol {
            VolSpec::Deterministic => 1.0,
            VolSpec::Stochastic(sv) => sv.initial,
        }
    }

    /// Same model with the factor loading multiplied by `scale`.
    pub fn with_scaled_loading(&self, scale: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.n {
            for k in 0..self.n {
                m.r[i][k] *= scale;
                m.cov[i][k] *= scale * scale;
            }
        }
        m
    }

    /// `g(t,u)_i = exp(-a_i (u - t))`.
    pub fn g(&self, t: f64, u: f64) -> Result<Vector> {
        if t > u {
            return Err(Error::Ordering(format!(
                "g requires t <= u, got t={t}, u={u}"
            )));
        }
        let mut out = [0.0; MAX_FACTORS];
        for i in 0..self.n {
            out[i] = (-self.a[i] * (u - t)).exp();
        }
        Ok(out)
    }

    /// `G_0(t,T0,T1) = int_{T0}^{T1} g(t,s) ds`.
    pub fn g0(&self, t: f64, t0: f64, t1: f64) -> Result<Vector> {
        if !(t <= t0 && t0 <= t1) {
            return Err(Error::Ordering(format!(
                "G0 requires t <= T0 <= T1, got {t}, {t0}, {t1}"
            )));
        }
        Ok(self.g0_unchecked(t, t0, t1))
    }

    pub(crate) fn g0_unchecked(&self, t: f64, t0: f64, t1: f64) -> Vector {
        let mut out = [0.0; MAX_FACTORS];
        for i in 0..self.n {
            out[i] = integrated_decay(self.a[i], t0 - t, t1 - t);
        }
        out
    }

    /// Diagonal of `q(u;T,x)`.
    pub fn q_diag(&self, x: f64) -> Vector {
        let mut out = [0.0; MAX_FACTORS];
        for i in 0..self.n {
            out[i] = (x * self.q_exponents[i]).exp();
        }
        out
    }

    /// `G(t,T0,T1;T,x) = int_{T0}^{T1} q(s;T,x) g(t,s) ds`.
    pub fn g_libor(&self, t: f64, t0: f64, t1: f64, x: f64) -> Result<Vector> {
        let mut g = self.g0(t, t0, t1)?;
        let q = self.q_diag(x);
        for i in 0..self.n {
            g[i] *= q[i];
        }
        Ok(g)
    }

    /// Step coefficients for a fixed step size; reused across paths.
    pub fn step_cache(&self, dt: f64) -> StepCache {
        let mut decay = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        let mut accum = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        for i in 0..self.n {
            for k in 0..self.n {
                let s = self.a[i] + self.a[k];
                decay[i][k] = (-s * dt).exp();
                accum[i][k] = self.cov[i][k] * integrated_decay(s, 0.0, dt);
            }
        }
        StepCache {
            dt,
            sqrt_dt: dt.sqrt(),
            decay,
            accum,
        }
    }

    /// One step of the state: Euler for `X`, exact decay for `Y` holding `v`
    /// fixed over the step, full-truncation Euler for `v`. `dw` and `dz` are
    /// Brownian increments (variance `dt`).
    pub fn evolve_state(
        &self,
        state: &MarkovState,
        dt: f64,
        dw: &[f64],
        dz: f64,
    ) -> Result<MarkovState> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if dw.len() != self.n {
            return Err(Error::InvalidInput("dW must have N entries".into()));
        }
        let cache = self.step_cache(dt);
        let mut w = [0.0; MAX_FACTORS];
        w[..self.n].copy_from_slice(dw);
        Ok(self.evolve_with(&cache, state, &w, dz))
    }

    pub fn evolve_with(
        &self,
        cache: &StepCache,
        s: &MarkovState,
        dw: &Vector,
        dz: f64,
    ) -> MarkovState {
        let n = self.n;
        let dt = cache.dt;
        let vp = s.v.max(0.0);
        let sv = vp.sqrt();
        let mut out = *s;
        out.t = s.t + dt;
        for i in 0..n {
            let mut drift = -self.a[i] * s.x[i];
            let mut diff = 0.0;
            for k in 0..n {
                drift += s.y[i][k];
                diff += self.r[i][k] * dw[k];
            }
            out.x[i] = s.x[i] + drift * dt + sv * diff;
        }
        for i in 0..n {
            for k in 0..n {
                out.y[i][k] = s.y[i][k] * cache.decay[i][k] + vp * cache.accum[i][k];
            }
        }
        out.v = match &self.vol {
            VolSpec::Deterministic => 1.0,
            VolSpec::Stochastic(p) => {
                s.v + p.mean_reversion * (1.0 - vp) * dt + p.vol_of_vol(s.t) * sv * dz
            }
        };
        out
    }
}

/// `int_{s0}^{s1} exp(-a s) ds` with a series branch for tiny `a`.
fn integrated_decay(a: f64, s0: f64, s1: f64) -> f64 {
    if a.abs() < SERIES_THRESHOLD {
        (s1 - s0) - 0.5 * a * (s1 * s1 - s0 * s0)
    } else {
        ((-a * s0).exp() - (-a * s1).exp()) / a
    }
}

#[derive(Debug, Clone)]
pub struct StepCache {
    pub dt: f64,
    pub sqrt_dt: f64,
    decay: Matrix,
    accum: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovState {
    pub t: f64,
    pub x: Vector,
    pub y: Matrix,
    pub v: f64,
}

impl MarkovState {
    pub fn initial(model: &HjmModel) -> Self {
        Self {
            t: 0.0,
            x: [0.0; MAX_FACTORS],
            y: [[0.0; MAX_FACTORS]; MAX_FACTORS],
            v: model.initial_variance(),
        }
    }
}

fn dot(n: usize, a: &Vector, b: &Vector) -> f64 {
    (0..n).map(|i| a[i] * b[i]).sum()
}

/// `G^T (X + Y (g_bond - g/2))`, the exponent shared by all reconstruction formulas.
fn exponent(n: usize, g: &Vector, x: &Vector, y: &Matrix, g_bond: &Vector) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let mut yi = 0.0;
        for k in 0..n {
            yi += y[i][k] * (g_bond[k] - 0.5 * g[k]);
        }
        acc += g[i] * (x[i] + yi);
    }
    acc
}

/// Initial curves plus a Markov state: every curve at time `state.t`.
#[derive(Debug, Clone, Copy)]
pub struct CurveSnapshot<'a> {
    pub model: &'a HjmModel,
    pub curves: &'a MarketCurves,
    pub state: &'a MarkovState,
}

impl<'a> CurveSnapshot<'a> {
    pub fn new(model: &'a HjmModel, curves: &'a MarketCurves, state: &'a MarkovState) -> Self {
        Self {
            model,
            curves,
            state,
        }
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    /// `P_t(T;e)`.
    pub fn bond(&self, maturity: f64) -> Result<f64> {
        let t = self.state.t;
        if maturity < t - 1e-12 {
            return Err(Error::Ordering(format!(
                "bond maturity {maturity} before t={t}"
            )));
        }
        Ok(self.bond_unchecked(maturity.max(t)))
    }

    pub(crate) fn bond_unchecked(&self, maturity: f64) -> f64 {
        let t = self.state.t;
        let n = self.model.n;
        let gb = self.model.g0_unchecked(t, t, maturity);
        let mut quad = 0.0;
        for i in 0..n {
            for k in 0..n {
                quad += gb[i] * self.state.y[i][k] * gb[k];
            }
        }
        let d = &self.curves.discount;
        (d.log_discount(maturity) - d.log_discount(t) - dot(n, &gb, &self.state.x) - 0.5 * quad)
            .exp()
    }

    /// `E_t(T,x;e)`, the par rate of the one-period OIS on `[T-x, T]`.
    pub fn ois_forward(&self, maturity: f64, tenor: f64) -> Result<f64> {
        let t = self.state.t;
        if maturity - tenor < t - 1e-12 {
            return Err(Error::Ordering(format!(
                "OIS period start {} before t={t}",
                maturity - tenor
            )));
        }
        let n = self.model.n;
        let e0 = crate::termstructures::par_ois_rate(&self.curves.discount, maturity, tenor)?;
        let delta = self.model.g0_unchecked(t, maturity - tenor, maturity);
        let gb = self.model.g0_unchecked(t, t, maturity);
        let c = exponent(n, &delta, &self.state.x, &self.state.y, &gb);
        Ok((1.0 / tenor + e0) * c.exp() - 1.0 / tenor)
    }

    /// `F_t(T,x;e)` from the shifted-lognormal reconstruction.
    pub fn libor_forward(&self, maturity: f64, tenor: f64) -> Result<f64> {
        let f0 = self.curves.forward(tenor)?.value(maturity)?;
        let t = self.state.t;
        if maturity - tenor < t - 1e-12 {
            return Err(Error::Ordering(format!(
                "Libor reset {} before t={t}",
                maturity - tenor
            )));
        }
        Ok(self.libor_forward_from(f0, maturity, tenor))
    }

    pub(crate) fn libor_forward_from(&self, f0: f64, maturity: f64, tenor: f64) -> f64 {
        let t = self.state.t;
        let n = self.model.n;
        let kappa = self.model.shift.kappa(tenor);
        let mut g = self.model.g0_unchecked(t, maturity - tenor, maturity);
        let q = self.model.q_diag(tenor);
        for i in 0..n {
            g[i] *= q[i];
        }
        let gb = self.model.g0_unchecked(t, t, maturity);
        let c = exponent(n, &g, &self.state.x, &self.state.y, &gb);
        (kappa + f0) * c.exp() - kappa
    }

    /// OIS instantaneous forward `f_t(T)`.
    pub fn instantaneous_forward(&self, maturity: f64) -> Result<f64> {
        let t = self.state.t;
        let n = self.model.n;
        let g = self.model.g(t, maturity)?;
        let gb = self.model.g0_unchecked(t, t, maturity);
        let mut acc = self.curves.discount.instantaneous_forward(maturity)?;
        for i in 0..n {
            let mut yi = 0.0;
            for k in 0..n {
                yi += self.state.y[i][k] * gb[k];
            }
            acc += g[i] * (self.state.x[i] + yi);
        }
        Ok(acc)
    }

    /// Overnight rate `e_t = f_0(t) + sum_i X^i_t`.
    pub fn short_rate(&self) -> f64 {
        self.curves.discount.forward_unchecked(self.state.t)
            + self.state.x[..self.model.n].iter().sum::<f64>()
    }

    /// Time-normalised difference of OIS/Libor log-ratios between two tenors.
    pub fn beta(&self, x1: f64, x2: f64) -> Result<f64> {
        if !(x1 < x2) {
            return Err(Error::InvalidInput(format!(
                "beta requires x1 < x2, got {x1}, {x2}"
            )));
        }
        let t = self.state.t;
        let term = |x: f64| -> Result<f64> {
            let e = self.ois_forward(t + x, x)?;
            let f = self.libor_forward(t + x, x)?;
            Ok(((1.0 / x + e) / (1.0 / x + f)).ln() / x)
        };
        Ok(term(x2)? - term(x1)?)
    }
}

/// Lower Cholesky factor of the covariance built from factor vols and a correlation matrix.
pub fn loading_from_vols(vols: &[f64], corr: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = vols.len();
    if corr.len() != n || corr.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(
            "factor correlation must be N x N".into(),
        ));
    }
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            cov[i][k] = vols[i] * vols[k] * corr[i][k];
        }
    }
    cholesky(&cov)
        .ok_or_else(|| Error::InvalidInput("factor covariance is not positive definite".into()))
}

pub(crate) fn cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if d < -1e-14 {
                    return None;
                }
                l[i][j] = d.max(0.0).sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = (m[i][j] - s) / l[j][j];
            } else if (m[i][j] - s).abs() > 1e-12 {
                return None;
            }
        }
    }
    Some(l)
}

/// Model parameters in calibration-friendly form; `build` produces the model.
#[derive(Debug, Clone, PartialEq)]
pub struct HjmParams {
    pub family: ModelFamily,
    pub mean_reversion: Vec<f64>,
    pub factor_vols: Vec<f64>,
    pub factor_corr: Vec<Vec<f64>>,
    pub gamma: f64,
    pub q_exponents: Vec<f64>,
    pub stoch_vol: Option<StochasticVol>,
}

impl HjmParams {
    pub fn build(&self) -> Result<HjmModel> {
        let n = self.mean_reversion.len();
        if self.factor_vols.len() != n {
            return Err(Error::InvalidInput(
                "factor_vols must have N entries".into(),
            ));
        }
        let r = loading_from_vols(&self.factor_vols, &self.factor_corr)?;
        let zeros = vec![0.0; n];
        let (shift, q, vol) = match self.family {
            ModelFamily::HullWhite => (
                ShiftKind::InverseTenor,
                zeros.clone(),
                VolSpec::Deterministic,
            ),
            ModelFamily::Cheyette => (ShiftKind::InverseTenor, zeros.clone(), self.stochastic()?),
            ModelFamily::MoreniPallavicini => (
                ShiftKind::Damped { gamma: self.gamma },
                self.q_exponents.clone(),
                self.stochastic()?,
            ),
        };
        HjmModel::new(&self.mean_reversion, &r, shift, &q, vol)
    }

    fn stochastic(&self) -> Result<VolSpec> {
        self.stoch_vol
            .clone()
            .map(VolSpec::Stochastic)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} needs stochastic-vol parameters",
                    self.family.short_name()
                ))
            })
    }

    /// Synthetic two-factor parameter sets used as experiment defaults.
    pub fn preset(family: ModelFamily) -> Self {
        let sv = StochasticVol {
            mean_reversion: 1.0,
            nu0: 0.7,
            nu1: 1.3,
            nu2: 0.5,
            initial: 1.0,
            corr_w: vec![-0.5, -0.3],
        };
        let base = HjmParams {
            family,
            mean_reversion: vec![0.05, 0.4],
            factor_vols: vec![0.0075, 0.0060],
            factor_corr: vec![vec![1.0, -0.4], vec![-0.4, 1.0]],
            gamma: 0.0,
            q_exponents: vec![0.0, 0.0],
            stoch_vol: None,
        };
        match family {
            ModelFamily::HullWhite => base,
            ModelFamily::Cheyette => HjmParams {
                stoch_vol: Some(sv),
                ..base
            },
            ModelFamily::MoreniPallavicini => HjmParams {
                stoch_vol: Some(sv),
                gamma: 0.1,
                q_exponents: vec![0.6, -0.6],
                ..base
            },
        }
    }
}
