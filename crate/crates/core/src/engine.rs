//! Correlated Monte Carlo over a global time grid.
//!
//! Driver order is `(W_1..W_N, Z_v, Z^I, Z^C)`. Each path owns a ChaCha8
//! stream selected by its index, so a path is identical whatever the
//! scheduling. Several credit-correlation scenarios can share one market path:
//! they differ only in the last two rows of the Cholesky factor and reuse the
//! same normal draws, which gives common random numbers across a sweep.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::credit::{self, CirPP, CirParams, CreditPair};
use crate::error::{Error, Result};
use crate::hjm::{HjmModel, MarkovState, StepCache, VolSpec, MAX_FACTORS};
use crate::termstructures::MarketCurves;

pub const GRID_EPS: f64 = 1e-9;
pub const WORKERS_ENV: &str = "HJMX_WORKERS";

/// Simulation dates. Base nodes carry the valuation integrals; each base node
/// `u` also has `u + delta` on the grid for cure-period valuation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    base: Vec<usize>,
    shifted: Vec<usize>,
    delta: f64,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::InvalidInput("grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "grid must be strictly increasing".into(),
            ));
        }
        let base: Vec<usize> = (0..times.len()).collect();
        Ok(Self {
            shifted: base.clone(),
            base,
            times,
            delta: 0.0,
        })
    }

    pub fn uniform(horizon: f64, step: f64) -> Result<Self> {
        Self::build(horizon, step, &[], 0.0)
    }

    /// Uniform `step` nodes on `[0, horizon]` plus `events`, then `u + delta` for every base node.
    pub fn build(horizon: f64, step: f64, events: &[f64], delta: f64) -> Result<Self> {
        if !(horizon > 0.0 && step > 0.0) {
            return Err(Error::InvalidInput(
                "grid horizon and step must be positive".into(),
            ));
        }
        if !(delta >= 0.0) {
            return Err(Error::InvalidInput(
                "cure period must be nonnegative".into(),
            ));
        }
        let n = (horizon / step - GRID_EPS).ceil() as usize;
        let mut base: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        base.push(horizon);
        base.extend(
            events
                .iter()
                .copied()
                .filter(|e| *e >= 0.0 && *e <= horizon + GRID_EPS),
        );
        let base = merge(base);
        let mut all = base.clone();
        if delta > 0.0 {
            all.extend(base.iter().map(|u| u + delta));
        }
        let times = merge(all);
        let locate = |t: f64| {
            times
                .iter()
                .position(|s| (s - t).abs() < GRID_EPS)
                .expect("node inserted")
        };
        let base_idx: Vec<usize> = base.iter().map(|u| locate(*u)).collect();
        let shifted = base.iter().map(|u| locate(u + delta)).collect();
        Ok(Self {
            times,
            base: base_idx,
            shifted,
            delta,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Indices of the base nodes, increasing.
    pub fn base(&self) -> &[usize] {
        &self.base
    }

    /// Index of `t_b + delta` for the `b`-th base node.
    pub fn shifted(&self, b: usize) -> usize {
        self.shifted[b]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = self.times.partition_point(|s| *s < t - GRID_EPS);
        if k < self.times.len() && (self.times[k] - t).abs() < GRID_EPS {
            Ok(k)
        } else {
            Err(Error::MissingGridNode { t })
        }
    }
}

fn merge(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for t in v {
        match out.last() {
            Some(last) if (t - last).abs() < GRID_EPS => {}
            _ => out.push(t),
        }
    }
    out
}

/// Full correlation matrix over `(W_1..W_N, Z_v, Z^I, Z^C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    matrix: Vec<Vec<f64>>,
}

/// Experiment knobs from which a correlation matrix is assembled; index 0 is
/// the investor, index 1 the counterparty.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationKnobs {
    /// Correlation of each intensity driver with the overnight-rate driver.
    pub rate_credit: [f64; 2],
    /// Correlation of each intensity driver with the driver of the basis `beta`.
    pub basis_credit: [f64; 2],
    /// Correlation of the idiosyncratic parts of the two intensity drivers.
    pub credit_credit: f64,
    /// Tenors `(x1, x2)` defining the basis.
    pub basis_tenors: (f64, f64),
}

impl Default for CorrelationKnobs {
    fn default() -> Self {
        Self {
            rate_credit: [0.0; 2],
            basis_credit: [0.0; 2],
            credit_credit: 0.0,
            basis_tenors: (0.25, 0.5),
        }
    }
}

impl CorrelationSpec {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        if matrix.iter().any(|r| r.len() != n) {
            return Err(Error::Correlation("matrix must be square".into()));
        }
        for i in 0..n {
            if (matrix[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::Correlation(format!(
                    "diagonal entry {i} is {} not 1",
                    matrix[i][i]
                )));
            }
            for k in 0..i {
                if (matrix[i][k] - matrix[k][i]).abs() > 1e-12 {
                    return Err(Error::Correlation(format!(
                        "entries ({i},{k}) and ({k},{i}) differ"
                    )));
                }
                if !(matrix[i][k].abs() <= 1.0) {
                    return Err(Error::Correlation(format!(
                        "entry ({i},{k}) outside [-1,1]"
                    )));
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = vec![vec![0.0; dim]; dim];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { matrix: m }
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    /// Builds the matrix from experiment knobs. The `W` block is the identity
    /// (factor correlation lives in the loading `R`). Each intensity driver is
    /// `Z^j = c_j . W + sqrt(1 - |c_j|^2) xi_j`, with `c_j` chosen in the span of
    /// the rate and basis directions so that its correlations with both equal
    /// the knobs. A null basis direction (no stochastic basis) carries no loading.
    pub fn from_knobs(model: &HjmModel, knobs: &CorrelationKnobs) -> Result<Self> {
        let n = model.factors();
        let dim = n + 3;
        let rate = rate_direction(model);
        let basis = basis_direction(model, knobs.basis_tenors)?;
        let mut loads = [[0.0; MAX_FACTORS]; 2];
        for j in 0..2 {
            let c = solve_loading(
                n,
                &rate,
                basis.as_ref(),
                knobs.rate_credit[j],
                knobs.basis_credit[j],
            )?;
            let norm2: f64 = c[..n].iter().map(|v| v * v).sum();
            if norm2 > 1.0 + 1e-12 {
                return Err(Error::Correlation(format!(
                    "credit driver {j} loading has norm {} > 1 (rate {}, basis {})",
                    norm2.sqrt(),
                    knobs.rate_credit[j],
                    knobs.basis_credit[j]
                )));
            }
            loads[j] = c;
        }
        let rho_v: Vec<f64> = match model.vol() {
            VolSpec::Deterministic => vec![0.0; n],
            VolSpec::Stochastic(sv) => sv.corr_w.clone(),
        };
        let mut m = CorrelationSpec::identity(dim).matrix;
        let mut set = |i: usize, k: usize, v: f64| {
            m[i][k] = v;
            m[k][i] = v;
        };
        for k in 0..n {
            set(n, k, rho_v[k]);
            set(n + 1, k, loads[0][k]);
            set(n + 2, k, loads[1][k]);
        }
        let dotv = |c: &[f64; MAX_FACTORS]| (0..n).map(|k| c[k] * rho_v[k]).sum::<f64>();
        set(n + 1, n, dotv(&loads[0]));
        set(n + 2, n, dotv(&loads[1]));
        let idio = |c: &[f64; MAX_FACTORS]| {
            (1.0 - c[..n].iter().map(|v| v * v).sum::<f64>())
                .max(0.0)
                .sqrt()
        };
        let cross: f64 = (0..n).map(|k| loads[0][k] * loads[1][k]).sum();
        set(
            n + 2,
            n + 1,
            cross + idio(&loads[0]) * idio(&loads[1]) * knobs.credit_credit,
        );
        Self::new(m)
    }
}

fn normalize(n: usize, v: &mut [f64; MAX_FACTORS]) -> f64 {
    let norm = v[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v[..n].iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// `R^T c`, the Brownian direction of `d(c . X)`.
fn project(model: &HjmModel, c: &[f64; MAX_FACTORS]) -> [f64; MAX_FACTORS] {
    let n = model.factors();
    let r = model.loading();
    let mut out = [0.0; MAX_FACTORS];
    for k in 0..n {
        out[k] = (0..n).map(|i| r[i][k] * c[i]).sum();
    }
    out
}

/// Unit Brownian direction driving the overnight rate `e_t = f_0(t) + sum X`.
pub fn rate_direction(model: &HjmModel) -> [f64; MAX_FACTORS] {
    let mut ones = [0.0; MAX_FACTORS];
    ones[..model.factors()].fill(1.0);
    let mut d = project(model, &ones);
    normalize(model.factors(), &mut d);
    d
}

/// Unit Brownian direction driving `beta_t(x1, x2)`, or `None` when the basis
/// has no diffusion (all `q` exponents zero).
pub fn basis_direction(model: &HjmModel, tenors: (f64, f64)) -> Result<Option<[f64; MAX_FACTORS]>> {
    let (x1, x2) = tenors;
    if !(x1 > 0.0 && x2 > x1) {
        return Err(Error::InvalidInput(format!(
            "basis tenors must satisfy 0 < x1 < x2, got {x1}, {x2}"
        )));
    }
    let n = model.factors();
    let g1 = model.g0(0.0, 0.0, x1)?;
    let g2 = model.g0(0.0, 0.0, x2)?;
    let q1 = model.q_diag(x1);
    let q2 = model.q_diag(x2);
    let mut c = [0.0; MAX_FACTORS];
    for i in 0..n {
        c[i] = g2[i] * (1.0 - q2[i]) / x2 - g1[i] * (1.0 - q1[i]) / x1;
    }
    let mut d = project(model, &c);
    if normalize(n, &mut d) < 1e-14 {
        return Ok(None);
    }
    Ok(Some(d))
}

fn solve_loading(
    n: usize,
    rate: &[f64; MAX_FACTORS],
    basis: Option<&[f64; MAX_FACTORS]>,
    rho_r: f64,
    rho_b: f64,
) -> Result<[f64; MAX_FACTORS]> {
    let mut c = [0.0; MAX_FACTORS];
    match basis {
        None => {
            for k in 0..n {
                c[k] = rho_r * rate[k];
            }
        }
        Some(b) => {
            let g: f64 = (0..n).map(|k| rate[k] * b[k]).sum();
            let det = 1.0 - g * g;
            if det < 1e-10 {
                if (rho_b - g * rho_r).abs() > 1e-12 {
                    return Err(Error::Correlation(
                        "rate and basis directions coincide".into(),
                    ));
                }
                for k in 0..n {
                    c[k] = rho_r * rate[k];
                }
            } else {
                let a = (rho_r - g * rho_b) / det;
                let bb = (rho_b - g * rho_r) / det;
                for k in 0..n {
                    c[k] = a * rate[k] + bb * b[k];
                }
            }
        }
    }
    Ok(c)
}

/// Lower Cholesky factor of a (possibly repaired) correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: Vec<Vec<f64>>,
    /// Frobenius distance between input and repaired matrix when a repair happened.
    pub repair_distance: Option<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Cholesky factor; indefinite inputs are repaired by clipping negative
/// eigenvalues and rescaling to unit diagonal.
pub fn build_correlation(spec: &CorrelationSpec) -> Result<CholeskyFactor> {
    if let Some(l) = strict_cholesky(spec.matrix()) {
        return Ok(CholeskyFactor {
            lower: l,
            repair_distance: None,
        });
    }
    let n = spec.dim();
    let a = DMatrix::from_fn(n, n, |i, k| spec.matrix[i][k]);
    let eig = SymmetricEigen::new(a.clone());
    let clipped = eig.eigenvalues.map(|v| v.max(1e-12));
    let mut b = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..n).map(|i| b[(i, i)].sqrt()).collect();
    for i in 0..n {
        for k in 0..n {
            b[(i, k)] /= d[i] * d[k];
        }
        b[(i, i)] = 1.0;
    }
    let b = (&b + b.transpose()) * 0.5;
    let distance = (&b - &a).norm();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|k| b[(i, k)]).collect())
        .collect();
    let l = crate::hjm::cholesky(&rows).ok_or_else(|| {
        Error::Correlation("matrix could not be repaired to positive semidefinite".into())
    })?;
    Ok(CholeskyFactor {
        lower: l,
        repair_distance: Some(distance),
    })
}

/// Cholesky without tolerance for negative pivots beyond rounding.
fn strict_cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if d < -1e-13 {
                    return None;
                }
                l[i][i] = d.max(0.0).sqrt();
            } else if l[j][j] > 1e-10 {
                l[i][j] = (m[i][j] - s) / l[j][j];
            } else if (m[i][j] - s).abs() > 1e-10 {
                return None;
            }
        }
    }
    Some(l)
}

/// Market part of a path, indexed by grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub states: Vec<MarkovState>,
    /// Overnight rate `e_t`.
    pub short_rate: Vec<f64>,
    /// `int_0^t e_s ds`; `D(0,t;e) = exp(-log_numeraire)`.
    pub log_numeraire: Vec<f64>,
}

/// Intensities of one credit scenario, indexed by grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditPath {
    /// `lambda^I_t` (right-continuous in the shift).
    pub lambda_i: Vec<f64>,
    pub lambda_c: Vec<f64>,
    /// `int_0^t lambda`.
    pub hazard_i: Vec<f64>,
    pub hazard_c: Vec<f64>,
}

impl CreditPath {
    fn with_len(n: usize) -> Self {
        Self {
            lambda_i: vec![0.0; n],
            lambda_c: vec![0.0; n],
            hazard_i: vec![0.0; n],
            hazard_c: vec![0.0; n],
        }
    }
}

/// Reusable per-worker path storage.
#[derive(Debug, Clone)]
pub struct PathBuffer {
    pub market: MarketPath,
    pub credit: Vec<CreditPath>,
    y: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
struct Step {
    cache: StepCache,
    decay: [f64; 2],
}

/// Precomputed simulation plan for one model, curve set, credit pair and grid.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: HjmModel,
    credit: CreditPair,
    grid: TimeGrid,
    market_rows: Vec<Vec<f64>>,
    credit_rows: Vec<[Vec<f64>; 2]>,
    steps: Vec<Step>,
    neg_log_p0: Vec<f64>,
    f0: Vec<f64>,
    psi: Vec<[f64; 2]>,
    psi_int: Vec<[f64; 2]>,
}

impl Simulator {
    /// `factors` holds one Cholesky factor per credit-correlation scenario;
    /// all must agree on the market block.
    pub fn new(
        model: &HjmModel,
        curves: &MarketCurves,
        credit: &CreditPair,
        grid: TimeGrid,
        factors: &[CholeskyFactor],
    ) -> Result<Self> {
        let n = model.factors();
        let dim = n + 3;
        if factors.is_empty() {
            return Err(Error::InvalidInput(
                "at least one correlation scenario required".into(),
            ));
        }
        for f in factors {
            if f.dim() != dim {
                return Err(Error::Correlation(format!(
                    "expected dimension {dim}, got {}",
                    f.dim()
                )));
            }
        }
        let market_rows: Vec<Vec<f64>> = factors[0].lower[..n + 1].to_vec();
        for f in &factors[1..] {
            if f.lower[..n + 1] != market_rows[..] {
                return Err(Error::Correlation(
                    "scenarios must share the market block".into(),
                ));
            }
        }
        credit.investor.params.validate()?;
        credit.counterparty.params.validate()?;
        let credit_rows = factors
            .iter()
            .map(|f| [f.lower[n + 1].clone(), f.lower[n + 2].clone()])
            .collect();
        let t = grid.times();
        let steps = t
            .windows(2)
            .map(|w| {
                let dt = w[1] - w[0];
                Step {
                    cache: model.step_cache(dt),
                    decay: [
                        -(-credit.investor.params.zeta * dt).exp_m1(),
                        -(-credit.counterparty.params.zeta * dt).exp_m1(),
                    ],
                }
            })
            .collect();
        let neg_log_p0 = t
            .iter()
            .map(|s| -curves.discount.log_discount(*s))
            .collect();
        let f0 = t
            .iter()
            .map(|s| curves.discount.forward_unchecked(*s))
            .collect();
        let psi = t
            .iter()
            .map(|s| {
                [
                    credit.investor.shift.value(*s),
                    credit.counterparty.shift.value(*s),
                ]
            })
            .collect();
        let psi_int = t
            .iter()
            .map(|s| {
                [
                    credit.investor.shift.integral(*s),
                    credit.counterparty.shift.integral(*s),
                ]
            })
            .collect();
        Ok(Self {
            model: model.clone(),
            credit: credit.clone(),
            grid,
            market_rows,
            credit_rows,
            steps,
            neg_log_p0,
            f0,
            psi,
            psi_int,
        })
    }

    /// Rates-only simulator. Draws the same normals as a full run, so market
    /// paths coincide with those of any credit setup under the same seed.
    pub fn market_only(model: &HjmModel, curves: &MarketCurves, grid: TimeGrid) -> Result<Self> {
        let spec = CorrelationSpec::from_knobs(model, &CorrelationKnobs::default())?;
        let factor = build_correlation(&spec)?;
        let dummy = CirPP::unshifted(CirParams {
            zeta: 1.0,
            mu: 1e-3,
            nu: 0.0,
            y0: 1e-3,
        });
        let credit = CreditPair {
            investor: dummy.clone(),
            counterparty: dummy,
        };
        let mut sim = Self::new(model, curves, &credit, grid, &[factor])?;
        sim.credit_rows.clear();
        Ok(sim)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &HjmModel {
        &self.model
    }

    pub fn credit(&self) -> &CreditPair {
        &self.credit
    }

    pub fn scenarios(&self) -> usize {
        self.credit_rows.len()
    }

    pub fn buffer(&self) -> PathBuffer {
        let m = self.grid.len();
        let init = MarkovState::initial(&self.model);
        PathBuffer {
            market: MarketPath {
                states: vec![init; m],
                short_rate: vec![0.0; m],
                log_numeraire: vec![0.0; m],
            },
            credit: (0..self.scenarios())
                .map(|_| CreditPath::with_len(m))
                .collect(),
            y: vec![[0.0; 2]; self.scenarios()],
        }
    }

    /// Simulates path `index` of the run seeded by `seed` into `buf`.
    pub fn fill_path(&self, seed: u64, index: u64, buf: &mut PathBuffer) {
        let n = self.model.factors();
        let dim = n + 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let params = [self.credit.investor.params, self.credit.counterparty.params];
        let mut z = [0.0f64; MAX_FACTORS + 3];

        let mut state = MarkovState::initial(&self.model);
        buf.market.states[0] = state;
        buf.market.short_rate[0] = self.f0[0];
        buf.market.log_numeraire[0] = 0.0;
        let mut sum_x_prev = 0.0;
        let mut int_x = 0.0;
        for (s, cp) in buf.credit.iter_mut().enumerate() {
            buf.y[s] = [params[0].y0, params[1].y0];
            cp.lambda_i[0] = params[0].y0 + self.psi[0][0];
            cp.lambda_c[0] = params[1].y0 + self.psi[0][1];
            cp.hazard_i[0] = 0.0;
            cp.hazard_c[0] = 0.0;
        }
        let mut int_y = vec![[0.0f64; 2]; self.scenarios()];

        for (k, step) in self.steps.iter().enumerate() {
            let sq = step.cache.sqrt_dt;
            let dt = step.cache.dt;
            for zi in z[..dim].iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let mut dw = [0.0; MAX_FACTORS];
            for i in 0..n {
                let row = &self.market_rows[i];
                dw[i] = sq * (0..=i).map(|j| row[j] * z[j]).sum::<f64>();
            }
            let vrow = &self.market_rows[n];
            let dz = sq * (0..=n).map(|j| vrow[j] * z[j]).sum::<f64>();
            state = self.model.evolve_with(&step.cache, &state, &dw, dz);
            let sum_x: f64 = state.x[..n].iter().sum();
            int_x += 0.5 * dt * (sum_x_prev + sum_x);
            sum_x_prev = sum_x;
            buf.market.states[k + 1] = state;
            buf.market.short_rate[k + 1] = self.f0[k + 1] + sum_x;
            buf.market.log_numeraire[k + 1] = self.neg_log_p0[k + 1] + int_x;

            for (s, rows) in self.credit_rows.iter().enumerate() {
                let cp = &mut buf.credit[s];
                for j in 0..2 {
                    let row = &rows[j];
                    let dzj = sq * (0..dim).map(|m| row[m] * z[m]).sum::<f64>();
                    let y_prev = buf.y[s][j];
                    let y = credit::step_with(&params[j], step.decay[j], y_prev, dzj);
                    buf.y[s][j] = y;
                    int_y[s][j] += 0.5 * dt * (y_prev.max(0.0) + y.max(0.0));
                    let lambda = y.max(0.0) + self.psi[k + 1][j];
                    let hazard = self.psi_int[k + 1][j] + int_y[s][j];
                    if j == 0 {
                        cp.lambda_i[k + 1] = lambda;
                        cp.hazard_i[k + 1] = hazard;
                    } else {
                        cp.lambda_c[k + 1] = lambda;
                        cp.hazard_c[k + 1] = hazard;
                    }
                }
            }
        }
    }

    /// Applies `f` to every path in index order; the output order and values
    /// do not depend on the number of worker threads.
    pub fn map_paths<T, F>(&self, n_paths: usize, seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, &PathBuffer) -> T + Sync + Send,
    {
        let run = || {
            (0..n_paths as u64)
                .into_par_iter()
                .map_init(
                    || self.buffer(),
                    |buf, i| {
                        self.fill_path(seed, i, buf);
                        f(i, buf)
                    },
                )
                .collect::<Vec<T>>()
        };
        with_workers(run)
    }

    /// Stores every path of the first scenario. Memory grows with
    /// `n_paths * grid.len()`; use `map_paths` for production runs.
    pub fn simulate(&self, n_paths: usize, seed: u64) -> Result<PathSet> {
        if n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        let bytes = n_paths as f64
            * self.grid.len() as f64
            * (std::mem::size_of::<MarkovState>() + 6 * 8) as f64;
        if bytes > 4e9 {
            return Err(Error::Numerical {
                module: "engine",
                detail: format!(
                    "path storage of {:.1} GB exceeds the in-memory limit",
                    bytes / 1e9
                ),
            });
        }
        let paths = self.map_paths(n_paths, seed, |_, b| {
            (b.market.clone(), b.credit[0].clone())
        });
        let (market, credit) = paths.into_iter().unzip();
        Ok(PathSet {
            grid: self.grid.clone(),
            seed,
            factors: self.model.factors(),
            market,
            credit,
        })
    }
}

/// Runs `f` on a pool sized by `HJMX_WORKERS` when set, else on the global pool.
pub fn with_workers<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Convenience wrapper: one correlation scenario, all paths stored.
pub fn simulate(
    model: &HjmModel,
    curves: &MarketCurves,
    credit: &CreditPair,
    correlation: &CholeskyFactor,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    Simulator::new(
        model,
        curves,
        credit,
        grid,
        std::slice::from_ref(correlation),
    )?
    .simulate(n_paths, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub grid: TimeGrid,
    pub seed: u64,
    pub factors: usize,
    pub market: Vec<MarketPath>,
    pub credit: Vec<CreditPath>,
}

pub const PATHSET_MAGIC: &[u8; 8] = b"HJMXPATH";
pub const PATHSET_VERSION: u32 = 1;

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.market.len()
    }

    /// Debug dump: magic, version (u32), N (u32), n_paths (u64), n_nodes (u64),
    /// the grid, then per path and node `X (N), Y (N*N), v, e, int e,
    /// lambda^I, lambda^C, int lambda^I, int lambda^C`; little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.factors;
        w.write_all(PATHSET_MAGIC)?;
        w.write_all(&PATHSET_VERSION.to_le_bytes())?;
        w.write_all(&(n as u32).to_le_bytes())?;
        w.write_all(&(self.n_paths() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        for t in self.grid.times() {
            w.write_all(&t.to_le_bytes())?;
        }
        for (m, c) in self.market.iter().zip(&self.credit) {
            for k in 0..self.grid.len() {
                let s = &m.states[k];
                let mut row: Vec<f64> = s.x[..n].to_vec();
                for i in 0..n {
                    row.extend_from_slice(&s.y[i][..n]);
                }
                row.extend_from_slice(&[
                    s.v,
                    m.short_rate[k],
                    m.log_numeraire[k],
                    c.lambda_i[k],
                    c.lambda_c[k],
                    c.hazard_i[k],
                    c.hazard_c[k],
                ]);
                for v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}
