//! Swap definitions and pathwise valuation of remaining cash flows.
//!
//! Libor coupons fix at `L_{T-x}(T) := F_{T-x}(T,x;e)`, the reconstructed
//! forward at the reset date. Overnight coupons compound continuously,
//! paying `exp(int_s^T e) - 1` at the period end.

use crate::engine::{MarketPath, TimeGrid, GRID_EPS};
use crate::error::{Error, Result};
use crate::hjm::{CurveSnapshot, HjmModel, MarkovState, Vector, MAX_FACTORS};
use crate::termstructures::MarketCurves;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeKind {
    Ois,
    Irs,
    Basis,
}

/// `Receiver` receives the fixed leg (OIS, IRS) or the short-tenor leg (basis).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Receiver,
    Payer,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Receiver => 1.0,
            Direction::Payer => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Receiver => Direction::Payer,
            Direction::Payer => Direction::Receiver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LegKind {
    Fixed { rate: f64 },
    Libor { tenor: f64, spread: f64 },
    Overnight { spread: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub kind: LegKind,
    /// `(start, end)`: reset at the start, payment at the end.
    pub periods: Vec<(f64, f64)>,
    /// `+1` received, `-1` paid.
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trade {
    pub kind: TradeKind,
    pub notional: f64,
    pub direction: Direction,
    pub start: f64,
    pub maturity: f64,
    pub legs: Vec<Leg>,
}

/// Periods `start + (i-1) x .. start + i x` covering `[start, end]` exactly.
pub fn aligned_periods(start: f64, end: f64, x: f64) -> Result<Vec<(f64, f64)>> {
    if !(x > 0.0 && end > start && start >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "bad schedule [{start}, {end}] step {x}"
        )));
    }
    let n = ((end - start) / x).round();
    if ((end - start) - n * x).abs() > GRID_EPS || n < 1.0 {
        return Err(Error::InvalidInput(format!(
            "length {} is not a multiple of {x}",
            end - start
        )));
    }
    let n = n as usize;
    Ok((1..=n)
        .map(|i| {
            let s = start + (i - 1) as f64 * x;
            let e = if i == n { end } else { start + i as f64 * x };
            (s, e)
        })
        .collect())
}

impl Trade {
    pub fn ois(
        maturity: f64,
        rate: f64,
        period: f64,
        notional: f64,
        direction: Direction,
    ) -> Result<Self> {
        Self::ois_forward(0.0, maturity, rate, period, notional, direction)
    }

    pub fn ois_forward(
        start: f64,
        end: f64,
        rate: f64,
        period: f64,
        notional: f64,
        direction: Direction,
    ) -> Result<Self> {
        let p = aligned_periods(start, end, period)?;
        let s = direction.sign();
        Ok(Self {
            kind: TradeKind::Ois,
            notional,
            direction,
            start,
            maturity: end,
            legs: vec![
                Leg {
                    kind: LegKind::Fixed { rate },
                    periods: p.clone(),
                    sign: s,
                },
                Leg {
                    kind: LegKind::Overnight { spread: 0.0 },
                    periods: p,
                    sign: -s,
                },
            ],
        })
    }

    pub fn irs(
        maturity: f64,
        rate: f64,
        fixed_period: f64,
        libor_tenor: f64,
        notional: f64,
        direction: Direction,
    ) -> Result<Self> {
        Self::irs_forward(
            0.0,
            maturity,
            rate,
            fixed_period,
            libor_tenor,
            notional,
            direction,
        )
    }

    pub fn irs_forward(
        start: f64,
        end: f64,
        rate: f64,
        fixed_period: f64,
        libor_tenor: f64,
        notional: f64,
        direction: Direction,
    ) -> Result<Self> {
        let s = direction.sign();
        Ok(Self {
            kind: TradeKind::Irs,
            notional,
            direction,
            start,
            maturity: end,
            legs: vec![
                Leg {
                    kind: LegKind::Fixed { rate },
                    periods: aligned_periods(start, end, fixed_period)?,
                    sign: s,
                },
                Leg {
                    kind: LegKind::Libor {
                        tenor: libor_tenor,
                        spread: 0.0,
                    },
                    periods: aligned_periods(start, end, libor_tenor)?,
                    sign: -s,
                },
            ],
        })
    }

    /// Short-tenor Libor plus `spread` against long-tenor Libor.
    pub fn basis(
        maturity: f64,
        short_tenor: f64,
        long_tenor: f64,
        spread: f64,
        notional: f64,
        direction: Direction,
    ) -> Result<Self> {
        if !(short_tenor < long_tenor) {
            return Err(Error::InvalidInput(
                "basis swap needs short tenor < long tenor".into(),
            ));
        }
        let s = direction.sign();
        Ok(Self {
            kind: TradeKind::Basis,
            notional,
            direction,
            start: 0.0,
            maturity,
            legs: vec![
                Leg {
                    kind: LegKind::Libor {
                        tenor: short_tenor,
                        spread,
                    },
                    periods: aligned_periods(0.0, maturity, short_tenor)?,
                    sign: s,
                },
                Leg {
                    kind: LegKind::Libor {
                        tenor: long_tenor,
                        spread: 0.0,
                    },
                    periods: aligned_periods(0.0, maturity, long_tenor)?,
                    sign: -s,
                },
            ],
        })
    }

    pub fn flipped(&self) -> Self {
        let mut t = self.clone();
        t.direction = t.direction.flip();
        for leg in &mut t.legs {
            leg.sign = -leg.sign;
        }
        t
    }

    /// All reset and payment dates, sorted and deduplicated.
    pub fn event_dates(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .legs
            .iter()
            .flat_map(|l| l.periods.iter().flat_map(|(s, e)| [*s, *e]))
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < GRID_EPS);
        v
    }

    /// Flattened cash flows in leg order.
    pub fn flows(&self) -> Vec<Flow> {
        let mut out = Vec::new();
        for leg in &self.legs {
            for &(s, e) in &leg.periods {
                out.push(Flow {
                    reset: s,
                    pay: e,
                    accrual: e - s,
                    kind: leg.kind,
                    weight: leg.sign * self.notional,
                });
            }
        }
        out
    }

    /// Time-0 value with perfect collateral at the overnight rate, off the initial curves.
    pub fn price_perfect_collateral(&self, curves: &MarketCurves) -> Result<f64> {
        let p = |t: f64| curves.discount.discount(t);
        let mut v = 0.0;
        for f in self.flows() {
            v += f.weight
                * match f.kind {
                    LegKind::Fixed { rate } => f.accrual * rate * p(f.pay),
                    LegKind::Libor { tenor, spread } => {
                        f.accrual * (curves.forward(tenor)?.value(f.pay)? + spread) * p(f.pay)
                    }
                    LegKind::Overnight { spread } => {
                        p(f.reset) - p(f.pay) + spread * f.accrual * p(f.pay)
                    }
                };
        }
        Ok(v)
    }

    /// Value at `snap.time()` of flows paid after it. `log_numeraire` is
    /// `int_0^u e` on the path; fixings must hold every reset before `u`.
    pub fn value_at(
        &self,
        snap: &CurveSnapshot,
        fixings: &FixingStore,
        log_numeraire: f64,
    ) -> Result<f64> {
        let u = snap.time();
        let mut v = 0.0;
        for (i, f) in self.flows().iter().enumerate() {
            if f.pay <= u + GRID_EPS {
                continue;
            }
            let started = f.reset < u - GRID_EPS;
            let p_pay = snap.bond(f.pay)?;
            v += f.weight
                * match f.kind {
                    LegKind::Fixed { rate } => f.accrual * rate * p_pay,
                    LegKind::Libor { tenor, spread } => {
                        let l = if started {
                            fixings.get(i).ok_or(Error::MissingFixing {
                                reset: f.reset,
                                tenor,
                            })?
                        } else {
                            snap.libor_forward(f.pay, tenor)?
                        };
                        f.accrual * (l + spread) * p_pay
                    }
                    LegKind::Overnight { spread } => {
                        let start = if started {
                            let n0 = fixings.get(i).ok_or(Error::MissingFixing {
                                reset: f.reset,
                                tenor: f.accrual,
                            })?;
                            (log_numeraire - n0).exp()
                        } else {
                            snap.bond(f.reset)?
                        };
                        start - p_pay + spread * f.accrual * p_pay
                    }
                };
        }
        Ok(v)
    }

    /// Records the fixings of every flow resetting at `snap.time()`.
    pub fn record_fixings(
        &self,
        snap: &CurveSnapshot,
        fixings: &mut FixingStore,
        log_numeraire: f64,
    ) -> Result<()> {
        let u = snap.time();
        for (i, f) in self.flows().iter().enumerate() {
            if (f.reset - u).abs() < GRID_EPS {
                let value = match f.kind {
                    LegKind::Fixed { .. } => continue,
                    LegKind::Libor { tenor, .. } => snap.libor_forward(f.pay, tenor)?,
                    LegKind::Overnight { .. } => log_numeraire,
                };
                fixings.record(i, value)?;
            }
        }
        Ok(())
    }
}

/// Swap rate that sets the IRS to zero on the initial curves.
pub fn irs_par_rate(
    curves: &MarketCurves,
    start: f64,
    end: f64,
    fixed_period: f64,
    libor_tenor: f64,
) -> Result<f64> {
    let t = Trade::irs_forward(
        start,
        end,
        0.0,
        fixed_period,
        libor_tenor,
        1.0,
        Direction::Receiver,
    )?;
    let float = -t.price_perfect_collateral(curves)?;
    let annuity: f64 = aligned_periods(start, end, fixed_period)?
        .iter()
        .map(|(s, e)| (e - s) * curves.discount.discount(*e))
        .sum();
    Ok(float / annuity)
}

/// Spread on the short leg that sets the basis swap to zero.
pub fn basis_par_spread(
    curves: &MarketCurves,
    maturity: f64,
    short_tenor: f64,
    long_tenor: f64,
) -> Result<f64> {
    let t = Trade::basis(
        maturity,
        short_tenor,
        long_tenor,
        0.0,
        1.0,
        Direction::Receiver,
    )?;
    let v = t.price_perfect_collateral(curves)?;
    let annuity: f64 = aligned_periods(0.0, maturity, short_tenor)?
        .iter()
        .map(|(s, e)| (e - s) * curves.discount.discount(*e))
        .sum();
    Ok(-v / annuity)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub reset: f64,
    pub pay: f64,
    pub accrual: f64,
    pub kind: LegKind,
    /// Signed notional.
    pub weight: f64,
}

/// Per-path fixings by flow index: the Libor fixing, or `int_0^s e` at the
/// start of an overnight period.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixingStore {
    values: Vec<Option<f64>>,
}

impl FixingStore {
    pub fn new(n_flows: usize) -> Self {
        Self {
            values: vec![None; n_flows],
        }
    }

    pub fn record(&mut self, flow: usize, value: f64) -> Result<()> {
        let slot = self
            .values
            .get_mut(flow)
            .ok_or_else(|| Error::InvalidInput(format!("no flow {flow} in fixing store")))?;
        if slot.is_some() {
            return Err(Error::InvalidInput(format!(
                "fixing for flow {flow} recorded twice"
            )));
        }
        *slot = Some(value);
        Ok(())
    }

    pub fn get(&self, flow: usize) -> Option<f64> {
        self.values.get(flow).copied().flatten()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = None);
    }
}

#[derive(Debug, Clone, Copy)]
struct BondTerm {
    c0: f64,
    g: Vector,
}

#[derive(Debug, Clone, Copy)]
struct LiborTerm {
    ln_kf0: f64,
    kappa: f64,
    g: Vector,
    h: Vector,
}

#[derive(Debug, Clone, Copy)]
enum Term {
    Fixed {
        w: f64,
        bond: u32,
    },
    LiborFwd {
        w: f64,
        ws: f64,
        bond: u32,
        libor: u32,
        flow: u32,
        fixes: bool,
    },
    LiborFixed {
        w: f64,
        ws: f64,
        bond: u32,
        flow: u32,
    },
    OnFwd {
        w: f64,
        ws: f64,
        start: u32,
        bond: u32,
        flow: u32,
        fixes: bool,
    },
    OnAccrued {
        w: f64,
        ws: f64,
        bond: u32,
        flow: u32,
    },
}

#[derive(Debug, Clone, Copy)]
enum Cash {
    Fixed { w: f64 },
    Libor { w: f64, ws: f64, flow: u32 },
    Overnight { w: f64, ws: f64, flow: u32 },
}

/// Per-node precomputation of everything deterministic in the valuation of
/// a trade along a grid; `evaluate` then only needs the path states.
#[derive(Debug, Clone)]
pub struct ExposureKernel {
    n: usize,
    bonds: Vec<BondTerm>,
    bond_off: Vec<usize>,
    libors: Vec<LiborTerm>,
    libor_off: Vec<usize>,
    terms: Vec<Term>,
    term_off: Vec<usize>,
    cash: Vec<Cash>,
    cash_off: Vec<usize>,
    n_flows: usize,
    max_bonds: usize,
}

/// Exposure along one path: `after[k]` is `eps_{t_k}` for flows paid after
/// `t_k`; `cash[k]` is the amount paid at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureProfile {
    pub after: Vec<f64>,
    pub cash: Vec<f64>,
    pub fixings: FixingStore,
    bond_scratch: Vec<f64>,
}

impl ExposureProfile {
    /// `eps_u(u,T)` at node `k`.
    pub fn epsilon(&self, k: usize) -> f64 {
        self.after[k]
    }

    /// Left limit `eps_{u-}`, which still includes the flow paid at `u`.
    pub fn epsilon_left(&self, k: usize) -> f64 {
        self.after[k] + self.cash[k]
    }

    /// `eps_{t_j}(t_k, T)`: flows paid in `(t_k, t_j]` capitalised at the
    /// overnight rate to `t_j`, plus the value at `t_j` of later flows.
    pub fn epsilon_forward(&self, path: &MarketPath, k: usize, j: usize) -> f64 {
        let nj = path.log_numeraire[j];
        let mut v = self.after[j];
        for m in k + 1..=j {
            if self.cash[m] != 0.0 {
                v += self.cash[m] * (nj - path.log_numeraire[m]).exp();
            }
        }
        v
    }

    /// Left limit of `epsilon_forward` in `t_k`.
    pub fn epsilon_forward_left(&self, path: &MarketPath, k: usize, j: usize) -> f64 {
        self.epsilon_forward(path, k, j)
            + self.cash[k] * (path.log_numeraire[j] - path.log_numeraire[k]).exp()
    }
}

impl ExposureKernel {
    pub fn new(
        trade: &Trade,
        model: &HjmModel,
        curves: &MarketCurves,
        grid: &TimeGrid,
    ) -> Result<Self> {
        let n = model.factors();
        let times = grid.times();
        let flows = trade.flows();
        let mut reset_idx = Vec::with_capacity(flows.len());
        let mut pay_idx = Vec::with_capacity(flows.len());
        let mut f0 = Vec::with_capacity(flows.len());
        for f in &flows {
            reset_idx.push(grid.index_of(f.reset)?);
            pay_idx.push(grid.index_of(f.pay)?);
            f0.push(match f.kind {
                LegKind::Libor { tenor, .. } => curves.forward(tenor)?.value(f.pay)?,
                _ => 0.0,
            });
        }
        let ln_p0 = |t: f64| curves.discount.log_discount(t);
        let mut k = Self {
            n,
            bonds: Vec::new(),
            bond_off: vec![0],
            libors: Vec::new(),
            libor_off: vec![0],
            terms: Vec::new(),
            term_off: vec![0],
            cash: Vec::new(),
            cash_off: vec![0],
            n_flows: flows.len(),
            max_bonds: 0,
        };
        for (node, &t) in times.iter().enumerate() {
            let mut dates: Vec<f64> = Vec::new();
            let slot = |d: f64, dates: &mut Vec<f64>| -> u32 {
                match dates.iter().position(|x| (x - d).abs() < GRID_EPS) {
                    Some(i) => i as u32,
                    None => {
                        dates.push(d);
                        (dates.len() - 1) as u32
                    }
                }
            };
            let libor_base = k.libors.len();
            for (i, f) in flows.iter().enumerate() {
                let fi = i as u32;
                if pay_idx[i] == node {
                    k.cash.push(match f.kind {
                        LegKind::Fixed { rate } => Cash::Fixed {
                            w: f.weight * f.accrual * rate,
                        },
                        LegKind::Libor { spread, .. } => Cash::Libor {
                            w: f.weight * f.accrual,
                            ws: f.weight * f.accrual * spread,
                            flow: fi,
                        },
                        LegKind::Overnight { spread } => Cash::Overnight {
                            w: f.weight,
                            ws: f.weight * f.accrual * spread,
                            flow: fi,
                        },
                    });
                }
                if pay_idx[i] <= node {
                    continue;
                }
                let bond = slot(f.pay, &mut dates);
                let fwd = reset_idx[i] >= node;
                let term = match f.kind {
                    LegKind::Fixed { rate } => Term::Fixed {
                        w: f.weight * f.accrual * rate,
                        bond,
                    },
                    LegKind::Libor { tenor, spread } => {
                        let w = f.weight * f.accrual;
                        let ws = w * spread;
                        if fwd {
                            let mut g = model.g0(t, f.pay - tenor, f.pay)?;
                            let q = model.q_diag(tenor);
                            let gb = model.g0(t, t, f.pay)?;
                            let mut h = [0.0; MAX_FACTORS];
                            for m in 0..n {
                                g[m] *= q[m];
                            }
                            for m in 0..n {
                                h[m] = gb[m] - 0.5 * g[m];
                            }
                            let kappa = model.shift().kappa(tenor);
                            k.libors.push(LiborTerm {
                                ln_kf0: (kappa + f0[i]).ln(),
                                kappa,
                                g,
                                h,
                            });
                            let libor = (k.libors.len() - libor_base - 1) as u32;
                            Term::LiborFwd {
                                w,
                                ws,
                                bond,
                                libor,
                                flow: fi,
                                fixes: reset_idx[i] == node,
                            }
                        } else {
                            Term::LiborFixed {
                                w,
                                ws,
                                bond,
                                flow: fi,
                            }
                        }
                    }
                    LegKind::Overnight { spread } => {
                        let ws = f.weight * f.accrual * spread;
                        if fwd {
                            let start = slot(f.reset, &mut dates);
                            Term::OnFwd {
                                w: f.weight,
                                ws,
                                start,
                                bond,
                                flow: fi,
                                fixes: reset_idx[i] == node,
                            }
                        } else {
                            Term::OnAccrued {
                                w: f.weight,
                                ws,
                                bond,
                                flow: fi,
                            }
                        }
                    }
                };
                k.terms.push(term);
            }
            for d in &dates {
                k.bonds.push(BondTerm {
                    c0: ln_p0(*d) - ln_p0(t),
                    g: model.g0(t, t, *d)?,
                });
            }
            k.max_bonds = k.max_bonds.max(dates.len());
            k.bond_off.push(k.bonds.len());
            k.libor_off.push(k.libors.len());
            k.term_off.push(k.terms.len());
            k.cash_off.push(k.cash.len());
        }
        Ok(k)
    }

    pub fn profile(&self) -> ExposureProfile {
        let m = self.term_off.len() - 1;
        ExposureProfile {
            after: vec![0.0; m],
            cash: vec![0.0; m],
            fixings: FixingStore::new(self.n_flows),
            bond_scratch: vec![0.0; self.max_bonds],
        }
    }

    /// Fills `out` along `path`, recording fixings as resets are passed.
    pub fn evaluate(&self, path: &MarketPath, out: &mut ExposureProfile) {
        out.fixings.clear();
        for node in 0..self.term_off.len() - 1 {
            let nk = path.log_numeraire[node];
            out.after[node] = self.node_value(node, &path.states[node], nk, out);
            let mut c = 0.0;
            for cash in &self.cash[self.cash_off[node]..self.cash_off[node + 1]] {
                c += match *cash {
                    Cash::Fixed { w } => w,
                    Cash::Libor { w, ws, flow } => {
                        w * out.fixings.values[flow as usize].expect("fixing recorded at reset")
                            + ws
                    }
                    Cash::Overnight { w, ws, flow } => {
                        let n0 =
                            out.fixings.values[flow as usize].expect("fixing recorded at reset");
                        w * (nk - n0).exp_m1() + ws
                    }
                };
            }
            out.cash[node] = c;
        }
    }

    /// Value at grid node `node` from the state alone. Only valid where no
    /// flow paid after the node has reset before it.
    pub fn value_at_node(
        &self,
        node: usize,
        state: &MarkovState,
        scratch: &mut ExposureProfile,
    ) -> Result<f64> {
        if node + 1 >= self.term_off.len() {
            return Err(Error::MissingGridNode { t: f64::NAN });
        }
        for term in &self.terms[self.term_off[node]..self.term_off[node + 1]] {
            if let Term::LiborFixed { .. } | Term::OnAccrued { .. } = term {
                return Err(Error::InvalidInput(
                    "a flow has already reset at this node".into(),
                ));
            }
        }
        Ok(self.node_value(node, state, 0.0, scratch))
    }

    fn node_value(&self, node: usize, s: &MarkovState, nk: f64, out: &mut ExposureProfile) -> f64 {
        let n = self.n;
        let bonds = &self.bonds[self.bond_off[node]..self.bond_off[node + 1]];
        for (b, slot) in bonds.iter().zip(out.bond_scratch.iter_mut()) {
            let mut lin = 0.0;
            let mut quad = 0.0;
            for i in 0..n {
                lin += b.g[i] * s.x[i];
                let mut yi = 0.0;
                for m in 0..n {
                    yi += s.y[i][m] * b.g[m];
                }
                quad += b.g[i] * yi;
            }
            *slot = (b.c0 - lin - 0.5 * quad).exp();
        }
        let p = &out.bond_scratch;
        let libors = &self.libors[self.libor_off[node]..self.libor_off[node + 1]];
        let mut v = 0.0;
        for term in &self.terms[self.term_off[node]..self.term_off[node + 1]] {
            v += match *term {
                Term::Fixed { w, bond } => w * p[bond as usize],
                Term::LiborFwd {
                    w,
                    ws,
                    bond,
                    libor,
                    flow,
                    fixes,
                } => {
                    let l = &libors[libor as usize];
                    let mut e = 0.0;
                    for i in 0..n {
                        let mut yi = 0.0;
                        for m in 0..n {
                            yi += s.y[i][m] * l.h[m];
                        }
                        e += l.g[i] * (s.x[i] + yi);
                    }
                    let f = (l.ln_kf0 + e).exp() - l.kappa;
                    if fixes {
                        out.fixings.values[flow as usize] = Some(f);
                    }
                    (w * f + ws) * p[bond as usize]
                }
                Term::LiborFixed { w, ws, bond, flow } => {
                    let l = out.fixings.values[flow as usize].expect("fixing recorded at reset");
                    (w * l + ws) * p[bond as usize]
                }
                Term::OnFwd {
                    w,
                    ws,
                    start,
                    bond,
                    flow,
                    fixes,
                } => {
                    if fixes {
                        out.fixings.values[flow as usize] = Some(nk);
                    }
                    w * (p[start as usize] - p[bond as usize]) + ws * p[bond as usize]
                }
                Term::OnAccrued { w, ws, bond, flow } => {
                    let n0 = out.fixings.values[flow as usize].expect("fixing recorded at reset");
                    w * ((nk - n0).exp() - p[bond as usize]) + ws * p[bond as usize]
                }
            };
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjm::{HjmParams, MarkovState, ModelFamily};
    use crate::termstructures::{par_ois_rate, DiscountCurve, ForwardCurve, SyntheticCurves};
    use approx::assert_abs_diff_eq;

    fn curves() -> MarketCurves {
        MarketCurves::synthetic(&SyntheticCurves {
            short_rate: 0.01,
            long_rate: 0.03,
            decay: 3.0,
            horizon: 12.0,
            basis: vec![(0.25, 0.001), (0.5, 0.0025)],
        })
        .unwrap()
    }

    #[test]
    fn par_trades_are_worth_zero() {
        let c = curves();
        let k = irs_par_rate(&c, 0.0, 10.0, 1.0, 0.5).unwrap();
        let irs = Trade::irs(10.0, k, 1.0, 0.5, 1.0, Direction::Receiver).unwrap();
        assert_abs_diff_eq!(
            irs.price_perfect_collateral(&c).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let e0 = par_ois_rate(&c.discount, 2.0, 0.5).unwrap();
        let ois = Trade::ois_forward(1.5, 2.0, e0, 0.5, 1.0, Direction::Payer).unwrap();
        assert_abs_diff_eq!(
            ois.price_perfect_collateral(&c).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        let s = basis_par_spread(&c, 10.0, 0.25, 0.5).unwrap();
        let b = Trade::basis(10.0, 0.25, 0.5, s, 1.0, Direction::Receiver).unwrap();
        assert_abs_diff_eq!(
            b.price_perfect_collateral(&c).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_basis_swap_legs_cancel() {
        let mut c = curves();
        c.forwards = vec![
            ForwardCurve::from_ois(0.25, &c.discount, 0.0, 12.0).unwrap(),
            ForwardCurve::from_ois(0.5, &c.discount, 0.0, 12.0).unwrap(),
        ];
        let b = Trade::basis(10.0, 0.25, 0.5, 0.0, 1.0, Direction::Receiver).unwrap();
        // each leg telescopes to 1 - P(T)
        assert_abs_diff_eq!(
            b.price_perfect_collateral(&c).unwrap(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn one_period_irs_hand_value() {
        let c = MarketCurves {
            discount: DiscountCurve::flat(0.02),
            forwards: vec![ForwardCurve::new(0.5, &[(10.0, 0.03)]).unwrap()],
        };
        let t = Trade::irs(0.5, 0.025, 0.5, 0.5, 100.0, Direction::Receiver).unwrap();
        let expected = 100.0 * 0.5 * (0.025 - 0.03) * (-0.01f64).exp();
        assert_abs_diff_eq!(
            t.price_perfect_collateral(&c).unwrap(),
            expected,
            epsilon = 1e-13
        );
    }

    #[test]
    fn schedules_and_validation() {
        assert_eq!(aligned_periods(0.0, 1.0, 0.25).unwrap().len(), 4);
        assert!(aligned_periods(0.0, 1.0, 0.3).is_err());
        let t = Trade::irs(2.0, 0.01, 1.0, 0.5, 1.0, Direction::Payer).unwrap();
        assert_eq!(t.event_dates(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(Trade::basis(1.0, 0.5, 0.25, 0.0, 1.0, Direction::Receiver).is_err());
        let far = Trade::irs(20.0, 0.01, 1.0, 0.5, 1.0, Direction::Payer).unwrap();
        assert!(far.price_perfect_collateral(&curves()).is_err());
    }

    #[test]
    fn value_at_origin_matches_perfect_collateral_price() {
        let c = curves();
        for fam in ModelFamily::all() {
            let m = HjmParams::preset(fam).build().unwrap();
            let s = MarkovState::initial(&m);
            let snap = CurveSnapshot::new(&m, &c, &s);
            for t in [
                Trade::irs(10.0, 0.02, 1.0, 0.5, 1.0, Direction::Receiver).unwrap(),
                Trade::basis(10.0, 0.25, 0.5, 0.001, 1.0, Direction::Receiver).unwrap(),
                Trade::ois(5.0, 0.015, 1.0, 1.0, Direction::Payer).unwrap(),
            ] {
                let v = t
                    .value_at(&snap, &FixingStore::new(t.flows().len()), 0.0)
                    .unwrap();
                assert_abs_diff_eq!(v, t.price_perfect_collateral(&c).unwrap(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn missing_fixing_is_reported() {
        let c = curves();
        let m = HjmParams::preset(ModelFamily::HullWhite).build().unwrap();
        let mut s = MarkovState::initial(&m);
        s.t = 0.75;
        let t = Trade::irs(2.0, 0.02, 1.0, 0.5, 1.0, Direction::Receiver).unwrap();
        let err = t.value_at(
            &CurveSnapshot::new(&m, &c, &s),
            &FixingStore::new(t.flows().len()),
            0.0,
        );
        assert!(matches!(err, Err(Error::MissingFixing { .. })));
        s.t = 2.0;
        assert_eq!(
            t.value_at(&CurveSnapshot::new(&m, &c, &s), &FixingStore::new(6), 0.0)
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn fixing_store_is_write_once() {
        let mut f = FixingStore::new(2);
        f.record(1, 0.03).unwrap();
        assert!(f.record(1, 0.03).is_err());
        assert_eq!(f.get(1), Some(0.03));
        assert_eq!(f.get(0), None);
    }

    /// Synthetic path with a hand-made state trajectory; the kernel must agree
    /// with the reference `value_at` at every node.
    #[test]
    fn kernel_matches_reference_valuation() {
        let c = curves();
        let grid = TimeGrid::build(3.0, 1.0 / 12.0, &[0.25, 0.5, 0.75], 0.04).unwrap();
        for fam in ModelFamily::all() {
            let m = HjmParams::preset(fam).build().unwrap();
            let n_nodes = grid.len();
            let mut states = Vec::new();
            let mut lognum = Vec::new();
            for (k, &t) in grid.times().iter().enumerate() {
                let mut s = MarkovState::initial(&m);
                s.t = t;
                s.x[0] = 0.01 * (3.0 * t).sin();
                s.x[1] = -0.004 * t;
                s.y = [
                    [2e-5 * t, -3e-6 * t, 0.0, 0.0],
                    [-3e-6 * t, 1e-5 * t, 0.0, 0.0],
                    [0.0; 4],
                    [0.0; 4],
                ];
                states.push(s);
                lognum.push(0.02 * t + 0.001 * k as f64 / n_nodes as f64);
            }
            let path = MarketPath {
                states: states.clone(),
                short_rate: vec![0.0; n_nodes],
                log_numeraire: lognum.clone(),
            };
            for trade in [
                Trade::irs(3.0, 0.021, 1.0, 0.5, 1.0, Direction::Receiver).unwrap(),
                Trade::basis(3.0, 0.25, 0.5, 0.0012, 1.0, Direction::Payer).unwrap(),
                Trade::ois(3.0, 0.018, 0.5, 2.0, Direction::Receiver).unwrap(),
            ] {
                let kernel = ExposureKernel::new(&trade, &m, &c, &grid).unwrap();
                let mut prof = kernel.profile();
                kernel.evaluate(&path, &mut prof);
                let mut store = FixingStore::new(trade.flows().len());
                for (k, s) in states.iter().enumerate() {
                    let snap = CurveSnapshot::new(&m, &c, s);
                    trade.record_fixings(&snap, &mut store, lognum[k]).unwrap();
                    let v = trade.value_at(&snap, &store, lognum[k]).unwrap();
                    assert_abs_diff_eq!(prof.epsilon(k), v, epsilon = 1e-13);
                }
                for i in 0..trade.flows().len() {
                    match (prof.fixings.get(i), store.get(i)) {
                        (Some(a), Some(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-15),
                        (a, b) => assert_eq!(a, b),
                    }
                }
                // antisymmetry
                let flipped = ExposureKernel::new(&trade.flipped(), &m, &c, &grid).unwrap();
                let mut pf = flipped.profile();
                flipped.evaluate(&path, &mut pf);
                for k in 0..n_nodes {
                    assert_eq!(pf.after[k], -prof.after[k]);
                }
            }
        }
    }

    #[test]
    fn cure_period_capitalisation() {
        // one 0.5y fixed coupon paid halfway through a cure period
        let c = MarketCurves {
            discount: DiscountCurve::flat(0.02),
            forwards: vec![],
        };
        let m = HjmParams::preset(ModelFamily::HullWhite).build().unwrap();
        let trade = Trade::irs_forward(0.0, 0.5, 0.04, 0.5, 0.5, 1.0, Direction::Receiver).unwrap();
        let trade = Trade {
            legs: vec![trade.legs[0].clone()],
            ..trade
        };
        let grid = TimeGrid::from_times(vec![0.0, 0.48, 0.5, 0.52]).unwrap();
        let states: Vec<MarkovState> = grid
            .times()
            .iter()
            .map(|&t| MarkovState {
                t,
                ..MarkovState::initial(&m)
            })
            .collect();
        let lognum = vec![0.0, 0.0096, 0.0101, 0.0107];
        let path = MarketPath {
            states,
            short_rate: vec![0.02; 4],
            log_numeraire: lognum.clone(),
        };
        let kernel = ExposureKernel::new(&trade, &m, &c, &grid).unwrap();
        let mut prof = kernel.profile();
        kernel.evaluate(&path, &mut prof);
        let coupon = 0.5 * 0.04;
        assert_abs_diff_eq!(prof.cash[2], coupon, epsilon = 1e-16);
        let expected = coupon * (lognum[3] - lognum[2]).exp();
        assert_abs_diff_eq!(prof.epsilon_forward(&path, 1, 3), expected, epsilon = 1e-15);
        assert_eq!(prof.epsilon_forward(&path, 1, 1), prof.epsilon(1));
        assert_eq!(prof.epsilon_forward(&path, 3, 3), 0.0);
    }
}
