//! Invariant suite at reduced path counts.

use hjmx_core::stats::mean_se;
use hjmx_core::xva::{bilateral_adjustment, bilateral_adjustment_gap};
use hjmx_core::{engine, CollateralSpec, CurveSnapshot, ModelFamily, Simulator, TimeGrid};

use crate::config::ExperimentConfig;
use crate::runner::{Experiment, RunError};

/// Cap on paths used by the statistical checks.
const MAX_PATHS: usize = 4000;
/// Martingale tolerance in standard errors. Looser than the acceptance suite
/// because selfcheck runs a handful of tests on arbitrary user settings.
const SE_BAND: f64 = 4.0;
const BETA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {} ({})",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.detail
        )
    }
}

pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Config and build errors become failed checks so the report names them.
pub fn selfcheck(config: ExperimentConfig) -> Report {
    let mut checks = Vec::new();
    let exp = match Experiment::build(config) {
        Ok(e) => {
            checks.push(Check::new(
                "config",
                true,
                match e.factor.repair_distance {
                    Some(d) => format!("correlation repaired, distance {d:.3e}"),
                    None => "valid".to_string(),
                },
            ));
            e
        }
        Err(RunError::Config(e)) => {
            let name = if e.key.starts_with("correlation") {
                "correlation"
            } else {
                "config"
            };
            checks.push(Check::new(name, false, e.to_string()));
            return Report { checks };
        }
        Err(e) => {
            checks.push(Check::new("build", false, e.to_string()));
            return Report { checks };
        }
    };
    let n = exp.config.run.n_paths.min(MAX_PATHS);
    let seed = exp.config.run.seed;
    for c in [
        martingale(&exp, n, seed),
        basis(&exp, n, seed),
        collateral(&exp, n, seed),
    ] {
        match c {
            Ok(v) => checks.extend(v),
            Err(e) => checks.push(Check::new("simulation", false, e.to_string())),
        }
    }
    Report { checks }
}

fn horizon(exp: &Experiment) -> f64 {
    let t = exp.trade.as_ref().map(|t| t.maturity).unwrap_or(5.0);
    t.min(exp.curves.discount.max_time())
}

fn martingale(exp: &Experiment, n: usize, seed: u64) -> hjmx_core::Result<Vec<Check>> {
    let c = &exp.curves;
    let t = horizon(exp);
    let tenors: Vec<f64> = c
        .forwards
        .iter()
        .map(|f| f.tenor())
        .filter(|x| *x < t)
        .collect();
    let events: Vec<f64> = tenors.iter().map(|x| t - x).collect();
    let grid = TimeGrid::build(t, exp.config.run.dt, &events, 0.0)?;
    let sim = Simulator::market_only(&exp.model, c, grid.clone())?;
    let ti = grid.index_of(t)?;
    let mut nodes = Vec::new();
    for x in &tenors {
        nodes.push(grid.index_of(t - x)?);
    }
    let samples = sim.map_paths(n, seed, |_, buf| {
        let d = (-buf.market.log_numeraire[ti]).exp();
        let mut out = vec![d];
        for (x, k) in tenors.iter().zip(&nodes) {
            let snap = CurveSnapshot::new(&exp.model, c, &buf.market.states[*k]);
            out.push(d * snap.libor_forward(t, *x).unwrap_or(f64::NAN));
        }
        out
    });
    let p0 = c.discount.discount(t);
    let (m, se) = mean_se(&samples.iter().map(|s| s[0]).collect::<Vec<_>>());
    let mut out = vec![Check::new(
        format!("martingale bond T={t}"),
        (m - p0).abs() <= SE_BAND * se,
        format!("mc {m:.8} vs curve {p0:.8}, se {se:.2e}"),
    )];
    for (j, x) in tenors.iter().enumerate() {
        let f0 = c.forward(*x)?.value(t)?;
        let (m, se) = mean_se(&samples.iter().map(|s| s[j + 1]).collect::<Vec<_>>());
        let (m, se) = (m / p0, se / p0);
        out.push(Check::new(
            format!("martingale libor x={x} T={t}"),
            (m - f0).abs() <= SE_BAND * se,
            format!("mc {m:.8} vs curve {f0:.8}, se {se:.2e}"),
        ));
    }
    Ok(out)
}

fn basis(exp: &Experiment, n: usize, seed: u64) -> hjmx_core::Result<Vec<Check>> {
    let [x1, x2] = exp.config.correlation.basis_tenors;
    let t = horizon(exp);
    let grid = TimeGrid::build(t, exp.config.run.dt, &[], 0.0)?;
    let sim = Simulator::market_only(&exp.model, &exp.curves, grid.clone())?;
    let k = grid.index_of(t)?;
    let betas = sim.map_paths(n, seed, |_, buf| {
        CurveSnapshot::new(&exp.model, &exp.curves, &buf.market.states[k])
            .beta(x1, x2)
            .unwrap_or(f64::NAN)
    });
    let (_, se) = mean_se(&betas);
    let sd = se * (betas.len() as f64).sqrt();
    let stochastic = exp.config.model.family().ok() == Some(ModelFamily::MoreniPallavicini)
        && exp.model.q_exponents().iter().any(|e| *e != 0.0);
    let check = if stochastic {
        Check::new(
            "stochastic basis",
            sd > 10.0 * BETA_FLOOR,
            format!("sd of beta at t={t} is {sd:.3e}"),
        )
    } else {
        Check::new(
            "deterministic basis",
            sd < BETA_FLOOR,
            format!("sd of beta at t={t} is {sd:.3e}"),
        )
    };
    Ok(vec![check])
}

fn collateral(exp: &Experiment, n: usize, seed: u64) -> hjmx_core::Result<Vec<Check>> {
    let (Some(trade), Some(credit)) = (&exp.trade, &exp.credit) else {
        return Ok(Vec::new());
    };
    let n = n.min(500);
    let col = &exp.config.collateral;
    let grid = TimeGrid::build(trade.maturity, exp.config.run.dt, &trade.event_dates(), 0.0)?;
    let paths = engine::simulate(&exp.model, &exp.curves, credit, &exp.factor, grid, n, seed)?;
    let spec = |alpha| CollateralSpec {
        alpha,
        delta: 0.0,
        lgd_i: col.lgd_i,
        lgd_c: col.lgd_c,
    };
    let plain = bilateral_adjustment(trade, &exp.model, &exp.curves, credit, &paths, &spec(0.0))?;
    let gap = bilateral_adjustment_gap(trade, &exp.model, &exp.curves, credit, &paths, &spec(0.0))?;
    let same = plain.cva.to_bits() == gap.cva.to_bits()
        && plain.dva.to_bits() == gap.dva.to_bits()
        && plain.se_bilateral.to_bits() == gap.se_bilateral.to_bits();
    let full = bilateral_adjustment(trade, &exp.model, &exp.curves, credit, &paths, &spec(1.0))?;
    Ok(vec![
        Check::new(
            "delta=0 equivalence",
            same,
            format!("cva {:.3e} vs {:.3e}", plain.cva, gap.cva),
        ),
        Check::new(
            "alpha=1 zeroing",
            full.cva == 0.0 && full.dva == 0.0,
            format!("cva {:.3e}, dva {:.3e}", full.cva, full.dva),
        ),
    ])
}
