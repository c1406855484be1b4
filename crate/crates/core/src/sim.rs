//! Seeded Monte-Carlo replay of the regime-switching market with a
//! strategic predator, comparing predator-blind and equilibrium quoting.
//!
//! Randomness: path `p` draws from ChaCha8 seeded with `seed` on stream `p`,
//! four numbers per step in a fixed order (regime uniform, price normal, ask
//! uniform, bid uniform). Both strategies therefore see identical shocks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::asgame::{optimal_quotes, predator_drift, solve_theta_table, ASModel, QuotePair, ThetaTable};
use crate::error::{Error, Result};
use crate::numkit::TimeGrid;
use crate::rates::RateSchedule;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: ASModel,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub predator: bool,
    pub initial_regime: usize,
}

impl SimConfig {
    pub fn baseline() -> Self {
        Self {
            model: ASModel::baseline(),
            n_paths: 1000,
            n_steps: 2880,
            seed: 20_251_212,
            predator: true,
            initial_regime: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::InvalidModel("n_paths and n_steps must be >= 1".into()));
        }
        let span = self.n_steps as f64 * self.model.dt;
        if (span - self.model.horizon).abs() > 1e-9 * self.model.horizon {
            return Err(Error::InvalidModel(format!(
                "n_steps * dt = {span} does not match the horizon {}",
                self.model.horizon
            )));
        }
        if self.initial_regime >= self.model.n_regimes() {
            return Err(Error::InvalidModel(format!(
                "initial regime {} out of range",
                self.initial_regime
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.model.horizon, self.n_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Vanilla,
    Equilibrium,
}

/// Quotes read from a θ table on the simulation grid.
#[derive(Debug, Clone)]
pub struct QuotePolicy {
    table: ThetaTable,
    model: ASModel,
}

impl QuotePolicy {
    pub fn from_model(model: &ASModel, grid: &TimeGrid) -> Result<Self> {
        let table = solve_theta_table(model, &RateSchedule::Constant(model.rates.clone()), grid)?;
        Ok(Self {
            table,
            model: model.clone(),
        })
    }

    pub fn quote(&self, regime: usize, q: i32, node: usize) -> QuotePair {
        optimal_quotes(&self.table, &self.model, regime, q, node)
    }

    pub fn table(&self) -> &ThetaTable {
        &self.table
    }
}

/// Predator-blind quotes: the θ table is built with `ξ = 0`.
pub fn quote_policy_vanilla(model: &ASModel, grid: &TimeGrid) -> Result<QuotePolicy> {
    QuotePolicy::from_model(&model.predator_blind(), grid)
}

/// Quotes from the θ table with the true `ξ`.
pub fn quote_policy_equilibrium(model: &ASModel, grid: &TimeGrid) -> Result<QuotePolicy> {
    QuotePolicy::from_model(model, grid)
}

pub fn policy_for(strategy: Strategy, model: &ASModel, grid: &TimeGrid) -> Result<QuotePolicy> {
    match strategy {
        Strategy::Vanilla => quote_policy_vanilla(model, grid),
        Strategy::Equilibrium => quote_policy_equilibrium(model, grid),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub time: Vec<f64>,
    pub price: Vec<f64>,
    pub regime: Vec<usize>,
    pub inventory: Vec<i32>,
    pub cash: Vec<f64>,
    pub u_a: Vec<Option<f64>>,
    pub u_b: Vec<Option<f64>>,
    pub drift: Vec<f64>,
    pub ask_fill: Vec<bool>,
    pub bid_fill: Vec<bool>,
    pub pnl: f64,
}

/// Per-path aggregates used by the report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub pnl: f64,
    pub spread_sum: f64,
    pub spread_count: usize,
    pub abs_drift_sum: f64,
    pub terminal_abs_drift: f64,
    pub ask_fills: usize,
    pub bid_fills: usize,
    pub price_change: f64,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn run_path(
    config: &SimConfig,
    policy: &QuotePolicy,
    path: usize,
    mut rec: Option<&mut PathRecord>,
) -> PathSummary {
    let m = &config.model;
    let dt = m.dt;
    let sqdt = dt.sqrt();
    let mut rng = path_rng(config.seed, path);
    let mut regime = config.initial_regime;
    let mut s = m.s0;
    let mut q: i32 = 0;
    let mut cash = 0.0;
    let mut out = PathSummary::default();

    for step in 0..config.n_steps {
        let u_regime: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        let u_ask: f64 = rng.random();
        let u_bid: f64 = rng.random();

        let exit = m.rates.exit_rate(regime);
        if exit > 0.0 {
            let p = -(-exit * dt).exp_m1();
            if u_regime < p {
                // split the jump among targets in proportion to their rates
                let mut target = u_regime / p * exit;
                for j in (0..m.n_regimes()).filter(|&j| j != regime) {
                    let r = m.rates.rate(regime, j);
                    if target < r {
                        regime = j;
                        break;
                    }
                    target -= r;
                }
            }
        }

        let w = if config.predator { predator_drift(q, m) } else { 0.0 };
        s += w * dt + m.sigma[regime] * sqdt * z;

        let quotes = policy.quote(regime, q, step);
        let fill = |u: Option<f64>, draw: f64| match u {
            Some(u) => draw < -(-m.intensity(u) * dt).exp_m1(),
            None => false,
        };
        let ask = fill(quotes.u_a, u_ask);
        let bid = fill(quotes.u_b, u_bid);
        if ask {
            cash += s + quotes.u_a.expect("ask quoted");
            q -= 1;
            out.ask_fills += 1;
        }
        if bid {
            cash -= s - quotes.u_b.expect("bid quoted");
            q += 1;
            out.bid_fills += 1;
        }
        if let Some(total) = quotes.total() {
            out.spread_sum += total;
            out.spread_count += 1;
        }
        out.abs_drift_sum += w.abs();

        if let Some(r) = rec.as_deref_mut() {
            r.time.push((step + 1) as f64 * dt);
            r.price.push(s);
            r.regime.push(regime);
            r.inventory.push(q);
            r.cash.push(cash);
            r.u_a.push(quotes.u_a);
            r.u_b.push(quotes.u_b);
            r.drift.push(w);
            r.ask_fill.push(ask);
            r.bid_fill.push(bid);
        }
    }
    out.pnl = cash + f64::from(q) * s;
    out.terminal_abs_drift = if config.predator {
        predator_drift(q, m).abs()
    } else {
        0.0
    };
    out.price_change = s - m.s0;
    if let Some(r) = rec {
        r.pnl = out.pnl;
    }
    out
}

/// One fully recorded path (stream `path` of the configured seed).
pub fn simulate_path(config: &SimConfig, policy: &QuotePolicy, path: usize) -> PathRecord {
    let mut rec = PathRecord::default();
    run_path(config, policy, path, Some(&mut rec));
    rec
}

/// Summaries of every path, in path order (parallel over paths).
pub fn simulate_summaries(config: &SimConfig, policy: &QuotePolicy) -> Vec<PathSummary> {
    (0..config.n_paths)
        .into_par_iter()
        .map(|p| run_path(config, policy, p, None))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub mean_pnl: f64,
    pub std_pnl: f64,
    /// `mean / std` of terminal PnL across paths (0 when `std = 0`).
    pub sharpe: f64,
    /// Mean of `u_a + u_b` over steps with both sides quoted.
    pub mean_total_spread: f64,
    /// Time-averaged `|w|` per path, averaged over paths.
    pub mean_abs_drift: f64,
    pub mean_terminal_abs_drift: f64,
    pub mean_ask_fills: f64,
    pub mean_bid_fills: f64,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn strategy_stats(paths: &[PathSummary], n_steps: usize) -> StrategyStats {
    let n = paths.len() as f64;
    let pnl: Vec<f64> = paths.iter().map(|p| p.pnl).collect();
    let (mean_pnl, std_pnl) = mean_std(&pnl);
    let spread_sum: f64 = paths.iter().map(|p| p.spread_sum).sum();
    let spread_count: usize = paths.iter().map(|p| p.spread_count).sum();
    StrategyStats {
        mean_pnl,
        std_pnl,
        sharpe: if std_pnl > 0.0 { mean_pnl / std_pnl } else { 0.0 },
        mean_total_spread: if spread_count > 0 {
            spread_sum / spread_count as f64
        } else {
            0.0
        },
        mean_abs_drift: paths.iter().map(|p| p.abs_drift_sum / n_steps as f64).sum::<f64>() / n,
        mean_terminal_abs_drift: paths.iter().map(|p| p.terminal_abs_drift).sum::<f64>() / n,
        mean_ask_fills: paths.iter().map(|p| p.ask_fills as f64).sum::<f64>() / n,
        mean_bid_fills: paths.iter().map(|p| p.bid_fills as f64).sum::<f64>() / n,
    }
}

/// One-sided paired t-test of `mean(a − b) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub std_diff: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

impl PairedTest {
    pub fn significant(&self, level: f64) -> bool {
        self.mean_diff > 0.0 && self.p_value < level
    }
}

pub fn paired_one_sided(a: &[f64], b: &[f64]) -> PairedTest {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&d);
    let n = d.len();
    let (t_stat, p_value) = if n < 2 {
        (0.0, 1.0)
    } else if sd == 0.0 {
        if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        }
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2");
        (t, 1.0 - dist.cdf(t))
    };
    PairedTest {
        n,
        mean_diff: mean,
        std_diff: sd,
        t_stat,
        p_value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub pnl: f64,
    pub sharpe: f64,
    pub spread: f64,
    pub abs_drift: f64,
    pub terminal_abs_drift: f64,
}

/// Headline figures reported for the BTC-USD experiment, for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub pnl_ratio: f64,
    pub sharpe_ratio: f64,
    pub spread_ratio: f64,
    pub abs_drift_ratio: f64,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        Self {
            pnl_ratio: 2.11,
            sharpe_ratio: 1.58,
            spread_ratio: 1.27,
            abs_drift_ratio: 1.164,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub predator: bool,
    pub vanilla: StrategyStats,
    pub equilibrium: StrategyStats,
    /// Equilibrium over vanilla.
    pub ratios: Ratios,
    /// Equilibrium PnL minus vanilla PnL, path by path.
    pub pnl_test: PairedTest,
    pub reference: ReferenceFigures,
    pub notes: Vec<String>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Both strategies on common random numbers.
pub fn run_monte_carlo(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let grid = config.grid()?;
    let van = simulate_summaries(config, &quote_policy_vanilla(&config.model, &grid)?);
    // without a predator the equilibrium market maker faces ξ = 0
    let eq_model = if config.predator {
        config.model.clone()
    } else {
        config.model.predator_blind()
    };
    let eq = simulate_summaries(config, &quote_policy_equilibrium(&eq_model, &grid)?);
    let vs = strategy_stats(&van, config.n_steps);
    let es = strategy_stats(&eq, config.n_steps);
    let pnl = |v: &[PathSummary]| v.iter().map(|p| p.pnl).collect::<Vec<_>>();
    let mut notes = Vec::new();
    if !config.predator {
        notes.push("predator off: equilibrium quotes use xi = 0 and coincide with vanilla".into());
    } else if config.model.xi == 0.0 {
        notes.push("xi = 0: vanilla and equilibrium quotes coincide".into());
    }
    Ok(SimReport {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        n_paths: config.n_paths,
        n_steps: config.n_steps,
        predator: config.predator,
        ratios: Ratios {
            pnl: ratio(es.mean_pnl, vs.mean_pnl),
            sharpe: ratio(es.sharpe, vs.sharpe),
            spread: ratio(es.mean_total_spread, vs.mean_total_spread),
            abs_drift: ratio(es.mean_abs_drift, vs.mean_abs_drift),
            terminal_abs_drift: ratio(es.mean_terminal_abs_drift, vs.mean_terminal_abs_drift),
        },
        pnl_test: paired_one_sided(&pnl(&eq), &pnl(&van)),
        vanilla: vs,
        equilibrium: es,
        reference: ReferenceFigures::default(),
        notes,
    })
}

/// Per-step CSV of one path.
pub fn write_path_csv<W: Write>(rec: &PathRecord, out: W) -> Result<()> {
    let err = |e: csv::Error| Error::Input(format!("writing path CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "schema_version",
        "t",
        "price",
        "regime",
        "inventory",
        "cash",
        "u_a",
        "u_b",
        "drift",
        "ask_fill",
        "bid_fill",
    ])
    .map_err(err)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for k in 0..rec.time.len() {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            rec.time[k].to_string(),
            rec.price[k].to_string(),
            rec.regime[k].to_string(),
            rec.inventory[k].to_string(),
            rec.cash[k].to_string(),
            opt(rec.u_a[k]),
            opt(rec.u_b[k]),
            rec.drift[k].to_string(),
            u8::from(rec.ask_fill[k]).to_string(),
            u8::from(rec.bid_fill[k]).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Input(format!("writing path CSV: {e}")))?;
    Ok(())
}
