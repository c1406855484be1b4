use std::path::{Path, PathBuf};

use regime_games::asgame::{
    integrated_variance_all, optimal_quotes, solve_macro_as, solve_theta_exact, solve_theta_table,
    theta_expansion, write_theta_csv, ASModel, MacroMode, MacroSolution, ThetaTable, SECONDS_PER_YEAR,
};
use regime_games::calib::{calibrate, OhlcvSeries, RegimeCalibration};
use regime_games::hierarchy::{solve_hierarchy_bounded, turnpike_report, HierarchySolution, TurnpikeReport};
use regime_games::numkit::TimeGrid;
use regime_games::rates::RateSchedule;
use regime_games::sim::{
    policy_for, run_monte_carlo, simulate_path, write_path_csv, SimReport, Strategy,
};
use regime_games::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::config::{MacroModeName, RunConfig};
use crate::error::{CliError, CliResult, Context};
use crate::output::{write_atomic, write_json, CsvOut};

pub const CALIBRATION_JSON: &str = "calibration.json";
pub const THETA_CSV: &str = "theta.csv";
pub const EXPANSION_JSON: &str = "expansion_report.json";
pub const XI_SWEEP_CSV: &str = "xi_sweep.csv";
pub const MACRO_CSV: &str = "macro.csv";
pub const MACRO_JSON: &str = "macro_summary.json";
pub const REPORT_JSON: &str = "simulation_report.json";
pub const P_CSV: &str = "riccati_p.csv";
pub const VALUES_CSV: &str = "values.csv";
pub const RATES_CSV: &str = "rates.csv";
pub const STRATEGIES_CSV: &str = "strategies.csv";
pub const TURNPIKE_JSON: &str = "turnpike.json";

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn s<T: ToString>(x: T) -> String {
    x.to_string()
}

pub fn cmd_calibrate(cfg: &RunConfig, csv: Option<&Path>) -> CliResult<RegimeCalibration> {
    let path = csv
        .map(Path::to_path_buf)
        .or_else(|| cfg.calibration.csv.clone())
        .ok_or_else(|| CliError::config("calibrate needs a CSV path (argument or calibration.csv)"))?;
    let file = std::fs::File::open(&path)
        .map_err(|e| CliError::config(format!("cannot open {}: {e}", path.display())))?;
    let series = OhlcvSeries::from_csv(std::io::BufReader::new(file)).context(&path.display().to_string())?;
    let cal = calibrate(&series, &cfg.calib_config()?).context("calibration")?;
    write_json(&out(cfg, CALIBRATION_JSON), &cal)?;
    Ok(cal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeOutput {
    pub schema_version: u32,
    pub rho_h: f64,
    pub report: TurnpikeReport,
}

pub fn cmd_solve(cfg: &RunConfig) -> CliResult<HierarchySolution> {
    let (model, spec, grid, bound) = cfg.hierarchy_inputs()?;
    let sol = solve_hierarchy_bounded(&model, &spec, &grid, bound).context("solve")?;
    let n = model.n_regimes();

    let mut p = CsvOut::new(&["schema_version", "t", "regime", "row", "col", "p"])?;
    let mut v = CsvOut::new(&["schema_version", "t", "regime", "trace_p", "r", "k"])?;
    let mut rates = CsvOut::new(&["schema_version", "t", "from", "to", "rate"])?;
    let mut strat = CsvOut::new(&["schema_version", "t", "regime", "player", "action", "prob"])?;
    for node in 0..grid.n_nodes() {
        let t = s(grid.time(node));
        for i in 0..n {
            let pm = &sol.riccati.p[node][i];
            for r in 0..pm.rows() {
                for c in 0..pm.cols() {
                    p.row([s(SCHEMA_VERSION), t.clone(), s(i), s(r), s(c), s(pm[(r, c)])])?;
                }
            }
            v.row([
                s(SCHEMA_VERSION),
                t.clone(),
                s(i),
                s(pm.trace()),
                s(sol.riccati.r[node][i]),
                s(sol.outer.k[node][i]),
            ])?;
            for j in 0..n {
                rates.row([s(SCHEMA_VERSION), t.clone(), s(i), s(j), s(sol.outer.rates[node].rate(i, j))])?;
            }
            for (player, mix) in [("attacker", &sol.outer.f[node][i]), ("stabilizer", &sol.outer.g[node][i])] {
                for (a, pr) in mix.iter().enumerate() {
                    strat.row([s(SCHEMA_VERSION), t.clone(), s(i), s(player), s(a), s(pr)])?;
                }
            }
        }
    }
    p.finish(&out(cfg, P_CSV))?;
    v.finish(&out(cfg, VALUES_CSV))?;
    rates.finish(&out(cfg, RATES_CSV))?;
    strat.finish(&out(cfg, STRATEGIES_CSV))?;

    let report = turnpike_report(&sol);
    write_json(
        &out(cfg, TURNPIKE_JSON),
        &TurnpikeOutput {
            schema_version: SCHEMA_VERSION,
            rho_h: sol.diagnostics.rho_h,
            report: report.clone(),
        },
    )?;
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPoint {
    pub tau_years: f64,
    /// `max_{i,q} |−θ_exact − expansion|`
    pub max_abs_error: f64,
    pub max_abs_theta: f64,
    pub error_over_tau3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub schema_version: u32,
    pub points: Vec<ExpansionPoint>,
    /// Least-squares slope of `ln error` against `ln τ`.
    pub loglog_slope: Option<f64>,
}

/// Short-horizon expansion against the exact θ over the full lattice.
pub fn expansion_report(model: &ASModel, taus: &[f64]) -> CliResult<ExpansionReport> {
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CliError::config(format!("mm.expansion_tau_years: {tau} is not positive")));
        }
        let exact = solve_theta_exact(model, &model.rates, tau).context("expansion")?;
        let mut err: f64 = 0.0;
        let mut big: f64 = 0.0;
        for i in 0..model.n_regimes() {
            for q in model.inventories() {
                let th = exact[model.index(i, q)];
                let ex = theta_expansion(model, &model.rates, i, q, tau).context("expansion")?;
                err = err.max((-th - ex).abs());
                big = big.max(th.abs());
            }
        }
        points.push(ExpansionPoint {
            tau_years: tau,
            max_abs_error: err,
            max_abs_theta: big,
            error_over_tau3: err / tau.powi(3),
        });
    }
    Ok(ExpansionReport {
        schema_version: SCHEMA_VERSION,
        loglog_slope: loglog_slope(&points),
        points,
    })
}

fn loglog_slope(points: &[ExpansionPoint]) -> Option<f64> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.max_abs_error > 0.0)
        .map(|p| (p.tau_years.ln(), p.max_abs_error.ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub xi: f64,
    pub regime: usize,
    pub q: i32,
    pub tau_seconds: f64,
    pub u_a: Option<f64>,
    pub u_b: Option<f64>,
}

/// Quotes at each `(ξ, τ)` of the sweep.
pub fn xi_sweep(model: &ASModel, xis: &[f64], taus_seconds: &[f64]) -> CliResult<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &xi in xis {
        let m = ASModel { xi, ..model.clone() };
        m.validate().context("mm.xi_sweep")?;
        for &ts in taus_seconds {
            let grid = TimeGrid::new(0.0, ts / SECONDS_PER_YEAR, 1).context("mm.sweep_tau_seconds")?;
            let table = solve_theta_table(&m, &RateSchedule::Constant(m.rates.clone()), &grid).context("mm")?;
            for i in 0..m.n_regimes() {
                for q in m.inventories() {
                    let qp = optimal_quotes(&table, &m, i, q, 0);
                    rows.push(SweepRow {
                        xi,
                        regime: i,
                        q,
                        tau_seconds: ts,
                        u_a: qp.u_a,
                        u_b: qp.u_b,
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSummary {
    pub schema_version: u32,
    pub mode: MacroModeName,
    pub inventories: Vec<i32>,
    /// Nodes where the vertex saddle and the bracket at the mixed pair disagree.
    pub flagged: Vec<usize>,
    pub value_at_start: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MmOutput {
    pub table: ThetaTable,
    pub expansion: ExpansionReport,
    pub sweep: Vec<SweepRow>,
    pub macro_solutions: Vec<MacroSolution>,
}

pub fn cmd_mm(cfg: &RunConfig) -> CliResult<MmOutput> {
    let mut model = cfg.market_model()?;
    let n = RunConfig::market_steps(&mut model, cfg.mm.n_steps, "mm.n_steps")?;
    let grid = TimeGrid::new(0.0, model.horizon, n).context("mm")?;
    let macro_spec = cfg.macro_spec(&model)?;

    let table = solve_theta_table(&model, &RateSchedule::Constant(model.rates.clone()), &grid).context("mm")?;
    let mut buf = Vec::new();
    write_theta_csv(&table, &model, &mut buf).context("mm")?;
    write_atomic(&out(cfg, THETA_CSV), &buf)?;

    let expansion = expansion_report(&model, &cfg.mm.expansion_tau_years)?;
    write_json(&out(cfg, EXPANSION_JSON), &expansion)?;

    let sweep = xi_sweep(&model, &cfg.mm.xi_sweep, &cfg.mm.sweep_tau_seconds)?;
    if !cfg.mm.xi_sweep.is_empty() {
        let mut w = CsvOut::new(&[
            "schema_version",
            "xi",
            "regime",
            "q",
            "tau_seconds",
            "u_a",
            "u_b",
            "total_spread",
        ])?;
        let opt = |x: Option<f64>| x.map(s).unwrap_or_default();
        for r in &sweep {
            let total = r.u_a.zip(r.u_b).map(|(a, b)| a + b);
            w.row([
                s(SCHEMA_VERSION),
                s(r.xi),
                s(r.regime),
                s(r.q),
                s(r.tau_seconds),
                opt(r.u_a),
                opt(r.u_b),
                opt(total),
            ])?;
        }
        w.finish(&out(cfg, XI_SWEEP_CSV))?;
    }

    let mut macro_solutions = Vec::new();
    if let Some((spec, mc)) = macro_spec {
        let mgrid = TimeGrid::new(0.0, model.horizon, mc.n_steps).context("mm.macro")?;
        let mode = match mc.mode {
            MacroModeName::Affine => MacroMode::Affine {
                flip_bang_bang: mc.flip_bang_bang,
            },
            MacroModeName::Quadratic => MacroMode::Quadratic {
                clamp: mc.clamp_efforts,
            },
        };
        let mut w = CsvOut::new(&[
            "schema_version",
            "q",
            "t",
            "regime",
            "value",
            "f",
            "g",
            "exit_rate",
            "bang_f",
            "bang_g",
        ])?;
        for &q in &mc.inventories {
            let sol = solve_macro_as(&model, &spec, q, &mgrid, mode).context("mm.macro")?;
            for node in 0..mgrid.n_nodes() {
                for i in 0..model.n_regimes() {
                    let (bf, bg) = sol.bang_bang[node][i];
                    w.row([
                        s(SCHEMA_VERSION),
                        s(q),
                        s(mgrid.time(node)),
                        s(i),
                        s(sol.outer.k[node][i]),
                        s(sol.outer.f[node][i][1]),
                        s(sol.outer.g[node][i][1]),
                        s(sol.outer.rates[node].exit_rate(i)),
                        s(bf),
                        s(bg),
                    ])?;
                }
            }
            macro_solutions.push(sol);
        }
        w.finish(&out(cfg, MACRO_CSV))?;
        write_json(
            &out(cfg, MACRO_JSON),
            &MacroSummary {
                schema_version: SCHEMA_VERSION,
                mode: mc.mode,
                inventories: mc.inventories.clone(),
                flagged: macro_solutions.iter().map(|m| m.flagged.len()).collect(),
                value_at_start: macro_solutions.iter().map(|m| m.outer.k[0].clone()).collect(),
            },
        )?;
    }

    Ok(MmOutput {
        table,
        expansion,
        sweep,
        macro_solutions,
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<SimReport> {
    let sim = cfg.sim_config()?;
    let report = run_monte_carlo(&sim).context("simulate")?;
    write_json(&out(cfg, REPORT_JSON), &report)?;
    let n_export = cfg.simulation.export_paths.min(sim.n_paths);
    if n_export > 0 {
        let grid = sim.grid().context("simulate")?;
        for strategy in [Strategy::Vanilla, Strategy::Equilibrium] {
            let model = if strategy == Strategy::Equilibrium && !sim.predator {
                sim.model.predator_blind()
            } else {
                sim.model.clone()
            };
            let policy = policy_for(strategy, &model, &grid).context("simulate")?;
            let name = match strategy {
                Strategy::Vanilla => "vanilla",
                Strategy::Equilibrium => "equilibrium",
            };
            for p in 0..n_export {
                let rec = simulate_path(&sim, &policy, p);
                let mut buf = Vec::new();
                write_path_csv(&rec, &mut buf).context("simulate")?;
                write_atomic(&out(cfg, &format!("paths/{name}_{p:04}.csv")), &buf)?;
            }
        }
    }
    Ok(report)
}

pub fn print_calibration(cal: &RegimeCalibration) {
    println!("regime  sigma_annual  mean_run_bars  exit_rate_per_day");
    for (i, sigma) in cal.sigma.iter().enumerate() {
        println!(
            "{i:>6}  {sigma:>12.6}  {:>13.3}  {:>17.3}",
            cal.mean_run_length_bars[i],
            cal.generator.exit_rate(i)
        );
    }
    for w in &cal.warnings {
        println!("warning: {w}");
    }
}

pub fn print_solve(sol: &HierarchySolution) {
    let report = turnpike_report(sol);
    println!("regime  trace_P(0)  k(0)");
    for i in 0..sol.riccati.p[0].len() {
        println!("{i:>6}  {:>10.6}  {:>.6}", sol.riccati.p[0][i].trace(), sol.outer.k[0][i]);
    }
    println!(
        "turnpike: P rate {:.4} vs 2rho_H {:.4}; k rate {:.4} vs mean lambda2 {:.4}",
        report.p_fit.rate, report.two_rho_h, report.k_fit.rate, report.mean_lambda2
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

pub fn print_mm(cfg: &RunConfig, mm: &MmOutput) -> CliResult<()> {
    let mut model = cfg.market_model()?;
    RunConfig::market_steps(&mut model, cfg.mm.n_steps, "mm.n_steps")?;
    let (table, expansion) = (&mm.table, &mm.expansion);
    let w0 = integrated_variance_all(&model, &model.rates, model.horizon).context("mm")?;
    println!("regime  integrated_variance  spread(q=0,t=0)");
    for (i, w) in w0.iter().enumerate() {
        let total = optimal_quotes(table, &model, i, 0, 0).total();
        println!("{i:>6}  {w:>19.6e}  {}", total.map_or("-".into(), |x| format!("{x:.6}")));
    }
    if let Some(slope) = expansion.loglog_slope {
        println!("expansion error log-log slope: {slope:.3}");
    }
    Ok(())
}

pub fn print_simulation(report: &SimReport) {
    let (v, e) = (&report.vanilla, &report.equilibrium);
    println!("strategy      mean_pnl      std_pnl       sharpe   mean_spread   mean_abs_drift");
    for (name, st) in [("vanilla", v), ("equilibrium", e)] {
        println!(
            "{name:<11} {:>10.4} {:>12.4} {:>12.4} {:>13.6} {:>16.6e}",
            st.mean_pnl, st.std_pnl, st.sharpe, st.mean_total_spread, st.mean_abs_drift
        );
    }
    let r = &report.ratios;
    println!(
        "ratios: pnl {:.4} sharpe {:.4} spread {:.6} drift {:.4}; paired p = {:.4}",
        r.pnl, r.sharpe, r.spread, r.abs_drift, report.pnl_test.p_value
    );
    for note in &report.notes {
        println!("note: {note}");
    }
}
