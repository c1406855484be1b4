//! Joint backward sweep of the inner Riccati flow and the outer switching
//! game, with running cost `φ_i = Tr P_i(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mjls::{
    hamiltonian_spectral_gap, LqLayout, RegimeLQModel, RiccatiSolution, DEFAULT_BLOWUP_BOUND,
};
use crate::numkit::{rk4_backward_step, Matrix, TimeGrid};
use crate::outer::{
    equilibrium_at, laplacian_spectral_gap, outer_rhs, OuterGameSpec, OuterRecorder,
    OuterSolution,
};
use crate::rates::Generator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rho_h: f64,
    /// Laplacian gap of the equilibrium generator at each node.
    pub lambda2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySolution {
    pub riccati: RiccatiSolution,
    pub outer: OuterSolution,
    pub diagnostics: Diagnostics,
}

/// Single synchronized sweep from `P = Q_T`, `r = 0`, `k = 0`.
///
/// Each step freezes the saddle (hence `μ*`) computed from `k` at the upper
/// node and advances `(P, r, k)` together with RK4; within the step `φ` is
/// the trace of the current `P` stage. The outer spec's baseline rates are
/// the ones used.
pub fn solve_hierarchy(
    model: &RegimeLQModel,
    spec: &OuterGameSpec,
    grid: &TimeGrid,
) -> Result<HierarchySolution> {
    solve_hierarchy_bounded(model, spec, grid, DEFAULT_BLOWUP_BOUND)
}

pub fn solve_hierarchy_bounded(
    model: &RegimeLQModel,
    spec: &OuterGameSpec,
    grid: &TimeGrid,
    blowup_bound: f64,
) -> Result<HierarchySolution> {
    let n = model.n_regimes();
    if spec.n_regimes() != n {
        return Err(Error::DimensionMismatch(format!(
            "LQ model has {n} regimes, outer spec has {}",
            spec.n_regimes()
        )));
    }
    let layout = LqLayout::for_model(model);
    let n_steps = grid.n_steps();
    let h = grid.step();

    let mut lq = vec![Vec::new(); n_steps + 1];
    let terminal: Vec<Matrix> = model.regimes().iter().map(|rd| rd.q_t.clone()).collect();
    let mut y = Vec::with_capacity(layout.len() + n);
    layout.pack(&terminal, &vec![0.0; n], &mut y);
    lq[n_steps] = y;
    let mut k = vec![0.0; n];
    let mut stage_traces = vec![Default::default(); n_steps];
    let mut rec = OuterRecorder::new(grid.n_nodes(), n);

    for step in (0..=n_steps).rev() {
        let (saddles, gen) = equilibrium_at(&k, spec)?;
        if step == 0 {
            rec.record(0, k, saddles, gen);
            break;
        }
        let (next_lq, next_k, traces) =
            lq_step_joint(&layout, model, &gen, grid.time(step), &lq[step], &k, h);
        let t = grid.time(step - 1);
        layout.check(&next_lq, t, blowup_bound)?;
        if next_k.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { time: t });
        }
        lq[step - 1] = next_lq;
        stage_traces[step - 1] = traces;
        rec.record(step, std::mem::replace(&mut k, next_k), saddles, gen);
    }

    let (p, r) = lq.iter().map(|y| layout.unpack(y)).unzip();
    let riccati = RiccatiSolution {
        grid: *grid,
        p,
        r,
        stage_traces,
    };
    let outer = rec.finish(*grid);
    let lambda2 = outer
        .rates
        .iter()
        .map(laplacian_spectral_gap)
        .collect::<Result<Vec<_>>>()?;
    let diagnostics = Diagnostics {
        rho_h: hamiltonian_spectral_gap(model)?,
        lambda2,
    };
    Ok(HierarchySolution {
        riccati,
        outer,
        diagnostics,
    })
}

/// One RK4 step of the joint `(P, r, k)` system with `φ = Tr P`.
fn lq_step_joint(
    layout: &LqLayout,
    model: &RegimeLQModel,
    gen: &Generator,
    t: f64,
    lq: &[f64],
    k: &[f64],
    h: f64,
) -> (Vec<f64>, Vec<f64>, [Vec<f64>; 4]) {
    let split = layout.len();
    let mut y = lq.to_vec();
    y.extend_from_slice(k);
    let mut traces: Vec<Vec<f64>> = Vec::with_capacity(4);
    let mut g = |_: f64, y: &[f64]| {
        let (lq, k) = y.split_at(split);
        let phi = layout.traces(lq);
        let mut d = layout.rhs(model, gen, lq);
        d.extend(outer_rhs(k, &phi, gen));
        traces.push(phi);
        d
    };
    let mut next = rk4_backward_step(&mut g, t, &y, h);
    let next_k = next.split_off(split);
    let traces: [Vec<f64>; 4] = traces.try_into().expect("four RK4 stages");
    (next, next_k, traces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted exponential rate in backward time (0 when degenerate).
    pub rate: f64,
    pub n_points: usize,
    pub tau_window: (f64, f64),
    /// The fitted quantity never left roundoff level.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeReport {
    pub p_fit: DecayFit,
    pub k_fit: DecayFit,
    pub two_rho_h: f64,
    pub mean_lambda2: f64,
    pub warnings: Vec<String>,
}

/// Least-squares rate of `e(τ) ≈ c·exp(−ατ)`.
///
/// The fit uses nodes with `τ ≤ 0.8 τ_max` whose error lies between `1e-7`
/// and `1e-2` of its peak (the clean exponential regime). With fewer than
/// five such nodes the horizon is too short: the window falls back to
/// `τ ∈ [0.2, 0.6] τ_max` and a warning is returned.
pub fn fit_decay(taus: &[f64], errs: &[f64]) -> (DecayFit, Option<String>) {
    let peak = errs.iter().cloned().fold(0.0, f64::max);
    let tau_max = taus.iter().cloned().fold(0.0, f64::max);
    if peak < 1e-13 {
        let fit = DecayFit {
            rate: 0.0,
            n_points: 0,
            tau_window: (0.0, 0.0),
            degenerate: true,
        };
        return (fit, None);
    }
    let pick = |keep: &dyn Fn(f64, f64) -> bool| -> Vec<(f64, f64)> {
        taus.iter()
            .zip(errs)
            .filter(|(t, e)| **e > 0.0 && keep(**t, **e))
            .map(|(t, e)| (*t, e.ln()))
            .collect()
    };
    let mut warning = None;
    let mut pts = pick(&|t, e| t <= 0.8 * tau_max && e <= 1e-2 * peak && e >= 1e-7 * peak);
    if pts.len() < 5 {
        warning = Some(format!(
            "insufficient horizon: error only fell to {:.1e} of its peak",
            errs.iter()
                .zip(taus)
                .filter(|(_, t)| **t <= 0.8 * tau_max)
                .map(|(e, _)| e / peak)
                .fold(1.0, f64::min)
        ));
        pts = pick(&|t, _| t >= 0.2 * tau_max && t <= 0.6 * tau_max);
    }
    if pts.len() < 2 {
        let fit = DecayFit {
            rate: 0.0,
            n_points: pts.len(),
            tau_window: (0.0, 0.0),
            degenerate: true,
        };
        return (fit, warning);
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let fit = DecayFit {
        rate: -sxy / sxx,
        n_points: pts.len(),
        tau_window: (pts[0].0.min(pts[pts.len() - 1].0), pts[0].0.max(pts[pts.len() - 1].0)),
        degenerate: false,
    };
    (fit, warning)
}

/// Backward times `τ = T − t` paired with per-node errors, ordered by τ.
fn by_tau(grid: &TimeGrid, err_at_node: impl Fn(usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n_steps();
    (0..=n)
        .map(|m| (grid.t_end() - grid.time(n - m), err_at_node(n - m)))
        .unzip()
}

/// `max_i ‖P_i(τ) − P_i(τ_max)‖_F` over the grid.
pub fn p_decay(sol: &RiccatiSolution) -> (DecayFit, Option<String>) {
    let deep = &sol.p[0];
    let (taus, errs) = by_tau(&sol.grid, |node| {
        sol.p[node]
            .iter()
            .zip(deep)
            .map(|(a, b)| (a - b).norm_fro())
            .fold(0.0, f64::max)
    });
    fit_decay(&taus, &errs)
}

/// `max_i |d_i(τ) − d_i(τ_max)|` with disagreement `d = k − mean(k)·𝟙`.
pub fn k_decay(sol: &OuterSolution) -> (DecayFit, Option<String>) {
    let dis = |k: &[f64]| -> Vec<f64> {
        let mean = k.iter().sum::<f64>() / k.len() as f64;
        k.iter().map(|x| x - mean).collect()
    };
    let deep = dis(&sol.k[0]);
    let (taus, errs) = by_tau(&sol.grid, |node| {
        dis(&sol.k[node])
            .iter()
            .zip(&deep)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    fit_decay(&taus, &errs)
}

/// Two-scale turnpike diagnostics: fitted decay of the inner `P` and the
/// outer disagreement, next to `2ρ_H` and the mean `λ₂`. Purely diagnostic.
pub fn turnpike_report(sol: &HierarchySolution) -> TurnpikeReport {
    let (p_fit, wp) = p_decay(&sol.riccati);
    let (k_fit, wk) = k_decay(&sol.outer);
    let warnings = [wp.map(|w| format!("P: {w}")), wk.map(|w| format!("k: {w}"))]
        .into_iter()
        .flatten()
        .collect();
    let l2 = &sol.diagnostics.lambda2;
    TurnpikeReport {
        p_fit,
        k_fit,
        two_rho_h: 2.0 * sol.diagnostics.rho_h,
        mean_lambda2: l2.iter().sum::<f64>() / l2.len() as f64,
        warnings,
    }
}
