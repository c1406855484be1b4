use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{matrix_exponential, Matrix, TimeGrid};
use crate::rates::{Generator, RateSchedule};
use crate::SCHEMA_VERSION;

use super::{build_generator, ASModel};

/// `θ_i(t, q)` on a time grid, stored per node as the stacked vector
/// indexed by [`ASModel::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTable {
    pub grid: TimeGrid,
    pub gamma: f64,
    pub n_regimes: usize,
    pub q_max: i32,
    pub theta: Vec<Vec<f64>>,
}

impl ThetaTable {
    fn idx(&self, i: usize, q: i32) -> usize {
        i * (2 * self.q_max as usize + 1) + (q + self.q_max) as usize
    }

    pub fn theta(&self, node: usize, i: usize, q: i32) -> f64 {
        self.theta[node][self.idx(i, q)]
    }

    /// `v = e^{−γθ}`.
    pub fn v(&self, node: usize, i: usize, q: i32) -> f64 {
        (-self.gamma * self.theta(node, i, q)).exp()
    }

    /// Backward time `T − t` of a node.
    pub fn tau(&self, node: usize) -> f64 {
        self.grid.t_end() - self.grid.time(node)
    }
}

/// Log-scaled propagation of `v`: the state is `u·e^{log_scale}` with
/// `max u = 1`, which keeps long horizons inside floating-point range.
struct ScaledV {
    u: Vec<f64>,
    log_scale: f64,
}

impl ScaledV {
    fn terminal(n: usize) -> Self {
        Self {
            u: vec![1.0; n],
            log_scale: 0.0,
        }
    }

    fn apply(&mut self, e: &Matrix) -> Result<()> {
        let next = e.mat_vec(&self.u)?;
        let top = next.iter().cloned().fold(0.0, f64::max);
        if !(top.is_finite() && top > 0.0) || next.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Accuracy(
                "v lost positivity; the horizon is too long for the propagator".into(),
            ));
        }
        self.u = next.into_iter().map(|x| x / top).collect();
        self.log_scale += top.ln();
        Ok(())
    }

    fn theta(&self, gamma: f64) -> Vec<f64> {
        self.u
            .iter()
            .map(|u| -(u.ln() + self.log_scale) / gamma)
            .collect()
    }
}

/// Splits `τ` so each propagator has `‖M h‖₁ ≤ 64`.
fn segments(m: &Matrix, tau: f64) -> usize {
    ((m.norm1() * tau / 64.0).ceil() as usize).max(1)
}

/// `θ(τ) = −(1/γ) log v` with `v = exp(Mτ) 𝟙` for constant rates.
pub fn solve_theta_exact(model: &ASModel, rates: &Generator, tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidModel(format!("tau must be finite and >= 0, got {tau}")));
    }
    let m = build_generator(model, rates)?;
    let mut v = ScaledV::terminal(m.rows());
    if tau > 0.0 {
        let n = segments(&m, tau);
        let e = matrix_exponential(&m.scale(tau / n as f64))?;
        for _ in 0..n {
            v.apply(&e)?;
        }
    }
    Ok(v.theta(model.gamma))
}

/// θ at every node of `grid` (`θ(T) = 0`), stepping the exact propagator
/// backward. The step ending at node `n` uses the rates at node `n + 1`.
pub fn solve_theta_table(
    model: &ASModel,
    rates: &RateSchedule,
    grid: &TimeGrid,
) -> Result<ThetaTable> {
    model.validate()?;
    rates.check(model.n_regimes(), grid.n_nodes())?;
    let n_steps = grid.n_steps();
    let h = grid.step();
    let size = model.n_regimes() * model.n_levels();
    let mut theta = vec![Vec::new(); n_steps + 1];
    theta[n_steps] = vec![0.0; size];
    let mut v = ScaledV::terminal(size);
    let mut cached: Option<(Generator, Vec<Matrix>)> = None;
    for step in (0..n_steps).rev() {
        let gen = rates.at_node(step + 1);
        if cached.as_ref().is_none_or(|(g, _)| g != gen) {
            let m = build_generator(model, gen)?;
            let n = segments(&m, h);
            let e = matrix_exponential(&m.scale(h / n as f64))?;
            cached = Some((gen.clone(), vec![e; n]));
        }
        for e in &cached.as_ref().expect("filled above").1 {
            v.apply(e)?;
        }
        theta[step] = v.theta(model.gamma);
    }
    Ok(ThetaTable {
        grid: *grid,
        gamma: model.gamma,
        n_regimes: model.n_regimes(),
        q_max: model.q_max,
        theta,
    })
}

/// Per-side offsets from the mid-price; `None` marks a suppressed side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotePair {
    pub u_a: Option<f64>,
    pub u_b: Option<f64>,
}

impl QuotePair {
    /// `u_a + u_b` when both sides are quoted.
    pub fn total(&self) -> Option<f64> {
        Some(self.u_a? + self.u_b?)
    }
}

/// First-order condition of `max_u Λ(u)(1 − e^{−γ(u + Δθ)})`:
/// `u = (1/γ)ln(1 + γ/k) − Δθ`, clamped at 0, with
/// `Δθ_a = θ(q−1) − θ(q)` and `Δθ_b = θ(q+1) − θ(q)` read from the table.
pub fn optimal_quotes(table: &ThetaTable, model: &ASModel, i: usize, q: i32, node: usize) -> QuotePair {
    let base = model.base_quote();
    let here = table.theta(node, i, q);
    let u_a = model
        .ask_active(q)
        .then(|| (base - (table.theta(node, i, q - 1) - here)).max(0.0));
    let u_b = model
        .bid_active(q)
        .then(|| (base - (table.theta(node, i, q + 1) - here)).max(0.0));
    QuotePair { u_a, u_b }
}

/// CSV with columns `schema_version,t,regime,q,theta,u_a,u_b` (`t` in
/// years, empty quote = suppressed side).
pub fn write_theta_csv<W: Write>(table: &ThetaTable, model: &ASModel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Input(format!("writing theta table: {e}"));
    w.write_record(["schema_version", "t", "regime", "q", "theta", "u_a", "u_b"])
        .map_err(io)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for node in 0..table.grid.n_nodes() {
        let t = table.grid.time(node);
        for i in 0..table.n_regimes {
            for q in -table.q_max..=table.q_max {
                let qp = optimal_quotes(table, model, i, q, node);
                w.write_record([
                    SCHEMA_VERSION.to_string(),
                    t.to_string(),
                    i.to_string(),
                    q.to_string(),
                    table.theta(node, i, q).to_string(),
                    opt(qp.u_a),
                    opt(qp.u_b),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush()
        .map_err(|e| Error::Input(format!("writing theta table: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_is_zero() {
        let m = ASModel::baseline();
        assert!(solve_theta_exact(&m, &m.rates, 0.0).unwrap().iter().all(|x| *x == 0.0));
        let grid = TimeGrid::new(0.0, m.horizon, 4).unwrap();
        let t = solve_theta_table(&m, &RateSchedule::Constant(m.rates.clone()), &grid).unwrap();
        assert!(t.theta[4].iter().all(|x| *x == 0.0));
        assert_eq!(t.v(4, 1, -3), 1.0);
    }

    #[test]
    fn zero_generator_keeps_theta_zero() {
        let mut m = ASModel::baseline();
        m.a = 0.0;
        m.sigma = vec![0.0, 0.0];
        m.xi = 0.0;
        let th = solve_theta_exact(&m, &Generator::zeros(2), 0.3).unwrap();
        assert!(th.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn flat_theta_quotes_base() {
        let m = ASModel::baseline();
        let grid = TimeGrid::new(0.0, m.horizon, 1).unwrap();
        let t = solve_theta_table(&m, &RateSchedule::Constant(m.rates.clone()), &grid).unwrap();
        let qp = optimal_quotes(&t, &m, 0, 0, 1);
        assert!((qp.u_a.unwrap() - 0.0999001).abs() < 1e-7);
        assert_eq!(qp.u_a, qp.u_b);
        assert_eq!(optimal_quotes(&t, &m, 0, 10, 1).u_b, None);
        assert_eq!(optimal_quotes(&t, &m, 0, -10, 1).u_a, None);
    }

    #[test]
    fn table_matches_direct_solve() {
        let m = ASModel::baseline();
        let grid = TimeGrid::new(0.0, m.horizon, 8).unwrap();
        let t = solve_theta_table(&m, &RateSchedule::Constant(m.rates.clone()), &grid).unwrap();
        let direct = solve_theta_exact(&m, &m.rates, m.horizon).unwrap();
        for (a, b) in t.theta[0].iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}
