use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{solve_zero_sum, MatrixGame, SaddlePoint};
use crate::numkit::{rk4_backward_step, Matrix, TimeGrid};
use crate::outer::{
    bang_bang_policy, proportional_policy, AffineProfiles, OuterGameSpec, OuterRecorder,
    OuterSolution,
};
use crate::rates::Generator;

use super::{integrated_variance_all, theta_expansion_with, ASModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MacroMode {
    /// Binary actions, local 2×2 game over the full bracket at its vertices.
    /// `flip_bang_bang` reverses the reported indicator policy.
    Affine { flip_bang_bang: bool },
    /// Proportional efforts with quadratic costs `ρ_f f²/2`, `ρ_g g²/2`.
    Quadratic { clamp: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSolution {
    pub q: i32,
    /// `outer.k` holds `U_i(t, q)`; strategies are stored as `[1 − f, f]`.
    pub outer: OuterSolution,
    /// `(node, regime)` where the vertex saddle disagrees with the bracket
    /// re-evaluated at the mixed pair (`φ` is not bilinear in `(f, g)`).
    pub flagged: Vec<(usize, usize)>,
    /// Indicator policy from the gap signs at each node, for comparison.
    pub bang_bang: Vec<Vec<(f64, f64)>>,
}

fn profiles(spec: &OuterGameSpec) -> Result<&AffineProfiles> {
    spec.affine_profiles().ok_or_else(|| {
        Error::InvalidSpec("the market-making macro game needs affine attacker/stabilizer profiles".into())
    })
}

/// `μ_ij = μ⁰_ij + f λ^att_ij − g λ^stab_ij` applied to every row.
fn rates_at(spec: &OuterGameSpec, p: &AffineProfiles, f: f64, g: f64) -> Result<Generator> {
    let n = spec.n_regimes();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mut r = spec.baseline().rate(i, j) + f * p.att[(i, j)] - g * p.stab[(i, j)];
            if r < 0.0 && r > -1e-12 * (1.0 + spec.baseline().rate(i, j)) {
                r = 0.0;
            }
            m[(i, j)] = r;
        }
    }
    Generator::from_rates(&m)
}

/// Row `i` of a generator mixing the rows of `gens` with weights `w`.
fn row_mix(gens: &[(f64, &Generator)], i: usize, n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    for (w, g) in gens {
        for (j, r) in row.iter_mut().enumerate() {
            *r += w * g.rate(i, j);
        }
    }
    row
}

fn coupling(row: &[f64], i: usize, u: &[f64]) -> f64 {
    row.iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, r)| r * (u[j] - u[i]))
        .sum()
}

/// Backward sweep of `−∂_t U_i = min_g max_f {φ_i(q; f, g) + Σ μ_ij(f, g)(U_j − U_i)}`
/// at fixed inventory `q`, with `φ` the θ expansion under the rates `μ(f, g)`.
///
/// Policies are computed at the upper node of each step and held over it.
pub fn solve_macro_as(
    model: &ASModel,
    spec: &OuterGameSpec,
    q: i32,
    grid: &TimeGrid,
    mode: MacroMode,
) -> Result<MacroSolution> {
    model.validate()?;
    let p = profiles(spec)?;
    let n = spec.n_regimes();
    if n != model.n_regimes() {
        return Err(Error::DimensionMismatch(format!(
            "macro spec has {n} regimes, market has {}",
            model.n_regimes()
        )));
    }
    if q.abs() > model.q_max {
        return Err(Error::InvalidModel(format!("inventory {q} outside ±{}", model.q_max)));
    }
    let t_end = grid.t_end();
    let phi_at = |gen: &Generator, tau: f64| -> Result<Vec<f64>> {
        let w = integrated_variance_all(model, gen, tau.max(0.0))?;
        Ok(w.iter().map(|w| theta_expansion_with(model, *w, q, tau.max(0.0))).collect())
    };
    // vertex generators, indexed [f][g]
    let vertices = [
        [rates_at(spec, p, 0.0, 0.0)?, rates_at(spec, p, 0.0, 1.0)?],
        [rates_at(spec, p, 1.0, 0.0)?, rates_at(spec, p, 1.0, 1.0)?],
    ];

    let mut rec = OuterRecorder::new(grid.n_nodes(), n);
    let mut flagged = Vec::new();
    let mut bang = vec![Vec::new(); grid.n_nodes()];
    let mut u = vec![0.0; n];
    let h = grid.step();

    for step in (0..=grid.n_steps()).rev() {
        let tau = t_end - grid.time(step);
        // per regime: weights over generators for the rate row, effort costs
        let mut mixes: Vec<Vec<(f64, Generator)>> = Vec::with_capacity(n);
        let mut efforts = vec![0.0; n];
        let mut saddles = Vec::with_capacity(n);
        for i in 0..n {
            let gaps: Vec<f64> = (0..n).map(|j| u[j] - u[i]).collect();
            bang[step].push(bang_bang_policy(
                &gaps,
                p.att.row(i),
                p.stab.row(i),
                matches!(mode, MacroMode::Affine { flip_bang_bang: true }),
            ));
            match mode {
                MacroMode::Affine { .. } => {
                    let mut pay = Matrix::zeros(2, 2);
                    for a in 0..2 {
                        for b in 0..2 {
                            let gen = &vertices[a][b];
                            let row: Vec<f64> = (0..n).map(|j| gen.rate(i, j)).collect();
                            pay[(a, b)] = phi_at(gen, tau)?[i] + coupling(&row, i, &u);
                        }
                    }
                    let sp = solve_zero_sum(&MatrixGame::new(pay)?);
                    let (f, g) = (sp.row_strategy[1], sp.col_strategy[1]);
                    let cont = rates_at(spec, p, f, g)?;
                    let row: Vec<f64> = (0..n).map(|j| cont.rate(i, j)).collect();
                    let direct = phi_at(&cont, tau)?[i] + coupling(&row, i, &u);
                    if (direct - sp.value).abs() > 1e-9 * sp.value.abs().max(1.0) {
                        flagged.push((step, i));
                    }
                    let mut mix = Vec::with_capacity(4);
                    for a in 0..2 {
                        for b in 0..2 {
                            let w = sp.row_strategy[a] * sp.col_strategy[b];
                            if w > 0.0 {
                                mix.push((w, vertices[a][b].clone()));
                            }
                        }
                    }
                    mixes.push(mix);
                    saddles.push(sp);
                }
                MacroMode::Quadratic { clamp } => {
                    let (f, g) = proportional_policy(
                        &gaps,
                        p.att.row(i),
                        p.stab.row(i),
                        p.rho_f,
                        p.rho_g,
                        clamp,
                    );
                    let gen = rates_at(spec, p, f, g)?;
                    let row: Vec<f64> = (0..n).map(|j| gen.rate(i, j)).collect();
                    let effort = -0.5 * p.rho_f * f * f - 0.5 * p.rho_g * g * g;
                    let value = phi_at(&gen, tau)?[i] + coupling(&row, i, &u) + effort;
                    efforts[i] = effort;
                    mixes.push(vec![(1.0, gen)]);
                    saddles.push(SaddlePoint {
                        row_strategy: vec![1.0 - f, f],
                        col_strategy: vec![1.0 - g, g],
                        value,
                    });
                }
            }
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let refs: Vec<(f64, &Generator)> = mixes[i].iter().map(|(w, g)| (*w, g)).collect();
                row_mix(&refs, i, n)
            })
            .collect();
        let eq_gen = Generator::from_rates(&Matrix::from_rows(&rows)?)?;
        if step == 0 {
            rec.record(0, u, saddles, eq_gen);
            break;
        }
        let mut failure = None;
        let mut rhs = |t: f64, y: &[f64]| -> Vec<f64> {
            let tau = t_end - t;
            (0..n)
                .map(|i| {
                    let mut phi = efforts[i];
                    for (w, gen) in &mixes[i] {
                        match phi_at(gen, tau) {
                            Ok(v) => phi += w * v[i],
                            Err(e) => {
                                failure.get_or_insert(e);
                            }
                        }
                    }
                    phi + coupling(&rows[i], i, y)
                })
                .collect()
        };
        let next = rk4_backward_step(&mut rhs, grid.time(step), &u, h);
        if let Some(e) = failure {
            return Err(e);
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState {
                time: grid.time(step - 1),
            });
        }
        rec.record(step, std::mem::replace(&mut u, next), saddles, eq_gen);
    }
    Ok(MacroSolution {
        q,
        outer: rec.finish(*grid),
        flagged,
        bang_bang: bang,
    })
}
