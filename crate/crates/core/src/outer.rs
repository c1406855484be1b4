//! Outer layer: regime switching rates chosen as the saddle of a per-regime
//! matrix game, with the scalar value `U_i(t, x) = k_i(t)`.
//!
//! Rates are bilinear in the mixed actions, `μ_ij(f, g) = μ̄_ij + fᵀΛ_ij g`,
//! with `f` over the attacker's actions (rows, maximizing) and `g` over the
//! stabilizer's (columns, minimizing).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{solve_zero_sum, MatrixGame, SaddlePoint};
use crate::numkit::{eigenvalues, rk4_backward_step, Matrix, TimeGrid};
use crate::rates::Generator;

/// Per-pair attacker/stabilizer profiles of the affine rate model
/// `μ_ij = μ⁰_ij + f λ^att_ij − g λ^stab_ij`, plus quadratic effort costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineProfiles {
    pub att: Matrix,
    pub stab: Matrix,
    pub rho_f: f64,
    pub rho_g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterGameSpec {
    baseline: Generator,
    /// `lambda[i][j]`, all `n_f × n_g`; diagonal entries are zero.
    lambda: Vec<Vec<Matrix>>,
    affine: Option<AffineProfiles>,
}

impl OuterGameSpec {
    pub fn bilinear(baseline: Generator, lambda: Vec<Vec<Matrix>>) -> Result<Self> {
        let n = baseline.n();
        if lambda.len() != n || lambda.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSpec(format!(
                "perturbation tensor must be {n}x{n} blocks"
            )));
        }
        let (nf, ng) = (lambda[0][0].rows(), lambda[0][0].cols());
        if nf == 0 || ng == 0 {
            return Err(Error::InvalidSpec("empty action set".into()));
        }
        let mut lambda = lambda;
        for i in 0..n {
            for j in 0..n {
                let l = &lambda[i][j];
                if l.rows() != nf || l.cols() != ng {
                    return Err(Error::InvalidSpec(format!(
                        "Lambda[{i}][{j}] is {}x{}, expected {nf}x{ng}",
                        l.rows(),
                        l.cols()
                    )));
                }
                if !l.is_finite() {
                    return Err(Error::NonFinite("rate perturbation"));
                }
                if i == j {
                    lambda[i][j] = Matrix::zeros(nf, ng);
                    continue;
                }
                // bilinear ⇒ the minimum over the simplices sits at a vertex
                let worst = l.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
                let rate = baseline.rate(i, j) + worst;
                if rate < 0.0 {
                    return Err(Error::NegativeRate { from: i, to: j, rate });
                }
            }
        }
        Ok(Self {
            baseline,
            lambda,
            affine: None,
        })
    }

    /// Binary actions `{off, att}` × `{off, stab}` with
    /// `Λ_ij = [[0, −λ^stab_ij], [λ^att_ij, λ^att_ij − λ^stab_ij]]`.
    pub fn affine(baseline: Generator, profiles: AffineProfiles) -> Result<Self> {
        let n = baseline.n();
        let (att, stab) = (&profiles.att, &profiles.stab);
        for (name, m) in [("att", att), ("stab", stab)] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::InvalidSpec(format!("lambda_{name} must be {n}x{n}")));
            }
            if !m.is_finite() || m.as_slice().iter().any(|x| *x < 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "lambda_{name} entries must be finite and nonnegative"
                )));
            }
        }
        if !(profiles.rho_f > 0.0 && profiles.rho_g > 0.0) {
            return Err(Error::InvalidSpec("effort costs rho_f, rho_g must be positive".into()));
        }
        let lambda = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let (a, s) = (att[(i, j)], stab[(i, j)]);
                        Matrix::from_rows(&[vec![0.0, -s], vec![a, a - s]]).expect("2x2")
                    })
                    .collect()
            })
            .collect();
        let mut spec = Self::bilinear(baseline, lambda)?;
        spec.affine = Some(profiles);
        Ok(spec)
    }

    /// No strategic influence: `Λ ≡ 0` on 1×1 action sets.
    pub fn passive(baseline: Generator) -> Self {
        let n = baseline.n();
        Self {
            lambda: vec![vec![Matrix::zeros(1, 1); n]; n],
            baseline,
            affine: None,
        }
    }

    pub fn n_regimes(&self) -> usize {
        self.baseline.n()
    }

    pub fn baseline(&self) -> &Generator {
        &self.baseline
    }

    pub fn lambda(&self, i: usize, j: usize) -> &Matrix {
        &self.lambda[i][j]
    }

    pub fn action_counts(&self) -> (usize, usize) {
        (self.lambda[0][0].rows(), self.lambda[0][0].cols())
    }

    pub fn affine_profiles(&self) -> Option<&AffineProfiles> {
        self.affine.as_ref()
    }
}

/// `M_i = Σ_{j≠i} Λ_ij (k_j − k_i)`.
pub fn local_game_matrix(k: &[f64], spec: &OuterGameSpec, i: usize) -> Result<MatrixGame> {
    let (nf, ng) = spec.action_counts();
    let mut m = Matrix::zeros(nf, ng);
    for (j, kj) in k.iter().enumerate() {
        if j != i {
            let gap = kj - k[i];
            if gap != 0.0 {
                m = &m + &spec.lambda(i, j).scale(gap);
            }
        }
    }
    MatrixGame::new(m)
}

/// Row `i` of the equilibrium generator, `μ*_ij = μ̄_ij + fᵀΛ_ij g` and
/// `μ*_ii = −Σ_{j≠i} μ*_ij`.
pub fn equilibrium_rates(f: &[f64], g: &[f64], spec: &OuterGameSpec, i: usize) -> Result<Vec<f64>> {
    let n = spec.n_regimes();
    let (nf, ng) = spec.action_counts();
    if f.len() != nf || g.len() != ng {
        return Err(Error::DimensionMismatch(format!(
            "strategies of length ({}, {}) for {nf}x{ng} actions",
            f.len(),
            g.len()
        )));
    }
    let mut row = vec![0.0; n];
    for j in (0..n).filter(|&j| j != i) {
        let l = spec.lambda(i, j);
        let mut bil = 0.0;
        for r in 0..nf {
            for c in 0..ng {
                bil += f[r] * l[(r, c)] * g[c];
            }
        }
        let mut rate = spec.baseline().rate(i, j) + bil;
        if rate < 0.0 {
            // roundoff at a vertex that is exactly zero
            if rate > -1e-12 * (1.0 + spec.baseline().rate(i, j).abs()) {
                rate = 0.0;
            } else {
                return Err(Error::NegativeRate { from: i, to: j, rate });
            }
        }
        row[j] = rate;
        row[i] -= rate;
    }
    Ok(row)
}

/// `−k̇_i = φ_i + Σ_{j≠i} μ*_ij (k_j − k_i)`.
pub fn outer_rhs(k: &[f64], phi: &[f64], rates: &Generator) -> Vec<f64> {
    (0..k.len()).map(|i| phi[i] + rates.coupling(i, k)).collect()
}

/// Stability gaps `Δ_ij = k_j − k_i`.
pub fn stability_gaps(k: &[f64]) -> Matrix {
    let n = k.len();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] = k[j] - k[i];
        }
    }
    d
}

/// Indicators `f = 𝕀{Σ_j λ^att_ij Δ_ij < 0}`, `g = 𝕀{Σ_j λ^stab_ij Δ_ij < 0}`.
///
/// `flip` reverses both inequalities (`> 0`).
pub fn bang_bang_policy(gaps: &[f64], att: &[f64], stab: &[f64], flip: bool) -> (f64, f64) {
    let sa: f64 = att.iter().zip(gaps).map(|(l, d)| l * d).sum();
    let ss: f64 = stab.iter().zip(gaps).map(|(l, d)| l * d).sum();
    let on = |s: f64| if flip { s > 0.0 } else { s < 0.0 };
    (f64::from(u8::from(on(sa))), f64::from(u8::from(on(ss))))
}

/// `f = [Σ λ^att_ij Δ_ij]⁺ / ρ_f`, `g = [Σ λ^stab_ij (−Δ_ij)]⁺ / ρ_g`,
/// optionally clamped to `[0, 1]`.
pub fn proportional_policy(
    gaps: &[f64],
    att: &[f64],
    stab: &[f64],
    rho_f: f64,
    rho_g: f64,
    clamp: bool,
) -> (f64, f64) {
    let sa: f64 = att.iter().zip(gaps).map(|(l, d)| l * d).sum();
    let ss: f64 = stab.iter().zip(gaps).map(|(l, d)| -l * d).sum();
    let f = sa.max(0.0) / rho_f;
    let g = ss.max(0.0) / rho_g;
    if clamp {
        (f.min(1.0), g.min(1.0))
    } else {
        (f, g)
    }
}

/// Smallest strictly positive real part in the spectrum of `−Π`
/// (0 when none exceeds `1e-12`).
pub fn laplacian_spectral_gap(rates: &Generator) -> Result<f64> {
    let l = rates.matrix().scale(-1.0);
    let gap = eigenvalues(&l)?
        .iter()
        .map(|z| z.re)
        .filter(|re| *re > 1e-12)
        .fold(f64::INFINITY, f64::min);
    Ok(if gap.is_finite() { gap } else { 0.0 })
}

/// Running cost supplied to the outer sweep.
pub trait RunningCost {
    /// `φ` at RK4 `stage` (0..4) of the backward step from node `step + 1`
    /// to node `step`, evaluated at time `t`.
    fn phi(&self, step: usize, stage: usize, t: f64) -> Vec<f64>;
}

impl<F: Fn(f64) -> Vec<f64>> RunningCost for F {
    fn phi(&self, _step: usize, _stage: usize, t: f64) -> Vec<f64> {
        self(t)
    }
}

/// Running cost tabulated per RK4 stage, `stages[step][stage][regime]`.
pub struct StagedCost<'a>(pub &'a [[Vec<f64>; 4]]);

impl RunningCost for StagedCost<'_> {
    fn phi(&self, step: usize, stage: usize, _t: f64) -> Vec<f64> {
        self.0[step][stage].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterSolution {
    pub grid: TimeGrid,
    /// `k[node][regime]`
    pub k: Vec<Vec<f64>>,
    /// `f[node][regime]` attacker mixed strategy
    pub f: Vec<Vec<Vec<f64>>>,
    /// `g[node][regime]` stabilizer mixed strategy
    pub g: Vec<Vec<Vec<f64>>>,
    /// Equilibrium generator at each node; the step ending at node `n`
    /// (from `n + 1`) used `rates[n + 1]`.
    pub rates: Vec<Generator>,
    /// Local game value per node and regime.
    pub values: Vec<Vec<f64>>,
}

/// Saddles of every local game at `k` and the induced generator.
pub(crate) fn equilibrium_at(
    k: &[f64],
    spec: &OuterGameSpec,
) -> Result<(Vec<SaddlePoint>, Generator)> {
    let n = spec.n_regimes();
    let mut saddles = Vec::with_capacity(n);
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        let sp = solve_zero_sum(&local_game_matrix(k, spec, i)?);
        let row = equilibrium_rates(&sp.row_strategy, &sp.col_strategy, spec, i)?;
        for (j, x) in row.into_iter().enumerate() {
            q[(i, j)] = x;
        }
        saddles.push(sp);
    }
    Ok((saddles, Generator::from_rates(&q)?))
}

pub(crate) struct OuterRecorder {
    pub k: Vec<Vec<f64>>,
    pub f: Vec<Vec<Vec<f64>>>,
    pub g: Vec<Vec<Vec<f64>>>,
    pub rates: Vec<Generator>,
    pub values: Vec<Vec<f64>>,
}

impl OuterRecorder {
    pub fn new(n_nodes: usize, n_regimes: usize) -> Self {
        Self {
            k: vec![vec![0.0; n_regimes]; n_nodes],
            f: vec![Vec::new(); n_nodes],
            g: vec![Vec::new(); n_nodes],
            rates: vec![Generator::zeros(n_regimes); n_nodes],
            values: vec![Vec::new(); n_nodes],
        }
    }

    pub fn record(&mut self, node: usize, k: Vec<f64>, saddles: Vec<SaddlePoint>, gen: Generator) {
        self.k[node] = k;
        self.values[node] = saddles.iter().map(|s| s.value).collect();
        let (f, g) = saddles
            .into_iter()
            .map(|s| (s.row_strategy, s.col_strategy))
            .unzip();
        self.f[node] = f;
        self.g[node] = g;
        self.rates[node] = gen;
    }

    pub fn finish(self, grid: TimeGrid) -> OuterSolution {
        OuterSolution {
            grid,
            k: self.k,
            f: self.f,
            g: self.g,
            rates: self.rates,
            values: self.values,
        }
    }
}

/// Backward sweep from `k(T) = 0`. At each step the saddle and `μ*` are
/// computed from the state at the upper node and held fixed over the step.
pub fn solve_outer(
    phi: &impl RunningCost,
    spec: &OuterGameSpec,
    grid: &TimeGrid,
) -> Result<OuterSolution> {
    let n = spec.n_regimes();
    let n_steps = grid.n_steps();
    let h = grid.step();
    let mut rec = OuterRecorder::new(grid.n_nodes(), n);
    let mut k = vec![0.0; n];
    for step in (0..=n_steps).rev() {
        let (saddles, gen) = equilibrium_at(&k, spec)?;
        if step == 0 {
            rec.record(0, k, saddles, gen);
            break;
        }
        let mut stage = 0;
        let mut rhs = |t: f64, y: &[f64]| {
            let p = phi.phi(step - 1, stage, t);
            stage += 1;
            outer_rhs(y, &p, &gen)
        };
        let next = rk4_backward_step(&mut rhs, grid.time(step), &k, h);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState {
                time: grid.time(step - 1),
            });
        }
        rec.record(step, std::mem::replace(&mut k, next), saddles, gen);
    }
    Ok(rec.finish(*grid))
}
