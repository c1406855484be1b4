//! Adversarial Avellaneda–Stoikov market making under regime switching.
//!
//! The market maker's CARA value is `−exp(−γ(m + qS + θ_i(t, q)))`, so `θ` is
//! a certainty-equivalent *value*: inventory risk lowers it, spread income
//! raises it. The transformed `v = e^{−γθ}` solves `dv/dτ = M v`, `v(τ=0) = 𝟙`,
//! with `τ = T − t` and the generator `M` of [`build_generator`].

mod generator;
mod macro_game;
mod theta;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{expm_action, matrix_exponential, Matrix};
use crate::rates::Generator;

pub use generator::build_generator;
pub use macro_game::{solve_macro_as, MacroMode, MacroSolution};
pub use theta::{
    optimal_quotes, solve_theta_exact, solve_theta_table, write_theta_csv, QuotePair, ThetaTable,
};

pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;
pub const HOURS_PER_YEAR: f64 = 365.0 * 24.0;
pub const DAYS_PER_YEAR: f64 = 365.0;

/// Market-making parameters. Rates and intensities are per year, `σ` is
/// the annualized price volatility in currency units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ASModel {
    pub gamma: f64,
    pub xi: f64,
    /// Base fill intensity `A` of `Λ(u) = A e^{−ku}`.
    pub a: f64,
    pub k: f64,
    pub sigma: Vec<f64>,
    pub q_max: i32,
    pub horizon: f64,
    pub dt: f64,
    pub s0: f64,
    /// Baseline regime generator.
    pub rates: Generator,
}

impl ASModel {
    /// Calibrated BTC-USD defaults: 12 hours in 15-second steps, two regimes
    /// switching 30 times a day each way.
    pub fn baseline() -> Self {
        let mu = 30.0 * DAYS_PER_YEAR;
        Self {
            gamma: 0.02,
            xi: 10.0,
            a: 250_000.0,
            k: 10.0,
            sigma: vec![0.2253, 0.5305],
            q_max: 10,
            horizon: 12.0 / HOURS_PER_YEAR,
            dt: 15.0 / SECONDS_PER_YEAR,
            s0: 90_863.90,
            rates: Generator::two_state(mu, mu).expect("positive rates"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(what.to_string()));
        let finite = [self.gamma, self.xi, self.a, self.k, self.horizon, self.dt, self.s0]
            .iter()
            .chain(&self.sigma)
            .all(|x| x.is_finite());
        if !finite {
            return bad("market-making parameters must be finite");
        }
        if self.gamma <= 0.0 {
            return bad("gamma must be > 0");
        }
        if self.xi < 0.0 {
            return bad("xi must be >= 0");
        }
        if self.a < 0.0 {
            return bad("A must be >= 0");
        }
        if self.k <= 0.0 {
            return bad("k must be > 0");
        }
        if self.sigma.is_empty() || self.sigma.iter().any(|s| *s < 0.0) {
            return bad("sigma needs one nonnegative entry per regime");
        }
        if self.q_max < 0 {
            return bad("q_max must be >= 0");
        }
        if self.horizon <= 0.0 || self.dt <= 0.0 {
            return bad("horizon and dt must be > 0");
        }
        if self.rates.n() != self.sigma.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} volatilities but {} regimes in the rate matrix",
                self.sigma.len(),
                self.rates.n()
            )));
        }
        Ok(())
    }

    pub fn n_regimes(&self) -> usize {
        self.sigma.len()
    }

    /// Number of inventory levels `2 Q_max + 1`.
    pub fn n_levels(&self) -> usize {
        2 * self.q_max as usize + 1
    }

    pub fn inventories(&self) -> impl Iterator<Item = i32> {
        -self.q_max..=self.q_max
    }

    /// Position of `(regime, q)` in the stacked state vector.
    pub fn index(&self, regime: usize, q: i32) -> usize {
        regime * self.n_levels() + (q + self.q_max) as usize
    }

    /// Fill-optimal offset with no inventory shadow cost, `(1/γ) ln(1 + γ/k)`.
    pub fn base_quote(&self) -> f64 {
        (self.gamma / self.k).ln_1p() / self.gamma
    }

    pub fn intensity(&self, u: f64) -> f64 {
        self.a * (-self.k * u).exp()
    }

    /// `(1 + γ/k)^{−k/γ}`.
    pub fn rent_factor(&self) -> f64 {
        (-(self.k / self.gamma) * (self.gamma / self.k).ln_1p()).exp()
    }

    /// An ask fill lowers `q`, so no ask is quoted at `−Q_max`.
    pub fn ask_active(&self, q: i32) -> bool {
        q > -self.q_max
    }

    /// A bid fill raises `q`, so no bid is quoted at `+Q_max`.
    pub fn bid_active(&self, q: i32) -> bool {
        q < self.q_max
    }

    /// Same market with predator pressure folded into the variance:
    /// `(σ² + γξ, ξ = 0)`.
    pub fn isomorphic_without_predator(&self) -> Self {
        let mut m = self.clone();
        m.sigma = self
            .sigma
            .iter()
            .map(|s| (s * s + self.gamma * self.xi).sqrt())
            .collect();
        m.xi = 0.0;
        m
    }

    /// The predator-blind market used by the vanilla quoting policy.
    pub fn predator_blind(&self) -> Self {
        Self { xi: 0.0, ..self.clone() }
    }
}

/// Predator's optimal drift `w* = −ξγq`.
pub fn predator_drift(q: i32, model: &ASModel) -> f64 {
    -model.xi * model.gamma * f64::from(q)
}

/// `w_i(τ) = ∫₀^τ [e^{Qu} s]_i du` with `s_j = σ_j²`, by composite
/// Gauss–Legendre quadrature of `e^{Qu} s`.
pub fn integrated_variance(model: &ASModel, rates: &Generator, i: usize, tau: f64) -> Result<f64> {
    check_rates(model, rates)?;
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::InvalidModel(format!("tau must be finite and >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(0.0);
    }
    const NODES: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let s = variances(model);
    let q = rates.matrix();
    let panels = ((q.norm1() * tau).ceil() as usize).clamp(8, 100_000);
    let width = tau / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            let u = mid + 0.5 * width * x;
            total += 0.5 * width * w * expm_action(q, &s, u)?[i];
        }
    }
    Ok(total)
}

/// All `w_i(τ)` at once from the augmented exponential
/// `exp([[Q, s], [0, 0]] τ)`, whose last column holds `∫₀^τ e^{Qu} s du`.
pub fn integrated_variance_all(model: &ASModel, rates: &Generator, tau: f64) -> Result<Vec<f64>> {
    check_rates(model, rates)?;
    let n = model.n_regimes();
    let s = variances(model);
    let mut b = Matrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = rates.rate(i, j) * tau;
        }
        b[(i, n)] = s[i] * tau;
    }
    let e = matrix_exponential(&b)?;
    Ok((0..n).map(|i| e[(i, n)]).collect())
}

/// Second-order form `σ_i²τ + ½ Σ_{j≠i} μ_ij (σ_j² − σ_i²) τ²`.
pub fn integrated_variance_expansion(model: &ASModel, rates: &Generator, i: usize, tau: f64) -> f64 {
    let s = variances(model);
    let mix: f64 = (0..s.len())
        .filter(|&j| j != i)
        .map(|j| rates.rate(i, j) * (s[j] - s[i]))
        .sum();
    s[i] * tau + 0.5 * mix * tau * tau
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRisk {
    /// Instantaneous `σ_i² + ξγ`.
    pub variance: f64,
    /// Horizon-integrated `C_i(τ) = γ w_i(τ) + γ² ξ τ`.
    pub risk_factor: f64,
}

pub fn effective_volatility(
    model: &ASModel,
    rates: &Generator,
    i: usize,
    tau: f64,
) -> Result<EffectiveRisk> {
    let w = integrated_variance_all(model, rates, tau)?[i];
    Ok(EffectiveRisk {
        variance: model.sigma[i].powi(2) + model.xi * model.gamma,
        risk_factor: model.gamma * w + model.gamma.powi(2) * model.xi * tau,
    })
}

/// Short-horizon penalty-form expansion
/// `(q²/2)(γ w_i(τ) + γ²ξτ) − n_sides (A/γ)(1 + γ/k)^{−k/γ} τ`,
/// where `n_sides` counts the quoted sides (2 inside the band, 1 at a bound).
///
/// This is a *cost*: compare it with `−θ` of [`ThetaTable`].
pub fn theta_expansion(
    model: &ASModel,
    rates: &Generator,
    i: usize,
    q: i32,
    tau: f64,
) -> Result<f64> {
    let w = integrated_variance_all(model, rates, tau)?[i];
    Ok(theta_expansion_with(model, w, q, tau))
}

pub(crate) fn theta_expansion_with(model: &ASModel, w: f64, q: i32, tau: f64) -> f64 {
    let g = model.gamma;
    let sides = f64::from(u8::from(model.ask_active(q)) + u8::from(model.bid_active(q)));
    let qf = f64::from(q);
    0.5 * qf * qf * (g * w + g * g * model.xi * tau) - sides * model.a / g * model.rent_factor() * tau
}

/// Outer running cost for the macro game: the θ expansion itself.
pub fn macro_theta_cost(
    model: &ASModel,
    rates: &Generator,
    i: usize,
    q: i32,
    tau: f64,
) -> Result<f64> {
    theta_expansion(model, rates, i, q, tau)
}

fn variances(model: &ASModel) -> Vec<f64> {
    model.sigma.iter().map(|s| s * s).collect()
}

fn check_rates(model: &ASModel, rates: &Generator) -> Result<()> {
    if rates.n() != model.n_regimes() {
        return Err(Error::DimensionMismatch(format!(
            "{}-regime rates for a {}-regime market",
            rates.n(),
            model.n_regimes()
        )));
    }
    Ok(())
}
