//! Independent reference computations shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regime_games::asgame::ASModel;
use regime_games::game::MatrixGame;
use regime_games::numkit::Matrix;

/// Brute-force backward sweep: per-step frozen rates from a 1/200 simplex
/// grid minimax at the upper node, then one RK4 step of `−k̇ = φ + Πk`.
pub fn grid_minimax_sweep(spec_lambda: &[[Matrix; 2]; 2], mu: f64, phi: [f64; 2], t: f64, n: usize) -> [f64; 2] {
    let res = 200;
    let simplex: Vec<[f64; 2]> = (0..=res).map(|a| [1.0 - a as f64 / res as f64, a as f64 / res as f64]).collect();
    let h = t / n as f64;
    let mut k = [0.0; 2];
    for _ in 0..n {
        let mut pi = [[0.0; 2]; 2];
        for i in 0..2 {
            let j = 1 - i;
            let m = spec_lambda[i][j].scale(k[j] - k[i]);
            let pay = |f: &[f64; 2], g: &[f64; 2]| -> f64 {
                (0..2).map(|r| (0..2).map(|c| f[r] * m[(r, c)] * g[c]).sum::<f64>()).sum()
            };
            // minimizer: argmin over the grid of the worst case
            let mut best_g = simplex[0];
            let mut best_val = f64::INFINITY;
            for g in &simplex {
                let worst = simplex.iter().map(|f| pay(f, g)).fold(f64::NEG_INFINITY, f64::max);
                if worst < best_val - 1e-15 {
                    best_val = worst;
                    best_g = *g;
                }
            }
            let mut best_f = simplex[0];
            let mut best_low = f64::NEG_INFINITY;
            for f in &simplex {
                let low = simplex.iter().map(|g| pay(f, g)).fold(f64::INFINITY, f64::min);
                if low > best_low + 1e-15 {
                    best_low = low;
                    best_f = *f;
                }
            }
            let l = &spec_lambda[i][j];
            let bil: f64 = (0..2).map(|r| (0..2).map(|c| best_f[r] * l[(r, c)] * best_g[c]).sum::<f64>()).sum();
            pi[i][j] = mu + bil;
            pi[i][i] = -pi[i][j];
        }
        let g = |y: [f64; 2]| -> [f64; 2] {
            [
                phi[0] + pi[0][0] * y[0] + pi[0][1] * y[1],
                phi[1] + pi[1][0] * y[0] + pi[1][1] * y[1],
            ]
        };
        let add = |y: [f64; 2], d: [f64; 2], s: f64| [y[0] + s * d[0], y[1] + s * d[1]];
        let k1 = g(k);
        let k2 = g(add(k, k1, 0.5 * h));
        let k3 = g(add(k, k2, 0.5 * h));
        let k4 = g(add(k, k3, h));
        k = [
            k[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            k[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
    }
    k
}

/// Forward-in-τ RK4 of the nonlinear θ system
/// `dθ/dτ = −½γ(σ²+ξγ)q² + Σ_sides (Λ/γ)(1 − e^{−γ(u* + Δθ)}) + Σ_j (μ_ij/γ)(1 − e^{−γ(θ_j − θ_i)})`.
pub fn nonlinear_theta(m: &ASModel, tau: f64, n: usize) -> Vec<f64> {
    let g = m.gamma;
    let u = (1.0 + g / m.k).ln() / g;
    let lam = m.a * (-m.k * u).exp();
    let nl = (2 * m.q_max + 1) as usize;
    let nr = m.sigma.len();
    let idx = |i: usize, q: i32| i * nl + (q + m.q_max) as usize;
    let rhs = |th: &[f64]| -> Vec<f64> {
        let mut d = vec![0.0; th.len()];
        for i in 0..nr {
            for q in -m.q_max..=m.q_max {
                let here = th[idx(i, q)];
                let qf = q as f64;
                let mut v = -0.5 * g * (m.sigma[i].powi(2) + m.xi * g) * qf * qf;
                if q > -m.q_max {
                    v += lam / g * (1.0 - (-g * (u + th[idx(i, q - 1)] - here)).exp());
                }
                if q < m.q_max {
                    v += lam / g * (1.0 - (-g * (u + th[idx(i, q + 1)] - here)).exp());
                }
                for j in (0..nr).filter(|&j| j != i) {
                    v += m.rates.rate(i, j) / g * (1.0 - (-g * (th[idx(j, q)] - here)).exp());
                }
                d[idx(i, q)] = v;
            }
        }
        d
    };
    let h = tau / n as f64;
    let mut th = vec![0.0; nr * nl];
    for _ in 0..n {
        let add = |y: &[f64], k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
        let k1 = rhs(&th);
        let k2 = rhs(&add(&th, &k1, 0.5 * h));
        let k3 = rhs(&add(&th, &k2, 0.5 * h));
        let k4 = rhs(&add(&th, &k3, h));
        for r in 0..th.len() {
            th[r] += h / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]);
        }
    }
    th
}

/// Bar-level two-state chain switching with probability `μΔ` per bar.
pub fn bar_chain(rates: [f64; 2], bar_days: f64, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0;
    (0..n)
        .map(|_| {
            let here = s;
            if rng.random::<f64>() < rates[s] * bar_days {
                s = 1 - s;
            }
            here
        })
        .collect()
}

/// Value of a 2×2 game without a pure saddle.
pub fn closed_form(a: f64, b: f64, c: f64, d: f64) -> f64 {
    (a * d - b * c) / (a + d - b - c)
}

pub fn has_pure_saddle(g: &MatrixGame) -> bool {
    let a = g.payoff();
    (0..a.rows()).any(|r| {
        (0..a.cols()).any(|c| {
            let v = a[(r, c)];
            (0..a.cols()).all(|cc| a[(r, cc)] >= v) && (0..a.rows()).all(|rr| a[(rr, c)] <= v)
        })
    })
}
