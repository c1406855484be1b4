//! Finite two-player zero-sum matrix games.
//!
//! Orientation: rows belong to the maximizer `f`, columns to the minimizer
//! `g`, and the payoff of `(f, g)` is `fᵀ A g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    payoff: Matrix,
}

impl MatrixGame {
    pub fn new(payoff: Matrix) -> Result<Self> {
        if payoff.rows() == 0 || payoff.cols() == 0 {
            return Err(Error::InvalidSpec("game matrix must be at least 1x1".into()));
        }
        if !payoff.is_finite() {
            return Err(Error::NonFinite("game payoff"));
        }
        Ok(Self { payoff })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn payoff(&self) -> &Matrix {
        &self.payoff
    }

    pub fn rows(&self) -> usize {
        self.payoff.rows()
    }

    pub fn cols(&self) -> usize {
        self.payoff.cols()
    }

    /// `fᵀ A g`.
    pub fn expected(&self, f: &[f64], g: &[f64]) -> f64 {
        let a = &self.payoff;
        let mut s = 0.0;
        for (r, fr) in f.iter().enumerate() {
            for (c, gc) in g.iter().enumerate() {
                s += fr * a[(r, c)] * gc;
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
    pub value: f64,
}

/// Mixed saddle point of `game`.
///
/// Pure saddles are searched first in row-major order, so when several
/// exist the one on the lowest row (then lowest column) index wins; with the
/// usual "index 0 = idle" action labelling this keeps both players idle on
/// a flat game. Remaining 2×2 games use the closed form, larger ones a
/// simplex solve of the standard LP.
pub fn solve_zero_sum(game: &MatrixGame) -> SaddlePoint {
    if let Some(sp) = pure_saddle(game) {
        return sp;
    }
    if game.rows() == 2 && game.cols() == 2 {
        return closed_form_2x2(game);
    }
    simplex_saddle(game)
}

/// Largest gain either player can obtain by a pure deviation from `(f, g)`.
pub fn best_response_gap(game: &MatrixGame, f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != game.rows() || g.len() != game.cols() {
        return Err(Error::DimensionMismatch(format!(
            "strategies of length ({}, {}) for a {}x{} game",
            f.len(),
            g.len(),
            game.rows(),
            game.cols()
        )));
    }
    let a = game.payoff();
    let ag = a.mat_vec(g)?;
    let fa = a.transpose().mat_vec(f)?;
    let v: f64 = f.iter().zip(&ag).map(|(x, y)| x * y).sum();
    let best_row = ag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best_col = fa.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((best_row - v).max(v - best_col).max(0.0))
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn pure_saddle(game: &MatrixGame) -> Option<SaddlePoint> {
    let a = game.payoff();
    let (m, n) = (a.rows(), a.cols());
    for r in 0..m {
        let row_min = a.row(r).iter().cloned().fold(f64::INFINITY, f64::min);
        for c in 0..n {
            let x = a[(r, c)];
            if x != row_min {
                continue;
            }
            if (0..m).all(|rr| a[(rr, c)] <= x) {
                return Some(SaddlePoint {
                    row_strategy: unit(m, r),
                    col_strategy: unit(n, c),
                    value: x,
                });
            }
        }
    }
    None
}

fn closed_form_2x2(game: &MatrixGame) -> SaddlePoint {
    let p = game.payoff();
    let (a, b, c, d) = (p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]);
    // Without a pure saddle the denominator is nonzero.
    let den = a - b - c + d;
    let f0 = ((d - c) / den).clamp(0.0, 1.0);
    let g0 = ((d - b) / den).clamp(0.0, 1.0);
    SaddlePoint {
        row_strategy: vec![f0, 1.0 - f0],
        col_strategy: vec![g0, 1.0 - g0],
        value: (a * d - b * c) / den,
    }
}

/// Solves `max Σy  s.t.  A'y ≤ 1, y ≥ 0` for the positively shifted payoff
/// `A'`; `y/Σy` is the minimizer's strategy and the slack duals give the
/// maximizer's.
fn simplex_saddle(game: &MatrixGame) -> SaddlePoint {
    let a = game.payoff();
    let (m, n) = (a.rows(), a.cols());
    let min = a.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;

    // tableau rows 0..m are constraints, row m is the objective
    let width = n + m + 1;
    let mut t = vec![0.0; (m + 1) * width];
    for r in 0..m {
        for c in 0..n {
            t[r * width + c] = a[(r, c)] + shift;
        }
        t[r * width + n + r] = 1.0;
        t[r * width + width - 1] = 1.0;
    }
    for c in 0..n {
        t[m * width + c] = -1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let eps = 1e-12;

    // Bland's rule: lowest-index improving column
    while let Some(enter) = (0..n + m).find(|&c| t[m * width + c] < -eps) {
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let coef = t[r * width + enter];
            if coef > eps {
                let ratio = t[r * width + width - 1] / coef;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        // bounded: every column of A' is strictly positive
        let (pr, _) = leave.expect("shifted game LP is bounded");
        let piv = t[pr * width + enter];
        for c in 0..width {
            t[pr * width + c] /= piv;
        }
        for r in 0..=m {
            if r == pr {
                continue;
            }
            let factor = t[r * width + enter];
            if factor != 0.0 {
                for c in 0..width {
                    t[r * width + c] -= factor * t[pr * width + c];
                }
            }
        }
        basis[pr] = enter;
    }

    let mut y = vec![0.0; n];
    for (r, &b) in basis.iter().enumerate() {
        if b < n {
            y[b] = t[r * width + width - 1].max(0.0);
        }
    }
    let x: Vec<f64> = (0..m).map(|r| t[m * width + n + r].max(0.0)).collect();
    let g = normalized(y);
    let f = normalized(x);
    let value = game.expected(&f, &g);
    SaddlePoint {
        row_strategy: f,
        col_strategy: g,
        value,
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game(rows: &[Vec<f64>]) -> MatrixGame {
        MatrixGame::from_rows(rows).unwrap()
    }

    #[test]
    fn matching_pennies() {
        let g = game(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let sp = solve_zero_sum(&g);
        assert_eq!(sp.row_strategy, vec![0.5, 0.5]);
        assert_eq!(sp.col_strategy, vec![0.5, 0.5]);
        assert_eq!(sp.value, 0.0);
        assert_eq!(best_response_gap(&g, &[1.0, 0.0], &[0.5, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn one_by_one() {
        let g = game(&[vec![5.0]]);
        let sp = solve_zero_sum(&g);
        assert_eq!((sp.row_strategy[0], sp.col_strategy[0], sp.value), (1.0, 1.0, 5.0));
        assert_eq!(best_response_gap(&g, &[1.0], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_example() {
        let sp = solve_zero_sum(&game(&[vec![3.0, 1.0], vec![0.0, 2.0]]));
        assert_eq!(sp.value, 1.5);
        assert_eq!(sp.row_strategy, vec![0.5, 0.5]);
        assert_eq!(sp.col_strategy, vec![0.25, 0.75]);
    }

    #[test]
    fn flat_game_prefers_index_zero() {
        let sp = solve_zero_sum(&game(&[vec![0.0, 0.0], vec![0.0, 0.0]]));
        assert_eq!(sp.row_strategy, vec![1.0, 0.0]);
        assert_eq!(sp.col_strategy, vec![1.0, 0.0]);
    }

    #[test]
    fn rock_paper_scissors_via_simplex() {
        let g = game(&[
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
        ]);
        let sp = solve_zero_sum(&g);
        for p in sp.row_strategy.iter().chain(&sp.col_strategy) {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(sp.value.abs() < 1e-12);
        assert!(best_response_gap(&g, &sp.row_strategy, &sp.col_strategy).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(MatrixGame::new(Matrix::zeros(0, 2)).is_err());
        let g = game(&[vec![1.0]]);
        assert!(best_response_gap(&g, &[1.0, 0.0], &[1.0]).is_err());
    }
}
