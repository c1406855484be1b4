//! Continuous-time Markov chain generators over regimes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// A validated rate matrix: off-diagonals `μ_ij ≥ 0`, diagonal `-Σ_{j≠i} μ_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct Generator {
    q: Matrix,
}

impl Generator {
    /// Builds a generator from the off-diagonal entries of `rates`; the
    /// supplied diagonal is ignored and recomputed.
    pub fn from_rates(rates: &Matrix) -> Result<Self> {
        if !rates.is_square() {
            return Err(Error::NonSquare {
                rows: rates.rows(),
                cols: rates.cols(),
            });
        }
        if !rates.is_finite() {
            return Err(Error::NonFinite("transition rates"));
        }
        let n = rates.rows();
        let mut q = rates.clone();
        for i in 0..n {
            let mut out = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let r = q[(i, j)];
                if r < 0.0 {
                    return Err(Error::NegativeRate {
                        from: i,
                        to: j,
                        rate: r,
                    });
                }
                out += r;
            }
            q[(i, i)] = -out;
        }
        Ok(Self { q })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_rates(&Matrix::from_rows(rows)?)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: Matrix::zeros(n, n),
        }
    }

    /// Two-state chain with rates `a` (0→1) and `b` (1→0).
    pub fn two_state(a: f64, b: f64) -> Result<Self> {
        Self::from_rows(&[vec![0.0, a], vec![b, 0.0]])
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.q
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    /// `Σ_{j≠i} μ_ij (v_j − v_i)`.
    pub fn coupling(&self, i: usize, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for (j, vj) in v.iter().enumerate() {
            if j != i {
                s += self.q[(i, j)] * (vj - v[i]);
            }
        }
        s
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_rates(&self.q.scale(c))
    }
}

impl TryFrom<Matrix> for Generator {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        Self::from_rates(&m)
    }
}

impl From<Generator> for Matrix {
    fn from(g: Generator) -> Matrix {
        g.q
    }
}

/// Regime rates over a time grid.
///
/// `Stepwise` holds one generator per grid node; the backward step from node
/// `n + 1` to node `n` uses the generator stored at node `n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum RateSchedule {
    Constant(Generator),
    Stepwise(Vec<Generator>),
}

impl RateSchedule {
    pub fn at_node(&self, node: usize) -> &Generator {
        match self {
            RateSchedule::Constant(g) => g,
            RateSchedule::Stepwise(v) => &v[node],
        }
    }

    pub fn n_regimes(&self) -> usize {
        match self {
            RateSchedule::Constant(g) => g.n(),
            RateSchedule::Stepwise(v) => v.first().map_or(0, Generator::n),
        }
    }

    pub(crate) fn check(&self, n_regimes: usize, n_nodes: usize) -> Result<()> {
        match self {
            RateSchedule::Constant(g) if g.n() != n_regimes => Err(Error::DimensionMismatch(
                format!("rates are {}x{} but the model has {n_regimes} regimes", g.n(), g.n()),
            )),
            RateSchedule::Stepwise(v) if v.len() != n_nodes => Err(Error::DimensionMismatch(
                format!("{} rate matrices for {n_nodes} grid nodes", v.len()),
            )),
            RateSchedule::Stepwise(v) if v.iter().any(|g| g.n() != n_regimes) => Err(
                Error::DimensionMismatch("stepwise rates have inconsistent size".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_negative_row_sum() {
        let g = Generator::from_rows(&[
            vec![9.0, 1.0, 2.0],
            vec![0.5, 0.0, 0.0],
            vec![0.0, 3.0, -4.0],
        ])
        .unwrap();
        assert_eq!(g.rate(0, 0), -3.0);
        assert_eq!(g.rate(1, 1), -0.5);
        assert_eq!(g.rate(2, 2), -3.0);
        assert_eq!(g.coupling(0, &[1.0, 2.0, 4.0]), 1.0 + 6.0);
    }

    #[test]
    fn rejects_negative_off_diagonal() {
        let err = Generator::two_state(1.0, -0.1).unwrap_err();
        assert!(matches!(err, Error::NegativeRate { from: 1, to: 0, .. }));
    }
}
