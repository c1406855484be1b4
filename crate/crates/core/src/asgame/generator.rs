use crate::error::Result;
use crate::numkit::Matrix;
use crate::rates::Generator;

use super::{check_rates, ASModel};

/// `M = D + Q ⊗ I` on states stacked as `(regime, q)`.
///
/// Block `i` of `D` is tridiagonal in `q`: diagonal
/// `½γ²(σ_i² + ξγ)q² − (Λ^a + Λ^b)` and off-diagonals `Λ^side e^{−γu*}`, with
/// every side quoted at the base offset `u* = (1/γ)ln(1 + γ/k)`. An ask fill
/// moves `q → q − 1`, a bid fill `q → q + 1`; a side that would leave
/// `[−Q_max, Q_max]` is dropped together with its outflow.
pub fn build_generator(model: &ASModel, rates: &Generator) -> Result<Matrix> {
    model.validate()?;
    check_rates(model, rates)?;
    let n = model.n_regimes();
    let size = n * model.n_levels();
    let g = model.gamma;
    let u = model.base_quote();
    let lam = model.intensity(u);
    let jump = lam * (-g * u).exp();
    let mut m = Matrix::zeros(size, size);
    for i in 0..n {
        let var = model.sigma[i].powi(2) + model.xi * g;
        for q in model.inventories() {
            let r = model.index(i, q);
            let qf = f64::from(q);
            let mut diag = 0.5 * g * g * var * qf * qf;
            if model.ask_active(q) {
                diag -= lam;
                m[(r, model.index(i, q - 1))] = jump;
            }
            if model.bid_active(q) {
                diag -= lam;
                m[(r, model.index(i, q + 1))] = jump;
            }
            m[(r, r)] = diag;
            for j in 0..n {
                let mu = rates.rate(i, j);
                if mu != 0.0 {
                    m[(r, model.index(j, q))] += mu;
                }
            }
        }
    }
    Ok(m)
}
