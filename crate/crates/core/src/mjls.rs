//! Inner layer: Markov-jump linear-quadratic games.
//!
//! Per regime `i` the state follows `dX = (A_i X + B_i u + D_i w) dt + Σ_i dW`
//! with running cost `xᵀQ_i x + uᵀR_i u − wᵀS_i w`. The value is stored as
//! `V_i(t, x) = xᵀP_i(t)x + r_i(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{eigenvalues, rk4_backward_step, Matrix, TimeGrid};
use crate::rates::{Generator, RateSchedule};

pub const DEFAULT_BLOWUP_BOUND: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeData {
    pub a: Matrix,
    pub b: Matrix,
    pub d: Matrix,
    pub sigma: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub s: Matrix,
    pub q_t: Matrix,
}

impl RegimeData {
    /// Scalar regime with `Σ^ctrl = ctrl`: a control channel when
    /// `ctrl ≥ 0`, a pure disturbance channel otherwise.
    pub fn scalar(a: f64, q: f64, ctrl: f64, sigma: f64, q_t: f64) -> Self {
        let (b, d) = if ctrl >= 0.0 {
            (ctrl.sqrt(), 0.0)
        } else {
            (0.0, (-ctrl).sqrt())
        };
        Self {
            a: Matrix::scalar(a),
            b: Matrix::scalar(b),
            d: Matrix::scalar(d),
            sigma: Matrix::scalar(sigma),
            q: Matrix::scalar(q),
            r: Matrix::scalar(1.0),
            s: Matrix::scalar(1.0),
            q_t: Matrix::scalar(q_t),
        }
    }
}

/// Per-regime LQ data plus baseline switching rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeLQModel {
    regimes: Vec<RegimeData>,
    baseline: Generator,
    n: usize,
    ctrl: Vec<Matrix>,
    noise: Vec<Matrix>,
    r_inv: Vec<Matrix>,
    s_inv: Vec<Matrix>,
}

impl RegimeLQModel {
    pub fn new(regimes: Vec<RegimeData>, baseline: Generator) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::InvalidModel("at least one regime is required".into()));
        }
        if baseline.n() != regimes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} regimes but a {}x{} rate matrix",
                regimes.len(),
                baseline.n(),
                baseline.n()
            )));
        }
        let n = regimes[0].a.rows();
        let d1 = regimes[0].b.cols();
        let d2 = regimes[0].d.cols();
        let mut ctrl = Vec::new();
        let mut noise = Vec::new();
        let mut r_inv = Vec::new();
        let mut s_inv = Vec::new();
        for (i, rd) in regimes.iter().enumerate() {
            let shape = |m: &Matrix, rows: usize, cols: usize, name: &str| -> Result<()> {
                if m.rows() != rows || m.cols() != cols {
                    return Err(Error::DimensionMismatch(format!(
                        "regime {i}: {name} is {}x{}, expected {rows}x{cols}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if !m.is_finite() {
                    return Err(Error::InvalidModel(format!("regime {i}: {name} is not finite")));
                }
                Ok(())
            };
            shape(&rd.a, n, n, "A")?;
            shape(&rd.b, n, d1, "B")?;
            shape(&rd.d, n, d2, "D")?;
            shape(&rd.sigma, n, rd.sigma.cols(), "Sigma")?;
            shape(&rd.q, n, n, "Q")?;
            shape(&rd.r, d1, d1, "R")?;
            shape(&rd.s, d2, d2, "S")?;
            shape(&rd.q_t, n, n, "Q_T")?;
            check_definite(&rd.q, false, i, "Q")?;
            check_definite(&rd.q_t, false, i, "Q_T")?;
            check_definite(&rd.r, true, i, "R")?;
            check_definite(&rd.s, true, i, "S")?;
            let ri = rd.r.inverse()?;
            let si = rd.s.inverse()?;
            let c = &(&(&rd.b * &ri) * &rd.b.transpose()) - &(&(&rd.d * &si) * &rd.d.transpose());
            ctrl.push(c.symmetrized());
            noise.push((&rd.sigma * &rd.sigma.transpose()).symmetrized());
            r_inv.push(ri);
            s_inv.push(si);
        }
        Ok(Self {
            regimes,
            baseline,
            n,
            ctrl,
            noise,
            r_inv,
            s_inv,
        })
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn regime(&self, i: usize) -> &RegimeData {
        &self.regimes[i]
    }

    pub fn regimes(&self) -> &[RegimeData] {
        &self.regimes
    }

    pub fn baseline(&self) -> &Generator {
        &self.baseline
    }

    /// `Σ^ctrl_i = B_i R_i⁻¹ B_iᵀ − D_i S_i⁻¹ D_iᵀ`.
    pub fn control_matrix(&self, i: usize) -> &Matrix {
        &self.ctrl[i]
    }

    fn noise(&self, i: usize) -> &Matrix {
        &self.noise[i]
    }
}

fn check_definite(m: &Matrix, strict: bool, regime: usize, name: &str) -> Result<()> {
    let scale = m.max_abs().max(1.0);
    if m.asymmetry() > 1e-12 * scale {
        return Err(Error::InvalidModel(format!("regime {regime}: {name} is not symmetric")));
    }
    let min = eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min);
    let ok = if strict {
        min > 1e-12 * scale
    } else {
        min >= -1e-10 * scale
    };
    if ok {
        Ok(())
    } else {
        let kind = if strict { "positive definite" } else { "positive semidefinite" };
        Err(Error::InvalidModel(format!("regime {regime}: {name} is not {kind}")))
    }
}

/// `−Ṗ_i = Q_i + A_iᵀP_i + P_iA_i − P_iΣ^ctrl_iP_i + Σ_{j≠i} μ_ij (P_j − P_i)`.
pub fn riccati_rhs(p: &[Matrix], rates: &Generator, model: &RegimeLQModel, i: usize) -> Matrix {
    let rd = model.regime(i);
    let pi = &p[i];
    let ap = &rd.a.transpose() * pi;
    let pa = pi * &rd.a;
    let quad = &(pi * model.control_matrix(i)) * pi;
    let mut out = &(&(&rd.q + &ap) + &pa) - &quad;
    for (j, pj) in p.iter().enumerate() {
        let mu = rates.rate(i, j);
        if j != i && mu != 0.0 {
            out = &out + &(pj - pi).scale(mu);
        }
    }
    out.symmetrized()
}

/// `−ṙ_i = Tr(Σ_iΣ_iᵀP_i) + Σ_{j≠i} μ_ij (r_j − r_i)`.
pub fn offset_rhs(r: &[f64], p: &[Matrix], rates: &Generator, model: &RegimeLQModel, i: usize) -> f64 {
    (model.noise(i) * &p[i]).trace() + rates.coupling(i, r)
}

/// `(K_u, K_w) = (−R_i⁻¹B_iᵀP_i, S_i⁻¹D_iᵀP_i)`; the feedback laws are
/// `u = K_u x`, `w = K_w x`.
pub fn feedback_gains(p_i: &Matrix, model: &RegimeLQModel, i: usize) -> Result<(Matrix, Matrix)> {
    let rd = model.regime(i);
    if p_i.rows() != model.state_dim() || !p_i.is_square() {
        return Err(Error::DimensionMismatch("P has the wrong shape".into()));
    }
    let ku = (&(&model.r_inv[i] * &rd.b.transpose()) * p_i).scale(-1.0);
    let kw = &(&model.s_inv[i] * &rd.d.transpose()) * p_i;
    Ok((ku, kw))
}

/// `H_i = [[A_i, −Σ^ctrl_i], [−Q_i, −A_iᵀ]]`.
pub fn hamiltonian_matrix(model: &RegimeLQModel, i: usize) -> Matrix {
    let n = model.state_dim();
    let rd = model.regime(i);
    let c = model.control_matrix(i);
    let mut h = Matrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for s in 0..n {
            h[(r, s)] = rd.a[(r, s)];
            h[(r, n + s)] = -c[(r, s)];
            h[(n + r, s)] = -rd.q[(r, s)];
            h[(n + r, n + s)] = -rd.a[(s, r)];
        }
    }
    h
}

/// `ρ_H = min_i min |Re λ(H_i)|`.
pub fn hamiltonian_spectral_gap(model: &RegimeLQModel) -> Result<f64> {
    let mut gap = f64::INFINITY;
    for i in 0..model.n_regimes() {
        for z in eigenvalues(&hamiltonian_matrix(model, i))? {
            gap = gap.min(z.re.abs());
        }
    }
    Ok(gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// `p[node][regime]`
    pub p: Vec<Vec<Matrix>>,
    /// `r[node][regime]`
    pub r: Vec<Vec<f64>>,
    /// `Tr P_i` at the four RK4 stages of each step, `stage_traces[step][stage][regime]`.
    #[serde(skip)]
    pub stage_traces: Vec<[Vec<f64>; 4]>,
}

impl RiccatiSolution {
    pub fn traces(&self, node: usize) -> Vec<f64> {
        self.p[node].iter().map(Matrix::trace).collect()
    }
}

/// Flat state layout: `P_0 … P_{N−1}` (row-major) followed by `r`.
pub(crate) struct LqLayout {
    pub n_regimes: usize,
    pub n: usize,
}

impl LqLayout {
    pub fn for_model(model: &RegimeLQModel) -> Self {
        Self {
            n_regimes: model.n_regimes(),
            n: model.state_dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_regimes * (self.n * self.n + 1)
    }

    pub fn pack(&self, p: &[Matrix], r: &[f64], out: &mut Vec<f64>) {
        for m in p {
            out.extend_from_slice(m.as_slice());
        }
        out.extend_from_slice(r);
    }

    pub fn unpack(&self, y: &[f64]) -> (Vec<Matrix>, Vec<f64>) {
        let nn = self.n * self.n;
        let p = (0..self.n_regimes)
            .map(|i| {
                Matrix::from_row_major(self.n, self.n, y[i * nn..(i + 1) * nn].to_vec())
                    .expect("layout size")
            })
            .collect();
        let r = y[self.n_regimes * nn..self.len()].to_vec();
        (p, r)
    }

    pub fn traces(&self, y: &[f64]) -> Vec<f64> {
        let nn = self.n * self.n;
        (0..self.n_regimes)
            .map(|i| (0..self.n).map(|k| y[i * nn + k * self.n + k]).sum())
            .collect()
    }

    pub fn rhs(&self, model: &RegimeLQModel, rates: &Generator, y: &[f64]) -> Vec<f64> {
        let (p, r) = self.unpack(y);
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n_regimes {
            out.extend_from_slice(riccati_rhs(&p, rates, model, i).as_slice());
        }
        for i in 0..self.n_regimes {
            out.push(offset_rhs(&r, &p, rates, model, i));
        }
        out
    }

    /// Blow-up check on the `P` block after a step landing at `time`.
    pub fn check(&self, y: &[f64], time: f64, bound: f64) -> Result<()> {
        let nn = self.n * self.n;
        for i in 0..self.n_regimes {
            let block = &y[i * nn..(i + 1) * nn];
            if block.iter().any(|x| !x.is_finite() || x.abs() > bound) {
                return Err(Error::RiccatiBlowUp { regime: i, time });
            }
        }
        if y[self.n_regimes * nn..].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { time });
        }
        Ok(())
    }
}

/// One RK4 step of the LQ flow, also returning `Tr P_i` at each stage.
pub(crate) fn lq_step(
    layout: &LqLayout,
    model: &RegimeLQModel,
    rates: &Generator,
    t: f64,
    y: &[f64],
    h: f64,
) -> (Vec<f64>, [Vec<f64>; 4]) {
    let mut traces: Vec<Vec<f64>> = Vec::with_capacity(4);
    let mut g = |_: f64, y: &[f64]| {
        traces.push(layout.traces(y));
        layout.rhs(model, rates, y)
    };
    let next = rk4_backward_step(&mut g, t, y, h);
    let traces: [Vec<f64>; 4] = traces.try_into().expect("four RK4 stages");
    (next, traces)
}

/// Backward solve from `P_i(T) = Q_{T,i}`, `r_i(T) = 0`.
pub fn solve_coupled_riccati(
    model: &RegimeLQModel,
    rates: &RateSchedule,
    grid: &TimeGrid,
) -> Result<RiccatiSolution> {
    solve_coupled_riccati_bounded(model, rates, grid, DEFAULT_BLOWUP_BOUND)
}

pub fn solve_coupled_riccati_bounded(
    model: &RegimeLQModel,
    rates: &RateSchedule,
    grid: &TimeGrid,
    blowup_bound: f64,
) -> Result<RiccatiSolution> {
    rates.check(model.n_regimes(), grid.n_nodes())?;
    let layout = LqLayout::for_model(model);
    let n_steps = grid.n_steps();
    let h = grid.step();
    let mut states = vec![Vec::new(); n_steps + 1];
    let terminal_p: Vec<Matrix> = model.regimes().iter().map(|rd| rd.q_t.clone()).collect();
    let mut y = Vec::with_capacity(layout.len());
    layout.pack(&terminal_p, &vec![0.0; model.n_regimes()], &mut y);
    states[n_steps] = y;
    let mut stage_traces = vec![Default::default(); n_steps];
    for step in (0..n_steps).rev() {
        let gen = rates.at_node(step + 1);
        let (next, tr) = lq_step(&layout, model, gen, grid.time(step + 1), &states[step + 1], h);
        layout.check(&next, grid.time(step), blowup_bound)?;
        states[step] = next;
        stage_traces[step] = tr;
    }
    let (p, r) = states.iter().map(|y| layout.unpack(y)).unzip();
    Ok(RiccatiSolution {
        grid: *grid,
        p,
        r,
        stage_traces,
    })
}

/// Long-run `P_ss` for constant rates: integrate backward from `Q_T` until
/// `max |Ṗ| < tol`.
pub fn riccati_steady_state(
    model: &RegimeLQModel,
    rates: &Generator,
    dt: f64,
    tol: f64,
    max_tau: f64,
) -> Result<Vec<Matrix>> {
    let layout = LqLayout::for_model(model);
    let terminal_p: Vec<Matrix> = model.regimes().iter().map(|rd| rd.q_t.clone()).collect();
    let mut y = Vec::with_capacity(layout.len());
    layout.pack(&terminal_p, &vec![0.0; model.n_regimes()], &mut y);
    let nn = layout.n * layout.n;
    let p_len = layout.n_regimes * nn;
    let mut tau = 0.0;
    while tau < max_tau {
        let d = layout.rhs(model, rates, &y);
        if d[..p_len].iter().all(|x| x.abs() < tol) {
            return Ok(layout.unpack(&y).0);
        }
        let (next, _) = lq_step(&layout, model, rates, -tau, &y, dt);
        tau += dt;
        layout.check(&next, -tau, DEFAULT_BLOWUP_BOUND)?;
        y = next;
    }
    Err(Error::Accuracy(format!(
        "Riccati flow did not settle within backward time {max_tau}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(a: f64, q: f64, ctrl: f64, q_t: f64) -> RegimeLQModel {
        RegimeLQModel::new(vec![RegimeData::scalar(a, q, ctrl, 0.0, q_t)], Generator::zeros(1))
            .unwrap()
    }

    #[test]
    fn rhs_plug_in() {
        let m = scalar_model(0.0, 1.0, 1.0, 0.0);
        let p = vec![Matrix::scalar(0.0)];
        assert_eq!(riccati_rhs(&p, &Generator::zeros(1), &m, 0)[(0, 0)], 1.0);
    }

    #[test]
    fn coupling_term() {
        let rd = RegimeData::scalar(0.0, 0.0, 0.0, 1.0, 0.0);
        let gen = Generator::two_state(30.0, 0.0).unwrap();
        let m = RegimeLQModel::new(vec![rd.clone(), rd], gen.clone()).unwrap();
        let p = vec![Matrix::scalar(0.0), Matrix::scalar(1.0)];
        assert_eq!(riccati_rhs(&p, &gen, &m, 0)[(0, 0)], 30.0);
        let p1 = vec![Matrix::scalar(1.0), Matrix::scalar(1.0)];
        assert_eq!(offset_rhs(&[0.0, 2.0], &p1, &gen, &m, 0), 61.0);
    }

    #[test]
    fn offset_trace() {
        let mut rd = RegimeData::scalar(0.0, 0.0, 0.0, 0.0, 0.0);
        rd.sigma = Matrix::scalar(2f64.sqrt());
        let m = RegimeLQModel::new(vec![rd], Generator::zeros(1)).unwrap();
        let v = offset_rhs(&[0.0], &[Matrix::scalar(3.0)], &Generator::zeros(1), &m, 0);
        assert!((v - 6.0).abs() < 1e-14);
    }

    #[test]
    fn gains() {
        let mut rd = RegimeData::scalar(0.0, 0.0, 1.0, 0.0, 0.0);
        rd.d = Matrix::scalar(1.0);
        let m = RegimeLQModel::new(vec![rd], Generator::zeros(1)).unwrap();
        let (ku, kw) = feedback_gains(&Matrix::scalar(3.0), &m, 0).unwrap();
        assert_eq!((ku[(0, 0)], kw[(0, 0)]), (-3.0, 3.0));
        let (ku, kw) = feedback_gains(&Matrix::scalar(0.0), &m, 0).unwrap();
        assert_eq!((ku[(0, 0)], kw[(0, 0)]), (0.0, 0.0));
    }

    #[test]
    fn hamiltonian_scalar() {
        let m = scalar_model(1.0, 2.0, 3.0, 0.0);
        let h = hamiltonian_matrix(&m, 0);
        let want = Matrix::from_rows(&[vec![1.0, -3.0], vec![-2.0, -1.0]]).unwrap();
        assert!((&h - &want).max_abs() < 1e-15);
        let gap = hamiltonian_spectral_gap(&m).unwrap();
        assert!((gap - 7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tanh_oracle() {
        let m = scalar_model(0.0, 1.0, 1.0, 0.0);
        let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let rates = RateSchedule::Constant(Generator::zeros(1));
        let sol = solve_coupled_riccati(&m, &rates, &grid).unwrap();
        assert!((sol.p[0][0][(0, 0)] - 1f64.tanh()).abs() < 1e-8);
        assert_eq!(sol.p[1000][0][(0, 0)], 0.0);
    }

    #[test]
    fn rejects_indefinite_costs() {
        let mut rd = RegimeData::scalar(0.0, 1.0, 1.0, 0.0, 0.0);
        rd.r = Matrix::scalar(0.0);
        assert!(RegimeLQModel::new(vec![rd.clone()], Generator::zeros(1)).is_err());
        rd.r = Matrix::scalar(1.0);
        rd.q = Matrix::scalar(-1.0);
        assert!(RegimeLQModel::new(vec![rd], Generator::zeros(1)).is_err());
    }

    #[test]
    fn disturbance_dominance_blows_up() {
        // -ṗ = 1 + p², p(T)=0 → p = tan(T − t), escape at T − t = π/2
        let m = scalar_model(0.0, 1.0, -1.0, 0.0);
        let grid = TimeGrid::new(0.0, 3.0, 3000).unwrap();
        let err = solve_coupled_riccati(&m, &RateSchedule::Constant(Generator::zeros(1)), &grid)
            .unwrap_err();
        match err {
            Error::RiccatiBlowUp { regime: 0, time } => {
                assert!((3.0 - time - std::f64::consts::FRAC_PI_2).abs() < 0.01, "{time}")
            }
            e => panic!("unexpected {e:?}"),
        }
    }
}
