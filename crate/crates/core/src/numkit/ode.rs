use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t0 < t0 + h < … < t_end` with `n_steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::NonFinite("time grid bounds"));
        }
        if t_end <= t0 {
            return Err(Error::InvalidModel(format!(
                "time grid needs t_end > t0 (got t0 = {t0}, t_end = {t_end})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidModel("time grid needs n_steps >= 1".into()));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    /// Time of node `n`; the last node is exactly `t_end`.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_end
        } else {
            self.t0 + n as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }

    /// Same interval, twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            n_steps: 2 * self.n_steps,
            ..*self
        }
    }
}

/// One classical RK4 step backward in time, from `t` to `t - h`.
///
/// `g(t, y)` returns the backward derivative `-dy/dt`.
pub fn rk4_backward_step<F>(g: &mut F, t: f64, y: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let axpy = |a: f64, x: &[f64]| -> Vec<f64> { y.iter().zip(x).map(|(y, x)| y + a * x).collect() };
    let k1 = g(t, y);
    let k2 = g(t - 0.5 * h, &axpy(0.5 * h, &k1));
    let k3 = g(t - 0.5 * h, &axpy(0.5 * h, &k2));
    let k4 = g(t - h, &axpy(h, &k3));
    (0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates a terminal value problem backward over `grid` with RK4.
///
/// `rhs(t, y)` is the backward derivative `-dy/dt` (so `-ẏ = 1` is written
/// `|_, _| vec![1.0]`). The returned trajectory is indexed by grid node,
/// `traj[grid.n_steps()] == terminal`.
pub fn integrate_backward<F>(rhs: F, terminal: &[f64], grid: &TimeGrid) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    integrate_backward_bounded(rhs, terminal, grid, None)
}

/// As [`integrate_backward`], aborting once `max |y|` exceeds `bound`.
pub fn integrate_backward_bounded<F>(
    mut rhs: F,
    terminal: &[f64],
    grid: &TimeGrid,
    bound: Option<f64>,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    if terminal.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("terminal state"));
    }
    let n = grid.n_steps();
    let h = grid.step();
    let mut traj = vec![Vec::new(); n + 1];
    traj[n] = terminal.to_vec();
    for step in (0..n).rev() {
        let next = rk4_backward_step(&mut rhs, grid.time(step + 1), &traj[step + 1], h);
        check_state(&next, grid.time(step), bound)?;
        traj[step] = next;
    }
    Ok(traj)
}

fn check_state(y: &[f64], time: f64, bound: Option<f64>) -> Result<()> {
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteState { time });
    }
    if let Some(bound) = bound {
        if y.iter().any(|x| x.abs() > bound) {
            return Err(Error::StateBound { time, bound });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.refined().n_steps(), 8);
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn zero_rhs_is_constant() {
        let g = TimeGrid::new(0.0, 2.0, 10).unwrap();
        let traj = integrate_backward(|_, y| vec![0.0; y.len()], &[1.5, -2.0], &g).unwrap();
        assert!(traj.iter().all(|y| y == &vec![1.5, -2.0]));
    }

    #[test]
    fn linear_is_exact() {
        let g = TimeGrid::new(0.0, 1.0, 7).unwrap();
        let traj = integrate_backward(|_, _| vec![1.0], &[0.0], &g).unwrap();
        for (n, y) in traj.iter().enumerate() {
            assert!((y[0] - (1.0 - g.time(n))).abs() <= 1e-12);
        }
    }

    #[test]
    fn blow_up_reports_time() {
        // -ẏ = y², y(1) = 1 escapes at t = 0
        let g = TimeGrid::new(-1.0, 1.0, 400).unwrap();
        let err = integrate_backward_bounded(|_, y| vec![y[0] * y[0]], &[1.0], &g, Some(1e6))
            .unwrap_err();
        match err {
            Error::StateBound { time, .. } => assert!(time > -0.01 && time < 0.05, "{time}"),
            e => panic!("unexpected {e:?}"),
        }
        let err = integrate_backward(|_, _| vec![f64::NAN], &[1.0], &g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }
}
