use regime_games::hierarchy::{solve_hierarchy, turnpike_report};
use regime_games::mjls::{solve_coupled_riccati, RegimeData, RegimeLQModel};
use regime_games::numkit::{Matrix, TimeGrid};
use regime_games::outer::{solve_outer, OuterGameSpec, StagedCost};
use regime_games::rates::{Generator, RateSchedule};

fn m2(rows: [[f64; 2]; 2]) -> Matrix {
    Matrix::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).unwrap()
}

fn one_sided_spec(mu: f64) -> OuterGameSpec {
    let z = Matrix::zeros(2, 2);
    OuterGameSpec::bilinear(
        Generator::two_state(mu, mu).unwrap(),
        vec![vec![z.clone(), m2([[0.0, 1.0], [2.0, 0.0]])], vec![z.clone(), z]],
    )
    .unwrap()
}

fn scalar_pair(q: [f64; 2], mu: f64) -> RegimeLQModel {
    RegimeLQModel::new(
        vec![RegimeData::scalar(0.0, q[0], 1.0, 0.0, 0.0), RegimeData::scalar(0.0, q[1], 1.0, 0.0, 0.0)],
        Generator::two_state(mu, mu).unwrap(),
    )
    .unwrap()
}

#[test]
fn riccati_under_extracted_rates_reproduces_p() {
    let model = scalar_pair([1.0, 4.0], 0.5);
    let spec = one_sided_spec(0.5);
    let grid = TimeGrid::new(0.0, 1.5, 300).unwrap();
    let sol = solve_hierarchy(&model, &spec, &grid).unwrap();
    let again = solve_coupled_riccati(&model, &RateSchedule::Stepwise(sol.outer.rates.clone()), &grid).unwrap();
    for (a, b) in sol.riccati.p.iter().zip(&again.p) {
        for (pa, pb) in a.iter().zip(b) {
            assert!((pa - pb).max_abs() <= 1e-10);
        }
    }
}

#[test]
fn passive_hierarchy_equals_layer_solves() {
    let gen = Generator::two_state(3.0, 1.0).unwrap();
    let model = RegimeLQModel::new(
        vec![RegimeData::scalar(0.3, 1.0, 1.0, 0.2, 0.5), RegimeData::scalar(-0.2, 2.0, 0.5, 0.4, 0.0)],
        gen.clone(),
    )
    .unwrap();
    let spec = OuterGameSpec::passive(gen.clone());
    let grid = TimeGrid::new(0.0, 2.0, 400).unwrap();
    let joint = solve_hierarchy(&model, &spec, &grid).unwrap();
    let ric = solve_coupled_riccati(&model, &RateSchedule::Constant(gen), &grid).unwrap();
    let out = solve_outer(&StagedCost(&ric.stage_traces), &spec, &grid).unwrap();
    for node in 0..grid.n_nodes() {
        for i in 0..2 {
            assert!((joint.riccati.p[node][i][(0, 0)] - ric.p[node][i][(0, 0)]).abs() <= 1e-12);
            assert!((joint.riccati.r[node][i] - ric.r[node][i]).abs() <= 1e-12);
            assert!((joint.outer.k[node][i] - out.k[node][i]).abs() <= 1e-12);
        }
    }
}

#[test]
fn identical_regimes_stay_identical() {
    let model = scalar_pair([2.0, 2.0], 1.0);
    let spec = one_sided_spec(1.0);
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let sol = solve_hierarchy(&model, &spec, &grid).unwrap();
    for node in 0..grid.n_nodes() {
        assert_eq!(sol.outer.k[node][0], sol.outer.k[node][1]);
        assert_eq!(sol.riccati.p[node][0], sol.riccati.p[node][1]);
        assert_eq!(&sol.outer.rates[node], spec.baseline());
    }
}

#[test]
fn uncoupled_k_is_integrated_trace() {
    let model = scalar_pair([1.0, 4.0], 0.0);
    let spec = OuterGameSpec::passive(Generator::zeros(2));
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let sol = solve_hierarchy(&model, &spec, &grid).unwrap();
    // P_i = √q_i tanh(√q_i (T − t)), ∫₀ᵀ P_i = ln cosh(√q_i T)
    for (i, q) in [1.0f64, 4.0].iter().enumerate() {
        let want = (q.sqrt()).cosh().ln();
        assert!((sol.outer.k[0][i] - want).abs() < 1e-8, "{} vs {want}", sol.outer.k[0][i]);
    }
}

#[test]
fn refinement_is_at_least_first_order() {
    let model = scalar_pair([1.0, 4.0], 0.5);
    let spec = one_sided_spec(0.5);
    let k0 = |n: usize| {
        let s = solve_hierarchy(&model, &spec, &TimeGrid::new(0.0, 1.5, n).unwrap()).unwrap();
        (s.outer.k[0].clone(), s.riccati.p[0][0][(0, 0)])
    };
    let (a, b, c) = (k0(50), k0(100), k0(200));
    let d1 = (a.0[0] - b.0[0]).abs().max((a.1 - b.1).abs());
    let d2 = (b.0[0] - c.0[0]).abs().max((b.1 - c.1).abs());
    assert!(d2 <= 0.6 * d1 || d2 < 1e-12, "{d1} then {d2}");
}

/// Joint RK4 on `(P₀, P₁, k₀, k₁)` with rates frozen per step from a 1/200
/// simplex-grid minimax at the upper node.
fn brute_force(q: [f64; 2], lambda01: [[f64; 2]; 2], t: f64, n: usize) -> ([f64; 2], [f64; 2]) {
    let res = 200;
    let simplex: Vec<[f64; 2]> = (0..=res).map(|a| [1.0 - a as f64 / res as f64, a as f64 / res as f64]).collect();
    let pay = |f: &[f64; 2], g: &[f64; 2], m: f64| -> f64 {
        (0..2).map(|r| (0..2).map(|c| f[r] * lambda01[r][c] * m * g[c]).sum::<f64>()).sum()
    };
    let h = t / n as f64;
    let mut y = [0.0f64; 4];
    for _ in 0..n {
        let gap = y[3] - y[2];
        let g_star = *simplex
            .iter()
            .min_by(|a, b| {
                let wa = simplex.iter().map(|f| pay(f, a, gap)).fold(f64::NEG_INFINITY, f64::max);
                let wb = simplex.iter().map(|f| pay(f, b, gap)).fold(f64::NEG_INFINITY, f64::max);
                wa.total_cmp(&wb)
            })
            .unwrap();
        let f_star = *simplex
            .iter()
            .max_by(|a, b| {
                let la = simplex.iter().map(|g| pay(a, g, gap)).fold(f64::INFINITY, f64::min);
                let lb = simplex.iter().map(|g| pay(b, g, gap)).fold(f64::INFINITY, f64::min);
                la.total_cmp(&lb).then(std::cmp::Ordering::Greater)
            })
            .unwrap();
        let mu01 = pay(&f_star, &g_star, 1.0);
        let rhs = |y: [f64; 4]| -> [f64; 4] {
            [
                q[0] - y[0] * y[0] + mu01 * (y[1] - y[0]),
                q[1] - y[1] * y[1],
                y[0] + mu01 * (y[3] - y[2]),
                y[1],
            ]
        };
        let add = |y: [f64; 4], d: [f64; 4], s: f64| -> [f64; 4] { std::array::from_fn(|i| y[i] + s * d[i]) };
        let k1 = rhs(y);
        let k2 = rhs(add(y, k1, 0.5 * h));
        let k3 = rhs(add(y, k2, 0.5 * h));
        let k4 = rhs(add(y, k3, h));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    ([y[0], y[1]], [y[2], y[3]])
}

#[test]
fn scalar_instance_matches_grid_oracle() {
    let model = scalar_pair([1.0, 4.0], 0.0);
    let spec = one_sided_spec(0.0);
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let sol = solve_hierarchy(&model, &spec, &grid).unwrap();
    let (p, k) = brute_force([1.0, 4.0], [[0.0, 1.0], [2.0, 0.0]], 1.0, 200);
    for i in 0..2 {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
        assert!(rel(sol.outer.k[0][i], k[i]) < 1e-3, "k_{i}: {} vs {}", sol.outer.k[0][i], k[i]);
        assert!(rel(sol.riccati.p[0][i][(0, 0)], p[i]) < 1e-3);
    }
    // the attacker mixes in regime 0 once the gap opens
    assert!(sol.outer.f[0][0][1] > 0.0 && sol.outer.f[0][0][1] < 1.0);
}

#[test]
fn turnpike_benchmarks() {
    // inner: a = 1, q = 2, Σ^ctrl = 3 ⇒ 2ρ_H = 2√7
    let inner = RegimeLQModel::new(vec![RegimeData::scalar(1.0, 2.0, 3.0, 0.0, 0.0)], Generator::zeros(1)).unwrap();
    let grid = TimeGrid::new(0.0, 6.0, 6000).unwrap();
    let sol = solve_hierarchy(&inner, &OuterGameSpec::passive(Generator::zeros(1)), &grid).unwrap();
    let rep = turnpike_report(&sol);
    assert!(rep.warnings.iter().all(|w| !w.starts_with("P")), "{:?}", rep.warnings);
    assert!((rep.p_fit.rate / rep.two_rho_h - 1.0).abs() < 0.2, "{} vs {}", rep.p_fit.rate, rep.two_rho_h);

    // outer: a fast-decaying trace pulse in regime 0, symmetric μ̄ = 2 ⇒ λ₂ = 4
    let pulse = RegimeData::scalar(-5.0, 0.0, 0.0, 0.0, 1.0);
    let idle = RegimeData::scalar(-5.0, 0.0, 0.0, 0.0, 0.0);
    let gen = Generator::two_state(2.0, 2.0).unwrap();
    let model = RegimeLQModel::new(vec![pulse, idle], gen.clone()).unwrap();
    let sol = solve_hierarchy(&model, &OuterGameSpec::passive(gen), &grid).unwrap();
    let rep = turnpike_report(&sol);
    assert!((rep.mean_lambda2 - 4.0).abs() < 1e-9);
    assert!((rep.k_fit.rate / rep.mean_lambda2 - 1.0).abs() < 0.2, "{} vs {}", rep.k_fit.rate, rep.mean_lambda2);
}
