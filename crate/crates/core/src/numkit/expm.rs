//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (degrees 3, 5, 7, 9, 13), following Higham's 2005 selection thresholds.

use crate::error::{Error, Result};

use super::Matrix;

#[allow(clippy::excessive_precision)]
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `e^M` for a square finite matrix.
pub fn matrix_exponential(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("matrix_exponential input"));
    }
    let norm = m.norm1();
    for &(deg, theta) in &THETA {
        if norm <= theta {
            return pade_low(m, deg);
        }
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = m.scale(0.5f64.powi(s));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.is_finite() {
        return Err(Error::Accuracy(format!(
            "matrix exponential overflowed (‖M‖₁ = {norm:e})"
        )));
    }
    Ok(r)
}

/// `exp(M t) · v`.
pub fn expm_action(m: &Matrix, v: &[f64], t: f64) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if v.len() != m.cols() {
        return Err(Error::DimensionMismatch(format!(
            "expm_action: {}x{} generator with vector of length {}",
            m.rows(),
            m.cols(),
            v.len()
        )));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("expm_action time"));
    }
    matrix_exponential(&m.scale(t))?.mat_vec(v)
}

fn pade_low(a: &Matrix, deg: usize) -> Result<Matrix> {
    let b: &[f64] = match deg {
        3 => &B3,
        5 => &B5,
        7 => &B7,
        9 => &B9,
        _ => unreachable!("unsupported Padé degree"),
    };
    let n = a.rows();
    let ident = Matrix::identity(n);
    let a2 = a * a;
    // powers[k] = A^(2k)
    let mut powers = vec![ident.clone(), a2.clone()];
    while powers.len() <= deg / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for k in 0..=deg / 2 {
        u_inner = &u_inner + &powers[k].scale(b[2 * k + 1]);
        v = &v + &powers[k].scale(b[2 * k]);
    }
    let u = a * &u_inner;
    finish(&u, &v)
}

fn pade13(a: &Matrix) -> Result<Matrix> {
    let b = &B13;
    let n = a.rows();
    let ident = Matrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let lin = |c6: f64, c4: f64, c2: f64| -> Matrix {
        &(&a6.scale(c6) + &a4.scale(c4)) + &a2.scale(c2)
    };
    let u_inner = &(&a6 * &lin(b[13], b[11], b[9])) + &(&lin(b[7], b[5], b[3]) + &ident.scale(b[1]));
    let u = a * &u_inner;
    let v = &(&a6 * &lin(b[12], b[10], b[8])) + &(&lin(b[6], b[4], b[2]) + &ident.scale(b[0]));
    finish(&u, &v)
}

fn finish(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    let p = v + u;
    let q = v - u;
    q.solve_matrix(&p)
        .map_err(|_| Error::Accuracy("Padé denominator is singular".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).max_abs() / b.max_abs().max(1e-300)
    }

    #[test]
    fn zero_gives_identity() {
        let e = matrix_exponential(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(e, Matrix::identity(3));
    }

    #[test]
    fn diagonal_case() {
        let e = matrix_exponential(&Matrix::from_diag(&[1.0, -1.0])).unwrap();
        assert!((e[(0, 0)] - E).abs() < 1e-15 * E);
        assert!((e[(1, 1)] - 1.0 / E).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn nilpotent_series_terminates() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let e = matrix_exponential(&m).unwrap();
        let want = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(rel_err(&e, &want) < 1e-15);
    }

    #[test]
    fn large_norm_diagonal_is_accurate() {
        // exercises the squaring phase
        let d = [50.0, -80.0, 3.0, -0.5];
        let e = matrix_exponential(&Matrix::from_diag(&d)).unwrap();
        for (i, x) in d.iter().enumerate() {
            let want = x.exp();
            assert!((e[(i, i)] - want).abs() <= 1e-12 * want, "{i}");
        }
    }

    #[test]
    fn rotation_generator() {
        let t = 2.5;
        let m = Matrix::from_rows(&[vec![0.0, t], vec![-t, 0.0]]).unwrap();
        let e = matrix_exponential(&m).unwrap();
        let want =
            Matrix::from_rows(&[vec![t.cos(), t.sin()], vec![-t.sin(), t.cos()]]).unwrap();
        assert!((&e - &want).max_abs() < 1e-14);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            matrix_exponential(&Matrix::zeros(2, 3)),
            Err(Error::NonSquare { .. })
        ));
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(matrix_exponential(&m), Err(Error::NonFinite(_))));
        assert!(expm_action(&Matrix::zeros(2, 2), &[1.0], 1.0).is_err());
    }

    #[test]
    fn action_examples() {
        let v = expm_action(&Matrix::zeros(3, 3), &[1.0; 3], 5.0).unwrap();
        assert_eq!(v, vec![1.0; 3]);
        let v = expm_action(&Matrix::from_diag(&[-1.0, -2.0]), &[1.0, 1.0], 1.0).unwrap();
        assert!((v[0] - (-1.0f64).exp()).abs() < 1e-16);
        assert!((v[1] - (-2.0f64).exp()).abs() < 1e-16);
    }
}
