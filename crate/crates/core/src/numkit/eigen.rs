use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

use super::Matrix;

pub type Complex64 = Complex<f64>;

/// All eigenvalues of a square matrix, with multiplicity.
///
/// Backed by nalgebra's real Schur decomposition (Hessenberg reduction plus
/// shifted QR). Non-convergence is reported as [`Error::EigenFailure`].
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eigenvalues input"));
    }
    let n = m.rows();
    if n == 1 {
        return Ok(vec![Complex64::new(m[(0, 0)], 0.0)]);
    }
    let dm = DMatrix::from_row_slice(n, n, m.as_slice());
    let schur = nalgebra::linalg::Schur::try_new(dm, f64::EPSILON, 1000 * n)
        .ok_or(Error::EigenFailure(n))?;
    let ev = schur.complex_eigenvalues();
    let out: Vec<Complex64> = ev.iter().copied().collect();
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenFailure(n));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<f64> {
        v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        v.into_iter().map(|z| z.re).collect()
    }

    #[test]
    fn diagonal() {
        let ev = eigenvalues(&Matrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        let re = sorted_re(ev);
        for (a, b) in re.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rotation_generator_is_imaginary() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn two_state_laplacian() {
        // characteristic polynomial λ(λ - 60)
        let l = Matrix::from_rows(&[vec![30.0, -30.0], vec![-30.0, 30.0]]).unwrap();
        let re = sorted_re(eigenvalues(&l).unwrap());
        assert!(re[0].abs() < 1e-12);
        assert!((re[1] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_rectangular() {
        assert!(eigenvalues(&Matrix::zeros(2, 3)).is_err());
    }
}
