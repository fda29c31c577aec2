//! Small dense linear-algebra helpers shared by the modules.

use alloc::format;
use nalgebra::linalg::{SymmetricEigen, LU};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{CMat, Error, Mat, Result, C64};

/// Matrix exponential by scaling and squaring with a diagonal Padé(8) approximant.
pub fn expm(m: &Mat) -> Mat {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let norm = m.abs().column_sum().max();
    let mut squarings = 0i32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as i32;
    }
    let scaled = m / 2f64.powi(squarings);

    const Q: usize = 8;
    let mut c = 1.0;
    let mut num = Mat::identity(n, n);
    let mut den = Mat::identity(n, n);
    let mut power = Mat::identity(n, n);
    for k in 1..=Q {
        c *= (Q - k + 1) as f64 / (k * (2 * Q - k + 1)) as f64;
        power = &power * &scaled;
        num += &power * c;
        if k % 2 == 0 {
            den += &power * c;
        } else {
            den -= &power * c;
        }
    }
    let mut r = LU::new(den)
        .solve(&num)
        .expect("Pade denominator is nonsingular for norm <= 0.5");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).norm()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Mat) -> alloc::vec::Vec<f64> {
    let mut ev: alloc::vec::Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn spectral_radius(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    LU::new(a.clone())
        .solve(b)
        .ok_or_else(|| Error::numeric("singular linear system"))
}

/// Solves X = A X Aᵀ + Q through the Kronecker form (small matrices only).
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let nn = n * n;
    let mut k = Mat::identity(nn, nn);
    // vec(A X Aᵀ) = (A ⊗ A) vec(X) with column-major vec.
    for j1 in 0..n {
        for i1 in 0..n {
            for j2 in 0..n {
                for i2 in 0..n {
                    k[(i1 + n * j1, i2 + n * j2)] -= a[(i1, i2)] * a[(j1, j2)];
                }
            }
        }
    }
    let rhs = Mat::from_column_slice(nn, 1, q.as_slice());
    let x = LU::new(k)
        .solve(&rhs)
        .ok_or_else(|| Error::numeric("discrete Lyapunov equation has no unique solution"))?;
    Ok(symmetrize(&Mat::from_column_slice(n, n, x.as_slice())))
}

/// Real part of a complex matrix whose imaginary part must vanish.
///
/// Residue below `truncate` is dropped silently; above `hard` it is an error.
pub fn real_part_checked(m: &CMat, truncate: f64, hard: f64, what: &str) -> Result<Mat> {
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let residue = m.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > hard * scale {
        return Err(Error::numeric(format!(
            "{what}: imaginary residue {residue:e} exceeds tolerance"
        )));
    }
    if residue > truncate * scale {
        log::debug!("{what}: truncating imaginary residue {residue:e}");
    }
    Ok(m.map(|z| z.re))
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}
