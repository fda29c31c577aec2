//! Continuous-time plant, noise whitening, zero-order-hold discretization and the
//! certainty-equivalent LQG gain.

use alloc::format;
use nalgebra::linalg::{SymmetricEigen, LU, SVD};

use crate::linalg::{expm, min_sym_eigenvalue, spectral_radius, symmetrize};
use crate::{Error, Mat, Result, Vector};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

/// dx = Ã x dt + B̃ u dt + dw, with disturbance covariance rate W̃.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPlant {
    pub a: Mat,
    pub b: Mat,
    pub w: Mat,
}

/// Plant expressed in whitened coordinates x_M = M x.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedPlant {
    pub plant: ContinuousPlant,
    /// Orthogonal whitening map M (rows are eigenvectors of the original W̃).
    pub transform: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    pub a: Mat,
    pub b: Mat,
    pub w: Mat,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeControllerGain {
    pub z: Mat,
    pub psi: Mat,
    pub q: Mat,
    pub r: Mat,
    pub iterations: usize,
}

fn check_covariance(w: &Mat, what: &str) -> Result<()> {
    let scale = w.norm().max(1.0);
    if (w - w.transpose()).norm() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidCovariance(format!("{what} is not symmetric")));
    }
    let min = min_sym_eigenvalue(w);
    if min < -PSD_TOL * scale {
        return Err(Error::InvalidCovariance(format!(
            "{what} is indefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

fn is_diagonal(m: &Mat) -> bool {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

impl ContinuousPlant {
    pub fn new(a: Mat, b: Mat, w: Mat) -> Result<Self> {
        let l = a.nrows();
        if a.ncols() != l || b.nrows() != l || w.nrows() != l || w.ncols() != l {
            return Err(Error::dim(format!(
                "plant matrices: A {}x{}, B {}x{}, W {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        if l == 0 {
            return Err(Error::dim("plant state dimension is zero"));
        }
        check_covariance(&w, "disturbance covariance")?;
        Ok(Self { a, b, w })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn has_diagonal_noise(&self) -> bool {
        is_diagonal(&self.w)
    }

    /// Rotates the state so the disturbance covariance becomes diagonal.
    pub fn whiten(&self) -> Result<WhitenedPlant> {
        check_covariance(&self.w, "disturbance covariance")?;
        let l = self.state_dim();
        if self.has_diagonal_noise() {
            return Ok(WhitenedPlant {
                plant: self.clone(),
                transform: Mat::identity(l, l),
            });
        }
        let eig = SymmetricEigen::new(symmetrize(&self.w));
        let mut order: alloc::vec::Vec<usize> = (0..l).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let mut m = Mat::zeros(l, l);
        for (row, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            let lead = v.iter().copied().fold(0.0f64, |acc, x| {
                if x.abs() > acc.abs() {
                    x
                } else {
                    acc
                }
            });
            if lead < 0.0 {
                v = -v;
            }
            m.set_row(row, &v.transpose());
        }
        let mt = m.transpose();
        let mut w = &m * &self.w * &mt;
        for i in 0..l {
            for j in 0..l {
                if i != j {
                    w[(i, j)] = 0.0;
                }
            }
            w[(i, i)] = w[(i, i)].max(0.0);
        }
        Ok(WhitenedPlant {
            plant: ContinuousPlant {
                a: &m * &self.a * &mt,
                b: &m * &self.b,
                w,
            },
            transform: m,
        })
    }

    /// Zero-order-hold sampling with slot duration `tau`.
    pub fn discretize(&self, tau: f64) -> Result<DiscretePlant> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::param(format!("slot duration must be positive, got {tau}")));
        }
        let l = self.state_dim();
        let m = self.input_dim();
        let a = expm(&(&self.a * tau));

        let svd = SVD::new(self.a.clone(), false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let well_conditioned = smax > 0.0 && smin > 1e-10 * smax;
        let b = if well_conditioned {
            let lhs = (&a - Mat::identity(l, l)) * &self.b;
            LU::new(self.a.clone())
                .solve(&lhs)
                .ok_or_else(|| Error::numeric("plant matrix unexpectedly singular"))?
        } else {
            // ∫₀^τ exp(Ãs) ds B̃ as the top-right block of an augmented exponential.
            let mut aug = Mat::zeros(l + m, l + m);
            aug.view_mut((0, 0), (l, l)).copy_from(&self.a);
            aug.view_mut((0, l), (l, m)).copy_from(&self.b);
            let e = expm(&(aug * tau));
            e.view((0, l), (l, m)).into_owned()
        };

        // Van Loan: exp([[-Ã, W̃], [0, Ãᵀ]] τ) = [[·, F12], [0, F22]], W = F22ᵀ F12.
        let mut vl = Mat::zeros(2 * l, 2 * l);
        vl.view_mut((0, 0), (l, l)).copy_from(&(-&self.a));
        vl.view_mut((0, l), (l, l)).copy_from(&self.w);
        vl.view_mut((l, l), (l, l)).copy_from(&self.a.transpose());
        let e = expm(&(vl * tau));
        let f12 = e.view((0, l), (l, l)).into_owned();
        let f22 = e.view((l, l), (l, l)).into_owned();
        let w = symmetrize(&(f22.transpose() * f12));

        Ok(DiscretePlant { a, b, w, tau })
    }
}

impl WhitenedPlant {
    pub fn to_whitened(&self, x: &Vector) -> Vector {
        &self.transform * x
    }

    pub fn to_original(&self, x_m: &Vector) -> Vector {
        self.transform.transpose() * x_m
    }

    /// Re-expresses a quadratic weight xᵀSx in whitened coordinates.
    pub fn transform_weight(&self, s: &Mat) -> Mat {
        &self.transform * s * self.transform.transpose()
    }
}

impl DiscretePlant {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        &self.a * x + &self.b * u + w
    }

    /// Rank test on [B, AB, …, A^{L−1}B].
    pub fn is_controllable(&self) -> bool {
        let l = self.state_dim();
        let m = self.input_dim();
        if m == 0 {
            return false;
        }
        let mut c = Mat::zeros(l, l * m);
        let mut block = self.b.clone();
        for k in 0..l {
            c.view_mut((0, k * m), (l, m)).copy_from(&block);
            block = &self.a * block;
        }
        let sv = SVD::new(c, false, false).singular_values;
        let smax = sv.max();
        smax > 0.0 && sv.iter().filter(|&&s| s > 1e-10 * smax).count() == l
    }

    /// Solves the DARE by the Riccati recursion started at Z₀ = Q.
    pub fn solve_dare(&self, q: &Mat, r: &Mat, max_iter: usize) -> Result<CeControllerGain> {
        let l = self.state_dim();
        let m = self.input_dim();
        if q.shape() != (l, l) || r.shape() != (m, m) {
            return Err(Error::dim("DARE weights do not match plant dimensions"));
        }
        check_covariance(q, "state weight Q")?;
        check_covariance(r, "input weight R")?;
        if m > 0 && min_sym_eigenvalue(r) <= 0.0 {
            return Err(Error::InvalidCovariance("input weight R must be positive definite".into()));
        }
        let a = &self.a;
        let b = &self.b;
        let at = a.transpose();
        let bt = b.transpose();
        let mut z = q.clone();
        let mut gain = Mat::zeros(m, l);
        let mut rel = f64::INFINITY;
        for it in 1..=max_iter {
            let btz = &bt * &z;
            let g = &btz * b + r;
            gain = LU::new(g)
                .solve(&(&btz * a))
                .ok_or_else(|| Error::numeric("BᵀZB + R is singular"))?;
            let next = symmetrize(&(&at * &z * (a - b * &gain) + q));
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonConvergence {
                    what: "DARE recursion overflowed".into(),
                    iterations: it,
                    residual: f64::INFINITY,
                });
            }
            rel = (&next - &z).norm() / z.norm().max(f64::MIN_POSITIVE);
            z = next;
            if rel <= 1e-12 {
                let btz = &bt * &z;
                gain = LU::new(&btz * b + r)
                    .solve(&(&btz * a))
                    .ok_or_else(|| Error::numeric("BᵀZB + R is singular"))?;
                let psi = -gain;
                let rho = spectral_radius(&(a + b * &psi));
                if rho >= 1.0 {
                    return Err(Error::numeric(format!(
                        "closed loop is not stable (spectral radius {rho})"
                    )));
                }
                return Ok(CeControllerGain {
                    z,
                    psi,
                    q: q.clone(),
                    r: r.clone(),
                    iterations: it,
                });
            }
        }
        let _ = gain;
        Err(Error::NonConvergence {
            what: "DARE recursion".into(),
            iterations: max_iter,
            residual: rel,
        })
    }
}

impl CeControllerGain {
    pub fn control(&self, x_hat: &Vector) -> Vector {
        &self.psi * x_hat
    }

    /// ‖Z − (AᵀZA − AᵀZB(BᵀZB+R)⁻¹BᵀZA + Q)‖_F.
    pub fn dare_residual(&self, disc: &DiscretePlant) -> f64 {
        let a = &disc.a;
        let b = &disc.b;
        let z = &self.z;
        let g = b.transpose() * z * b + &self.r;
        let k = LU::new(g)
            .solve(&(b.transpose() * z * a))
            .unwrap_or_else(|| Mat::zeros(b.ncols(), a.nrows()));
        let rhs = a.transpose() * z * a - a.transpose() * z * b * k + &self.q;
        (z - rhs).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;

    fn paper_plant() -> ContinuousPlant {
        ContinuousPlant::new(
            Mat::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 3.0]),
            Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]),
            Mat::from_diagonal(&Vector::from_vec(alloc::vec![1.0, 2.0])),
        )
        .unwrap()
    }

    #[test]
    fn diagonal_noise_whitening_is_identity() {
        let p = paper_plant();
        let w = p.whiten().unwrap();
        assert_eq!(w.transform, Mat::identity(2, 2));
        assert_eq!(w.plant, p);
    }

    #[test]
    fn whitening_correlated_noise() {
        let p = ContinuousPlant::new(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
        )
        .unwrap();
        let w = p.whiten().unwrap();
        assert!((w.plant.w[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((w.plant.w[(1, 1)] - 1.0).abs() < 1e-12);
        let s = 0.5f64.sqrt();
        let expected = Mat::from_row_slice(2, 2, &[s, s, -s, s]);
        let m = &w.transform;
        // Rows are eigenvectors up to sign.
        for r in 0..2 {
            let dot: f64 = (0..2).map(|c| m[(r, c)] * expected[(r, c)]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-12);
        }
        assert!((m * m.transpose() - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn indefinite_noise_is_rejected() {
        let r = ContinuousPlant::new(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(r, Err(Error::InvalidCovariance(_))));
        let r = ContinuousPlant::new(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]),
        );
        assert!(matches!(r, Err(Error::InvalidCovariance(_))));
    }

    #[test]
    fn identity_dynamics_discretize_to_scalar_exponential() {
        let p = ContinuousPlant::new(Mat::identity(2, 2), Mat::identity(2, 2), Mat::identity(2, 2))
            .unwrap();
        let d = p.discretize(0.05).unwrap();
        assert!((d.a.clone() - Mat::identity(2, 2) * 0.05f64.exp()).norm() < 1e-14);
        assert!((d.a[(0, 0)] - 1.051271).abs() < 1e-6);
    }

    #[test]
    fn zero_dynamics_limit() {
        let w = Mat::from_diagonal(&Vector::from_vec(alloc::vec![1.0, 2.0]));
        let p = ContinuousPlant::new(Mat::zeros(2, 2), Mat::identity(2, 2), w.clone()).unwrap();
        let d = p.discretize(0.05).unwrap();
        assert_eq!(d.a, Mat::identity(2, 2));
        assert!((d.b.clone() - Mat::identity(2, 2) * 0.05).norm() < 1e-15);
        assert!((d.w.clone() - w * 0.05).norm() < 1e-15);
    }

    #[test]
    fn nonpositive_tau_is_rejected() {
        assert!(paper_plant().discretize(0.0).is_err());
        assert!(paper_plant().discretize(-1.0).is_err());
    }

    #[test]
    fn noise_integral_matches_gauss_legendre() {
        let p = paper_plant();
        let tau = 0.05;
        let d = p.discretize(tau).unwrap();
        let (x, wts) = gauss_legendre(64);
        let mut w = Mat::zeros(2, 2);
        let mut bi = Mat::zeros(2, 2);
        for (xi, wi) in x.iter().zip(&wts) {
            let s = 0.5 * tau * (xi + 1.0);
            let e = expm(&(&p.a * s));
            w += &e * &p.w * e.transpose() * (0.5 * tau * wi);
            bi += &e * (0.5 * tau * wi);
        }
        assert!((&d.w - &w).norm() < 1e-13);
        assert!((&d.b - bi * &p.b).norm() < 1e-13);
    }

    #[test]
    fn singular_dynamics_use_the_integral_form() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let p = ContinuousPlant::new(a, Mat::from_column_slice(2, 1, &[0.0, 1.0]), Mat::identity(2, 2))
            .unwrap();
        let tau = 0.1;
        let d = p.discretize(tau).unwrap();
        assert!((d.b[(0, 0)] - tau * tau / 2.0).abs() < 1e-15);
        assert!((d.b[(1, 0)] - tau).abs() < 1e-15);
    }

    #[test]
    fn discretization_composes() {
        let p = paper_plant();
        let full = p.discretize(0.05).unwrap();
        let half = p.discretize(0.025).unwrap();
        assert!((full.a - &half.a * &half.a).norm() < 1e-12);
    }

    #[test]
    fn scalar_dare_golden_ratio() {
        let d = DiscretePlant {
            a: Mat::from_element(1, 1, 1.0),
            b: Mat::from_element(1, 1, 1.0),
            w: Mat::from_element(1, 1, 1.0),
            tau: 1.0,
        };
        let g = d
            .solve_dare(&Mat::from_element(1, 1, 1.0), &Mat::from_element(1, 1, 1.0), 10_000)
            .unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((g.z[(0, 0)] - phi).abs() < 1e-10);
        assert!((g.psi[(0, 0)] + 1.0 / phi).abs() < 1e-10);
    }

    #[test]
    fn uncontrolled_stable_dare_is_lyapunov() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3]);
        let d = DiscretePlant { a: a.clone(), b: Mat::zeros(2, 1), w: Mat::identity(2, 2), tau: 1.0 };
        let g = d.solve_dare(&Mat::identity(2, 2), &Mat::identity(1, 1), 10_000).unwrap();
        let lyap = a.transpose() * &g.z * &a + Mat::identity(2, 2);
        assert!((&g.z - lyap).norm() < 1e-10);
    }

    #[test]
    fn paper_plant_closed_loop_is_stable() {
        let d = paper_plant().discretize(0.05).unwrap();
        assert!(d.is_controllable());
        let q = Mat::from_diagonal(&Vector::from_vec(alloc::vec![1.0, 2.0]));
        let r = Mat::from_diagonal(&Vector::from_vec(alloc::vec![1.0, 0.2]));
        let g = d.solve_dare(&q, &r, 100_000).unwrap();
        assert!(spectral_radius(&(&d.a + &d.b * &g.psi)) < 1.0);
        assert!(g.dare_residual(&d) <= 1e-9 * g.z.norm());
        assert!(min_sym_eigenvalue(&g.z) >= -1e-10);
    }

    #[test]
    fn step_is_affine() {
        let d = DiscretePlant {
            a: Mat::identity(2, 2) * 1.05,
            b: Mat::identity(2, 2),
            w: Mat::identity(2, 2),
            tau: 1.0,
        };
        let z = Vector::zeros(2);
        assert_eq!(d.step(&z, &z, &z), z);
        let e1 = Vector::from_vec(alloc::vec![1.0, 0.0]);
        assert_eq!(d.step(&e1, &z, &z), Vector::from_vec(alloc::vec![1.05, 0.0]));
    }
}
