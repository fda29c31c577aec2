//! Closed-form approximate priority function: Φ1 (low urgency), Φ2 (high urgency),
//! the η_th regime switch and the dynamic threshold ν*.
//!
//! In the eigenbasis V of Ã (ÃV = V diag(μ)), with S^M = VᴴSV,
//!
//! Φ^M_kl(Σ) = [−s_kl + s_kl (μ_l − μ̄_k) ρ_kl(Σ)] / (μ_l + μ̄_k),
//! ρ_kl = (ρ_k + ρ_l)/2, ρ_k = (Σ_kk/w̃_kk + Σ_πkπk/w̃_πkπk)/2,
//!
//! where π swaps the members of each complex-conjugate eigenvalue pair, and
//! Φ = V⁻ᴴ Φ^M V⁻¹. For a real spectrum these are the familiar entrywise formulas;
//! the conjugate pairing keeps Φ real when Ã has complex eigenvalues. The symmetric
//! part Φ + Φᵀ is twice the solution P of ÃᵀP + PÃ + S = 0.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::linalg::{LU, SVD};
#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::fix_phase;
use crate::linalg::{min_sym_eigenvalue, real_part_checked, solve_discrete_lyapunov, spectral_radius, symmetrize, to_complex};
use crate::plant::{ContinuousPlant, DiscretePlant};
use crate::{CMat, Error, Mat, Result, Vector, C64};

const IMAG_TRUNCATE: f64 = 1e-9;
const IMAG_HARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// ‖Δ‖ < η_th.
    Low,
    /// ‖Δ‖ ≥ η_th.
    High,
}

/// Covariance at which the scalar fixed point for c is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum CAnchor {
    /// Dormant stationary covariance when A is stable, active stationary otherwise.
    Auto,
    /// Σ = AΣAᵀ + W.
    DormantStationary,
    /// Σ = AΣ(I + J̄Σ)⁻¹Aᵀ + W with J̄ = (2F̄σ̄/L)·I.
    ActiveStationary,
    Explicit(Mat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityParams {
    pub f_bar: f64,
    pub lambda: f64,
    pub eta_th: f64,
    pub anchor: CAnchor,
    /// Skip the fixed point and use this c.
    pub c_override: Option<f64>,
}

impl PriorityParams {
    pub fn new(f_bar: f64, lambda: f64, eta_th: f64) -> Self {
        Self { f_bar, lambda, eta_th, anchor: CAnchor::Auto, c_override: None }
    }
}

/// Largest eigenpair of Ξ + Ξᵀ with Ξ = x yᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEvaluation {
    pub nu_star: f64,
    pub q1: Vector,
    pub xi: Mat,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq)]
struct RegimeTables {
    /// −s_kl/(μ_l + μ̄_k).
    c: CMat,
    /// s_kl(μ_l − μ̄_k)/(μ_l + μ̄_k).
    k: CMat,
    /// Φ + Φᵀ in original coordinates.
    sym: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityCoefficients {
    /// Right eigenvectors of Ã as columns.
    pub m_eig: CMat,
    pub m_eig_inv: CMat,
    pub mu: Vec<C64>,
    /// Conjugate-pair permutation π.
    pub pairing: Vec<usize>,
    pub s: Mat,
    pub s_m: CMat,
    pub w_diag: Vec<f64>,
    pub c_star: f64,
    pub c_iterations: usize,
    pub anchor_sigma: Mat,
    pub sigma_bar: f64,
    pub f_bar: f64,
    pub lambda: f64,
    pub eta_th: f64,
    pub tau: f64,
    low: RegimeTables,
    high: RegimeTables,
}

/// Eigenvalues sorted by descending real part, then descending imaginary part.
fn sorted_eigenvalues(a: &Mat) -> Vec<C64> {
    let mut mu: Vec<C64> = a.complex_eigenvalues().iter().copied().collect();
    mu.sort_by(|p, q| q.re.total_cmp(&p.re).then(q.im.total_cmp(&p.im)));
    mu
}

fn eigen_decomposition(a: &Mat) -> Result<(Vec<C64>, CMat, Vec<usize>)> {
    let l = a.nrows();
    let scale = a.norm().max(1e-300);
    let tol = 1e-7 * scale;
    let mut mu = sorted_eigenvalues(a);
    // Snap eigenvalues that are real up to roundoff.
    for z in mu.iter_mut() {
        if z.im.abs() <= 1e-12 * scale {
            z.im = 0.0;
        }
    }
    let mut v = CMat::zeros(l, l);
    let mut done = vec![false; l];
    let mut pairing: Vec<usize> = (0..l).collect();
    let mut i = 0;
    while i < l {
        if done[i] {
            i += 1;
            continue;
        }
        let m = mu[i];
        if m.im < 0.0 {
            return Err(Error::Decomposition("unpaired complex eigenvalue".into()));
        }
        let cluster: Vec<usize> = (i..l).filter(|&j| !done[j] && (mu[j] - m).norm() <= tol).collect();
        let k = cluster.len();
        let shifted = to_complex(a) - CMat::identity(l, l) * m;
        let svd = SVD::new(shifted, false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Decomposition("SVD failed".into()))?;
        let mut idx: Vec<usize> = (0..l).collect();
        idx.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
        for (n, &j) in cluster.iter().enumerate() {
            let sv = svd.singular_values[idx[n]];
            if sv > 1e-6 * scale {
                return Err(Error::Decomposition(format!(
                    "Ã is defective at eigenvalue {m} (null-space residual {sv:e})"
                )));
            }
            let mut col = vt.row(idx[n]).adjoint();
            if m.im == 0.0 {
                // A real eigenvalue has a real eigenvector; rotate away the arbitrary phase.
                fix_phase(&mut col);
                for z in col.iter_mut() {
                    z.im = 0.0;
                }
                let n2 = col.norm();
                col /= C64::new(n2, 0.0);
            } else {
                fix_phase(&mut col);
            }
            v.set_column(j, &col);
            done[j] = true;
        }
        if m.im > 0.0 {
            let conj: Vec<usize> = (0..l)
                .filter(|&j| !done[j] && (mu[j] - m.conj()).norm() <= tol)
                .collect();
            if conj.len() != k {
                return Err(Error::Decomposition("conjugate eigenvalue pairs do not match".into()));
            }
            for (&p, &q) in cluster.iter().zip(&conj) {
                let col = v.column(p).map(|z| z.conj());
                v.set_column(q, &col);
                mu[q] = mu[p].conj();
                pairing[p] = q;
                pairing[q] = p;
                done[q] = true;
            }
        }
        i += 1;
    }
    Ok((mu, v, pairing))
}

/// Largest eigenvalue and eigenvector of x yᵀ + y xᵀ.
pub fn rank_two_top_eigen(x: &Vector, y: &Vector) -> (f64, Vector) {
    let l = x.len();
    let nx = x.norm();
    let ny = y.norm();
    let e1 = || {
        let mut e = Vector::zeros(l);
        if l > 0 {
            e[0] = 1.0;
        }
        e
    };
    if nx == 0.0 {
        return (0.0, e1());
    }
    if ny == 0.0 {
        return (0.0, x / nx);
    }
    if l == 1 {
        // A 1×1 matrix has the single eigenvalue 2xy.
        return (2.0 * x[0] * y[0], Vector::from_element(1, 1.0));
    }
    let nu = y.dot(x) + nx * ny;
    let v = x + y * (nx / ny);
    let nv = v.norm();
    if nv <= 1e-14 * nx {
        // x and y antiparallel: the top eigenvalue is 0 on the complement of x.
        let xh = x / nx;
        let mut best = 0;
        for i in 1..l {
            if xh[i].abs() < xh[best].abs() {
                best = i;
            }
        }
        let mut e = Vector::zeros(l);
        e[best] = 1.0;
        let q = &e - &xh * xh[best];
        let nq = q.norm();
        return (nu.max(0.0), q / nq);
    }
    (nu, v / nv)
}

impl PriorityCoefficients {
    /// Builds the coefficients. The plant must already have diagonal noise covariance.
    pub fn build(
        plant: &ContinuousPlant,
        disc: &DiscretePlant,
        s: &Mat,
        sigma_bar: f64,
        params: &PriorityParams,
    ) -> Result<Self> {
        let l = plant.state_dim();
        if s.shape() != (l, l) {
            return Err(Error::dim("weight S does not match the state dimension"));
        }
        if !plant.has_diagonal_noise() {
            return Err(Error::param("priority coefficients need diagonal noise; whiten the plant first"));
        }
        if min_sym_eigenvalue(s) < -1e-12 * s.norm().max(1.0) || (s - s.transpose()).norm() > 1e-12 * s.norm().max(1.0) {
            return Err(Error::InvalidCovariance("weight S must be symmetric PSD".into()));
        }
        for (name, v) in [("F_bar", params.f_bar), ("lambda", params.lambda), ("eta_th", params.eta_th), ("sigma_bar", sigma_bar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        let w_diag: Vec<f64> = (0..l).map(|i| plant.w[(i, i)]).collect();
        if w_diag.iter().any(|&w| w <= 0.0) {
            return Err(Error::param("priority coefficients need strictly positive noise intensities"));
        }

        let (mu, v, pairing) = eigen_decomposition(&plant.a)?;
        let v_inv = LU::new(v.clone())
            .try_inverse()
            .ok_or_else(|| Error::Decomposition("eigenvector matrix is singular (Ã defective)".into()))?;
        let cond = v.norm() * v_inv.norm();
        if !(cond < 1e10) {
            return Err(Error::Decomposition(format!("eigenvector matrix ill-conditioned ({cond:e})")));
        }
        let scale = mu.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        for k in 0..l {
            for j in 0..l {
                let den = mu[j] + mu[k].conj();
                if den.norm() <= 1e-12 * scale {
                    return Err(Error::Decomposition(format!(
                        "eigenvalues {} and {} sum to zero; the priority closed form is singular",
                        mu[k], mu[j]
                    )));
                }
            }
        }

        let s_m = v.adjoint() * to_complex(s) * &v;
        let low = Self::tables(&mu, &v_inv, &s_m)?;
        let mut coeff = Self {
            m_eig: v,
            m_eig_inv: v_inv,
            mu,
            pairing,
            s: s.clone(),
            s_m,
            w_diag,
            c_star: 0.0,
            c_iterations: 0,
            anchor_sigma: Mat::zeros(l, l),
            sigma_bar,
            f_bar: params.f_bar,
            lambda: params.lambda,
            eta_th: params.eta_th,
            tau: disc.tau,
            high: low.clone(),
            low,
        };
        let anchor = coeff.anchor_covariance(disc, &params.anchor)?;
        coeff.anchor_sigma = anchor.clone();
        let (c, iters) = match params.c_override {
            Some(c) if c > 0.0 && c.is_finite() => (c, 0),
            Some(c) => return Err(Error::param(format!("c override must be positive, got {c}"))),
            None => coeff.solve_c(&anchor)?,
        };
        coeff.c_star = c;
        coeff.c_iterations = iters;
        coeff.high = coeff.high_tables(c)?;
        Ok(coeff)
    }

    fn tables(mu: &[C64], v_inv: &CMat, s_m: &CMat) -> Result<RegimeTables> {
        let l = mu.len();
        let mut c = CMat::zeros(l, l);
        let mut k = CMat::zeros(l, l);
        for a in 0..l {
            for b in 0..l {
                let den = mu[b] + mu[a].conj();
                c[(a, b)] = -s_m[(a, b)] / den;
                k[(a, b)] = s_m[(a, b)] * (mu[b] - mu[a].conj()) / den;
            }
        }
        let h = &c + c.adjoint();
        let sym = real_part_checked(&(v_inv.adjoint() * h * v_inv), IMAG_TRUNCATE, IMAG_HARD, "Φ + Φᵀ")?;
        Ok(RegimeTables { c, k, sym: symmetrize(&sym) })
    }

    fn shifted_weight(&self, c: f64) -> CMat {
        let l = self.mu.len();
        let shift = self.m_eig.adjoint() * &self.m_eig * C64::new(c * self.sigma_bar * self.f_bar, 0.0);
        let _ = l;
        &self.s_m - shift
    }

    fn high_tables(&self, c: f64) -> Result<RegimeTables> {
        Self::tables(&self.mu, &self.m_eig_inv, &self.shifted_weight(c))
    }

    pub fn state_dim(&self) -> usize {
        self.mu.len()
    }

    fn table(&self, regime: Regime) -> &RegimeTables {
        match regime {
            Regime::Low => &self.low,
            Regime::High => &self.high,
        }
    }

    fn rho(&self, sigma: &Mat) -> Vec<f64> {
        (0..self.state_dim())
            .map(|k| {
                let p = self.pairing[k];
                0.5 * (sigma[(k, k)] / self.w_diag[k] + sigma[(p, p)] / self.w_diag[p])
            })
            .collect()
    }

    fn assemble(&self, m: &CMat, what: &str) -> Result<Mat> {
        real_part_checked(&(self.m_eig_inv.adjoint() * m * &self.m_eig_inv), IMAG_TRUNCATE, IMAG_HARD, what)
    }

    /// Φ1(Σ) or Φ2(Σ).
    pub fn phi(&self, regime: Regime, sigma: &Mat) -> Result<Mat> {
        let l = self.state_dim();
        if sigma.shape() != (l, l) {
            return Err(Error::dim("Σ does not match the state dimension"));
        }
        let t = self.table(regime);
        let rho = self.rho(sigma);
        let mut m = t.c.clone();
        for a in 0..l {
            for b in 0..l {
                m[(a, b)] += t.k[(a, b)] * (0.5 * (rho[a] + rho[b]));
            }
        }
        self.assemble(&m, "Φ")
    }

    pub fn phi1(&self, sigma: &Mat) -> Result<Mat> {
        self.phi(Regime::Low, sigma)
    }

    pub fn phi2(&self, sigma: &Mat) -> Result<Mat> {
        self.phi(Regime::High, sigma)
    }

    /// ∂Φ/∂Σ_jj (constant, since Φ is affine in diag Σ).
    pub fn phi_derivative(&self, regime: Regime, j: usize) -> Result<Mat> {
        let l = self.state_dim();
        let t = self.table(regime);
        let drho: Vec<f64> = (0..l)
            .map(|k| {
                let mut d = 0.0;
                if j == k {
                    d += 0.5 / self.w_diag[j];
                }
                if j == self.pairing[k] {
                    d += 0.5 / self.w_diag[j];
                }
                d
            })
            .collect();
        let mut m = CMat::zeros(l, l);
        for a in 0..l {
            for b in 0..l {
                m[(a, b)] = t.k[(a, b)] * (0.5 * (drho[a] + drho[b]));
            }
        }
        self.assemble(&m, "∂Φ/∂Σ")
    }

    /// Φ + Φᵀ of the regime (independent of Σ).
    pub fn symmetric_part(&self, regime: Regime) -> &Mat {
        &self.table(regime).sym
    }

    /// Weight of the regime: S or S − cσ̄F̄I.
    pub fn regime_weight(&self, regime: Regime) -> Mat {
        let l = self.state_dim();
        match regime {
            Regime::Low => self.s.clone(),
            Regime::High => &self.s - Mat::identity(l, l) * (self.c_star * self.sigma_bar * self.f_bar),
        }
    }

    pub fn regime(&self, delta: &Vector) -> Regime {
        if delta.norm() < self.eta_th {
            Regime::Low
        } else {
            Regime::High
        }
    }

    /// ∇_Δ V = (Φ_i + Φ_iᵀ)Δ for the regime selected by ‖Δ‖.
    pub fn gradient(&self, delta: &Vector) -> Vector {
        self.symmetric_part(self.regime(delta)) * delta
    }

    /// ν* and q1 for Ξ = Δ ∇Vᵀ Σ / τ.
    pub fn threshold(&self, delta: &Vector, sigma: &Mat) -> ThresholdEvaluation {
        let regime = self.regime(delta);
        let grad = self.symmetric_part(regime) * delta;
        Self::evaluate(delta, &grad, sigma, self.tau, regime)
    }

    /// Threshold with an externally supplied gradient (used by the ADP baseline).
    pub fn evaluate(delta: &Vector, grad: &Vector, sigma: &Mat, tau: f64, regime: Regime) -> ThresholdEvaluation {
        let x = delta / tau;
        let y = sigma * grad;
        let (nu_star, q1) = rank_two_top_eigen(&x, &y);
        ThresholdEvaluation { nu_star, q1, xi: &x * y.transpose(), regime }
    }

    fn anchor_covariance(&self, disc: &DiscretePlant, anchor: &CAnchor) -> Result<Mat> {
        let l = self.state_dim();
        match anchor {
            CAnchor::Explicit(m) => {
                if m.shape() != (l, l) || min_sym_eigenvalue(m) < -1e-12 {
                    return Err(Error::InvalidCovariance("explicit anchor must be L×L PSD".into()));
                }
                Ok(symmetrize(m))
            }
            CAnchor::DormantStationary => {
                if spectral_radius(&disc.a) >= 1.0 {
                    return Err(Error::param("dormant stationary covariance needs a stable plant"));
                }
                solve_discrete_lyapunov(&disc.a, &disc.w)
            }
            CAnchor::ActiveStationary => {
                let j = 2.0 * self.f_bar * self.sigma_bar / l as f64;
                let mut sigma = disc.w.clone();
                for it in 0..100_000 {
                    let post = LU::new(Mat::identity(l, l) + &sigma * j)
                        .solve(&sigma.transpose())
                        .ok_or_else(|| Error::numeric("active anchor update singular"))?
                        .transpose();
                    let next = symmetrize(&(&disc.a * post * disc.a.transpose() + &disc.w));
                    let rel = (&next - &sigma).norm() / next.norm();
                    sigma = next;
                    if rel <= 1e-13 {
                        return Ok(sigma);
                    }
                    if !rel.is_finite() {
                        return Err(Error::NonConvergence {
                            what: "active stationary covariance".into(),
                            iterations: it,
                            residual: rel,
                        });
                    }
                }
                Err(Error::NonConvergence {
                    what: "active stationary covariance".into(),
                    iterations: 100_000,
                    residual: f64::NAN,
                })
            }
            CAnchor::Auto => {
                if spectral_radius(&disc.a) < 1.0 {
                    self.anchor_covariance(disc, &CAnchor::DormantStationary)
                } else {
                    self.anchor_covariance(disc, &CAnchor::ActiveStationary)
                }
            }
        }
    }

    /// Representative high-urgency error: 2η_th·e₁.
    pub fn anchor_delta(&self) -> Vector {
        let mut d = Vector::zeros(self.state_dim());
        d[0] = 2.0 * self.eta_th;
        d
    }

    /// f(Δ, Σ, c)/ΔᵀΔ, i.e. ν* at the anchor with Φ2 built from c.
    pub fn c_map(&self, c: f64, sigma: &Mat) -> Result<f64> {
        let delta = self.anchor_delta();
        let sym = self.high_tables(c)?.sym;
        let grad = sym * &delta;
        let (nu, _) = rank_two_top_eigen(&(&delta / self.tau), &(sigma * grad));
        Ok(nu / delta.norm_squared())
    }

    /// Largest positive root of f(Δ,Σ,c)/ΔᵀΔ − c, bracketed on a log grid and bisected.
    ///
    /// The residual is positive near c = 0, may dip below zero and grows again for large
    /// c; the largest crossing is the non-trivial root (for a scalar unstable plant,
    /// c = 2Σs/(2Σσ̄F̄ − μτ)). Damped iteration cannot reach it because the map is
    /// expanding there.
    fn solve_c(&self, sigma: &Mat) -> Result<(f64, usize)> {
        let l = self.state_dim() as f64;
        let c0 = (self.s.trace() / l / (self.sigma_bar * self.f_bar)).max(1e-12);
        let tol = 1e-8;
        let resid = |c: f64| -> Result<f64> { Ok(self.c_map(c, sigma)? - c) };
        let grid: Vec<f64> = (-96..=96).map(|k| c0 * 10f64.powf(k as f64 / 8.0)).collect();
        let mut values = Vec::with_capacity(grid.len());
        for &c in &grid {
            values.push(resid(c)?);
        }
        let mut evals = grid.len();
        let bracket = (1..grid.len())
            .rev()
            .find(|&i| values[i - 1] != 0.0 && values[i] != 0.0 && values[i - 1].signum() != values[i].signum());
        let Some(i) = bracket else {
            if let Some(j) = values.iter().rposition(|&r| r == 0.0) {
                return Ok((grid[j], evals));
            }
            return Err(Error::NonConvergence {
                what: "no positive fixed point for c at the anchor point".into(),
                iterations: evals,
                residual: values.iter().copied().fold(f64::INFINITY, f64::min),
            });
        };
        let (mut lo, mut hi) = (grid[i - 1], grid[i]);
        let mut r_lo = values[i - 1];
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let rm = resid(mid)?;
            evals += 1;
            if rm == 0.0 {
                return Ok((mid, evals));
            }
            if rm.signum() == r_lo.signum() {
                lo = mid;
                r_lo = rm;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let root = 0.5 * (lo + hi);
        let r = resid(root)?.abs();
        if r <= tol * root {
            Ok((root, evals))
        } else {
            Err(Error::NonConvergence {
                what: "fixed point for c (bisection)".into(),
                iterations: evals,
                residual: r / root,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(mu: f64, s: f64) -> (ContinuousPlant, DiscretePlant, Mat) {
        let p = ContinuousPlant::new(
            Mat::from_element(1, 1, mu),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
        )
        .unwrap();
        let d = p.discretize(0.05).unwrap();
        (p, d, Mat::from_element(1, 1, s))
    }

    #[test]
    fn lemma8_examples() {
        let (nu, q) = rank_two_top_eigen(
            &Vector::from_vec(vec![1.0, 0.0]),
            &Vector::from_vec(vec![0.0, 1.0]),
        );
        assert!((nu - 1.0).abs() < 1e-15);
        let r = 0.5f64.sqrt();
        assert!((q - Vector::from_vec(vec![r, r])).norm() < 1e-15);
        let e = Vector::from_vec(vec![1.0, 0.0]);
        let (nu, q) = rank_two_top_eigen(&e, &e);
        assert!((nu - 2.0).abs() < 1e-15);
        assert!((q - e).norm() < 1e-15);
    }

    #[test]
    fn lemma8_degenerate_inputs() {
        let z = Vector::zeros(3);
        let x = Vector::from_vec(vec![0.0, 3.0, 4.0]);
        let (nu, q) = rank_two_top_eigen(&x, &z);
        assert_eq!(nu, 0.0);
        assert!((q - &x / 5.0).norm() < 1e-15);
        let (nu, q) = rank_two_top_eigen(&z, &x);
        assert_eq!(nu, 0.0);
        assert_eq!(q[0], 1.0);
        let (nu, q) = rank_two_top_eigen(&x, &(-&x * 2.0));
        assert!(nu.abs() < 1e-12);
        assert!(q.dot(&x).abs() < 1e-12 && (q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_low_urgency_coefficient() {
        let (p, d, s) = scalar(1.5, 2.0);
        let c = PriorityCoefficients::build(&p, &d, &s, 1.0, &PriorityParams::new(1.0, 1.0, 0.3)).unwrap();
        for &sig in &[0.0, 0.7, 5.0] {
            let phi = c.phi1(&Mat::from_element(1, 1, sig)).unwrap();
            assert!((phi[(0, 0)] + 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_high_urgency_coefficient() {
        let (p, d, s) = scalar(1.5, 2.0);
        let params = PriorityParams { c_override: Some(0.8), ..PriorityParams::new(2.0, 1.0, 0.3) };
        let c = PriorityCoefficients::build(&p, &d, &s, 1.25, &params).unwrap();
        let phi = c.phi2(&Mat::from_element(1, 1, 0.4)).unwrap();
        assert!((phi[(0, 0)] + (2.0 - 0.8 * 1.25 * 2.0) / 3.0).abs() < 1e-14);
    }

    #[test]
    fn opposite_eigenvalues_are_rejected() {
        let p = ContinuousPlant::new(
            Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1.0])),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        )
        .unwrap();
        let d = p.discretize(0.05).unwrap();
        let r = PriorityCoefficients::build(&p, &d, &Mat::identity(2, 2), 1.0, &PriorityParams::new(1.0, 1.0, 0.3));
        assert!(matches!(r, Err(Error::Decomposition(_))));
    }

    #[test]
    fn diagonal_plant_at_zero_covariance() {
        let p = ContinuousPlant::new(
            Mat::from_diagonal(&Vector::from_vec(vec![0.5, 2.0])),
            Mat::identity(2, 2),
            Mat::from_diagonal(&Vector::from_vec(vec![1.0, 3.0])),
        )
        .unwrap();
        let d = p.discretize(0.05).unwrap();
        let s = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]));
        let params = PriorityParams { c_override: Some(1.0), ..PriorityParams::new(1.0, 1.0, 0.3) };
        let c = PriorityCoefficients::build(&p, &d, &s, 2.0, &params).unwrap();
        let phi = c.phi1(&Mat::zeros(2, 2)).unwrap();
        let expected = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -1.0]));
        assert!((phi - expected).norm() < 1e-13);
    }

    #[test]
    fn scalar_fixed_point_matches_closed_form() {
        let (p, d, s) = scalar(1.0, 1.0);
        let params = PriorityParams {
            anchor: CAnchor::Explicit(Mat::from_element(1, 1, 0.5)),
            ..PriorityParams::new(1.0, 1.0, 0.3)
        };
        let c = PriorityCoefficients::build(&p, &d, &s, 1.0, &params).unwrap();
        let expected = 2.0 * 0.5 / (2.0 * 0.5 - 1.0 * 0.05);
        assert!((c.c_star - expected).abs() < 1e-8 * expected, "{}", c.c_star);
        let r = c.c_map(c.c_star, &c.anchor_sigma).unwrap() - c.c_star;
        assert!(r.abs() <= 1e-8 * c.c_star);
    }
}
