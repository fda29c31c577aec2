//! Augmented complex Kalman filter for a real state observed through a complex
//! analog-forwarding channel y = H F x + z.

use nalgebra::linalg::Cholesky;

use crate::linalg::{real_part_checked, symmetrize, to_complex};
use crate::plant::DiscretePlant;
use crate::{CMat, CVector, Error, Mat, Result, Vector, C64};

const IMAG_TRUNCATE: f64 = 1e-9;
const IMAG_HARD: f64 = 1e-6;

/// Stacked observation matrix E_a = [E; conj(E)] with E = H F.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedObservation {
    pub e_a: CMat,
}

impl AugmentedObservation {
    pub fn new(e: &CMat) -> Self {
        let (nr, l) = e.shape();
        let mut e_a = CMat::zeros(2 * nr, l);
        e_a.view_mut((0, 0), (nr, l)).copy_from(e);
        e_a.view_mut((nr, 0), (nr, l)).copy_from(&e.map(|z| z.conj()));
        Self { e_a }
    }

    pub fn from_precoder(h: &CMat, f: &CMat) -> Self {
        Self::new(&(h * f))
    }

    pub fn state_dim(&self) -> usize {
        self.e_a.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.e_a.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// y_a = [y; conj(y)].
    pub fn augment(y: &CVector) -> CVector {
        let n = y.len();
        let mut ya = CVector::zeros(2 * n);
        for i in 0..n {
            ya[i] = y[i];
            ya[n + i] = y[i].conj();
        }
        ya
    }
}

/// Controller-side filter state plus the sensor-side error bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: Vector,
    /// Δ = x − x̂ (known to the simulator).
    pub delta: Vector,
    /// One-step prediction covariance Σ for the next slot.
    pub sigma: Mat,
    pub delta_virtual: Vector,
}

impl EstimatorState {
    /// Δ = 0, Σ = 0 and x̂ equal to the (known) initial state.
    pub fn initial(x0: &Vector) -> Self {
        let l = x0.len();
        Self {
            x_hat: x0.clone(),
            delta: Vector::zeros(l),
            sigma: Mat::zeros(l, l),
            delta_virtual: Vector::zeros(l),
        }
    }
}

/// K_a = Σ E_aᴴ (E_a Σ E_aᴴ + I)⁻¹ by a Cholesky solve.
pub fn kalman_gain(sigma: &Mat, obs: &AugmentedObservation) -> Result<CMat> {
    let l = sigma.nrows();
    let m = obs.e_a.nrows();
    if obs.state_dim() != l {
        return Err(Error::dim("observation and covariance dimensions differ"));
    }
    if obs.is_zero() || sigma.iter().all(|&v| v == 0.0) {
        return Ok(CMat::zeros(l, m));
    }
    let sc = to_complex(sigma);
    let e_sigma = &obs.e_a * &sc;
    let s = &e_sigma * obs.e_a.adjoint() + CMat::identity(m, m);
    let chol = Cholesky::new(s).ok_or_else(|| Error::numeric("innovation covariance not positive definite"))?;
    let x = chol.solve(&e_sigma);
    let k = x.adjoint();
    if k.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numeric("Kalman gain has non-finite entries"));
    }
    Ok(k)
}

/// Real L×L matrix K_a E_a (its imaginary part vanishes by conjugate symmetry).
pub fn gain_times_observation(k: &CMat, obs: &AugmentedObservation) -> Result<Mat> {
    real_part_checked(&(k * &obs.e_a), IMAG_TRUNCATE, IMAG_HARD, "K_a E_a")
}

/// Filtered covariance Σ − K_a E_a Σ, or the Joseph form when requested.
pub fn posterior_covariance(sigma: &Mat, obs: &AugmentedObservation, k: &CMat, joseph: bool) -> Result<Mat> {
    let ke = gain_times_observation(k, obs)?;
    let l = sigma.nrows();
    let post = if joseph {
        let ikh = Mat::identity(l, l) - &ke;
        let kk = real_part_checked(&(k * k.adjoint()), IMAG_TRUNCATE, IMAG_HARD, "K_a K_aᴴ")?;
        &ikh * sigma * ikh.transpose() + kk
    } else {
        sigma - &ke * sigma
    };
    Ok(symmetrize(&post))
}

/// Σ' = A(Σ − Σ E_aᴴ(E_a Σ E_aᴴ + I)⁻¹ E_a Σ)Aᵀ + W, symmetrized.
pub fn update_covariance(sigma: &Mat, obs: &AugmentedObservation, disc: &DiscretePlant, joseph: bool) -> Result<Mat> {
    let k = kalman_gain(sigma, obs)?;
    let post = posterior_covariance(sigma, obs, &k, joseph)?;
    predict_covariance(&post, disc)
}

pub fn predict_covariance(post: &Mat, disc: &DiscretePlant) -> Result<Mat> {
    let next = symmetrize(&(&disc.a * post * disc.a.transpose() + &disc.w));
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("prediction covariance is not finite"));
    }
    Ok(next)
}

/// x̂ = x̂⁻ + K_a (y_a − E_a x̂⁻) with x̂⁻ = A x̂(n−1) + B u(n−1).
pub fn update_estimate(x_pred: &Vector, y: &CVector, obs: &AugmentedObservation, k: &CMat) -> Result<Vector> {
    let ya = AugmentedObservation::augment(y);
    let xc = x_pred.map(|v| C64::new(v, 0.0));
    let innovation = ya - &obs.e_a * &xc;
    let correction = k * innovation;
    let scale = x_pred.amax().max(1.0);
    let residue = correction.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > IMAG_HARD * scale.max(correction.iter().map(|z| z.norm()).fold(0.0, f64::max)) {
        return Err(Error::numeric("estimate correction is not real; conjugate symmetry broken"));
    }
    Ok(x_pred + correction.map(|z| z.re))
}

/// Δ̃(n) = (I − K_a E_a)(A Δ̃(n−1) + d), with d the sensor-observed disturbance (or zero).
pub fn update_virtual_error(
    delta_virtual: &Vector,
    obs: &AugmentedObservation,
    k: &CMat,
    disc: &DiscretePlant,
    disturbance: Option<&Vector>,
) -> Result<Vector> {
    let mut prior = &disc.a * delta_virtual;
    if let Some(d) = disturbance {
        prior += d;
    }
    if obs.is_zero() {
        return Ok(prior);
    }
    let ke = gain_times_observation(k, obs)?;
    Ok(&prior - ke * &prior)
}

/// Result of one full filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub x_hat: Vector,
    /// Σ(n+1).
    pub sigma_next: Mat,
    pub gain: CMat,
}

/// Measurement update followed by covariance prediction.
pub fn filter_step(
    x_pred: &Vector,
    sigma: &Mat,
    y: &CVector,
    obs: &AugmentedObservation,
    disc: &DiscretePlant,
    joseph: bool,
) -> Result<FilterStep> {
    let l = sigma.nrows();
    if obs.is_zero() {
        return Ok(FilterStep {
            x_hat: x_pred.clone(),
            sigma_next: predict_covariance(sigma, disc)?,
            gain: CMat::zeros(l, obs.e_a.nrows()),
        });
    }
    let k = kalman_gain(sigma, obs)?;
    let x_hat = update_estimate(x_pred, y, obs, &k)?;
    let post = posterior_covariance(sigma, obs, &k, joseph)?;
    Ok(FilterStep { x_hat, sigma_next: predict_covariance(&post, disc)?, gain: k })
}
