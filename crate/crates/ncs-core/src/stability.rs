//! MSE upper bound: the G operator, the modified Riccati fixed point
//! P = A(P − P·G(P)·P)Aᵀ + W and the bound Tr(P − P·G(P)·P).

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{SigmaStarDistribution, TailRule};
use crate::linalg::{all_finite, min_sym_eigenvalue, symmetrize};
use crate::plant::DiscretePlant;
use crate::{Error, Mat, Result, Vector};

/// One (ν*, q1) pair harvested from a closed-loop run or a surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSample {
    pub nu_star: f64,
    pub q1: Vector,
}

/// Surrogate samples: q1 uniform on the unit sphere, ν* taken from `nu_values` in order.
pub fn surrogate_samples<R: Rng + ?Sized>(rng: &mut R, nu_values: &[f64], l: usize) -> Vec<ThresholdSample> {
    nu_values
        .iter()
        .map(|&nu| {
            let mut q = Vector::from_fn(l, |_, _| StandardNormal.sample(rng));
            let n = q.norm();
            if n > 0.0 {
                q /= n;
            } else {
                q[0] = 1.0;
            }
            ThresholdSample { nu_star: nu, q1: q }
        })
        .collect()
}

/// G(P) = E[∫_{λ/ν*}^∞ 2F̄x·q1q1ᵀ/(1 + 2F̄x·q1ᵀPq1) dF_σ*(x)], with one tail rule per sample.
#[derive(Debug, Clone)]
pub struct GOperator {
    pub f_bar: f64,
    pub lambda: f64,
    l: usize,
    terms: Vec<(Vector, TailRule)>,
    count: usize,
}

impl GOperator {
    pub fn new(dist: &SigmaStarDistribution, f_bar: f64, lambda: f64, samples: &[ThresholdSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("G operator needs at least one (nu*, q1) sample"));
        }
        if !(f_bar > 0.0 && lambda > 0.0) {
            return Err(Error::param("F_bar and lambda must be positive"));
        }
        let l = samples[0].q1.len();
        let mut terms = Vec::new();
        for s in samples {
            if s.q1.len() != l {
                return Err(Error::dim("q1 samples have mixed dimensions"));
            }
            // ν* ≤ 0 never triggers.
            if !(s.nu_star > 0.0) {
                continue;
            }
            let rule = dist.tail_rule(lambda / s.nu_star);
            if !rule.nodes.is_empty() {
                terms.push((s.q1.clone(), rule));
            }
        }
        Ok(Self { f_bar, lambda, l, terms, count: samples.len() })
    }

    pub fn state_dim(&self) -> usize {
        self.l
    }

    /// Average probability that a sample triggers.
    pub fn activation_probability(&self) -> f64 {
        self.terms.iter().map(|(_, r)| r.mass()).sum::<f64>() / self.count as f64
    }

    pub fn apply(&self, p: &Mat) -> Mat {
        let mut g = Mat::zeros(self.l, self.l);
        let k = 2.0 * self.f_bar;
        for (q, rule) in &self.terms {
            let qpq = (p * q).dot(q);
            let s = rule.integrate(|x| k * x / (1.0 + k * x * qpq));
            g += q * q.transpose() * s;
        }
        g / self.count as f64
    }
}

/// Evaluates G(P) for a sample set.
pub fn g_operator(
    p: &Mat,
    f_bar: f64,
    lambda: f64,
    dist: &SigmaStarDistribution,
    samples: &[ThresholdSample],
) -> Result<Mat> {
    Ok(GOperator::new(dist, f_bar, lambda, samples)?.apply(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub p: Mat,
    pub g: Mat,
    pub mse_bound: f64,
    pub iterations: usize,
    pub residual: f64,
}

const TOLERANCE: f64 = 1e-8;
const GROWTH_LIMIT: usize = 50;
const BLOWUP: f64 = 1e15;

fn riccati_map(disc: &DiscretePlant, g: &GOperator, p: &Mat) -> Mat {
    let gp = g.apply(p);
    let post = p - p * gp * p;
    symmetrize(&(&disc.a * post * disc.a.transpose() + &disc.w))
}

/// ‖a − b‖/‖b‖ computed without overflow.
fn relative_diff(a: &Mat, b: &Mat) -> f64 {
    let scale = b.amax().max(1e-300);
    ((a - b) / scale).norm() / (b / scale).norm()
}

fn relative_residual(disc: &DiscretePlant, g: &GOperator, p: &Mat) -> f64 {
    relative_diff(&riccati_map(disc, g, p), p)
}

/// Damped Picard iteration from P₀ = W with damping 0.5, halving the step when
/// the residual grows.
pub fn solve_fixed_point(disc: &DiscretePlant, g: &GOperator, max_iter: usize) -> Result<BoundResult> {
    let l = disc.state_dim();
    if g.state_dim() != l {
        return Err(Error::dim("G operator and plant dimensions differ"));
    }
    let mut p = disc.w.clone();
    let w_scale = disc.w.amax().max(1e-300);
    let mut beta = 0.5;
    let mut last = f64::INFINITY;
    let mut growth = 0;
    for it in 1..=max_iter {
        let t = riccati_map(disc, g, &p);
        let residual = relative_diff(&t, &p);
        if !all_finite(&t) || !residual.is_finite() || t.amax() > BLOWUP * w_scale {
            return Err(Error::NonConvergence {
                what: "MSE bound fixed point diverges (F_bar too small or lambda too large)".into(),
                iterations: it,
                residual,
            });
        }
        if residual <= TOLERANCE {
            return finish(disc, g, p, it);
        }
        if residual > last {
            growth += 1;
            beta = (beta * 0.5).max(1.0 / 64.0);
            if growth >= GROWTH_LIMIT {
                return Err(Error::NonConvergence {
                    what: "MSE bound fixed point diverges (F_bar too small or lambda too large)".into(),
                    iterations: it,
                    residual,
                });
            }
        } else {
            growth = 0;
        }
        last = residual;
        p = symmetrize(&(&p * (1.0 - beta) + t * beta));
    }
    let residual = relative_residual(disc, g, &p);
    Err(Error::NonConvergence { what: "MSE bound fixed point".into(), iterations: max_iter, residual })
}

fn finish(disc: &DiscretePlant, g: &GOperator, p: Mat, iterations: usize) -> Result<BoundResult> {
    if min_sym_eigenvalue(&p) < -1e-9 * p.norm() {
        return Err(Error::InvalidCovariance("bound fixed point is not PSD".into()));
    }
    let gm = g.apply(&p);
    let post = symmetrize(&(&p - &p * &gm * &p));
    let residual = relative_residual(disc, g, &p);
    Ok(BoundResult { mse_bound: post.trace().max(0.0), p, g: gm, iterations, residual })
}

/// Least-squares line through (x, y): returns (slope, intercept, r²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::dim("fit abscissae and ordinates differ in length"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::param("fit abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok((slope, my - slope * mx, r2))
}

/// Scaling report for a bound sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// Slope of log(bound) against log(F̄).
    pub f_bar_slope: f64,
    pub f_bar_r2: f64,
    /// Slope and r² of log(bound) − λ + d·log(λ) against λ.
    pub lambda_slope: f64,
    pub lambda_r2: f64,
    pub lambda_increasing: bool,
    pub f_bar_nonincreasing: bool,
}

/// Regression diagnostics for (F̄, bound) and (λ, bound) sweeps; d = min(N_t, N_r).
pub fn scaling_diagnostics(f_sweep: &[(f64, f64)], lambda_sweep: &[(f64, f64)], d: usize) -> Result<ScalingReport> {
    if f_sweep.len() < 4 || lambda_sweep.len() < 4 {
        return Err(Error::param(format!(
            "scaling diagnostics need at least 4 points per axis, got {} and {}",
            f_sweep.len(),
            lambda_sweep.len()
        )));
    }
    let lx: Vec<f64> = f_sweep.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = f_sweep.iter().map(|p| p.1.ln()).collect();
    let (f_bar_slope, _, f_bar_r2) = linear_fit(&lx, &ly)?;
    let x: Vec<f64> = lambda_sweep.iter().map(|p| p.0).collect();
    let y: Vec<f64> = lambda_sweep.iter().map(|p| p.1.ln() - p.0 + d as f64 * p.0.ln()).collect();
    let (lambda_slope, _, lambda_r2) = linear_fit(&x, &y)?;
    let lambda_increasing = lambda_sweep.windows(2).all(|w| w[1].1 > w[0].1);
    let f_bar_nonincreasing = f_sweep.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(ScalingReport { f_bar_slope, f_bar_r2, lambda_slope, lambda_r2, lambda_increasing, f_bar_nonincreasing })
}
