//! I.i.d. Rayleigh MIMO channel and the law of its largest eigenchannel gain σ*.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::linalg::SymmetricEigen;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::quadrature::{adaptive_simpson, composite_rule};
use crate::{CMat, CVector, Error, Result, C64};

/// One channel realization H (N_r × N_t) with the eigendecomposition of HᴴH.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: CMat,
    /// Eigenvalues of HᴴH in descending order.
    pub eigenvalues: Vec<f64>,
    /// Unitary N_t × N_t matrix whose columns are the matching eigenvectors.
    pub u: CMat,
    pub sigma_star: f64,
}

/// Draws H with i.i.d. CN(0, 1) entries, row by row, real part before imaginary part.
pub fn draw_matrix<R: Rng + ?Sized>(rng: &mut R, nt: usize, nr: usize) -> CMat {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    let mut h = CMat::zeros(nr, nt);
    for i in 0..nr {
        for j in 0..nt {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            h[(i, j)] = C64::new(re * s, im * s);
        }
    }
    h
}

/// Makes the largest-magnitude entry real and positive (first index wins ties).
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_norm = -1.0;
    for (i, z) in v.iter().enumerate() {
        let n = z.norm();
        if n > best_norm * (1.0 + 1e-12) {
            best = i;
            best_norm = n;
        }
    }
    if best_norm > 0.0 {
        let phase = v[best].conj() / best_norm;
        for z in v.iter_mut() {
            *z *= phase;
        }
        v[best] = C64::new(v[best].re, 0.0);
    }
}

impl ChannelSample {
    pub fn from_matrix(h: CMat) -> Self {
        let nt = h.ncols();
        let gram = h.adjoint() * &h;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..nt).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let mut u = CMat::zeros(nt, nt);
        let mut eigenvalues = Vec::with_capacity(nt);
        for (col, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            fix_phase(&mut v);
            u.set_column(col, &v);
            eigenvalues.push(eig.eigenvalues[k]);
        }
        let sigma_star = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        Self { h, eigenvalues, u, sigma_star }
    }

    pub fn draw<R: Rng + ?Sized>(rng: &mut R, nt: usize, nr: usize) -> Self {
        Self::from_matrix(draw_matrix(rng, nt, nr))
    }

    pub fn nt(&self) -> usize {
        self.h.ncols()
    }

    pub fn nr(&self) -> usize {
        self.h.nrows()
    }

    /// Top eigenvector u₁ of HᴴH.
    pub fn top_eigenvector(&self) -> CVector {
        self.u.column(0).into_owned()
    }
}

/// Largest eigenvalue of HᴴH without eigenvectors, via the smaller Gram matrix.
pub fn sigma_star_of(h: &CMat) -> f64 {
    let g = if h.nrows() <= h.ncols() {
        h * h.adjoint()
    } else {
        h.adjoint() * h
    };
    match g.nrows() {
        0 => 0.0,
        1 => g[(0, 0)].re,
        2 => {
            let a = g[(0, 0)].re;
            let d = g[(1, 1)].re;
            let half = 0.5 * (a - d);
            0.5 * (a + d) + (half * half + g[(0, 1)].norm_sqr()).sqrt()
        }
        _ => SymmetricEigen::new(g).eigenvalues.max(),
    }
}

/// Tail quadrature rule: Σ wᵢ g(xᵢ) ≈ ∫_t^∞ g(x) dF(x).
#[derive(Debug, Clone, PartialEq)]
pub struct TailRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TailRule {
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Law {
    ClosedForm(WishartLargest),
    Empirical(Vec<f64>),
}

/// Distribution of σ*, the largest eigenvalue of HᴴH.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaStarDistribution {
    pub nt: usize,
    pub nr: usize,
    law: Law,
    mean: f64,
    upper: f64,
}

/// Largest closed-form dimension d = min(N_t, N_r).
pub const MAX_CLOSED_FORM_DIM: usize = 4;
const EMPIRICAL_DRAWS: usize = 1_000_000;
const EMPIRICAL_SEED: u64 = 0x5157_a5_0f;
const EMPIRICAL_NODES: usize = 4096;

impl SigmaStarDistribution {
    /// Closed form when min(N_t, N_r) ≤ 4, otherwise a seeded empirical law.
    pub fn new(nt: usize, nr: usize) -> Result<Self> {
        if nt == 0 || nr == 0 {
            return Err(Error::param("antenna counts must be positive"));
        }
        if nt.min(nr) > MAX_CLOSED_FORM_DIM {
            log::info!(
                "no closed-form sigma* law for {nt}x{nr}; using {EMPIRICAL_DRAWS} Monte Carlo draws"
            );
            return Self::empirical(nt, nr, EMPIRICAL_DRAWS, EMPIRICAL_SEED);
        }
        let law = WishartLargest::new(nt.max(nr), nt.min(nr));
        let upper = law.support_end();
        let mean = adaptive_simpson(|x| law.ccdf(x), 0.0, upper, 1e-11)?;
        Ok(Self { nt, nr, law: Law::ClosedForm(law), mean, upper })
    }

    /// Empirical law from `draws` seeded Monte Carlo samples.
    pub fn empirical(nt: usize, nr: usize, draws: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        if draws == 0 {
            return Err(Error::param("empirical law needs at least one draw"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s: Vec<f64> = (0..draws)
            .map(|_| sigma_star_of(&draw_matrix(&mut rng, nt, nr)))
            .collect();
        s.sort_by(|a, b| a.total_cmp(b));
        let mean = s.iter().sum::<f64>() / draws as f64;
        let upper = *s.last().unwrap_or(&0.0);
        Ok(Self { nt, nr, law: Law::Empirical(s), mean, upper })
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.law, Law::ClosedForm(_))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let v = match &self.law {
            Law::ClosedForm(w) => 1.0 - w.ccdf(x),
            Law::Empirical(s) => s.partition_point(|&v| v <= x) as f64 / s.len() as f64,
        };
        v.clamp(0.0, 1.0)
    }

    /// Density of σ*; only available for the closed form.
    pub fn density(&self, x: f64) -> Option<f64> {
        match &self.law {
            Law::ClosedForm(w) if x >= 0.0 => Some(w.density(x)),
            Law::ClosedForm(_) => Some(0.0),
            Law::Empirical(_) => None,
        }
    }

    /// σ̄ = ∫₀^∞ (1 − F(x)) dx.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// A point beyond which the tail mass is below 1e-17.
    pub fn support_end(&self) -> f64 {
        self.upper
    }

    /// Quantile by bisection on the CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        if let Law::Empirical(s) = &self.law {
            let idx = ((p * s.len() as f64) as usize).min(s.len() - 1);
            return s[idx];
        }
        let (mut lo, mut hi) = (0.0, self.upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Quadrature rule for ∫_t^∞ · dF.
    pub fn tail_rule(&self, threshold: f64) -> TailRule {
        let t = threshold.max(0.0);
        match &self.law {
            Law::ClosedForm(w) => {
                if !(t < self.upper) {
                    return TailRule { nodes: Vec::new(), weights: Vec::new() };
                }
                let width = (0.5 * self.mean).max(1e-3);
                let panels = (((self.upper - t) / width).ceil() as usize).clamp(4, 400);
                let (xs, ws) = composite_rule(t, self.upper, panels, 16);
                let weights = xs.iter().zip(&ws).map(|(&x, &wt)| wt * w.density(x)).collect();
                TailRule { nodes: xs, weights }
            }
            Law::Empirical(s) => {
                let n = s.len();
                let k = EMPIRICAL_NODES.min(n);
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                let start = s.partition_point(|&v| v <= t);
                // Compress the samples above t into k equal-mass groups.
                let above = n - start;
                if above == 0 {
                    return TailRule { nodes, weights };
                }
                let groups = k.min(above);
                for g in 0..groups {
                    let lo = start + g * above / groups;
                    let hi = start + (g + 1) * above / groups;
                    let mean = s[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                    nodes.push(mean);
                    weights.push((hi - lo) as f64 / n as f64);
                }
                TailRule { nodes, weights }
            }
        }
    }

    /// ∫_t^∞ g(x) dF(x).
    pub fn tail_expectation<G: Fn(f64) -> f64>(&self, threshold: f64, g: G) -> Result<f64> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::param("tail threshold must be nonnegative"));
        }
        let v = self.tail_rule(threshold).integrate(g);
        if !v.is_finite() {
            return Err(Error::numeric("tail integral is not finite"));
        }
        Ok(v)
    }
}

/// Largest eigenvalue of a d-dimensional complex Wishart matrix with m degrees of
/// freedom and identity scale, expressed through orthonormal Laguerre functions.
#[derive(Debug, Clone, PartialEq)]
struct WishartLargest {
    d: usize,
    alpha: usize,
    /// Polynomial coefficients of φ_iφ_j, index [i][j][k] for x^k.
    products: Vec<Vec<Vec<f64>>>,
    /// Index subsets of {0..d} grouped by size.
    subsets: Vec<Vec<Vec<usize>>>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Coefficients of the orthonormal Laguerre function sqrt(k!/(k+α)!)·L_k^{(α)}.
fn laguerre_orthonormal(k: usize, alpha: usize) -> Vec<f64> {
    let norm = (factorial(k) / factorial(k + alpha)).sqrt();
    (0..=k)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            norm * sign * binomial(k + alpha, k - j) / factorial(j)
        })
        .collect()
}

fn small_det(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let mut p = c;
        for r in c + 1..n {
            if m[r * n + c].abs() > m[p * n + c].abs() {
                p = r;
            }
        }
        if m[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                m.swap(c * n + k, p * n + k);
            }
            det = -det;
        }
        let piv = m[c * n + c];
        det *= piv;
        for r in c + 1..n {
            let f = m[r * n + c] / piv;
            if f != 0.0 {
                for k in c..n {
                    m[r * n + k] -= f * m[c * n + k];
                }
            }
        }
    }
    det
}

impl WishartLargest {
    fn new(m: usize, d: usize) -> Self {
        let alpha = m - d;
        let phis: Vec<Vec<f64>> = (0..d).map(|k| laguerre_orthonormal(k, alpha)).collect();
        let mut products = vec![vec![Vec::new(); d]; d];
        for i in 0..d {
            for j in 0..d {
                let mut p = vec![0.0; phis[i].len() + phis[j].len() - 1];
                for (a, ca) in phis[i].iter().enumerate() {
                    for (b, cb) in phis[j].iter().enumerate() {
                        p[a + b] += ca * cb;
                    }
                }
                products[i][j] = p;
            }
        }
        let mut subsets = vec![Vec::new(); d + 1];
        for mask in 1u32..(1 << d) {
            let s: Vec<usize> = (0..d).filter(|&i| mask & (1 << i) != 0).collect();
            subsets[s.len()].push(s);
        }
        Self { d, alpha, products, subsets }
    }

    fn max_power(&self) -> usize {
        2 * (self.d - 1) + self.alpha
    }

    /// ∫_x^∞ t^n e^{−t} dt for n = 0..=max_power.
    fn upper_gamma(&self, x: f64) -> Vec<f64> {
        let n = self.max_power();
        let e = (-x).exp();
        let mut g = Vec::with_capacity(n + 1);
        g.push(e);
        let mut xp = 1.0;
        for k in 1..=n {
            xp *= x;
            let prev = g[k - 1];
            g.push(xp * e + k as f64 * prev);
        }
        g
    }

    /// Tail Gram matrix T̄_ij(x) = ∫_x^∞ φ_i φ_j t^α e^{−t} dt.
    fn tail_matrix(&self, x: f64) -> Vec<f64> {
        let g = self.upper_gamma(x);
        let d = self.d;
        let mut t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                t[i * d + j] = self.products[i][j]
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * g[k + self.alpha])
                    .sum();
            }
        }
        t
    }

    /// Integrand column φ_i(x)φ_j(x) x^α e^{−x}.
    fn kernel_matrix(&self, x: f64) -> Vec<f64> {
        let d = self.d;
        let w = x.powi(self.alpha as i32) * (-x).exp();
        let mut t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let p = self.products[i][j].iter().rev().fold(0.0, |acc, c| acc * x + c);
                t[i * d + j] = p * w;
            }
        }
        t
    }

    fn minor(t: &[f64], d: usize, a: &[usize]) -> Vec<f64> {
        let k = a.len();
        let mut m = vec![0.0; k * k];
        for (r, &i) in a.iter().enumerate() {
            for (c, &j) in a.iter().enumerate() {
                m[r * k + c] = t[i * d + j];
            }
        }
        m
    }

    /// Pr[σ* > x] = Σ_k (−1)^{k−1} Σ_{|a|=k} det T̄_a(x).
    fn ccdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let t = self.tail_matrix(x);
        let mut total = 0.0;
        for k in 1..=self.d {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            for a in &self.subsets[k] {
                let mut m = Self::minor(&t, self.d, a);
                total += sign * small_det(&mut m, k);
            }
        }
        total
    }

    /// f(x) = −d/dx ccdf(x), by Jacobi's formula on each subset determinant.
    fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let t = self.tail_matrix(x);
        let dt = self.kernel_matrix(x);
        let mut total = 0.0;
        for k in 1..=self.d {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            for a in &self.subsets[k] {
                let base = Self::minor(&t, self.d, a);
                let deriv = Self::minor(&dt, self.d, a);
                for col in 0..k {
                    let mut m = base.clone();
                    for r in 0..k {
                        m[r * k + col] = deriv[r * k + col];
                    }
                    // d T̄/dx = −kernel, so −d det/dx adds the replaced determinant.
                    total += sign * small_det(&mut m, k);
                }
            }
        }
        total.max(0.0)
    }

    fn support_end(&self) -> f64 {
        let mut x = 1.0;
        while self.ccdf(x) > 1e-17 && x < 700.0 {
            x *= 1.25;
        }
        x
    }
}
