#![allow(dead_code)]

use ncs_core::plant::ContinuousPlant;
use ncs_core::{CMat, Mat, Vector, C64};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two-state MIMO example plant.
pub fn paper_plant() -> ContinuousPlant {
    ContinuousPlant::new(
        Mat::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 3.0]),
        Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]),
        Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
    )
    .unwrap()
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| normal(rng))
}

/// G Gᵀ with G having standard normal entries times `scale`.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Mat {
    let g = Mat::from_fn(n, n, |_, _| normal(rng) * scale);
    &g * g.transpose()
}

pub fn random_complex<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| C64::new(normal(rng), normal(rng)))
}
