//! Linear stand-in for the VAE: `decode(z) = A z`, `encode(x) = Aᵀ x + η`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, WmError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensorgrad::{Backend, Matrix};
use crate::{Image, Latent};

#[derive(Clone, Debug)]
pub struct LatentCodec<T> {
    mixing: Arc<Matrix<T>>,
    noise_std: T,
}

impl<T: Scalar> LatentCodec<T> {
    /// Wraps an explicit mixing matrix, which must be square and orthogonal.
    pub fn new(mixing: Matrix<T>, noise_std: T) -> Result<Self> {
        if mixing.rows() != mixing.cols() {
            return Err(WmError::InvalidConfig("mixing matrix must be square".into()));
        }
        if !(noise_std >= T::zero()) {
            return Err(WmError::InvalidConfig("noise std must be >= 0".into()));
        }
        let codec = Self { mixing: Arc::new(mixing), noise_std };
        let tol = if std::mem::size_of::<T>() == 8 { 1e-10 } else { 1e-4 };
        if codec.orthogonality_error() > tol {
            return Err(WmError::InvalidConfig("mixing matrix is not orthogonal".into()));
        }
        Ok(codec)
    }

    pub fn identity(d: usize, noise_std: T) -> Self {
        Self { mixing: Arc::new(Matrix::identity(d)), noise_std }
    }

    /// Random orthogonal mixing matrix: the Q factor of a seeded Gaussian
    /// matrix, with column signs fixed so that R has a positive diagonal.
    pub fn orthogonal(d: usize, seed: u64, noise_std: T) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let qr = g.qr();
        let (mut q, r) = (qr.q(), qr.r());
        for c in 0..d {
            if r[(c, c)] < 0.0 {
                q.column_mut(c).neg_mut();
            }
        }
        let data = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| T::lit(q[(i, j)]));
        Self {
            mixing: Arc::new(Matrix::new(d, d, data.collect()).expect("square")),
            noise_std,
        }
    }

    pub fn dim(&self) -> usize {
        self.mixing.rows()
    }

    pub fn noise_std(&self) -> T {
        self.noise_std
    }

    pub fn mixing(&self) -> &Arc<Matrix<T>> {
        &self.mixing
    }

    /// `max |AᵀA − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let mut s = T::zero();
                for r in 0..d {
                    s = s + self.mixing.get(r, i) * self.mixing.get(r, j);
                }
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s.f64() - want).abs());
            }
        }
        worst
    }

    pub fn decode(&self, z0: &[T]) -> Image<T> {
        self.mixing.matvec(z0)
    }

    /// `Aᵀ x + η` with `η ~ N(0, noise_std²)` drawn from `rng`.
    pub fn encode(&self, x: &[T], rng: &mut Rng) -> Latent<T> {
        let mut z = self.mixing.matvec_t(x);
        if self.noise_std > T::zero() {
            for zi in &mut z {
                let n: f64 = StandardNormal.sample(rng);
                *zi = *zi + self.noise_std * T::lit(n);
            }
        }
        z
    }

    /// Noise-free encoder `Aᵀ x` on any backend (the differentiable part).
    pub fn encode_mean<B: Backend<T>>(&self, b: &B, x: &B::V) -> B::V {
        b.matvec(&self.mixing, x, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_codec_is_isometric() {
        let c = LatentCodec::<f64>::orthogonal(16, 3, 0.0);
        assert!(c.orthogonality_error() < 1e-12);
        let z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = c.decode(&z);
        let nz: f64 = z.iter().map(|v| v * v).sum();
        let nx: f64 = x.iter().map(|v| v * v).sum();
        assert!((nz - nx).abs() < 1e-12);
        let back = c.encode(&x, &mut Rng::seed_from_u64(0));
        assert!(back.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn identity_and_zero_image() {
        let c = LatentCodec::<f64>::identity(4, 0.5);
        assert_eq!(c.decode(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
        let mut r1 = Rng::seed_from_u64(9);
        let mut r2 = Rng::seed_from_u64(9);
        let eta = c.encode(&[0.0; 4], &mut r1);
        let want: Vec<f64> =
            (0..4).map(|_| 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r2)).collect();
        assert_eq!(eta, want);
    }

    #[test]
    fn rejects_non_orthogonal() {
        let m = Matrix::new(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(LatentCodec::new(m, 0.0).is_err());
    }
}
