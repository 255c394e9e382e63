//! Analytic Gaussian-mixture noise predictor and the deterministic DDIM
//! sampler / inverter built on it.
//!
//! The data distribution is `Σ_k π_k N(μ_k, diag(v))`. Pushed through the
//! forward process at noise level ᾱ (write `a = √ᾱ`, `s = √(1−ᾱ)`), each
//! component becomes `N(a μ_k, diag(a² v + s²))`, so the minimum-MSE noise
//! predictor has the closed form
//!
//! ```text
//! w   = softmax_k( log π_k − ½ Σ_i (z_i − a μ_ki)² / var_i ),  var = a² v + s²
//! ε̂   = (s / var) ⊙ (z − a Σ_k w_k μ_k)
//! ```
//!
//! which is what [`Ddim::predict_eps`] evaluates (the `z`-only quadratic
//! term cancels inside the softmax and is dropped).

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WmError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensorgrad::{Backend, Eval, Matrix};
use crate::Latent;

/// Gaussian-mixture data prior with a shared diagonal covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel<T> {
    means: Vec<Vec<T>>,
    weights: Vec<T>,
    variances: Vec<T>,
}

impl<T: Scalar> ScoreModel<T> {
    /// Mixture with per-coordinate component variances `variances`.
    pub fn diagonal(means: Vec<Vec<T>>, weights: Vec<T>, variances: Vec<T>) -> Result<Self> {
        let d = variances.len();
        if means.is_empty() || means.len() != weights.len() {
            return Err(WmError::InvalidConfig(format!(
                "need K >= 1 means with one weight each (got {} means, {} weights)",
                means.len(),
                weights.len()
            )));
        }
        if let Some(m) = means.iter().find(|m| m.len() != d) {
            return Err(WmError::DimensionMismatch { expected: d, got: m.len() });
        }
        if means.iter().flatten().any(|x| !x.is_finite()) {
            return Err(WmError::InvalidConfig("non-finite mixture mean".into()));
        }
        if variances.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(WmError::InvalidConfig("variances must be finite and >= 0".into()));
        }
        let total: T = weights.iter().copied().sum();
        if weights.iter().any(|&w| !(w > T::zero())) || (total - T::one()).abs() > T::lit(1e-6) {
            return Err(WmError::InvalidConfig("mixture weights must be positive and sum to 1".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { means, weights, variances })
    }

    /// Mixture with one isotropic component variance.
    pub fn isotropic(means: Vec<Vec<T>>, weights: Vec<T>, variance: T) -> Result<Self> {
        let d = means.first().map_or(0, Vec::len);
        Self::diagonal(means, weights, vec![variance; d])
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn num_components(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn variances(&self) -> &[T] {
        &self.variances
    }

    /// Posterior component probabilities of `z` at noise level `alpha_bar`.
    pub fn posterior_weights(&self, z: &[T], alpha_bar: T) -> Vec<T> {
        let c = LevelCoeffs::new(self, alpha_bar);
        let logits = Eval.affine(&Eval.matvec(&c.logit_mat, &z.to_vec(), false), None, Some(&c.logit_bias));
        Eval.softmax(&logits)
    }

    /// `E[z_0 | z_ᾱ = z]`.
    pub fn posterior_mean(&self, z: &[T], alpha_bar: T) -> Vec<T> {
        let w = self.posterior_weights(z, alpha_bar);
        let a = alpha_bar.sqrt();
        let mut out = vec![T::zero(); self.dim()];
        for (k, mu) in self.means.iter().enumerate() {
            for i in 0..out.len() {
                let var = a * a * self.variances[i] + T::one() - alpha_bar;
                let c = a * self.variances[i] / var;
                out[i] = out[i] + w[k] * (mu[i] + c * (z[i] - a * mu[i]));
            }
        }
        out
    }

    /// Samples `z_0` from the data prior.
    pub fn sample_data(&self, rng: &mut Rng) -> Latent<T> {
        let u: f64 = rand::Rng::random(rng);
        let mut acc = 0.0;
        let mut k = self.means.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w.f64();
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances)
            .map(|(&m, &v)| {
                let n: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * T::lit(n)
            })
            .collect()
    }
}

/// Seeded construction of the toy prior.
///
/// A fixed, `manifold_seed`-keyed subset of `frac_on · d` coordinates
/// carries the data variance `var_on`; the remaining coordinates carry
/// `var_off` (near zero: the data manifold is thin in those directions).
/// The `K` means are random directions inside the manifold coordinates,
/// scaled to norm `mean_scale`, keyed by `means_seed`. A grey-box proxy
/// re-samples the means with another `means_seed` and keeps the manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelSpec {
    pub d: usize,
    pub k: usize,
    pub mean_scale: f64,
    pub var_on: f64,
    pub var_off: f64,
    pub frac_on: f64,
    pub manifold_seed: u64,
    pub means_seed: u64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            d: 1024,
            k: 8,
            mean_scale: 3.0,
            var_on: 2.5,
            var_off: 1e-6,
            frac_on: 0.5,
            manifold_seed: 1234,
            means_seed: 1,
        }
    }
}

impl ToyModelSpec {
    /// Isotropic mixture: every coordinate carries `variance`.
    pub fn isotropic(d: usize, variance: f64, means_seed: u64) -> Self {
        Self { d, var_on: variance, var_off: variance, frac_on: 1.0, means_seed, ..Self::default() }
    }

    pub fn with_means_seed(&self, means_seed: u64) -> Self {
        Self { means_seed, ..self.clone() }
    }

    /// Coordinates carrying `var_on`.
    pub fn manifold_mask(&self) -> Vec<bool> {
        let mut idx: Vec<usize> = (0..self.d).collect();
        idx.shuffle(&mut Rng::seed_from_u64(self.manifold_seed));
        let n_on = ((self.frac_on * self.d as f64).round() as usize).min(self.d);
        let mut mask = vec![false; self.d];
        for &i in &idx[..n_on] {
            mask[i] = true;
        }
        mask
    }

    pub fn build<T: Scalar>(&self) -> Result<ScoreModel<T>> {
        if self.d == 0 || self.k == 0 {
            return Err(WmError::InvalidConfig("model needs d >= 1 and K >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.frac_on) {
            return Err(WmError::InvalidConfig(format!("frac_on = {} outside [0, 1]", self.frac_on)));
        }
        let mask = self.manifold_mask();
        let mut rng = Rng::seed_from_u64(self.means_seed);
        let means = (0..self.k)
            .map(|_| {
                let raw: Vec<f64> = mask
                    .iter()
                    .map(|&on| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        if on { g } else { 0.0 }
                    })
                    .collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                let scale = if norm > 0.0 { self.mean_scale / norm } else { 0.0 };
                raw.iter().map(|x| T::lit(x * scale)).collect()
            })
            .collect();
        let variances =
            mask.iter().map(|&on| T::lit(if on { self.var_on } else { self.var_off })).collect();
        let weights = vec![T::lit(1.0 / self.k as f64); self.k];
        ScoreModel::diagonal(means, weights, variances)
    }
}

/// Per-level constants of the noise predictor.
#[derive(Clone, Debug)]
struct LevelCoeffs<T> {
    /// `√ᾱ`.
    a: T,
    /// `√(1−ᾱ)`.
    s: T,
    /// Rows `a μ_k / var`.
    logit_mat: Arc<Matrix<T>>,
    /// `log π_k − ½ a² Σ_i μ_ki² / var_i`.
    logit_bias: Arc<Vec<T>>,
    /// Rows `μ_k` (used transposed to form `Σ_k w_k μ_k`).
    means: Arc<Matrix<T>>,
    /// `s / var`.
    eps_gain: Arc<Vec<T>>,
}

impl<T: Scalar> LevelCoeffs<T> {
    fn new(model: &ScoreModel<T>, alpha_bar: T) -> Self {
        let a = alpha_bar.sqrt();
        let s2 = T::one() - alpha_bar;
        let s = s2.sqrt();
        let var: Vec<T> = model.variances.iter().map(|&v| alpha_bar * v + s2).collect();
        let rows: Vec<Vec<T>> = model
            .means
            .iter()
            .map(|mu| mu.iter().zip(&var).map(|(&m, &vr)| a * m / vr).collect())
            .collect();
        let bias = model
            .means
            .iter()
            .zip(&model.weights)
            .map(|(mu, &w)| {
                let q = mu.iter().zip(&var).fold(T::zero(), |acc, (&m, &vr)| acc + m * m / vr);
                w.ln() - T::lit(0.5) * alpha_bar * q
            })
            .collect();
        Self {
            a,
            s,
            logit_mat: Arc::new(Matrix::from_rows(&rows).expect("rectangular")),
            logit_bias: Arc::new(bias),
            means: Arc::new(Matrix::from_rows(&model.means).expect("rectangular")),
            eps_gain: Arc::new(var.iter().map(|&vr| s / vr).collect()),
        }
    }
}

/// Ordered latents `z_0 … z_T` visited by one inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub latents: Vec<Latent<T>>,
}

impl<T> Trajectory<T> {
    pub fn last(&self) -> &Latent<T> {
        self.latents.last().expect("trajectory is never empty")
    }
}

/// DDIM sampler and inverter for one model over one timestep grid.
#[derive(Clone, Debug)]
pub struct Ddim<T> {
    model: Arc<ScoreModel<T>>,
    levels: Vec<T>,
    coeffs: Vec<LevelCoeffs<T>>,
}

impl<T: Scalar> Ddim<T> {
    pub fn new(model: Arc<ScoreModel<T>>, schedule: &NoiseSchedule<T>) -> Self {
        Self::from_levels(model, schedule.levels()).expect("schedule levels are valid")
    }

    /// Uses explicit ᾱ per trajectory position; each must lie in (0, 1).
    pub fn from_levels(model: Arc<ScoreModel<T>>, levels: Vec<T>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(WmError::InvalidSchedule("need at least two levels".into()));
        }
        if levels.iter().any(|&l| !(l > T::zero() && l < T::one())) {
            return Err(WmError::InvalidSchedule("levels must lie in (0, 1)".into()));
        }
        let coeffs = levels.iter().map(|&l| LevelCoeffs::new(&model, l)).collect();
        Ok(Self { model, levels, coeffs })
    }

    pub fn model(&self) -> &Arc<ScoreModel<T>> {
        &self.model
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    /// Number of inference steps `T`.
    pub fn num_steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn check(&self, index: usize, lo: usize, hi: usize) -> Result<()> {
        if index < lo || index > hi {
            return Err(WmError::TimestepOutOfRange { index, lo, hi });
        }
        Ok(())
    }

    /// ε̂(z) at trajectory position `j`.
    pub fn predict_eps<B: Backend<T>>(&self, b: &B, z: &B::V, j: usize) -> Result<B::V> {
        self.check(j, 0, self.num_steps())?;
        let c = &self.coeffs[j];
        let logits = b.affine(&b.matvec(&c.logit_mat, z, false), None, Some(&c.logit_bias));
        let w = b.softmax(&logits);
        let mbar = b.matvec(&c.means, &w, true);
        let centered = b.lincomb(&[(T::one(), z), (-c.a, &mbar)]);
        Ok(b.affine(&centered, Some(&c.eps_gain), None))
    }

    /// Deterministic DDIM transfer of `z` from position `from` to `to`
    /// using ε̂ evaluated at position `eval`.
    pub fn transfer<B: Backend<T>>(
        &self,
        b: &B,
        z: &B::V,
        from: usize,
        to: usize,
        eval: usize,
    ) -> Result<B::V> {
        let eps = self.predict_eps(b, z, eval)?;
        let (cf, ct) = (&self.coeffs[from], &self.coeffs[to]);
        let ratio = ct.a / cf.a;
        Ok(b.lincomb(&[(ratio, z), (ct.s - ratio * cf.s, &eps)]))
    }

    /// DDIM inversion step: position `j` → `j+1`, ε̂ evaluated at `j`.
    pub fn inverse_step<B: Backend<T>>(&self, b: &B, z: &B::V, j: usize) -> Result<B::V> {
        self.check(j, 0, self.num_steps() - 1)?;
        self.transfer(b, z, j, j + 1, j)
    }

    /// DDIM denoising step: position `j` → `j−1`, ε̂ evaluated at `j`.
    pub fn denoise_step<B: Backend<T>>(&self, b: &B, z: &B::V, j: usize) -> Result<B::V> {
        self.check(j, 1, self.num_steps())?;
        self.transfer(b, z, j, j - 1, j)
    }

    /// `I_{0→T}` without keeping the intermediate latents.
    pub fn invert<B: Backend<T>>(&self, b: &B, z0: &B::V) -> Result<B::V> {
        let mut z = z0.clone();
        for j in 0..self.num_steps() {
            z = self.inverse_step(b, &z, j)?;
        }
        Ok(z)
    }

    pub fn invert_full(&self, z0: &[T]) -> Result<Trajectory<T>> {
        let mut latents = Vec::with_capacity(self.levels.len());
        latents.push(z0.to_vec());
        for j in 0..self.num_steps() {
            let next = self.inverse_step(&Eval, latents.last().expect("nonempty"), j)?;
            latents.push(next);
        }
        Ok(Trajectory { latents })
    }

    pub fn denoise_full(&self, zt: &[T]) -> Result<Latent<T>> {
        let mut z = zt.to_vec();
        for j in (1..=self.num_steps()).rev() {
            z = self.denoise_step(&Eval, &z, j)?;
        }
        Ok(z)
    }

    /// The clean-latent estimate `(z − √(1−ᾱ) ε̂) / √ᾱ` at position `j`.
    pub fn predict_x0(&self, z: &[T], j: usize) -> Result<Latent<T>> {
        let eps = self.predict_eps(&Eval, &z.to_vec(), j)?;
        let c = &self.coeffs[j];
        Ok(z.iter().zip(&eps).map(|(&zi, &e)| (zi - c.s * e) / c.a).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mass(mu: Vec<f64>) -> Arc<ScoreModel<f64>> {
        Arc::new(ScoreModel::isotropic(vec![mu], vec![1.0], 0.0).unwrap())
    }

    #[test]
    fn point_mass_eps_is_analytic() {
        let mu = vec![0.5, -1.0, 2.0];
        let d = Ddim::new(point_mass(mu.clone()), &NoiseSchedule::default());
        let z = vec![0.1, 0.2, -0.3];
        let eps = d.predict_eps(&Eval, &z, 10).unwrap();
        let ab = d.levels()[10];
        for i in 0..3 {
            let want = (z[i] - ab.sqrt() * mu[i]) / (1.0 - ab).sqrt();
            assert!((eps[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_at_origin_predicts_zero() {
        let mu = vec![1.0, -2.0, 0.5, 3.0];
        let neg: Vec<f64> = mu.iter().map(|x| -x).collect();
        let m = Arc::new(ScoreModel::isotropic(vec![mu, neg], vec![0.5, 0.5], 0.1).unwrap());
        let d = Ddim::new(m.clone(), &NoiseSchedule::default());
        let w = m.posterior_weights(&[0.0; 4], d.levels()[20]);
        assert!((w[0] - 0.5).abs() < 1e-15);
        let eps = d.predict_eps(&Eval, &vec![0.0; 4], 20).unwrap();
        assert!(eps.iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn step_boundaries() {
        let d = Ddim::new(point_mass(vec![0.0; 2]), &NoiseSchedule::default());
        let z = vec![0.0; 2];
        assert!(d.inverse_step(&Eval, &z, 50).is_err());
        assert!(d.denoise_step(&Eval, &z, 0).is_err());
        assert!(d.predict_eps(&Eval, &z, 51).is_err());
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ScoreModel::<f64>::isotropic(vec![], vec![], 0.1).is_err());
        assert!(ScoreModel::isotropic(vec![vec![0.0]], vec![0.5], 0.1).is_err());
        assert!(ScoreModel::isotropic(vec![vec![0.0]], vec![1.0], -0.1).is_err());
    }

    #[test]
    fn toy_means_live_on_manifold() {
        let spec = ToyModelSpec::default();
        let m: ScoreModel<f64> = spec.build().unwrap();
        let mask = spec.manifold_mask();
        assert_eq!(mask.iter().filter(|&&x| x).count(), 512);
        for mu in m.means() {
            let n2: f64 = mu.iter().map(|x| x * x).sum();
            assert!((n2.sqrt() - 3.0).abs() < 1e-12);
            assert!(mu.iter().zip(&mask).all(|(&x, &on)| on || x == 0.0));
        }
        let proxy: ScoreModel<f64> = spec.with_means_seed(99).build().unwrap();
        assert_eq!(proxy.variances(), m.variances());
        assert_ne!(proxy.means(), m.means());
    }
}
