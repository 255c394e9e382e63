//! Variance schedule (β_t, ᾱ_t) and the inference-timestep grid.
//!
//! Samplers never index the training grid directly: they work with the
//! *levels* of [`NoiseSchedule::levels`], one ᾱ per trajectory position
//! `0..=T`. Position 0 is the clean end of the trajectory and uses the
//! first grid value ᾱ_0 (strictly below 1, so the noise estimate stays
//! defined there); position `j ≥ 1` uses the ᾱ of the `j`-th inference
//! timestep.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WmError};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alpha_bars: Vec<T>,
    inference_timesteps: Vec<usize>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Linearly interpolated β between `beta_start` and `beta_end` (both
    /// inclusive), with the full grid as inference timesteps.
    pub fn linear(num_train_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_train_steps < 2 {
            return Err(WmError::InvalidSchedule(format!(
                "need at least 2 grid points, got {num_train_steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(WmError::InvalidSchedule(format!(
                "require 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let last = (num_train_steps - 1) as f64;
        let betas = (0..num_train_steps)
            .map(|i| T::lit(beta_start + (beta_end - beta_start) * (i as f64) / last))
            .collect();
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit β values; every β must lie in (0, 1).
    pub fn from_betas(betas: Vec<T>) -> Result<Self> {
        if betas.is_empty() {
            return Err(WmError::InvalidSchedule("empty beta table".into()));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > T::zero() && b < T::one()))
        {
            return Err(WmError::InvalidSchedule(format!("beta[{i}] = {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = T::one();
        for &b in &betas {
            acc = acc * (T::one() - b);
            alpha_bars.push(acc);
        }
        let inference_timesteps = (0..betas.len()).collect();
        Ok(Self { betas, alpha_bars, inference_timesteps })
    }

    /// Keeps the grid and selects `t` uniformly strided inference
    /// timesteps ending at the final grid index.
    pub fn subsample(&self, t: usize) -> Result<Self> {
        let n = self.num_train_steps();
        if t == 0 {
            return Err(WmError::InvalidSchedule("T must be positive".into()));
        }
        if t > n {
            return Err(WmError::InvalidSchedule(format!("T = {t} exceeds the {n}-point grid")));
        }
        let stride = n / t;
        let inference_timesteps = (0..t).map(|j| n - 1 - (t - 1 - j) * stride).collect();
        Ok(Self { inference_timesteps, ..self.clone() })
    }

    pub fn num_train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    pub fn inference_timesteps(&self) -> &[usize] {
        &self.inference_timesteps
    }

    /// Number of inference steps `T`.
    pub fn num_steps(&self) -> usize {
        self.inference_timesteps.len()
    }

    /// ᾱ per trajectory position `0..=T` (see the module docs).
    pub fn levels(&self) -> Vec<T> {
        std::iter::once(self.alpha_bars[0])
            .chain(self.inference_timesteps.iter().map(|&t| self.alpha_bars[t]))
            .collect()
    }
}

impl<T: Scalar> Default for NoiseSchedule<T> {
    /// The Stable-Diffusion-style linear schedule subsampled to 50 steps.
    fn default() -> Self {
        Self::linear(1000, 0.00085, 0.012)
            .and_then(|s| s.subsample(50))
            .expect("default schedule is valid")
    }
}
