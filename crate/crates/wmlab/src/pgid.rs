//! Progressive Guided Inversion and Denoising (PGID).
//!
//! Stage I inverts the suspect latent once and keeps the trajectory
//! `{z_t^atk}`. Stage II runs `k` cycles; cycle `i` inverts `i − s` steps
//! (pushing away from the stored trajectory by `γ` after each step) and
//! then denoises `i` steps back to position 0 — more denoising than
//! inversion, which pulls the latent back toward the data manifold.
//! Stage III inverts the refined latent in full.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::diffusion::Ddim;
use crate::error::{Result, WmError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensorgrad::Eval;
use crate::watermarks::{DetectionReport, WatermarkKey};
use crate::Latent;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgidConfig {
    pub k_stop: usize,
    pub s_skip: usize,
    pub gamma: f64,
}

impl PgidConfig {
    /// Removal profile: `k = 10, s = 1, γ = 0.045`.
    pub const REMOVAL: PgidConfig = PgidConfig { k_stop: 10, s_skip: 1, gamma: 0.045 };
    /// Forgery profile: `k = 15, s = 3, γ = 0.001`.
    pub const FORGERY: PgidConfig = PgidConfig { k_stop: 15, s_skip: 3, gamma: 0.001 };

    pub fn validate(&self, num_steps: usize) -> Result<()> {
        if self.k_stop >= num_steps {
            return Err(WmError::InvalidConfig(format!(
                "k = {} must be below T = {num_steps}",
                self.k_stop
            )));
        }
        if self.s_skip > self.k_stop {
            return Err(WmError::InvalidConfig(format!("s = {} exceeds k = {}", self.s_skip, self.k_stop)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(WmError::InvalidConfig(format!("gamma = {} must be finite and >= 0", self.gamma)));
        }
        Ok(())
    }

    /// Closed-form stage-II counts: `(Σ_i max(i−s, 0), k(k+1)/2)`.
    pub fn predicted_steps(&self) -> StepCounts {
        let inversions = (1..=self.k_stop).map(|i| i.saturating_sub(self.s_skip)).sum();
        StepCounts { inversions, denoisings: self.k_stop * (self.k_stop + 1) / 2 }
    }
}

/// Named defense profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Baseline,
    PgidR,
    PgidF,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Baseline, Profile::PgidR, Profile::PgidF];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Baseline => "baseline",
            Profile::PgidR => "pgid-r",
            Profile::PgidF => "pgid-f",
        }
    }

    pub fn config(self) -> Option<PgidConfig> {
        match self {
            Profile::Baseline => None,
            Profile::PgidR => Some(PgidConfig::REMOVAL),
            Profile::PgidF => Some(PgidConfig::FORGERY),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Profile {
    type Err = WmError;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| WmError::InvalidConfig(format!("unknown profile {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub inversions: usize,
    pub denoisings: usize,
}

/// Instrumentation of one PGID run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PgidTrace {
    pub stage2: StepCounts,
    pub stage_times: [Duration; 3],
}

/// Runs the three PGID stages on an already-encoded latent `z_0^atk`; returns the
/// final inverted noise and the instrumentation.
pub fn pgid_latent<T: Scalar>(cfg: &PgidConfig, ddim: &Ddim<T>, z0_atk: &[T]) -> Result<(Latent<T>, PgidTrace)> {
    cfg.validate(ddim.num_steps())?;
    let mut trace = PgidTrace::default();

    let t0 = Instant::now();
    let traj = ddim.invert_full(z0_atk)?;
    trace.stage_times[0] = t0.elapsed();

    let t1 = Instant::now();
    let gamma = T::lit(cfg.gamma);
    let mut z = z0_atk.to_vec();
    for i in 1..=cfg.k_stop {
        for t in 1..=i.saturating_sub(cfg.s_skip) {
            z = ddim.inverse_step(&Eval, &z, t - 1)?;
            trace.stage2.inversions += 1;
            for (zi, &ri) in z.iter_mut().zip(&traj.latents[t]) {
                *zi = *zi + gamma * (*zi - ri);
            }
        }
        for t in (1..=i).rev() {
            z = ddim.denoise_step(&Eval, &z, t)?;
            trace.stage2.denoisings += 1;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(WmError::NonFinite { cycle: i });
        }
    }
    trace.stage_times[1] = t1.elapsed();

    let t2 = Instant::now();
    let out = ddim.invert_full(&z)?.last().clone();
    trace.stage_times[2] = t2.elapsed();
    Ok((out, trace))
}

/// PGID from the suspect image: encode, then [`pgid_latent`].
pub fn pgid_extract<T: Scalar>(
    cfg: &PgidConfig,
    ddim: &Ddim<T>,
    codec: &LatentCodec<T>,
    x_atk: &[T],
    rng: &mut Rng,
) -> Result<Latent<T>> {
    let z0 = codec.encode(x_atk, rng);
    pgid_latent(cfg, ddim, &z0).map(|(z, _)| z)
}

/// Noise estimate under a profile: standard inversion or PGID.
pub fn extract_noise<T: Scalar>(profile: Profile, ddim: &Ddim<T>, z0: &[T]) -> Result<Latent<T>> {
    match profile.config() {
        None => Ok(ddim.invert_full(z0)?.last().clone()),
        Some(cfg) => pgid_latent(&cfg, ddim, z0).map(|(z, _)| z),
    }
}

/// PGID-R followed by detection.
pub fn pgid_defend_removal<T: Scalar>(
    key: &WatermarkKey,
    ddim: &Ddim<T>,
    codec: &LatentCodec<T>,
    x_susp: &[T],
    rng: &mut Rng,
) -> Result<DetectionReport> {
    key.detect(&pgid_extract(&PgidConfig::REMOVAL, ddim, codec, x_susp, rng)?)
}

/// PGID-F followed by detection; a forged image is expected to lose the mark.
pub fn pgid_defend_forgery<T: Scalar>(
    key: &WatermarkKey,
    ddim: &Ddim<T>,
    codec: &LatentCodec<T>,
    x_susp: &[T],
    rng: &mut Rng,
) -> Result<DetectionReport> {
    key.detect(&pgid_extract(&PgidConfig::FORGERY, ddim, codec, x_susp, rng)?)
}
