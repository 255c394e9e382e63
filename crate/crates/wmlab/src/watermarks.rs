//! Tree-Ring, Gaussian Shading and T2SMark: key generation, watermarked
//! initial-noise sampling and detection on an estimated initial noise.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, WmError};
use crate::rng::Rng;
use crate::scalar::{from_f64_vec, to_f64_vec, Scalar};
use crate::special::{binomial_half_upper_tail, ncx2_log_cdf, normal_sf, normal_upper_quantile};
use crate::Latent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    TreeRing,
    GaussianShading,
    #[serde(rename = "t2smark")]
    T2SMark,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::GaussianShading, Scheme::TreeRing, Scheme::T2SMark];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::TreeRing => "tree-ring",
            Scheme::GaussianShading => "gaussian-shading",
            Scheme::T2SMark => "t2smark",
        }
    }

    pub fn is_multi_bit(self) -> bool {
        !matches!(self, Scheme::TreeRing)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = WmError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| WmError::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

/// Which side of the threshold counts as "watermark present".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Above,
    Below,
}

impl Direction {
    pub fn detects(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Direction::Above => statistic > threshold,
            Direction::Below => statistic <= threshold,
        }
    }

    /// Maps a statistic to a score where larger means more watermark-like.
    pub fn orient(self, statistic: f64) -> f64 {
        match self {
            Direction::Above => statistic,
            Direction::Below => -statistic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scheme: Scheme,
    pub statistic: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub detected: bool,
    pub bits: Option<Vec<bool>>,
    pub bit_accuracy: Option<f64>,
    pub p_value: Option<f64>,
}

impl DetectionReport {
    /// Statistic oriented so that larger is more watermark-like.
    pub fn score(&self) -> f64 {
        self.direction.orient(self.statistic)
    }
}

// ---------------------------------------------------------------------------
// Gaussian Shading

/// Single-test false-positive rate `P(c > c_tau)` under `Bin(k_bits, ½)`.
pub fn gs_fpr(c_tau: u64, k_bits: u64) -> f64 {
    binomial_half_upper_tail(c_tau, k_bits)
}

/// Smallest `c_tau < k_bits` with `1 − (1 − FPR(c_tau))^N ≤ target_fpr`,
/// returned with the bit-accuracy threshold `c_tau / k_bits`.
pub fn gs_threshold(k_bits: u64, n_users: u64, target_fpr: f64) -> Result<(u64, f64)> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(WmError::InvalidConfig(format!("target FPR {target_fpr} outside (0, 1)")));
    }
    if k_bits == 0 || n_users == 0 {
        return Err(WmError::InvalidConfig("k_bits and N must be positive".into()));
    }
    let n = n_users as f64;
    (0..k_bits)
        .find(|&c| -(n * (-gs_fpr(c, k_bits)).ln_1p()).exp_m1() <= target_fpr)
        .map(|c| (c, c as f64 / k_bits as f64))
        .ok_or_else(|| {
            WmError::Unsatisfiable(format!(
                "k_bits = {k_bits} cannot reach FPR {target_fpr} over {n_users} users"
            ))
        })
}

fn keyed_bits(seed: u64, n: usize) -> Vec<bool> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<bool>()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianShadingKey {
    pub dim: usize,
    pub secret_key: u64,
    pub message: Vec<bool>,
    pub replication: usize,
    pub n_users: u64,
    pub target_fpr: f64,
    pub c_tau: u64,
}

impl GaussianShadingKey {
    pub fn new(
        dim: usize,
        secret_key: u64,
        message: Vec<bool>,
        replication: usize,
        n_users: u64,
        target_fpr: f64,
    ) -> Result<Self> {
        let k = message.len();
        if k == 0 || replication == 0 || k * replication > dim {
            return Err(WmError::InvalidConfig(format!(
                "need 0 < k_bits * rho <= d (k_bits = {k}, rho = {replication}, d = {dim})"
            )));
        }
        let (c_tau, _) = gs_threshold(k as u64, n_users, target_fpr)?;
        Ok(Self { dim, secret_key, message, replication, n_users, target_fpr, c_tau })
    }

    pub fn k_bits(&self) -> usize {
        self.message.len()
    }

    pub fn tau(&self) -> f64 {
        self.c_tau as f64 / self.k_bits() as f64
    }

    fn stream(&self) -> Vec<bool> {
        keyed_bits(self.secret_key, self.k_bits())
    }

    pub fn encrypt(&self, bits: &[bool]) -> Vec<bool> {
        bits.iter().zip(self.stream()).map(|(&b, s)| b ^ s).collect()
    }

    pub fn decrypt(&self, bits: &[bool]) -> Vec<bool> {
        self.encrypt(bits)
    }

    /// Coordinate carrying copy `r` of bit `i`.
    fn slot(&self, r: usize, i: usize) -> usize {
        r * self.k_bits() + i
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let enc = self.encrypt(&self.message);
        let mut z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        for r in 0..self.replication {
            for (i, &b) in enc.iter().enumerate() {
                let j = self.slot(r, i);
                z[j] = if b { z[j].abs() } else { -z[j].abs() };
            }
        }
        z
    }

    /// Per-bit majority vote over the sign copies (ties broken by the sign
    /// of the summed copies), then decryption.
    pub fn recover(&self, z: &[f64]) -> Vec<bool> {
        let votes: Vec<bool> = (0..self.k_bits())
            .map(|i| {
                let (mut pos, mut sum) = (0_i64, 0.0);
                for r in 0..self.replication {
                    let v = z[self.slot(r, i)];
                    pos += if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
                    sum += v;
                }
                if pos != 0 { pos > 0 } else { sum > 0.0 }
            })
            .collect();
        self.decrypt(&votes)
    }

    fn detect(&self, z: &[f64]) -> DetectionReport {
        let bits = self.recover(z);
        let c = bits.iter().zip(&self.message).filter(|(a, b)| a == b).count() as u64;
        let acc = c as f64 / self.k_bits() as f64;
        let p = if c == 0 { 1.0 } else { gs_fpr(c - 1, self.k_bits() as u64) };
        DetectionReport {
            scheme: Scheme::GaussianShading,
            statistic: acc,
            threshold: self.tau(),
            direction: Direction::Above,
            detected: c > self.c_tau,
            bits: Some(bits),
            bit_accuracy: Some(acc),
            p_value: Some(p),
        }
    }
}

// ---------------------------------------------------------------------------
// Tree-Ring

fn fft2(data: &mut [Complex64], side: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(side) } else { planner.plan_fft_forward(side) };
    for row in data.chunks_mut(side) {
        fft.process(row);
    }
    let mut col = vec![Complex64::default(); side];
    for c in 0..side {
        for r in 0..side {
            col[r] = data[r * side + c];
        }
        fft.process(&mut col);
        for r in 0..side {
            data[r * side + c] = col[r];
        }
    }
    if inverse {
        let n = (side * side) as f64;
        for v in data.iter_mut() {
            *v /= n;
        }
    }
}

/// 2-D DFT of a `side × side` real image stored row-major.
pub fn fft2_real(z: &[f64], side: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = z.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft2(&mut buf, side, false);
    buf
}

/// Inverse 2-D DFT, normalized by `side²`.
pub fn ifft2(mut spec: Vec<Complex64>, side: usize) -> Vec<Complex64> {
    fft2(&mut spec, side, true);
    spec
}

/// One masked frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingCell {
    pub index: usize,
    pub ring: usize,
    /// Real frequency (its own conjugate): carries one degree of freedom.
    pub self_conjugate: bool,
    /// First of its conjugate pair (or self-conjugate): counted by the test.
    pub representative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRingKey {
    pub side: usize,
    pub radius: usize,
    /// Real target value per ring index `0..=radius`.
    pub ring_values: Vec<f64>,
    pub cells: Vec<RingCell>,
    pub threshold: Option<f64>,
}

impl TreeRingKey {
    /// Ring mask of the given radius over symmetric FFT frequencies; one
    /// `N(0, side²)` target per ring, keyed by `seed`.
    pub fn new(side: usize, radius: usize, seed: u64) -> Result<Self> {
        if side < 2 || 2 * radius >= side {
            return Err(WmError::InvalidConfig(format!(
                "ring radius {radius} does not fit a {side}x{side} grid"
            )));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let ring_values = (0..=radius)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * side as f64)
            .collect();
        let freq = |i: usize| -> i64 {
            if i <= (side - 1) / 2 { i as i64 } else { i as i64 - side as i64 }
        };
        let mut cells = Vec::new();
        for u in 0..side {
            for v in 0..side {
                let (fu, fv) = (freq(u) as f64, freq(v) as f64);
                let dist = (fu * fu + fv * fv).sqrt();
                if dist <= radius as f64 {
                    let (cu, cv) = ((side - u) % side, (side - v) % side);
                    cells.push(RingCell {
                        index: u * side + v,
                        ring: (dist - 1e-9).ceil().max(0.0) as usize,
                        self_conjugate: (cu, cv) == (u, v),
                        representative: (u, v) <= (cu, cv),
                    });
                }
            }
        }
        Ok(Self { side, radius, ring_values, cells, threshold: None })
    }

    pub fn target(&self, cell: &RingCell) -> f64 {
        self.ring_values[cell.ring]
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.side * self.side).map(|_| StandardNormal.sample(rng)).collect();
        let mut spec = fft2_real(&z, self.side);
        for c in &self.cells {
            spec[c.index] = Complex64::new(self.target(c), 0.0);
        }
        ifft2(spec, self.side).into_iter().map(|c| c.re).collect()
    }

    /// Chi-square distance of the masked spectrum to the key in units of the
    /// observed masked power, with its degrees of freedom and noncentrality.
    pub fn distance(&self, z: &[f64]) -> (f64, f64, f64) {
        let spec = fft2_real(z, self.side);
        let (mut power, mut dist, mut target_power, mut dof) = (0.0, 0.0, 0.0, 0.0);
        for c in self.cells.iter().filter(|c| c.representative) {
            let f = spec[c.index];
            let t = self.target(c);
            let w = if c.self_conjugate { 0.5 } else { 1.0 };
            power += w * f.norm_sqr();
            dist += w * (f - t).norm_sqr();
            target_power += w * t * t;
            dof += if c.self_conjugate { 1.0 } else { 2.0 };
        }
        let sigma2 = power / dof;
        (dist / sigma2, dof, target_power / sigma2)
    }

    fn detect(&self, z: &[f64]) -> DetectionReport {
        let (x, dof, lambda) = self.distance(z);
        let log_p = if x.is_finite() && lambda.is_finite() { ncx2_log_cdf(x, dof, lambda) } else { 0.0 };
        let threshold = self.threshold.unwrap_or(f64::NEG_INFINITY);
        DetectionReport {
            scheme: Scheme::TreeRing,
            statistic: log_p,
            threshold,
            direction: Direction::Below,
            detected: Direction::Below.detects(log_p, threshold),
            bits: None,
            bit_accuracy: None,
            p_value: Some(log_p.exp()),
        }
    }
}

// ---------------------------------------------------------------------------
// T2SMark

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2SMarkKey {
    pub dim: usize,
    pub tau_tts: f64,
    pub carriers: Vec<Vec<usize>>,
    pub signs: Vec<Vec<bool>>,
    pub message: Vec<bool>,
    pub threshold: Option<f64>,
    /// Gaussian fit `(mean, std)` of the null statistic.
    pub null_fit: Option<(f64, f64)>,
}

impl T2SMarkKey {
    pub fn new(dim: usize, n_bits: usize, per_bit: usize, tau_tts: f64, seed: u64) -> Result<Self> {
        if n_bits == 0 || per_bit == 0 || n_bits * per_bit > dim || !(tau_tts >= 0.0) {
            return Err(WmError::InvalidConfig(format!(
                "T2SMark needs 0 < bits * carriers <= d and tau >= 0 (bits {n_bits}, carriers {per_bit}, d {dim})"
            )));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..dim).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let carriers = idx[..n_bits * per_bit].chunks(per_bit).map(<[usize]>::to_vec).collect();
        let signs = (0..n_bits).map(|_| (0..per_bit).map(|_| rng.random()).collect()).collect();
        let message = (0..n_bits).map(|_| rng.random()).collect();
        Ok(Self { dim, tau_tts, carriers, signs, message, threshold: None, null_fit: None })
    }

    pub fn is_carrier(&self) -> Vec<bool> {
        let mut m = vec![false; self.dim];
        for &i in self.carriers.iter().flatten() {
            m[i] = true;
        }
        m
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let normal = Normal::standard();
        let p0 = normal.cdf(self.tau_tts);
        let mut z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        for ((car, sg), &bit) in self.carriers.iter().zip(&self.signs).zip(&self.message) {
            for (&i, &s) in car.iter().zip(sg) {
                let u: f64 = rng.random();
                let mag = normal.inverse_cdf(p0 + u * (1.0 - p0)).max(self.tau_tts);
                z[i] = if bit ^ !s { mag } else { -mag };
            }
        }
        z
    }

    /// Per-bit signed carrier sums of the unit-RMS-normalized latent.
    pub fn projections(&self, z: &[f64]) -> Vec<f64> {
        let rms = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt();
        let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
        self.carriers
            .iter()
            .zip(&self.signs)
            .map(|(car, sg)| {
                car.iter().zip(sg).map(|(&i, &s)| if s { z[i] } else { -z[i] }).sum::<f64>() * scale
            })
            .collect()
    }

    fn detect(&self, z: &[f64]) -> DetectionReport {
        let proj = self.projections(z);
        let stat: f64 = proj.iter().map(|p| p.abs()).sum();
        let bits: Vec<bool> = proj.iter().map(|&p| p > 0.0).collect();
        let acc = bits.iter().zip(&self.message).filter(|(a, b)| a == b).count() as f64
            / self.message.len() as f64;
        let threshold = self.threshold.unwrap_or(f64::INFINITY);
        DetectionReport {
            scheme: Scheme::T2SMark,
            statistic: stat,
            threshold,
            direction: Direction::Above,
            detected: Direction::Above.detects(stat, threshold),
            bits: Some(bits),
            bit_accuracy: Some(acc),
            p_value: self.null_fit.map(|(m, s)| normal_sf((stat - m) / s)),
        }
    }
}

// ---------------------------------------------------------------------------
// Common interface

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum WatermarkKey {
    TreeRing(TreeRingKey),
    GaussianShading(GaussianShadingKey),
    T2SMark(T2SMarkKey),
}

/// How a threshold is derived from null statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Calibration {
    /// Empirical lower quantile (detect when the statistic is at or below it).
    EmpiricalLower,
    /// Gaussian fit, critical value at the upper tail.
    GaussianUpper,
}

/// Threshold achieving `target_fpr` on the null statistics.
pub fn calibrate_threshold(null: &[f64], target_fpr: f64, method: Calibration) -> Result<f64> {
    if null.len() < 100 {
        return Err(WmError::TooFewSamples { needed: 100, got: null.len() });
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(WmError::InvalidConfig(format!("target FPR {target_fpr} outside (0, 1)")));
    }
    match method {
        Calibration::EmpiricalLower => {
            let rank = (null.len() as f64 * target_fpr).round() as usize;
            if rank == 0 {
                let needed = (1.0 / target_fpr).ceil() as usize;
                return Err(WmError::TooFewSamples { needed, got: null.len() });
            }
            let mut sorted = null.to_vec();
            sorted.sort_by(f64::total_cmp);
            Ok(sorted[rank - 1])
        }
        Calibration::GaussianUpper => {
            let (mean, std) = mean_std(null);
            Ok(mean + normal_upper_quantile(target_fpr) * std)
        }
    }
}

/// Sample mean and (n−1) standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl WatermarkKey {
    pub fn scheme(&self) -> Scheme {
        match self {
            WatermarkKey::TreeRing(_) => Scheme::TreeRing,
            WatermarkKey::GaussianShading(_) => Scheme::GaussianShading,
            WatermarkKey::T2SMark(_) => Scheme::T2SMark,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            WatermarkKey::TreeRing(k) => k.side * k.side,
            WatermarkKey::GaussianShading(k) => k.dim,
            WatermarkKey::T2SMark(k) => k.dim,
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(WmError::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    /// Draws a watermarked initial noise `z_T*`.
    pub fn sample_watermarked_noise<T: Scalar>(&self, rng: &mut Rng) -> Latent<T> {
        let z = match self {
            WatermarkKey::TreeRing(k) => k.sample(rng),
            WatermarkKey::GaussianShading(k) => k.sample(rng),
            WatermarkKey::T2SMark(k) => k.sample(rng),
        };
        from_f64_vec(&z)
    }

    pub fn detect<T: Scalar>(&self, zt_hat: &[T]) -> Result<DetectionReport> {
        self.check_dim(zt_hat.len())?;
        let z = to_f64_vec(zt_hat);
        Ok(match self {
            WatermarkKey::TreeRing(k) => k.detect(&z),
            WatermarkKey::GaussianShading(k) => k.detect(&z),
            WatermarkKey::T2SMark(k) => k.detect(&z),
        })
    }

    pub fn threshold(&self) -> Option<f64> {
        match self {
            WatermarkKey::TreeRing(k) => k.threshold,
            WatermarkKey::GaussianShading(k) => Some(k.tau()),
            WatermarkKey::T2SMark(k) => k.threshold,
        }
    }

    /// Sets the detection threshold from statistics of unwatermarked
    /// inverted latents (Tree-Ring: empirical quantile; T2SMark: Gaussian
    /// fit). Gaussian Shading's threshold is analytic and left unchanged.
    pub fn calibrate<T: Scalar>(&mut self, null_latents: &[Latent<T>], target_fpr: f64) -> Result<Option<f64>> {
        let stats = null_latents
            .iter()
            .map(|z| self.detect(z).map(|r| r.statistic))
            .collect::<Result<Vec<_>>>()?;
        match self {
            WatermarkKey::GaussianShading(_) => Ok(None),
            WatermarkKey::TreeRing(k) => {
                let t = calibrate_threshold(&stats, target_fpr, Calibration::EmpiricalLower)?;
                k.threshold = Some(t);
                Ok(Some(t))
            }
            WatermarkKey::T2SMark(k) => {
                let t = calibrate_threshold(&stats, target_fpr, Calibration::GaussianUpper)?;
                k.threshold = Some(t);
                k.null_fit = Some(mean_std(&stats));
                Ok(Some(t))
            }
        }
    }
}

/// Key construction parameters for all three schemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeySpec {
    pub seed: u64,
    pub gs_k_bits: usize,
    pub gs_replication: usize,
    pub gs_users: u64,
    pub gs_fpr: f64,
    pub tr_radius: usize,
    pub tr_fpr: f64,
    pub t2s_bits: usize,
    pub t2s_carriers: usize,
    pub t2s_tau: f64,
    pub t2s_fpr: f64,
}

impl Default for KeySpec {
    fn default() -> Self {
        Self {
            seed: 3,
            gs_k_bits: 256,
            gs_replication: 4,
            gs_users: 100_000,
            gs_fpr: 1e-6,
            tr_radius: 5,
            tr_fpr: 0.01,
            t2s_bits: 256,
            t2s_carriers: 2,
            t2s_tau: 0.674,
            t2s_fpr: 1e-6,
        }
    }
}

impl KeySpec {
    pub fn build(&self, scheme: Scheme, dim: usize) -> Result<WatermarkKey> {
        Ok(match scheme {
            Scheme::GaussianShading => {
                let message = keyed_bits(self.seed ^ 0x6d65_7373_6167_6521, self.gs_k_bits);
                WatermarkKey::GaussianShading(GaussianShadingKey::new(
                    dim,
                    self.seed,
                    message,
                    self.gs_replication,
                    self.gs_users,
                    self.gs_fpr,
                )?)
            }
            Scheme::TreeRing => {
                let side = (dim as f64).sqrt().round() as usize;
                if side * side != dim {
                    return Err(WmError::InvalidConfig(format!("Tree-Ring needs a square grid, d = {dim}")));
                }
                WatermarkKey::TreeRing(TreeRingKey::new(side, self.tr_radius, self.seed)?)
            }
            Scheme::T2SMark => WatermarkKey::T2SMark(T2SMarkKey::new(
                dim,
                self.t2s_bits,
                self.t2s_carriers,
                self.t2s_tau,
                self.seed,
            )?),
        })
    }

    pub fn target_fpr(&self, scheme: Scheme) -> f64 {
        match scheme {
            Scheme::GaussianShading => self.gs_fpr,
            Scheme::TreeRing => self.tr_fpr,
            Scheme::T2SMark => self.t2s_fpr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gs_threshold_small_exhaustive() {
        let (c, tau) = gs_threshold(8, 1, 0.5).unwrap();
        // Enumerate all 2^8 outcomes.
        let tail = |c: u32| (0u32..256).filter(|m| m.count_ones() > c).count() as f64 / 256.0;
        let want = (0..8).find(|&c| tail(c) <= 0.5).unwrap();
        assert_eq!(c, want as u64);
        assert_eq!(tau, want as f64 / 8.0);
    }

    #[test]
    fn gs_threshold_errors() {
        assert!(gs_threshold(256, 100, 0.0).is_err());
        assert!(matches!(gs_threshold(8, 100_000, 1e-6), Err(WmError::Unsatisfiable(_))));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
    }

    #[test]
    fn tree_ring_mask_is_conjugate_closed() {
        let k = TreeRingKey::new(32, 5, 1).unwrap();
        let set: std::collections::HashSet<usize> = k.cells.iter().map(|c| c.index).collect();
        for c in &k.cells {
            let (u, v) = (c.index / 32, c.index % 32);
            assert!(set.contains(&(((32 - u) % 32) * 32 + (32 - v) % 32)));
        }
        assert_eq!(k.cells.iter().filter(|c| c.self_conjugate).count(), 1);
    }

    #[test]
    fn empirical_threshold_needs_enough_samples() {
        let null: Vec<f64> = (0..100).map(f64::from).collect();
        assert!(calibrate_threshold(&null, 0.001, Calibration::EmpiricalLower).is_err());
        assert!(calibrate_threshold(&null[..50], 0.5, Calibration::EmpiricalLower).is_err());
    }
}
