//! Imprint removal / forgery by gradient descent through the inversion
//! chain, the averaging attack, and the encoder-space VAE forgery.

use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::diffusion::Ddim;
use crate::error::{Result, WmError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensorgrad::{value_and_grad, Backend};
use crate::{Image, Latent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Removal,
    Forgery,
    Averaging,
    VaeForgery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent.
    #[default]
    Gd,
    /// Adam with the usual (0.9, 0.999, 1e-8) moments.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Weight of `‖δ‖` in the VAE forgery loss.
    pub lambda_reg: f64,
    /// Residual count `N` of the averaging attack.
    pub avg_count: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::removal(50)
    }
}

impl AttackConfig {
    pub fn removal(steps: usize) -> Self {
        Self {
            kind: AttackKind::Removal,
            steps,
            learning_rate: 0.01,
            optimizer: Optimizer::Gd,
            lambda_reg: 0.0,
            avg_count: 0,
        }
    }

    pub fn forgery(steps: usize) -> Self {
        Self { kind: AttackKind::Forgery, ..Self::removal(steps) }
    }

    pub fn averaging(n: usize) -> Self {
        Self { kind: AttackKind::Averaging, avg_count: n, ..Self::removal(0) }
    }

    pub fn vae_forgery(steps: usize, lambda_reg: f64) -> Self {
        Self { kind: AttackKind::VaeForgery, lambda_reg, ..Self::removal(steps) }
    }

    pub fn validate(&self) -> Result<()> {
        let gradient_based = matches!(self.kind, AttackKind::Removal | AttackKind::Forgery | AttackKind::VaeForgery);
        if gradient_based && !(self.learning_rate > 0.0) {
            return Err(WmError::InvalidConfig("learning rate must be positive".into()));
        }
        if self.lambda_reg < 0.0 {
            return Err(WmError::InvalidConfig("lambda_reg must be >= 0".into()));
        }
        if self.kind == AttackKind::Averaging && self.avg_count == 0 {
            return Err(WmError::InvalidConfig("averaging needs avg_count >= 1".into()));
        }
        Ok(())
    }

    fn expect(&self, kind: AttackKind) -> Result<()> {
        if self.kind != kind {
            return Err(WmError::InvalidConfig(format!("expected a {kind:?} config, got {:?}", self.kind)));
        }
        self.validate()
    }
}

/// What the attacker knows: a proxy model (through its DDIM grid) and a
/// proxy codec.
#[derive(Clone, Debug)]
pub struct Adversary<'a, T> {
    pub ddim: &'a Ddim<T>,
    pub codec: &'a LatentCodec<T>,
}

/// Result of a gradient attack: the output image and the loss per iteration
/// (evaluated before each update).
#[derive(Clone, Debug)]
pub struct AttackOutcome<T> {
    pub image: Image<T>,
    pub losses: Vec<T>,
}

/// Imprint loss `‖I_{0→T}(z) + sign · target‖₂`: `sign = +1` pushes the
/// inverted noise away from `target` (removal), `sign = −1` pulls it
/// toward `target` (forgery).
pub fn imprint_loss<T: Scalar, B: Backend<T>>(
    b: &B,
    ddim: &Ddim<T>,
    z: &B::V,
    target: &[T],
    sign: T,
) -> Result<B::V> {
    let zt = ddim.invert(b, z)?;
    let tgt = b.constant(target.to_vec());
    Ok(b.norm(&b.lincomb(&[(T::one(), &zt), (sign, &tgt)])))
}

struct Stepper<T> {
    opt: Optimizer,
    lr: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Stepper<T> {
    fn new(opt: Optimizer, lr: f64, d: usize) -> Self {
        Self { opt, lr: T::lit(lr), m: vec![T::zero(); d], v: vec![T::zero(); d], t: 0 }
    }

    fn step(&mut self, delta: &mut [T], grad: &[T]) {
        match self.opt {
            Optimizer::Gd => {
                for (d, &g) in delta.iter_mut().zip(grad) {
                    *d = *d - self.lr * g;
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
                self.t += 1;
                let c1 = T::one() - b1.powi(self.t);
                let c2 = T::one() - b2.powi(self.t);
                for i in 0..delta.len() {
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * grad[i];
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    delta[i] = delta[i] - self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// Minimizes `loss(z_start + δ)` over δ from δ = 0; returns the final δ and
/// the loss before each update.
fn descend<T, F>(cfg: &AttackConfig, z_start: &[T], mut loss: F) -> Result<(Vec<T>, Vec<T>)>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let mut delta = vec![T::zero(); z_start.len()];
    let mut stepper = Stepper::new(cfg.optimizer, cfg.learning_rate, z_start.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    for iteration in 0..cfg.steps {
        let (l, g) = loss(&delta)?;
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(WmError::Divergence { iteration, loss: l.f64() });
        }
        losses.push(l);
        stepper.step(&mut delta, &g);
    }
    Ok((delta, losses))
}

fn imprint_attack<T: Scalar>(
    cfg: &AttackConfig,
    adv: &Adversary<'_, T>,
    z_start: &Latent<T>,
    target: &Latent<T>,
    sign: T,
) -> Result<AttackOutcome<T>> {
    let (delta, losses) = descend(cfg, z_start, |delta| {
        let z: Vec<T> = z_start.iter().zip(delta).map(|(&a, &b)| a + b).collect();
        value_and_grad(&z, |tape, zv| {
            imprint_loss(tape, adv.ddim, &zv, target, sign).expect("grid indices are in range")
        })
    })?;
    let z: Vec<T> = z_start.iter().zip(&delta).map(|(&a, &b)| a + b).collect();
    Ok(AttackOutcome { image: adv.codec.decode(&z), losses })
}

/// Imprint removal: minimizes `‖I(ẑ_0 + δ) + ẑ_T‖` where `ẑ_0` is the
/// attacker's encoding of `x_w` and `ẑ_T` its (fixed) inversion.
pub fn removal_attack<T: Scalar>(
    cfg: &AttackConfig,
    adv: &Adversary<'_, T>,
    x_w: &[T],
    rng: &mut Rng,
) -> Result<AttackOutcome<T>> {
    cfg.expect(AttackKind::Removal)?;
    let z0 = adv.codec.encode(x_w, rng);
    let zt = adv.ddim.invert_full(&z0)?.last().clone();
    imprint_attack(cfg, adv, &z0, &zt, T::one())
}

/// Imprint forgery: minimizes `‖I(ẑ_0^c + δ) − ẑ_T^w‖`, moving the cover's
/// inverted noise onto the watermarked image's.
pub fn forgery_attack<T: Scalar>(
    cfg: &AttackConfig,
    adv: &Adversary<'_, T>,
    x_c: &[T],
    x_w: &[T],
    rng: &mut Rng,
) -> Result<AttackOutcome<T>> {
    cfg.expect(AttackKind::Forgery)?;
    let zw = adv.codec.encode(x_w, rng);
    let target = adv.ddim.invert_full(&zw)?.last().clone();
    let zc = adv.codec.encode(x_c, rng);
    imprint_attack(cfg, adv, &zc, &target, -T::one())
}

/// `target − (mean(watermarked) − mean(clean))`.
pub fn averaging_attack<T: Scalar>(
    watermarked: &[Image<T>],
    clean: &[Image<T>],
    target: &[T],
) -> Result<Image<T>> {
    if watermarked.is_empty() || watermarked.len() != clean.len() {
        return Err(WmError::InvalidConfig(format!(
            "averaging needs two equal nonempty lists (got {} and {})",
            watermarked.len(),
            clean.len()
        )));
    }
    let delta = mean_residual(watermarked, clean);
    Ok(target.iter().zip(&delta).map(|(&t, &d)| t - d).collect())
}

/// `(1/N)(Σ x_w − Σ x_c)`.
pub fn mean_residual<T: Scalar>(watermarked: &[Image<T>], clean: &[Image<T>]) -> Vec<T> {
    let d = watermarked[0].len();
    let n = T::lit(watermarked.len() as f64);
    let mut acc = vec![T::zero(); d];
    for (w, c) in watermarked.iter().zip(clean) {
        for i in 0..d {
            acc[i] = acc[i] + (w[i] - c[i]);
        }
    }
    acc.into_iter().map(|v| v / n).collect()
}

/// Encoder-space forgery: minimizes `‖E'(x_c + δ) − E'(x_w)‖ + λ‖δ‖` with the
/// proxy encoder `E'` (its noise-free linear part).
pub fn vae_forgery_attack<T: Scalar>(
    cfg: &AttackConfig,
    proxy: &LatentCodec<T>,
    x_c: &[T],
    x_w: &[T],
) -> Result<AttackOutcome<T>> {
    cfg.expect(AttackKind::VaeForgery)?;
    let target = proxy.mixing().matvec_t(x_w);
    let lambda = T::lit(cfg.lambda_reg);
    let (delta, losses) = descend(cfg, x_c, |delta| {
        value_and_grad(delta, |tape, dv| {
            let xc = tape.constant(x_c.to_vec());
            let x = tape.add(&xc, &dv);
            let enc = proxy.encode_mean(tape, &x);
            let tgt = tape.constant(target.clone());
            let fit = tape.norm(&tape.sub(&enc, &tgt));
            let reg = tape.norm(&dv);
            tape.lincomb(&[(T::one(), &fit), (lambda, &reg)])
        })
    })?;
    Ok(AttackOutcome { image: x_c.iter().zip(&delta).map(|(&a, &b)| a + b).collect(), losses })
}
