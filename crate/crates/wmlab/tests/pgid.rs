mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use wmlab::codec::LatentCodec;
use wmlab::diffusion::{Ddim, ScoreModel};
use wmlab::pgid::{extract_noise, pgid_extract, pgid_latent, PgidConfig, Profile};
use wmlab::rng::Rng;
use wmlab::schedule::NoiseSchedule;
use wmlab::WmError;

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

#[test]
fn stage_two_counts_match_closed_forms() {
    let ddim = common::small_ddim(4, 20, 1);
    let z0 = vec![0.3, -0.1, 0.2, 0.5];
    for k in 0..20 {
        for s in 0..=k {
            let cfg = PgidConfig { k_stop: k, s_skip: s, gamma: 0.01 };
            let (_, trace) = pgid_latent(&cfg, &ddim, &z0).unwrap();
            // Σ_{i=s+1..k} (i − s) and Σ_{i=1..k} i.
            assert_eq!(trace.stage2.inversions, (k - s) * (k - s + 1) / 2, "k {k} s {s}");
            assert_eq!(trace.stage2.denoisings, k * (k + 1) / 2);
            assert_eq!(cfg.predicted_steps(), trace.stage2);
        }
    }
    let r = PgidConfig::REMOVAL.predicted_steps();
    assert_eq!((r.inversions, r.denoisings), (45, 55));
    let f = PgidConfig::FORGERY.predicted_steps();
    assert_eq!((f.inversions, f.denoisings), (78, 120));
}

#[test]
fn no_cycles_is_plain_inversion() {
    let ddim = common::small_ddim(8, 10, 1);
    let z0 = gaussian(8, &mut Rng::seed_from_u64(1));
    let cfg = PgidConfig { k_stop: 0, s_skip: 0, gamma: 0.5 };
    let (z, _) = pgid_latent(&cfg, &ddim, &z0).unwrap();
    assert_eq!(z, ddim.invert_full(&z0).unwrap().last().clone());
    assert_eq!(extract_noise(Profile::Baseline, &ddim, &z0).unwrap(), z);
}

#[test]
fn exact_sampler_makes_every_cycle_a_no_op() {
    // For a point-mass prior DDIM is exact, so with γ = 0 and s = 0 each
    // cycle inverts i steps and denoises them back to the same latent.
    let mu = vec![0.5, -1.0, 2.0];
    let model = ScoreModel::<f64>::isotropic(vec![mu.clone()], vec![1.0], 0.0).unwrap();
    let schedule = NoiseSchedule::<f64>::linear(1000, 0.00085, 0.012).unwrap().subsample(20).unwrap();
    let ddim = Ddim::new(Arc::new(model), &schedule);
    let cfg = PgidConfig { k_stop: 12, s_skip: 0, gamma: 0.0 };
    let (z, _) = pgid_latent(&cfg, &ddim, &mu).unwrap();
    let plain = ddim.invert_full(&mu).unwrap().last().clone();
    for (a, b) in z.iter().zip(&plain) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn extraction_from_images_encodes_first() {
    let ddim = common::small_ddim(8, 10, 1);
    let codec = LatentCodec::<f64>::orthogonal(8, 3, 0.0);
    let z0 = gaussian(8, &mut Rng::seed_from_u64(2));
    let x = codec.decode(&z0);
    let cfg = PgidConfig { k_stop: 4, s_skip: 1, gamma: 0.045 };
    let from_image = pgid_extract(&cfg, &ddim, &codec, &x, &mut Rng::seed_from_u64(0)).unwrap();
    let (from_latent, _) = pgid_latent(&cfg, &ddim, &z0).unwrap();
    for (a, b) in from_image.iter().zip(&from_latent) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let ddim = common::small_ddim(4, 10, 1);
    let z0 = vec![0.0; 4];
    for cfg in [
        PgidConfig { k_stop: 10, s_skip: 1, gamma: 0.0 },
        PgidConfig { k_stop: 3, s_skip: 4, gamma: 0.0 },
        PgidConfig { k_stop: 3, s_skip: 1, gamma: -0.1 },
        PgidConfig { k_stop: 3, s_skip: 1, gamma: f64::NAN },
        PgidConfig { k_stop: 3, s_skip: 1, gamma: f64::INFINITY },
    ] {
        assert!(matches!(pgid_latent(&cfg, &ddim, &z0), Err(WmError::InvalidConfig(_))), "{cfg:?}");
    }
    assert!(pgid_latent(&PgidConfig { k_stop: 9, s_skip: 9, gamma: 0.0 }, &ddim, &z0).is_ok());
}

#[test]
fn profiles_parse_and_carry_their_settings() {
    for p in Profile::ALL {
        assert_eq!(p.name().parse::<Profile>().unwrap(), p);
        assert_eq!(p.to_string(), p.name());
    }
    assert!("pgid".parse::<Profile>().is_err());
    assert_eq!(Profile::Baseline.config(), None);
    assert_eq!(Profile::PgidR.config(), Some(PgidConfig { k_stop: 10, s_skip: 1, gamma: 0.045 }));
    assert_eq!(Profile::PgidF.config(), Some(PgidConfig { k_stop: 15, s_skip: 3, gamma: 0.001 }));
}
