use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use wmlab::codec::LatentCodec;
use wmlab::rng::Rng;
use wmlab::tensorgrad::Matrix;
use wmlab::WmError;

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn orthogonal_mixing_has_orthonormal_columns() {
    let codec = LatentCodec::<f64>::orthogonal(64, 11, 0.0);
    let a = codec.mixing();
    // Gram matrix computed independently of the codec's own check.
    let mut worst = 0.0_f64;
    for i in 0..64 {
        for j in 0..64 {
            let dot: f64 = (0..64).map(|r| a.get(r, i) * a.get(r, j)).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    assert!(worst < 1e-12, "gram deviation {worst}");
    assert!(codec.orthogonality_error() < 1e-12);
}

#[test]
fn orthogonal_mixing_is_seeded() {
    let a = LatentCodec::<f64>::orthogonal(16, 5, 0.0);
    let b = LatentCodec::<f64>::orthogonal(16, 5, 0.0);
    let c = LatentCodec::<f64>::orthogonal(16, 6, 0.0);
    assert_eq!(a.mixing().as_ref(), b.mixing().as_ref());
    assert_ne!(a.mixing().as_ref(), c.mixing().as_ref());
}

#[test]
fn noiseless_round_trip_is_exact() {
    let codec = LatentCodec::<f64>::orthogonal(128, 3, 0.0);
    let mut rng = Rng::seed_from_u64(9);
    let z = gaussian(128, &mut rng);
    let x = codec.decode(&z);
    // Orthogonal decode preserves the norm.
    let nz: f64 = z.iter().map(|v| v * v).sum();
    let nx: f64 = x.iter().map(|v| v * v).sum();
    assert!((nz - nx).abs() < 1e-10 * nz);
    let back = codec.encode(&x, &mut rng);
    assert!(sq_dist(&back, &z) < 1e-20 * nz);
}

#[test]
fn encoder_noise_energy_matches_its_variance() {
    // E‖enc(dec(z)) − z‖² = d σ² for an orthogonal mixing; its Monte-Carlo
    // mean over n trials has standard error σ² √(2d) / √n.
    let (d, sigma, trials) = (256, 0.01_f64, 100);
    let codec = LatentCodec::<f64>::orthogonal(d, 2, sigma);
    let mut rng = Rng::seed_from_u64(2024);
    let mean = (0..trials)
        .map(|_| {
            let z = gaussian(d, &mut rng);
            let back = codec.encode(&codec.decode(&z), &mut rng);
            sq_dist(&back, &z)
        })
        .sum::<f64>()
        / trials as f64;
    let expected = d as f64 * sigma * sigma;
    let se = sigma * sigma * (2.0 * d as f64).sqrt() / (trials as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "mean {mean}, expected {expected} ± {se}");
}

#[test]
fn identity_codec_passes_images_through() {
    let codec = LatentCodec::<f64>::identity(8, 0.0);
    let z: Vec<f64> = (0..8).map(f64::from).collect();
    assert_eq!(codec.decode(&z), z);
    assert_eq!(codec.encode(&z, &mut Rng::seed_from_u64(0)), z);
    assert_eq!(codec.dim(), 8);
}

#[test]
fn f32_codec_agrees_with_f64() {
    let c64 = LatentCodec::<f64>::orthogonal(32, 4, 0.0);
    let c32 = LatentCodec::<f32>::orthogonal(32, 4, 0.0);
    let z: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let z32: Vec<f32> = z.iter().map(|&v| v as f32).collect();
    let x64 = c64.decode(&z);
    let x32 = c32.decode(&z32);
    for (a, b) in x64.iter().zip(&x32) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
}

#[test]
fn rejects_bad_mixing_matrices() {
    let skew = Matrix::new(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
    assert!(matches!(LatentCodec::new(skew, 0.0), Err(WmError::InvalidConfig(_))));
    let rect = Matrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    assert!(matches!(LatentCodec::new(rect, 0.0), Err(WmError::InvalidConfig(_))));
    let rot = Matrix::new(2, 2, vec![0.6, -0.8, 0.8, 0.6]).unwrap();
    assert!(matches!(LatentCodec::new(rot.clone(), -1.0), Err(WmError::InvalidConfig(_))));
    assert!(LatentCodec::new(rot, 0.01).is_ok());
}
