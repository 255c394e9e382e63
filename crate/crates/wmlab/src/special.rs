//! Special functions for detection statistics.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_ur, ln_gamma};

/// `P(C > c)` for `C ~ Bin(k, ½)`, via the regularized incomplete beta
/// function `I_{1/2}(c+1, k−c)`.
pub fn binomial_half_upper_tail(c: u64, k: u64) -> f64 {
    if c >= k {
        0.0
    } else {
        beta_reg((c + 1) as f64, (k - c) as f64, 0.5)
    }
}

/// Standard normal upper-tail quantile: `z` with `P(Z > z) = p`.
pub fn normal_upper_quantile(p: f64) -> f64 {
    -Normal::standard().inverse_cdf(p)
}

/// Standard normal upper-tail probability `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

/// `ln P(a, y)` for the regularized lower incomplete gamma function.
fn ln_gamma_lower_reg(a: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if y < a + 1.0 {
        // P(a, y) = y^a e^{-y} / Γ(a) · Σ_n y^n / (a (a+1) … (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = 1.0;
        while term > sum * 1e-17 {
            term *= y / (a + n);
            sum += term;
            n += 1.0;
        }
        a * y.ln() - y - ln_gamma(a) + sum.ln()
    } else {
        (-gamma_ur(a, y)).ln_1p()
    }
}

/// `ln F(x; k, λ)` for the noncentral chi-square distribution with `k`
/// degrees of freedom and noncentrality `λ`, from the Poisson mixture
/// `F = Σ_j Pois(j; λ/2) P(k/2 + j, x/2)` summed in log space around its
/// (unimodal) dominant term.
pub fn ncx2_log_cdf(x: f64, k: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if !x.is_finite() {
        return 0.0;
    }
    let mu = lambda / 2.0;
    let y = x / 2.0;
    let term = |j: u64| -> f64 {
        let jf = j as f64;
        let ln_pois = if mu > 0.0 {
            -mu + jf * mu.ln() - ln_gamma(jf + 1.0)
        } else if j == 0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        ln_pois + ln_gamma_lower_reg(k / 2.0 + jf, y)
    };
    if mu == 0.0 {
        return term(0);
    }
    // The summand is log-concave in j: locate its maximum by ternary search.
    let (mut lo, mut hi) = (0_u64, (mu + 50.0 * mu.sqrt() + 50.0).ceil() as u64);
    while hi - lo > 2 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if term(m1) < term(m2) {
            lo = m1 + 1;
        } else {
            hi = m2 - 1;
        }
    }
    let (jmax, tmax) = (lo..=hi).map(|j| (j, term(j))).fold((lo, f64::NEG_INFINITY), |best, cur| {
        if cur.1 > best.1 { cur } else { best }
    });
    if tmax == f64::NEG_INFINITY {
        return tmax;
    }
    let mut sum = 1.0;
    let mut j = jmax + 1;
    loop {
        let t = term(j) - tmax;
        if t < -50.0 {
            break;
        }
        sum += t.exp();
        j += 1;
    }
    let mut j = jmax;
    while j > 0 {
        j -= 1;
        let t = term(j) - tmax;
        if t < -50.0 {
            break;
        }
        sum += t.exp();
    }
    (tmax + sum.ln()).min(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::ChiSquared;

    #[test]
    fn binomial_small_cases() {
        assert_eq!(binomial_half_upper_tail(3, 3), 0.0);
        assert!((binomial_half_upper_tail(0, 3) - 7.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn normal_quantile_at_one_in_a_million() {
        assert!((normal_upper_quantile(1e-6) - 4.753_424_308_822_899).abs() < 1e-9);
    }

    #[test]
    fn central_case_matches_chi_square() {
        for &(x, k) in &[(0.5, 2.0), (3.0, 5.0), (40.0, 30.0), (200.0, 160.0)] {
            let want = ChiSquared::new(k).unwrap().cdf(x).ln();
            assert!((ncx2_log_cdf(x, k, 0.0) - want).abs() < 1e-10, "{x} {k}");
        }
    }

    #[test]
    fn noncentral_matches_direct_poisson_sum() {
        for &(x, k, l) in &[(4.0, 3.0, 2.0), (150.0, 160.0, 20.0), (60.0, 160.0, 300.0)] {
            let mut direct = 0.0;
            let mu: f64 = l / 2.0;
            for j in 0..2000 {
                let jf = j as f64;
                let w = (-mu + jf * mu.ln() - ln_gamma(jf + 1.0)).exp();
                direct += w * ChiSquared::new(k + 2.0 * jf).unwrap().cdf(x);
            }
            let got = ncx2_log_cdf(x, k, l).exp();
            assert!((got - direct).abs() <= 1e-10 * direct.max(1e-300), "{x} {k} {l}: {got} vs {direct}");
        }
    }

    #[test]
    fn deep_lower_tail_stays_finite() {
        let v = ncx2_log_cdf(1.0, 160.0, 5000.0);
        assert!(v.is_finite() && v < -1000.0);
    }
}
