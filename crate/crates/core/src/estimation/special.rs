//! Special functions behind the regression models: `ψ_r`, `ψ_{r,α}` and `J₀`.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

use super::quadrature::{integrate, QuadOptions};
use crate::error::{Error, Result};

const SERIES_LIMIT: f64 = 8.0;
const MILLER_LIMIT: f64 = 25.0;

/// Bessel function of the first kind of order zero.
///
/// Power series up to |x| = 8, Miller's backward recurrence up to 25 and the
/// Hankel asymptotic expansion beyond.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= SERIES_LIMIT {
        j0_series(x)
    } else if x <= MILLER_LIMIT {
        j0_miller(x)
    } else {
        j0_asymptotic(x)
    }
}

fn j0_series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..60 {
        term *= q / (k * k) as f64;
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn j0_miller(x: f64) -> f64 {
    // start well above the turning point; J_k(x) decays superexponentially for k > x
    let start = 2 * ((x as usize + 40) / 2);
    // (above, cur) = (J_{k+1}, J_k), unnormalized
    let (mut above, mut cur) = (0.0f64, 1e-300f64);
    let mut even_sum = 0.0;
    for k in (1..=start).rev() {
        let below = 2.0 * k as f64 / x * cur - above;
        above = cur;
        cur = below;
        if (k - 1) % 2 == 0 && k > 1 {
            even_sum += cur;
        }
        if cur.abs() > 1e250 {
            above *= 1e-250;
            cur *= 1e-250;
            even_sum *= 1e-250;
        }
    }
    // 1 = J_0 + 2 Σ_{m≥1} J_{2m}
    cur / (cur + 2.0 * even_sum)
}

/// Hankel coefficients `a_k = ∏_{j≤k} (−(2j−1)²) / (k! 8^k)` for order 0.
fn hankel_coefficients(n: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(n);
    a.push(1.0);
    for k in 1..n {
        let j = (2 * k - 1) as f64;
        let prev = a[k - 1];
        a.push(prev * -(j * j) / (8.0 * k as f64));
    }
    a
}

fn j0_asymptotic(x: f64) -> f64 {
    let a = hankel_coefficients(40);
    let inv = 1.0 / x;
    let (mut p, mut q) = (0.0, 0.0);
    let mut pow = 1.0;
    let mut last = f64::INFINITY;
    for (k, &ak) in a.iter().enumerate() {
        let term = ak * pow;
        if term.abs() > last {
            break;
        }
        last = term.abs();
        // i^k splits the series into P (even k) and Q (odd k)
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        if last < 1e-17 {
            break;
        }
        pow *= inv;
    }
    let chi = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// `ψ_r(θ₂) = 2/√(πθ₂) (1 − e^{−r²/(4θ₂)} + (r/√θ₂) ∫_{r/√(4θ₂)}^∞ e^{−x²} dx)`.
pub fn psi_r(theta2: f64, r: f64) -> f64 {
    let s = theta2.sqrt();
    let u = r / (2.0 * s);
    let tail = 0.5 * PI.sqrt() * libm::erfc(u);
    2.0 / (PI * theta2).sqrt() * (-(-u * u).exp_m1() + r / s * tail)
}

/// `J₀(√2 z) − 2J₀(z) + 1` for small `z`, summed from the `k ≥ 2` terms so the
/// `z⁴` cancellation is exact.
fn bessel_combination_series(z: f64) -> f64 {
    let q = 0.25 * z * z;
    // k = 2 term: (q²/4)·(4 − 2)
    let mut base = q * q / 4.0;
    let mut pow2 = 4.0;
    let mut sum = base * (pow2 - 2.0);
    for k in 3..40 {
        base *= -q / (k * k) as f64;
        pow2 *= 2.0;
        let term = base * (pow2 - 2.0);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// `∫_X^∞ x^{−ν} e^{iax} dx` by repeated integration by parts; returns (re, im).
fn oscillatory_power_tail(nu: f64, a: f64, big_x: f64) -> (f64, f64) {
    // −e^{iaX} Σ_n (ν)_n X^{−ν−n} / (ia)^{n+1}
    let mut coef = big_x.powf(-nu) / a; // magnitude of the n = 0 term
    let (mut re, mut im) = (0.0, 0.0);
    let mut last = f64::INFINITY;
    for n in 0..200 {
        if coef.abs() > last {
            break;
        }
        last = coef.abs();
        // 1/(i)^{n+1}: n=0 → −i, 1 → −1, 2 → i, 3 → 1
        match n % 4 {
            0 => im -= coef,
            1 => re -= coef,
            2 => im += coef,
            _ => re += coef,
        }
        if last < 1e-20 {
            break;
        }
        coef *= (nu + n as f64) / (big_x * a);
    }
    let (c, s) = ((a * big_x).cos(), (a * big_x).sin());
    // −e^{iaX}·(re + i im)
    (-(c * re - s * im), -(s * re + c * im))
}

/// `∫_X^∞ x^{−μ} J₀(ax) dx` from the Hankel expansion of `J₀`.
fn bessel_power_tail(mu: f64, a: f64, big_x: f64) -> f64 {
    let coeffs = hankel_coefficients(12);
    let mut total = 0.0;
    let pref = (2.0 / (PI * a)).sqrt();
    let (cp, sp) = (FRAC_PI_4.cos(), -FRAC_PI_4.sin());
    let mut apow = 1.0;
    for (k, &ak) in coeffs.iter().enumerate() {
        let nu = mu + 0.5 + k as f64;
        let (re, im) = oscillatory_power_tail(nu, a, big_x);
        // multiply by i^k a_k a^{−k} e^{−iπ/4} and take the real part
        let (ik_re, ik_im) = match k % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        let (w_re, w_im) = (ik_re * cp - ik_im * sp, ik_re * sp + ik_im * cp);
        let term = ak * apow * (w_re * re - w_im * im);
        total += term;
        if term.abs() < 1e-20 {
            break;
        }
        apow /= a;
    }
    pref * total
}

/// `ψ_{r,α}(θ₂) = 2/(θ₂π) ∫_0^∞ (1 − e^{−x²}) x^{−1−2α} (J₀(√2 r x/√θ₂) − 2J₀(r x/√θ₂) + 1) dx`,
/// to relative accuracy `rel_tol`.
pub fn psi_r_alpha_tol(theta2: f64, r: f64, alpha: f64, rel_tol: f64) -> Result<f64> {
    if !(theta2 > 0.0 && r > 0.0 && alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "ψ_(r,α)(θ₂) needs θ₂ > 0, r > 0, α ∈ (0, 2); got θ₂ = {theta2}, r = {r}, α = {alpha}"
        )));
    }
    let c = r / theta2.sqrt();
    let mu = 1.0 + 2.0 * alpha;
    let x0 = (theta2.sqrt() / r).min(1.0);
    let x_tail = (200.0 / c).max(6.0);

    let near = |x: f64| -(-x * x).exp_m1() * x.powf(-mu) * bessel_combination_series(c * x);
    let mid = |x: f64| {
        -(-x * x).exp_m1()
            * x.powf(-mu)
            * (bessel_j0(SQRT_2 * c * x) - 2.0 * bessel_j0(c * x) + 1.0)
    };
    let opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 0.1 * rel_tol,
        max_panels: 50_000,
    };
    let head = integrate(near, 0.0, x0, 2, opts)?;
    let panels = ((x_tail - x0) * SQRT_2 * c / PI).ceil().max(4.0) as usize;
    let body = integrate(mid, x0, x_tail, panels, opts)?;
    // beyond X the Gaussian factor is below e^{−36}
    let tail = x_tail.powf(1.0 - mu) / (mu - 1.0) + bessel_power_tail(mu, SQRT_2 * c, x_tail)
        - 2.0 * bessel_power_tail(mu, c, x_tail);
    let total = head.value + body.value + tail;
    let err = head.error + body.error;
    if err > rel_tol * total.abs() {
        return Err(Error::Quadrature {
            achieved: err / total.abs(),
            requested: rel_tol,
        });
    }
    Ok(2.0 / (theta2 * PI) * total)
}

pub fn psi_r_alpha(theta2: f64, r: f64, alpha: f64) -> Result<f64> {
    psi_r_alpha_tol(theta2, r, alpha, 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_oracle(x: f64) -> f64 {
        // 40-term power series, accumulated in reverse for stability
        let q = 0.25 * x * x;
        let mut terms = vec![1.0f64];
        for k in 1..40 {
            let prev = terms[k - 1];
            terms.push(-prev * q / (k * k) as f64);
        }
        terms.iter().rev().sum()
    }

    #[test]
    fn j0_matches_series_oracle() {
        for k in 0..=800 {
            let x = k as f64 / 100.0;
            assert!((bessel_j0(x) - series_oracle(x)).abs() <= 1e-12, "x = {x}");
        }
    }

    #[test]
    fn j0_reference_values() {
        // mpmath, 25 digits
        let table = [
            (0.5, 0.938_469_807_240_812_9),
            (5.0, -0.177_596_771_314_338_3),
            (8.0, 0.171_650_807_137_553_9),
            (10.0, -0.245_935_764_451_348_3),
            (12.0, 0.047_689_310_796_833_54),
            (15.0, -0.014_224_472_826_780_77),
            (20.0, 0.167_024_664_340_583_2),
            (25.0, 0.096_266_783_275_958_12),
            (30.0, -0.086_367_983_581_040_21),
            (50.0, 0.055_812_327_669_251_82),
            (100.0, 0.019_985_850_304_223_12),
            (500.0, -0.034_100_556_880_732),
            (1000.0, 0.024_786_686_152_420_17),
        ];
        for (x, want) in table {
            assert!((bessel_j0(x) - want).abs() <= 1e-12, "x = {x}: {} vs {want}", bessel_j0(x));
        }
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-10);
        for x in [0.3, 7.9, 8.1, 24.9, 25.1, 400.0] {
            assert_eq!(bessel_j0(-x), bessel_j0(x));
        }
    }

    #[test]
    fn j0_regimes_join_smoothly() {
        for x in [7.5, 8.0] {
            assert!((j0_series(x) - j0_miller(x)).abs() < 1e-13);
        }
        for x in [25.0, 26.0] {
            assert!((j0_miller(x) - j0_asymptotic(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn psi_r_reference_values() {
        // mpmath quadrature of the Gaussian tail integral
        let table = [
            (0.2, 0.9406, 2.332_312_526_677_722_7),
            (0.2, 0.665_104_638_384_066_6, 2.045_994_688_695_680_3),
            (0.2, 1.0, 2.369_474_441_380_725),
            (1.0, 0.1, 0.097_180_226_889_791_73),
            (0.05, 3.0, 5.046_265_044_040_32),
            (0.2, 0.804_984_471_899_924_3, 2.218_125_344_300_149_5),
        ];
        for (theta2, r, want) in table {
            let got = psi_r(theta2, r);
            assert!(((got - want) / want).abs() < 1e-12, "{theta2} {r}: {got}");
        }
    }

    #[test]
    fn psi_r_matches_direct_quadrature() {
        for &(theta2, r) in &[(0.2, 0.5), (1.0, 2.0), (0.05, 0.3), (3.0, 0.01)] {
            let u = r / (4.0f64 * theta2).sqrt();
            // ∫_u^∞ e^{−x²} over a range where the integrand is below 1e-30
            let tail = integrate(|x: f64| (-x * x).exp(), u, u + 9.0, 8, QuadOptions { rel_tol: 1e-14, ..Default::default() })
                .unwrap()
                .value;
            let direct = 2.0 / (PI * theta2).sqrt() * (1.0 - (-u * u).exp() + r / theta2.sqrt() * tail);
            assert!((psi_r(theta2, r) - direct).abs() <= 1e-10 * direct);
        }
    }

    #[test]
    fn psi_r_limits() {
        assert!(psi_r(0.2, 1e-9) < 1e-8);
        for &(t, r) in &[(0.001, 0.01), (10.0, 5.0), (0.2, 30.0)] {
            assert!(psi_r(t, r) > 0.0);
        }
    }

    #[test]
    fn combination_series_matches_direct_evaluation() {
        for z in [0.1, 0.5, 1.0] {
            let direct = bessel_j0(SQRT_2 * z) - 2.0 * bessel_j0(z) + 1.0;
            let s = bessel_combination_series(z);
            assert!((s - direct).abs() < 1e-15);
            // leading behaviour z⁴/32
            if z < 0.2 {
                assert!((s / (z.powi(4) / 32.0) - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn psi_r_alpha_reference_values() {
        // mpmath closed form (Mellin transform of J₀ and Kummer 1F1), 60 digits;
        // α = 1 as a symmetric limit. Cross-checked against direct quadrature.
        let table = [
            (1.0, 1.0, 0.2, 1.890_673_832_303_723),
            (1.0, 0.5, 0.2, 3.530_605_287_393_514_9),
            (SQRT_2, 0.5, 0.2, 4.217_349_946_024_476),
            (0.5, 1.5, 1.0, 0.006_234_294_823_771_047),
            (1.0, 0.25, 0.2, 6.775_530_074_989_923),
            (1.0 / SQRT_2, 1.0, 0.2, 1.122_734_564_006_880_8),
            (1.0, 0.75, 0.2, 2.432_151_307_810_273),
            (1.0 / SQRT_2, 0.5, 0.2, 2.742_364_977_258_639_8),
        ];
        for (r, alpha, theta2, want) in table {
            let got = psi_r_alpha(theta2, r, alpha).unwrap();
            assert!(((got - want) / want).abs() < 1e-8, "({r}, {alpha}, {theta2}): {got} vs {want}");
        }
    }

    #[test]
    fn psi_r_alpha_refinement_is_stable() {
        for &(t, r, a) in &[(0.2, 1.0, 1.0), (0.05, 3.0, 0.3), (2.0, 0.2, 1.7)] {
            let coarse = psi_r_alpha_tol(t, r, a, 1e-9).unwrap();
            let fine = psi_r_alpha_tol(t, r, a, 1e-12).unwrap();
            assert!(((coarse - fine) / fine).abs() < 1e-8);
        }
    }

    #[test]
    fn psi_r_alpha_domain() {
        assert!(psi_r_alpha(0.2, 1.0, 0.0).is_err());
        assert!(psi_r_alpha(0.2, 1.0, 2.0).is_err());
        assert!(psi_r_alpha(-0.2, 1.0, 1.0).is_err());
        assert!(psi_r_alpha(0.2, 0.0, 1.0).is_err());
    }

    #[test]
    fn integrand_vanishes_at_origin() {
        for alpha in [0.1, 1.0, 1.9] {
            let c = 2.0f64;
            let x = 1e-8f64;
            let f = -(-x * x).exp_m1() * x.powf(-1.0 - 2.0 * alpha) * bessel_combination_series(c * x);
            assert!(f.abs() < 1e-6);
        }
    }
}
