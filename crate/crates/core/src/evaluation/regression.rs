use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Two-sided p-value of the slope, from F(1, n − 2).
    pub p_value: f64,
    pub n: usize,
}

/// Ordinary least squares of `y` on `x`.
pub fn linreg_r2(x: &[f64], y: &[f64]) -> Result<RegressionResult, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::Unpaired(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(EvalError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EvalError::DegeneratePredictor);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 0.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    let df = nf - 2.0;
    let p_value = if r2 >= 1.0 {
        0.0
    } else {
        // P(F > f) for F(1, df) equals I_{df/(df + f)}(df/2, 1/2).
        let f = r2 / (1.0 - r2) * df;
        regularized_incomplete_beta(df / (df + f), df / 2.0, 0.5)
    };
    Ok(RegressionResult { slope, intercept, r2, p_value, n })
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for I_x(a, b), modified Lentz.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};
    use statrs::function::beta::beta_reg;
    use statrs::function::gamma::ln_gamma as sr_ln_gamma;

    #[test]
    fn five_point_fixture() {
        // Means 3 and 3; Sxy = 8, Sxx = 10, Syy = 10.
        let r = linreg_r2(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r.slope - 0.8).abs() < 1e-12);
        assert!((r.intercept - 0.6).abs() < 1e-12);
        assert!((r.r2 - 0.64).abs() < 1e-12);
        let oracle = 1.0 - FisherSnedecor::new(1.0, 3.0).unwrap().cdf(0.64 / 0.36 * 3.0);
        assert!((r.p_value - oracle).abs() < 1e-10, "{} {oracle}", r.p_value);
        assert!((r.p_value - 0.104088).abs() < 1e-6);
    }

    #[test]
    fn perfect_and_null() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let r = linreg_r2(&x, &y).unwrap();
        assert!((r.r2 - 1.0).abs() < 1e-12 && r.p_value < 1e-12);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        assert!(linreg_r2(&x, &y).unwrap().r2 < 0.01);

        assert!(matches!(linreg_r2(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(EvalError::DegeneratePredictor)));
        assert!(matches!(linreg_r2(&[1.0, 2.0], &[1.0, 2.0]), Err(EvalError::TooFewPoints(2))));
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn incomplete_beta_matches_statrs(x in 0.001f64..0.999, a in 0.5f64..40.0, b in 0.5f64..40.0) {
            let ours = regularized_incomplete_beta(x, a, b);
            let theirs = beta_reg(a, b, x);
            prop_assert!((ours - theirs).abs() < 1e-10, "{} vs {}", ours, theirs);
        }

        #[test]
        fn ln_gamma_matches_statrs(x in 0.1f64..100.0) {
            prop_assert!((ln_gamma(x) - sr_ln_gamma(x)).abs() < 1e-10 * (1.0 + sr_ln_gamma(x).abs()));
        }
    }
}
