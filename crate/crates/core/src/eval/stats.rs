//! Paired t-test with exact Student-t tail probabilities.
//!
//! Five folds leave four degrees of freedom, far too few for a normal
//! approximation, so the two-sided p-value is computed from the regularized
//! incomplete beta function evaluated by continued fraction.

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p_two_sided: f64,
    pub df: usize,
}

/// Paired t statistic and two-sided p for equal-length observation lists.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewPairs(a.len()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let t = mean / (var / n).sqrt();
    let df = a.len() - 1;
    Ok(TTest { t, p_two_sided: student_t_two_sided_p(t, df), df })
}

/// Two-sided tail probability of Student's t:
/// `p = I_x(df/2, 1/2)` with `x = df / (df + t^2)`.
pub fn student_t_two_sided_p(t: f64, df: usize) -> f64 {
    let dff = df as f64;
    let x = dff / (dff + t * t);
    reg_inc_beta(dff / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation of ln Gamma.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_critical_value_of_t_distribution() {
        // Classic table entry: t = 2.776, df = 4 gives p = 0.05 two-sided.
        let p = student_t_two_sided_p(2.776, 4);
        assert!((p - 0.05).abs() < 5e-4, "{p}");
    }

    #[test]
    fn swapping_sides_negates_t_and_keeps_p() {
        let a = [1.0, 2.0, 3.5, 2.2, 4.0];
        let b = [0.5, 2.5, 3.0, 1.0, 3.2];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-12);
        assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_rejected() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(paired_t_test(&a, &a), Err(EvalError::ZeroVariance)));
        let b = [2.0, 3.0, 4.0]; // constant difference
        assert!(matches!(paired_t_test(&a, &b), Err(EvalError::ZeroVariance)));
    }

    #[test]
    fn too_few_pairs_rejected() {
        assert!(matches!(paired_t_test(&[1.0], &[2.0]), Err(EvalError::TooFewPairs(1))));
    }

    #[test]
    fn lgamma_matches_factorials() {
        for n in 1..10u64 {
            let expect: f64 = (1..n).map(|k| k as f64).product::<f64>().ln();
            assert!((ln_gamma(n as f64) - expect).abs() < 1e-10);
        }
        // Gamma(1/2) = sqrt(pi)
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-10);
    }
}
