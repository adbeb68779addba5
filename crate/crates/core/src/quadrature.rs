//! Numerical integration: adaptive Gauss-Kronrod (7/15) with interval
//! bisection, and fixed-order Gauss-Legendre rules.

use crate::error::{Error, Result};
use std::sync::OnceLock;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];

// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
        if !f1.is_finite() || !f2.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand near {center}")));
        }
    }
    if !fc.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand at {center}")));
    }
    Ok((kronrod * half, ((kronrod - gauss) * half).abs()))
}

/// Adaptive integration of `f` over `[a, b]` until the summed error estimate
/// falls below `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Integral> {
    const MAX_INTERVALS: usize = 2000;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature("infinite integration bounds".into()));
    }
    if a == b {
        return Ok(Integral { value: 0.0, abs_error: 0.0, intervals: 0 });
    }
    let (v, e) = gk15(&mut f, a, b)?;
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let value: f64 = pieces.iter().map(|p| p.2).sum();
        let error: f64 = pieces.iter().map(|p| p.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Integral { value, abs_error: error, intervals: pieces.len() });
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "no convergence after {MAX_INTERVALS} intervals (error estimate {error:e})"
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid)?;
        let (v2, e2) = gk15(&mut f, mid, hi)?;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d.is_finite() { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The 128-point Gauss-Legendre rule used for segment lengths.
pub fn gauss_legendre_128() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(128))
}

/// Integral of `f` over `[0, 1]` with a fixed rule on `[-1, 1]`.
pub fn fixed_unit<F: FnMut(f64) -> f64>(rule: &(Vec<f64>, Vec<f64>), mut f: F) -> f64 {
    rule.0.iter().zip(&rule.1).map(|(x, w)| 0.5 * w * f(0.5 * (x + 1.0))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn adaptive_polynomial_and_peaks() {
        let r = integrate(|x| x * x, 0.0, 3.0, 1e-14, 1e-14).unwrap();
        assert_relative_eq!(r.value, 9.0, max_relative = 1e-14);

        let r = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 1e-12).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert_relative_eq!(r.value, exact, max_relative = 1e-10);
    }

    #[test]
    fn adaptive_reports_non_finite_integrand() {
        let r = integrate(|x| 1.0 / x, 0.0, 1.0, 1e-10, 1e-10);
        assert!(r.is_err());
        let r = integrate(|_| f64::NAN, 0.0, 1.0, 1e-10, 1e-10);
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }

    #[test]
    fn loglog_truncated_integral_matches_closed_form() {
        // -int_eps^c dr / (r log r) = log log(1/eps) - log log(1/c)
        let c: f64 = (-1.0f64).exp();
        for eps in [(-4.0f64).exp(), (-32.0f64).exp(), 1e-200] {
            // integrate over t = ln r to resolve the endpoint scales
            let r = integrate(|t| -1.0 / t, eps.ln(), c.ln(), 1e-13, 1e-13).unwrap();
            let exact = (1.0 / eps).ln().ln() - (1.0 / c).ln().ln();
            assert_relative_eq!(r.value, exact, epsilon = 1e-10);
        }
    }

    #[test]
    fn gauss_legendre_rule() {
        let (x, w) = gauss_legendre(128);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
        // exact for degree 255; check x^20 and cos
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(20)).sum();
        assert_relative_eq!(m, 2.0 / 21.0, epsilon = 1e-14);
        let c = fixed_unit(gauss_legendre_128(), |t| (3.0 * t).cos());
        assert_relative_eq!(c, 3f64.sin() / 3.0, epsilon = 1e-14);
        let (x5, _) = gauss_legendre(5);
        assert_relative_eq!(x5[4], 0.906_179_845_938_664, epsilon = 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }
}
