//! Fourth-order central finite differences.
//!
//! Used as the independent cross-check against dual-number derivatives and
//! by test oracles. Default step: cbrt(machine epsilon) scaled by the
//! coordinate magnitude.

/// h = cbrt(eps) * max(1, |x|).
pub fn default_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// f'(x) by the 5-point 4th-order stencil.
pub fn d1<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

/// Partial derivative of a multivariate function along coordinate `k`.
pub fn partial<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], k: usize, h: f64) -> f64 {
    let eval = |s: f64| {
        let mut p = x.to_vec();
        p[k] += s;
        f(&p)
    };
    (8.0 * (eval(h) - eval(-h)) - (eval(2.0 * h) - eval(-2.0 * h))) / (12.0 * h)
}

/// Second-order central difference of a vector-valued map, one component pair.
pub fn central_vec<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], k: usize, h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[k] += h;
    xm[k] -= h;
    let fp = f(&xp);
    let fm = f(&xm);
    fp.iter().zip(fm.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_order_stencil_is_accurate() {
        let f = |x: f64| x.sin() * x.exp();
        let x = 0.8_f64;
        let exact = x.cos() * x.exp() + x.sin() * x.exp();
        let got = d1(f, x, default_step(x));
        assert!((got - exact).abs() < 1e-10, "err {}", (got - exact).abs());
    }
}
