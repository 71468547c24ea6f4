//! Deterministic sampling utilities.
//!
//! Reports must be byte-identical run to run, so everything random is driven
//! by a hand-rolled splitmix64 stream: no platform or crate-version drift.

pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Deterministic low-discrepancy unit directions in `dim` dimensions
/// (Euclidean normalization).
///
/// dim == 2 uses equally spaced angles with a half-step offset, so axis
/// directions are avoided for any count not of the form 4k+2. Higher
/// dimensions map an additive-recurrence sequence through Box-Muller and
/// normalize.
pub fn unit_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    assert!(dim >= 1);
    if dim == 1 {
        return (0..count).map(|k| vec![if k % 2 == 0 { 1.0 } else { -1.0 }]).collect();
    }
    if dim == 2 {
        return (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    // R_d sequence: x_k = frac(k * alpha), alpha from the generalized golden ratio.
    let pairs = dim.div_ceil(2);
    let d = (2 * pairs) as f64;
    let mut phi = 1.0_f64;
    for _ in 0..32 {
        phi = (1.0 + phi).powf(1.0 / (d + 1.0));
    }
    let alphas: Vec<f64> = (1..=2 * pairs).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut v = Vec::with_capacity(dim);
        for p in 0..pairs {
            let u1 = ((k as f64 + 0.5) * alphas[2 * p]).fract().max(1e-12);
            let u2 = ((k as f64 + 0.5) * alphas[2 * p + 1]).fract();
            let r = (-2.0 * u1.ln()).sqrt();
            let t = 2.0 * std::f64::consts::PI * u2;
            v.push(r * t.cos());
            if v.len() < dim {
                v.push(r * t.sin());
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_reproducible() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn planar_directions_avoid_axes_for_eight() {
        let dirs = unit_directions(2, 8);
        for d in &dirs {
            assert!(d[0].abs() > 1e-6 && d[1].abs() > 1e-6, "{:?}", d);
        }
    }

    #[test]
    fn directions_are_unit_norm() {
        for dim in [2, 3, 4] {
            for d in unit_directions(dim, 16) {
                let n: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
}
