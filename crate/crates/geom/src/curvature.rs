//! Christoffel symbols, Riemann/Ricci/scalar curvature, Einstein-space and
//! constant-curvature classification, and conformal-rescaling identities.
//!
//! Orientation: curvature tensors are signed so that a constant-curvature
//! space has frame components `K (eta_AD eta_BC - eta_AC eta_BD)`. Ricci is
//! the contraction of the first and third slots of that Riemann tensor, so
//! the unit 2-sphere carries Ricci = -g and scalar curvature -2. The scale
//! `K` itself is positive for spheres and negative for hyperbolic space.

use crate::error::{GeomError, Result};
use crate::expr::ExprNode;
use crate::linalg;
use crate::metric::MetricSpec;
use crate::tensor::{DenseTensor, SlotKind, Tolerance};
use nalgebra::DMatrix;

#[inline]
pub(crate) fn i3(n: usize, a: usize, b: usize, c: usize) -> usize {
    (a * n + b) * n + c
}

#[inline]
pub(crate) fn i4(n: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * n + b) * n + c) * n + d
}

/// Levi-Civita connection coefficients Gamma^a_{bc} as a flat [n^3] array.
pub(crate) fn christoffel_raw(g_inv: &DMatrix<f64>, d1: &[DMatrix<f64>], n: usize) -> Vec<f64> {
    let mut gamma = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in b..n {
                let mut acc = 0.0;
                for d in 0..n {
                    acc += 0.5 * g_inv[(a, d)] * (d1[b][(d, c)] + d1[c][(d, b)] - d1[d][(b, c)]);
                }
                gamma[i3(n, a, b, c)] = acc;
                gamma[i3(n, a, c, b)] = acc;
            }
        }
    }
    gamma
}

/// Connection coefficients and their coordinate derivatives at a point.
/// `dgamma` is indexed [a][b][c][k] = d_k Gamma^a_{bc}.
pub(crate) fn christoffel_with_derivs(
    spec: &MetricSpec,
    point: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = spec.dim();
    let g = spec.eval(point)?;
    let g_inv = linalg::invert_metric(&g)?;
    let d1 = spec.eval_d1(point)?;
    let d2 = spec.eval_d2(point)?;
    let gamma = christoffel_raw(&g_inv, &d1, n);

    // d_k g^{ad} = -g^{am} (d_k g_{mn}) g^{nd}
    let mut dginv = vec![DMatrix::zeros(n, n); n];
    for k in 0..n {
        dginv[k] = -(&g_inv * &d1[k] * &g_inv);
    }

    let mut dgamma = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in b..n {
                for k in 0..n {
                    let mut acc = 0.0;
                    for d in 0..n {
                        acc += 0.5
                            * dginv[k][(a, d)]
                            * (d1[b][(d, c)] + d1[c][(d, b)] - d1[d][(b, c)]);
                        acc += 0.5
                            * g_inv[(a, d)]
                            * (d2[b][k][(d, c)] + d2[c][k][(d, b)] - d2[d][k][(b, c)]);
                    }
                    dgamma[i4(n, a, b, c, k)] = acc;
                    dgamma[i4(n, a, c, b, k)] = acc;
                }
            }
        }
    }
    Ok((gamma, dgamma, g, g_inv))
}

/// Gamma^a_{bc} as a rank-3 tensor (upper, lower, lower).
pub fn christoffel(spec: &MetricSpec, point: &[f64]) -> Result<DenseTensor> {
    let n = spec.dim();
    let g = spec.eval(point)?;
    let g_inv = linalg::invert_metric(&g)?;
    let d1 = spec.eval_d1(point)?;
    let gamma = christoffel_raw(&g_inv, &d1, n);
    Ok(DenseTensor::from_fn(
        &[n, n, n],
        &[SlotKind::CoordUpper, SlotKind::CoordLower, SlotKind::CoordLower],
        |idx| gamma[i3(n, idx[0], idx[1], idx[2])],
    ))
}

/// Numerical residual of metric compatibility, max |nabla_c g_ab|.
pub fn metric_compatibility_residual(spec: &MetricSpec, point: &[f64]) -> Result<f64> {
    let n = spec.dim();
    let g = spec.eval(point)?;
    let g_inv = linalg::invert_metric(&g)?;
    let d1 = spec.eval_d1(point)?;
    let gamma = christoffel_raw(&g_inv, &d1, n);
    let mut worst = 0.0_f64;
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut v = d1[c][(a, b)];
                for e in 0..n {
                    v -= gamma[i3(n, e, c, a)] * g[(e, b)] + gamma[i3(n, e, c, b)] * g[(a, e)];
                }
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst)
}

/// Lowered curvature tensor R_{abcd} as a flat [n^4] array, in the
/// constant-curvature-normal orientation described in the module docs.
pub(crate) fn riemann_lowered_raw(
    spec: &MetricSpec,
    point: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = spec.dim();
    let (gamma, dgamma, g, _) = christoffel_with_derivs(spec, point)?;
    let up = riemann_upper_from_parts(&gamma, &dgamma, n);
    let mut low = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut v = 0.0;
                    for e in 0..n {
                        v += g[(a, e)] * up[i4(n, e, b, c, d)];
                    }
                    low[i4(n, a, b, c, d)] = v;
                }
            }
        }
    }
    Ok((low, g))
}

fn riemann_upper_from_parts(gamma: &[f64], dgamma: &[f64], n: usize) -> Vec<f64> {
    let mut up = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    // R^a_{bcd} = d_d Gamma^a_{cb} - d_c Gamma^a_{db}
                    //           + Gamma^a_{de} Gamma^e_{cb} - Gamma^a_{ce} Gamma^e_{db}
                    let mut v = dgamma[i4(n, a, c, b, d)] - dgamma[i4(n, a, d, b, c)];
                    for e in 0..n {
                        v += gamma[i3(n, a, d, e)] * gamma[i3(n, e, c, b)]
                            - gamma[i3(n, a, c, e)] * gamma[i3(n, e, d, b)];
                    }
                    up[i4(n, a, b, c, d)] = v;
                }
            }
        }
    }
    up
}

/// Convert a lowered rank-4 coordinate tensor to frame components with the
/// frame vectors `v` (columns), one slot at a time.
pub(crate) fn to_frame_rank4(low: &[f64], n: usize, v: &DMatrix<f64>) -> Vec<f64> {
    let mut cur = low.to_vec();
    for slot in 0..4 {
        let mut next = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let idx = [a, b, c, d];
                        let mut acc = 0.0;
                        for m in 0..n {
                            let mut src = idx;
                            src[slot] = m;
                            acc += cur[i4(n, src[0], src[1], src[2], src[3])] * v[(m, idx[slot])];
                        }
                        next[i4(n, a, b, c, d)] = acc;
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Full curvature data at a point.
#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    pub point: Vec<f64>,
    /// Gamma^a_{bc}
    pub christoffel: DenseTensor,
    /// R^a_{bcd}
    pub riemann_coord: DenseTensor,
    /// R_{(A)(B)(C)(D)} in the orthonormal frame of `vielbein_at`
    pub riemann_frame: DenseTensor,
    /// R_{ab}
    pub ricci: DenseTensor,
    pub scalar: f64,
}

impl CurvatureBundle {
    /// Residuals of the structural invariants: Christoffel symmetry, frame
    /// antisymmetries, pair symmetry, and the first Bianchi identity.
    pub fn invariant_residuals(&self) -> Vec<(String, f64)> {
        let tol = Tolerance::default_tol();
        let gamma_sym = crate::tensor::check_symmetry(&self.christoffel, &[0, 2, 1], 1.0, &tol)
            .expect("valid permutation");
        let f = &self.riemann_frame;
        let anti_ab = crate::tensor::check_symmetry(f, &[1, 0, 2, 3], -1.0, &tol).unwrap();
        let anti_cd = crate::tensor::check_symmetry(f, &[0, 1, 3, 2], -1.0, &tol).unwrap();
        let pair = crate::tensor::check_symmetry(f, &[2, 3, 0, 1], 1.0, &tol).unwrap();
        let n = f.dims()[0];
        let mut bianchi = 0.0_f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let cyc =
                            f.get(&[a, b, c, d]) + f.get(&[a, c, d, b]) + f.get(&[a, d, b, c]);
                        bianchi = bianchi.max(cyc.abs());
                    }
                }
            }
        }
        vec![
            ("christoffel_symmetry".into(), gamma_sym),
            ("frame_antisym_first_pair".into(), anti_ab),
            ("frame_antisym_second_pair".into(), anti_cd),
            ("frame_pair_swap".into(), pair),
            ("frame_first_bianchi".into(), bianchi),
        ]
    }

    /// Curvature scale from the first two frame directions:
    /// K = R_{(1)(2)(1)(2)} / (-eta_11 eta_22); 0 when every component is
    /// below `tol`.
    pub fn curvature_scale(&self, spec: &MetricSpec, tol: f64) -> f64 {
        if self.riemann_frame.max_abs() < tol {
            return 0.0;
        }
        let sig = spec.signature();
        self.riemann_frame.get(&[0, 1, 0, 1]) / (-sig.sign(0) * sig.sign(1))
    }

    /// Max deviation of the frame tensor from K (eta_AD eta_BC - eta_AC eta_BD).
    pub fn constant_curvature_residual(&self, spec: &MetricSpec, k: f64) -> f64 {
        let sig = spec.signature();
        let n = spec.dim();
        let eta = |i: usize, j: usize| if i == j { sig.sign(i) } else { 0.0 };
        let mut worst = 0.0_f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let model = k * (eta(a, d) * eta(b, c) - eta(a, c) * eta(b, d));
                        worst = worst.max((self.riemann_frame.get(&[a, b, c, d]) - model).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Curvature bundle at a point; frame components use the deterministic
/// vielbein at that same point.
pub fn riemann(spec: &MetricSpec, point: &[f64]) -> Result<CurvatureBundle> {
    let n = spec.dim();
    let (gamma, dgamma, g, g_inv) = christoffel_with_derivs(spec, point)?;
    let up = riemann_upper_from_parts(&gamma, &dgamma, n);
    let mut low = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut v = 0.0;
                    for e in 0..n {
                        v += g[(a, e)] * up[i4(n, e, b, c, d)];
                    }
                    low[i4(n, a, b, c, d)] = v;
                }
            }
        }
    }

    let frame = spec.vielbein_at(point)?;
    let frame_comps = to_frame_rank4(&low, n, &frame.e_inv);

    // Ricci contracts the first (upper) slot with the third.
    let mut ricci = DMatrix::zeros(n, n);
    for b in 0..n {
        for d in 0..n {
            let mut v = 0.0;
            for a in 0..n {
                v += up[i4(n, a, b, a, d)];
            }
            ricci[(b, d)] = v;
        }
    }
    let mut scalar = 0.0;
    for b in 0..n {
        for d in 0..n {
            scalar += g_inv[(b, d)] * ricci[(b, d)];
        }
    }

    Ok(CurvatureBundle {
        point: point.to_vec(),
        christoffel: DenseTensor::from_fn(
            &[n, n, n],
            &[SlotKind::CoordUpper, SlotKind::CoordLower, SlotKind::CoordLower],
            |idx| gamma[i3(n, idx[0], idx[1], idx[2])],
        ),
        riemann_coord: DenseTensor::from_fn(
            &[n, n, n, n],
            &[
                SlotKind::CoordUpper,
                SlotKind::CoordLower,
                SlotKind::CoordLower,
                SlotKind::CoordLower,
            ],
            |idx| up[i4(n, idx[0], idx[1], idx[2], idx[3])],
        ),
        riemann_frame: DenseTensor::from_fn(&[n, n, n, n], &[SlotKind::FrameLower; 4], |idx| {
            frame_comps[i4(n, idx[0], idx[1], idx[2], idx[3])]
        }),
        ricci: DenseTensor::from_fn(&[n, n], &[SlotKind::CoordLower; 2], |idx| {
            ricci[(idx[0], idx[1])]
        }),
        scalar,
    })
}

/// Verdict of the Einstein-space / constant-curvature scan over samples.
#[derive(Clone, Debug)]
pub struct EinsteinReport {
    pub is_einstein: bool,
    pub is_constant_curvature: bool,
    pub max_einstein_deviation: f64,
    pub max_constant_curvature_deviation: f64,
    /// Curvature scale from the first sample (0 for flat space).
    pub k: f64,
    pub samples: usize,
}

pub fn einstein_space_check(
    spec: &MetricSpec,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<EinsteinReport> {
    if points.is_empty() {
        return Err(GeomError::Config("einstein check needs sample points".into()));
    }
    let n = spec.dim() as f64;
    let mut max_einstein = 0.0_f64;
    let mut max_cc = 0.0_f64;
    let mut k_first: Option<f64> = None;
    for p in points {
        let bundle = riemann(spec, p)?;
        let g = spec.eval(p)?;
        for i in 0..spec.dim() {
            for j in 0..spec.dim() {
                let dev = bundle.ricci.get(&[i, j]) - bundle.scalar / n * g[(i, j)];
                max_einstein = max_einstein.max(dev.abs());
            }
        }
        let k = *k_first.get_or_insert_with(|| bundle.curvature_scale(spec, tol));
        max_cc = max_cc.max(bundle.constant_curvature_residual(spec, k));
    }
    Ok(EinsteinReport {
        is_einstein: max_einstein < tol,
        is_constant_curvature: max_einstein < tol && max_cc < tol,
        max_einstein_deviation: max_einstein,
        max_constant_curvature_deviation: max_cc,
        k: k_first.unwrap_or(0.0),
        samples: points.len(),
    })
}

/// Scalar-field data entering the conformal identities at one point:
/// psi_{mu nu} = psi_{;mu nu} - psi_{,mu} psi_{,nu}, with
/// Delta_1 psi = g^{mu nu} psi_{,mu} psi_{,nu} and
/// Delta_2 psi = g^{mu nu} psi_{;mu nu}.
#[derive(Clone, Debug)]
pub struct ConformalPair {
    pub point: Vec<f64>,
    pub psi: f64,
    pub grad: Vec<f64>,
    /// Covariant Hessian psi_{;mu nu} with respect to the base metric.
    pub hessian: DMatrix<f64>,
    pub psi_munu: DMatrix<f64>,
    pub delta1: f64,
    pub delta2: f64,
}

pub fn conformal_quantities(
    g_spec: &MetricSpec,
    psi: &ExprNode,
    point: &[f64],
) -> Result<ConformalPair> {
    use crate::dual::Dual;
    let n = g_spec.dim();
    g_spec.check_point(point)?;
    let g = g_spec.eval(point)?;
    let g_inv = linalg::invert_metric(&g)?;
    let d1 = g_spec.eval_d1(point)?;
    let gamma = christoffel_raw(&g_inv, &d1, n);

    let value = psi.eval(point);
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let coords: Vec<Dual<f64>> = point
            .iter()
            .enumerate()
            .map(|(m, &x)| if m == k { Dual::variable(x) } else { Dual::constant(x) })
            .collect();
        grad[k] = psi.eval(&coords).eps;
    }
    let mut hess_partial = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in k..n {
            let coords: Vec<Dual<Dual<f64>>> = point
                .iter()
                .enumerate()
                .map(|(m, &x)| {
                    let inner = if m == k { Dual::variable(x) } else { Dual::constant(x) };
                    if m == l {
                        Dual::variable(inner)
                    } else {
                        Dual::lift(inner)
                    }
                })
                .collect();
            let v = psi.eval(&coords).eps.eps;
            hess_partial[(k, l)] = v;
            hess_partial[(l, k)] = v;
        }
    }
    let mut hessian = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut v = hess_partial[(a, b)];
            for e in 0..n {
                v -= gamma[i3(n, e, a, b)] * grad[e];
            }
            hessian[(a, b)] = v;
        }
    }
    let mut delta1 = 0.0;
    let mut delta2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            delta1 += g_inv[(a, b)] * grad[a] * grad[b];
            delta2 += g_inv[(a, b)] * hessian[(a, b)];
        }
    }
    let mut psi_munu = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            psi_munu[(a, b)] = hessian[(a, b)] - grad[a] * grad[b];
        }
    }
    Ok(ConformalPair {
        point: point.to_vec(),
        psi: value,
        grad,
        hessian,
        psi_munu,
        delta1,
        delta2,
    })
}

/// Residuals of the conformal-transformation identities over sample points.
#[derive(Clone, Debug)]
pub struct ConformalReport {
    /// max |g'_{ab} - exp(2 psi) g_{ab}|
    pub rescaling_residual: f64,
    /// General identity relating psi_{mu nu} to both Ricci tensors.
    pub general_identity_residual: f64,
    /// Einstein-space form (present when g' is an Einstein space).
    pub einstein_identity_residual: Option<f64>,
    /// Ricci of g' reconstructed from the identity vs computed directly.
    pub ricci_reconstruction_residual: f64,
    pub samples: usize,
}

/// Check the conformal identities for a pair g' = exp(2 psi) g.
///
/// The general identity evaluated on both sides is
///   psi_{mu nu} = (R'_{mu nu} - R_{mu nu})/(n-2)
///               + (g_{mu nu} R - g'_{mu nu} R')/(2(n-1)(n-2))
///               - (1/2) Delta_1 psi g_{mu nu},
/// and for an Einstein g' it collapses to
///   psi_{mu nu} = -R_{mu nu}/(n-2)
///               + [ R/(2(n-1)(n-2)) + R' exp(2 psi)/(2n(n-1))
///                 - (1/2) Delta_1 psi ] g_{mu nu}.
pub fn conformal_identity_check(
    g_spec: &MetricSpec,
    psi: &ExprNode,
    gprime_spec: &MetricSpec,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ConformalReport> {
    let n = g_spec.dim();
    if n <= 2 {
        return Err(GeomError::Config(
            "conformal identities need dimension >= 3".into(),
        ));
    }
    if gprime_spec.dim() != n {
        return Err(GeomError::Config("metric pair dimension mismatch".into()));
    }
    if points.is_empty() {
        return Err(GeomError::Config("no sample points".into()));
    }
    let nf = n as f64;
    let gprime_einstein = einstein_space_check(gprime_spec, points, tol.max(1e-7))?.is_einstein;

    let mut rescale = 0.0_f64;
    let mut general = 0.0_f64;
    let mut einstein_form = 0.0_f64;
    let mut ricci_recon = 0.0_f64;

    for p in points {
        let pair = conformal_quantities(g_spec, psi, p)?;
        let g = g_spec.eval(p)?;
        let gp = gprime_spec.eval(p)?;
        let e2psi = (2.0 * pair.psi).exp();
        for a in 0..n {
            for b in 0..n {
                rescale = rescale.max((gp[(a, b)] - e2psi * g[(a, b)]).abs());
            }
        }
        let base = riemann(g_spec, p)?;
        let prime = riemann(gprime_spec, p)?;
        let (r, rp) = (base.scalar, prime.scalar);
        for a in 0..n {
            for b in 0..n {
                let ric = base.ricci.get(&[a, b]);
                let ricp = prime.ricci.get(&[a, b]);
                let rhs = (ricp - ric) / (nf - 2.0)
                    + (g[(a, b)] * r - gp[(a, b)] * rp) / (2.0 * (nf - 1.0) * (nf - 2.0))
                    - 0.5 * pair.delta1 * g[(a, b)];
                general = general.max((pair.psi_munu[(a, b)] - rhs).abs());

                if gprime_einstein {
                    let rhs_e = -ric / (nf - 2.0)
                        + (r / (2.0 * (nf - 1.0) * (nf - 2.0))
                            + rp * e2psi / (2.0 * nf * (nf - 1.0))
                            - 0.5 * pair.delta1)
                            * g[(a, b)];
                    einstein_form = einstein_form.max((pair.psi_munu[(a, b)] - rhs_e).abs());
                }

                // Rearranged for R'_{mu nu}, with R' from the trace relation.
                let rp_trace = (-2.0 * pair.psi).exp()
                    * (r + 2.0 * (nf - 1.0) * pair.delta2
                        + (nf - 1.0) * (nf - 2.0) * pair.delta1);
                let ricp_recon = ric + (nf - 2.0) * pair.psi_munu[(a, b)]
                    - (g[(a, b)] * r - gp[(a, b)] * rp_trace) / (2.0 * (nf - 1.0))
                    + (nf - 2.0) / 2.0 * pair.delta1 * g[(a, b)];
                ricci_recon = ricci_recon.max((ricp_recon - ricp).abs());
            }
        }
    }
    Ok(ConformalReport {
        rescaling_residual: rescale,
        general_identity_residual: general,
        einstein_identity_residual: if gprime_einstein {
            Some(einstein_form)
        } else {
            None
        },
        ricci_reconstruction_residual: ricci_recon,
        samples: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric;
    use crate::tensor::Signature;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn flat_space_has_zero_connection_and_curvature() {
        let spec = metric::flat(Signature::parse("-+++").unwrap());
        let p = [0.1, 0.2, -0.3, 0.4];
        let gamma = christoffel(&spec, &p).unwrap();
        assert_eq!(gamma.max_abs(), 0.0);
        let bundle = riemann(&spec, &p).unwrap();
        assert_eq!(bundle.riemann_coord.max_abs(), 0.0);
        assert_eq!(bundle.riemann_frame.max_abs(), 0.0);
        assert_eq!(bundle.scalar, 0.0);
    }

    #[test]
    fn sphere_christoffel_closed_form() {
        // Gamma^theta_{phi phi} = -sin(theta) cos(theta) = -1/2 at pi/4
        let spec = metric::sphere(2, 1.0).unwrap();
        let gamma = christoffel(&spec, &[FRAC_PI_4, 0.3]).unwrap();
        assert_relative_eq!(gamma.get(&[0, 1, 1]), -0.5, epsilon = 1e-12);
        // Gamma^phi_{theta phi} = cot(theta) = 1 at pi/4
        assert_relative_eq!(gamma.get(&[1, 0, 1]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn schwarzschild_christoffel_closed_form() {
        // Gamma^r_{tt} = M (r - 2M) / r^3 = 8e-3 at M=1, r=10
        let spec = metric::schwarzschild(1.0, 0.05).unwrap();
        let gamma = christoffel(&spec, &[0.0, 10.0, FRAC_PI_4, 0.2]).unwrap();
        assert_relative_eq!(gamma.get(&[1, 0, 0]), 8.0 / 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_curvature_frame_form() {
        for (spec, k) in [
            (metric::sphere(2, 1.0).unwrap(), 1.0),
            (metric::sphere(2, 2.0).unwrap(), 0.25),
            (metric::sphere(3, 1.0).unwrap(), 1.0),
            (metric::constant_curvature(3, 1.0, None).unwrap(), 1.0),
            (metric::constant_curvature(3, -1.0, None).unwrap(), -1.0),
            (metric::hyperbolic(2, 1.0).unwrap(), -1.0),
        ] {
            for p in spec.sample_points(8, 5) {
                let bundle = riemann(&spec, &p).unwrap();
                let res = bundle.constant_curvature_residual(&spec, k);
                assert!(res < 1e-7, "{} at {:?}: residual {}", spec.name(), p, res);
                let k_measured = bundle.curvature_scale(&spec, 1e-9);
                assert_relative_eq!(k_measured, k, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn schwarzschild_is_ricci_flat() {
        let spec = metric::schwarzschild(1.0, 0.05).unwrap();
        let bundle = riemann(&spec, &[0.0, 5.0, 1.1, 0.4]).unwrap();
        assert!(bundle.ricci.max_abs() < 1e-7, "ricci {}", bundle.ricci.max_abs());
        assert!(bundle.riemann_frame.max_abs() > 1e-3);
    }

    #[test]
    fn bundle_invariants_hold_across_catalog() {
        let specs = [
            metric::sphere(2, 1.0).unwrap(),
            metric::sphere(3, 1.0).unwrap(),
            metric::hyperbolic(2, 1.0).unwrap(),
            metric::constant_curvature(4, 0.25, None).unwrap(),
            metric::schwarzschild(1.0, 0.05).unwrap(),
        ];
        for spec in &specs {
            for p in spec.sample_points(10, 9) {
                let bundle = riemann(spec, &p).unwrap();
                for (name, residual) in bundle.invariant_residuals() {
                    let limit = if name == "christoffel_symmetry" { 1e-10 } else { 1e-8 };
                    assert!(
                        residual < limit,
                        "{} {} at {:?}: {}",
                        spec.name(),
                        name,
                        p,
                        residual
                    );
                }
                let compat = metric_compatibility_residual(spec, &p).unwrap();
                assert!(compat < 1e-7, "{} compat {}", spec.name(), compat);
            }
        }
    }

    #[test]
    fn frame_components_match_tensor_conversion() {
        // Lowering riemann_coord with g and converting with the frame field
        // reproduces riemann_frame.
        use crate::tensor::{raise_lower, Direction};
        let spec = metric::sphere(2, 1.3).unwrap();
        let p = [0.9, 0.4];
        let bundle = riemann(&spec, &p).unwrap();
        let g = spec.eval(&p).unwrap();
        let g_tensor = DenseTensor::from_fn(&[2, 2], &[SlotKind::CoordLower; 2], |idx| {
            g[(idx[0], idx[1])]
        });
        let lowered = raise_lower(&bundle.riemann_coord, 0, &g_tensor, Direction::Down).unwrap();
        let frame = spec.vielbein_at(&p).unwrap();
        let conv = to_frame_rank4(lowered.data(), 2, &frame.e_inv);
        let mut worst = 0.0_f64;
        for (i, v) in conv.iter().enumerate() {
            worst = worst.max((v - bundle.riemann_frame.data()[i]).abs());
        }
        assert!(worst < 1e-8, "conversion deviation {}", worst);
    }

    #[test]
    fn einstein_verdicts() {
        let sphere = metric::sphere(2, 1.0).unwrap();
        let rep = einstein_space_check(&sphere, &sphere.sample_points(6, 2), 1e-7).unwrap();
        assert!(rep.is_einstein && rep.is_constant_curvature);
        assert_relative_eq!(rep.k, 1.0, epsilon = 1e-7);

        let schw = metric::schwarzschild(1.0, 0.05).unwrap();
        let rep = einstein_space_check(&schw, &schw.sample_points(6, 2), 1e-7).unwrap();
        assert!(rep.is_einstein);
        assert!(!rep.is_constant_curvature);

        let flat = metric::flat(Signature::euclidean(3));
        let rep = einstein_space_check(&flat, &flat.sample_points(6, 2), 1e-7).unwrap();
        assert!(rep.is_einstein && rep.is_constant_curvature);
        assert_eq!(rep.k, 0.0);
    }

    /// psi = -ln(1 + K |x|^2 / 4) pairs the flat metric with the
    /// constant-curvature form.
    fn stereographic_psi(n: usize, k: f64, sig: &Signature) -> ExprNode {
        let mut quad: Option<ExprNode> = None;
        for i in 0..n {
            let term = ExprNode::mul(
                ExprNode::constant(sig.sign(i)),
                ExprNode::pow(ExprNode::coord(i), ExprNode::constant(2.0)),
            );
            quad = Some(match quad {
                None => term,
                Some(prev) => ExprNode::add(prev, term),
            });
        }
        let s = ExprNode::add(
            ExprNode::constant(1.0),
            ExprNode::mul(ExprNode::constant(k / 4.0), quad.unwrap()),
        );
        ExprNode::neg(ExprNode::Ln(Box::new(s)))
    }

    #[test]
    fn conformal_identity_trivial_and_constant_cases() {
        let g = metric::flat(Signature::euclidean(3));
        let zero = ExprNode::constant(0.0);
        let rep = conformal_identity_check(&g, &zero, &g, &g.sample_points(5, 4), 1e-9).unwrap();
        assert!(rep.rescaling_residual < 1e-14);
        assert!(rep.general_identity_residual < 1e-12);

        // constant psi: Delta_1 = 0 and psi_{mu nu} = 0
        let c = ExprNode::constant(0.8);
        let pair = conformal_quantities(&g, &c, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(pair.delta1, 0.0);
        assert_eq!(linalg::max_abs(&pair.psi_munu), 0.0);
    }

    #[test]
    fn flat_to_constant_curvature_identities() {
        for n in [3usize, 4] {
            for k in [1.0, 0.25, -1.0] {
                let sig = Signature::euclidean(n);
                let g = metric::flat(sig.clone());
                let gp = metric::constant_curvature(n, k, None).unwrap();
                let psi = stereographic_psi(n, k, &sig);
                let pts = gp.sample_points(20, 7);
                let rep = conformal_identity_check(&g, &psi, &gp, &pts, 1e-6).unwrap();
                assert!(rep.rescaling_residual < 1e-12, "rescale {}", rep.rescaling_residual);
                assert!(
                    rep.general_identity_residual < 1e-6,
                    "n={} K={}: general {}",
                    n,
                    k,
                    rep.general_identity_residual
                );
                let e = rep
                    .einstein_identity_residual
                    .expect("constant curvature is Einstein");
                assert!(e < 1e-6, "n={} K={}: einstein-form {}", n, k, e);
                assert!(rep.ricci_reconstruction_residual < 1e-6);
            }
        }
    }

    #[test]
    fn lorentzian_conformal_pair_near_origin() {
        let sig = Signature::parse("-+++").unwrap();
        let g = metric::flat(sig.clone());
        let gp = metric::constant_curvature(4, 1.0, Some(sig.clone())).unwrap();
        let psi = stereographic_psi(4, 1.0, &sig);
        let pts: Vec<Vec<f64>> = gp
            .sample_points(10, 3)
            .into_iter()
            .map(|p| p.iter().map(|x| 0.3 * x).collect())
            .collect();
        let rep = conformal_identity_check(&g, &psi, &gp, &pts, 1e-6).unwrap();
        assert!(
            rep.general_identity_residual < 1e-6,
            "{}",
            rep.general_identity_residual
        );
    }

    #[test]
    fn dim_two_is_rejected() {
        let g = metric::flat(Signature::euclidean(2));
        let err = conformal_identity_check(
            &g,
            &ExprNode::constant(0.0),
            &g,
            &g.sample_points(3, 1),
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, GeomError::Config(_)));
    }
}
