//! Normal coordinates built from radial geodesics.
//!
//! A chart direction is a frame vector `z` at the origin; the geodesic
//! `u(t)` with initial velocity `z` (in coordinates, through the origin
//! vielbein) reaches the point with normal coordinates `z` at `t = 1`. Along
//! each ray the module integrates the radial structure-equation system for
//! the coframe coefficients `A_{(A)(C)(D)}(t)` and their curvature potential
//! `B_{(A)(B)(C)(D)}(t)`:
//!
//! ```text
//! A''_{ACD} = t z^B R_{ABCD} + z^L z^M R_{ALMN} eta^{NP} A_{PCD}
//! B''_{ABCD} = t R_{ABCD}   + z^L z^M R_{ABLN} eta^{NP} B_{PMCD}
//! ```
//!
//! with A(0) = A'(0) = 0 and B(0) = B'(0) = 0, where `R` is the frame
//! curvature along the ray in the parallel-transported frame. The curvature
//! orientation in these source terms is the one in which a sphere's tidal
//! matrix is positive — the opposite sign from the `curvature` module's
//! normal form — and the integrator flips the sign internally.
//!
//! At `t = 1` the coframe is `M^A_C = delta^A_C + A^A_{BC} z^B`, so the
//! reconstructed metric is `g(z) = M^T eta M`. An independent oracle
//! (`exp_map_pullback`) computes the same metric by shooting geodesics and
//! differentiating the endpoint map; the two agree to the integrator
//! tolerance inside the conjugate radius.
//!
//! The derivative-direction conformal factor `exp(-2 sigma)` relates the
//! flat line element to the reconstructed one along a curve through `z`:
//!
//! ```text
//! exp(-2 sigma) = 1 + (1/2) [ B_{ABCD} L^{AB} L^{CD}
//!                 - (1/2) eta^{MN} (A_{MAB} L^{AB}) (A_{NCD} L^{CD}) ]
//! ```
//!
//! with `L^{AB} = z^B dz^A/ds - z^A dz^B/ds` the classical angular momentum
//! of the unit-speed velocity. Radial motion has L = 0 and sigma = 0.

use crate::curvature::{self, i3, i4};
use crate::error::{GeomError, Result};
use crate::linalg;
use crate::metric::MetricSpec;
use crate::tensor::{DenseTensor, SlotKind};
use nalgebra::DMatrix;

/// Runge-Kutta grid resolution over t in [0, 1].
pub const DEFAULT_STEPS: usize = 1024;

#[derive(Clone, Debug)]
pub struct PathSample {
    pub t: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Columns are the parallel-transported frame vectors.
    pub frame: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct PathStats {
    /// max |u'' + Gamma u' u'| over interior samples (4th-order stencil).
    pub geodesic_residual: f64,
    /// max |V^T g V - eta| over samples.
    pub frame_orthonormality_residual: f64,
    /// max |V' + Gamma u' V| over interior samples.
    pub transport_residual: f64,
}

/// A radial geodesic with its parallel-transported frame, sampled on a
/// half-step grid (2 * steps + 1 nodes) so that coarse-grid integrators can
/// read midpoint values.
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub spec: MetricSpec,
    pub origin: Vec<f64>,
    /// Direction in frame components; the chart point reached at t = 1.
    pub direction: Vec<f64>,
    pub steps: usize,
    pub samples: Vec<PathSample>,
    pub stats: PathStats,
}

impl GeodesicPath {
    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn endpoint(&self) -> &PathSample {
        self.samples.last().expect("path has samples")
    }

    /// Euclidean-free scale of the direction: |eta(z, z)|^(1/2).
    pub fn arc_scale(&self) -> f64 {
        let sig = self.spec.signature();
        sig.inner(&self.direction, &self.direction).abs().sqrt()
    }

    /// Frame curvature along the ray at every stored sample, in the
    /// orientation used by the radial ODE source terms (sphere positive).
    pub fn source_curvature(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.samples.len());
        for sample in &self.samples {
            let (low, _) = curvature::riemann_lowered_raw(&self.spec, &sample.position)?;
            let mut frame = curvature::to_frame_rank4(&low, n, &sample.frame);
            for v in &mut frame {
                *v = -*v;
            }
            out.push(frame);
        }
        Ok(out)
    }
}

struct GeodesicRhs<'a> {
    spec: &'a MetricSpec,
    n: usize,
}

impl GeodesicRhs<'_> {
    /// State layout: [u(n), v(n), V(n*n, column a at offset 2n + a*n)].
    fn eval(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let u = &y[0..n];
        let v = &y[n..2 * n];
        let g = self.spec.eval(u)?;
        let g_inv = linalg::invert_metric(&g)?;
        let d1 = self.spec.eval_d1(u)?;
        let gamma = curvature::christoffel_raw(&g_inv, &d1, n);
        let mut dy = vec![0.0; y.len()];
        dy[..n].copy_from_slice(v);
        for lam in 0..n {
            let mut acc = 0.0;
            for mu in 0..n {
                for nu in 0..n {
                    acc -= gamma[i3(n, lam, mu, nu)] * v[mu] * v[nu];
                }
            }
            dy[n + lam] = acc;
        }
        for a in 0..n {
            let col = &y[2 * n + a * n..2 * n + (a + 1) * n];
            for lam in 0..n {
                let mut acc = 0.0;
                for mu in 0..n {
                    for nu in 0..n {
                        acc -= gamma[i3(n, lam, mu, nu)] * v[mu] * col[nu];
                    }
                }
                dy[2 * n + a * n + lam] = acc;
            }
        }
        Ok(dy)
    }
}

fn axpy(y: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    y.iter().zip(k.iter()).map(|(a, b)| a + h * b).collect()
}

/// Integrate the geodesic with its parallel frame from `origin` along the
/// frame direction `v` (the point with normal coordinates `v` is reached at
/// t = 1). `steps` is the coarse resolution; samples come back on the
/// half-step grid.
pub fn integrate_radial_geodesic(
    spec: &MetricSpec,
    origin: &[f64],
    v: &[f64],
    steps: usize,
) -> Result<GeodesicPath> {
    let n = spec.dim();
    if v.len() != n {
        return Err(GeomError::Config("direction dimension mismatch".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GeomError::Config("direction must be finite".into()));
    }
    spec.check_point(origin)?;
    let frame0 = spec.vielbein_at(origin)?;
    let v_coord = frame0.to_coordinates(v);

    let fine = 2 * steps;
    let h = 1.0 / fine as f64;
    let rhs = GeodesicRhs { spec, n };

    let mut y = vec![0.0; 2 * n + n * n];
    y[..n].copy_from_slice(origin);
    y[n..2 * n].copy_from_slice(&v_coord);
    for a in 0..n {
        for lam in 0..n {
            y[2 * n + a * n + lam] = frame0.e_inv[(lam, a)];
        }
    }

    let mut samples = Vec::with_capacity(fine + 1);
    let store = |t: f64, y: &[f64]| PathSample {
        t,
        position: y[..n].to_vec(),
        velocity: y[n..2 * n].to_vec(),
        frame: DMatrix::from_fn(n, n, |lam, a| y[2 * n + a * n + lam]),
    };
    samples.push(store(0.0, &y));

    let wrap = |t: f64, e: GeomError| match e {
        GeomError::OutsideDomain { .. } | GeomError::SingularMetric { .. } => GeomError::ChartExit {
            t,
            inner: Box::new(e),
        },
        other => other,
    };

    for k in 0..fine {
        let t = k as f64 * h;
        let k1 = rhs.eval(&y).map_err(|e| wrap(t, e))?;
        let k2 = rhs.eval(&axpy(&y, &k1, 0.5 * h)).map_err(|e| wrap(t + 0.5 * h, e))?;
        let k3 = rhs.eval(&axpy(&y, &k2, 0.5 * h)).map_err(|e| wrap(t + 0.5 * h, e))?;
        let k4 = rhs.eval(&axpy(&y, &k3, h)).map_err(|e| wrap(t + h, e))?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(GeomError::NumericalQuality {
                check: "geodesic state finite".into(),
                residual: f64::INFINITY,
                limit: 0.0,
            });
        }
        let t_next = (k + 1) as f64 * h;
        spec.check_point(&y[..n]).map_err(|e| wrap(t_next, e))?;
        samples.push(store(t_next, &y));
    }

    let stats = path_stats(spec, &samples, h)?;
    Ok(GeodesicPath {
        spec: spec.clone(),
        origin: origin.to_vec(),
        direction: v.to_vec(),
        steps,
        samples,
        stats,
    })
}

fn path_stats(spec: &MetricSpec, samples: &[PathSample], h: f64) -> Result<PathStats> {
    let n = spec.dim();
    let eta = spec.signature().to_matrix();
    let mut ortho = 0.0_f64;
    for s in samples {
        let g = spec.eval(&s.position)?;
        let recon = s.frame.transpose() * &g * &s.frame;
        ortho = ortho.max(linalg::max_abs_diff(&recon, &eta));
    }

    // 4th-order differentiation of the stored velocity and frame against the
    // field equations, checked on a subsample of interior nodes.
    let mut geo = 0.0_f64;
    let mut transport = 0.0_f64;
    let count = samples.len();
    let stride = (count / 32).max(1);
    for idx in (2..count - 2).step_by(stride) {
        let s = &samples[idx];
        let g = spec.eval(&s.position)?;
        let g_inv = linalg::invert_metric(&g)?;
        let d1 = spec.eval_d1(&s.position)?;
        let gamma = curvature::christoffel_raw(&g_inv, &d1, n);
        for lam in 0..n {
            let dv = (8.0 * (samples[idx + 1].velocity[lam] - samples[idx - 1].velocity[lam])
                - (samples[idx + 2].velocity[lam] - samples[idx - 2].velocity[lam]))
                / (12.0 * h);
            let mut acc = dv;
            for mu in 0..n {
                for nu in 0..n {
                    acc += gamma[i3(n, lam, mu, nu)] * s.velocity[mu] * s.velocity[nu];
                }
            }
            geo = geo.max(acc.abs());
            for a in 0..n {
                let dfr = (8.0
                    * (samples[idx + 1].frame[(lam, a)] - samples[idx - 1].frame[(lam, a)])
                    - (samples[idx + 2].frame[(lam, a)] - samples[idx - 2].frame[(lam, a)]))
                    / (12.0 * h);
                let mut acc = dfr;
                for mu in 0..n {
                    for nu in 0..n {
                        acc += gamma[i3(n, lam, mu, nu)] * s.velocity[mu] * s.frame[(nu, a)];
                    }
                }
                transport = transport.max(acc.abs());
            }
        }
    }
    Ok(PathStats {
        geodesic_residual: geo,
        frame_orthonormality_residual: ortho,
        transport_residual: transport,
    })
}

/// Coefficient fields along one ray, sampled on the coarse grid.
#[derive(Clone, Debug)]
pub struct NormalExpansion {
    pub path: GeodesicPath,
    pub t_grid: Vec<f64>,
    /// A_{(A)(C)(D)}(t), flat n^3 per node.
    pub a: Vec<Vec<f64>>,
    /// B_{(A)(B)(C)(D)}(t), flat n^4 per node.
    pub b: Vec<Vec<f64>>,
    /// Richardson estimate of the integration error at t = 1.
    pub ode_error_estimate: f64,
}

struct AbTables {
    /// Source tensor R at the node.
    r: Vec<f64>,
    /// S1[ACD] = z^B R_{ABCD}
    s1: Vec<f64>,
    /// C1[A][P] = eta_PP z^L z^M R_{ALMP}
    c1: Vec<f64>,
    /// D[A][B][P] = eta_PP z^L R_{ABLP}
    d: Vec<f64>,
}

fn ab_tables(r: Vec<f64>, z: &[f64], eta: &[f64], n: usize) -> AbTables {
    let mut s1 = vec![0.0; n * n * n];
    for a in 0..n {
        for c in 0..n {
            for d in 0..n {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += z[b] * r[i4(n, a, b, c, d)];
                }
                s1[i3(n, a, c, d)] = acc;
            }
        }
    }
    let mut c1 = vec![0.0; n * n];
    for a in 0..n {
        for p in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                for m in 0..n {
                    acc += z[l] * z[m] * r[i4(n, a, l, m, p)];
                }
            }
            c1[a * n + p] = eta[p] * acc;
        }
    }
    let mut d = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for p in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += z[l] * r[i4(n, a, b, l, p)];
                }
                d[i3(n, a, b, p)] = eta[p] * acc;
            }
        }
    }
    AbTables { r, s1, c1, d }
}

/// State: [A, Adot, B, Bdot].
fn ab_rhs(t: f64, y: &[f64], tab: &AbTables, z: &[f64], n: usize) -> Vec<f64> {
    let n3 = n * n * n;
    let n4 = n3 * n;
    let (a_part, rest) = y.split_at(n3);
    let (adot, rest) = rest.split_at(n3);
    let (b_part, bdot) = rest.split_at(n4);

    let mut dy = vec![0.0; y.len()];
    dy[..n3].copy_from_slice(adot);
    dy[2 * n3 + n4..].copy_from_slice(&vec![0.0; n4]);

    // A'' = t S1 + C1 . A
    for a in 0..n {
        for c in 0..n {
            for d in 0..n {
                let mut acc = t * tab.s1[i3(n, a, c, d)];
                for p in 0..n {
                    acc += tab.c1[a * n + p] * a_part[i3(n, p, c, d)];
                }
                dy[n3 + i3(n, a, c, d)] = acc;
            }
        }
    }
    dy[2 * n3..2 * n3 + n4].copy_from_slice(bdot);

    // zB[P][C][D] = z^M B_{PMCD}
    let mut zb = vec![0.0; n3];
    for p in 0..n {
        for c in 0..n {
            for d in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    acc += z[m] * b_part[i4(n, p, m, c, d)];
                }
                zb[i3(n, p, c, d)] = acc;
            }
        }
    }
    // B'' = t R + D . zB
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for dd in 0..n {
                    let mut acc = t * tab.r[i4(n, a, b, c, dd)];
                    for p in 0..n {
                        acc += tab.d[i3(n, a, b, p)] * zb[i3(n, p, c, dd)];
                    }
                    dy[2 * n3 + n4 + i4(n, a, b, c, dd)] = acc;
                }
            }
        }
    }
    dy
}

fn integrate_ab(tables: &[AbTables], z: &[f64], n: usize, steps: usize, stride: usize) -> Vec<Vec<f64>> {
    // `stride` nodes of the half-step table per coarse RK4 step.
    let n3 = n * n * n;
    let n4 = n3 * n;
    let h = stride as f64 / (tables.len() - 1) as f64;
    let mut y = vec![0.0; 2 * n3 + 2 * n4];
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y.clone());
    for k in 0..steps {
        let t = k as f64 * h;
        let base = k * stride;
        let k1 = ab_rhs(t, &y, &tables[base], z, n);
        let k2 = ab_rhs(t + 0.5 * h, &axpy(&y, &k1, 0.5 * h), &tables[base + stride / 2], z, n);
        let k3 = ab_rhs(t + 0.5 * h, &axpy(&y, &k2, 0.5 * h), &tables[base + stride / 2], z, n);
        let k4 = ab_rhs(t + h, &axpy(&y, &k3, h), &tables[base + stride], z, n);
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        states.push(y.clone());
    }
    states
}

/// Solve the radial coefficient system along a path.
pub fn solve_ab(path: &GeodesicPath) -> Result<NormalExpansion> {
    let n = path.dim();
    let n3 = n * n * n;
    let n4 = n3 * n;
    let z = &path.direction;
    let eta: Vec<f64> = (0..n).map(|i| path.spec.signature().sign(i)).collect();

    let source = path.source_curvature()?;
    let tables: Vec<AbTables> = source
        .into_iter()
        .map(|r| ab_tables(r, z, &eta, n))
        .collect();

    let steps = path.steps;
    let states = integrate_ab(&tables, z, n, steps, 2);
    // One halving in the other direction: a 2h integration for the
    // Richardson error estimate.
    let coarse = integrate_ab(&tables, z, n, steps / 2, 4);
    let fine_end = states.last().unwrap();
    let coarse_end = coarse.last().unwrap();
    let mut err = 0.0_f64;
    for i in 0..fine_end.len() {
        err = err.max((fine_end[i] - coarse_end[i]).abs());
    }
    err /= 15.0;

    let t_grid: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let a = states.iter().map(|y| y[..n3].to_vec()).collect();
    let b = states
        .iter()
        .map(|y| y[2 * n3..2 * n3 + n4].to_vec())
        .collect();
    let expansion = NormalExpansion {
        path: path.clone(),
        t_grid,
        a,
        b,
        ode_error_estimate: err,
    };
    let drift = expansion.invariant_residuals().into_iter().fold(0.0_f64, |m, (_, v)| m.max(v));
    if drift > 1e-6 {
        return Err(GeomError::NumericalQuality {
            check: "radial coefficient invariants".into(),
            residual: drift,
            limit: 1e-6,
        });
    }
    Ok(expansion)
}

impl NormalExpansion {
    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// A at t = 1 as a tensor (frame-lower slots).
    pub fn a_final(&self) -> DenseTensor {
        let n = self.dim();
        let last = self.a.last().unwrap();
        DenseTensor::from_fn(&[n, n, n], &[SlotKind::FrameLower; 3], |idx| {
            last[i3(n, idx[0], idx[1], idx[2])]
        })
    }

    /// B at t = 1 as a tensor (frame-lower slots).
    pub fn b_final(&self) -> DenseTensor {
        let n = self.dim();
        let last = self.b.last().unwrap();
        DenseTensor::from_fn(&[n, n, n, n], &[SlotKind::FrameLower; 4], |idx| {
            last[i4(n, idx[0], idx[1], idx[2], idx[3])]
        })
    }

    /// Max residuals of the structural invariants over the whole grid:
    /// A(0) = 0, antisymmetry of A in its last two slots, the two
    /// antisymmetries and pair symmetry of B, and A = z . B.
    pub fn invariant_residuals(&self) -> Vec<(String, f64)> {
        let n = self.dim();
        let z = &self.path.direction;
        let mut a0 = 0.0_f64;
        for v in &self.a[0] {
            a0 = a0.max(v.abs());
        }
        let mut a_anti = 0.0_f64;
        let mut b_anti_ab = 0.0_f64;
        let mut b_anti_cd = 0.0_f64;
        let mut b_pair = 0.0_f64;
        let mut a_zb = 0.0_f64;
        for (a_node, b_node) in self.a.iter().zip(self.b.iter()) {
            for a in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        a_anti = a_anti
                            .max((a_node[i3(n, a, c, d)] + a_node[i3(n, a, d, c)]).abs());
                        let mut zb = 0.0;
                        for b in 0..n {
                            zb += z[b] * b_node[i4(n, a, b, c, d)];
                        }
                        a_zb = a_zb.max((a_node[i3(n, a, c, d)] - zb).abs());
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            let v = b_node[i4(n, a, b, c, d)];
                            b_anti_ab = b_anti_ab.max((v + b_node[i4(n, b, a, c, d)]).abs());
                            b_anti_cd = b_anti_cd.max((v + b_node[i4(n, a, b, d, c)]).abs());
                            b_pair = b_pair.max((v - b_node[i4(n, c, d, a, b)]).abs());
                        }
                    }
                }
            }
        }
        vec![
            ("a_initial_zero".into(), a0),
            ("a_antisymmetry".into(), a_anti),
            ("b_antisym_first_pair".into(), b_anti_ab),
            ("b_antisym_second_pair".into(), b_anti_cd),
            ("b_pair_swap".into(), b_pair),
            ("a_equals_z_dot_b".into(), a_zb),
        ]
    }

    /// Coframe matrix M^A_C = delta + A^A_{BC} z^B at t = 1.
    pub fn coframe_final(&self) -> DMatrix<f64> {
        let n = self.dim();
        let z = &self.path.direction;
        let sig = self.path.spec.signature();
        let last = self.a.last().unwrap();
        DMatrix::from_fn(n, n, |a, c| {
            let mut acc = if a == c { 1.0 } else { 0.0 };
            for b in 0..n {
                // raise the first slot with the diagonal eta
                acc += sig.sign(a) * last[i3(n, a, b, c)] * z[b];
            }
            acc
        })
    }
}

/// Reconstructed normal-coordinate metric at t = 1: g = M^T eta M.
pub fn reconstruct_metric(expansion: &NormalExpansion) -> DMatrix<f64> {
    let n = expansion.dim();
    let m = expansion.coframe_final();
    let eta = expansion.path.spec.signature().to_matrix();
    m.transpose() * eta * m
}

/// max |g(z) . z - eta . z|: radial rays are straight in normal coordinates.
pub fn gauss_radial_residual(expansion: &NormalExpansion) -> f64 {
    let n = expansion.dim();
    let g = reconstruct_metric(expansion);
    let sig = expansion.path.spec.signature();
    let z = &expansion.path.direction;
    let mut worst = 0.0_f64;
    for c in 0..n {
        let mut gz = 0.0;
        for d in 0..n {
            gz += g[(c, d)] * z[d];
        }
        worst = worst.max((gz - sig.sign(c) * z[c]).abs());
    }
    worst
}

/// Normal-coordinate metric at `z` by shooting geodesics and central-
/// differencing the endpoint map; the independent oracle for
/// [`reconstruct_metric`].
pub fn exp_map_pullback(
    spec: &MetricSpec,
    origin: &[f64],
    z_grid: &[Vec<f64>],
    steps: usize,
    conjugate_radius: Option<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let n = spec.dim();
    let sig = spec.signature();
    let mut out = Vec::with_capacity(z_grid.len());
    for z in z_grid {
        if let Some(rc) = conjugate_radius {
            let scale = sig.inner(z, z).abs().sqrt();
            if scale >= rc {
                return Err(GeomError::BeyondConjugate {
                    requested: scale,
                    conjugate: rc,
                });
            }
        }
        let h = 1e-4 * z.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let center = shoot(spec, origin, z, steps)?;
        let g_end = spec.eval(&center)?;
        let mut jac = DMatrix::zeros(n, n);
        for a in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[a] += h;
            zm[a] -= h;
            let up = shoot(spec, origin, &zp, steps)?;
            let um = shoot(spec, origin, &zm, steps)?;
            for lam in 0..n {
                jac[(lam, a)] = (up[lam] - um[lam]) / (2.0 * h);
            }
        }
        out.push(jac.transpose() * g_end * jac);
    }
    Ok(out)
}

/// Endpoint of the geodesic with initial frame velocity `z` (positions only).
fn shoot(spec: &MetricSpec, origin: &[f64], z: &[f64], steps: usize) -> Result<Vec<f64>> {
    let n = spec.dim();
    let frame0 = spec.vielbein_at(origin)?;
    let v_coord = frame0.to_coordinates(z);
    let h = 1.0 / steps as f64;
    let mut y = vec![0.0; 2 * n];
    y[..n].copy_from_slice(origin);
    y[n..].copy_from_slice(&v_coord);
    let rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let u = &y[..n];
        let v = &y[n..];
        let g = spec.eval(u)?;
        let g_inv = linalg::invert_metric(&g)?;
        let d1 = spec.eval_d1(u)?;
        let gamma = curvature::christoffel_raw(&g_inv, &d1, n);
        let mut dy = vec![0.0; 2 * n];
        dy[..n].copy_from_slice(v);
        for lam in 0..n {
            let mut acc = 0.0;
            for mu in 0..n {
                for nu in 0..n {
                    acc -= gamma[i3(n, lam, mu, nu)] * v[mu] * v[nu];
                }
            }
            dy[n + lam] = acc;
        }
        Ok(dy)
    };
    let wrap = |t: f64, e: GeomError| match e {
        GeomError::OutsideDomain { .. } | GeomError::SingularMetric { .. } => GeomError::ChartExit {
            t,
            inner: Box::new(e),
        },
        other => other,
    };
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = rhs(&y).map_err(|e| wrap(t, e))?;
        let k2 = rhs(&axpy(&y, &k1, 0.5 * h)).map_err(|e| wrap(t + 0.5 * h, e))?;
        let k3 = rhs(&axpy(&y, &k2, 0.5 * h)).map_err(|e| wrap(t + 0.5 * h, e))?;
        let k4 = rhs(&axpy(&y, &k3, h)).map_err(|e| wrap(t + h, e))?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        spec.check_point(&y[..n]).map_err(|e| wrap((k + 1) as f64 * h, e))?;
    }
    Ok(y[..n].to_vec())
}

/// Second-order model of the normal-coordinate metric from the curvature at
/// the origin: g_AB(z) = eta_AB + (1/3) R_{ACBD} z^C z^D with the frame
/// tensor in this crate's orientation.
pub fn taylor_metric_estimate(spec: &MetricSpec, origin: &[f64], z: &[f64]) -> Result<DMatrix<f64>> {
    let n = spec.dim();
    let bundle = curvature::riemann(spec, origin)?;
    let sig = spec.signature();
    let mut g = sig.to_matrix();
    for a in 0..n {
        for b in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                for d in 0..n {
                    acc += bundle.riemann_frame.get(&[a, c, b, d]) * z[c] * z[d];
                }
            }
            g[(a, b)] += acc / 3.0;
        }
    }
    Ok(g)
}

/// L^{AB} = z^B v^A - z^A v^B, antisymmetric by construction.
pub fn classical_angular_momentum(z: &[f64], dz_ds: &[f64]) -> DMatrix<f64> {
    let n = z.len();
    DMatrix::from_fn(n, n, |a, b| z[b] * dz_ds[a] - z[a] * dz_ds[b])
}

/// Direction-dependent conformal factor at the expansion's endpoint.
#[derive(Clone, Debug)]
pub struct ConformalFactor {
    pub z: Vec<f64>,
    pub velocity: Vec<f64>,
    pub sigma: f64,
    /// Classical angular momentum of the unit-speed velocity.
    pub l_classical: DMatrix<f64>,
    /// The bracket whose logarithm gives sigma; must stay positive.
    pub bracket: f64,
    /// |exp(2 sigma) eta(dz,dz) - g_rec(dz,dz)| / |g_rec(dz,dz)|.
    pub line_element_residual: f64,
}

/// Compute sigma for a velocity through the chart point `z`.
///
/// `z` must be the expansion's own direction; the velocity is normalized to
/// unit magnitude against the reconstructed metric before forming L.
pub fn conformal_factor(
    expansion: &NormalExpansion,
    z: &[f64],
    dz_ds: &[f64],
) -> Result<ConformalFactor> {
    let n = expansion.dim();
    if z != expansion.path.direction.as_slice() {
        return Err(GeomError::Config(
            "conformal factor is defined at the expansion's own chart point".into(),
        ));
    }
    let g_rec = reconstruct_metric(expansion);
    let mut q = 0.0;
    for a in 0..n {
        for b in 0..n {
            q += g_rec[(a, b)] * dz_ds[a] * dz_ds[b];
        }
    }
    if q.abs() < 1e-14 {
        return Err(GeomError::NullDirection { norm: q.abs() });
    }
    let scale = q.abs().sqrt();
    let sign_g = q.signum();
    let zdot: Vec<f64> = dz_ds.iter().map(|v| v / scale).collect();

    let l = classical_angular_momentum(z, &zdot);
    let sig = expansion.path.spec.signature();
    let a_last = expansion.a.last().unwrap();
    let b_last = expansion.b.last().unwrap();

    let mut b_term = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    b_term += b_last[i4(n, a, b, c, d)] * l[(a, b)] * l[(c, d)];
                }
            }
        }
    }
    // X_M = A_{MAB} L^{AB}
    let mut x = vec![0.0; n];
    for m in 0..n {
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                acc += a_last[i3(n, m, a, b)] * l[(a, b)];
            }
        }
        x[m] = acc;
    }
    let mut x_sq = 0.0;
    for m in 0..n {
        x_sq += sig.sign(m) * x[m] * x[m];
    }

    let bracket = 1.0 + sign_g * (0.5 * b_term - 0.25 * x_sq);
    if bracket <= 0.0 {
        return Err(GeomError::NonPositiveBracket { bracket });
    }
    let sigma = -0.5 * bracket.ln();

    // exp(2 sigma) eta(dz, dz) against g_rec(dz, dz) on the given velocity.
    let mut eta_q = 0.0;
    for a in 0..n {
        eta_q += sig.sign(a) * dz_ds[a] * dz_ds[a];
    }
    let residual = ((2.0 * sigma).exp() * eta_q - q).abs() / q.abs().max(1e-300);

    Ok(ConformalFactor {
        z: z.to_vec(),
        velocity: dz_ds.to_vec(),
        sigma,
        l_classical: l,
        bracket,
        line_element_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric;
    use crate::tensor::Signature;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sphere_path(r: f64, z: &[f64], steps: usize) -> GeodesicPath {
        let spec = metric::sphere(2, r).unwrap();
        let origin = [FRAC_PI_2, 0.0];
        integrate_radial_geodesic(&spec, &origin, z, steps).unwrap()
    }

    #[test]
    fn flat_rays_are_straight_with_constant_frame() {
        let spec = metric::flat(Signature::parse("-+++").unwrap());
        let origin = [0.0, 0.0, 0.0, 0.0];
        let z = [0.3, 0.5, -0.2, 0.7];
        let path = integrate_radial_geodesic(&spec, &origin, &z, 64).unwrap();
        let end = path.endpoint();
        for i in 0..4 {
            assert_relative_eq!(end.position[i], z[i], epsilon = 1e-12);
            assert_relative_eq!(end.velocity[i], z[i], epsilon = 1e-12);
        }
        assert!(path.stats.geodesic_residual < 1e-12);
        assert!(path.stats.transport_residual < 1e-12);

        let exp = solve_ab(&path).unwrap();
        assert_eq!(exp.a_final().max_abs(), 0.0);
        assert_eq!(exp.b_final().max_abs(), 0.0);
        let g = reconstruct_metric(&exp);
        let eta = spec.signature().to_matrix();
        assert!(linalg::max_abs_diff(&g, &eta) < 1e-14);
    }

    #[test]
    fn equator_ray_covers_the_requested_arc() {
        // phi direction from the equator: the ray stays on the equator and
        // runs an arc of length |z|.
        let path = sphere_path(1.0, &[0.0, FRAC_PI_2], 256);
        let end = path.endpoint();
        assert_relative_eq!(end.position[0], FRAC_PI_2, epsilon = 1e-10);
        assert_relative_eq!(end.position[1], FRAC_PI_2, epsilon = 1e-10);
        // theta direction, margin-guarded away from the pole
        let path = sphere_path(1.0, &[0.99 * FRAC_PI_2, 0.0], 256);
        let end = path.endpoint();
        assert_relative_eq!(
            end.position[0],
            FRAC_PI_2 + 0.99 * FRAC_PI_2,
            epsilon = 1e-10
        );
    }

    #[test]
    fn path_invariants_hold_on_curved_presets() {
        let cases: Vec<(MetricSpec, Vec<f64>, Vec<f64>)> = vec![
            (
                metric::sphere(2, 1.0).unwrap(),
                vec![FRAC_PI_2, 0.0],
                vec![0.4, 0.7],
            ),
            (
                metric::hyperbolic(2, 1.0).unwrap(),
                vec![1.0, 0.0],
                vec![0.5, 0.6],
            ),
            (
                metric::schwarzschild(1.0, 0.05).unwrap(),
                vec![0.0, 10.0, FRAC_PI_2, 0.0],
                vec![0.3, 0.4, 0.2, 0.5],
            ),
        ];
        for (spec, origin, z) in cases {
            let path = integrate_radial_geodesic(&spec, &origin, &z, 512).unwrap();
            assert!(
                path.stats.geodesic_residual < 1e-8,
                "{}: geodesic residual {}",
                spec.name(),
                path.stats.geodesic_residual
            );
            assert!(
                path.stats.frame_orthonormality_residual < 1e-8,
                "{}: frame residual {}",
                spec.name(),
                path.stats.frame_orthonormality_residual
            );
            assert!(
                path.stats.transport_residual < 1e-8,
                "{}: transport residual {}",
                spec.name(),
                path.stats.transport_residual
            );
        }
    }

    #[test]
    fn chart_exit_is_reported() {
        let spec = metric::schwarzschild(1.0, 0.05).unwrap();
        // aim hard at the horizon
        let origin = [0.0, 3.0, FRAC_PI_2, 0.0];
        let err = integrate_radial_geodesic(&spec, &origin, &[0.0, -5.0, 0.0, 0.0], 128)
            .unwrap_err();
        assert!(matches!(err, GeomError::ChartExit { .. }), "{:?}", err);
    }

    #[test]
    fn refined_integration_matches_richardson_extrapolation() {
        // Small radial shot in a strongly curved chart against a 10x-refined
        // run; the fixed-step integrator has to sit on the extrapolated value.
        let spec = metric::schwarzschild(1.0, 0.05).unwrap();
        let origin = [0.0, 10.0, FRAC_PI_2, 0.0];
        let z = [0.0, 0.2, 0.0, 0.0];
        let coarse = integrate_radial_geodesic(&spec, &origin, &z, 256).unwrap();
        let fine = integrate_radial_geodesic(&spec, &origin, &z, 2560).unwrap();
        let mut dev = 0.0_f64;
        for i in 0..4 {
            dev = dev.max((coarse.endpoint().position[i] - fine.endpoint().position[i]).abs());
        }
        assert!(dev < 1e-8, "endpoint deviation {}", dev);
    }

    #[test]
    fn ab_series_solution_at_small_time() {
        // With a constant source R, B(t) = (t^3/6) R + O(higher): at t = 0.1
        // the value and first derivative follow the series (t^3/6 and t^2/2).
        let path = sphere_path(1.0, &[0.0, 0.3], DEFAULT_STEPS);
        let exp = solve_ab(&path).unwrap();
        let k_idx = (0.1 * DEFAULT_STEPS as f64).round() as usize;
        let t = exp.t_grid[k_idx];
        let n = 2;
        // source orientation: R_{0101} = +K = +1 on the unit sphere
        let b_0101 = exp.b[k_idx][i4(n, 0, 1, 0, 1)];
        assert_relative_eq!(b_0101, t.powi(3) / 6.0, epsilon = 1e-6);
        // derivative via the grid (4th order)
        let h = exp.t_grid[1] - exp.t_grid[0];
        let dbdt = (8.0
            * (exp.b[k_idx + 1][i4(n, 0, 1, 0, 1)] - exp.b[k_idx - 1][i4(n, 0, 1, 0, 1)])
            - (exp.b[k_idx + 2][i4(n, 0, 1, 0, 1)] - exp.b[k_idx - 2][i4(n, 0, 1, 0, 1)]))
            / (12.0 * h);
        assert_relative_eq!(dbdt, t.powi(2) / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn expansion_invariants_on_curved_presets() {
        let cases: Vec<(MetricSpec, Vec<f64>, Vec<f64>)> = vec![
            (
                metric::sphere(2, 1.0).unwrap(),
                vec![FRAC_PI_2, 0.0],
                vec![0.4, 0.7],
            ),
            (
                metric::hyperbolic(2, 1.0).unwrap(),
                vec![1.0, 0.0],
                vec![0.5, -0.3],
            ),
            (
                metric::schwarzschild(1.0, 0.05).unwrap(),
                vec![0.0, 10.0, FRAC_PI_2, 0.0],
                vec![0.2, 0.25, 0.15, 0.3],
            ),
        ];
        for (spec, origin, z) in cases {
            let path = integrate_radial_geodesic(&spec, &origin, &z, 512).unwrap();
            let exp = solve_ab(&path).unwrap();
            for (name, residual) in exp.invariant_residuals() {
                assert!(
                    residual < 1e-8,
                    "{} {}: residual {}",
                    spec.name(),
                    name,
                    residual
                );
            }
        }
    }

    #[test]
    fn sphere_reconstruction_matches_closed_form() {
        // Unit sphere: radial part 1, tangential part (sin r / r)^2.
        let r = 0.3;
        let path = sphere_path(1.0, &[0.0, r], DEFAULT_STEPS);
        let exp = solve_ab(&path).unwrap();
        let g = reconstruct_metric(&exp);
        let tangential = (r.sin() / r).powi(2);
        // z along slot 1; slot 0 is transverse
        assert_relative_eq!(g[(1, 1)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(g[(0, 0)], tangential, epsilon = 1e-9);
        assert!(g[(0, 1)].abs() < 1e-10);
        assert!(gauss_radial_residual(&exp) < 1e-10);
    }

    #[test]
    fn reconstruction_agrees_with_pullback_oracle() {
        let spec = metric::sphere(2, 1.0).unwrap();
        let origin = vec![FRAC_PI_2, 0.0];
        let z = vec![0.3, 0.0];
        let path = integrate_radial_geodesic(&spec, &origin, &z, 512).unwrap();
        let exp = solve_ab(&path).unwrap();
        let g_rec = reconstruct_metric(&exp);
        let g_orc = exp_map_pullback(&spec, &origin, &[z], 512, Some(PI)).unwrap();
        assert!(
            linalg::max_abs_diff(&g_rec, &g_orc[0]) < 1e-5,
            "deviation {}",
            linalg::max_abs_diff(&g_rec, &g_orc[0])
        );
    }

    #[test]
    fn pullback_taylor_behavior_on_sphere() {
        let spec = metric::sphere(2, 1.0).unwrap();
        let origin = vec![FRAC_PI_2, 0.0];
        let z = vec![0.2, 0.0];
        let g = exp_map_pullback(&spec, &origin, &[z.clone()], 512, None).unwrap();
        // transverse component shrinks by about K |z|^2 / 3
        let dev = g[0][(1, 1)] - 1.0;
        let model = -z[0] * z[0] / 3.0;
        assert!(
            (dev - model).abs() < 0.05 * model.abs(),
            "dev {} vs model {}",
            dev,
            model
        );
        let taylor = taylor_metric_estimate(&spec, &origin, &z).unwrap();
        assert!((taylor[(1, 1)] - 1.0 - model).abs() < 1e-12);
    }

    #[test]
    fn stereographic_and_polar_charts_give_the_same_normal_metric() {
        // Two presets of the same geometry must reconstruct identical
        // normal-coordinate metrics.
        let polar = metric::sphere(2, 1.0).unwrap();
        let stereo = metric::constant_curvature(2, 1.0, None).unwrap();
        let z = vec![0.25, 0.1];
        let p1 = integrate_radial_geodesic(&polar, &[FRAC_PI_2, 0.0], &z, 512).unwrap();
        let p2 = integrate_radial_geodesic(&stereo, &[0.0, 0.0], &z, 512).unwrap();
        let g1 = reconstruct_metric(&solve_ab(&p1).unwrap());
        let g2 = reconstruct_metric(&solve_ab(&p2).unwrap());
        assert!(
            linalg::max_abs_diff(&g1, &g2) < 1e-5,
            "chart disagreement {}",
            linalg::max_abs_diff(&g1, &g2)
        );
    }

    #[test]
    fn angular_momentum_basics() {
        let l = classical_angular_momentum(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(l[(0, 1)], -1.0);
        assert_eq!(l[(1, 0)], 1.0);
        // radial motion: zero
        let l = classical_angular_momentum(&[0.7, 0.2], &[1.4, 0.4]);
        assert!(linalg::max_abs(&l) < 1e-15);
        // bilinear scaling
        let l1 = classical_angular_momentum(&[0.3, 0.4], &[0.1, -0.2]);
        let l2 = classical_angular_momentum(&[0.6, 0.8], &[0.1, -0.2]);
        assert!(linalg::max_abs_diff(&l2, &l1.scale(2.0)) < 1e-15);
    }

    #[test]
    fn sigma_vanishes_for_flat_and_radial() {
        let spec = metric::flat(Signature::euclidean(3));
        let z = vec![0.4, 0.1, -0.2];
        let path = integrate_radial_geodesic(&spec, &[0.0, 0.0, 0.0], &z, 64).unwrap();
        let exp = solve_ab(&path).unwrap();
        let cf = conformal_factor(&exp, &z, &[0.0, 1.0, 0.0]).unwrap();
        assert!(cf.sigma.abs() < 1e-12);

        let path = sphere_path(1.0, &[0.0, 0.3], 512);
        let exp = solve_ab(&path).unwrap();
        // radial velocity: parallel to z
        let cf = conformal_factor(&exp, &[0.0, 0.3], &[0.0, 2.0]).unwrap();
        assert!(cf.sigma.abs() < 1e-12, "radial sigma {}", cf.sigma);
    }

    #[test]
    fn sphere_sigma_matches_line_element_ratio() {
        // exp(-2 sigma) = (r / sin r)^2 for tangential motion on the unit
        // sphere at radius r.
        let r = 0.3;
        let path = sphere_path(1.0, &[0.0, r], DEFAULT_STEPS);
        let exp = solve_ab(&path).unwrap();
        let cf = conformal_factor(&exp, &[0.0, r], &[1.0, 0.0]).unwrap();
        let expect = (r / r.sin()).powi(2);
        assert_relative_eq!((-2.0 * cf.sigma).exp(), expect, epsilon = 1e-8);
        assert!(cf.line_element_residual < 1e-8);

        // against the pullback oracle: ratio of line elements
        let spec = metric::sphere(2, 1.0).unwrap();
        let g_orc =
            exp_map_pullback(&spec, &[FRAC_PI_2, 0.0], &[vec![0.0, r]], 512, None).unwrap();
        let q_orc = g_orc[0][(0, 0)];
        let eta_q = 1.0;
        let ratio = eta_q / q_orc;
        assert!(
            ((-2.0 * cf.sigma).exp() - ratio).abs() < 1e-4,
            "sigma ratio {} vs oracle {}",
            (-2.0 * cf.sigma).exp(),
            ratio
        );
    }

    #[test]
    fn sigma_scales_quadratically_in_radius() {
        // L is O(|z|) and B is O(1) at t = 1, so sigma = O(|z|^2): log-log
        // slope 2 over two decades.
        let mut points = Vec::new();
        for k in 0..5 {
            let r = 0.01 * 10.0_f64.powf(k as f64 / 2.0); // 0.01 .. 1.0
            let path = sphere_path(1.0, &[0.0, r], 512);
            let exp = solve_ab(&path).unwrap();
            let cf = conformal_factor(&exp, &[0.0, r], &[1.0, 0.0]).unwrap();
            points.push((r.ln(), cf.sigma.abs().ln()));
        }
        let m = points.len() as f64;
        let sx: f64 = points.iter().map(|(x, _)| x).sum();
        let sy: f64 = points.iter().map(|(_, y)| y).sum();
        let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
        let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        assert!((slope - 2.0).abs() < 0.2, "log-log slope {}", slope);
    }

    #[test]
    fn bracket_failure_is_a_chart_validity_error() {
        // Push far beyond the conjugate point, where the tangential metric
        // degenerates and the bracket blows past zero.
        let r = 0.98 * PI;
        let path = sphere_path(1.0, &[0.0, r], 512);
        let exp = solve_ab(&path).unwrap();
        let err = conformal_factor(&exp, &[0.0, r], &[1.0, 0.0]);
        // near the conjugate point exp(-2 sigma) is huge but finite; the
        // bracket is fine. Past it the reconstructed tangential component
        // goes negative, flipping the g-norm sign. Either outcome must not
        // panic; a non-positive bracket reports as chart validity.
        match err {
            Ok(cf) => assert!(cf.bracket > 0.0),
            Err(GeomError::NonPositiveBracket { .. }) => {}
            Err(other) => panic!("unexpected error {:?}", other),
        }
    }
}
