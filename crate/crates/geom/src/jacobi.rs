//! Geodesic deviation: Jacobi fields, conjugate points, and the validity
//! radius of the normal chart.
//!
//! Along a unit-speed geodesic the transverse deviation components satisfy
//! `c_j'' + eps_j M_{ji}(s) c_i = 0` in the parallel-transported frame,
//! where `M_{ji} = R(w_j, u', w_i, u')` is the tidal matrix in the
//! orientation that makes a sphere's M positive (oscillator) and hyperbolic
//! space's negative (inverted oscillator, monotone growth, no conjugate
//! points). The fundamental matrix with J(0) = 0, J'(0) = I vanishes in
//! determinant exactly at conjugate points.

use crate::error::{GeomError, Result};
use crate::metric::MetricSpec;
use crate::normal::{integrate_radial_geodesic, GeodesicPath};
use crate::tensor::Signature;
use nalgebra::DMatrix;

/// Directions with |eta(v, v)| below this cannot be arclength-normalized.
const NULL_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct JacobiField {
    pub path: GeodesicPath,
    pub s_max: f64,
    /// eta-orthonormal transverse frame vectors (n-1 of them).
    pub transverse: Vec<Vec<f64>>,
    /// eta(w_i, w_i) for each transverse vector.
    pub eps: Vec<f64>,
    /// Coarse arclength grid.
    pub s_grid: Vec<f64>,
    /// Fundamental matrix at each coarse node.
    pub fundamental: Vec<DMatrix<f64>>,
    /// d(fundamental)/ds at each coarse node.
    pub fundamental_deriv: Vec<DMatrix<f64>>,
    /// Tidal matrix at every half-step node (2 * steps + 1 of them).
    tidal: Vec<DMatrix<f64>>,
    /// max |J'' + eps M J| over interior nodes.
    pub equation_residual: f64,
}

/// Build an eta-orthonormal basis of the subspace eta-orthogonal to `unit`.
fn transverse_basis(sig: &Signature, unit: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = sig.dim();
    let mut basis: Vec<Vec<f64>> = vec![unit.to_vec()];
    let mut eps = vec![sig.inner(unit, unit)];
    for axis in 0..n {
        if basis.len() == n {
            break;
        }
        let mut w = vec![0.0; n];
        w[axis] = 1.0;
        for (u, e) in basis.iter().zip(eps.iter()) {
            let c = sig.inner(&w, u) / e;
            for i in 0..n {
                w[i] -= c * u[i];
            }
        }
        let norm = sig.inner(&w, &w);
        if norm.abs() < 1e-8 {
            continue;
        }
        let s = norm.abs().sqrt();
        for x in &mut w {
            *x /= s;
        }
        eps.push(sig.inner(&w, &w));
        basis.push(w);
    }
    if basis.len() != n {
        return Err(GeomError::Config(
            "failed to complete a transverse frame basis".into(),
        ));
    }
    Ok((basis[1..].to_vec(), eps[1..].to_vec()))
}

/// Integrate the fundamental deviation matrix along a path whose direction
/// has been scaled so that t = 1 corresponds to arclength `s_max`.
pub fn integrate_jacobi(path: &GeodesicPath) -> Result<JacobiField> {
    let n = path.dim();
    let sig = path.spec.signature().clone();
    let s_max = path.arc_scale();
    if s_max < NULL_THRESHOLD {
        return Err(GeomError::NullDirection {
            norm: sig.inner(&path.direction, &path.direction).abs(),
        });
    }
    let unit: Vec<f64> = path.direction.iter().map(|v| v / s_max).collect();
    let (transverse, eps) = transverse_basis(&sig, &unit)?;
    let m = n - 1;

    // Tidal matrices at every half-step node.
    let source = path.source_curvature()?;
    let mut tidal = Vec::with_capacity(source.len());
    for r in &source {
        let mut mat = DMatrix::zeros(m, m);
        for (j, wj) in transverse.iter().enumerate() {
            for (i, wi) in transverse.iter().enumerate() {
                let mut acc = 0.0;
                for a in 0..n {
                    for c in 0..n {
                        for b in 0..n {
                            for d in 0..n {
                                acc += r[crate::curvature::i4(n, a, c, b, d)]
                                    * wj[a]
                                    * unit[c]
                                    * wi[b]
                                    * unit[d];
                            }
                        }
                    }
                }
                mat[(j, i)] = acc;
            }
        }
        tidal.push(mat);
    }

    let steps = path.steps;
    let (fundamental, fundamental_deriv) = integrate_phi(&tidal, &eps, s_max, steps, 2);

    let s_grid: Vec<f64> = (0..=steps)
        .map(|k| s_max * k as f64 / steps as f64)
        .collect();

    // Residual of the deviation equation on interior coarse nodes.
    let h = s_grid[1] - s_grid[0];
    let mut residual = 0.0_f64;
    let stride = (steps / 32).max(1);
    for k in (2..steps.saturating_sub(1)).step_by(stride) {
        let m_k = &tidal[2 * k];
        for col in 0..m {
            for row in 0..m {
                let dd = (-fundamental[k + 2][(row, col)] + 16.0 * fundamental[k + 1][(row, col)]
                    - 30.0 * fundamental[k][(row, col)]
                    + 16.0 * fundamental[k - 1][(row, col)]
                    - fundamental[k - 2][(row, col)])
                    / (12.0 * h * h);
                let mut acc = dd;
                for i in 0..m {
                    acc += eps[row] * m_k[(row, i)] * fundamental[k][(i, col)];
                }
                residual = residual.max(acc.abs());
            }
        }
    }

    Ok(JacobiField {
        path: path.clone(),
        s_max,
        transverse,
        eps,
        s_grid,
        fundamental,
        fundamental_deriv,
        tidal,
        equation_residual: residual,
    })
}

/// RK4 for (Phi, Phi') over t in [0, 1] with d2Phi/dt2 = -s^2 eps M Phi.
/// `stride` half-step tidal nodes per coarse step.
fn integrate_phi(
    tidal: &[DMatrix<f64>],
    eps: &[f64],
    s_max: f64,
    steps: usize,
    stride: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let m = eps.len();
    let h = 1.0 / steps as f64;
    let mut phi = DMatrix::zeros(m, m);
    let mut dphi = DMatrix::from_diagonal_element(m, m, s_max); // dPhi/dt at 0
    let acc = |mat: &DMatrix<f64>, p: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, m);
        for col in 0..m {
            for row in 0..m {
                let mut a = 0.0;
                for i in 0..m {
                    a -= eps[row] * mat[(row, i)] * p[(i, col)];
                }
                out[(row, col)] = s_max * s_max * a;
            }
        }
        out
    };
    let mut phis = Vec::with_capacity(steps + 1);
    let mut dphis = Vec::with_capacity(steps + 1);
    phis.push(phi.clone());
    dphis.push(&dphi / s_max);
    for k in 0..steps {
        let m0 = &tidal[k * stride];
        let m1 = &tidal[k * stride + stride / 2];
        let m2 = &tidal[(k + 1) * stride];
        let (p1, q1) = (dphi.clone(), acc(m0, &phi));
        let (p2, q2) = (&dphi + &q1 * (0.5 * h), acc(m1, &(&phi + &p1 * (0.5 * h))));
        let (p3, q3) = (&dphi + &q2 * (0.5 * h), acc(m1, &(&phi + &p2 * (0.5 * h))));
        let (p4, q4) = (&dphi + &q3 * h, acc(m2, &(&phi + &p3 * h)));
        phi += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
        dphi += (q1 + q2 * 2.0 + q3 * 2.0 + q4) * (h / 6.0);
        phis.push(phi.clone());
        dphis.push(&dphi / s_max);
    }
    (phis, dphis)
}

/// Quadratic interpolation of the tidal matrix at parameter t in [0, 1].
fn tidal_at(tidal: &[DMatrix<f64>], t: f64) -> DMatrix<f64> {
    let fine = tidal.len() - 1;
    let x = (t.clamp(0.0, 1.0)) * fine as f64;
    let k = (x.round() as usize).clamp(1, fine - 1);
    let d = x - k as f64;
    let (a, b, c) = (&tidal[k - 1], &tidal[k], &tidal[k + 1]);
    // Second-order Lagrange stencil around node k.
    b + (c - a) * (0.5 * d) + (a - b * 2.0 + c) * (0.5 * d * d)
}

impl JacobiField {
    pub fn dets(&self) -> Vec<f64> {
        self.fundamental.iter().map(|p| p.clone().determinant()).collect()
    }

    /// Fundamental matrix at an arbitrary arclength by local RK4
    /// re-integration from the nearest stored node below.
    pub fn fundamental_at(&self, s: f64) -> DMatrix<f64> {
        let t_target = (s / self.s_max).clamp(0.0, 1.0);
        let steps = self.s_grid.len() - 1;
        let k = ((t_target * steps as f64).floor() as usize).min(steps - 1);
        let t0 = k as f64 / steps as f64;
        let mut phi = self.fundamental[k].clone();
        let mut dphi = &self.fundamental_deriv[k] * self.s_max;
        let m = self.eps.len();
        let sub = 16usize;
        let h = (t_target - t0) / sub as f64;
        if h.abs() < 1e-300 {
            return phi;
        }
        let acc = |t: f64, p: &DMatrix<f64>| -> DMatrix<f64> {
            let mat = tidal_at(&self.tidal, t);
            let mut out = DMatrix::zeros(m, m);
            for col in 0..m {
                for row in 0..m {
                    let mut a = 0.0;
                    for i in 0..m {
                        a -= self.eps[row] * mat[(row, i)] * p[(i, col)];
                    }
                    out[(row, col)] = self.s_max * self.s_max * a;
                }
            }
            out
        };
        for j in 0..sub {
            let t = t0 + j as f64 * h;
            let (p1, q1) = (dphi.clone(), acc(t, &phi));
            let (p2, q2) = (
                &dphi + &q1 * (0.5 * h),
                acc(t + 0.5 * h, &(&phi + &p1 * (0.5 * h))),
            );
            let (p3, q3) = (
                &dphi + &q2 * (0.5 * h),
                acc(t + 0.5 * h, &(&phi + &p2 * (0.5 * h))),
            );
            let (p4, q4) = (&dphi + &q3 * h, acc(t + h, &(&phi + &p3 * h)));
            phi += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
            dphi += (q1 + q2 * 2.0 + q3 * 2.0 + q4) * (h / 6.0);
        }
        phi
    }

    pub fn det_at(&self, s: f64) -> f64 {
        self.fundamental_at(s).determinant()
    }
}

#[derive(Clone, Debug)]
pub struct ConjugateReport {
    pub direction: Vec<f64>,
    pub s_conjugate: Option<f64>,
    pub det_at_conjugate: Option<f64>,
    pub bisection_iterations: usize,
    /// The detector refined the scan grid after a near-grazing minimum.
    pub grid_refined: bool,
    pub s_max: f64,
}

/// Locate the first determinant zero of the fundamental matrix.
///
/// The coarse grid is scanned for a sign change, refined once (x4) if the
/// determinant dips below 1e-4 without changing sign, and the bracket is
/// bisected until the interval is below 1e-6 and the midpoint determinant
/// below 1e-8.
pub fn find_conjugate_point(field: &JacobiField, s_max: f64) -> ConjugateReport {
    let limit = s_max.min(field.s_max);
    let dets = field.dets();
    let scan = |dets: &[f64], grid: &[f64]| -> Option<(f64, f64)> {
        for k in 1..dets.len() - 1 {
            if grid[k + 1] > limit + 1e-12 {
                break;
            }
            if dets[k] > 0.0 && dets[k + 1] <= 0.0 {
                return Some((grid[k], grid[k + 1]));
            }
        }
        None
    };

    let mut refined = false;
    let mut bracket = scan(&dets, &field.s_grid);
    if bracket.is_none() {
        let interior_min = dets
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(k, _)| field.s_grid[*k] <= limit)
            .fold(f64::INFINITY, |m, (_, v)| m.min(v.abs()));
        if interior_min < 1e-4 {
            // Guard against grazing zeros: rescan on a 4x finer grid.
            refined = true;
            let steps = (field.s_grid.len() - 1) * 4;
            let fine_grid: Vec<f64> = (0..=steps)
                .map(|k| field.s_max * k as f64 / steps as f64)
                .collect();
            let fine_dets: Vec<f64> = fine_grid.iter().map(|&s| field.det_at(s)).collect();
            bracket = scan(&fine_dets, &fine_grid);
        }
    }

    let Some((mut lo, mut hi)) = bracket else {
        return ConjugateReport {
            direction: field.path.direction.clone(),
            s_conjugate: None,
            det_at_conjugate: None,
            bisection_iterations: 0,
            grid_refined: refined,
            s_max: limit,
        };
    };

    let mut iterations = 0;
    let mut mid = 0.5 * (lo + hi);
    let mut det_mid = field.det_at(mid);
    while iterations < 200 {
        if hi - lo < 1e-6 && det_mid.abs() < 1e-8 {
            break;
        }
        if hi - lo < 1e-14 {
            break;
        }
        if det_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        det_mid = field.det_at(mid);
        iterations += 1;
    }
    ConjugateReport {
        direction: field.path.direction.clone(),
        s_conjugate: Some(mid),
        det_at_conjugate: Some(det_mid),
        bisection_iterations: iterations,
        grid_refined: refined,
        s_max: limit,
    }
}

/// Why a direction sweep entry ended.
#[derive(Clone, Debug)]
pub enum DirectionResult {
    Conjugate { s: f64, det: f64, iterations: usize },
    NoneWithin { s_max: f64 },
    ChartExit { s: f64 },
    NullDirection,
}

#[derive(Clone, Debug)]
pub struct DirectionOutcome {
    pub index: usize,
    pub direction: Vec<f64>,
    pub result: DirectionResult,
}

#[derive(Clone, Debug)]
pub struct ChartRadiusReport {
    pub outcomes: Vec<DirectionOutcome>,
    /// (direction index, arclength) of the smallest conjugate distance.
    pub min_conjugate: Option<(usize, f64)>,
    pub s_max: f64,
}

/// Parallelism cap: GEOM_THREADS if set, else available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("GEOM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1)
        })
}

fn probe_direction(
    spec: &MetricSpec,
    origin: &[f64],
    dir: &[f64],
    s_max: f64,
    steps: usize,
) -> Result<DirectionResult> {
    let sig = spec.signature();
    let norm = sig.inner(dir, dir).abs();
    if norm < NULL_THRESHOLD {
        return Ok(DirectionResult::NullDirection);
    }
    let scale = s_max / norm.sqrt();
    let v: Vec<f64> = dir.iter().map(|x| x * scale).collect();
    let path = match integrate_radial_geodesic(spec, origin, &v, steps) {
        Ok(p) => p,
        Err(GeomError::ChartExit { t, .. }) => {
            return Ok(DirectionResult::ChartExit { s: t * s_max })
        }
        Err(e) => return Err(e),
    };
    let field = integrate_jacobi(&path)?;
    let report = find_conjugate_point(&field, s_max);
    Ok(match report.s_conjugate {
        Some(s) => DirectionResult::Conjugate {
            s,
            det: report.det_at_conjugate.unwrap_or(0.0),
            iterations: report.bisection_iterations,
        },
        None => DirectionResult::NoneWithin { s_max },
    })
}

/// Sweep deterministic low-discrepancy frame directions and report the
/// smallest conjugate distance. Directions that leave the chart or are
/// eta-null are reported as such rather than failing the sweep.
pub fn normal_chart_radius(
    spec: &MetricSpec,
    origin: &[f64],
    n_dirs: usize,
    s_max: f64,
    steps: usize,
) -> Result<ChartRadiusReport> {
    if n_dirs == 0 {
        return Err(GeomError::Config("need at least one direction".into()));
    }
    let dirs = crate::rng::unit_directions(spec.dim(), n_dirs);
    let cap = thread_cap().max(1);
    let mut outcomes: Vec<Option<DirectionOutcome>> = vec![None; n_dirs];

    if cap == 1 || n_dirs == 1 {
        for (i, d) in dirs.iter().enumerate() {
            let result = probe_direction(spec, origin, d, s_max, steps)?;
            outcomes[i] = Some(DirectionOutcome {
                index: i,
                direction: d.clone(),
                result,
            });
        }
    } else {
        let chunk = n_dirs.div_ceil(cap);
        let results: Vec<Result<Vec<(usize, DirectionOutcome)>>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (w, slab) in dirs.chunks(chunk).enumerate() {
                let spec_ref = &spec;
                let origin_ref = &origin;
                handles.push(scope.spawn(move || {
                    let mut acc = Vec::new();
                    for (j, d) in slab.iter().enumerate() {
                        let i = w * chunk + j;
                        let result = probe_direction(spec_ref, origin_ref, d, s_max, steps)?;
                        acc.push((
                            i,
                            DirectionOutcome {
                                index: i,
                                direction: d.clone(),
                                result,
                            },
                        ));
                    }
                    Ok(acc)
                }));
            }
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            for (i, o) in r? {
                outcomes[i] = Some(o);
            }
        }
    }

    let outcomes: Vec<DirectionOutcome> = outcomes.into_iter().map(|o| o.unwrap()).collect();
    let mut min_conjugate: Option<(usize, f64)> = None;
    for o in &outcomes {
        if let DirectionResult::Conjugate { s, .. } = o.result {
            if min_conjugate.map(|(_, best)| s < best).unwrap_or(true) {
                min_conjugate = Some((o.index, s));
            }
        }
    }
    Ok(ChartRadiusReport {
        outcomes,
        min_conjugate,
        s_max,
    })
}
