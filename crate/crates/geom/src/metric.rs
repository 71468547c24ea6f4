//! Metric charts: presets, a small config-file format, evaluation,
//! dual-number derivatives, and orthonormal frames.
//!
//! A [`MetricSpec`] is one coordinate chart: names, a signature, symmetric
//! component expressions (upper triangle stored), and per-coordinate open
//! interval bounds. Everything downstream evaluates through this type.
//!
//! Config format, one statement per line, `#` comments:
//!
//! ```text
//! dim = 2
//! signature = (+,+)
//! coords = theta, phi
//! domain theta = (1e-6, 3.141591653589793)
//! g[0][0] = 1
//! g[1][1] = sin(theta)^2
//! ```
//!
//! or a single preset line: `preset sphere n=2 R=1`.

use crate::dual::{Dual, Scalar};
use crate::error::{GeomError, Result};
use crate::expr::{parse_expr, shift_parse_error, ExprNode};
use crate::linalg;
use crate::rng::SplitMix64;
use crate::tensor::{DenseTensor, Signature, SlotKind};
use nalgebra::DMatrix;

const FRAME_TOL: f64 = 1e-10;
/// Keep sphere-like charts away from their polar coordinate singularities.
pub const POLE_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSpec {
    name: String,
    dim: usize,
    coords: Vec<String>,
    signature: Signature,
    /// Upper triangle, row-major: components[idx(i,j)] for i <= j.
    components: Vec<ExprNode>,
    /// Open interval per coordinate.
    domain: Vec<(f64, f64)>,
    /// Finite window inside the domain used when sampling random points.
    sample_window: Vec<(f64, f64)>,
}

fn tri_index(dim: usize, i: usize, j: usize) -> usize {
    // i <= j, row-major over the upper triangle
    i * dim - i * (i + 1) / 2 + j
}

impl MetricSpec {
    pub fn new(
        name: impl Into<String>,
        coords: Vec<String>,
        signature: Signature,
        upper_triangle: Vec<ExprNode>,
        domain: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let dim = coords.len();
        if dim < 2 {
            return Err(GeomError::Config("dimension must be at least 2".into()));
        }
        if signature.dim() != dim {
            return Err(GeomError::Config(format!(
                "signature has {} entries but there are {} coordinates",
                signature.dim(),
                dim
            )));
        }
        if upper_triangle.len() != dim * (dim + 1) / 2 {
            return Err(GeomError::Config(
                "wrong number of metric components".into(),
            ));
        }
        if domain.len() != dim {
            return Err(GeomError::Config("one domain interval per coordinate".into()));
        }
        for (k, (lo, hi)) in domain.iter().enumerate() {
            if !(lo < hi) {
                return Err(GeomError::Config(format!(
                    "empty domain for coordinate `{}`",
                    coords[k]
                )));
            }
        }
        let sample_window = domain
            .iter()
            .map(|(lo, hi)| (lo.max(-1.0), hi.min(1.0)))
            .map(|(lo, hi)| if lo < hi { (lo, hi) } else { (lo, lo + 1.0) })
            .collect();
        Ok(MetricSpec {
            name: name.into(),
            dim,
            coords,
            signature,
            components: upper_triangle,
            domain,
            sample_window,
        })
    }

    pub fn with_sample_window(mut self, window: Vec<(f64, f64)>) -> Self {
        assert_eq!(window.len(), self.dim);
        self.sample_window = window;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn sample_window(&self) -> &[(f64, f64)] {
        &self.sample_window
    }

    pub fn component(&self, i: usize, j: usize) -> &ExprNode {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        &self.components[tri_index(self.dim, a, b)]
    }

    pub fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(GeomError::Config(format!(
                "point has {} coordinates, chart needs {}",
                point.len(),
                self.dim
            )));
        }
        for (k, &x) in point.iter().enumerate() {
            let (lo, hi) = self.domain[k];
            if !(x > lo && x < hi) || !x.is_finite() {
                return Err(GeomError::OutsideDomain {
                    coord: self.coords[k].clone(),
                    value: x,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    /// Evaluate the components generically; no domain check here.
    fn eval_components<T: Scalar>(&self, point: &[T]) -> Vec<T> {
        self.components.iter().map(|e| e.eval(point)).collect()
    }

    /// g at `point` as a symmetric matrix.
    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(point)?;
        let vals = self.eval_components(point);
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = vals[tri_index(self.dim, i, j)];
                if !v.is_finite() {
                    return Err(GeomError::NonFinite { i, j });
                }
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    pub fn eval_inverse(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        linalg::invert_metric(&self.eval(point)?)
    }

    /// First derivatives d_k g_ij by forward-mode duals.
    pub fn eval_d1(&self, point: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_point(point)?;
        let n = self.dim;
        let mut out = vec![DMatrix::zeros(n, n); n];
        for k in 0..n {
            let coords: Vec<Dual<f64>> = point
                .iter()
                .enumerate()
                .map(|(m, &x)| {
                    if m == k {
                        Dual::variable(x)
                    } else {
                        Dual::constant(x)
                    }
                })
                .collect();
            let vals = self.eval_components(&coords);
            for i in 0..n {
                for j in i..n {
                    let d = vals[tri_index(n, i, j)].eps;
                    if !d.is_finite() {
                        return Err(GeomError::NonFinite { i, j });
                    }
                    out[k][(i, j)] = d;
                    out[k][(j, i)] = d;
                }
            }
        }
        Ok(out)
    }

    /// Second derivatives d_l d_k g_ij by nested duals.
    /// Returned as `out[k][l]` symmetric in (k, l).
    pub fn eval_d2(&self, point: &[f64]) -> Result<Vec<Vec<DMatrix<f64>>>> {
        self.check_point(point)?;
        let n = self.dim;
        let mut out = vec![vec![DMatrix::zeros(n, n); n]; n];
        for k in 0..n {
            for l in k..n {
                let coords: Vec<Dual<Dual<f64>>> = point
                    .iter()
                    .enumerate()
                    .map(|(m, &x)| {
                        let inner = if m == k {
                            Dual::variable(x)
                        } else {
                            Dual::constant(x)
                        };
                        if m == l {
                            Dual::variable(inner)
                        } else {
                            Dual::lift(inner)
                        }
                    })
                    .collect();
                let vals = self.eval_components(&coords);
                for i in 0..n {
                    for j in i..n {
                        let d = vals[tri_index(n, i, j)].eps.eps;
                        if !d.is_finite() {
                            return Err(GeomError::NonFinite { i, j });
                        }
                        out[k][l][(i, j)] = d;
                        out[k][l][(j, i)] = d;
                        out[l][k][(i, j)] = d;
                        out[l][k][(j, i)] = d;
                    }
                }
            }
        }
        Ok(out)
    }

    /// First or second derivative arrays in tensor form:
    /// order 1 gives d_k g_ij as a rank-3 tensor (slots i, j, k),
    /// order 2 gives d_l d_k g_ij as rank 4 (slots i, j, k, l).
    pub fn eval_metric_derivs(&self, point: &[f64], order: u8) -> Result<DenseTensor> {
        let n = self.dim;
        match order {
            1 => {
                let d1 = self.eval_d1(point)?;
                Ok(DenseTensor::from_fn(
                    &[n, n, n],
                    &[SlotKind::CoordLower; 3],
                    |idx| d1[idx[2]][(idx[0], idx[1])],
                ))
            }
            2 => {
                let d2 = self.eval_d2(point)?;
                Ok(DenseTensor::from_fn(
                    &[n, n, n, n],
                    &[SlotKind::CoordLower; 4],
                    |idx| d2[idx[2]][idx[3]][(idx[0], idx[1])],
                ))
            }
            other => Err(GeomError::Config(format!(
                "derivative order must be 1 or 2, got {}",
                other
            ))),
        }
    }

    /// Cross-check dual-number first derivatives against 4th-order central
    /// differences; returns the worst relative deviation.
    pub fn fd_check_d1(&self, point: &[f64]) -> Result<f64> {
        let d1 = self.eval_d1(point)?;
        let n = self.dim;
        let mut worst = 0.0_f64;
        for k in 0..n {
            let h = crate::fd::default_step(point[k]);
            for i in 0..n {
                for j in i..n {
                    let fd = crate::fd::partial(
                        |p| self.component(i, j).eval(p),
                        point,
                        k,
                        h,
                    );
                    let scale = d1[k][(i, j)].abs().max(1.0);
                    worst = worst.max((fd - d1[k][(i, j)]).abs() / scale);
                }
            }
        }
        Ok(worst)
    }

    /// Deterministic sample of interior points from the sampling window.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SplitMix64::new(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let p: Vec<f64> = self
                .sample_window
                .iter()
                .map(|(lo, hi)| rng.uniform(*lo, *hi))
                .collect();
            if self.check_point(&p).is_ok() && self.eval(&p).is_ok() {
                out.push(p);
            }
        }
        out
    }

    /// Orthonormal frame at a point: E^T eta E = g.
    pub fn vielbein_at(&self, point: &[f64]) -> Result<FrameField> {
        let g = self.eval(point)?;
        FrameField::build(point, &g, &self.signature)
    }

    /// Render as config text. `parse_metric_spec(print())` reproduces the spec.
    pub fn print(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.name));
        out.push_str(&format!("dim = {}\n", self.dim));
        out.push_str(&format!("signature = {}\n", self.signature.display()));
        out.push_str(&format!("coords = {}\n", self.coords.join(", ")));
        for (k, (lo, hi)) in self.domain.iter().enumerate() {
            out.push_str(&format!(
                "domain {} = ({}, {})\n",
                self.coords[k],
                fmt_bound(*lo),
                fmt_bound(*hi)
            ));
        }
        for i in 0..self.dim {
            for j in i..self.dim {
                out.push_str(&format!(
                    "g[{}][{}] = {}\n",
                    i,
                    j,
                    self.component(i, j).print(&self.coords)
                ));
            }
        }
        out
    }

    /// Verify that eigenvalue signs at sampled interior points match the
    /// declared signature. Used after parsing user specs.
    pub fn validate_signature(&self, samples: usize, seed: u64) -> Result<()> {
        for p in self.sample_points(samples, seed) {
            let g = self.eval(&p)?;
            sign_counts_match(&g, &self.signature)?;
        }
        Ok(())
    }
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{:?}", x)
    }
}

fn sign_counts_match(g: &DMatrix<f64>, sig: &Signature) -> Result<()> {
    let (vals, _) = linalg::sym_eigen(g);
    let plus = vals.iter().filter(|v| **v > 0.0).count();
    let minus = vals.iter().filter(|v| **v < 0.0).count();
    if plus != sig.p_plus() || minus != sig.q_minus() {
        return Err(GeomError::SignatureMismatch {
            plus,
            minus,
            decl_plus: sig.p_plus(),
            decl_minus: sig.q_minus(),
        });
    }
    Ok(())
}

/// Vielbein at a point: rows of `e` are the coframe, columns of `e_inv` are
/// the frame vectors. `e^T eta e = g` and `e * e_inv = I`.
#[derive(Clone, Debug)]
pub struct FrameField {
    pub point: Vec<f64>,
    /// e[(a, lam)] = E^(a)_lam
    pub e: DMatrix<f64>,
    /// e_inv[(lam, a)]: frame vector a in coordinate components
    pub e_inv: DMatrix<f64>,
}

impl FrameField {
    /// Eigen-based construction. Eigenpairs are grouped by sign to match
    /// the signature pattern, and within a sign class each slot greedily
    /// takes the remaining eigenvector best aligned with its coordinate
    /// axis (diagonal metrics then yield the diagonal square-root frame).
    /// Eigenvector signs are fixed by the leading nonzero component.
    pub fn build(point: &[f64], g: &DMatrix<f64>, sig: &Signature) -> Result<Self> {
        let n = g.nrows();
        sign_counts_match(g, sig)?;
        let scale = linalg::max_abs(g).max(1e-300);
        let det = g.clone().determinant();
        let threshold = linalg::SINGULARITY_FACTOR * scale.powi(n as i32);
        if det.abs() < threshold {
            return Err(GeomError::SingularMetric { det, threshold });
        }
        let (vals, vecs) = linalg::sym_eigen(g);

        let mut taken = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for slot in 0..n {
            let want = sig.sign(slot);
            let mut best: Option<(usize, f64, f64)> = None; // (idx, alignment, eigenvalue)
            for j in 0..n {
                if taken[j] || (vals[j] > 0.0) != (want > 0.0) {
                    continue;
                }
                let align = vecs[(slot, j)].abs();
                let better = match best {
                    None => true,
                    Some((_, a, lam)) => {
                        align > a + 1e-12 || (align > a - 1e-12 && vals[j].abs() < lam.abs())
                    }
                };
                if better {
                    best = Some((j, align, vals[j]));
                }
            }
            let (j, _, _) = best.ok_or(GeomError::SignatureMismatch {
                plus: vals.iter().filter(|v| **v > 0.0).count(),
                minus: vals.iter().filter(|v| **v < 0.0).count(),
                decl_plus: sig.p_plus(),
                decl_minus: sig.q_minus(),
            })?;
            taken[j] = true;
            order.push(j);
        }

        // E = diag(sqrt|lambda|) Q^T with columns reordered.
        let mut e = DMatrix::zeros(n, n);
        for (slot, &j) in order.iter().enumerate() {
            let s = vals[j].abs().sqrt();
            for lam in 0..n {
                e[(slot, lam)] = s * vecs[(lam, j)];
            }
        }
        let e_inv = e
            .clone()
            .try_inverse()
            .ok_or(GeomError::SingularMetric { det, threshold })?;

        let frame = FrameField {
            point: point.to_vec(),
            e,
            e_inv,
        };
        let residual = frame.orthonormality_residual(g, sig);
        if residual > FRAME_TOL * scale.max(1.0) {
            return Err(GeomError::NumericalQuality {
                check: "vielbein orthonormality".into(),
                residual,
                limit: FRAME_TOL * scale.max(1.0),
            });
        }
        Ok(frame)
    }

    /// max |E^T eta E - g|.
    pub fn orthonormality_residual(&self, g: &DMatrix<f64>, sig: &Signature) -> f64 {
        let eta = sig.to_matrix();
        let recon = self.e.transpose() * eta * &self.e;
        linalg::max_abs_diff(&recon, g)
    }

    /// Frame components of a coordinate vector: z^(a) = E^(a)_lam v^lam.
    pub fn to_frame(&self, v: &[f64]) -> Vec<f64> {
        let n = self.e.nrows();
        (0..n)
            .map(|a| (0..n).map(|l| self.e[(a, l)] * v[l]).sum())
            .collect()
    }

    /// Coordinate components of a frame vector: v^lam = (E^-1)^lam_a z^a.
    pub fn to_coordinates(&self, z: &[f64]) -> Vec<f64> {
        let n = self.e.nrows();
        (0..n)
            .map(|l| (0..n).map(|a| self.e_inv[(l, a)] * z[a]).sum())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Product of sin(theta_j)^2 for j in `range`.
fn sin_sq_product(range: std::ops::Range<usize>) -> Option<ExprNode> {
    let mut acc: Option<ExprNode> = None;
    for j in range {
        let f = ExprNode::pow(ExprNode::Sin(Box::new(ExprNode::coord(j))), ExprNode::constant(2.0));
        acc = Some(match acc {
            None => f,
            Some(prev) => ExprNode::mul(prev, f),
        });
    }
    acc
}

/// Flat metric with the given signature, Cartesian coordinates.
pub fn flat(sig: Signature) -> MetricSpec {
    let n = sig.dim();
    let coords: Vec<String> = (0..n).map(|i| format!("x{}", i)).collect();
    let mut comps = Vec::new();
    for i in 0..n {
        for j in i..n {
            comps.push(ExprNode::constant(if i == j { sig.sign(i) } else { 0.0 }));
        }
    }
    let domain = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
    MetricSpec::new(format!("flat{}", sig.display()), coords, sig, comps, domain)
        .expect("flat preset is well-formed")
        .with_sample_window(vec![(-1.0, 1.0); n])
}

/// Round n-sphere of radius R in nested polar coordinates
/// (theta1, ..., theta_{n-1}, phi); poles excluded by a small margin.
pub fn sphere(n: usize, radius: f64) -> Result<MetricSpec> {
    if n < 2 {
        return Err(GeomError::Config("sphere needs n >= 2".into()));
    }
    if !(radius > 0.0) {
        return Err(GeomError::Config("sphere radius must be positive".into()));
    }
    let mut coord_names = Vec::new();
    for k in 0..n - 1 {
        coord_names.push(format!("theta{}", k + 1));
    }
    coord_names.push("phi".to_string());
    let r2 = ExprNode::constant(radius * radius);
    let mut comps = Vec::new();
    for i in 0..n {
        for j in i..n {
            if i != j {
                comps.push(ExprNode::constant(0.0));
            } else {
                let expr = match sin_sq_product(0..i) {
                    None => r2.clone(),
                    Some(p) => ExprNode::mul(r2.clone(), p),
                };
                comps.push(expr);
            }
        }
    }
    let mut domain = vec![(POLE_MARGIN, std::f64::consts::PI - POLE_MARGIN); n - 1];
    domain.push((-1e9, 1e9));
    let mut window = vec![(0.3, std::f64::consts::PI - 0.3); n - 1];
    window.push((0.0, 2.0 * std::f64::consts::PI));
    Ok(MetricSpec::new(
        format!("sphere(n={},R={})", n, radius),
        coord_names,
        Signature::euclidean(n),
        comps,
        domain,
    )?
    .with_sample_window(window))
}

/// Hyperbolic n-space of radius R: R^2 (drho^2 + sinh(rho)^2 dOmega^2).
pub fn hyperbolic(n: usize, radius: f64) -> Result<MetricSpec> {
    if n < 2 {
        return Err(GeomError::Config("hyperbolic needs n >= 2".into()));
    }
    if !(radius > 0.0) {
        return Err(GeomError::Config("hyperbolic radius must be positive".into()));
    }
    let mut coord_names = vec!["rho".to_string()];
    for k in 0..n.saturating_sub(2) {
        coord_names.push(format!("theta{}", k + 1));
    }
    if n >= 2 {
        coord_names.push("phi".to_string());
    }
    let r2 = ExprNode::constant(radius * radius);
    let sinh_sq = ExprNode::pow(
        ExprNode::Sinh(Box::new(ExprNode::coord(0))),
        ExprNode::constant(2.0),
    );
    let mut comps = Vec::new();
    for i in 0..n {
        for j in i..n {
            if i != j {
                comps.push(ExprNode::constant(0.0));
                continue;
            }
            if i == 0 {
                comps.push(r2.clone());
            } else {
                // R^2 sinh(rho)^2 * prod_{1 <= j < i} sin(theta_j)^2
                let mut expr = ExprNode::mul(r2.clone(), sinh_sq.clone());
                if let Some(p) = sin_sq_product(1..i) {
                    expr = ExprNode::mul(expr, p);
                }
                comps.push(expr);
            }
        }
    }
    let mut domain = vec![(POLE_MARGIN, f64::INFINITY)];
    domain.extend(vec![(POLE_MARGIN, std::f64::consts::PI - POLE_MARGIN); n.saturating_sub(2)]);
    domain.push((-1e9, 1e9));
    let mut window = vec![(0.3, 2.0)];
    window.extend(vec![(0.3, std::f64::consts::PI - 0.3); n.saturating_sub(2)]);
    window.push((0.0, 2.0 * std::f64::consts::PI));
    Ok(MetricSpec::new(
        format!("hyperbolic(n={},R={})", n, radius),
        coord_names,
        Signature::euclidean(n),
        comps,
        domain,
    )?
    .with_sample_window(window))
}

/// Constant-curvature space in the stereographic form
/// g_ij = eta_ij (1 + K eta_kl x^k x^l / 4)^{-2}.
pub fn constant_curvature(n: usize, k_param: f64, sig: Option<Signature>) -> Result<MetricSpec> {
    if n < 2 {
        return Err(GeomError::Config("constcurv needs n >= 2".into()));
    }
    let sig = sig.unwrap_or_else(|| Signature::euclidean(n));
    if sig.dim() != n {
        return Err(GeomError::Config("signature dimension mismatch".into()));
    }
    let coords: Vec<String> = (0..n).map(|i| format!("x{}", i)).collect();
    // s = 1 + (K/4) sum_k eta_kk x_k^2
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
        ExprNode::mul(ExprNode::constant(k_param / 4.0), quad.unwrap()),
    );
    let s_m2 = ExprNode::pow(s, ExprNode::constant(-2.0));
    let mut comps = Vec::new();
    for i in 0..n {
        for j in i..n {
            if i != j {
                comps.push(ExprNode::constant(0.0));
            } else {
                comps.push(ExprNode::mul(ExprNode::constant(sig.sign(i)), s_m2.clone()));
            }
        }
    }
    // Conservative box keeping 1 + K|x|^2/4 well away from zero.
    let half_width = if k_param < 0.0 {
        0.9 * 2.0 / (k_param.abs() * n as f64).sqrt()
    } else {
        1e9
    };
    let domain = vec![(-half_width, half_width); n];
    let w = if k_param.abs() > 0.0 {
        (0.8 / (k_param.abs() * n as f64).sqrt()).min(1.0)
    } else {
        1.0
    };
    Ok(MetricSpec::new(
        format!("constcurv(n={},K={})", n, k_param),
        coords,
        sig,
        comps,
        domain,
    )?
    .with_sample_window(vec![(-w, w); n]))
}

/// Schwarzschild exterior chart (t, r, theta, phi), mass parameter M,
/// domain r > 2M (1 + margin).
pub fn schwarzschild(mass: f64, margin: f64) -> Result<MetricSpec> {
    if !(mass > 0.0) {
        return Err(GeomError::Config("mass must be positive".into()));
    }
    if !(margin > 0.0) {
        return Err(GeomError::Config("horizon margin must be positive".into()));
    }
    let coords = names(&["t", "r", "theta", "phi"]);
    let one = ExprNode::constant(1.0);
    // f = 1 - 2M/r
    let f = ExprNode::sub(
        one.clone(),
        ExprNode::div(ExprNode::constant(2.0 * mass), ExprNode::coord(1)),
    );
    let r_sq = ExprNode::pow(ExprNode::coord(1), ExprNode::constant(2.0));
    let sin_sq = ExprNode::pow(
        ExprNode::Sin(Box::new(ExprNode::coord(2))),
        ExprNode::constant(2.0),
    );
    let mut comps = Vec::new();
    for i in 0..4 {
        for j in i..4 {
            if i != j {
                comps.push(ExprNode::constant(0.0));
                continue;
            }
            comps.push(match i {
                0 => ExprNode::neg(f.clone()),
                1 => ExprNode::div(one.clone(), f.clone()),
                2 => r_sq.clone(),
                _ => ExprNode::mul(r_sq.clone(), sin_sq.clone()),
            });
        }
    }
    let domain = vec![
        (f64::NEG_INFINITY, f64::INFINITY),
        (2.0 * mass * (1.0 + margin), f64::INFINITY),
        (POLE_MARGIN, std::f64::consts::PI - POLE_MARGIN),
        (-1e9, 1e9),
    ];
    let window = vec![
        (-1.0, 1.0),
        (3.0 * mass, 50.0 * mass),
        (0.3, std::f64::consts::PI - 0.3),
        (0.0, 2.0 * std::f64::consts::PI),
    ];
    Ok(MetricSpec::new(
        format!("schwarzschild(M={})", mass),
        coords,
        Signature::parse("(-,+,+,+)")?,
        comps,
        domain,
    )?
    .with_sample_window(window))
}

/// Build a preset from key=value pairs.
pub fn preset(name: &str, params: &[(String, String)]) -> Result<MetricSpec> {
    let get = |key: &str| -> Option<&str> {
        params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    };
    let parse_f64 = |key: &str, default: Option<f64>| -> Result<f64> {
        match get(key) {
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| GeomError::Config(format!("bad numeric value for `{}`", key))),
            None => default.ok_or_else(|| {
                GeomError::Config(format!("preset `{}` needs parameter `{}`", name, key))
            }),
        }
    };
    let parse_usize = |key: &str, default: Option<usize>| -> Result<usize> {
        match get(key) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| GeomError::Config(format!("bad integer value for `{}`", key))),
            None => default.ok_or_else(|| {
                GeomError::Config(format!("preset `{}` needs parameter `{}`", name, key))
            }),
        }
    };
    match name {
        "flat" => {
            if let Some(s) = get("sig") {
                return Ok(flat(Signature::parse(s)?));
            }
            let p = parse_usize("p", None)?;
            let q = parse_usize("q", None)?;
            Ok(flat(Signature::plus_minus(p, q)?))
        }
        "sphere" => sphere(parse_usize("n", None)?, parse_f64("R", Some(1.0))?),
        "hyperbolic" => hyperbolic(parse_usize("n", None)?, parse_f64("R", Some(1.0))?),
        "constcurv" => {
            let sig = match get("sig") {
                Some(s) => Some(Signature::parse(s)?),
                None => None,
            };
            constant_curvature(parse_usize("n", None)?, parse_f64("K", None)?, sig)
        }
        "schwarzschild" => schwarzschild(
            parse_f64("M", None)?,
            parse_f64("margin", Some(0.05))?,
        ),
        other => Err(GeomError::Config(format!("unknown preset `{}`", other))),
    }
}

// ---------------------------------------------------------------------------
// Config-document parser
// ---------------------------------------------------------------------------

struct Line<'a> {
    number: usize,
    offset: usize,
    text: &'a str,
}

fn parse_bound(text: &str, line: usize, offset: usize) -> Result<f64> {
    let t = text.trim();
    match t {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t.parse::<f64>().map_err(|_| GeomError::Parse {
            line,
            col: 1,
            offset,
            msg: format!("bad interval bound `{}`", t),
        }),
    }
}

/// Parse a metric config document (full spec or a single `preset` line).
pub fn parse_metric_spec(text: &str) -> Result<MetricSpec> {
    let mut lines: Vec<Line> = Vec::new();
    let mut offset = 0;
    for (i, raw) in text.split('\n').enumerate() {
        let no_comment = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        };
        if !no_comment.trim().is_empty() {
            lines.push(Line {
                number: i + 1,
                offset,
                text: no_comment,
            });
        }
        offset += raw.len() + 1;
    }
    if lines.is_empty() {
        return Err(GeomError::Config("empty metric config".into()));
    }

    // Preset shortcut: `preset <name> key=value ...`
    if let Some(rest) = lines[0].text.trim().strip_prefix("preset ") {
        if lines.len() > 1 {
            return Err(GeomError::Config(
                "preset line must be the only statement".into(),
            ));
        }
        let mut parts = rest.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| GeomError::Config("preset needs a name".into()))?;
        let mut params = Vec::new();
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| GeomError::Config(format!("bad preset parameter `{}`", kv)))?;
            params.push((k.to_string(), v.to_string()));
        }
        return preset(name, &params);
    }

    let mut dim: Option<usize> = None;
    let mut signature: Option<Signature> = None;
    let mut coords: Option<Vec<String>> = None;
    let mut domains: Vec<(String, f64, f64)> = Vec::new();
    let mut comps: Vec<(usize, usize, ExprNode)> = Vec::new();

    for line in &lines {
        let text = line.text.trim();
        let eq = text.find('=').ok_or(GeomError::Parse {
            line: line.number,
            col: 1,
            offset: line.offset,
            msg: "expected `key = value`".into(),
        })?;
        let (lhs, rhs) = (text[..eq].trim(), text[eq + 1..].trim());
        let rhs_offset = line.offset + line.text.find('=').unwrap() + 1
            + line.text[eq + 1..].len() - line.text[eq + 1..].trim_start().len();

        if lhs == "dim" {
            dim = Some(rhs.parse::<usize>().map_err(|_| GeomError::Parse {
                line: line.number,
                col: eq + 2,
                offset: rhs_offset,
                msg: "dim must be a positive integer".into(),
            })?);
        } else if lhs == "signature" {
            signature = Some(Signature::parse(rhs)?);
        } else if lhs == "coords" {
            coords = Some(
                rhs.split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect(),
            );
        } else if let Some(rest) = lhs.strip_prefix("domain ") {
            let name = rest.trim().to_string();
            let inner = rhs
                .trim()
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .ok_or(GeomError::Parse {
                    line: line.number,
                    col: eq + 2,
                    offset: rhs_offset,
                    msg: "domain must look like (lo, hi)".into(),
                })?;
            let (lo_s, hi_s) = inner.split_once(',').ok_or(GeomError::Parse {
                line: line.number,
                col: eq + 2,
                offset: rhs_offset,
                msg: "domain must look like (lo, hi)".into(),
            })?;
            let lo = parse_bound(lo_s, line.number, rhs_offset)?;
            let hi = parse_bound(hi_s, line.number, rhs_offset)?;
            domains.push((name, lo, hi));
        } else if lhs.starts_with("g[") {
            let idx: Vec<&str> = lhs
                .trim_start_matches("g[")
                .trim_end_matches(']')
                .split("][")
                .collect();
            if idx.len() != 2 {
                return Err(GeomError::Parse {
                    line: line.number,
                    col: 1,
                    offset: line.offset,
                    msg: "component must look like g[i][j]".into(),
                });
            }
            let i: usize = idx[0].parse().map_err(|_| GeomError::Parse {
                line: line.number,
                col: 1,
                offset: line.offset,
                msg: "bad component index".into(),
            })?;
            let j: usize = idx[1].parse().map_err(|_| GeomError::Parse {
                line: line.number,
                col: 1,
                offset: line.offset,
                msg: "bad component index".into(),
            })?;
            let coord_names = coords.as_ref().ok_or(GeomError::Parse {
                line: line.number,
                col: 1,
                offset: line.offset,
                msg: "coords must be declared before components".into(),
            })?;
            let expr = parse_expr(rhs, coord_names).map_err(|e| {
                shift_parse_error(e, line.number, eq + 2, rhs_offset)
            })?;
            comps.push((i, j, expr));
        } else {
            return Err(GeomError::Parse {
                line: line.number,
                col: 1,
                offset: line.offset,
                msg: format!("unknown statement `{}`", lhs),
            });
        }
    }

    let dim = dim.ok_or_else(|| GeomError::Config("missing `dim`".into()))?;
    let signature = signature.ok_or_else(|| GeomError::Config("missing `signature`".into()))?;
    let coords = coords.ok_or_else(|| GeomError::Config("missing `coords`".into()))?;
    if coords.len() != dim {
        return Err(GeomError::Config(format!(
            "declared dim {} but {} coordinates",
            dim,
            coords.len()
        )));
    }

    let mut domain = vec![(f64::NEG_INFINITY, f64::INFINITY); dim];
    for (name, lo, hi) in domains {
        let k = coords
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| GeomError::Config(format!("domain for unknown coordinate `{}`", name)))?;
        domain[k] = (lo, hi);
    }

    let mut triangle: Vec<Option<ExprNode>> = vec![None; dim * (dim + 1) / 2];
    for (i, j, expr) in comps {
        if i >= dim || j >= dim {
            return Err(GeomError::Config(format!(
                "component index g[{}][{}] out of range for dim {}",
                i, j, dim
            )));
        }
        if i > j {
            return Err(GeomError::Config(format!(
                "asymmetric component assignment g[{}][{}]: assign the upper triangle (g[{}][{}])",
                i, j, j, i
            )));
        }
        let slot = tri_index(dim, i, j);
        if triangle[slot].is_some() {
            return Err(GeomError::Config(format!(
                "duplicate assignment for g[{}][{}]",
                i, j
            )));
        }
        triangle[slot] = Some(expr);
    }
    let components: Vec<ExprNode> = triangle
        .into_iter()
        .map(|c| c.unwrap_or(ExprNode::Const(0.0)))
        .collect();

    MetricSpec::new("config", coords, signature, components, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

    #[test]
    fn flat_config_parses_to_constant_components() {
        let text = "\
dim = 4
signature = (-,+,+,+)
coords = t, x, y, z
g[0][0] = -1
g[1][1] = 1
g[2][2] = 1
g[3][3] = 1
";
        let spec = parse_metric_spec(text).unwrap();
        let g = spec.eval(&[0.3, -0.2, 5.0, 7.0]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j {
                    if i == 0 {
                        -1.0
                    } else {
                        1.0
                    }
                } else {
                    0.0
                };
                assert_eq!(g[(i, j)], expect);
            }
        }
        spec.validate_signature(16, 1).unwrap();
    }

    #[test]
    fn sphere_preset_line_matches_round_metric() {
        let spec = parse_metric_spec("preset sphere n=2 R=1").unwrap();
        let g = spec.eval(&[FRAC_PI_3, 0.2]).unwrap();
        assert_relative_eq!(g[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[(1, 1)], FRAC_PI_3.sin().powi(2), epsilon = 1e-15);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn malformed_expression_reports_offset_of_paren() {
        let text = "\
dim = 2
signature = (+,+)
coords = a, b
g[0][1] = sin(
";
        let err = parse_metric_spec(text).unwrap_err();
        match err {
            GeomError::Parse { offset, line, .. } => {
                assert_eq!(line, 4);
                // offset points at the end of "sin(" where the argument is missing
                let src_offset = text.find("sin(").unwrap() + 4;
                assert_eq!(offset, src_offset);
            }
            other => panic!("expected parse error, got {:?}", other),
        }
    }

    #[test]
    fn lower_triangle_assignment_is_rejected() {
        let text = "\
dim = 2
signature = (+,+)
coords = a, b
g[1][0] = 1
";
        let err = parse_metric_spec(text).unwrap_err();
        assert!(format!("{}", err).contains("asymmetric"));
    }

    #[test]
    fn duplicate_assignment_is_rejected() {
        let text = "\
dim = 2
signature = (+,+)
coords = a, b
g[0][0] = 1
g[0][0] = 2
g[1][1] = 1
";
        assert!(parse_metric_spec(text).is_err());
    }

    #[test]
    fn print_parse_round_trip_for_presets() {
        for spec in [
            flat(Signature::parse("-+++").unwrap()),
            sphere(2, 2.0).unwrap(),
            sphere(3, 1.0).unwrap(),
            hyperbolic(2, 1.0).unwrap(),
            constant_curvature(3, 0.25, None).unwrap(),
            schwarzschild(1.0, 0.05).unwrap(),
        ] {
            let printed = spec.print();
            let back = parse_metric_spec(&printed).unwrap();
            assert_eq!(back.dim(), spec.dim());
            assert_eq!(back.signature(), spec.signature());
            assert_eq!(back.coords(), spec.coords());
            for i in 0..spec.dim() {
                for j in i..spec.dim() {
                    assert_eq!(
                        back.component(i, j),
                        spec.component(i, j),
                        "component ({}, {}) of {}",
                        i,
                        j,
                        spec.name()
                    );
                }
            }
        }
    }

    #[test]
    fn constant_curvature_is_flat_at_origin_and_for_zero_k() {
        let cc0 = constant_curvature(4, 0.0, None).unwrap();
        let g = cc0.eval(&[0.7, -0.3, 0.1, 0.5]).unwrap();
        for i in 0..4 {
            assert_relative_eq!(g[(i, i)], 1.0, epsilon = 1e-15);
        }
        let cc1 = constant_curvature(4, 1.0, None).unwrap();
        let g0 = cc1.eval(&[0.0; 4]).unwrap();
        for i in 0..4 {
            assert_relative_eq!(g0[(i, i)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn sphere_derivative_values() {
        let s = sphere(2, 1.0).unwrap();
        // d_theta g_phiphi = 2 sin cos: zero at the equator, 1 at pi/4
        let d_eq = s.eval_d1(&[FRAC_PI_2, 0.5]).unwrap();
        assert!(d_eq[0][(1, 1)].abs() < 1e-14);
        let d = s.eval_d1(&[FRAC_PI_4, 0.5]).unwrap();
        assert_relative_eq!(d[0][(1, 1)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn flat_metric_has_zero_derivatives() {
        let f = flat(Signature::parse("-+++").unwrap());
        let d1 = f.eval_d1(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let d2 = f.eval_d2(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        for k in 0..4 {
            assert_eq!(linalg::max_abs(&d1[k]), 0.0);
            for l in 0..4 {
                assert_eq!(linalg::max_abs(&d2[k][l]), 0.0);
            }
        }
    }

    #[test]
    fn dual_derivatives_match_central_differences() {
        for spec in [
            sphere(2, 1.3).unwrap(),
            hyperbolic(2, 1.0).unwrap(),
            constant_curvature(3, 1.0, None).unwrap(),
            schwarzschild(1.0, 0.05).unwrap(),
        ] {
            for p in spec.sample_points(10, 3) {
                let worst = spec.fd_check_d1(&p).unwrap();
                assert!(worst < 1e-6, "{}: fd deviation {}", spec.name(), worst);
            }
        }
    }

    #[test]
    fn vielbein_examples() {
        // flat Lorentzian: identity frame
        let f = flat(Signature::parse("-+++").unwrap());
        let fr = f.vielbein_at(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(fr.e[(i, j)], expect, epsilon = 1e-12);
            }
        }
        // unit sphere at the equator: metric is the identity there
        let s1 = sphere(2, 1.0).unwrap();
        let fr = s1.vielbein_at(&[FRAC_PI_2, 0.1]).unwrap();
        assert_relative_eq!(fr.e[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(fr.e[(1, 1)], 1.0, epsilon = 1e-12);
        // radius-2 sphere at pi/3: diagonal square roots in coordinate order
        let s2 = sphere(2, 2.0).unwrap();
        let fr = s2.vielbein_at(&[FRAC_PI_3, 0.1]).unwrap();
        assert_relative_eq!(fr.e[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fr.e[(1, 1)], 3.0_f64.sqrt(), epsilon = 1e-12);
        assert!(fr.e[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn vielbein_orthonormality_over_catalog() {
        let specs = [
            flat(Signature::parse("-+++").unwrap()),
            sphere(2, 1.0).unwrap(),
            sphere(3, 1.0).unwrap(),
            hyperbolic(3, 2.0).unwrap(),
            constant_curvature(4, -1.0, None).unwrap(),
            schwarzschild(1.0, 0.05).unwrap(),
        ];
        for spec in &specs {
            for p in spec.sample_points(100, 11) {
                let g = spec.eval(&p).unwrap();
                let fr = spec.vielbein_at(&p).unwrap();
                let res = fr.orthonormality_residual(&g, spec.signature());
                assert!(res < 1e-10, "{} at {:?}: residual {}", spec.name(), p, res);
                let prod = &fr.e * &fr.e_inv;
                let id = DMatrix::identity(spec.dim(), spec.dim());
                assert!(linalg::max_abs_diff(&prod, &id) < 1e-10);
            }
        }
    }

    #[test]
    fn signature_mismatch_is_detected() {
        // Declare an all-plus signature for a Lorentzian metric.
        let text = "\
dim = 2
signature = (+,+)
coords = t, x
g[0][0] = -1
g[1][1] = 1
";
        let spec = parse_metric_spec(text).unwrap();
        let err = spec.vielbein_at(&[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, GeomError::SignatureMismatch { .. }));
    }

    #[test]
    fn out_of_domain_point_is_rejected() {
        let s = schwarzschild(1.0, 0.05).unwrap();
        let err = s.eval(&[0.0, 1.5, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, GeomError::OutsideDomain { .. }));
    }
}
