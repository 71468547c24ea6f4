//! Dense multi-index tensors with signature-aware index algebra.
//!
//! Values are plain row-major `f64` arrays tagged per slot with the index
//! family (coordinate vs frame) and variance (upper vs lower). The tags make
//! frame/coordinate misuse a checkable runtime error rather than a silent
//! contraction bug.

use crate::error::{GeomError, Result};
use crate::linalg;
use nalgebra::DMatrix;

/// Diagonal flat metric: an ordered pattern of +1/-1 entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    signs: Vec<i8>,
}

impl Signature {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.is_empty() {
            return Err(GeomError::Config("signature must be non-empty".into()));
        }
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(GeomError::Config(
                "signature entries must be +1 or -1".into(),
            ));
        }
        Ok(Signature { signs })
    }

    pub fn euclidean(n: usize) -> Self {
        Signature { signs: vec![1; n] }
    }

    /// `p` leading +1 entries followed by `q` trailing -1 entries.
    pub fn plus_minus(p: usize, q: usize) -> Result<Self> {
        let mut signs = vec![1_i8; p];
        signs.extend(std::iter::repeat(-1_i8).take(q));
        Signature::new(signs)
    }

    /// Parse forms like `(-,+,+,+)` or `-+++`.
    pub fn parse(text: &str) -> Result<Self> {
        let cleaned: String = text
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '(' && *c != ')' && *c != ',')
            .collect();
        if cleaned.is_empty() {
            return Err(GeomError::Config("empty signature".into()));
        }
        let signs = cleaned
            .chars()
            .map(|c| match c {
                '+' => Ok(1_i8),
                '-' => Ok(-1_i8),
                other => Err(GeomError::Config(format!(
                    "bad signature character `{}`",
                    other
                ))),
            })
            .collect::<Result<Vec<i8>>>()?;
        Signature::new(signs)
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    pub fn sign(&self, i: usize) -> f64 {
        self.signs[i] as f64
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn p_plus(&self) -> usize {
        self.signs.iter().filter(|s| **s > 0).count()
    }

    pub fn q_minus(&self) -> usize {
        self.signs.iter().filter(|s| **s < 0).count()
    }

    /// eta(u, v).
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        (0..self.dim()).map(|i| self.sign(i) * u[i] * v[i]).sum()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                self.sign(i)
            } else {
                0.0
            }
        })
    }

    pub fn to_tensor(&self, kind: SlotKind) -> DenseTensor {
        let n = self.dim();
        DenseTensor::from_fn(&[n, n], &[kind, kind], |idx| {
            if idx[0] == idx[1] {
                self.sign(idx[0])
            } else {
                0.0
            }
        })
    }

    pub fn display(&self) -> String {
        let body: Vec<&str> = self
            .signs
            .iter()
            .map(|s| if *s > 0 { "+" } else { "-" })
            .collect();
        format!("({})", body.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    CoordUpper,
    CoordLower,
    FrameUpper,
    FrameLower,
}

impl SlotKind {
    pub fn is_upper(self) -> bool {
        matches!(self, SlotKind::CoordUpper | SlotKind::FrameUpper)
    }

    pub fn is_frame(self) -> bool {
        matches!(self, SlotKind::FrameUpper | SlotKind::FrameLower)
    }

    pub fn flipped(self) -> SlotKind {
        match self {
            SlotKind::CoordUpper => SlotKind::CoordLower,
            SlotKind::CoordLower => SlotKind::CoordUpper,
            SlotKind::FrameUpper => SlotKind::FrameLower,
            SlotKind::FrameLower => SlotKind::FrameUpper,
        }
    }
}

/// Absolute/relative comparison thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Result<Self> {
        if !abs_tol.is_finite() || !rel_tol.is_finite() || abs_tol < 0.0 || rel_tol < 0.0 {
            return Err(GeomError::Config(
                "tolerances must be finite and non-negative".into(),
            ));
        }
        Ok(Tolerance { abs_tol, rel_tol })
    }

    /// One order above double-precision ODE and differentiation noise.
    pub fn default_tol() -> Self {
        Tolerance {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        }
    }

    pub fn accepts(&self, deviation: f64, scale: f64) -> bool {
        deviation <= self.abs_tol + self.rel_tol * scale.abs()
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::default_tol()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    slots: Vec<SlotKind>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: &[usize], slots: &[SlotKind]) -> Self {
        assert_eq!(dims.len(), slots.len(), "one slot kind per dimension");
        let len: usize = dims.iter().product::<usize>().max(1);
        DenseTensor {
            dims: dims.to_vec(),
            slots: slots.to_vec(),
            data: vec![0.0; if dims.is_empty() { 1 } else { len }],
        }
    }

    pub fn from_fn(dims: &[usize], slots: &[SlotKind], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = DenseTensor::zeros(dims, slots);
        let mut idx = vec![0usize; dims.len()];
        for flat in 0..t.data.len() {
            t.unflatten(flat, &mut idx);
            t.data[flat] = f(&idx);
        }
        t
    }

    pub fn scalar(v: f64) -> Self {
        DenseTensor {
            dims: vec![],
            slots: vec![],
            data: vec![v],
        }
    }

    /// Kronecker delta with one upper and one lower slot.
    pub fn delta(n: usize, family_frame: bool) -> Self {
        let (up, lo) = if family_frame {
            (SlotKind::FrameUpper, SlotKind::FrameLower)
        } else {
            (SlotKind::CoordUpper, SlotKind::CoordLower)
        };
        DenseTensor::from_fn(&[n, n], &[up, lo], |idx| if idx[0] == idx[1] { 1.0 } else { 0.0 })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn slots(&self) -> &[SlotKind] {
        &self.slots
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[k]);
            flat = flat * self.dims[k] + i;
        }
        flat
    }

    fn unflatten(&self, mut flat: usize, idx: &mut [usize]) {
        for k in (0..self.dims.len()).rev() {
            idx[k] = flat % self.dims[k];
            flat /= self.dims[k];
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flatten(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let flat = self.flatten(idx);
        self.data[flat] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return Err(GeomError::Tensor("shape mismatch in add".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(out)
    }

    pub fn as_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rank() != 2 {
            return Err(GeomError::Tensor("expected a rank-2 tensor".into()));
        }
        Ok(DMatrix::from_fn(self.dims[0], self.dims[1], |i, j| {
            self.get(&[i, j])
        }))
    }
}

/// Mediator for contracting or flipping like-kind slots.
pub enum MetricLike<'a> {
    Signature(&'a Signature),
    /// A symmetric rank-2 metric with both slots lower.
    Metric(&'a DenseTensor),
}

/// Contract `slot_a` with `slot_b`.
///
/// One upper and one lower slot of the same family contract directly. Two
/// like-variance slots need `eta` to mediate: the metric inverse for two
/// lower slots, the metric itself for two upper ones. A diagonal signature
/// is its own inverse, so it serves both ways.
pub fn contract(
    t: &DenseTensor,
    slot_a: usize,
    slot_b: usize,
    eta: Option<MetricLike<'_>>,
) -> Result<DenseTensor> {
    let rank = t.rank();
    if slot_a == slot_b || slot_a >= rank || slot_b >= rank {
        return Err(GeomError::Tensor(format!(
            "invalid contraction slots ({}, {}) for rank {}",
            slot_a, slot_b, rank
        )));
    }
    let (sa, sb) = (slot_a.min(slot_b), slot_b.max(slot_a));
    let n = t.dims()[sa];
    if t.dims()[sb] != n {
        return Err(GeomError::Tensor(format!(
            "contraction extent mismatch: {} vs {}",
            n,
            t.dims()[sb]
        )));
    }
    let ka = t.slots()[sa];
    let kb = t.slots()[sb];
    if ka.is_frame() != kb.is_frame() {
        return Err(GeomError::Tensor(
            "cannot contract frame with coordinate slot".into(),
        ));
    }

    // Weight matrix w[i][j] applied between the two slots.
    let direct = ka.is_upper() != kb.is_upper();
    let weight: Option<DMatrix<f64>> = if direct {
        None
    } else {
        let m = match eta {
            None => {
                return Err(GeomError::Tensor(
                    "contracting two like-kind slots requires a metric or signature".into(),
                ))
            }
            Some(MetricLike::Signature(sig)) => {
                if sig.dim() != n {
                    return Err(GeomError::Tensor("signature dimension mismatch".into()));
                }
                sig.to_matrix()
            }
            Some(MetricLike::Metric(g)) => {
                let gm = g.as_matrix()?;
                if gm.nrows() != n {
                    return Err(GeomError::Tensor("metric dimension mismatch".into()));
                }
                if ka.is_upper() {
                    gm
                } else {
                    linalg::invert_metric(&gm)?
                }
            }
        };
        Some(m)
    };

    let out_dims: Vec<usize> = t
        .dims()
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != sa && *k != sb)
        .map(|(_, d)| *d)
        .collect();
    let out_slots: Vec<SlotKind> = t
        .slots()
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != sa && *k != sb)
        .map(|(_, s)| *s)
        .collect();

    let mut out = DenseTensor::zeros(&out_dims, &out_slots);
    let mut out_idx = vec![0usize; out_dims.len()];
    let mut full = vec![0usize; rank];
    for flat in 0..out.data.len() {
        out.unflatten(flat, &mut out_idx);
        // Scatter the surviving indices around the contracted pair.
        let mut pos = 0;
        for k in 0..rank {
            if k != sa && k != sb {
                full[k] = out_idx[pos];
                pos += 1;
            }
        }
        let mut acc = 0.0;
        match &weight {
            None => {
                for i in 0..n {
                    full[sa] = i;
                    full[sb] = i;
                    acc += t.get(&full);
                }
            }
            Some(w) => {
                for i in 0..n {
                    full[sa] = i;
                    for j in 0..n {
                        let wij = w[(i, j)];
                        if wij == 0.0 {
                            continue;
                        }
                        full[sb] = j;
                        acc += wij * t.get(&full);
                    }
                }
            }
        }
        out.data[flat] = acc;
    }
    Ok(out)
}

/// Max over all index tuples of |t[perm(I)] - sign * t[I]|.
///
/// `perm[k]` names the source slot feeding output slot `k`. The companion
/// [`Tolerance`] is the caller's to apply; the raw deviation comes back so
/// reports can quote it.
pub fn check_symmetry(t: &DenseTensor, perm: &[usize], sign: f64, _tol: &Tolerance) -> Result<f64> {
    let rank = t.rank();
    if perm.len() != rank {
        return Err(GeomError::Tensor("permutation length != rank".into()));
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(GeomError::Tensor("invalid slot permutation".into()));
        }
        seen[p] = true;
    }
    for k in 0..rank {
        if t.dims()[k] != t.dims()[perm[k]] {
            return Err(GeomError::Tensor(
                "extent mismatch under permutation".into(),
            ));
        }
    }
    let mut idx = vec![0usize; rank];
    let mut pidx = vec![0usize; rank];
    let mut worst = 0.0_f64;
    for flat in 0..t.data.len() {
        t.unflatten(flat, &mut idx);
        for k in 0..rank {
            pidx[k] = idx[perm[k]];
        }
        let dev = (t.get(&pidx) - sign * t.data[flat]).abs();
        worst = worst.max(dev);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// Flip one slot's variance with the supplied symmetric metric.
pub fn raise_lower(
    t: &DenseTensor,
    slot: usize,
    metric: &DenseTensor,
    direction: Direction,
) -> Result<DenseTensor> {
    if slot >= t.rank() {
        return Err(GeomError::Tensor(format!("slot {} out of range", slot)));
    }
    let n = t.dims()[slot];
    let gm = metric.as_matrix()?;
    if gm.nrows() != n || gm.ncols() != n {
        return Err(GeomError::Tensor("metric extent mismatch".into()));
    }
    if linalg::max_abs_diff(&gm, &gm.transpose()) > 1e-12 * linalg::max_abs(&gm).max(1.0) {
        return Err(GeomError::Tensor("metric must be symmetric".into()));
    }
    let kind = t.slots()[slot];
    match direction {
        Direction::Up if kind.is_upper() => {
            return Err(GeomError::Tensor("slot is already upper".into()))
        }
        Direction::Down if !kind.is_upper() => {
            return Err(GeomError::Tensor("slot is already lower".into()))
        }
        _ => {}
    }
    let w = match direction {
        Direction::Up => linalg::invert_metric(&gm)?,
        Direction::Down => gm,
    };

    let mut out_slots = t.slots().to_vec();
    out_slots[slot] = kind.flipped();
    let mut out = DenseTensor::zeros(t.dims(), &out_slots);
    let rank = t.rank();
    let mut idx = vec![0usize; rank];
    let mut src = vec![0usize; rank];
    for flat in 0..out.data.len() {
        out.unflatten(flat, &mut idx);
        src.copy_from_slice(&idx);
        let mut acc = 0.0;
        for j in 0..n {
            src[slot] = j;
            acc += w[(idx[slot], j)] * t.get(&src);
        }
        out.data[flat] = acc;
    }
    Ok(out)
}
