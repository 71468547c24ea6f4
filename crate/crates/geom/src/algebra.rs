//! Finite-dimensional angular-momentum representations of so(p,q) with
//! closure, Jacobi-identity, and Casimir verification.
//!
//! Generators are labelled by index pairs (A, B), A < B, with
//! `L_{BA} = -L_{AB}`, and obey
//!
//! ```text
//! [L_AB, L_CD] = -i ( eta_AC L_BD + eta_AD L_CB
//!                   + eta_BC L_DA + eta_BD L_AC )
//! ```
//!
//! The vector representation is `(L_AB)^C_D = i (eta_BD delta^C_A -
//! eta_AD delta^C_B)`; dropping the `i` gives a real integer-valued form
//! obeying the same bracket without the `-i` prefactor, used for exact
//! checks. For so(3) a ladder construction supplies the spin-j family whose
//! quadratic Casimir is j(j+1) (hbar = 1 throughout).

use crate::error::{GeomError, Result};
use crate::tensor::Signature;
use nalgebra::DMatrix;
use num_complex::Complex64;

type CMatrix = DMatrix<Complex64>;

/// One generator of an angular-momentum representation.
#[derive(Clone, Debug)]
pub struct OperatorRep {
    /// Generator index pair, a < b.
    pub a: usize,
    pub b: usize,
    pub matrix: CMatrix,
}

/// A complete basis of generators for the given signature.
#[derive(Clone, Debug)]
pub struct RepBasis {
    pub signature: Signature,
    /// Matrix dimension of the representation space.
    pub dim: usize,
    /// Generators for all pairs a < b in lexicographic order.
    pub gens: Vec<OperatorRep>,
    pub name: String,
}

impl RepBasis {
    /// L_{AB} for any ordered pair, antisymmetric in (A, B).
    pub fn generator(&self, a: usize, b: usize) -> CMatrix {
        if a == b {
            return CMatrix::zeros(self.dim, self.dim);
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        let g = self
            .gens
            .iter()
            .find(|g| g.a == lo && g.b == hi)
            .expect("complete basis");
        g.matrix.clone() * Complex64::new(sign, 0.0)
    }
}

fn commutator(x: &CMatrix, y: &CMatrix) -> CMatrix {
    x * y - y * x
}

fn max_abs_c(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.norm()))
}

/// Vector representation on the m-dimensional space itself.
pub fn angular_momentum_rep(signature: &Signature) -> Result<RepBasis> {
    let m = signature.dim();
    if m < 2 {
        return Err(GeomError::Config(
            "angular momentum needs at least 2 dimensions".into(),
        ));
    }
    let i = Complex64::i();
    let mut gens = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let mut mat = CMatrix::zeros(m, m);
            // (L_AB)^C_D = i (eta_BD delta^C_A - eta_AD delta^C_B)
            for d in 0..m {
                if d == b {
                    mat[(a, d)] += i * signature.sign(b);
                }
                if d == a {
                    mat[(b, d)] -= i * signature.sign(a);
                }
            }
            gens.push(OperatorRep { a, b, matrix: mat });
        }
    }
    Ok(RepBasis {
        signature: signature.clone(),
        dim: m,
        gens,
        name: "vector".into(),
    })
}

/// Real integer form of the vector representation (the `i` dropped):
/// (G_AB)^C_D = eta_BD delta^C_A - eta_AD delta^C_B, obeying
/// [G_AB, G_CD] = -(eta_AC G_BD + eta_AD G_CB + eta_BC G_DA + eta_BD G_AC).
pub fn real_vector_rep(signature: &Signature) -> Vec<(usize, usize, DMatrix<f64>)> {
    let m = signature.dim();
    let mut gens = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let mut mat = DMatrix::<f64>::zeros(m, m);
            mat[(a, b)] += signature.sign(b);
            mat[(b, a)] -= signature.sign(a);
            gens.push((a, b, mat));
        }
    }
    gens
}

/// Spin-j representation of so(3) from the ladder construction;
/// `two_j` is 2j, so dimension 2j + 1.
pub fn spin_rep(two_j: u32) -> Result<RepBasis> {
    if two_j == 0 {
        return Err(GeomError::Config("spin 0 is the trivial rep".into()));
    }
    let j = two_j as f64 / 2.0;
    let d = (two_j + 1) as usize;
    let i = Complex64::i();
    // basis ordered m = j, j-1, ..., -j
    let m_of = |k: usize| j - k as f64;
    let mut jz = CMatrix::zeros(d, d);
    let mut jp = CMatrix::zeros(d, d);
    for k in 0..d {
        jz[(k, k)] = Complex64::new(m_of(k), 0.0);
        if k > 0 {
            // J+ |j, m> = sqrt(j(j+1) - m(m+1)) |j, m+1>
            let m = m_of(k);
            jp[(k - 1, k)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm) * Complex64::new(0.5, 0.0);
    let jy = (&jp - &jm) * (-i * 0.5);
    // L_12 = -Jz, L_13 = +Jy, L_23 = -Jx satisfy the bracket above.
    let gens = vec![
        OperatorRep {
            a: 0,
            b: 1,
            matrix: -jz,
        },
        OperatorRep {
            a: 0,
            b: 2,
            matrix: jy,
        },
        OperatorRep {
            a: 1,
            b: 2,
            matrix: -jx,
        },
    ];
    Ok(RepBasis {
        signature: Signature::euclidean(3),
        dim: d,
        gens,
        name: format!("spin:{}", format_spin(two_j)),
    })
}

/// Trivial representation: every generator zero, dimension `d`.
pub fn trivial_rep(signature: &Signature, d: usize) -> RepBasis {
    let m = signature.dim();
    let mut gens = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            gens.push(OperatorRep {
                a,
                b,
                matrix: CMatrix::zeros(d, d),
            });
        }
    }
    RepBasis {
        signature: signature.clone(),
        dim: d,
        gens,
        name: "trivial".into(),
    }
}

pub fn format_spin(two_j: u32) -> String {
    if two_j % 2 == 0 {
        format!("{}", two_j / 2)
    } else {
        format!("{}/2", two_j)
    }
}

#[derive(Clone, Debug)]
pub struct AlgebraReport {
    /// max over generator pairs of |[L_AB, L_CD] - bracket model|.
    pub closure_residual: f64,
    /// max over generator triples of the cyclic double-bracket sum.
    pub jacobi_residual: f64,
    pub pairs_checked: usize,
    pub triples_checked: usize,
}

/// Compare every pairwise commutator against the signature bracket and
/// check the Jacobi identity on all triples.
pub fn verify_algebra(basis: &RepBasis) -> AlgebraReport {
    let eta = &basis.signature;
    let i = Complex64::i();
    let mut closure = 0.0_f64;
    let mut pairs = 0;
    for g1 in &basis.gens {
        for g2 in &basis.gens {
            let comm = commutator(&g1.matrix, &g2.matrix);
            let (a, b, c, d) = (g1.a, g1.b, g2.a, g2.b);
            let mut model = CMatrix::zeros(basis.dim, basis.dim);
            if a == c {
                model += basis.generator(b, d) * eta.sign(a);
            }
            if a == d {
                model += basis.generator(c, b) * eta.sign(a);
            }
            if b == c {
                model += basis.generator(d, a) * eta.sign(b);
            }
            if b == d {
                model += basis.generator(a, c) * eta.sign(b);
            }
            let rhs = model * (-i);
            closure = closure.max(max_abs_c(&(comm - rhs)));
            pairs += 1;
        }
    }
    let mut jacobi = 0.0_f64;
    let mut triples = 0;
    for x in &basis.gens {
        for y in &basis.gens {
            for z in &basis.gens {
                let s = commutator(&commutator(&x.matrix, &y.matrix), &z.matrix)
                    + commutator(&commutator(&y.matrix, &z.matrix), &x.matrix)
                    + commutator(&commutator(&z.matrix, &x.matrix), &y.matrix);
                jacobi = jacobi.max(max_abs_c(&s));
                triples += 1;
            }
        }
    }
    AlgebraReport {
        closure_residual: closure,
        jacobi_residual: jacobi,
        pairs_checked: pairs,
        triples_checked: triples,
    }
}

#[derive(Clone, Debug)]
pub struct CasimirReport {
    pub matrix: CMatrix,
    /// max над generators of |[C, L_AB]|.
    pub centrality_residual: f64,
    /// Present when C is a scalar multiple of the identity.
    pub eigenvalue: Option<f64>,
    pub multiplicity: usize,
    /// max |C - (tr C / d) I|.
    pub scalar_deviation: f64,
}

/// Quadratic Casimir C = (1/2) eta^{AC} eta^{BD} L_AB L_CD.
pub fn casimir(basis: &RepBasis) -> CasimirReport {
    let m = basis.signature.dim();
    let d = basis.dim;
    let mut c = CMatrix::zeros(d, d);
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            let l = basis.generator(a, b);
            let w = basis.signature.sign(a) * basis.signature.sign(b);
            c += &l * &l * Complex64::new(0.5 * w, 0.0);
        }
    }
    let mut central = 0.0_f64;
    for g in &basis.gens {
        central = central.max(max_abs_c(&commutator(&c, &g.matrix)));
    }
    let trace = (0..d).map(|k| c[(k, k)]).sum::<Complex64>() / d as f64;
    let mut dev = 0.0_f64;
    for r in 0..d {
        for col in 0..d {
            let model = if r == col { trace } else { Complex64::new(0.0, 0.0) };
            dev = dev.max((c[(r, col)] - model).norm());
        }
    }
    let scalar = dev < 1e-10 * (1.0 + trace.norm());
    CasimirReport {
        matrix: c,
        centrality_residual: central,
        eigenvalue: if scalar { Some(trace.re) } else { None },
        multiplicity: if scalar { d } else { 0 },
        scalar_deviation: dev,
    }
}
