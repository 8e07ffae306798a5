//! The complex group algebra `ℂ(Γ)` and its images under sofic maps.
//!
//! A [`GroupAlgebraElement`] is a finitely supported function `Γ → ℂ`. Through a
//! [`SoficMap`] it lifts to a [`LiftedOperator`], a formal sum of permutation
//! matrices which is densified into a [`DenseMatrix`] only on request. Traces
//! and Hilbert–Schmidt norms are normalized: `tr = Tr/n`, `‖A‖₂ = tr(A*A)^{1/2}`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::group::{Group, GroupElement, Permutation, SoficMap};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Finite formal combination `Σ a_g g`; zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroupAlgebraElement {
    coeffs: BTreeMap<GroupElement, Complex64>,
}

impl GroupAlgebraElement {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn basis(g: GroupElement) -> Self {
        Self::from_terms([(g, ONE)])
    }

    pub fn identity(group: &Group) -> Self {
        Self::basis(group.identity())
    }

    /// Sums repeated elements and prunes zeros.
    pub fn from_terms(terms: impl IntoIterator<Item = (GroupElement, Complex64)>) -> Self {
        let mut coeffs: BTreeMap<GroupElement, Complex64> = BTreeMap::new();
        for (g, c) in terms {
            *coeffs.entry(g).or_insert(ZERO) += c;
        }
        coeffs.retain(|_, c| *c != ZERO);
        GroupAlgebraElement { coeffs }
    }

    pub fn coeff(&self, g: &GroupElement) -> Complex64 {
        self.coeffs.get(g).copied().unwrap_or(ZERO)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&GroupElement, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &GroupElement> {
        self.coeffs.keys()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(self.terms().chain(other.terms()).map(|(g, c)| (g.clone(), *c)))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-ONE))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::from_terms(self.terms().map(|(g, c)| (g.clone(), c * s)))
    }

    /// `(Σ a_g g)(Σ b_h h) = Σ_{g,h} a_g b_h gh`.
    pub fn convolve(&self, other: &Self, group: &Group) -> Result<Self> {
        let mut terms = Vec::with_capacity(self.coeffs.len() * other.coeffs.len());
        for (g, a) in self.terms() {
            for (h, b) in other.terms() {
                terms.push((group.multiply(g, h)?, a * b));
            }
        }
        Ok(Self::from_terms(terms))
    }

    /// `(Σ a_g g)* = Σ conj(a_g) g⁻¹`.
    pub fn star(&self, group: &Group) -> Result<Self> {
        let terms = self
            .terms()
            .map(|(g, c)| Ok((group.inverse(g)?, c.conj())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_terms(terms))
    }

    /// `τ(a) = ⟨a δ_e, δ_e⟩`, the identity coefficient.
    pub fn canonical_trace(&self, group: &Group) -> Complex64 {
        self.coeff(&group.identity())
    }

    /// `Σ_g |a_g|²`, which equals `τ(a*a)`.
    pub fn l2_norm_sqr(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum()
    }

    pub fn to_json(&self, group: &Group) -> Value {
        let coeffs: Vec<Value> = self
            .terms()
            .map(|(g, c)| json!({"g": group.format_element(g), "re": c.re, "im": c.im}))
            .collect();
        json!({ "coeffs": coeffs })
    }

    pub fn from_json(group: &Group, value: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("group algebra JSON: {m}"));
        let list = value
            .get("coeffs")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing coeffs"))?;
        let terms = list
            .iter()
            .map(|t| {
                let g = t.get("g").and_then(Value::as_str).ok_or_else(|| bad("missing g"))?;
                let re = t.get("re").and_then(Value::as_f64).unwrap_or(0.0);
                let im = t.get("im").and_then(Value::as_f64).unwrap_or(0.0);
                Ok((group.parse_element(g)?, Complex64::new(re, im)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_terms(terms))
    }
}

/// Square complex matrix with normalized trace conventions.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(pub DMatrix<Complex64>);

impl DenseMatrix {
    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        DenseMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_matrix(m: DMatrix<Complex64>) -> Result<Self> {
        if !m.is_square() {
            return invalid(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols()));
        }
        if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return invalid("matrix has non-finite entries");
        }
        Ok(DenseMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn inner(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        DenseMatrix(self.0.adjoint())
    }

    pub fn mul(&self, other: &Self) -> Self {
        DenseMatrix(&self.0 * &other.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        DenseMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        DenseMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        DenseMatrix(self.0.map(|c| c * s))
    }

    /// `(1/n) Tr`.
    pub fn trace(&self) -> Complex64 {
        let n = self.dim();
        if n == 0 {
            return ZERO;
        }
        self.0.trace() / n as f64
    }

    /// `tr(A*A)^{1/2}` with the normalized trace.
    pub fn hs_norm(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        (self.0.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64).sqrt()
    }

    /// Largest singular value by power iteration on `A*A` (tolerance 1e-10, at most 10 000 steps).
    pub fn op_norm(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        let ata = self.0.adjoint() * &self.0;
        // Fixed irregular start vector so no eigenvector is missed by symmetry.
        let mut v = DVector::from_fn(n, |i, _| {
            Complex64::new(
                1.0 + ((i * 7919) % 101) as f64 / 101.0,
                ((i * 104_729) % 37) as f64 / 74.0,
            )
        });
        v /= Complex64::new(v.norm(), 0.0);
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let w = &ata * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let next = norm;
            v = w / Complex64::new(norm, 0.0);
            if (next - lambda).abs() <= 1e-10 * next.max(1.0) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        (&self.0 - self.0.adjoint()).iter().all(|c| c.norm() <= tol)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let n = self.dim();
        (self.0.adjoint() * &self.0 - DMatrix::<Complex64>::identity(n, n))
            .iter()
            .all(|c| c.norm() <= tol)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.0 - &other.0).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Sparse image `Σ c_k P_k` of a group-algebra element, `P_k` permutation matrices.
///
/// The matrix of a permutation `π` sends `e_j` to `e_{π(j)}`.
#[derive(Clone, Debug)]
pub struct LiftedOperator {
    d: usize,
    terms: Vec<(Permutation, Complex64)>,
}

impl LiftedOperator {
    pub fn new(d: usize, terms: Vec<(Permutation, Complex64)>) -> Result<Self> {
        if terms.iter().any(|(p, _)| p.len() != d) {
            return invalid("permutation size does not match dimension");
        }
        Ok(LiftedOperator { d, terms }.merged())
    }

    pub fn identity(d: usize) -> Self {
        LiftedOperator {
            d,
            terms: vec![(Permutation::identity(d), ONE)],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> &[(Permutation, Complex64)] {
        &self.terms
    }

    fn merged(self) -> Self {
        let mut index: HashMap<Permutation, usize> = HashMap::new();
        let mut out: Vec<(Permutation, Complex64)> = Vec::new();
        for (p, c) in self.terms {
            match index.get(&p) {
                Some(&i) => out[i].1 += c,
                None => {
                    index.insert(p.clone(), out.len());
                    out.push((p, c));
                }
            }
        }
        out.retain(|(_, c)| *c != ZERO);
        LiftedOperator { d: self.d, terms: out }
    }

    pub fn adjoint(&self) -> Self {
        LiftedOperator {
            d: self.d,
            terms: self.terms.iter().map(|(p, c)| (p.inverse(), c.conj())).collect(),
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (p, a) in &self.terms {
            for (q, b) in &other.terms {
                terms.push((p.compose(q), a * b));
            }
        }
        LiftedOperator { d: self.d, terms }.merged()
    }

    pub fn add(&self, other: &Self) -> Self {
        let terms = self.terms.iter().chain(&other.terms).cloned().collect();
        LiftedOperator { d: self.d, terms }.merged()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let terms = self.terms.iter().map(|(p, c)| (p.clone(), c * s)).collect();
        LiftedOperator { d: self.d, terms }.merged()
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.d];
        for (p, c) in &self.terms {
            for (j, x) in v.iter().enumerate() {
                out[p.apply(j)] += c * x;
            }
        }
        out
    }

    /// Normalized trace, `Σ c_k · fix(P_k)/d`.
    pub fn trace(&self) -> Complex64 {
        self.terms
            .iter()
            .map(|(p, c)| c * (p.fixed_points() as f64 / self.d as f64))
            .sum()
    }

    /// Normalized Hilbert–Schmidt norm computed column by column without densifying.
    pub fn hs_norm(&self) -> f64 {
        let mut total = 0.0;
        let mut column: HashMap<usize, Complex64> = HashMap::new();
        for j in 0..self.d {
            column.clear();
            for (p, c) in &self.terms {
                *column.entry(p.apply(j)).or_insert(ZERO) += c;
            }
            total += column.values().map(|c| c.norm_sqr()).sum::<f64>();
        }
        (total / self.d as f64).sqrt()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DMatrix::zeros(self.d, self.d);
        for (p, c) in &self.terms {
            for j in 0..self.d {
                m[(p.apply(j), j)] += c;
            }
        }
        DenseMatrix(m)
    }
}

/// `σ(a) = Σ_g a_g σ(g)`.
pub fn lift(sigma: &SoficMap, a: &GroupAlgebraElement) -> Result<LiftedOperator> {
    let terms = a
        .terms()
        .map(|(g, c)| Ok((sigma.perm(g)?.clone(), *c)))
        .collect::<Result<Vec<_>>>()?;
    LiftedOperator::new(sigma.d(), terms)
}

/// One factor of a *-monomial: `X_var` or `X_var*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StarLetter {
    pub var: usize,
    pub adjoint: bool,
}

/// A *-polynomial: linear combination of words in `X_i, X_i*`. The empty word is the unit.
#[derive(Clone, Debug, Default)]
pub struct StarPolynomial {
    monomials: Vec<(Vec<StarLetter>, Complex64)>,
}

impl StarPolynomial {
    pub fn new(monomials: Vec<(Vec<StarLetter>, Complex64)>) -> Self {
        StarPolynomial {
            monomials: monomials.into_iter().filter(|(_, c)| *c != ZERO).collect(),
        }
    }

    /// Parses e.g. `"X1* X1 - X2 + 2"`: terms separated by `+`/`-`, each an optional
    /// real coefficient followed by space-separated letters `Xk` or `Xk*` (1-based).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("cannot parse *-polynomial '{s}'"));
        let mut monomials = Vec::new();
        let normalized = s.replace('-', "+-");
        for raw in normalized.split('+') {
            let term = raw.trim();
            if term.is_empty() {
                continue;
            }
            let (sign, body) = match term.strip_prefix('-') {
                Some(rest) => (-1.0, rest.trim()),
                None => (1.0, term),
            };
            let mut coeff = sign;
            let mut word = Vec::new();
            for tok in body.split_whitespace() {
                if let Some(rest) = tok.strip_prefix('X') {
                    let (num, adjoint) = match rest.strip_suffix('*') {
                        Some(n) => (n, true),
                        None => (rest, false),
                    };
                    let var: usize = num.parse().map_err(|_| bad())?;
                    if var == 0 {
                        return Err(bad());
                    }
                    word.push(StarLetter { var: var - 1, adjoint });
                } else {
                    coeff *= tok.parse::<f64>().map_err(|_| bad())?;
                }
            }
            monomials.push((word, Complex64::new(coeff, 0.0)));
        }
        Ok(Self::new(monomials))
    }

    pub fn monomials(&self) -> &[(Vec<StarLetter>, Complex64)] {
        &self.monomials
    }

    pub fn arity(&self) -> usize {
        self.monomials
            .iter()
            .flat_map(|(w, _)| w.iter().map(|l| l.var + 1))
            .max()
            .unwrap_or(0)
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        if self.arity() > n {
            return invalid(format!("polynomial uses {} variables, {n} supplied", self.arity()));
        }
        Ok(())
    }

    /// `P(a₁, …, aₙ)` in `ℂ(Γ)`.
    pub fn eval_algebra(&self, group: &Group, args: &[GroupAlgebraElement]) -> Result<GroupAlgebraElement> {
        self.check_arity(args.len())?;
        let stars = args.iter().map(|a| a.star(group)).collect::<Result<Vec<_>>>()?;
        let mut total = GroupAlgebraElement::zero();
        for (word, c) in &self.monomials {
            let mut acc = GroupAlgebraElement::identity(group);
            for l in word {
                let f = if l.adjoint { &stars[l.var] } else { &args[l.var] };
                acc = acc.convolve(f, group)?;
            }
            total = total.add(&acc.scale(*c));
        }
        Ok(total)
    }

    /// `P(A₁, …, Aₙ)` on sparse lifts.
    pub fn eval_lifted(&self, d: usize, args: &[LiftedOperator]) -> Result<LiftedOperator> {
        self.check_arity(args.len())?;
        let adj: Vec<LiftedOperator> = args.iter().map(LiftedOperator::adjoint).collect();
        let mut total = LiftedOperator::new(d, Vec::new())?;
        for (word, c) in &self.monomials {
            let mut acc = LiftedOperator::identity(d);
            for l in word {
                let f = if l.adjoint { &adj[l.var] } else { &args[l.var] };
                acc = acc.compose(f);
            }
            total = total.add(&acc.scale(*c));
        }
        Ok(total)
    }

    /// `P(A₁, …, Aₙ)` on dense matrices.
    pub fn eval_dense(&self, n: usize, args: &[DenseMatrix]) -> Result<DenseMatrix> {
        self.check_arity(args.len())?;
        let mut total = DenseMatrix::zeros(n);
        for (word, c) in &self.monomials {
            let mut acc = DenseMatrix::identity(n);
            for l in word {
                let f = if l.adjoint {
                    args[l.var].adjoint()
                } else {
                    args[l.var].clone()
                };
                acc = acc.mul(&f);
            }
            total = total.add(&acc.scale(*c));
        }
        Ok(total)
    }
}

/// `‖P(σ(a₁), …, σ(aₙ)) − σ(P(a₁, …, aₙ))‖₂`.
pub fn embedding_defect(sigma: &SoficMap, poly: &StarPolynomial, args: &[GroupAlgebraElement]) -> Result<f64> {
    let lifted = args.iter().map(|a| lift(sigma, a)).collect::<Result<Vec<_>>>()?;
    let image = poly.eval_lifted(sigma.d(), &lifted)?;
    let algebra_value = poly.eval_algebra(sigma.group(), args)?;
    let direct = lift(sigma, &algebra_value)?;
    Ok(image.add(&direct.scale(-ONE)).hs_norm())
}
