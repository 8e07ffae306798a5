//! Finite-dimensional unitary representations of finite groups, singularity,
//! Lebesgue decomposition, and spectral-window entropy certificates.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::algebra::{lift, DenseMatrix, GroupAlgebraElement};
use crate::error::{invalid, Error, Result};
use crate::group::{Group, GroupElement, Permutation, SoficMap};

const UNITARY_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-8;

type CMat = DMatrix<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

trait MaxAbs {
    fn max_abs(&self) -> f64;
}

impl MaxAbs for CMat {
    fn max_abs(&self) -> f64 {
        self.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }
}

fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// A unitary representation with the image of every group element.
#[derive(Clone, Debug)]
pub struct FiniteDimRep {
    group: Group,
    dim: usize,
    generators: Vec<CMat>,
    images: BTreeMap<GroupElement, CMat>,
    constants_removed: bool,
}

impl FiniteDimRep {
    /// Generator images in the order of `group.generators()`; relations are checked by
    /// building every element image and requiring agreement to 1e−10.
    pub fn new(group: Group, generators: Vec<CMat>) -> Result<Self> {
        let gens = group.generators();
        if gens.len() != generators.len() {
            return invalid(format!(
                "{} has {} generators, got {} matrices",
                group,
                gens.len(),
                generators.len()
            ));
        }
        if group.order().is_none() {
            return invalid("representations need a finite group (use a cyclic quotient for Z)");
        }
        let dim = generators.first().map_or(0, |m| m.nrows());
        if !generators.is_empty() && generators.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return invalid("generator images must be square of equal size");
        }
        for (g, m) in gens.iter().zip(&generators) {
            if (m.adjoint() * m - CMat::identity(dim, dim)).max_abs() > UNITARY_TOL {
                return invalid(format!("image of {} is not unitary", group.format_element(g)));
            }
        }
        let mut images = BTreeMap::new();
        images.insert(group.identity(), CMat::identity(dim, dim));
        let mut queue = VecDeque::from([group.identity()]);
        while let Some(h) = queue.pop_front() {
            let mh = images[&h].clone();
            for (s, ms) in gens.iter().zip(&generators) {
                let sh = group.multiply(s, &h)?;
                let m = ms * &mh;
                match images.get(&sh) {
                    Some(prev) => {
                        if (prev - &m).max_abs() > UNITARY_TOL {
                            return invalid(format!(
                                "generator images violate a relation of {group} at {}",
                                group.format_element(&sh)
                            ));
                        }
                    }
                    None => {
                        images.insert(sh.clone(), m);
                        queue.push_back(sh);
                    }
                }
            }
        }
        Ok(FiniteDimRep {
            group,
            dim,
            generators,
            images,
            constants_removed: false,
        })
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[CMat] {
        &self.generators
    }

    pub fn constants_removed(&self) -> bool {
        self.constants_removed
    }

    pub fn image(&self, g: &GroupElement) -> Result<&CMat> {
        self.images
            .get(g)
            .ok_or_else(|| Error::GroupMismatch(format!("{g:?} is not an element of {}", self.group)))
    }

    /// `ρ(x) = Σ x_g ρ(g)`.
    pub fn eval(&self, x: &GroupAlgebraElement) -> Result<CMat> {
        let mut out = CMat::zeros(self.dim, self.dim);
        for (g, a) in x.terms() {
            out += self.image(g)? * *a;
        }
        Ok(out)
    }

    /// Unnormalized character `g ↦ Tr ρ(g)`.
    pub fn character(&self) -> BTreeMap<GroupElement, Complex64> {
        self.images.iter().map(|(g, m)| (g.clone(), m.trace())).collect()
    }

    /// Restriction to the span of the orthonormal columns of `basis` (assumed invariant).
    pub fn restrict(&self, basis: &CMat) -> Result<FiniteDimRep> {
        let gens = self.generators.iter().map(|m| basis.adjoint() * m * basis).collect();
        let mut r = FiniteDimRep::new(self.group.clone(), gens)?;
        r.constants_removed = self.constants_removed;
        Ok(r)
    }

    /// Largest `‖ρ(s)B − B·(B*ρ(s)B)‖` over generators.
    pub fn invariance_residual(&self, basis: &CMat) -> f64 {
        self.generators
            .iter()
            .map(|m| {
                let mb = m * basis;
                (&mb - basis * (basis.adjoint() * &mb)).max_abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Value {
        let gens = self.group.generators();
        json!({
            "group": self.group.to_string(),
            "dim": self.dim,
            "generators": gens.iter().zip(&self.generators).map(|(g, m)| json!({
                "name": self.group.format_element(g),
                "matrix": (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect::<Vec<_>>()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "constants_removed": self.constants_removed,
        })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("representation JSON: {m}"));
        let group = Group::parse(value["group"].as_str().ok_or_else(|| bad("missing group"))?)?;
        let dim = value["dim"].as_u64().ok_or_else(|| bad("missing dim"))? as usize;
        let gens = value["generators"]
            .as_array()
            .ok_or_else(|| bad("missing generators"))?;
        let order = group.generators();
        let mut mats = vec![None; order.len()];
        for g in gens {
            let name = g["name"].as_str().ok_or_else(|| bad("generator without name"))?;
            let el = group.parse_element(name)?;
            let slot = order
                .iter()
                .position(|x| *x == el)
                .ok_or_else(|| bad("unknown generator"))?;
            let rows = g["matrix"].as_array().ok_or_else(|| bad("missing matrix"))?;
            let mut m = CMat::zeros(dim, dim);
            if rows.len() != dim {
                return Err(bad("matrix has wrong size"));
            }
            for (i, row) in rows.iter().enumerate() {
                let row = row
                    .as_array()
                    .filter(|r| r.len() == dim)
                    .ok_or_else(|| bad("matrix has wrong size"))?;
                for (j, e) in row.iter().enumerate() {
                    let re = e[0].as_f64().ok_or_else(|| bad("entry must be [re, im]"))?;
                    let im = e[1].as_f64().ok_or_else(|| bad("entry must be [re, im]"))?;
                    m[(i, j)] = Complex64::new(re, im);
                }
            }
            mats[slot] = Some(m);
        }
        let mats = mats
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("generator missing"))?;
        let mut r = FiniteDimRep::new(group, mats)?;
        r.constants_removed = value["constants_removed"].as_bool().unwrap_or(false);
        Ok(r)
    }
}

/// Direct sum of representations of the same group.
pub fn direct_sum(reps: &[&FiniteDimRep]) -> Result<FiniteDimRep> {
    let group = reps
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty direct sum".into()))?
        .group
        .clone();
    if reps.iter().any(|r| r.group != group) {
        return Err(Error::GroupMismatch(
            "direct sum of representations of different groups".into(),
        ));
    }
    let n: usize = reps.iter().map(|r| r.dim).sum();
    let gens = (0..group.generators().len())
        .map(|i| {
            let mut m = CMat::zeros(n, n);
            let mut off = 0;
            for r in reps {
                m.view_mut((off, off), (r.dim, r.dim)).copy_from(&r.generators[i]);
                off += r.dim;
            }
            m
        })
        .collect();
    FiniteDimRep::new(group, gens)
}

/// Conjugation `U* ρ U` by a unitary.
pub fn conjugate(rep: &FiniteDimRep, u: &CMat) -> Result<FiniteDimRep> {
    let gens = rep.generators.iter().map(|m| u.adjoint() * m * u).collect();
    FiniteDimRep::new(rep.group.clone(), gens)
}

fn perm_matrix(images: &[usize]) -> CMat {
    let n = images.len();
    let mut m = CMat::zeros(n, n);
    for (j, &i) in images.iter().enumerate() {
        m[(i, j)] = c(1.0);
    }
    m
}

/// `(λ(g)f)(x) = f(g⁻¹x)`: permutation matrices of left translation on the sorted elements.
pub fn left_regular_rep(group: &Group) -> Result<FiniteDimRep> {
    let elements = group.elements()?;
    let index: BTreeMap<&GroupElement, usize> = elements.iter().enumerate().map(|(i, g)| (g, i)).collect();
    let gens = group
        .generators()
        .iter()
        .map(|s| {
            let images = elements
                .iter()
                .map(|h| Ok(index[&group.multiply(s, h)?]))
                .collect::<Result<Vec<_>>>()?;
            Ok(perm_matrix(&images))
        })
        .collect::<Result<Vec<_>>>()?;
    FiniteDimRep::new(group.clone(), gens)
}

/// A finite group acting on `{0, .., n-1}` with an invariant probability vector.
#[derive(Clone, Debug)]
pub struct FiniteAction {
    group: Group,
    generator_perms: Vec<Permutation>,
    weights: Vec<f64>,
}

impl FiniteAction {
    /// Generator permutations in the order of `group.generators()`.
    pub fn new(group: Group, generator_perms: Vec<Permutation>, weights: Vec<f64>) -> Result<Self> {
        if generator_perms.len() != group.generators().len() {
            return invalid("one permutation per generator is required");
        }
        let n = weights.len();
        if generator_perms.iter().any(|p| p.len() != n) {
            return invalid("permutation size differs from the number of points");
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return invalid("weights must be positive and sum to 1");
        }
        for p in &generator_perms {
            if (0..n).any(|x| (weights[p.apply(x)] - weights[x]).abs() > 1e-12) {
                return invalid("the action does not preserve the measure");
            }
        }
        Ok(FiniteAction {
            group,
            generator_perms,
            weights,
        })
    }

    /// Left translation of a finite group on itself with uniform measure.
    pub fn translation(group: &Group) -> Result<Self> {
        let elements = group.elements()?;
        let index: BTreeMap<&GroupElement, usize> = elements.iter().enumerate().map(|(i, g)| (g, i)).collect();
        let perms = group
            .generators()
            .iter()
            .map(|s| {
                let images = elements
                    .iter()
                    .map(|h| Ok(index[&group.multiply(s, h)?] as u32))
                    .collect::<Result<Vec<_>>>()?;
                Permutation::from_images(images)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = elements.len();
        Self::new(group.clone(), perms, vec![1.0 / n as f64; n])
    }

    /// Every group element fixes every point.
    pub fn trivial(group: &Group, n: usize) -> Result<Self> {
        let perms = group.generators().iter().map(|_| Permutation::identity(n)).collect();
        Self::new(group.clone(), perms, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Orthonormal basis of the range of a self-adjoint projection.
fn projection_range(p: &CMat) -> CMat {
    let n = p.nrows();
    if n == 0 {
        return CMat::zeros(0, 0);
    }
    let h = (p + p.adjoint()) * c(0.5);
    let eig = h.symmetric_eigen();
    let cols: Vec<DVector<Complex64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        CMat::zeros(n, 0)
    } else {
        CMat::from_columns(&cols)
    }
}

/// `(ρ(g)f)(x) = f(g⁻¹x)` on `L²(μ)`, in the orthonormal basis `δ_x/√μ(x)`;
/// optionally restricted to the complement of the constants.
pub fn koopman_rep(action: &FiniteAction, remove_constants: bool) -> Result<FiniteDimRep> {
    let gens: Vec<CMat> = action
        .generator_perms
        .iter()
        .map(|p| perm_matrix(&p.images().iter().map(|&x| x as usize).collect::<Vec<_>>()))
        .collect();
    let full = FiniteDimRep::new(action.group.clone(), gens)?;
    if !remove_constants {
        return Ok(full);
    }
    let n = action.len();
    let one = DVector::from_iterator(n, action.weights.iter().map(|w| c(w.sqrt())));
    let complement = CMat::identity(n, n) - &one * one.adjoint();
    let basis = projection_range(&complement);
    let mut r = full.restrict(&basis)?;
    r.constants_removed = true;
    Ok(r)
}

/// An irreducible representation with its character.
#[derive(Clone, Debug)]
pub struct Irrep {
    pub name: String,
    pub rep: FiniteDimRep,
    pub character: BTreeMap<GroupElement, Complex64>,
}

fn cyclic_factors(group: &Group) -> Option<Vec<u64>> {
    match group {
        Group::Cyclic(n) => Some(vec![*n]),
        Group::Product(fs) => fs
            .iter()
            .map(|f| match f {
                Group::Cyclic(n) => Some(*n),
                _ => None,
            })
            .collect(),
        _ => None,
    }
}

fn residues(g: &GroupElement) -> Vec<u64> {
    match g {
        GroupElement::Residue(r) => vec![*r],
        GroupElement::Tuple(xs) => xs.iter().flat_map(residues).collect(),
        _ => Vec::new(),
    }
}

fn perm_sign(p: &[u8]) -> f64 {
    let mut seen = vec![false; p.len()];
    let mut sign = 1.0;
    for i in 0..p.len() {
        if seen[i] {
            continue;
        }
        let mut len = 0;
        let mut j = i;
        while !seen[j] {
            seen[j] = true;
            j = p[j] as usize;
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

/// Irreducible representations of abelian groups of order ≤ 16 and of `S₃`.
pub fn irreps(group: &Group) -> Result<Vec<Irrep>> {
    let gens = group.generators();
    let mut out = Vec::new();
    if let Some(moduli) = cyclic_factors(group) {
        let order: u64 = moduli.iter().product();
        if order > 16 {
            return Err(Error::Infeasible(format!(
                "character tables are provided for abelian groups up to order 16, {group} has {order}"
            )));
        }
        for idx in 0..order {
            let mut rest = idx;
            let freq: Vec<u64> = moduli
                .iter()
                .map(|&n| {
                    let f = rest % n;
                    rest /= n;
                    f
                })
                .collect();
            let chi = |g: &GroupElement| {
                let phase: f64 = residues(g)
                    .iter()
                    .zip(&freq)
                    .zip(&moduli)
                    .map(|((&x, &m), &n)| 2.0 * PI * (x * m) as f64 / n as f64)
                    .sum();
                Complex64::from_polar(1.0, phase)
            };
            let mats = gens.iter().map(|s| CMat::from_element(1, 1, chi(s))).collect();
            let rep = FiniteDimRep::new(group.clone(), mats)?;
            out.push(Irrep {
                name: format!("chi{freq:?}"),
                character: rep.character(),
                rep,
            });
        }
        return Ok(out);
    }
    if *group == Group::Symmetric(3) {
        let triv = FiniteDimRep::new(
            group.clone(),
            gens.iter().map(|_| CMat::from_element(1, 1, c(1.0))).collect(),
        )?;
        let sign_of = |g: &GroupElement| match g {
            GroupElement::Perm(p) => perm_sign(p),
            _ => 1.0,
        };
        let sign = FiniteDimRep::new(
            group.clone(),
            gens.iter().map(|s| CMat::from_element(1, 1, c(sign_of(s)))).collect(),
        )?;
        // permutation action restricted to the sum-zero plane
        let s2 = 2f64.sqrt();
        let s6 = 6f64.sqrt();
        let basis = CMat::from_row_slice(
            3,
            2,
            &[
                c(1.0 / s2),
                c(1.0 / s6),
                c(-1.0 / s2),
                c(1.0 / s6),
                c(0.0),
                c(-2.0 / s6),
            ],
        );
        let mats = gens
            .iter()
            .map(|s| match s {
                GroupElement::Perm(p) => {
                    let m = perm_matrix(&p.iter().map(|&x| x as usize).collect::<Vec<_>>());
                    basis.adjoint() * m * &basis
                }
                _ => unreachable!(),
            })
            .collect();
        let standard = FiniteDimRep::new(group.clone(), mats)?;
        for (name, rep) in [("trivial", triv), ("sign", sign), ("standard", standard)] {
            out.push(Irrep {
                name: name.into(),
                character: rep.character(),
                rep,
            });
        }
        return Ok(out);
    }
    Err(Error::Infeasible(format!(
        "no character table for {group}; supported: abelian groups of order <= 16 and S3"
    )))
}

/// `⟨χ₁, χ₂⟩ = (1/|G|) Σ conj(χ₁(g)) χ₂(g)`.
pub fn character_inner(a: &BTreeMap<GroupElement, Complex64>, b: &BTreeMap<GroupElement, Complex64>) -> f64 {
    let s: Complex64 = a
        .iter()
        .map(|(g, x)| x.conj() * b.get(g).copied().unwrap_or_default())
        .sum();
    s.re / a.len() as f64
}

/// Solutions of `ρ₂(s)T = Tρ₁(s)` over the generators.
#[derive(Clone, Debug)]
pub struct IntertwinerSpace {
    /// `dim ρ₂ × dim ρ₁` matrices forming an orthonormal basis (Frobenius).
    pub basis: Vec<CMat>,
}

impl IntertwinerSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

pub fn intertwiners(rho1: &FiniteDimRep, rho2: &FiniteDimRep) -> Result<IntertwinerSpace> {
    if rho1.group != rho2.group {
        return Err(Error::GroupMismatch(format!("{} vs {}", rho1.group, rho2.group)));
    }
    let (n1, n2) = (rho1.dim, rho2.dim);
    let unknowns = n1 * n2;
    if unknowns == 0 {
        return Ok(IntertwinerSpace { basis: Vec::new() });
    }
    let eqs = rho1.generators.len() * unknowns;
    let rows = eqs.max(unknowns);
    let mut m = CMat::zeros(rows, unknowns);
    let i1 = CMat::identity(n1, n1);
    let i2 = CMat::identity(n2, n2);
    for (k, (a, b)) in rho1.generators.iter().zip(&rho2.generators).enumerate() {
        // vec(ρ₂T − Tρ₁) = (I ⊗ ρ₂ − ρ₁ᵀ ⊗ I) vec(T), column-major
        let block = i1.kronecker(b) - a.transpose().kronecker(&i2);
        m.view_mut((k * unknowns, 0), (unknowns, unknowns)).copy_from(&block);
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let scale = svd.singular_values.max().max(1.0);
    let basis = (0..unknowns)
        .filter(|&i| svd.singular_values[i] <= RANK_TOL * scale)
        .map(|i| {
            let row = v_t.row(i).adjoint();
            CMat::from_column_slice(n2, n1, row.as_slice())
        })
        .collect();
    Ok(IntertwinerSpace { basis })
}

/// `dim Hom(ρ₁, ρ₂)`.
pub fn hom_dimension(rho1: &FiniteDimRep, rho2: &FiniteDimRep) -> Result<usize> {
    Ok(intertwiners(rho1, rho2)?.dim())
}

pub fn is_singular(rho1: &FiniteDimRep, rho2: &FiniteDimRep) -> Result<bool> {
    Ok(hom_dimension(rho1, rho2)? == 0)
}

/// `dim π / |G| · Σ conj(χ_π(g)) g`.
fn central_idempotent(irrep: &Irrep) -> GroupAlgebraElement {
    let n = irrep.character.len() as f64;
    let d = irrep.rep.dim as f64;
    GroupAlgebraElement::from_terms(irrep.character.iter().map(|(g, x)| (g.clone(), x.conj() * (d / n))))
}

fn multiplicity(irrep: &Irrep, rho: &FiniteDimRep) -> usize {
    character_inner(&irrep.character, &rho.character()).round().max(0.0) as usize
}

/// Invariant blocks of `ρ₁`: the part singular to `ρ₂` and the part absolutely
/// continuous with respect to it.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    /// Orthonormal columns spanning the singular block.
    pub singular: CMat,
    pub continuous: CMat,
    pub singular_rep: FiniteDimRep,
    pub continuous_rep: FiniteDimRep,
    /// Irreps of `ρ₁` with their multiplicities and whether they occur in `ρ₂`.
    pub constituents: Vec<(String, usize, bool)>,
}

impl DecompositionResult {
    pub fn residual(&self, rho1: &FiniteDimRep) -> f64 {
        rho1.invariance_residual(&self.singular)
            .max(rho1.invariance_residual(&self.continuous))
    }
}

pub fn lebesgue_decompose(rho1: &FiniteDimRep, rho2: &FiniteDimRep) -> Result<DecompositionResult> {
    if rho1.group != rho2.group {
        return Err(Error::GroupMismatch(format!("{} vs {}", rho1.group, rho2.group)));
    }
    let group = &rho1.group;
    let n = rho1.dim;
    let mut ps = CMat::zeros(n, n);
    let mut pc = CMat::zeros(n, n);
    let mut constituents = Vec::new();
    for irrep in irreps(group)? {
        let m1 = multiplicity(&irrep, rho1);
        if m1 == 0 {
            continue;
        }
        let shared = multiplicity(&irrep, rho2) > 0;
        let e = rho1.eval(&central_idempotent(&irrep))?;
        if shared {
            pc += e;
        } else {
            ps += e;
        }
        constituents.push((irrep.name.clone(), m1, shared));
    }
    let singular = projection_range(&ps);
    let continuous = projection_range(&pc);
    Ok(DecompositionResult {
        singular_rep: rho1.restrict(&singular)?,
        continuous_rep: rho1.restrict(&continuous)?,
        singular,
        continuous,
        constituents,
    })
}

/// A group-algebra element separating two singular representations.
#[derive(Clone, Debug)]
pub struct SingularityWitness {
    pub element: GroupAlgebraElement,
    /// `‖ρ₁(x*x) − 1‖`.
    pub rho1_defect: f64,
    /// `‖ρ₂(x*x)‖`.
    pub rho2_norm: f64,
    /// `max(‖ρ₁(x)‖, ‖ρ₂(x)‖)`.
    pub contraction: f64,
}

impl SingularityWitness {
    pub fn passes(&self, tol: f64) -> bool {
        self.rho1_defect <= tol && self.rho2_norm <= tol && self.contraction <= 1.0 + tol
    }
}

/// Sum of the central idempotents of the irreducible constituents of `ρ₁`.
pub fn singularity_witness(rho1: &FiniteDimRep, rho2: &FiniteDimRep) -> Result<SingularityWitness> {
    let k = hom_dimension(rho1, rho2)?;
    if k > 0 {
        return Err(Error::NotSingular(format!(
            "Hom(ρ₁, ρ₂) has dimension {k}, and an element with ρ₁(x*x) = 1, ρ₂(x*x) = 0 would force it to vanish"
        )));
    }
    let group = &rho1.group;
    let mut x = GroupAlgebraElement::zero();
    for irrep in irreps(group)? {
        if multiplicity(&irrep, rho1) > 0 {
            x = x.add(&central_idempotent(&irrep));
        }
    }
    let xx = x.star(group)?.convolve(&x, group)?;
    let n1 = rho1.dim;
    let rho1_defect = op_norm(&(rho1.eval(&xx)? - CMat::identity(n1, n1)));
    let rho2_norm = op_norm(&rho2.eval(&xx)?);
    let contraction = op_norm(&rho1.eval(&x)?).max(op_norm(&rho2.eval(&x)?));
    Ok(SingularityWitness {
        element: x,
        rho1_defect,
        rho2_norm,
        contraction,
    })
}

/// Spectral projection of a self-adjoint matrix onto the eigenvalues in `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct SpectralWindow {
    pub projection: DenseMatrix,
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
}

pub fn spectral_window_projection(a: &DenseMatrix, lo: f64, hi: f64) -> Result<SpectralWindow> {
    if !a.is_self_adjoint(1e-9) {
        return invalid("spectral projection needs a self-adjoint matrix");
    }
    let m = a.inner();
    let n = m.nrows();
    let h = (m + m.adjoint()) * c(0.5);
    let eig = h.symmetric_eigen();
    let mut p = CMat::zeros(n, n);
    let mut rank = 0;
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if l >= lo && l <= hi {
            let v = eig.eigenvectors.column(i);
            p += v * v.adjoint();
            rank += 1;
        }
    }
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(SpectralWindow {
        projection: DenseMatrix::from_matrix(p)?,
        eigenvalues,
        rank,
    })
}

/// Outcome of the spectral-window checks for `A = σ(α)*σ(α)`.
#[derive(Clone, Debug)]
pub struct WindowReport {
    pub d: usize,
    pub epsilon: f64,
    /// Normalized traces.
    pub trace_p: f64,
    pub trace_a: f64,
    pub trace_bound: f64,
    pub trace_ok: bool,
    /// `(‖Av − v‖, ‖pv − v‖)` for each supplied vector with `‖Av − v‖ < 6ε`.
    pub chebyshev: Vec<(f64, f64)>,
    pub chebyshev_ok: bool,
    pub skipped_vectors: usize,
}

/// `p = χ_{[1−√ε, 1+√ε]}(A)`; checks `tr p ≤ tr A/(1−√ε)` and `‖pv − v‖ ≤ 6√ε`
/// whenever `‖Av − v‖ < 6ε` (norms in `ℓ²(d, u_d)`).
pub fn window_trace_bound_check(
    alpha: &GroupAlgebraElement,
    sigma: &SoficMap,
    epsilon: f64,
    vectors: &[DVector<Complex64>],
) -> Result<WindowReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid("epsilon must lie in (0, 1)");
    }
    let l = lift(sigma, alpha)?;
    let a = l.adjoint().compose(&l).to_dense();
    let r = epsilon.sqrt();
    let w = spectral_window_projection(&a, 1.0 - r, 1.0 + r)?;
    let d = sigma.d();
    let trace_p = w.rank as f64 / d as f64;
    let trace_a = a.trace().re;
    let trace_bound = trace_a / (1.0 - r);
    let norm = |v: &DVector<Complex64>| (v.norm_squared() / d as f64).sqrt();
    let mut chebyshev = Vec::new();
    let mut skipped = 0;
    for v in vectors {
        if v.len() != d {
            return invalid("vector length differs from d");
        }
        let av = a.inner() * v;
        let res = norm(&(&av - v));
        if res < 6.0 * epsilon {
            let pv = w.projection.inner() * v;
            chebyshev.push((res, norm(&(pv - v))));
        } else {
            skipped += 1;
        }
    }
    let chebyshev_ok = chebyshev.iter().all(|&(_, x)| x <= 6.0 * r + 1e-12);
    Ok(WindowReport {
        d,
        epsilon,
        trace_p,
        trace_a,
        trace_bound,
        trace_ok: trace_p <= trace_bound + 1e-12,
        chebyshev,
        chebyshev_ok,
        skipped_vectors: skipped,
    })
}

/// `2·N·tr(p)·log((3M+ε)/ε)`; without a measured `tr(p)` the bound `tr(p) < 2η` is used.
pub fn entropy_upper_certificate(n: usize, eta: f64, m: f64, epsilon: f64, trace_p: Option<f64>) -> Result<f64> {
    if n == 0 || !(m > 0.0) || !(epsilon > 0.0) {
        return invalid("N, M and epsilon must be positive");
    }
    let t = match trace_p {
        Some(t) if (0.0..=1.0).contains(&t) => t,
        Some(t) => return invalid(format!("trace of a projection must lie in [0,1], got {t}")),
        None if eta > 0.0 => (2.0 * eta).min(1.0),
        None => return invalid("eta must be positive"),
    };
    Ok(2.0 * n as f64 * t * ((3.0 * m + epsilon) / epsilon).ln())
}

/// `(1/n) Σ_{k<n} e^{-iθk} g^k` in the group algebra of `ℤ`: `α*α` has trace `1/n`
/// while `α` nearly fixes every `e^{iθ}`-eigenvector of the shift.
pub fn fejer_witness(n: usize, theta: f64) -> Result<GroupAlgebraElement> {
    if n == 0 {
        return invalid("n must be positive");
    }
    Ok(GroupAlgebraElement::from_terms((0..n).map(|k| {
        (
            GroupElement::Int(k as i64),
            Complex64::from_polar(1.0 / n as f64, -theta * k as f64),
        )
    })))
}

/// Window check plus certificate for one witness.
#[derive(Clone, Debug)]
pub struct CertificateReport {
    pub window: WindowReport,
    pub bound: f64,
}

pub fn certify_with_witness(
    alpha: &GroupAlgebraElement,
    sigma: &SoficMap,
    epsilon: f64,
    nets: usize,
    m: f64,
) -> Result<CertificateReport> {
    let window = window_trace_bound_check(alpha, sigma, epsilon, &[])?;
    let bound = entropy_upper_certificate(nets, window.trace_a, m, epsilon, Some(window.trace_p))?;
    Ok(CertificateReport { window, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::cyclic_sofic_map;

    fn z(n: u64) -> Group {
        Group::Cyclic(n)
    }

    #[test]
    fn regular_rep_basics() {
        let l2 = left_regular_rep(&z(2)).unwrap();
        assert_eq!(l2.generators()[0], perm_matrix(&[1, 0]));
        let l3 = left_regular_rep(&z(3)).unwrap();
        let chi = l3.character();
        assert_eq!(chi[&GroupElement::Residue(0)].re, 3.0);
        assert_eq!(chi[&GroupElement::Residue(1)].norm(), 0.0);
        let g = l3.generators()[0].clone();
        let mut ev: Vec<f64> = g.map(|x| x.re).complex_eigenvalues().iter().map(|x| x.arg()).collect();
        ev.sort_by(f64::total_cmp);
        let want = [-2.0 * PI / 3.0, 0.0, 2.0 * PI / 3.0];
        for (a, b) in ev.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn koopman_examples() {
        let a = FiniteAction::translation(&z(4)).unwrap();
        let full = koopman_rep(&a, false).unwrap();
        let lam = left_regular_rep(&z(4)).unwrap();
        assert_eq!(full.character(), lam.character());
        let rho0 = koopman_rep(&a, true).unwrap();
        assert_eq!(rho0.dim(), 3);
        for (g, x) in rho0.character() {
            let want = lam.character()[&g] - 1.0;
            assert!((x - want).norm() < 1e-12);
        }
        let swap = koopman_rep(&FiniteAction::translation(&z(2)).unwrap(), true).unwrap();
        assert!((swap.generators()[0][(0, 0)] + 1.0).norm() < 1e-12);
        let triv = koopman_rep(&FiniteAction::trivial(&z(3), 4).unwrap(), true).unwrap();
        assert_eq!(triv.dim(), 3);
        assert!((triv.generators()[0].clone() - CMat::identity(3, 3)).max_abs() < 1e-12);
        let bad = FiniteAction::new(
            z(2),
            vec![Permutation::from_images(vec![1, 0]).unwrap()],
            vec![0.3, 0.7],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn hom_dimensions() {
        let ir = irreps(&z(2)).unwrap();
        assert_eq!(hom_dimension(&ir[0].rep, &ir[1].rep).unwrap(), 0);
        let l2 = left_regular_rep(&z(2)).unwrap();
        assert_eq!(hom_dimension(&l2, &l2).unwrap(), 2);
        let l3 = left_regular_rep(&z(3)).unwrap();
        let t3 = &irreps(&z(3)).unwrap()[0].rep;
        assert_eq!(hom_dimension(t3, &l3).unwrap(), 1);
        let rho0 = koopman_rep(&FiniteAction::translation(&z(4)).unwrap(), true).unwrap();
        assert!(!is_singular(&rho0, &left_regular_rep(&z(4)).unwrap()).unwrap());
    }

    #[test]
    fn s3_irreps_are_pairwise_singular() {
        let ir = irreps(&Group::Symmetric(3)).unwrap();
        assert_eq!(ir.iter().map(|i| i.rep.dim()).collect::<Vec<_>>(), vec![1, 1, 2]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(is_singular(&ir[i].rep, &ir[j].rep).unwrap(), i != j);
            }
        }
    }

    #[test]
    fn decomposition_examples() {
        let ir = irreps(&z(2)).unwrap();
        let sum = direct_sum(&[&ir[0].rep, &ir[1].rep]).unwrap();
        let dec = lebesgue_decompose(&sum, &ir[1].rep).unwrap();
        assert_eq!(dec.singular.ncols(), 1);
        assert_eq!(dec.continuous.ncols(), 1);
        assert!((dec.singular_rep.generators()[0][(0, 0)] - 1.0).norm() < 1e-12);
        assert!(dec.residual(&sum) < 1e-9);
        let lam = left_regular_rep(&z(2)).unwrap();
        assert_eq!(lebesgue_decompose(&sum, &lam).unwrap().singular.ncols(), 0);
        assert_eq!(
            lebesgue_decompose(&ir[0].rep, &ir[1].rep).unwrap().continuous.ncols(),
            0
        );
    }

    #[test]
    fn witness_examples() {
        let ir = irreps(&z(2)).unwrap();
        let w = singularity_witness(&ir[0].rep, &ir[1].rep).unwrap();
        let half = Complex64::new(0.5, 0.0);
        assert_eq!(w.element.coeff(&GroupElement::Residue(0)), half);
        assert_eq!(w.element.coeff(&GroupElement::Residue(1)), half);
        assert!(w.passes(1e-10));
        let w = singularity_witness(&ir[1].rep, &ir[0].rep).unwrap();
        assert!((w.element.coeff(&GroupElement::Residue(1)) + half).norm() < 1e-15);
        let err = singularity_witness(&ir[0].rep, &ir[0].rep).unwrap_err().to_string();
        assert!(err.contains("witness cannot exist"));
        let ir3 = irreps(&z(3)).unwrap();
        let rest = direct_sum(&[&ir3[1].rep, &ir3[2].rep]).unwrap();
        assert!(singularity_witness(&ir3[0].rep, &rest).unwrap().passes(1e-10));
    }

    #[test]
    fn window_projection_examples() {
        let id = DenseMatrix::identity(3);
        assert_eq!(spectral_window_projection(&id, 0.5, 1.5).unwrap().rank, 3);
        let mut m = CMat::zeros(2, 2);
        m[(1, 1)] = c(1.0);
        let p = spectral_window_projection(&DenseMatrix::from_matrix(m.clone()).unwrap(), 0.9, 1.1).unwrap();
        assert!((p.projection.inner() - m).max_abs() < 1e-12);
        let mut bad = CMat::zeros(2, 2);
        bad[(0, 1)] = c(1.0);
        assert!(spectral_window_projection(&DenseMatrix::from_matrix(bad).unwrap(), 0.0, 1.0).is_err());
    }

    #[test]
    fn trace_bound_and_certificates() {
        let s = cyclic_sofic_map(64, 1).unwrap();
        let e = GroupAlgebraElement::basis(GroupElement::Int(0));
        let r = window_trace_bound_check(&e, &s, 0.04, &[]).unwrap();
        assert_eq!(r.trace_p, 1.0);
        assert!(r.trace_ok);
        let alpha = GroupAlgebraElement::from_terms([(GroupElement::Int(0), c(0.5)), (GroupElement::Int(1), c(-0.5))]);
        assert!(window_trace_bound_check(&alpha, &s, 0.04, &[]).unwrap().trace_ok);
        assert_eq!(entropy_upper_certificate(1, 0.1, 1.0, 1.0, Some(0.0)).unwrap(), 0.0);
        assert!((entropy_upper_certificate(1, 0.1, 1.0, 1.0, Some(0.5)).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn representation_json_round_trip() {
        let r = irreps(&Group::Symmetric(3)).unwrap()[2].rep.clone();
        let back = FiniteDimRep::from_json(&r.to_json()).unwrap();
        assert!((back.generators()[1].clone() - r.generators()[1].clone()).max_abs() < 1e-15);
    }
}
