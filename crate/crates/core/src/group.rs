//! Concrete countable groups and their sofic approximations.
//!
//! A [`SoficMap`] assigns a permutation of `{0, .., d-1}` to every element of
//! a finite support `F` of the group. Quality is measured pointwise: the
//! multiplicativity defect of a pair `(g, h)` is the fraction of points where
//! `σ(g)σ(h)` and `σ(gh)` disagree, and the freeness separation is the
//! fraction of points where `σ(g)` and `σ(h)` differ.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};

/// A countable discrete group from a small catalogue of concrete families.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// The integers under addition.
    Integers,
    /// `ℤ/nℤ`.
    Cyclic(u64),
    /// The symmetric group on `n` letters.
    Symmetric(usize),
    /// The free group on `r` generators, elements stored as reduced words.
    Free(usize),
    /// Direct product; factors are never themselves products.
    Product(Vec<Group>),
}

/// One letter of a free-group word: a generator or its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter {
    pub generator: u8,
    pub inverse: bool,
}

impl Letter {
    fn inv(self) -> Letter {
        Letter {
            generator: self.generator,
            inverse: !self.inverse,
        }
    }
}

/// A group element in canonical form, so payload equality is element equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupElement {
    Int(i64),
    Residue(u64),
    /// One-line notation, 0-based images.
    Perm(Vec<u8>),
    /// Reduced word.
    Word(Vec<Letter>),
    Tuple(Vec<GroupElement>),
}

fn reduce_word(letters: impl IntoIterator<Item = Letter>) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::new();
    for l in letters {
        if out.last() == Some(&l.inv()) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

fn letter_name(l: Letter) -> char {
    (b'a' + l.generator) as char
}

impl Group {
    /// Builds a product, flattening nested products.
    pub fn product(factors: Vec<Group>) -> Group {
        let mut flat = Vec::new();
        for f in factors {
            match f {
                Group::Product(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Group::Product(flat)
        }
    }

    /// `ℤᵏ`.
    pub fn integer_lattice(k: usize) -> Group {
        Group::product(vec![Group::Integers; k])
    }

    /// Parses strings such as `Z`, `Z/6`, `S3`, `F2`, `Z^2`, `Z/2 x Z/2`.
    pub fn parse(s: &str) -> Result<Group> {
        let parts: Vec<&str> = s.split(" x ").map(str::trim).collect();
        if parts.len() > 1 {
            let factors = parts.iter().map(|p| Group::parse(p)).collect::<Result<Vec<_>>>()?;
            return Ok(Group::product(factors));
        }
        let s = s.trim();
        let bad = || Error::Parse(format!("unknown group '{s}'"));
        if s == "Z" {
            return Ok(Group::Integers);
        }
        if let Some(k) = s.strip_prefix("Z^") {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            return Ok(Group::integer_lattice(k));
        }
        if let Some(n) = s.strip_prefix("Z/") {
            let n: u64 = n.parse().map_err(|_| bad())?;
            if n == 0 {
                return Err(bad());
            }
            return Ok(Group::Cyclic(n));
        }
        if let Some(n) = s.strip_prefix('S') {
            let n: usize = n.parse().map_err(|_| bad())?;
            if n == 0 || n > 8 {
                return Err(Error::Parse(format!("symmetric group degree must be 1..=8, got {n}")));
            }
            return Ok(Group::Symmetric(n));
        }
        if let Some(r) = s.strip_prefix('F') {
            let r: usize = r.parse().map_err(|_| bad())?;
            if r == 0 || r > 26 {
                return Err(Error::Parse(format!("free group rank must be 1..=26, got {r}")));
            }
            return Ok(Group::Free(r));
        }
        Err(bad())
    }

    pub fn identity(&self) -> GroupElement {
        match self {
            Group::Integers => GroupElement::Int(0),
            Group::Cyclic(_) => GroupElement::Residue(0),
            Group::Symmetric(n) => GroupElement::Perm((0..*n as u8).collect()),
            Group::Free(_) => GroupElement::Word(Vec::new()),
            Group::Product(fs) => GroupElement::Tuple(fs.iter().map(Group::identity).collect()),
        }
    }

    /// Checks that `g` is a canonical element of this group.
    pub fn check(&self, g: &GroupElement) -> Result<()> {
        let ok = match (self, g) {
            (Group::Integers, GroupElement::Int(_)) => true,
            (Group::Cyclic(n), GroupElement::Residue(r)) => r < n,
            (Group::Symmetric(n), GroupElement::Perm(p)) => {
                let mut seen = vec![false; *n];
                p.len() == *n
                    && p.iter().all(|&i| {
                        let i = i as usize;
                        i < *n && !std::mem::replace(&mut seen[i], true)
                    })
            }
            (Group::Free(r), GroupElement::Word(w)) => {
                w.iter().all(|l| (l.generator as usize) < *r) && reduce_word(w.iter().copied()) == *w
            }
            (Group::Product(fs), GroupElement::Tuple(xs)) => {
                return if fs.len() == xs.len() {
                    fs.iter().zip(xs).try_for_each(|(f, x)| f.check(x))
                } else {
                    Err(Error::GroupMismatch(format!(
                        "tuple of length {} in a product of {} factors",
                        xs.len(),
                        fs.len()
                    )))
                };
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::GroupMismatch(format!("{g:?} is not an element of {self}")))
        }
    }

    pub fn multiply(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        use GroupElement::*;
        Ok(match (self, a, b) {
            (Group::Integers, Int(x), Int(y)) => Int(x
                .checked_add(*y)
                .ok_or_else(|| Error::InvalidParameter("integer overflow".into()))?),
            (Group::Cyclic(n), Residue(x), Residue(y)) => Residue((x + y) % n),
            (Group::Symmetric(_), Perm(p), Perm(q)) => Perm(q.iter().map(|&i| p[i as usize]).collect()),
            (Group::Free(_), Word(x), Word(y)) => Word(reduce_word(x.iter().chain(y).copied())),
            (Group::Product(fs), Tuple(xs), Tuple(ys)) if fs.len() == xs.len() && fs.len() == ys.len() => Tuple(
                fs.iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(f, (x, y))| f.multiply(x, y))
                    .collect::<Result<_>>()?,
            ),
            _ => {
                return Err(Error::GroupMismatch(format!(
                    "cannot multiply {a:?} and {b:?} in {self}"
                )))
            }
        })
    }

    pub fn inverse(&self, a: &GroupElement) -> Result<GroupElement> {
        use GroupElement::*;
        Ok(match (self, a) {
            (Group::Integers, Int(x)) => Int(-x),
            (Group::Cyclic(n), Residue(x)) => Residue((n - x) % n),
            (Group::Symmetric(_), Perm(p)) => {
                let mut inv = vec![0u8; p.len()];
                for (i, &pi) in p.iter().enumerate() {
                    inv[pi as usize] = i as u8;
                }
                Perm(inv)
            }
            (Group::Free(_), Word(w)) => Word(w.iter().rev().map(|l| l.inv()).collect()),
            (Group::Product(fs), Tuple(xs)) if fs.len() == xs.len() => {
                Tuple(fs.iter().zip(xs).map(|(f, x)| f.inverse(x)).collect::<Result<_>>()?)
            }
            _ => return Err(Error::GroupMismatch(format!("{a:?} is not an element of {self}"))),
        })
    }

    /// A finite generating set (identity-free).
    pub fn generators(&self) -> Vec<GroupElement> {
        match self {
            Group::Integers => vec![GroupElement::Int(1)],
            Group::Cyclic(1) => vec![],
            Group::Cyclic(_) => vec![GroupElement::Residue(1)],
            Group::Symmetric(n) if *n < 2 => vec![],
            Group::Symmetric(n) => {
                let mut swap: Vec<u8> = (0..*n as u8).collect();
                swap.swap(0, 1);
                let cycle: Vec<u8> = (0..*n as u8).map(|i| (i + 1) % *n as u8).collect();
                if *n == 2 {
                    vec![GroupElement::Perm(swap)]
                } else {
                    vec![GroupElement::Perm(swap), GroupElement::Perm(cycle)]
                }
            }
            Group::Free(r) => (0..*r as u8)
                .map(|g| {
                    GroupElement::Word(vec![Letter {
                        generator: g,
                        inverse: false,
                    }])
                })
                .collect(),
            Group::Product(fs) => {
                let ids: Vec<GroupElement> = fs.iter().map(Group::identity).collect();
                let mut out = Vec::new();
                for (i, f) in fs.iter().enumerate() {
                    for g in f.generators() {
                        let mut t = ids.clone();
                        t[i] = g;
                        out.push(GroupElement::Tuple(t));
                    }
                }
                out
            }
        }
    }

    /// Order of the group, `None` when infinite.
    pub fn order(&self) -> Option<u64> {
        match self {
            Group::Integers | Group::Free(_) => None,
            Group::Cyclic(n) => Some(*n),
            Group::Symmetric(n) => Some((1..=*n as u64).product()),
            Group::Product(fs) => fs.iter().map(Group::order).product(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.order().is_some()
    }

    /// All elements of a finite group, sorted.
    pub fn elements(&self) -> Result<Vec<GroupElement>> {
        match self.order() {
            None => Err(Error::InvalidParameter(format!("{self} is infinite"))),
            Some(n) if n > 1 << 16 => Err(Error::Infeasible(format!("{self} has {n} elements"))),
            Some(_) => {
                let mut all: BTreeSet<GroupElement> = BTreeSet::new();
                let mut queue = VecDeque::from([self.identity()]);
                let gens = self.generators();
                while let Some(g) = queue.pop_front() {
                    if all.insert(g.clone()) {
                        for s in &gens {
                            queue.push_back(self.multiply(&g, s)?);
                        }
                    }
                }
                Ok(all.into_iter().collect())
            }
        }
    }

    /// Elements of word length at most `radius` in the generators and their inverses, sorted.
    pub fn ball(&self, radius: usize) -> Result<Vec<GroupElement>> {
        let mut steps = self.generators();
        for g in self.generators() {
            let inv = self.inverse(&g)?;
            if !steps.contains(&inv) {
                steps.push(inv);
            }
        }
        let mut seen: BTreeSet<GroupElement> = BTreeSet::from([self.identity()]);
        let mut frontier = vec![self.identity()];
        for _ in 0..radius {
            let mut next = Vec::new();
            for g in &frontier {
                for s in &steps {
                    let h = self.multiply(g, s)?;
                    if seen.insert(h.clone()) {
                        next.push(h);
                    }
                }
            }
            frontier = next;
        }
        Ok(seen.into_iter().collect())
    }

    pub fn format_element(&self, g: &GroupElement) -> String {
        match g {
            GroupElement::Int(x) => x.to_string(),
            GroupElement::Residue(x) => x.to_string(),
            GroupElement::Perm(p) => {
                let items: Vec<String> = p.iter().map(|i| (i + 1).to_string()).collect();
                format!("[{}]", items.join(" "))
            }
            GroupElement::Word(w) if w.is_empty() => "e".to_string(),
            GroupElement::Word(w) => w
                .iter()
                .map(|l| {
                    if l.inverse {
                        format!("{}^-1", letter_name(*l))
                    } else {
                        letter_name(*l).to_string()
                    }
                })
                .collect(),
            GroupElement::Tuple(xs) => match self {
                Group::Product(fs) => fs
                    .iter()
                    .zip(xs)
                    .map(|(f, x)| f.format_element(x))
                    .collect::<Vec<_>>()
                    .join(","),
                _ => format!("{g:?}"),
            },
        }
    }

    pub fn parse_element(&self, s: &str) -> Result<GroupElement> {
        let s = s.trim();
        let bad = || Error::Parse(format!("'{s}' is not an element of {self}"));
        let g = match self {
            Group::Integers => GroupElement::Int(s.parse().map_err(|_| bad())?),
            Group::Cyclic(n) => {
                let x: i64 = s.parse().map_err(|_| bad())?;
                GroupElement::Residue(x.rem_euclid(*n as i64) as u64)
            }
            Group::Symmetric(_) => {
                let inner = s.strip_prefix('[').and_then(|t| t.strip_suffix(']')).ok_or_else(bad)?;
                let p = inner
                    .split_whitespace()
                    .map(|t| t.parse::<u8>().ok().filter(|&i| i >= 1).map(|i| i - 1))
                    .collect::<Option<Vec<u8>>>()
                    .ok_or_else(bad)?;
                GroupElement::Perm(p)
            }
            Group::Free(_) => {
                if s == "e" {
                    GroupElement::Word(Vec::new())
                } else {
                    let chars: Vec<char> = s.chars().collect();
                    let mut letters = Vec::new();
                    let mut i = 0;
                    while i < chars.len() {
                        let c = chars[i];
                        if !c.is_ascii_lowercase() {
                            return Err(bad());
                        }
                        let base = Letter {
                            generator: c as u8 - b'a',
                            inverse: false,
                        };
                        i += 1;
                        let mut power: i64 = 1;
                        if i < chars.len() && chars[i] == '^' {
                            let start = i + 1;
                            let mut end = start;
                            if end < chars.len() && chars[end] == '-' {
                                end += 1;
                            }
                            while end < chars.len() && chars[end].is_ascii_digit() {
                                end += 1;
                            }
                            let text: String = chars[start..end].iter().collect();
                            power = text.parse().map_err(|_| bad())?;
                            i = end;
                        }
                        let l = if power < 0 { base.inv() } else { base };
                        for _ in 0..power.unsigned_abs() {
                            letters.push(l);
                        }
                    }
                    GroupElement::Word(reduce_word(letters))
                }
            }
            Group::Product(fs) => {
                let mut parts = Vec::new();
                let mut depth = 0i32;
                let mut cur = String::new();
                for c in s.chars() {
                    match c {
                        '[' => depth += 1,
                        ']' => depth -= 1,
                        _ => {}
                    }
                    if c == ',' && depth == 0 {
                        parts.push(std::mem::take(&mut cur));
                    } else {
                        cur.push(c);
                    }
                }
                parts.push(cur);
                if parts.len() != fs.len() {
                    return Err(bad());
                }
                GroupElement::Tuple(
                    fs.iter()
                        .zip(&parts)
                        .map(|(f, p)| f.parse_element(p))
                        .collect::<Result<_>>()?,
                )
            }
        };
        self.check(&g)?;
        Ok(g)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Integers => write!(f, "Z"),
            Group::Cyclic(n) => write!(f, "Z/{n}"),
            Group::Symmetric(n) => write!(f, "S{n}"),
            Group::Free(r) => write!(f, "F{r}"),
            Group::Product(fs) => {
                let parts: Vec<String> = fs.iter().map(|g| g.to_string()).collect();
                write!(f, "{}", parts.join(" x "))
            }
        }
    }
}

/// A bijection of `{0, .., d-1}` stored by its images.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<u32>);

impl Permutation {
    pub fn identity(d: usize) -> Self {
        Permutation((0..d as u32).collect())
    }

    /// Validates that `images` is a bijection.
    pub fn from_images(images: Vec<u32>) -> Result<Self> {
        let mut seen = vec![false; images.len()];
        for &i in &images {
            let i = i as usize;
            if i >= images.len() || seen[i] {
                return invalid(format!("table is not a bijection of 1..={}", images.len()));
            }
            seen[i] = true;
        }
        Ok(Permutation(images))
    }

    /// `j ↦ (j + shift) mod d`.
    pub fn rotation(d: usize, shift: i64) -> Self {
        let s = shift.rem_euclid(d as i64) as usize;
        Permutation((0..d).map(|j| ((j + s) % d) as u32).collect())
    }

    #[inline]
    pub fn apply(&self, j: usize) -> usize {
        self.0[j] as usize
    }

    pub fn images(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.0.len()];
        for (j, &i) in self.0.iter().enumerate() {
            inv[i as usize] = j as u32;
        }
        Permutation(inv)
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Permutation) -> Self {
        Permutation(other.0.iter().map(|&j| self.0[j as usize]).collect())
    }

    pub fn fixed_points(&self) -> usize {
        self.0.iter().enumerate().filter(|&(j, &i)| j == i as usize).count()
    }
}

/// One term of a sofic approximation: permutations for a finite support of the group.
#[derive(Clone, Debug)]
pub struct SoficMap {
    group: Group,
    d: usize,
    table: BTreeMap<GroupElement, Permutation>,
    inverse_table: BTreeMap<GroupElement, Permutation>,
    warnings: Vec<String>,
}

impl SoficMap {
    /// Assembles a map from explicit tables. The identity must be present and map to
    /// the identity permutation.
    pub fn from_tables(group: Group, d: usize, table: BTreeMap<GroupElement, Permutation>) -> Result<Self> {
        if d == 0 {
            return invalid("d must be positive");
        }
        let e = group.identity();
        match table.get(&e) {
            Some(p) if *p == Permutation::identity(d) => {}
            Some(_) => return invalid("the identity must map to the identity permutation"),
            None => return invalid("support must contain the identity"),
        }
        for (g, p) in &table {
            group.check(g)?;
            if p.len() != d {
                return invalid(format!(
                    "permutation for {} has length {}, expected {d}",
                    group.format_element(g),
                    p.len()
                ));
            }
        }
        let inverse_table = table.iter().map(|(g, p)| (g.clone(), p.inverse())).collect();
        Ok(SoficMap {
            group,
            d,
            table,
            inverse_table,
            warnings: Vec::new(),
        })
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn support(&self) -> impl Iterator<Item = &GroupElement> {
        self.table.keys()
    }

    pub fn contains(&self, g: &GroupElement) -> bool {
        self.table.contains_key(g)
    }

    /// Diagnostics recorded by the constructor (e.g. support beyond the injectivity radius).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn outside(&self, g: &GroupElement) -> Error {
        Error::OutsideSupport(self.group.format_element(g))
    }

    pub fn perm(&self, g: &GroupElement) -> Result<&Permutation> {
        self.table.get(g).ok_or_else(|| self.outside(g))
    }

    /// `σ(g)⁻¹`.
    pub fn inverse_perm(&self, g: &GroupElement) -> Result<&Permutation> {
        self.inverse_table.get(g).ok_or_else(|| self.outside(g))
    }

    /// `1 − u_d{k : σ(g)σ(h)k = σ(gh)k}`.
    pub fn multiplicativity_defect(&self, g: &GroupElement, h: &GroupElement) -> Result<f64> {
        let gh = self.group.multiply(g, h)?;
        let (pg, ph, pgh) = (self.perm(g)?, self.perm(h)?, self.perm(&gh)?);
        let bad = (0..self.d).filter(|&k| pg.apply(ph.apply(k)) != pgh.apply(k)).count();
        Ok(bad as f64 / self.d as f64)
    }

    /// `u_d{k : σ(g)k ≠ σ(h)k}`.
    pub fn freeness_separation(&self, g: &GroupElement, h: &GroupElement) -> Result<f64> {
        let (pg, ph) = (self.perm(g)?, self.perm(h)?);
        let differ = (0..self.d).filter(|&k| pg.apply(k) != ph.apply(k)).count();
        Ok(differ as f64 / self.d as f64)
    }

    /// `1 − freeness_separation(g, h)`, the fraction of agreement points.
    pub fn freeness_defect(&self, g: &GroupElement, h: &GroupElement) -> Result<f64> {
        Ok(1.0 - self.freeness_separation(g, h)?)
    }

    /// Normalized trace `u_d(Fix σ(g))`.
    pub fn trace(&self, g: &GroupElement) -> Result<f64> {
        Ok(self.perm(g)?.fixed_points() as f64 / self.d as f64)
    }

    /// Whether `σ(g⁻¹) = σ(g)⁻¹` for every `g` in `elements` (with inverses in support).
    pub fn respects_inverses(&self, elements: &[GroupElement]) -> Result<bool> {
        for g in elements {
            let ginv = self.group.inverse(g)?;
            if self.perm(&ginv)? != self.inverse_perm(g)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn to_json(&self) -> Value {
        let support: Vec<String> = self.table.keys().map(|g| self.group.format_element(g)).collect();
        let table: serde_json::Map<String, Value> = self
            .table
            .iter()
            .map(|(g, p)| {
                let one_based: Vec<u64> = p.images().iter().map(|&i| i as u64 + 1).collect();
                (self.group.format_element(g), json!(one_based))
            })
            .collect();
        json!({ "d": self.d, "support": support, "table": table })
    }

    pub fn from_json(group: Group, value: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("sofic map JSON: {m}"));
        let d = value.get("d").and_then(Value::as_u64).ok_or_else(|| bad("missing d"))? as usize;
        let support = value
            .get("support")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing support"))?;
        let table = value
            .get("table")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing table"))?;
        let mut out = BTreeMap::new();
        for s in support {
            let name = s.as_str().ok_or_else(|| bad("support entries must be strings"))?;
            let g = group.parse_element(name)?;
            let images = table
                .get(name)
                .and_then(Value::as_array)
                .ok_or_else(|| bad(&format!("no table entry for {name}")))?
                .iter()
                .map(|v| v.as_u64().filter(|&i| i >= 1).map(|i| (i - 1) as u32))
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| bad("table entries must be 1-based integers"))?;
            out.insert(g, Permutation::from_images(images)?);
        }
        SoficMap::from_tables(group, d, out)
    }
}

/// ℤ acting on `{0, .., d-1}` by powers of the d-cycle, supported on `{-r, .., r}`.
pub fn cyclic_sofic_map(d: usize, support_radius: usize) -> Result<SoficMap> {
    if d == 0 {
        return invalid("d must be positive");
    }
    if 2 * support_radius >= d {
        return invalid(format!(
            "support radius {support_radius} must be < d/2 = {} (the window would wrap)",
            d as f64 / 2.0
        ));
    }
    let r = support_radius as i64;
    let table = (-r..=r)
        .map(|k| (GroupElement::Int(k), Permutation::rotation(d, k)))
        .collect();
    SoficMap::from_tables(Group::Integers, d, table)
}

/// Finite quotient used by [`quotient_sofic_map`].
#[derive(Clone, Debug, PartialEq)]
pub enum QuotientSpec {
    /// `ℤᵏ → ∏ ℤ/nᵢ` (or `ℤ/n → ℤ/m` for `m | n`).
    Moduli(Vec<u64>),
}

/// Left multiplication on a finite quotient. For `ℤᵏ` the support is the box of
/// radius `support_radius`; for a finite cyclic group it is the whole group.
pub fn quotient_sofic_map(group: &Group, quotient: &QuotientSpec, support_radius: usize) -> Result<SoficMap> {
    let QuotientSpec::Moduli(moduli) = quotient;
    let not_quotient = |m: String| Error::InvalidParameter(format!("spec does not define a quotient of {group}: {m}"));
    if moduli.is_empty() || moduli.contains(&0) {
        return Err(not_quotient("moduli must be positive".into()));
    }
    let d: u64 = moduli.iter().product();
    if d > 1 << 24 {
        return Err(Error::Infeasible(format!("quotient has {d} points")));
    }
    let d = d as usize;
    // Mixed radix with the first coordinate fastest.
    let coords_to_index = |c: &[u64]| -> usize {
        let mut idx = 0u64;
        for (i, &m) in moduli.iter().enumerate().rev() {
            idx = idx * m + c[i];
        }
        idx as usize
    };
    let index_to_coords = |mut idx: usize| -> Vec<u64> {
        moduli
            .iter()
            .map(|&m| {
                let c = idx as u64 % m;
                idx /= m as usize;
                c
            })
            .collect()
    };
    let shift_perm = |shift: &[i64]| -> Permutation {
        Permutation(
            (0..d)
                .map(|j| {
                    let c = index_to_coords(j);
                    let moved: Vec<u64> = c
                        .iter()
                        .zip(shift)
                        .zip(moduli)
                        .map(|((&x, &s), &m)| (x as i64 + s).rem_euclid(m as i64) as u64)
                        .collect();
                    coords_to_index(&moved) as u32
                })
                .collect(),
        )
    };

    let mut table = BTreeMap::new();
    let mut warnings = Vec::new();
    match group {
        Group::Integers | Group::Product(_) => {
            let k = match group {
                Group::Integers => 1,
                Group::Product(fs) if fs.iter().all(|f| *f == Group::Integers) => fs.len(),
                _ => return Err(not_quotient("only Z^k products are supported".into())),
            };
            if moduli.len() != k {
                return Err(not_quotient(format!("expected {k} moduli, got {}", moduli.len())));
            }
            let r = support_radius as i64;
            let side = 2 * r + 1;
            let total = (side as u64).checked_pow(k as u32).unwrap_or(u64::MAX);
            if total > 100_000 {
                return Err(Error::Infeasible(format!("support box has {total} elements")));
            }
            for idx in 0..total {
                let mut rest = idx;
                let shift: Vec<i64> = (0..k)
                    .map(|_| {
                        let c = (rest % side as u64) as i64 - r;
                        rest /= side as u64;
                        c
                    })
                    .collect();
                let g = if k == 1 {
                    GroupElement::Int(shift[0])
                } else {
                    GroupElement::Tuple(shift.iter().map(|&s| GroupElement::Int(s)).collect())
                };
                table.insert(g, shift_perm(&shift));
            }
            for &m in moduli {
                if 2 * support_radius as u64 >= m {
                    warnings.push(format!(
                        "support radius {support_radius} exceeds the injectivity radius of the modulus {m}"
                    ));
                }
            }
        }
        Group::Cyclic(n) => {
            if moduli.len() != 1 || n % moduli[0] != 0 {
                return Err(not_quotient(format!("Z/{} is not a quotient of Z/{n}", moduli[0])));
            }
            for x in 0..*n {
                table.insert(GroupElement::Residue(x), shift_perm(&[x as i64]));
            }
            if moduli[0] < *n {
                warnings.push(format!("quotient Z/{} of Z/{n} is not injective", moduli[0]));
            }
        }
        _ => return Err(not_quotient("unsupported group".into())),
    }
    let mut map = SoficMap::from_tables(group.clone(), d, table)?;
    map.warnings = warnings;
    Ok(map)
}

/// Left-regular action of a finite group on itself, supported on the whole group.
pub fn regular_sofic_map(group: &Group) -> Result<SoficMap> {
    let elements = group.elements()?;
    let index: BTreeMap<&GroupElement, u32> = elements.iter().zip(0u32..).collect();
    let mut table = BTreeMap::new();
    for g in &elements {
        let images = elements
            .iter()
            .map(|h| Ok(index[&group.multiply(g, h)?]))
            .collect::<Result<Vec<u32>>>()?;
        table.insert(g.clone(), Permutation(images));
    }
    SoficMap::from_tables(group.clone(), elements.len(), table)
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for generator `index` derived from a master seed.
pub fn generator_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}

/// Independent uniform permutations for the free generators of `F_rank`,
/// extended multiplicatively to every reduced word of length `≤ word_radius`.
pub fn random_permutation_sofic_map(rank: usize, d: usize, word_radius: usize, seed: u64) -> Result<SoficMap> {
    if d < 2 {
        return invalid("random permutation model needs d >= 2");
    }
    if rank == 0 || rank > 26 {
        return invalid("rank must be in 1..=26");
    }
    let group = Group::Free(rank);
    let gens: Vec<Permutation> = (0..rank)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(generator_seed(seed, i as u64));
            let mut images: Vec<u32> = (0..d as u32).collect();
            images.shuffle(&mut rng);
            Permutation(images)
        })
        .collect();
    let gen_inv: Vec<Permutation> = gens.iter().map(Permutation::inverse).collect();
    let mut table = BTreeMap::new();
    for w in group.ball(word_radius)? {
        let GroupElement::Word(letters) = &w else {
            unreachable!()
        };
        let mut p = Permutation::identity(d);
        for l in letters {
            let step = if l.inverse {
                &gen_inv[l.generator as usize]
            } else {
                &gens[l.generator as usize]
            };
            p = p.compose(step);
        }
        table.insert(w, p);
    }
    SoficMap::from_tables(group, d, table)
}

/// How the terms of a [`SoficFamily`] are produced.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilySpec {
    Cyclic {
        support_radius: usize,
    },
    /// Quotients `(ℤ/n)ᵏ` of `ℤᵏ`; the family index runs over side lengths `n`.
    Quotient {
        rank: usize,
        sides: Vec<u64>,
        support_radius: usize,
    },
    RandomPermutation {
        rank: usize,
        word_radius: usize,
        seed: u64,
    },
}

/// An indexed sequence of sofic maps with strictly increasing `d`.
#[derive(Clone, Debug)]
pub struct SoficFamily {
    group: Group,
    dims: Vec<usize>,
    spec: FamilySpec,
}

impl SoficFamily {
    pub fn cyclic(dims: Vec<usize>, support_radius: usize) -> Result<Self> {
        Self::new(Group::Integers, dims, FamilySpec::Cyclic { support_radius })
    }

    pub fn quotient(rank: usize, sides: Vec<u64>, support_radius: usize) -> Result<Self> {
        let dims = sides.iter().map(|&n| (n as usize).pow(rank as u32)).collect();
        Self::new(
            Group::integer_lattice(rank),
            dims,
            FamilySpec::Quotient {
                rank,
                sides,
                support_radius,
            },
        )
    }

    pub fn random_permutation(rank: usize, dims: Vec<usize>, word_radius: usize, seed: u64) -> Result<Self> {
        Self::new(
            Group::Free(rank),
            dims,
            FamilySpec::RandomPermutation {
                rank,
                word_radius,
                seed,
            },
        )
    }

    fn new(group: Group, dims: Vec<usize>, spec: FamilySpec) -> Result<Self> {
        if dims.is_empty() {
            return invalid("a sofic family needs at least one d");
        }
        if dims.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("d values must strictly increase along the family");
        }
        Ok(SoficFamily { group, dims, spec })
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// `cyclic | quotient | random-permutation`.
    pub fn provenance(&self) -> &'static str {
        match self.spec {
            FamilySpec::Cyclic { .. } => "cyclic",
            FamilySpec::Quotient { .. } => "quotient",
            FamilySpec::RandomPermutation { .. } => "random-permutation",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self.spec {
            FamilySpec::RandomPermutation { seed, .. } => Some(seed),
            _ => None,
        }
    }

    pub fn map(&self, index: usize) -> Result<SoficMap> {
        let d = *self
            .dims
            .get(index)
            .ok_or_else(|| Error::InvalidParameter(format!("family index {index} out of range")))?;
        match &self.spec {
            FamilySpec::Cyclic { support_radius } => cyclic_sofic_map(d, *support_radius),
            FamilySpec::Quotient {
                rank,
                sides,
                support_radius,
            } => quotient_sofic_map(
                &self.group,
                &QuotientSpec::Moduli(vec![sides[index]; *rank]),
                *support_radius,
            ),
            FamilySpec::RandomPermutation {
                rank,
                word_radius,
                seed,
            } => random_permutation_sofic_map(*rank, d, *word_radius, generator_seed(*seed, 1_000_000 + index as u64)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int(k: i64) -> GroupElement {
        GroupElement::Int(k)
    }

    #[test]
    fn cycle_table_for_d5() {
        let s = cyclic_sofic_map(5, 2).unwrap();
        let one_based: Vec<u32> = s.perm(&int(1)).unwrap().images().iter().map(|i| i + 1).collect();
        assert_eq!(one_based, vec![2, 3, 4, 5, 1]);
    }

    #[test]
    fn cyclic_map_is_a_homomorphism_on_support() {
        let s = cyclic_sofic_map(10, 4).unwrap();
        assert_eq!(
            s.multiplicativity_defect(&int(3), &int(4)).unwrap_err().to_string(),
            "element 7 is outside the sofic support"
        );
        let s = cyclic_sofic_map(20, 7).unwrap();
        assert_eq!(s.multiplicativity_defect(&int(3), &int(4)).unwrap(), 0.0);
        for g in -3..=3 {
            for h in -3..=3 {
                assert_eq!(s.multiplicativity_defect(&int(g), &int(h)).unwrap(), 0.0);
            }
        }
        assert_eq!(s.multiplicativity_defect(&int(0), &int(0)).unwrap(), 0.0);
    }

    #[test]
    fn cyclic_radius_must_not_wrap() {
        assert!(cyclic_sofic_map(10, 5).is_err());
        assert!(cyclic_sofic_map(10, 4).is_ok());
        assert!(cyclic_sofic_map(1, 0).is_ok());
    }

    #[test]
    fn cycle_is_fixed_point_free() {
        let s = cyclic_sofic_map(10, 1).unwrap();
        assert_eq!(s.freeness_separation(&int(1), &int(0)).unwrap(), 1.0);
        assert_eq!(s.freeness_separation(&int(1), &int(1)).unwrap(), 0.0);
    }

    #[test]
    fn quotient_of_integers() {
        let s = quotient_sofic_map(&Group::Integers, &QuotientSpec::Moduli(vec![6]), 2).unwrap();
        assert_eq!(s.d(), 6);
        assert_eq!(s.perm(&int(1)).unwrap(), &Permutation::rotation(6, 1));
        assert!(s.warnings().is_empty());
        // 2 and 5 ≡ -1 are different rotations everywhere
        let s = quotient_sofic_map(&Group::Integers, &QuotientSpec::Moduli(vec![6]), 5).unwrap();
        let brute = (0..6).filter(|&k| (k + 2) % 6 != (k + 5) % 6).count() as f64 / 6.0;
        assert_eq!(s.freeness_separation(&int(2), &int(5)).unwrap(), brute);
        assert_eq!(brute, 1.0);
    }

    #[test]
    fn quotient_beyond_injectivity_radius_is_flagged() {
        let s = quotient_sofic_map(&Group::Integers, &QuotientSpec::Moduli(vec![6]), 6).unwrap();
        assert_eq!(s.perm(&int(6)).unwrap(), &Permutation::identity(6));
        assert_eq!(s.freeness_separation(&int(6), &int(0)).unwrap(), 0.0);
        assert!(!s.warnings().is_empty());
    }

    #[test]
    fn quotient_of_z2_is_exact() {
        let g = Group::integer_lattice(2);
        let s = quotient_sofic_map(&g, &QuotientSpec::Moduli(vec![3, 3]), 1).unwrap();
        assert_eq!(s.d(), 9);
        let support: Vec<GroupElement> = s.support().cloned().collect();
        for a in &support {
            for b in &support {
                if s.contains(&g.multiply(a, b).unwrap()) {
                    assert_eq!(s.multiplicativity_defect(a, b).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn quotient_rejects_bad_specs() {
        assert!(quotient_sofic_map(&Group::Integers, &QuotientSpec::Moduli(vec![]), 1).is_err());
        assert!(quotient_sofic_map(&Group::Integers, &QuotientSpec::Moduli(vec![0]), 1).is_err());
        assert!(quotient_sofic_map(&Group::Integers, &QuotientSpec::Moduli(vec![3, 3]), 1).is_err());
        assert!(quotient_sofic_map(&Group::Cyclic(6), &QuotientSpec::Moduli(vec![4]), 1).is_err());
        assert!(quotient_sofic_map(&Group::Free(2), &QuotientSpec::Moduli(vec![4]), 1).is_err());
    }

    #[test]
    fn random_model_is_reproducible() {
        let a = random_permutation_sofic_map(2, 200, 2, 42).unwrap();
        let b = random_permutation_sofic_map(2, 200, 2, 42).unwrap();
        let c = random_permutation_sofic_map(2, 200, 2, 43).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn random_model_recount() {
        let g = Group::Free(2);
        let s = random_permutation_sofic_map(2, 500, 2, 7).unwrap();
        let a = g.parse_element("a").unwrap();
        let b = g.parse_element("b").unwrap();
        let ab = g.parse_element("ab").unwrap();
        let (pa, pb, pab) = (s.perm(&a).unwrap(), s.perm(&b).unwrap(), s.perm(&ab).unwrap());
        let mut bad = 0;
        for k in 0..500 {
            if pa.images()[pb.images()[k] as usize] != pab.images()[k] {
                bad += 1;
            }
        }
        assert_eq!(s.multiplicativity_defect(&a, &b).unwrap(), bad as f64 / 500.0);
    }

    #[test]
    fn rank_one_model_is_powers_of_one_permutation() {
        let s = random_permutation_sofic_map(1, 50, 3, 3).unwrap();
        let g = Group::Free(1);
        let a = s.perm(&g.parse_element("a").unwrap()).unwrap().clone();
        let a3 = s.perm(&g.parse_element("a^3").unwrap()).unwrap();
        assert_eq!(&a.compose(&a).compose(&a), a3);
        let ainv = s.perm(&g.parse_element("a^-1").unwrap()).unwrap();
        assert_eq!(ainv, &a.inverse());
    }

    #[test]
    fn support_violations_name_the_element() {
        let s = cyclic_sofic_map(10, 1).unwrap();
        let err = s.freeness_separation(&int(2), &int(0)).unwrap_err();
        assert!(err.to_string().contains('2'));
    }

    #[test]
    fn element_strings_round_trip() {
        let cases: Vec<(Group, &str)> = vec![
            (Group::Integers, "-3"),
            (Group::Cyclic(6), "5"),
            (Group::Free(2), "ab^-1a"),
            (Group::Free(2), "e"),
            (Group::Symmetric(3), "[2 3 1]"),
            (Group::parse("Z x Z/2").unwrap(), "4,1"),
            (Group::parse("S3 x Z/2").unwrap(), "[2 1 3],1"),
        ];
        for (g, s) in cases {
            let x = g.parse_element(s).unwrap();
            assert_eq!(g.format_element(&x), s);
        }
        let f = Group::Free(2);
        assert_eq!(f.format_element(&f.parse_element("abb^-1a^-1b").unwrap()), "b");
    }

    #[test]
    fn sofic_map_json_round_trip() {
        let s = random_permutation_sofic_map(2, 12, 1, 5).unwrap();
        let v = s.to_json();
        assert_eq!(v["table"]["e"].as_array().unwrap().len(), 12);
        let t = SoficMap::from_json(Group::Free(2), &v).unwrap();
        assert_eq!(t.to_json(), v);
    }

    #[test]
    fn from_tables_validation() {
        let mut t = BTreeMap::new();
        t.insert(int(1), Permutation::rotation(3, 1));
        assert!(SoficMap::from_tables(Group::Integers, 3, t.clone()).is_err());
        t.insert(int(0), Permutation::rotation(3, 1));
        assert!(SoficMap::from_tables(Group::Integers, 3, t).is_err());
        assert!(Permutation::from_images(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn family_dims_strictly_increase() {
        assert!(SoficFamily::cyclic(vec![10, 10], 1).is_err());
        assert!(SoficFamily::cyclic(vec![], 1).is_err());
        let fam = SoficFamily::cyclic(vec![10, 20, 40], 2).unwrap();
        assert_eq!(fam.map(2).unwrap().d(), 40);
        assert_eq!(fam.provenance(), "cyclic");
        let q = SoficFamily::quotient(2, vec![3, 4], 1).unwrap();
        assert_eq!(q.dims(), &[9, 16]);
    }

    #[test]
    fn symmetric_group_structure() {
        let s3 = Group::Symmetric(3);
        let els = s3.elements().unwrap();
        assert_eq!(els.len(), 6);
        let reg = regular_sofic_map(&s3).unwrap();
        for a in &els {
            for b in &els {
                assert_eq!(reg.multiplicativity_defect(a, b).unwrap(), 0.0);
                if a != b {
                    assert_eq!(reg.freeness_separation(a, b).unwrap(), 1.0);
                }
            }
        }
    }

    #[test]
    fn free_ball_sizes() {
        // 1 + 4 + 12 + 36
        assert_eq!(Group::Free(2).ball(3).unwrap().len(), 53);
        assert_eq!(Group::Integers.ball(2).unwrap().len(), 5);
        assert_eq!(Group::integer_lattice(2).ball(1).unwrap().len(), 5);
    }
}
