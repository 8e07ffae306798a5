//! Shift systems over finite alphabets and their microstates.
//!
//! A microstate is stored as its identity-coordinate field `z ∈ Aᵈ`. For a
//! Bernoulli (full-shift) system the point of the model space attached to site
//! `j` is the periodic lift `φ(j)(g) = z(σ(g)⁻¹ j)`. For a finite-orbit system
//! the model space is the finite set of listed periodic configurations, each
//! identified by its value at the identity, so site `j` carries the
//! configuration whose identity symbol is `z(j)`.
//!
//! The pseudometric on the model space only reads the identity coordinate, so
//! `Δ₂` between microstates is `Δ₂` between their fields.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{invalid, Error, Result};
use crate::group::{Group, GroupElement, Permutation, SoficMap};
use crate::metric::{Alphabet, BasePseudometric};

/// Identity-coordinate field `z: {0, .., d-1} → A`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MicrostateField(Vec<u32>);

impl MicrostateField {
    pub fn new(symbols: Vec<u32>) -> Self {
        MicrostateField(symbols)
    }

    pub fn constant(d: usize, a: u32) -> Self {
        MicrostateField(vec![a; d])
    }

    /// Field number `index` in the mixed-radix enumeration of `Aᵈ` (site 0 fastest).
    pub fn from_index(mut index: u64, d: usize, k: usize) -> Self {
        let mut out = vec![0u32; d];
        for s in out.iter_mut() {
            *s = (index % k as u64) as u32;
            index /= k as u64;
        }
        MicrostateField(out)
    }

    pub fn symbols(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, sigma: &SoficMap, k: usize) -> Result<()> {
        if self.0.len() != sigma.d() {
            return invalid(format!(
                "field has length {}, sofic map has d = {}",
                self.0.len(),
                sigma.d()
            ));
        }
        if self.0.iter().any(|&a| a as usize >= k) {
            return invalid("field symbol outside the alphabet");
        }
        Ok(())
    }
}

/// A periodic configuration on `ℤᵏ` (or a constant configuration on any group).
///
/// `values` is indexed in mixed radix over `periods`, first coordinate fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicConfig {
    periods: Vec<u64>,
    values: Vec<u32>,
}

impl PeriodicConfig {
    pub fn new(periods: Vec<u64>, values: Vec<u32>) -> Result<Self> {
        if periods.contains(&0) {
            return invalid("periods must be positive");
        }
        let size: u64 = periods.iter().product();
        if values.len() as u64 != size {
            return invalid(format!("expected {size} values for periods {periods:?}"));
        }
        Ok(PeriodicConfig { periods, values })
    }

    pub fn constant(a: u32) -> Self {
        PeriodicConfig {
            periods: Vec::new(),
            values: vec![a],
        }
    }

    /// One-dimensional periodic word, `c(n) = word[n mod len]`.
    pub fn word(values: Vec<u32>) -> Result<Self> {
        Self::new(vec![values.len() as u64], values)
    }

    pub fn eval(&self, g: &GroupElement) -> Result<u32> {
        if self.periods.is_empty() {
            return Ok(self.values[0]);
        }
        let coords: Vec<i64> = match g {
            GroupElement::Int(n) => vec![*n],
            GroupElement::Residue(n) => vec![*n as i64],
            GroupElement::Tuple(xs) => xs
                .iter()
                .map(|x| match x {
                    GroupElement::Int(n) => Ok(*n),
                    GroupElement::Residue(n) => Ok(*n as i64),
                    _ => invalid("periodic configurations need integer coordinates"),
                })
                .collect::<Result<_>>()?,
            _ => return invalid("periodic configurations need integer coordinates"),
        };
        if coords.len() != self.periods.len() {
            return invalid("configuration rank does not match the group");
        }
        let mut idx = 0u64;
        for (c, &p) in coords.iter().zip(&self.periods).rev() {
            idx = idx * p + c.rem_euclid(p as i64) as u64;
        }
        Ok(self.values[idx as usize])
    }
}

/// The invariant measure of a shift system.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureSpec {
    /// Product measure with the given one-site distribution.
    Bernoulli(Vec<f64>),
    /// Finitely many periodic configurations with weights.
    FiniteOrbit(Vec<(PeriodicConfig, f64)>),
}

/// A shift action on `A^Γ` with an identity-coordinate pseudometric and invariant measure.
#[derive(Clone, Debug)]
pub struct ShiftSystem {
    name: String,
    group: Group,
    alphabet: Alphabet,
    metric: BasePseudometric,
    measure: MeasureSpec,
    window_radius: usize,
    /// Finite-orbit systems: configuration index of each symbol.
    orbit_of_symbol: Vec<usize>,
}

const PROB_TOL: f64 = 1e-12;

impl ShiftSystem {
    pub fn bernoulli(
        group: Group,
        alphabet: Alphabet,
        metric: BasePseudometric,
        probabilities: Vec<f64>,
    ) -> Result<Self> {
        if probabilities.len() != alphabet.len() || metric.size() != alphabet.len() {
            return invalid("alphabet, metric and probability vector sizes differ");
        }
        check_probabilities(&probabilities)?;
        Ok(ShiftSystem {
            name: "bernoulli".into(),
            group,
            alphabet,
            metric,
            measure: MeasureSpec::Bernoulli(probabilities),
            window_radius: 0,
            orbit_of_symbol: Vec::new(),
        })
    }

    /// Each symbol must be the identity value of exactly one configuration, and the
    /// configuration list must be closed (with weights) under the generators.
    pub fn finite_orbit(
        group: Group,
        alphabet: Alphabet,
        metric: BasePseudometric,
        configs: Vec<(PeriodicConfig, f64)>,
    ) -> Result<Self> {
        let k = alphabet.len();
        if metric.size() != k {
            return invalid("alphabet and metric sizes differ");
        }
        let weights: Vec<f64> = configs.iter().map(|(_, w)| *w).collect();
        check_probabilities(&weights)?;
        let e = group.identity();
        let mut orbit_of_symbol = vec![usize::MAX; k];
        for (i, (c, _)) in configs.iter().enumerate() {
            let a = c.eval(&e)? as usize;
            if a >= k {
                return invalid(format!("configuration {i} uses a symbol outside the alphabet"));
            }
            if orbit_of_symbol[a] != usize::MAX {
                return invalid(format!(
                    "configurations {} and {i} share the identity symbol {a}; refine the alphabet",
                    orbit_of_symbol[a]
                ));
            }
            orbit_of_symbol[a] = i;
        }
        if let Some(a) = orbit_of_symbol.iter().position(|&i| i == usize::MAX) {
            return invalid(format!("symbol {a} is not the identity value of any configuration"));
        }
        let system = ShiftSystem {
            name: "finite-orbit".into(),
            group,
            alphabet,
            metric,
            measure: MeasureSpec::FiniteOrbit(configs),
            window_radius: 0,
            orbit_of_symbol,
        };
        system.check_closure()?;
        Ok(system)
    }

    fn check_closure(&self) -> Result<()> {
        let MeasureSpec::FiniteOrbit(configs) = &self.measure else {
            return Ok(());
        };
        let span: u64 = configs
            .iter()
            .flat_map(|(c, _)| c.periods.iter().copied())
            .sum::<u64>()
            .max(1);
        let probe = self.group.ball((2 * span).min(64) as usize)?;
        for s in self.group.generators() {
            for (a, &ci) in self.orbit_of_symbol.iter().enumerate() {
                let b = self.act(&s, a as u32)? as usize;
                let (ca, wa) = &configs[ci];
                let (cb, wb) = &configs[self.orbit_of_symbol[b]];
                if (wa - wb).abs() > PROB_TOL {
                    return invalid(format!(
                        "orbit weights are not invariant under {}",
                        self.group.format_element(&s)
                    ));
                }
                let s_inv = self.group.inverse(&s)?;
                for h in &probe {
                    // (s·c)(h) = c(s⁻¹h)
                    if ca.eval(&self.group.multiply(&s_inv, h)?)? != cb.eval(h)? {
                        return invalid(format!(
                            "configuration list is not closed under {}",
                            self.group.format_element(&s)
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_window_radius(mut self, r: usize) -> Self {
        self.window_radius = r;
        self
    }

    /// Bernoulli shift of `ℤ` with the discrete metric on `{0, .., k-1}`.
    pub fn bernoulli_z(probabilities: Vec<f64>) -> Result<Self> {
        let k = probabilities.len();
        Ok(Self::bernoulli(
            Group::Integers,
            Alphabet::indexed(k),
            BasePseudometric::discrete(k),
            probabilities,
        )?
        .with_name("bernoulli"))
    }

    /// `ℤ ↷ ℤ/2` by `x ↦ x + 1`, uniform measure.
    pub fn rotation() -> Self {
        let configs = vec![
            (PeriodicConfig::word(vec![0, 1]).unwrap(), 0.5),
            (PeriodicConfig::word(vec![1, 0]).unwrap(), 0.5),
        ];
        Self::finite_orbit(
            Group::Integers,
            Alphabet::indexed(2),
            BasePseudometric::discrete(2),
            configs,
        )
        .expect("rotation system is valid")
        .with_name("rotation")
    }

    /// `ℤ ↷ ℤ/n` by `x ↦ x + 1`, uniform measure.
    pub fn cyclic_rotation(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("rotation needs n >= 1");
        }
        let configs = (0..n)
            .map(|x| {
                // c_x(m) = x - m mod n
                let word = (0..n).map(|m| ((x + n - m % n) % n) as u32).collect();
                Ok((PeriodicConfig::word(word)?, 1.0 / n as f64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::finite_orbit(
            Group::Integers,
            Alphabet::indexed(n),
            BasePseudometric::discrete(n),
            configs,
        )?
        .with_name(format!("rotation-{n}")))
    }

    /// Trivial `ℤ`-action on a uniform two-point space.
    pub fn trivial_two_point() -> Self {
        let configs = vec![(PeriodicConfig::constant(0), 0.5), (PeriodicConfig::constant(1), 0.5)];
        Self::finite_orbit(
            Group::Integers,
            Alphabet::indexed(2),
            BasePseudometric::discrete(2),
            configs,
        )
        .expect("trivial system is valid")
        .with_name("trivial")
    }

    /// A single fixed point.
    pub fn one_atom(group: Group) -> Self {
        let configs = vec![(PeriodicConfig::constant(0), 1.0)];
        Self::finite_orbit(group, Alphabet::indexed(1), BasePseudometric::discrete(1), configs)
            .expect("one-atom system is valid")
            .with_name("one-atom")
    }

    /// Reads the structured-text system description (see the crate README).
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SystemSpecFile = toml::from_str(text).map_err(|e| Error::Parse(format!("system spec: {e}")))?;
        spec.build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn metric(&self) -> &BasePseudometric {
        &self.metric
    }

    pub fn measure(&self) -> &MeasureSpec {
        &self.measure
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn window_radius(&self) -> usize {
        self.window_radius
    }

    pub fn is_bernoulli(&self) -> bool {
        matches!(self.measure, MeasureSpec::Bernoulli(_))
    }

    /// Value at `h` of the configuration attached to symbol `a` (finite-orbit systems).
    pub fn config_value(&self, a: u32, h: &GroupElement) -> Result<u32> {
        match &self.measure {
            MeasureSpec::FiniteOrbit(configs) => configs[self.orbit_of_symbol[a as usize]].0.eval(h),
            MeasureSpec::Bernoulli(_) => invalid("Bernoulli systems have no attached configurations"),
        }
    }

    /// Identity symbol of `g·c_a`, i.e. `c_a(g⁻¹)` (finite-orbit systems).
    pub fn act(&self, g: &GroupElement, a: u32) -> Result<u32> {
        self.config_value(a, &self.group.inverse(g)?)
    }

    /// `∫ f dμ` in closed form.
    pub fn integrate(&self, f: &TestFunction) -> Result<f64> {
        match &self.measure {
            MeasureSpec::Bernoulli(p) => {
                let w = f.window.len();
                let k = p.len();
                let total = (k as u64)
                    .checked_pow(w as u32)
                    .filter(|&t| t <= 1 << 22)
                    .ok_or_else(|| {
                        Error::Infeasible(format!(
                            "window of {w} sites over {k} symbols is too large to integrate"
                        ))
                    })?;
                let mut acc = 0.0;
                let mut pattern = vec![0u32; w];
                for idx in 0..total {
                    let mut rest = idx;
                    let mut prob = 1.0;
                    for s in pattern.iter_mut() {
                        *s = (rest % k as u64) as u32;
                        rest /= k as u64;
                        prob *= p[*s as usize];
                    }
                    if prob > 0.0 {
                        acc += prob * f.eval(&pattern);
                    }
                }
                Ok(acc)
            }
            MeasureSpec::FiniteOrbit(configs) => {
                let mut acc = 0.0;
                for (c, wt) in configs {
                    let pattern = f.window.iter().map(|h| c.eval(h)).collect::<Result<Vec<u32>>>()?;
                    acc += wt * f.eval(&pattern);
                }
                Ok(acc)
            }
        }
    }

    /// `μ{x : (β(x(g)))_{g ∈ F} = b}` for every pattern `b ∈ B^F` of positive mass.
    pub fn pattern_distribution(&self, window: &[GroupElement], beta: &Observable) -> Result<HashMap<Vec<u32>, f64>> {
        if beta.source_size() != self.alphabet_size() {
            return invalid("observable is defined on a different alphabet");
        }
        let mut dist: HashMap<Vec<u32>, f64> = HashMap::new();
        match &self.measure {
            MeasureSpec::Bernoulli(p) => {
                let mut cell_mass = vec![0.0; beta.target_size()];
                for (a, &pa) in p.iter().enumerate() {
                    cell_mass[beta.eval(a as u32) as usize] += pa;
                }
                let cells: Vec<(u32, f64)> = cell_mass
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m > 0.0)
                    .map(|(b, &m)| (b as u32, m))
                    .collect();
                let w = window.len();
                let total = (cells.len() as u64)
                    .checked_pow(w as u32)
                    .filter(|&t| t <= 1 << 22)
                    .ok_or_else(|| {
                        Error::Infeasible("observable window is too large for exact pattern probabilities".into())
                    })?;
                for idx in 0..total {
                    let mut rest = idx;
                    let mut pattern = Vec::with_capacity(w);
                    let mut prob = 1.0;
                    for _ in 0..w {
                        let (b, m) = cells[(rest % cells.len() as u64) as usize];
                        rest /= cells.len() as u64;
                        pattern.push(b);
                        prob *= m;
                    }
                    *dist.entry(pattern).or_insert(0.0) += prob;
                }
            }
            MeasureSpec::FiniteOrbit(configs) => {
                for (c, wt) in configs {
                    if *wt == 0.0 {
                        continue;
                    }
                    let pattern = window
                        .iter()
                        .map(|h| Ok(beta.eval(c.eval(h)?)))
                        .collect::<Result<Vec<u32>>>()?;
                    *dist.entry(pattern).or_insert(0.0) += wt;
                }
            }
        }
        Ok(dist)
    }
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return invalid("probability vector must be nonempty");
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return invalid("probabilities must be nonnegative");
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return invalid(format!("probabilities sum to {s}, expected 1"));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MetricSpec {
    Named(String),
    Table(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpecFile {
    name: Option<String>,
    group: String,
    alphabet: Vec<String>,
    coords: Option<Vec<Vec<f64>>>,
    metric: Option<MetricSpec>,
    bound: Option<f64>,
    measure: String,
    probabilities: Option<Vec<f64>>,
    orbit_configs: Option<Vec<Vec<u32>>>,
    orbit_periods: Option<Vec<Vec<u64>>>,
    orbit_weights: Option<Vec<f64>>,
    window_radius: Option<usize>,
}

impl SystemSpecFile {
    fn build(self) -> Result<ShiftSystem> {
        let group = Group::parse(&self.group)?;
        let k = self.alphabet.len();
        let coords = self.coords.unwrap_or_else(|| (0..k).map(|i| vec![i as f64]).collect());
        let alphabet = Alphabet::new(self.alphabet, coords)?;
        let mut metric = match self.metric {
            None => BasePseudometric::discrete(k),
            Some(MetricSpec::Named(n)) if n == "discrete" => BasePseudometric::discrete(k),
            Some(MetricSpec::Named(n)) if n == "euclidean" => BasePseudometric::euclidean(&alphabet)?,
            Some(MetricSpec::Named(n)) => return Err(Error::Parse(format!("unknown metric '{n}'"))),
            Some(MetricSpec::Table(rows)) => BasePseudometric::from_table(rows, None)?,
        };
        if let Some(b) = self.bound {
            let rows = (0..k).map(|i| (0..k).map(|j| metric.dist(i, j)).collect()).collect();
            metric = BasePseudometric::from_table(rows, Some(b))?;
        }
        let system = match self.measure.as_str() {
            "bernoulli" => {
                let p = self
                    .probabilities
                    .ok_or_else(|| Error::Parse("bernoulli measure needs 'probabilities'".into()))?;
                ShiftSystem::bernoulli(group, alphabet, metric, p)?
            }
            "orbit" => {
                let words = self
                    .orbit_configs
                    .ok_or_else(|| Error::Parse("orbit measure needs 'orbit_configs'".into()))?;
                let n = words.len();
                let weights = self.orbit_weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
                if weights.len() != n {
                    return Err(Error::Parse("orbit_weights must match orbit_configs".into()));
                }
                let periods = match self.orbit_periods {
                    Some(p) if p.len() == n => p,
                    Some(_) => return Err(Error::Parse("orbit_periods must match orbit_configs".into())),
                    None => words
                        .iter()
                        .map(|w| if w.len() == 1 { Vec::new() } else { vec![w.len() as u64] })
                        .collect(),
                };
                let configs = words
                    .into_iter()
                    .zip(periods)
                    .zip(weights)
                    .map(|((w, p), wt)| Ok((PeriodicConfig::new(p, w)?, wt)))
                    .collect::<Result<Vec<_>>>()?;
                ShiftSystem::finite_orbit(group, alphabet, metric, configs)?
            }
            other => return Err(Error::Parse(format!("unknown measure '{other}'"))),
        };
        let name = self.name.unwrap_or_else(|| system.name.clone());
        Ok(system
            .with_name(name)
            .with_window_radius(self.window_radius.unwrap_or(0)))
    }
}

type EvalFn = Arc<dyn Fn(&[u32]) -> f64 + Send + Sync>;

/// Bounded function of the symbols on a finite window.
#[derive(Clone)]
pub struct TestFunction {
    id: String,
    window: Vec<GroupElement>,
    bound: f64,
    eval: EvalFn,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("id", &self.id)
            .field("window", &self.window)
            .field("bound", &self.bound)
            .finish()
    }
}

impl TestFunction {
    /// Checks `|f| ≤ bound` on every window pattern over `alphabet_size` symbols.
    pub fn new(
        id: impl Into<String>,
        window: Vec<GroupElement>,
        bound: f64,
        alphabet_size: usize,
        eval: impl Fn(&[u32]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let f = TestFunction {
            id: id.into(),
            window,
            bound,
            eval: Arc::new(eval),
        };
        let w = f.window.len();
        if let Some(total) = (alphabet_size as u64).checked_pow(w as u32).filter(|&t| t <= 1 << 16) {
            let mut pattern = vec![0u32; w];
            for idx in 0..total {
                let mut rest = idx;
                for s in pattern.iter_mut() {
                    *s = (rest % alphabet_size as u64) as u32;
                    rest /= alphabet_size as u64;
                }
                let v = f.eval(&pattern);
                if !v.is_finite() || v.abs() > bound {
                    return invalid(format!(
                        "test function {} exceeds its bound {bound} at {pattern:?}",
                        f.id
                    ));
                }
            }
        }
        Ok(f)
    }

    pub fn constant(group: &Group, c: f64) -> Self {
        TestFunction {
            id: format!("const({c})"),
            window: vec![group.identity()],
            bound: c.abs(),
            eval: Arc::new(move |_| c),
        }
    }

    /// `f(x) = values[x(e)]`.
    pub fn symbol_value(group: &Group, values: Vec<f64>) -> Self {
        let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        TestFunction {
            id: format!("value{values:?}"),
            window: vec![group.identity()],
            bound,
            eval: Arc::new(move |s| values[s[0] as usize]),
        }
    }

    /// Indicator of `x|_window = pattern`.
    pub fn cylinder(group: &Group, window: Vec<GroupElement>, pattern: Vec<u32>) -> Result<Self> {
        if window.len() != pattern.len() {
            return invalid("cylinder pattern must match its window");
        }
        let names: Vec<String> = window
            .iter()
            .zip(&pattern)
            .map(|(g, a)| format!("{}={a}", group.format_element(g)))
            .collect();
        Ok(TestFunction {
            id: format!("cyl[{}]", names.join(";")),
            window,
            bound: 1.0,
            eval: Arc::new(move |s| if s == pattern.as_slice() { 1.0 } else { 0.0 }),
        })
    }

    /// All cylinder indicators over the balls of radius `0..=radius`.
    pub fn cylinder_family(group: &Group, alphabet_size: usize, radius: usize) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for r in 0..=radius {
            let window = group.ball(r)?;
            let w = window.len();
            let total = (alphabet_size as u64)
                .checked_pow(w as u32)
                .filter(|&t| t <= 1 << 12)
                .ok_or_else(|| Error::Infeasible(format!("{alphabet_size}^{w} cylinders at radius {r}")))?;
            for idx in 0..total {
                let pattern = MicrostateField::from_index(idx, w, alphabet_size).0;
                out.push(Self::cylinder(group, window.clone(), pattern)?);
            }
        }
        Ok(out)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn window(&self) -> &[GroupElement] {
        &self.window
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn eval(&self, symbols: &[u32]) -> f64 {
        (self.eval)(symbols)
    }
}

/// Finite observable factoring through the identity coordinate: `A → B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observable {
    target: usize,
    assignment: Vec<u32>,
}

impl Observable {
    pub fn new(assignment: Vec<u32>, target: usize) -> Result<Self> {
        if assignment.iter().any(|&b| b as usize >= target) {
            return invalid("observable value outside its target set");
        }
        Ok(Observable { target, assignment })
    }

    pub fn identity(k: usize) -> Self {
        Observable {
            target: k,
            assignment: (0..k as u32).collect(),
        }
    }

    pub fn constant(k: usize) -> Self {
        Observable {
            target: 1,
            assignment: vec![0; k],
        }
    }

    pub fn source_size(&self) -> usize {
        self.assignment.len()
    }

    pub fn target_size(&self) -> usize {
        self.target
    }

    #[inline]
    pub fn eval(&self, a: u32) -> u32 {
        self.assignment[a as usize]
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Checks `π ∘ self = coarser` on every symbol.
    pub fn check_refines(&self, coarser: &Observable, pi: &[u32]) -> Result<()> {
        if self.source_size() != coarser.source_size() || pi.len() != self.target {
            return invalid("refinement data have inconsistent sizes");
        }
        for a in 0..self.source_size() as u32 {
            if pi[self.eval(a) as usize] != coarser.eval(a) {
                return invalid(format!("refinement check fails at symbol {a}"));
            }
        }
        Ok(())
    }
}

/// The `(F, δ, ε, L)` parameters of a microstate space.
#[derive(Clone, Debug)]
pub struct MicrostateParams {
    pub f: Vec<GroupElement>,
    pub delta: f64,
    pub epsilon: f64,
    pub tests: Vec<TestFunction>,
}

impl MicrostateParams {
    pub fn new(f: Vec<GroupElement>, delta: f64, epsilon: f64, tests: Vec<TestFunction>) -> Result<Self> {
        if !(delta > 0.0) || !(epsilon > 0.0) {
            return invalid("delta and epsilon must be positive");
        }
        Ok(MicrostateParams {
            f,
            delta,
            epsilon,
            tests,
        })
    }
}

/// `φ(j)(g) = z(σ(g)⁻¹ j)` on a finite window.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedMicrostate {
    window: Vec<GroupElement>,
    d: usize,
    values: Vec<u32>,
}

impl LiftedMicrostate {
    pub fn window(&self) -> &[GroupElement] {
        &self.window
    }

    /// `φ(j)(window[i])`.
    pub fn get(&self, j: usize, i: usize) -> u32 {
        self.values[j * self.window.len() + i]
    }

    pub fn site(&self, j: usize) -> &[u32] {
        let w = self.window.len();
        &self.values[j * w..(j + 1) * w]
    }

    pub fn d(&self) -> usize {
        self.d
    }
}

pub fn lift_microstate(z: &MicrostateField, sigma: &SoficMap, window: &[GroupElement]) -> Result<LiftedMicrostate> {
    if z.len() != sigma.d() {
        return invalid("field length differs from d");
    }
    let inv = window
        .iter()
        .map(|g| sigma.inverse_perm(g))
        .collect::<Result<Vec<_>>>()?;
    let d = sigma.d();
    let mut values = Vec::with_capacity(d * window.len());
    for j in 0..d {
        for p in &inv {
            values.push(z.0[p.apply(j)]);
        }
    }
    Ok(LiftedMicrostate {
        window: window.to_vec(),
        d,
        values,
    })
}

/// Per-`g` equivariance constraint: site `u[j]` should carry `π(z(v[j]))`.
#[derive(Clone, Debug)]
pub(crate) struct EdgeConstraint {
    pub g: GroupElement,
    pub u: Vec<u32>,
    pub v: Vec<u32>,
    pub pi: Vec<u32>,
}

impl EdgeConstraint {
    fn build(system: &ShiftSystem, sigma: &SoficMap, g: &GroupElement) -> Result<Self> {
        let d = sigma.d();
        let pg = sigma.perm(g)?;
        let u: Vec<u32> = pg.images().to_vec();
        let (v, pi) = if system.is_bernoulli() {
            // identity coordinate of g·φ(j) is φ(j)(g⁻¹) = z(σ(g⁻¹)⁻¹ j)
            let ginv = system.group.inverse(g)?;
            let q: &Permutation = sigma.inverse_perm(&ginv)?;
            (q.images().to_vec(), (0..system.alphabet_size() as u32).collect())
        } else {
            let pi = (0..system.alphabet_size() as u32)
                .map(|a| system.act(g, a))
                .collect::<Result<Vec<u32>>>()?;
            ((0..d as u32).collect(), pi)
        };
        Ok(EdgeConstraint { g: g.clone(), u, v, pi })
    }

    #[inline]
    pub fn cost(&self, z: &[u32], j: usize, metric: &BasePseudometric) -> f64 {
        let x = metric.dist(
            z[self.u[j] as usize] as usize,
            self.pi[z[self.v[j] as usize] as usize] as usize,
        );
        x * x
    }

    pub fn defect(&self, z: &[u32], metric: &BasePseudometric) -> f64 {
        let s: f64 = (0..z.len()).map(|j| self.cost(z, j, metric)).sum();
        (s / z.len() as f64).sqrt()
    }
}

/// Reads the symbols of the model point at each site on a fixed window.
#[derive(Clone, Debug)]
pub(crate) enum WindowReader {
    /// Bernoulli: `φ(j)(h) = z(σ(h)⁻¹ j)`; one inverse permutation per window element.
    Lift(Vec<Vec<u32>>),
    /// Finite orbit: `φ(j)(h) = c_{z(j)}(h)`; table indexed `[symbol][window element]`.
    Orbit(Vec<Vec<u32>>),
}

impl WindowReader {
    pub fn build(system: &ShiftSystem, sigma: &SoficMap, window: &[GroupElement]) -> Result<Self> {
        if system.is_bernoulli() {
            let inv = window
                .iter()
                .map(|h| Ok(sigma.inverse_perm(h)?.images().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(WindowReader::Lift(inv))
        } else {
            for h in window {
                sigma.perm(h)?;
            }
            let table = (0..system.alphabet_size() as u32)
                .map(|a| {
                    window
                        .iter()
                        .map(|h| system.config_value(a, h))
                        .collect::<Result<Vec<u32>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WindowReader::Orbit(table))
        }
    }

    #[inline]
    pub fn read(&self, z: &[u32], j: usize, out: &mut Vec<u32>) {
        out.clear();
        match self {
            WindowReader::Lift(inv) => out.extend(inv.iter().map(|p| z[p[j] as usize])),
            WindowReader::Orbit(table) => out.extend_from_slice(&table[z[j] as usize]),
        }
    }
}

pub const VIOLATES_EQUIVARIANCE: u8 = 1;
pub const VIOLATES_EMPIRICAL: u8 = 2;

/// A constraint violated by a candidate microstate.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Equivariance { g: String, defect: f64 },
    Empirical { test: String, gap: f64 },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::Equivariance { .. } => "equivariance",
            Violation::Empirical { .. } => "empirical",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipReport {
    pub member: bool,
    pub violations: Vec<Violation>,
}

/// Precompiled membership test for `Map_μ(Δ, F, δ, L, σ)`.
#[derive(Clone, Debug)]
pub struct MicrostateChecker {
    pub(crate) edges: Vec<EdgeConstraint>,
    pub(crate) readers: Vec<(TestFunction, WindowReader, f64)>,
    metric: BasePseudometric,
    group: Group,
    delta: f64,
    d: usize,
}

impl MicrostateChecker {
    pub fn new(system: &ShiftSystem, sigma: &SoficMap, params: &MicrostateParams) -> Result<Self> {
        if system.group() != sigma.group() {
            return Err(Error::GroupMismatch(format!(
                "system acts by {}, sofic map is for {}",
                system.group(),
                sigma.group()
            )));
        }
        let e = system.group().identity();
        let edges = params
            .f
            .iter()
            .filter(|g| **g != e)
            .map(|g| EdgeConstraint::build(system, sigma, g))
            .collect::<Result<Vec<_>>>()?;
        let readers = params
            .tests
            .iter()
            .map(|f| {
                Ok((
                    f.clone(),
                    WindowReader::build(system, sigma, f.window())?,
                    system.integrate(f)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MicrostateChecker {
            edges,
            readers,
            metric: system.metric().clone(),
            group: system.group().clone(),
            delta: params.delta,
            d: sigma.d(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn gap(&self, idx: usize, z: &[u32], buf: &mut Vec<u32>) -> f64 {
        let (f, reader, integral) = &self.readers[idx];
        let mut acc = 0.0;
        for j in 0..z.len() {
            reader.read(z, j, buf);
            acc += f.eval(buf);
        }
        (acc / z.len() as f64 - integral).abs()
    }

    /// Membership with early exit.
    pub fn accepts(&self, z: &[u32]) -> bool {
        let budget = self.delta * self.delta * self.d as f64;
        for e in &self.edges {
            let mut s = 0.0;
            for j in 0..z.len() {
                s += e.cost(z, j, &self.metric);
                if s >= budget && (s / self.d as f64).sqrt() >= self.delta {
                    return false;
                }
            }
            if (s / self.d as f64).sqrt() >= self.delta {
                return false;
            }
        }
        let mut buf = Vec::new();
        (0..self.readers.len()).all(|i| self.gap(i, z, &mut buf) < self.delta)
    }

    /// Bit 0: some equivariance constraint fails; bit 1: some empirical constraint fails.
    pub fn violation_mask(&self, z: &[u32]) -> u8 {
        let mut mask = 0;
        if self.edges.iter().any(|e| e.defect(z, &self.metric) >= self.delta) {
            mask |= VIOLATES_EQUIVARIANCE;
        }
        let mut buf = Vec::new();
        if (0..self.readers.len()).any(|i| self.gap(i, z, &mut buf) >= self.delta) {
            mask |= VIOLATES_EMPIRICAL;
        }
        mask
    }

    pub fn report(&self, z: &[u32]) -> MembershipReport {
        let mut violations = Vec::new();
        for e in &self.edges {
            let defect = e.defect(z, &self.metric);
            if defect >= self.delta {
                violations.push(Violation::Equivariance {
                    g: self.group.format_element(&e.g),
                    defect,
                });
            }
        }
        let mut buf = Vec::new();
        for i in 0..self.readers.len() {
            let gap = self.gap(i, z, &mut buf);
            if gap >= self.delta {
                violations.push(Violation::Empirical {
                    test: self.readers[i].0.id().to_string(),
                    gap,
                });
            }
        }
        MembershipReport {
            member: violations.is_empty(),
            violations,
        }
    }
}

/// `Δ₂(φ∘σ(g), gφ)` through identity coordinates.
pub fn equivariance_defect(
    system: &ShiftSystem,
    z: &MicrostateField,
    sigma: &SoficMap,
    g: &GroupElement,
) -> Result<f64> {
    z.check(sigma, system.alphabet_size())?;
    Ok(EdgeConstraint::build(system, sigma, g)?.defect(&z.0, system.metric()))
}

/// `|∫ f dφ_*(u_d) − ∫ f dμ|`.
pub fn empirical_gap(system: &ShiftSystem, z: &MicrostateField, sigma: &SoficMap, f: &TestFunction) -> Result<f64> {
    z.check(sigma, system.alphabet_size())?;
    let reader = WindowReader::build(system, sigma, f.window())?;
    let mut buf = Vec::new();
    let mut acc = 0.0;
    for j in 0..z.len() {
        reader.read(&z.0, j, &mut buf);
        acc += f.eval(&buf);
    }
    Ok((acc / z.len() as f64 - system.integrate(f)?).abs())
}

/// Membership in `Map_μ(Δ, F, δ, L, σ)` with the list of violated constraints.
pub fn is_good_microstate(
    system: &ShiftSystem,
    z: &MicrostateField,
    sigma: &SoficMap,
    params: &MicrostateParams,
) -> Result<MembershipReport> {
    z.check(sigma, system.alphabet_size())?;
    Ok(MicrostateChecker::new(system, sigma, params)?.report(&z.0))
}

/// Precompiled test for `AP(β, F, δ, σ)` on lifted observable fields.
#[derive(Clone, Debug)]
pub struct ApChecker {
    window: Vec<GroupElement>,
    inv: Vec<Vec<u32>>,
    identity_slot: usize,
    target: usize,
    mu: HashMap<u64, f64>,
    delta: f64,
    d: usize,
}

impl ApChecker {
    /// The identity is added to `F` when absent.
    pub fn new(
        system: &ShiftSystem,
        sigma: &SoficMap,
        beta: &Observable,
        f: &[GroupElement],
        delta: f64,
    ) -> Result<Self> {
        if !(delta > 0.0) {
            return invalid("delta must be positive");
        }
        let e = system.group().identity();
        let mut window = f.to_vec();
        if !window.contains(&e) {
            window.insert(0, e.clone());
        }
        let identity_slot = window.iter().position(|g| *g == e).unwrap();
        let inv = window
            .iter()
            .map(|g| Ok(sigma.inverse_perm(g)?.images().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let target = beta.target_size();
        if (target as f64).powi(window.len() as i32) > 1.8e19 {
            return Err(Error::Infeasible("observable window too large".into()));
        }
        let mu = system
            .pattern_distribution(&window, beta)?
            .into_iter()
            .map(|(p, m)| (encode(&p, target), m))
            .collect();
        Ok(ApChecker {
            window,
            inv,
            identity_slot,
            target,
            mu,
            delta,
            d: sigma.d(),
        })
    }

    pub fn window(&self) -> &[GroupElement] {
        &self.window
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn target_size(&self) -> usize {
        self.target
    }

    /// `μ` pattern masses keyed by mixed-radix code (first window element fastest).
    pub(crate) fn mu(&self) -> &HashMap<u64, f64> {
        &self.mu
    }

    pub(crate) fn identity(&self) -> &GroupElement {
        &self.window[self.identity_slot]
    }

    /// Images of `σ(window[slot])⁻¹`.
    pub(crate) fn inverse_images(&self, slot: usize) -> &[u32] {
        &self.inv[slot]
    }

    /// `Σ_b |u_d(ξ⁻¹ b) − μ(b)|` for the lift `ξ(j)(g) = y(σ(g)⁻¹ j)` of a `B`-field.
    pub fn distribution_distance(&self, y: &[u32]) -> f64 {
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for j in 0..self.d {
            let mut code = 0u64;
            for p in self.inv.iter().rev() {
                code = code * self.target as u64 + y[p[j] as usize] as u64;
            }
            *counts.entry(code).or_insert(0) += 1;
        }
        let mut seen_mass = 0.0;
        let mut sum = 0.0;
        for (code, n) in &counts {
            let m = self.mu.get(code).copied().unwrap_or(0.0);
            seen_mass += m;
            sum += (*n as f64 / self.d as f64 - m).abs();
        }
        let total: f64 = self.mu.values().sum();
        sum + (total - seen_mass).max(0.0)
    }

    /// Largest fraction over `g ∈ F` of sites with `ξ(j)(g) ≠ ξ(σ(g)⁻¹ j)(e)`.
    pub fn consistency_defect(&self, y: &[u32]) -> f64 {
        let e_inv = &self.inv[self.identity_slot];
        self.inv
            .iter()
            .map(|p| {
                let bad = (0..self.d)
                    .filter(|&j| y[p[j] as usize] != y[e_inv[p[j] as usize] as usize])
                    .count();
                bad as f64 / self.d as f64
            })
            .fold(0.0, f64::max)
    }

    pub fn accepts(&self, y: &[u32]) -> bool {
        self.distribution_distance(y) < self.delta && self.consistency_defect(y) < self.delta
    }
}

pub(crate) fn encode(pattern: &[u32], base: usize) -> u64 {
    pattern.iter().rev().fold(0u64, |acc, &b| acc * base as u64 + b as u64)
}

/// Membership of the lifted observable field `β∘ψ_z` in `AP(β, F, δ, σ)`.
pub fn ap_membership(
    system: &ShiftSystem,
    z: &MicrostateField,
    sigma: &SoficMap,
    beta: &Observable,
    f: &[GroupElement],
    delta: f64,
) -> Result<bool> {
    z.check(sigma, system.alphabet_size())?;
    let checker = ApChecker::new(system, sigma, beta, f, delta)?;
    let y: Vec<u32> = z.0.iter().map(|&a| beta.eval(a)).collect();
    Ok(checker.accepts(&y))
}

/// `Δ′(x, y) = Σ_g α_g Δ(x(g⁻¹), y(g⁻¹))` on configurations restricted to a finite window.
#[derive(Clone, Debug)]
pub struct AveragedMetric {
    base: BasePseudometric,
    /// Window coordinates `h = g⁻¹`, aligned with `weights`.
    window: Vec<GroupElement>,
    weights: Vec<f64>,
}

impl AveragedMetric {
    /// Coordinates of windowed configurations, in the order expected by [`AveragedMetric::dist`].
    pub fn window(&self) -> &[GroupElement] {
        &self.window
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dist(&self, x: &[u32], y: &[u32]) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.base.dist(x[i] as usize, y[i] as usize))
            .sum()
    }
}

/// Truncates `weights` to `truncation`, renormalizes, and requires the identity to carry
/// at least half the mass.
pub fn averaged_metric(
    group: &Group,
    base: &BasePseudometric,
    weights: &[(GroupElement, f64)],
    truncation: &[GroupElement],
) -> Result<AveragedMetric> {
    let total: f64 = weights.iter().map(|(_, w)| *w).sum();
    if weights.iter().any(|(_, w)| !(*w > 0.0)) {
        return invalid("weights must be positive");
    }
    if total > 1.0 + 1e-9 {
        return invalid(format!("weights sum to {total} > 1"));
    }
    let kept: Vec<(GroupElement, f64)> = weights
        .iter()
        .filter(|(g, _)| truncation.contains(g))
        .cloned()
        .collect();
    let kept_total: f64 = kept.iter().map(|(_, w)| *w).sum();
    if kept_total <= 0.0 {
        return invalid("truncation keeps no weight");
    }
    let e = group.identity();
    let we = kept
        .iter()
        .find(|(g, _)| *g == e)
        .map(|(_, w)| w / kept_total)
        .unwrap_or(0.0);
    if we < 0.5 - 1e-12 {
        return invalid(format!("identity weight {we} is below 1/2"));
    }
    let window = kept.iter().map(|(g, _)| group.inverse(g)).collect::<Result<Vec<_>>>()?;
    let weights = kept.iter().map(|(_, w)| w / kept_total).collect();
    Ok(AveragedMetric {
        base: base.clone(),
        window,
        weights,
    })
}

/// Partition of the alphabet by `Δ_A`-balls of radius `< κ`, centres taken from the
/// sample in order of first appearance, plus a remainder cell for unreached symbols.
///
/// The radius is the midpoint between `κ` and the largest realized distance below
/// `κ`, so no symbol sits on a ball boundary.
pub fn ball_partition_observable(system: &ShiftSystem, sample: &[MicrostateField], kappa: f64) -> Result<Observable> {
    if !(kappa > 0.0) {
        return invalid("kappa must be positive");
    }
    let metric = system.metric();
    let k = system.alphabet_size();
    let below = (0..k)
        .flat_map(|a| (0..k).map(move |b| (a, b)))
        .map(|(a, b)| metric.dist(a, b))
        .filter(|&x| x < kappa)
        .fold(0.0, f64::max);
    let radius = 0.5 * (below + kappa);
    let mut centres: Vec<u32> = Vec::new();
    for f in sample {
        for &a in f.symbols() {
            if a as usize >= k {
                return invalid("sample symbol outside the alphabet");
            }
            if !centres.contains(&a) {
                centres.push(a);
            }
        }
    }
    if sample.is_empty() {
        centres = (0..k as u32).collect();
    }
    let mut cell = vec![u32::MAX; k];
    let mut cells = 0u32;
    for &c in &centres {
        if cell[c as usize] != u32::MAX {
            continue;
        }
        for (b, slot) in cell.iter_mut().enumerate() {
            if *slot == u32::MAX && metric.dist(c as usize, b) < radius {
                *slot = cells;
            }
        }
        cells += 1;
    }
    if cell.contains(&u32::MAX) {
        for c in cell.iter_mut().filter(|c| **c == u32::MAX) {
            *c = cells;
        }
        cells += 1;
    }
    Observable::new(cell, cells as usize)
}
