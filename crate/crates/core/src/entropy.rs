//! Microstate counts and entropy estimates under the metric and observable definitions.
//!
//! All logarithms are natural. An empty microstate space has log-count `−∞`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::group::{generator_seed, GroupElement, SoficFamily, SoficMap};
use crate::logspace::{log_sum_exp, LnFactorial};
use crate::metric::{
    fields_are_separated, log_ball_volume_bound, max_separated_count, min_covering_count, BoundDirection, CountMode,
    PointCloud, EXACT_LIMIT,
};
use crate::microstates::{
    ball_partition_observable, ApChecker, MicrostateChecker, MicrostateField, MicrostateParams, Observable,
    ShiftSystem, TestFunction, VIOLATES_EMPIRICAL, VIOLATES_EQUIVARIANCE,
};

/// Largest `|A|^d` accepted by exhaustive enumeration.
pub const ENUMERATION_LIMIT: u64 = 1 << 24;
/// Largest `|A|^d` that [`Strategy::Auto`] enumerates.
const AUTO_ENUMERATION_LIMIT: u64 = 1 << 20;
/// Microstates kept in memory for separation counting.
const STORE_CAP: usize = 1 << 16;
/// Compositions visited by type-class counting.
const COMPOSITION_CAP: u64 = 50_000_000;
/// Violation patterns tried by propagation.
const DROP_SET_CAP: f64 = 20_000.0;
/// Candidate fields produced by propagation.
const CANDIDATE_CAP: f64 = (1u64 << 20) as f64;

/// How a cell is counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Type classes when they apply, else enumeration (`|A|^d ≤ 2²⁰`), else propagation.
    Auto,
    Exact,
    TypeClass,
    MonteCarlo {
        samples: u64,
        seed: u64,
    },
    Propagation,
}

impl Strategy {
    pub fn parse(s: &str, samples: u64, seed: u64) -> Result<Self> {
        Ok(match s {
            "auto" => Strategy::Auto,
            "exact" => Strategy::Exact,
            "type-class" => Strategy::TypeClass,
            "monte-carlo" => Strategy::MonteCarlo { samples, seed },
            "propagation" => Strategy::Propagation,
            other => {
                return Err(Error::Parse(format!(
                    "unknown strategy '{other}' (auto, exact, type-class, monte-carlo, propagation)"
                )))
            }
        })
    }
}

/// The counting mode that produced a result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CountingMode {
    ExactEnumeration,
    TypeClass,
    /// `half_width` is the 95% confidence half-width of the log-count.
    MonteCarlo {
        samples: u64,
        half_width: f64,
    },
    Propagation,
}

impl CountingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountingMode::ExactEnumeration => "exact-enumeration",
            CountingMode::TypeClass => "type-class",
            CountingMode::MonteCarlo { .. } => "monte-carlo",
            CountingMode::Propagation => "propagation",
        }
    }
}

mod log_value {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if *x < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad log value '{s}'"))),
        }
    }
}

/// A microstate count for one cell.
///
/// `log_count` is the log of the separated count (metric cells) or of the image count
/// (observable cells); `direction` says whether it is exact or a one-sided bound.
/// Monte-Carlo results are estimates and carry their half-width in `mode`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountResult {
    pub d: usize,
    #[serde(with = "log_value")]
    pub log_count: f64,
    pub log_upper: Option<f64>,
    pub mode: CountingMode,
    pub direction: BoundDirection,
    /// Log of the number of microstates before separation.
    #[serde(with = "log_value")]
    pub log_microstates: f64,
    pub microstate_count: Option<u64>,
    /// Log of the exact `S_ε` when the microstate set is small.
    pub log_covering: Option<f64>,
    pub violated_constraints: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl CountResult {
    fn empty(d: usize, mode: CountingMode, violated: Vec<String>, diagnostics: Vec<String>) -> Self {
        CountResult {
            d,
            log_count: f64::NEG_INFINITY,
            log_upper: None,
            mode,
            direction: BoundDirection::Exact,
            log_microstates: f64::NEG_INFINITY,
            microstate_count: Some(0),
            log_covering: None,
            violated_constraints: violated,
            diagnostics,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.log_count == f64::NEG_INFINITY
    }

    /// `(1/d)·log-count`.
    pub fn normalized(&self) -> f64 {
        self.log_count / self.d as f64
    }
}

pub fn binary_entropy(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("binary entropy needs t in [0,1], got {t}"));
    }
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    Ok(h(t) + h(1.0 - t))
}

fn ln_u64(n: u64) -> f64 {
    if n == 0 {
        f64::NEG_INFINITY
    } else {
        (n as f64).ln()
    }
}

fn field_space_size(k: usize, d: usize) -> Option<u64> {
    (k as u64).checked_pow(d as u32)
}

/// Enumerates `Aᵈ` in index order, in parallel with in-order aggregation.
fn enumerate_fields<T: Send>(
    k: usize,
    d: usize,
    init: impl Fn() -> T + Sync,
    visit: impl Fn(&mut T, &[u32]) + Sync,
) -> Vec<T> {
    let total = field_space_size(k, d).expect("caller checked the size");
    let chunk = 1u64 << 12;
    let chunks = total.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk;
            let end = (start + chunk).min(total);
            let mut state = init();
            let mut z = MicrostateField::from_index(start, d, k).symbols().to_vec();
            for _ in start..end {
                visit(&mut state, &z);
                for s in z.iter_mut() {
                    *s += 1;
                    if (*s as usize) < k {
                        break;
                    }
                    *s = 0;
                }
            }
            state
        })
        .collect()
}

fn violation_names(mask_counts: [u64; 2], groups: &[String]) -> (Vec<String>, Vec<String>) {
    let mut violated = Vec::new();
    let mut diagnostics = Vec::new();
    if mask_counts[0] > 0 {
        violated.push("equivariance".to_string());
        diagnostics.push(format!(
            "equivariance constraint (g in {{{}}}) violated by {} candidate fields",
            groups.join(", "),
            mask_counts[0]
        ));
    }
    if mask_counts[1] > 0 {
        violated.push("empirical".to_string());
        diagnostics.push(format!(
            "empirical constraint violated by {} candidate fields",
            mask_counts[1]
        ));
    }
    (violated, diagnostics)
}

/// Separation count for an explicitly known microstate set.
fn separate(
    system: &ShiftSystem,
    members: Vec<MicrostateField>,
    total: u64,
    eps: f64,
    d: usize,
    mode: CountingMode,
    diagnostics: Vec<String>,
) -> Result<CountResult> {
    let metric = system.metric();
    let log_total = ln_u64(total);
    let mut result = CountResult {
        d,
        log_count: log_total,
        log_upper: None,
        mode,
        direction: BoundDirection::Exact,
        log_microstates: log_total,
        microstate_count: Some(total),
        log_covering: None,
        violated_constraints: Vec::new(),
        diagnostics,
    };
    if total as usize <= EXACT_LIMIT {
        let cloud = PointCloud::fields(members, metric.clone())?;
        result.log_count = ln_u64(max_separated_count(&cloud, eps, CountMode::Exact)?.value as u64);
        result.log_covering = Some(ln_u64(min_covering_count(&cloud, eps, CountMode::Exact)?.value as u64));
    } else if fields_are_separated(metric, d, eps) {
        // distinct fields are already more than ε apart
    } else if members.len() as u64 == total {
        let cloud = PointCloud::fields(members, metric.clone())?;
        let c = max_separated_count(&cloud, eps, CountMode::Greedy)?;
        result.log_count = ln_u64(c.value as u64);
        result.direction = c.direction;
        result.log_upper = Some(log_total);
    } else {
        let lnf = LnFactorial::new(d);
        result.log_count = (log_total - log_ball_volume_bound(metric, d, eps, &lnf)).max(0.0);
        result.direction = BoundDirection::Lower;
        result.log_upper = Some(log_total);
        result
            .diagnostics
            .push("separation bounded below by ball volume".into());
    }
    Ok(result)
}

fn exact_metric_cell(
    system: &ShiftSystem,
    checker: &MicrostateChecker,
    params: &MicrostateParams,
    d: usize,
) -> Result<CountResult> {
    let k = system.alphabet_size();
    match field_space_size(k, d) {
        Some(t) if t <= ENUMERATION_LIMIT => {}
        _ => {
            return Err(Error::Infeasible(format!(
                "exact enumeration of {k}^{d} fields exceeds 2^24; use type-class (Bernoulli, identity-window tests), propagation (metric alphabet, small δ²d), or monte-carlo"
            )))
        }
    }
    struct Acc {
        count: u64,
        members: Vec<MicrostateField>,
        masks: [u64; 2],
    }
    let parts = enumerate_fields(
        k,
        d,
        || Acc {
            count: 0,
            members: Vec::new(),
            masks: [0; 2],
        },
        |acc, z| {
            let m = checker.violation_mask(z);
            if m == 0 {
                acc.count += 1;
                if acc.members.len() < STORE_CAP {
                    acc.members.push(MicrostateField::new(z.to_vec()));
                }
            } else {
                acc.masks[0] += (m & VIOLATES_EQUIVARIANCE != 0) as u64;
                acc.masks[1] += (m & VIOLATES_EMPIRICAL != 0) as u64;
            }
        },
    );
    let mut count = 0;
    let mut members = Vec::new();
    let mut masks = [0u64; 2];
    for p in parts {
        count += p.count;
        masks[0] += p.masks[0];
        masks[1] += p.masks[1];
        let room = STORE_CAP - members.len();
        members.extend(p.members.into_iter().take(room));
    }
    let names = edge_names(system, params);
    let (violated, diagnostics) = violation_names(masks, &names);
    if count == 0 {
        return Ok(CountResult::empty(
            d,
            CountingMode::ExactEnumeration,
            violated,
            diagnostics,
        ));
    }
    let mut r = separate(
        system,
        members,
        count,
        params.epsilon,
        d,
        CountingMode::ExactEnumeration,
        Vec::new(),
    )?;
    r.violated_constraints = violated;
    Ok(r)
}

fn edge_names(system: &ShiftSystem, params: &MicrostateParams) -> Vec<String> {
    let e = system.group().identity();
    params
        .f
        .iter()
        .filter(|g| **g != e)
        .map(|g| system.group().format_element(g))
        .collect()
}

/// Per-symbol values of a test function whose window only reads the identity.
fn identity_window_values(system: &ShiftSystem, f: &TestFunction) -> Option<Vec<f64>> {
    let e = system.group().identity();
    if !f.window().iter().all(|h| *h == e) {
        return None;
    }
    let w = f.window().len();
    Some(
        (0..system.alphabet_size() as u32)
            .map(|a| f.eval(&vec![a; w]))
            .collect(),
    )
}

/// Visits every composition of `d` into `k` parts inside per-part intervals.
fn for_each_composition(
    d: usize,
    bounds: &[(usize, usize)],
    prune: &(dyn Fn(&[usize]) -> bool + Sync),
    visit: &mut dyn FnMut(&[usize]),
) -> Result<()> {
    fn rec(
        i: usize,
        left: usize,
        bounds: &[(usize, usize)],
        cur: &mut Vec<usize>,
        prune: &(dyn Fn(&[usize]) -> bool + Sync),
        visit: &mut dyn FnMut(&[usize]),
        visited: &mut u64,
    ) -> Result<()> {
        *visited += 1;
        if *visited > COMPOSITION_CAP {
            return Err(Error::Infeasible("too many type classes".into()));
        }
        let k = bounds.len();
        if i + 1 == k {
            if left >= bounds[i].0 && left <= bounds[i].1 {
                cur.push(left);
                if !prune(cur) {
                    visit(cur);
                }
                cur.pop();
            }
            return Ok(());
        }
        let rest_min: usize = bounds[i + 1..].iter().map(|b| b.0).sum();
        let rest_max: usize = bounds[i + 1..]
            .iter()
            .map(|b| b.1)
            .fold(0usize, |a, b| a.saturating_add(b));
        let lo = bounds[i].0.max(left.saturating_sub(rest_max));
        let hi = bounds[i].1.min(left.saturating_sub(rest_min));
        if left < rest_min {
            return Ok(());
        }
        for n in lo..=hi {
            cur.push(n);
            if !prune(cur) {
                rec(i + 1, left - n, bounds, cur, prune, visit, visited)?;
            }
            cur.pop();
        }
        Ok(())
    }
    let mut visited = 0;
    rec(
        0,
        d,
        bounds,
        &mut Vec::with_capacity(bounds.len()),
        prune,
        visit,
        &mut visited,
    )
}

fn type_class_metric_cell(
    system: &ShiftSystem,
    checker: &MicrostateChecker,
    params: &MicrostateParams,
    d: usize,
) -> Result<CountResult> {
    let crate::microstates::MeasureSpec::Bernoulli(_) = system.measure() else {
        return Err(Error::Infeasible("type-class counting needs a Bernoulli system".into()));
    };
    if checker.edges.iter().any(|e| e.u != e.v) {
        return Err(Error::Infeasible(
            "type-class counting needs σ to respect inverses on F (equivariance must hold exactly)".into(),
        ));
    }
    let tests = params
        .tests
        .iter()
        .map(|f| {
            identity_window_values(system, f)
                .map(|v| (v, system.integrate(f)))
                .ok_or_else(|| Error::Infeasible(format!("test function {} reads outside the identity", f.id())))
        })
        .collect::<Result<Vec<_>>>()?;
    let tests = tests
        .into_iter()
        .map(|(v, i)| Ok((v, i?)))
        .collect::<Result<Vec<(Vec<f64>, f64)>>>()?;
    let k = system.alphabet_size();
    let delta = params.delta;
    // indicator tests pin down per-symbol intervals
    let mut bounds = vec![(0usize, d); k];
    for (vals, integral) in &tests {
        let ones: Vec<usize> = (0..k).filter(|&a| vals[a] == 1.0).collect();
        if ones.len() == 1 && vals.iter().filter(|&&v| v == 0.0).count() == k - 1 {
            let a = ones[0];
            let lo = ((integral - delta) * d as f64).floor().max(0.0) as usize;
            let hi = (((integral + delta) * d as f64).ceil() as usize).min(d);
            bounds[a] = (bounds[a].0.max(lo), bounds[a].1.min(hi));
        }
    }
    let accept = |n: &[usize]| {
        tests.iter().all(|(vals, integral)| {
            let mean: f64 = n.iter().zip(vals).map(|(&c, v)| c as f64 * v).sum::<f64>() / d as f64;
            (mean - integral).abs() < delta
        })
    };
    let lnf = LnFactorial::new(d);
    let mut terms = Vec::new();
    let mut exact_total: Option<u64> = Some(0);
    for_each_composition(d, &bounds, &|_| false, &mut |n| {
        if accept(n) {
            let t = lnf.ln_multinomial(n);
            terms.push(t);
            exact_total = exact_total.and_then(|s| {
                if t < 40.0 {
                    s.checked_add(t.exp().round() as u64)
                } else {
                    None
                }
            });
        }
    })?;
    if terms.is_empty() {
        return Ok(CountResult::empty(
            d,
            CountingMode::TypeClass,
            vec!["empirical".into()],
            vec!["empirical constraint: no empirical distribution lies within δ of μ".into()],
        ));
    }
    let log_y = log_sum_exp(&terms);
    let mut r = CountResult {
        d,
        log_count: log_y,
        log_upper: None,
        mode: CountingMode::TypeClass,
        direction: BoundDirection::Exact,
        log_microstates: log_y,
        microstate_count: exact_total,
        log_covering: None,
        violated_constraints: Vec::new(),
        diagnostics: vec![format!("{} admissible type classes", terms.len())],
    };
    if !fields_are_separated(system.metric(), d, params.epsilon) {
        r.log_count = (log_y - log_ball_volume_bound(system.metric(), d, params.epsilon, &lnf)).max(0.0);
        r.direction = BoundDirection::Lower;
        r.log_upper = Some(log_y);
    }
    Ok(r)
}

fn monte_carlo_metric_cell(
    system: &ShiftSystem,
    checker: &MicrostateChecker,
    params: &MicrostateParams,
    d: usize,
    samples: u64,
    seed: u64,
) -> Result<CountResult> {
    if samples == 0 {
        return invalid("monte-carlo needs at least one sample");
    }
    let k = system.alphabet_size();
    let chunk = 1024u64;
    let hits: u64 = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(generator_seed(seed, c));
            let n = chunk.min(samples - c * chunk);
            let mut z = vec![0u32; d];
            let mut hits = 0;
            for _ in 0..n {
                for s in z.iter_mut() {
                    *s = rng.gen_range(0..k as u32);
                }
                hits += checker.accepts(&z) as u64;
            }
            hits
        })
        .sum();
    let log_space = d as f64 * (k as f64).ln();
    let separated = fields_are_separated(system.metric(), d, params.epsilon);
    if hits == 0 {
        let log_bound = log_space + (3.0 / samples as f64).ln();
        return Ok(CountResult {
            d,
            log_count: log_bound,
            log_upper: Some(log_bound),
            mode: CountingMode::MonteCarlo {
                samples,
                half_width: 0.0,
            },
            direction: BoundDirection::Upper,
            log_microstates: log_bound,
            microstate_count: None,
            log_covering: None,
            violated_constraints: Vec::new(),
            diagnostics: vec![format!(
                "no accepted samples out of {samples}; 95% upper bound reported"
            )],
        });
    }
    let p = hits as f64 / samples as f64;
    let estimate = log_space + p.ln();
    let half_width = 1.96 * ((1.0 - p) / (samples as f64 * p)).sqrt();
    Ok(CountResult {
        d,
        log_count: estimate,
        log_upper: None,
        mode: CountingMode::MonteCarlo { samples, half_width },
        direction: if separated {
            BoundDirection::Exact
        } else {
            BoundDirection::Upper
        },
        log_microstates: estimate,
        microstate_count: None,
        log_covering: None,
        violated_constraints: Vec::new(),
        diagnostics: vec![format!("{hits} of {samples} samples accepted")],
    })
}

/// `z[a] = map[z[b]]`; `u32::MAX` marks an undefined value.
#[derive(Clone, Debug)]
struct Link {
    a: u32,
    b: u32,
    map: Vec<u32>,
    inv: Vec<u32>,
}

impl Link {
    fn new(a: u32, b: u32, map: Vec<u32>) -> Result<Self> {
        let mut inv = vec![u32::MAX; map.len()];
        for (x, &y) in map.iter().enumerate() {
            if y == u32::MAX {
                continue;
            }
            if inv[y as usize] != u32::MAX {
                return Err(Error::Infeasible(
                    "propagation needs pair relations that are permutations".into(),
                ));
            }
            inv[y as usize] = x as u32;
        }
        Ok(Link { a, b, map, inv })
    }

    fn trivial(&self) -> bool {
        self.a == self.b && self.map.iter().enumerate().all(|(x, &y)| y == x as u32)
    }
}

/// Exact constraint propagation: units may be dropped within per-group budgets,
/// the remaining links are solved component by component.
struct Propagation {
    d: usize,
    k: usize,
    units: Vec<Vec<Link>>,
    groups: Vec<Vec<usize>>,
    budgets: Vec<usize>,
}

impl Propagation {
    fn drop_sets(&self) -> Result<Vec<Vec<usize>>> {
        let lnf = LnFactorial::new(self.d.max(1) * 4);
        let mut total = 1.0f64;
        for (g, &b) in self.groups.iter().zip(&self.budgets) {
            let n = g.len();
            let s: f64 = (0..=b.min(n)).map(|i| lnf.ln_binomial(n, i).exp()).sum();
            total *= s;
        }
        if total > DROP_SET_CAP {
            return Err(Error::Infeasible(format!(
                "propagation would try {total:.3e} violation patterns; lower δ²d or use monte-carlo"
            )));
        }
        let mut sets: Vec<Vec<usize>> = vec![Vec::new()];
        for (g, &b) in self.groups.iter().zip(&self.budgets) {
            let mut subsets: Vec<Vec<usize>> = Vec::new();
            fn combos(items: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if cur.len() == size {
                    out.push(cur.clone());
                    return;
                }
                for i in start..items.len() {
                    cur.push(items[i]);
                    combos(items, size, i + 1, cur, out);
                    cur.pop();
                }
            }
            for size in 0..=b.min(g.len()) {
                combos(g, size, 0, &mut Vec::new(), &mut subsets);
            }
            sets = sets
                .iter()
                .flat_map(|s| {
                    subsets.iter().map(move |t| {
                        let mut u = s.clone();
                        u.extend_from_slice(t);
                        u
                    })
                })
                .collect();
        }
        Ok(sets)
    }

    fn solve_with(&self, dropped: &[usize]) -> Result<Vec<Vec<u32>>> {
        let dropped: HashSet<usize> = dropped.iter().copied().collect();
        let mut adj: Vec<Vec<(u32, &[u32])>> = vec![Vec::new(); self.d];
        for (i, unit) in self.units.iter().enumerate() {
            if dropped.contains(&i) {
                continue;
            }
            for l in unit.iter().filter(|l| !l.trivial()) {
                adj[l.b as usize].push((l.a, &l.map));
                adj[l.a as usize].push((l.b, &l.inv));
            }
        }
        let mut comp_of = vec![usize::MAX; self.d];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for s in 0..self.d {
            if comp_of[s] != usize::MAX {
                continue;
            }
            let c = comps.len();
            let mut order = vec![s];
            comp_of[s] = c;
            let mut head = 0;
            while head < order.len() {
                let x = order[head];
                head += 1;
                for &(y, _) in &adj[x] {
                    if comp_of[y as usize] == usize::MAX {
                        comp_of[y as usize] = c;
                        order.push(y as usize);
                    }
                }
            }
            comps.push(order);
        }
        let mut comp_solutions: Vec<Vec<Vec<u32>>> = Vec::with_capacity(comps.len());
        let mut log_total = 0.0;
        let mut value = vec![u32::MAX; self.d];
        for comp in &comps {
            let mut sols = Vec::new();
            for root in 0..self.k as u32 {
                for &x in comp {
                    value[x] = u32::MAX;
                }
                value[comp[0]] = root;
                let mut ok = true;
                'bfs: for &x in comp {
                    let vx = value[x];
                    for &(y, m) in &adj[x] {
                        let want = m[vx as usize];
                        if want == u32::MAX {
                            ok = false;
                            break 'bfs;
                        }
                        let y = y as usize;
                        if value[y] == u32::MAX {
                            value[y] = want;
                        } else if value[y] != want {
                            ok = false;
                            break 'bfs;
                        }
                    }
                }
                if ok {
                    sols.push(comp.iter().map(|&x| value[x]).collect());
                }
            }
            if sols.is_empty() {
                return Ok(Vec::new());
            }
            log_total += (sols.len() as f64).ln();
            comp_solutions.push(sols);
        }
        if log_total > CANDIDATE_CAP.ln() {
            return Err(Error::Infeasible(format!(
                "propagation leaves {:.3e} candidate fields; add equivariance constraints or use monte-carlo",
                log_total.exp()
            )));
        }
        let mut out = vec![vec![0u32; self.d]];
        for (comp, sols) in comps.iter().zip(&comp_solutions) {
            out = out
                .into_iter()
                .flat_map(|f| {
                    sols.iter().map(move |s| {
                        let mut f = f.clone();
                        for (&x, &v) in comp.iter().zip(s) {
                            f[x] = v;
                        }
                        f
                    })
                })
                .collect();
        }
        Ok(out)
    }

    fn candidates(&self) -> Result<BTreeSet<Vec<u32>>> {
        let sets = self.drop_sets()?;
        let parts = sets
            .par_iter()
            .map(|s| self.solve_with(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().collect())
    }
}

fn propagation_metric_cell(
    system: &ShiftSystem,
    checker: &MicrostateChecker,
    params: &MicrostateParams,
    d: usize,
) -> Result<CountResult> {
    let metric = system.metric();
    if !metric.is_metric() {
        return Err(Error::Infeasible(
            "propagation needs a metric (not a pseudometric) on the alphabet".into(),
        ));
    }
    let Some(m) = metric.min_positive() else {
        return exact_metric_cell(system, checker, params, d);
    };
    let budget_f = params.delta * params.delta * d as f64 / (m * m);
    // a violated link costs at least m²/d in Δ₂², and the defect must stay below δ
    let budget = (budget_f.ceil() as usize).saturating_sub(1);
    let mut units = Vec::new();
    let mut groups = Vec::new();
    for e in &checker.edges {
        let mut g = Vec::with_capacity(d);
        for j in 0..d {
            g.push(units.len());
            units.push(vec![Link::new(e.u[j], e.v[j], e.pi.clone())?]);
        }
        groups.push(g);
    }
    let budgets = vec![budget; groups.len()];
    let prop = Propagation {
        d,
        k: system.alphabet_size(),
        units,
        groups,
        budgets,
    };
    let candidates = prop.candidates()?;
    let n_candidates = candidates.len() as u64;
    let mut members = Vec::new();
    let mut masks = [0u64; 2];
    for z in candidates {
        let mask = checker.violation_mask(&z);
        if mask == 0 {
            members.push(MicrostateField::new(z));
        } else {
            masks[0] += (mask & VIOLATES_EQUIVARIANCE != 0) as u64;
            masks[1] += (mask & VIOLATES_EMPIRICAL != 0) as u64;
        }
    }
    let names = edge_names(system, params);
    let (mut violated, mut diagnostics) = violation_names(masks, &names);
    let k = system.alphabet_size();
    let all_fields = field_space_size(k, d);
    if all_fields != Some(n_candidates) && !violated.iter().any(|v| v == "equivariance") {
        violated.insert(0, "equivariance".into());
        diagnostics.insert(
            0,
            format!(
                "equivariance constraint (g in {{{}}}) violated by every field outside the {n_candidates} propagation candidates",
                names.join(", ")
            ),
        );
    }
    if members.is_empty() {
        return Ok(CountResult::empty(d, CountingMode::Propagation, violated, diagnostics));
    }
    let total = members.len() as u64;
    let mut r = separate(
        system,
        members,
        total,
        params.epsilon,
        d,
        CountingMode::Propagation,
        Vec::new(),
    )?;
    r.violated_constraints = violated;
    Ok(r)
}

fn type_class_applies(system: &ShiftSystem, checker: &MicrostateChecker, params: &MicrostateParams) -> bool {
    system.is_bernoulli()
        && checker.edges.iter().all(|e| e.u == e.v)
        && params.tests.iter().all(|f| identity_window_values(system, f).is_some())
}

/// `log N_ε(Map_μ(Δ, F, δ, L, σ), Δ₂)` with the chosen strategy.
pub fn metric_entropy_cell(
    system: &ShiftSystem,
    sigma: &SoficMap,
    params: &MicrostateParams,
    strategy: Strategy,
) -> Result<CountResult> {
    let checker = MicrostateChecker::new(system, sigma, params)?;
    let d = sigma.d();
    match strategy {
        Strategy::Exact => exact_metric_cell(system, &checker, params, d),
        Strategy::TypeClass => type_class_metric_cell(system, &checker, params, d),
        Strategy::MonteCarlo { samples, seed } => monte_carlo_metric_cell(system, &checker, params, d, samples, seed),
        Strategy::Propagation => propagation_metric_cell(system, &checker, params, d),
        Strategy::Auto => {
            if type_class_applies(system, &checker, params) {
                return type_class_metric_cell(system, &checker, params, d);
            }
            if field_space_size(system.alphabet_size(), d).is_some_and(|t| t <= AUTO_ENUMERATION_LIMIT) {
                return exact_metric_cell(system, &checker, params, d);
            }
            propagation_metric_cell(system, &checker, params, d).map_err(|e| {
                Error::Infeasible(format!(
                    "no feasible counting strategy at d = {d}: {e}; alternatives: smaller d (exact), identity-window tests on a Bernoulli system (type-class), monte-carlo"
                ))
            })
        }
    }
}

/// `log |(π*)ᵈ(AP(β, F, δ, σ))|`: distinct `α`-images of approximately periodic `β`-fields.
#[allow(clippy::too_many_arguments)]
pub fn observable_entropy_cell(
    system: &ShiftSystem,
    sigma: &SoficMap,
    alpha: &Observable,
    beta: &Observable,
    pi: &[u32],
    f: &[GroupElement],
    delta: f64,
    strategy: Strategy,
) -> Result<CountResult> {
    beta.check_refines(alpha, pi)?;
    let checker = ApChecker::new(system, sigma, beta, f, delta)?;
    let d = sigma.d();
    let identity_only = checker.window().len() == 1;
    let b = beta.target_size();
    let use_type = match strategy {
        Strategy::TypeClass => true,
        Strategy::Auto => system.is_bernoulli() && identity_only,
        _ => false,
    };
    if use_type {
        if !(system.is_bernoulli() && identity_only) {
            return Err(Error::Infeasible(
                "type-class counting needs a Bernoulli system and F = {e}".into(),
            ));
        }
        let mu: Vec<f64> = (0..b as u64)
            .map(|c| checker.mu().get(&c).copied().unwrap_or(0.0))
            .collect();
        let prune = |n: &[usize]| {
            let s: f64 = n.iter().zip(&mu).map(|(&c, m)| (c as f64 / d as f64 - m).abs()).sum();
            s >= delta
        };
        let lnf = LnFactorial::new(d);
        let mut members = Vec::new();
        let mut images: BTreeSet<Vec<usize>> = BTreeSet::new();
        for_each_composition(d, &vec![(0, d); b], &prune, &mut |n| {
            members.push(lnf.ln_multinomial(n));
            let mut m = vec![0usize; alpha.target_size()];
            for (cell, &c) in n.iter().enumerate() {
                m[pi[cell] as usize] += c;
            }
            images.insert(m);
        })?;
        if members.is_empty() {
            return Ok(CountResult::empty(
                d,
                CountingMode::TypeClass,
                vec!["distribution".into()],
                vec!["no empirical distribution of β lies within δ of μ".into()],
            ));
        }
        let terms: Vec<f64> = images.iter().map(|m| lnf.ln_multinomial(m)).collect();
        let log_count = log_sum_exp(&terms);
        return Ok(CountResult {
            d,
            log_count,
            log_upper: None,
            mode: CountingMode::TypeClass,
            direction: BoundDirection::Exact,
            log_microstates: log_sum_exp(&members),
            microstate_count: None,
            log_covering: None,
            violated_constraints: Vec::new(),
            diagnostics: vec![format!("{} admissible image type classes", images.len())],
        });
    }
    let enumerate = match strategy {
        Strategy::Exact => true,
        Strategy::Auto => field_space_size(b, d).is_some_and(|t| t <= AUTO_ENUMERATION_LIMIT),
        Strategy::Propagation => false,
        _ => {
            return Err(Error::Infeasible(
                "observable cells support auto, exact, type-class and propagation".into(),
            ))
        }
    };
    let (members, mode): (Vec<Vec<u32>>, CountingMode) = if enumerate {
        if !field_space_size(b, d).is_some_and(|t| t <= ENUMERATION_LIMIT) {
            return Err(Error::Infeasible(format!(
                "exact enumeration of {b}^{d} observable fields exceeds 2^24"
            )));
        }
        let parts = enumerate_fields(b, d, Vec::new, |acc: &mut Vec<Vec<u32>>, y| {
            if checker.accepts(y) {
                acc.push(y.to_vec());
            }
        });
        (parts.into_iter().flatten().collect(), CountingMode::ExactEnumeration)
    } else {
        (ap_propagation(&checker, d)?, CountingMode::Propagation)
    };
    if members.is_empty() {
        return Ok(CountResult::empty(
            d,
            mode,
            vec!["distribution".into()],
            vec!["no observable field is approximately periodic".into()],
        ));
    }
    let n_members = members.len() as u64;
    let images: BTreeSet<Vec<u32>> = members
        .into_iter()
        .map(|y| y.into_iter().map(|c| pi[c as usize]).collect())
        .collect();
    Ok(CountResult {
        d,
        log_count: ln_u64(images.len() as u64),
        log_upper: None,
        mode,
        direction: BoundDirection::Exact,
        log_microstates: ln_u64(n_members),
        microstate_count: Some(n_members),
        log_covering: None,
        violated_constraints: Vec::new(),
        diagnostics: Vec::new(),
    })
}

/// Sites whose `F`-pattern has zero `μ`-mass cost at least twice their share in the
/// distribution distance, so fewer than `δd/2` of them are allowed.
fn ap_propagation(checker: &ApChecker, d: usize) -> Result<Vec<Vec<u32>>> {
    let b = checker.target_size();
    let w = checker.window().len();
    let e_slot = checker
        .window()
        .iter()
        .position(|g| g == checker.identity())
        .expect("identity is always in the window");
    let patterns: Vec<Vec<u32>> = checker
        .mu()
        .iter()
        .filter(|(_, &m)| m > 0.0)
        .map(|(&code, _)| {
            let mut c = code;
            (0..w)
                .map(|_| {
                    let x = (c % b as u64) as u32;
                    c /= b as u64;
                    x
                })
                .collect()
        })
        .collect();
    let budget = ((checker.delta() * d as f64 / 2.0).ceil() as usize).saturating_sub(1);
    let mut units: Vec<Vec<Link>> = (0..d).map(|_| Vec::new()).collect();
    for slot in (0..w).filter(|&s| s != e_slot) {
        let mut map = vec![u32::MAX; b];
        for p in &patterns {
            let (x, y) = (p[e_slot] as usize, p[slot]);
            if map[x] != u32::MAX && map[x] != y {
                return Err(Error::Infeasible(
                    "propagation needs pair relations that are functions".into(),
                ));
            }
            map[x] = y;
        }
        let perm = checker.inverse_images(slot);
        for (j, unit) in units.iter_mut().enumerate() {
            unit.push(Link::new(perm[j], j as u32, map.clone())?);
        }
    }
    // a single-site window still restricts values to the support of μ
    let mut allowed = vec![false; b];
    for p in &patterns {
        allowed[p[e_slot] as usize] = true;
    }
    if allowed.iter().any(|a| !a) {
        let map: Vec<u32> = (0..b as u32)
            .map(|x| if allowed[x as usize] { x } else { u32::MAX })
            .collect();
        for (j, unit) in units.iter_mut().enumerate() {
            unit.push(Link::new(j as u32, j as u32, map.clone())?);
        }
    }
    let groups = vec![(0..d).collect()];
    let prop = Propagation {
        d,
        k: b,
        units,
        groups,
        budgets: vec![budget],
    };
    Ok(prop.candidates()?.into_iter().filter(|y| checker.accepts(y)).collect())
}

/// One preset family of test functions: cylinders over balls of radius `0..=r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LPreset {
    pub cylinder_radius: usize,
}

impl LPreset {
    pub fn id(&self) -> String {
        format!("cyl{}", self.cylinder_radius)
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.strip_prefix("cyl")
            .and_then(|r| r.parse().ok())
            .map(|cylinder_radius| LPreset { cylinder_radius })
            .ok_or_else(|| Error::Parse(format!("unknown L preset '{s}' (expected cylN)")))
    }

    pub fn tests(&self, system: &ShiftSystem) -> Result<Vec<TestFunction>> {
        TestFunction::cylinder_family(system.group(), system.alphabet_size(), self.cylinder_radius)
    }
}

/// Which definition a sweep evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    Metric,
    /// Ball-partition observables; the ε grid is read as the partition scale κ.
    Observable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrids {
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    pub f_radii: Vec<usize>,
    pub l_presets: Vec<LPreset>,
}

impl SweepGrids {
    pub fn check(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.deltas.is_empty() || self.f_radii.is_empty() || self.l_presets.is_empty() {
            return invalid("sweep grids must be nonempty");
        }
        Ok(())
    }
}

/// Grid coordinates of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub d: usize,
    pub epsilon: f64,
    pub f_radius: usize,
    pub delta: f64,
    pub l_id: String,
}

impl CellKey {
    pub fn canonical(&self) -> String {
        format!(
            "d={};eps={:e};F={};delta={:e};L={}",
            self.d, self.epsilon, self.f_radius, self.delta, self.l_id
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: CellKey,
    pub result: std::result::Result<CountResult, String>,
}

/// Cell-level memoization hook used by sweeps.
pub trait CellCache: Sync {
    fn get(&self, key: &CellKey) -> Option<CountResult>;
    fn put(&self, key: &CellKey, result: &CountResult);
}

/// The reduction for one `(F, δ, L)` choice at fixed `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimsupProxy {
    pub f_radius: usize,
    pub delta: f64,
    pub l_id: String,
    pub d: usize,
    #[serde(with = "log_value")]
    pub value: f64,
    pub direction: BoundDirection,
    pub plateau: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReduction {
    pub epsilon: f64,
    #[serde(with = "log_value")]
    pub value: f64,
    pub argmin: Option<LimsupProxy>,
    pub proxies: Vec<LimsupProxy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub method: SweepMethod,
    pub dims: Vec<usize>,
    pub grids: SweepGrids,
    pub cells: Vec<CellRecord>,
    pub per_epsilon: Vec<EpsilonReduction>,
    #[serde(with = "log_value")]
    pub value: f64,
    pub direction: BoundDirection,
    pub plateau: bool,
    pub monotone: bool,
    pub provenance: Vec<String>,
    pub warnings: Vec<String>,
}

pub const PLATEAU_TOLERANCE: f64 = 0.01;

/// Runs every cell of the grid lattice and reduces: limsup proxy over `d`, min over
/// `(F, δ, L)`, max over `ε`.
pub fn entropy_sweep(
    system: &ShiftSystem,
    family: &SoficFamily,
    grids: &SweepGrids,
    method: SweepMethod,
    strategy: Strategy,
    cache: Option<&dyn CellCache>,
) -> Result<EntropyEstimate> {
    grids.check()?;
    if family.is_empty() {
        return invalid("sofic family has no dimensions");
    }
    if family.group() != system.group() {
        return Err(Error::GroupMismatch(format!(
            "system acts by {}, family is for {}",
            system.group(),
            family.group()
        )));
    }
    let maps = (0..family.len()).map(|i| family.map(i)).collect::<Result<Vec<_>>>()?;
    let mut keys = Vec::new();
    for (i, &d) in family.dims().iter().enumerate() {
        for &epsilon in &grids.epsilons {
            for &f_radius in &grids.f_radii {
                for &delta in &grids.deltas {
                    for l in &grids.l_presets {
                        let l_id = match method {
                            SweepMethod::Metric => l.id(),
                            SweepMethod::Observable => "-".to_string(),
                        };
                        let key = CellKey {
                            d,
                            epsilon,
                            f_radius,
                            delta,
                            l_id,
                        };
                        if !keys.iter().any(|(_, k, _)| *k == key) {
                            keys.push((i, key, *l));
                        }
                    }
                }
            }
        }
    }
    let cells: Vec<CellRecord> = keys
        .par_iter()
        .map(|(i, key, l)| {
            let result = cache.and_then(|c| c.get(key)).map(Ok).unwrap_or_else(|| {
                let r = run_cell(system, &maps[*i], key, l, method, strategy);
                if let (Ok(r), Some(c)) = (&r, cache) {
                    c.put(key, r);
                }
                r
            });
            CellRecord {
                key: key.clone(),
                result: result.map_err(|e| e.to_string()),
            }
        })
        .collect();
    let mut cells = cells;
    cells.sort_by(|a, b| {
        let (x, y) = (&a.key, &b.key);
        x.d.cmp(&y.d)
            .then(x.epsilon.total_cmp(&y.epsilon))
            .then(x.f_radius.cmp(&y.f_radius))
            .then(x.delta.total_cmp(&y.delta))
            .then(x.l_id.cmp(&y.l_id))
    });
    Ok(reduce(method, family, grids, cells))
}

fn run_cell(
    system: &ShiftSystem,
    sigma: &SoficMap,
    key: &CellKey,
    l: &LPreset,
    method: SweepMethod,
    strategy: Strategy,
) -> Result<CountResult> {
    let f = system.group().ball(key.f_radius)?;
    match method {
        SweepMethod::Metric => {
            let params = MicrostateParams::new(f, key.delta, key.epsilon, l.tests(system)?)?;
            metric_entropy_cell(system, sigma, &params, strategy)
        }
        SweepMethod::Observable => {
            let alpha = ball_partition_observable(system, &[], key.epsilon)?;
            let pi: Vec<u32> = (0..alpha.target_size() as u32).collect();
            observable_entropy_cell(system, sigma, &alpha, &alpha, &pi, &f, key.delta, strategy)
        }
    }
}

fn reduce(method: SweepMethod, family: &SoficFamily, grids: &SweepGrids, cells: Vec<CellRecord>) -> EntropyEstimate {
    let mut warnings = Vec::new();
    let mut provenance = vec![format!(
        "sofic family: {} with d in {:?}{}",
        family.provenance(),
        family.dims(),
        family.seed().map(|s| format!(", seed {s}")).unwrap_or_default()
    )];
    for c in &cells {
        if let Err(e) = &c.result {
            warnings.push(format!("cell {} failed: {e}", c.key.canonical()));
        }
    }
    // limsup proxy per (ε, F, δ, L)
    let mut groups: BTreeMap<(u64, usize, u64, String), Vec<&CellRecord>> = BTreeMap::new();
    for c in &cells {
        let k = &c.key;
        groups
            .entry((k.epsilon.to_bits(), k.f_radius, k.delta.to_bits(), k.l_id.clone()))
            .or_default()
            .push(c);
    }
    let mut per_eps: BTreeMap<u64, Vec<LimsupProxy>> = BTreeMap::new();
    for ((eps_bits, f_radius, delta_bits, l_id), list) in &groups {
        let ok: Vec<(usize, &CountResult)> = list
            .iter()
            .filter_map(|c| c.result.as_ref().ok().map(|r| (c.key.d, r)))
            .collect();
        let Some(&(d, last)) = ok.iter().max_by_key(|(d, _)| *d) else {
            continue;
        };
        let value = last.normalized();
        let plateau = match ok.iter().filter(|(x, _)| *x < d).max_by_key(|(x, _)| *x) {
            Some((_, prev)) => {
                let p = prev.normalized();
                (p == value) || (value - p).abs() < PLATEAU_TOLERANCE
            }
            None => false,
        };
        per_eps.entry(*eps_bits).or_default().push(LimsupProxy {
            f_radius: *f_radius,
            delta: f64::from_bits(*delta_bits),
            l_id: l_id.clone(),
            d,
            value,
            direction: last.direction,
            plateau,
        });
    }
    let mut per_epsilon = Vec::new();
    for (eps_bits, proxies) in per_eps {
        let argmin = proxies.iter().min_by(|a, b| a.value.total_cmp(&b.value)).cloned();
        let value = argmin.as_ref().map_or(f64::NEG_INFINITY, |p| p.value);
        per_epsilon.push(EpsilonReduction {
            epsilon: f64::from_bits(eps_bits),
            value,
            argmin,
            proxies,
        });
    }
    per_epsilon.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let best = per_epsilon
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value).then(b.epsilon.total_cmp(&a.epsilon)));
    let (value, direction, plateau) = match best.and_then(|b| b.argmin.as_ref().map(|p| (b, p))) {
        Some((b, p)) => {
            provenance.push(format!(
                "limsup over d: value at d = {} (plateau {}: |Δ| < {PLATEAU_TOLERANCE})",
                p.d,
                if p.plateau { "reached" } else { "not reached" }
            ));
            provenance.push(format!(
                "inf over (F, δ, L) at ε = {}: attained at F radius {}, δ = {}, L = {}",
                b.epsilon, p.f_radius, p.delta, p.l_id
            ));
            provenance.push(format!(
                "sup over ε in {:?}: attained at ε = {}",
                grids.epsilons, b.epsilon
            ));
            (p.value, p.direction, p.plateau)
        }
        None => {
            warnings.push("no cell succeeded".into());
            (f64::NEG_INFINITY, BoundDirection::Exact, false)
        }
    };
    if value == f64::NEG_INFINITY {
        let reasons: BTreeSet<String> = cells
            .iter()
            .filter_map(|c| c.result.as_ref().ok())
            .filter(|r| r.is_empty())
            .flat_map(|r| r.diagnostics.iter().cloned())
            .collect();
        provenance.push(format!(
            "empty microstate space: {}",
            reasons.into_iter().collect::<Vec<_>>().join("; ")
        ));
    }
    if per_epsilon
        .iter()
        .flat_map(|e| &e.proxies)
        .any(|p| p.direction != direction)
    {
        warnings.push("reduction mixes exact values and one-sided bounds".into());
    }
    let monotone = check_monotonicity(&cells, &mut warnings);
    for c in &cells {
        if let Ok(r) = &c.result {
            if let Some(s) = r.log_covering {
                if (s - r.log_count).abs() / r.d as f64 > 0.0 {
                    provenance.push(format!(
                        "N vs S at {}: (1/d)log N = {:.6}, (1/d)log S = {:.6}",
                        c.key.canonical(),
                        r.normalized(),
                        s / r.d as f64
                    ));
                }
            }
        }
    }
    EntropyEstimate {
        method,
        dims: family.dims().to_vec(),
        grids: grids.clone(),
        cells,
        per_epsilon,
        value,
        direction,
        plateau,
        monotone,
        provenance,
        warnings,
    }
}

/// Values must not increase as `F` or `L` grows or `δ` shrinks (exact cells only).
fn check_monotonicity(cells: &[CellRecord], warnings: &mut Vec<String>) -> bool {
    let exact: Vec<(&CellKey, f64)> = cells
        .iter()
        .filter_map(|c| match &c.result {
            Ok(r) if r.direction == BoundDirection::Exact && !matches!(r.mode, CountingMode::MonteCarlo { .. }) => {
                Some((&c.key, r.log_count))
            }
            _ => None,
        })
        .collect();
    let l_radius = |id: &str| {
        id.strip_prefix("cyl")
            .and_then(|r| r.parse::<usize>().ok())
            .unwrap_or(0)
    };
    let mut ok = true;
    for (a, va) in &exact {
        for (b, vb) in &exact {
            let finer = a.d == b.d
                && a.epsilon == b.epsilon
                && b.f_radius >= a.f_radius
                && b.delta <= a.delta
                && l_radius(&b.l_id) >= l_radius(&a.l_id)
                && (a.f_radius, a.delta.to_bits(), &a.l_id) != (b.f_radius, b.delta.to_bits(), &b.l_id);
            if finer && *vb > *va + 1e-9 {
                ok = false;
                warnings.push(format!(
                    "monotonicity violated: {} has larger count than coarser {}",
                    b.canonical(),
                    a.canonical()
                ));
            }
        }
    }
    ok
}

impl EntropyEstimate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,epsilon,F_radius,delta,L_id,mode,direction,log_count,normalized_value\n");
        for c in &self.cells {
            let k = &c.key;
            match &c.result {
                Ok(r) => out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    k.d,
                    k.epsilon,
                    k.f_radius,
                    k.delta,
                    k.l_id,
                    r.mode.as_str(),
                    r.direction.as_str(),
                    r.log_count,
                    r.normalized()
                )),
                Err(_) => out.push_str(&format!(
                    "{},{},{},{},{},error,,,\n",
                    k.d, k.epsilon, k.f_radius, k.delta, k.l_id
                )),
            }
        }
        out
    }

    /// Largest exact microstate count over cells at dimension `d`.
    pub fn microstate_counts(&self) -> BTreeMap<usize, Option<u64>> {
        let mut out: BTreeMap<usize, Option<u64>> = BTreeMap::new();
        for c in &self.cells {
            let v = c.result.as_ref().ok().and_then(|r| r.microstate_count);
            let e = out.entry(c.key.d).or_insert(v);
            *e = match (*e, v) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
        }
        out
    }
}

/// Matched parameters for comparing the two definitions.
#[derive(Clone, Debug)]
pub struct EquivalenceParams {
    pub f: Vec<GroupElement>,
    pub delta: f64,
    pub epsilon: f64,
    pub tests: Vec<TestFunction>,
    /// Partition scale of the ball-partition observable.
    pub kappa: f64,
    /// `δ` used for the approximately periodic fields.
    pub observable_delta: f64,
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub d: usize,
    pub metric: std::result::Result<CountResult, String>,
    pub observable: std::result::Result<CountResult, String>,
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    /// `H(κ + √ε) + κ·log|A|`.
    pub slack: f64,
    pub cells_in_partition: usize,
}

impl EquivalenceReport {
    /// Gap at the largest dimension where both sides succeeded.
    pub fn final_gap(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.gap)
    }
}

/// Metric and observable estimates per dimension, for the ball-partition observable.
pub fn equivalence_check(system: &ShiftSystem, family: &SoficFamily, params: &EquivalenceParams) -> EquivalenceReport {
    let k = system.alphabet_size();
    let t = (params.kappa + params.epsilon.sqrt()).min(0.5);
    let slack = binary_entropy(t).unwrap_or(std::f64::consts::LN_2) + params.kappa * (k as f64).ln();
    let alpha = ball_partition_observable(system, &[], params.kappa);
    let cells_in_partition = alpha.as_ref().map_or(0, |a| a.target_size());
    let rows = (0..family.len())
        .into_par_iter()
        .map(|i| {
            let d = family.dims()[i];
            let sigma = family.map(i);
            let metric = sigma.as_ref().map_err(|e| e.to_string()).and_then(|s| {
                MicrostateParams::new(params.f.clone(), params.delta, params.epsilon, params.tests.clone())
                    .and_then(|p| metric_entropy_cell(system, s, &p, params.strategy))
                    .map_err(|e| e.to_string())
            });
            let observable = match (&sigma, &alpha) {
                (Ok(s), Ok(a)) => {
                    let pi: Vec<u32> = (0..a.target_size() as u32).collect();
                    observable_entropy_cell(
                        system,
                        s,
                        a,
                        a,
                        &pi,
                        &params.f,
                        params.observable_delta,
                        params.strategy,
                    )
                    .map_err(|e| e.to_string())
                }
                (Err(e), _) => Err(e.to_string()),
                (_, Err(e)) => Err(e.to_string()),
            };
            let gap = match (&metric, &observable) {
                (Ok(m), Ok(o)) if m.is_empty() && o.is_empty() => Some(0.0),
                (Ok(m), Ok(o)) if !m.is_empty() && !o.is_empty() => Some((m.normalized() - o.normalized()).abs()),
                _ => None,
            };
            EquivalenceRow {
                d,
                metric,
                observable,
                gap,
            }
        })
        .collect();
    EquivalenceReport {
        rows,
        slack,
        cells_in_partition,
    }
}
