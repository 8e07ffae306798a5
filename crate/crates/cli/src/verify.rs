use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sofic::group::Group;
use sofic::metric::{max_separated_count, min_covering_count, packing_bound, CountMode, DistanceMatrix, PointCloud};
use sofic::spectral::{
    character_inner, conjugate, direct_sum, hom_dimension, irreps, is_singular, lebesgue_decompose,
    singularity_witness, FiniteDimRep,
};
use sofic::Complex64;

pub const SUITES: [&str; 4] = ["packing", "chain", "schur", "witness"];

#[derive(Debug, Serialize)]
pub struct PropertyCount {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub pass: bool,
    pub properties: Vec<PropertyCount>,
}

fn prop(name: &str, checked: usize, violations: usize) -> PropertyCount {
    PropertyCount {
        name: name.into(),
        checked,
        violations,
    }
}

pub fn verify(suite: &str, seed: u64) -> Result<Vec<SuiteReport>> {
    let names: Vec<&str> = match suite {
        "" => bail!("empty suite name; expected one of {}, all", SUITES.join(", ")),
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => bail!("unknown suite '{s}'; expected one of {}, all", SUITES.join(", ")),
    };
    names
        .into_iter()
        .map(|name| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let properties = match name {
                "packing" => packing(&mut rng),
                "chain" => chain(&mut rng),
                "schur" => schur(),
                _ => witness(&mut rng),
            }?;
            Ok(SuiteReport {
                suite: name.into(),
                seed,
                pass: properties.iter().all(|p| p.violations == 0),
                properties,
            })
        })
        .collect()
}

fn gaussian_ish(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Greedy separated sets inside `M·p·Ball` never beat the packing bound.
fn packing(rng: &mut ChaCha8Rng) -> Result<Vec<PropertyCount>> {
    let mut violations = 0;
    let instances = 200;
    for _ in 0..instances {
        let n = rng.gen_range(1..=24);
        let rank = rng.gen_range(0..=n.min(3));
        let q = gaussian_ish(rng, n).qr().q();
        let b = q.columns(0, rank).into_owned();
        let p = &b * b.adjoint();
        let m = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let eps = m * [0.05, 0.2, 0.5][rng.gen_range(0..3)];
        let pts: Vec<DVector<Complex64>> = (0..200)
            .map(|_| {
                let w = DVector::from_fn(n, |_, _| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                });
                let norm = (w.norm_squared() / n as f64).sqrt();
                let r: f64 = rng.gen_range(0.0f64..1.0).powf(1.0 / (2 * n) as f64);
                (&p * w) * Complex64::new(m * r / norm, 0.0)
            })
            .collect();
        let k = pts.len();
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                data[i * k + j] = ((&pts[i] - &pts[j]).norm_squared() / n as f64).sqrt();
            }
        }
        let cloud = PointCloud::Matrix(DistanceMatrix::new(k, data)?);
        let size = max_separated_count(&cloud, eps, CountMode::Greedy)?.value;
        let trace = (p.trace().re / n as f64).clamp(0.0, 1.0);
        if (size as f64).ln() > packing_bound(m, eps, trace, n)? + 1e-12 {
            violations += 1;
        }
    }
    Ok(vec![prop("log separated size <= packing bound", instances, violations)])
}

/// `N_{2ε} ≤ S_ε ≤ N_ε` on random planar point sets.
fn chain(rng: &mut ChaCha8Rng) -> Result<Vec<PropertyCount>> {
    let (mut lower, mut upper, mut checked) = (0, 0, 0);
    for _ in 0..100 {
        let n = rng.gen_range(2..=12);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
            }
        }
        let cloud = PointCloud::Matrix(DistanceMatrix::new(n, data)?);
        for _ in 0..5 {
            let eps = rng.gen_range(0.01..0.8);
            let n2 = max_separated_count(&cloud, 2.0 * eps, CountMode::Exact)?.value;
            let s = min_covering_count(&cloud, eps, CountMode::Exact)?.value;
            let n1 = max_separated_count(&cloud, eps, CountMode::Exact)?.value;
            checked += 1;
            lower += usize::from(n2 > s);
            upper += usize::from(s > n1);
        }
    }
    Ok(vec![
        prop("N(2eps) <= S(eps)", checked, lower),
        prop("S(eps) <= N(eps)", checked, upper),
    ])
}

fn groups() -> Vec<Group> {
    vec![
        Group::Cyclic(2),
        Group::Cyclic(3),
        Group::Cyclic(4),
        Group::product(vec![Group::Cyclic(2), Group::Cyclic(2)]),
        Group::Symmetric(3),
    ]
}

/// Singularity and intertwiner dimensions agree with the character inner product.
fn schur() -> Result<Vec<PropertyCount>> {
    let (mut checked, mut hom_bad, mut sing_bad) = (0, 0, 0);
    for g in groups() {
        let ir = irreps(&g)?;
        for a in &ir {
            for b in &ir {
                checked += 1;
                let inner = character_inner(&a.character, &b.character).round() as usize;
                hom_bad += usize::from(hom_dimension(&a.rep, &b.rep)? != inner);
                sing_bad += usize::from(is_singular(&a.rep, &b.rep)? != (inner == 0));
            }
        }
    }
    Ok(vec![
        prop("hom dimension = character inner product", checked, hom_bad),
        prop("singular iff inner product vanishes", checked, sing_bad),
    ])
}

fn random_rep(rng: &mut ChaCha8Rng, ir: &[sofic::spectral::Irrep]) -> Result<FiniteDimRep> {
    loop {
        let parts: Vec<&FiniteDimRep> = ir
            .iter()
            .flat_map(|i| std::iter::repeat_n(&i.rep, rng.gen_range(0..=2)))
            .collect();
        if parts.is_empty() {
            continue;
        }
        let sum = direct_sum(&parts)?;
        let u = gaussian_ish(rng, sum.dim()).qr().q();
        return Ok(conjugate(&sum, &u)?);
    }
}

/// Witnesses for singular pairs pass, and decompositions split into singular and
/// absolutely continuous blocks.
fn witness(rng: &mut ChaCha8Rng) -> Result<Vec<PropertyCount>> {
    let gs = groups();
    let (mut witnesses, mut witness_bad) = (0, 0);
    for g in &gs {
        let ir = irreps(g)?;
        for a in &ir {
            for b in &ir {
                if is_singular(&a.rep, &b.rep)? {
                    witnesses += 1;
                    witness_bad += usize::from(!singularity_witness(&a.rep, &b.rep)?.passes(1e-10));
                }
            }
        }
    }
    let mut decomp_bad = 0;
    let trials = 50;
    for _ in 0..trials {
        let g = &gs[rng.gen_range(0..gs.len())];
        let ir = irreps(g)?;
        let r1 = random_rep(rng, &ir)?;
        let r2 = random_rep(rng, &ir)?;
        let dec = lebesgue_decompose(&r1, &r2)?;
        let mut ok = dec.singular.ncols() + dec.continuous.ncols() == r1.dim() && dec.residual(&r1) <= 1e-9;
        if dec.singular.ncols() > 0 {
            ok &= hom_dimension(&dec.singular_rep, &r2)? == 0;
            witnesses += 1;
            witness_bad += usize::from(!singularity_witness(&dec.singular_rep, &r2)?.passes(1e-10));
        }
        decomp_bad += usize::from(!ok);
    }
    Ok(vec![
        prop("witness passes at 1e-10", witnesses, witness_bad),
        prop(
            "decomposition is complete and singular block is singular",
            trials,
            decomp_bad,
        ),
    ])
}
