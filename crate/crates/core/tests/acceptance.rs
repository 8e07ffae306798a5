//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::{LN_2, PI};
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sofic::algebra::{embedding_defect, lift, DenseMatrix, GroupAlgebraElement, StarPolynomial};
use sofic::entropy::{
    entropy_sweep, equivalence_check, metric_entropy_cell, EquivalenceParams, LPreset, Strategy, SweepGrids,
    SweepMethod,
};
use sofic::group::{cyclic_sofic_map, random_permutation_sofic_map, Group, GroupElement, SoficFamily};
use sofic::metric::{max_separated_count, min_covering_count, packing_bound, CountMode, DistanceMatrix, PointCloud};
use sofic::microstates::{MicrostateParams, ShiftSystem, TestFunction};
use sofic::spectral::{
    certify_with_witness, character_inner, conjugate, direct_sum, fejer_witness, hom_dimension, irreps, is_singular,
    lebesgue_decompose, singularity_witness, window_trace_bound_check, FiniteDimRep,
};
use sofic::Complex64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn int(k: i64) -> GroupElement {
    GroupElement::Int(k)
}

/// `ln C(n, k)` by direct summation of logarithms.
fn ln_binomial(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

fn ln_sum(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn bernoulli_sweep(p: Vec<f64>) -> (f64, f64, f64) {
    let sys = ShiftSystem::bernoulli_z(p.clone()).unwrap();
    let fam = SoficFamily::cyclic(vec![100, 400, 1000], 1).unwrap();
    let grids = SweepGrids {
        epsilons: vec![0.01, 0.05, 0.1],
        deltas: vec![0.05, 0.01],
        f_radii: vec![0],
        l_presets: vec![LPreset { cylinder_radius: 0 }],
    };
    let t = Instant::now();
    let est = entropy_sweep(&sys, &fam, &grids, SweepMethod::Metric, Strategy::TypeClass, None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    // oracle for the d = 1000, δ = 0.01 cell: log of the admissible binomial mass
    let d = 1000;
    let terms: Vec<f64> = (0..=d)
        .filter(|&k| (k as f64 / d as f64 - p[0]).abs() < 0.01)
        .map(|k| ln_binomial(d, k))
        .collect();
    let oracle = ln_sum(&terms) / d as f64;
    (est.value, oracle, secs)
}

fn criterion_1() -> Outcome {
    let (v, oracle, secs) = bernoulli_sweep(vec![0.5, 0.5]);
    let (v2, oracle2, secs2) = bernoulli_sweep(vec![2.0 / 3.0, 1.0 / 3.0]);
    let h = -(2.0f64 / 3.0) * (2.0f64 / 3.0).ln() - (1.0f64 / 3.0) * (1.0f64 / 3.0).ln();
    let pass = (v - LN_2).abs() <= 0.02
        && (v - oracle).abs() < 1e-9
        && (v2 - h).abs() <= 0.02
        && (v2 - oracle2).abs() < 1e-9
        && (h - 0.6365).abs() < 5e-5
        && secs < 5.0
        && secs2 < 5.0;
    outcome(
        pass,
        format!(
            "uniform: {v:.4} (ln 2 = {LN_2:.4}, oracle {oracle:.4}, {secs:.2} s); (2/3,1/3): {v2:.4} (H = {h:.4}, oracle {oracle2:.4}, {secs2:.2} s)"
        ),
    )
}

fn criterion_2() -> Outcome {
    let sys = ShiftSystem::rotation();
    let tests = TestFunction::cylinder_family(sys.group(), 2, 1).unwrap();
    let f = sys.group().ball(1).unwrap();
    let params = MicrostateParams::new(f, 0.01, 0.01, tests).unwrap();
    let mut counts_ok = true;
    let mut values = Vec::new();
    let mut last_secs = 0.0;
    for d in (4..=1000).step_by(2) {
        let s = cyclic_sofic_map(d, 1).unwrap();
        let t = Instant::now();
        let r = metric_entropy_cell(&sys, &s, &params, Strategy::Auto).unwrap();
        last_secs = t.elapsed().as_secs_f64();
        counts_ok &= r.microstate_count == Some(2) && (r.log_count - LN_2).abs() < 1e-12;
        values.push((d, r.normalized()));
    }
    let decreasing = values.windows(2).all(|w| w[1].1 < w[0].1);
    let final_value = values.last().unwrap().1;
    let pass = counts_ok && decreasing && final_value <= 0.01 && last_secs < 1.0;
    outcome(
        pass,
        format!(
            "count = 2 at every even d in 4..=1000: {counts_ok}; value at d = 1000: {final_value:.5}; strictly decreasing: {decreasing}; d = 1000 cell {last_secs:.3} s"
        ),
    )
}

fn criterion_3() -> Outcome {
    let sys = ShiftSystem::trivial_two_point();
    let f = sys.group().ball(1).unwrap();
    let mut all = true;
    let mut checked = 0;
    for &delta in &[0.05, 0.09] {
        for &d in &[16usize, 20, 32, 64, 100] {
            for l in 0..=1 {
                let tests = TestFunction::cylinder_family(sys.group(), 2, l).unwrap();
                let params = MicrostateParams::new(f.clone(), delta, 0.1, tests).unwrap();
                let s = cyclic_sofic_map(d, 1).unwrap();
                let r = metric_entropy_cell(&sys, &s, &params, Strategy::Auto).unwrap();
                let names = &r.violated_constraints;
                all &= r.log_count == f64::NEG_INFINITY
                    && names.iter().any(|n| n == "equivariance")
                    && names.iter().any(|n| n == "empirical");
                checked += 1;
            }
        }
    }
    let fam = SoficFamily::cyclic(vec![16, 32, 64], 1).unwrap();
    let grids = SweepGrids {
        epsilons: vec![0.1],
        deltas: vec![0.05, 0.09],
        f_radii: vec![1],
        l_presets: vec![LPreset { cylinder_radius: 0 }],
    };
    let est = entropy_sweep(&sys, &fam, &grids, SweepMethod::Metric, Strategy::Auto, None).unwrap();
    let sweep_ok = est.value == f64::NEG_INFINITY
        && est
            .provenance
            .iter()
            .any(|p| p.contains("empty microstate space") && p.contains("equivariance") && p.contains("empirical"));
    outcome(
        all && sweep_ok,
        format!("{checked} cells (d in 16..=100, δ in {{0.05, 0.09}}) empty with both constraints named: {all}; sweep reports -inf: {sweep_ok}"),
    )
}

fn random_projection(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let q = g.qr().q();
    let b = q.columns(0, rank).into_owned();
    &b * b.adjoint()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..200 {
        let n = rng.gen_range(1..=32);
        let rank = rng.gen_range(0..=n.min(4));
        let p = random_projection(&mut rng, n, rank);
        let m = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let eps = m * [0.05, 0.2, 0.5][rng.gen_range(0..3)];
        // candidates M·p·w with ‖w‖ ≤ 1 in ℓ²(n, u_n)
        let pts: Vec<DVector<Complex64>> = (0..300)
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
        let cloud = PointCloud::Matrix(DistanceMatrix::new(k, data).unwrap());
        let size = max_separated_count(&cloud, eps, CountMode::Greedy).unwrap().value;
        let trace = p.trace().re / n as f64;
        let bound = packing_bound(m, eps, trace.clamp(0.0, 1.0), n).unwrap();
        let lhs = (size as f64).ln();
        worst = worst.max(lhs - bound);
        if lhs > bound + 1e-12 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("200 instances, {violations} violations, max(log size - bound) = {worst:.3}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut checks = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=12);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
            }
        }
        let cloud = PointCloud::Matrix(DistanceMatrix::new(n, data).unwrap());
        for _ in 0..5 {
            let eps = rng.gen_range(0.01..0.8);
            let n2 = max_separated_count(&cloud, 2.0 * eps, CountMode::Exact).unwrap().value;
            let s = min_covering_count(&cloud, eps, CountMode::Exact).unwrap().value;
            let n1 = max_separated_count(&cloud, eps, CountMode::Exact).unwrap().value;
            checks += 1;
            if !(n2 <= s && s <= n1) {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{checks} checks, {violations} violations"))
}

fn random_element(rng: &mut ChaCha8Rng, support: &[GroupElement]) -> GroupAlgebraElement {
    // dyadic coefficients keep every sum and product exact
    GroupAlgebraElement::from_terms(support.iter().map(|g| {
        let re = rng.gen_range(-8i32..=8) as f64 / 4.0;
        let im = rng.gen_range(-8i32..=8) as f64 / 4.0;
        (g.clone(), Complex64::new(re, im))
    }))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let polys = [
        "X1",
        "X1*",
        "X1* X1",
        "X1 X2 - 2 X2* X1 + 0.5",
        "X1 X1* X2 + X2* X2* - 0.25 X1",
        "X2 X1 X2* - X1* X2 X1 + 3",
    ];
    let sigma = cyclic_sofic_map(64, 31).unwrap();
    let mut max_defect: f64 = 0.0;
    for _ in 0..20 {
        let support: Vec<GroupElement> = (-3..=3).filter(|_| rng.gen_bool(0.6)).map(int).collect();
        let a = random_element(&mut rng, &support);
        let b = random_element(&mut rng, &[int(-1), int(0), int(2)]);
        for p in &polys {
            let poly = StarPolynomial::parse(p).unwrap();
            max_defect = max_defect.max(embedding_defect(&sigma, &poly, &[a.clone(), b.clone()]).unwrap());
        }
    }
    let group = Group::Free(2);
    let words: Vec<GroupElement> = group
        .ball(3)
        .unwrap()
        .into_iter()
        .filter(|w| *w != group.identity())
        .collect();
    let mut worst_mean: f64 = 0.0;
    let maps: Vec<_> = (0..20)
        .map(|seed| random_permutation_sofic_map(2, 500, 3, seed).unwrap())
        .collect();
    for w in &words {
        let mean = maps.iter().map(|s| s.trace(w).unwrap().abs()).sum::<f64>() / maps.len() as f64;
        worst_mean = worst_mean.max(mean);
    }
    let pass = max_defect == 0.0 && worst_mean <= 0.05;
    outcome(
        pass,
        format!(
            "cyclic lifts: max embedding defect {max_defect:e}; F2 at d = 500: max over {} words of mean |tr| = {worst_mean:.4}",
            words.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    let cases: Vec<(&str, ShiftSystem, usize)> = vec![
        ("bernoulli(1/2)", ShiftSystem::bernoulli_z(vec![0.5, 0.5]).unwrap(), 0),
        ("rotation", ShiftSystem::rotation(), 1),
    ];
    for (name, sys, radius) in cases {
        let fam = SoficFamily::cyclic(vec![400, 1000], 1).unwrap();
        let params = EquivalenceParams {
            f: sys.group().ball(radius).unwrap(),
            delta: 0.01,
            epsilon: 0.01,
            tests: TestFunction::cylinder_family(sys.group(), 2, radius).unwrap(),
            kappa: 0.5,
            observable_delta: 0.01 * 0.01,
            strategy: Strategy::Auto,
        };
        let report = equivalence_check(&sys, &fam, &params);
        let row = report.rows.last().unwrap();
        let gap = row.gap;
        let ok = row.d == 1000 && gap.is_some_and(|g| g <= 0.05);
        pass &= ok;
        let m = row.metric.as_ref().map(|r| r.normalized()).unwrap_or(f64::NAN);
        let o = row.observable.as_ref().map(|r| r.normalized()).unwrap_or(f64::NAN);
        details.push(format!(
            "{name}: metric {m:.4}, observable {o:.4}, gap {:.4}",
            gap.unwrap_or(f64::NAN)
        ));
    }
    outcome(pass, format!("d = 1000: {}", details.join("; ")))
}

fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    g.qr().q()
}

fn criterion_8() -> Outcome {
    let groups = vec![
        Group::Cyclic(2),
        Group::Cyclic(3),
        Group::Cyclic(4),
        Group::product(vec![Group::Cyclic(2), Group::Cyclic(2)]),
        Group::Symmetric(3),
    ];
    let mut pairs = 0;
    let mut schur_mismatch = 0;
    let mut witnesses = 0;
    let mut witness_fail = 0;
    for g in &groups {
        let ir = irreps(g).unwrap();
        for a in &ir {
            for b in &ir {
                pairs += 1;
                let inner = character_inner(&a.character, &b.character).round() as usize;
                let hom = hom_dimension(&a.rep, &b.rep).unwrap();
                let sing = is_singular(&a.rep, &b.rep).unwrap();
                if hom != inner || sing != (inner == 0) {
                    schur_mismatch += 1;
                }
                if sing {
                    witnesses += 1;
                    if !singularity_witness(&a.rep, &b.rep).unwrap().passes(1e-10) {
                        witness_fail += 1;
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut decomp_fail = 0;
    for _ in 0..50 {
        let g = &groups[rng.gen_range(0..groups.len())];
        let ir = irreps(g).unwrap();
        let random_rep = |rng: &mut ChaCha8Rng| -> FiniteDimRep {
            loop {
                let parts: Vec<&FiniteDimRep> = ir
                    .iter()
                    .flat_map(|i| std::iter::repeat_n(&i.rep, rng.gen_range(0..=2)))
                    .collect();
                if parts.is_empty() {
                    continue;
                }
                let sum = direct_sum(&parts).unwrap();
                let u = random_unitary(rng, sum.dim());
                return conjugate(&sum, &u).unwrap();
            }
        };
        let r1 = random_rep(&mut rng);
        let r2 = random_rep(&mut rng);
        let dec = lebesgue_decompose(&r1, &r2).unwrap();
        let mut ok = dec.singular.ncols() + dec.continuous.ncols() == r1.dim();
        ok &= dec.residual(&r1) <= 1e-9;
        ok &= (dec.singular.adjoint() * &dec.continuous)
            .iter()
            .all(|x| x.norm() <= 1e-9);
        if dec.singular.ncols() > 0 {
            ok &= hom_dimension(&dec.singular_rep, &r2).unwrap() == 0;
            let w = singularity_witness(&dec.singular_rep, &r2).unwrap();
            witnesses += 1;
            if !w.passes(1e-10) {
                witness_fail += 1;
            }
        }
        if dec.continuous.ncols() > 0 {
            let chi = dec.continuous_rep.character();
            for i in &ir {
                if character_inner(&i.character, &chi) > 0.5 {
                    ok &= hom_dimension(&i.rep, &r2).unwrap() >= 1;
                }
            }
        }
        if !ok {
            decomp_fail += 1;
        }
    }
    outcome(
        schur_mismatch == 0 && witness_fail == 0 && decomp_fail == 0,
        format!(
            "{pairs} irrep pairs, {schur_mismatch} Schur mismatches; {witnesses} witnesses, {witness_fail} failing; 50 decompositions, {decomp_fail} failing"
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut trace_fail = 0;
    let mut tested_vectors = 0;
    let mut cheb_fail = 0;
    for i in 0..100 {
        let eps: f64 = rng.gen_range(0.01..0.25);
        let (alpha, sigma) = if i % 2 == 0 {
            let d = rng.gen_range(8..=64);
            let r = 3.min((d - 1) / 2);
            let mut terms = vec![(int(0), Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)))];
            for k in 1..=r as i64 {
                for s in [k, -k] {
                    if rng.gen_bool(0.5) {
                        terms.push((
                            int(s),
                            Complex64::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
                        ));
                    }
                }
            }
            (GroupAlgebraElement::from_terms(terms), cyclic_sofic_map(d, r).unwrap())
        } else {
            let d = rng.gen_range(8..=48);
            let s = random_permutation_sofic_map(2, d, 1, rng.gen()).unwrap();
            let g = Group::Free(2);
            let terms: Vec<(GroupElement, Complex64)> = g
                .ball(1)
                .unwrap()
                .into_iter()
                .map(|w| {
                    let scale = if w == g.identity() { 1.0 } else { 0.15 };
                    (
                        w,
                        Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)),
                    )
                })
                .collect();
            (GroupAlgebraElement::from_terms(terms), s)
        };
        let d = sigma.d();
        // vectors concentrated on eigenvectors of A with eigenvalue near 1
        let l = lift(&sigma, &alpha).unwrap();
        let a: DenseMatrix = l.adjoint().compose(&l).to_dense();
        let h = (a.inner() + a.inner().adjoint()) * Complex64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let mut vectors = Vec::new();
        for _ in 0..10 {
            let mut v = DVector::zeros(d);
            for j in 0..d {
                let gap = (eig.eigenvalues[j] - 1.0).abs();
                let w = (eps / gap.max(eps)).powi(2) * rng.gen_range(0.0..1.0);
                v += eig.eigenvectors.column(j) * Complex64::new(w, 0.0);
            }
            let norm = (v.norm_squared() / d as f64).sqrt();
            if norm > 0.0 {
                vectors.push(v / Complex64::new(norm, 0.0));
            }
        }
        let report = window_trace_bound_check(&alpha, &sigma, eps, &vectors).unwrap();
        if !report.trace_ok {
            trace_fail += 1;
        }
        tested_vectors += report.chebyshev.len();
        cheb_fail += report.chebyshev.iter().filter(|&&(_, x)| x > 6.0 * eps.sqrt()).count();
    }
    // rotation: the Fejér witness at frequency π, lifted through the cyclic model at d = 256
    let n = 128;
    let alpha = fejer_witness(n, PI).unwrap();
    let z = Group::Integers;
    let aa = alpha.star(&z).unwrap().convolve(&alpha, &z).unwrap();
    let tau = aa.canonical_trace(&z).re;
    // Koopman complement of the rotation: g acts by -1
    let koopman: Complex64 = aa
        .terms()
        .map(|(g, c)| match g {
            GroupElement::Int(k) => c * if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 },
            _ => unreachable!(),
        })
        .sum();
    let sigma = cyclic_sofic_map(256, n - 1).unwrap();
    let cert = certify_with_witness(&alpha, &sigma, 0.01, 1, 1.0).unwrap();
    let sys = ShiftSystem::rotation();
    let params = MicrostateParams::new(
        sys.group().ball(1).unwrap(),
        0.01,
        0.01,
        TestFunction::cylinder_family(sys.group(), 2, 1).unwrap(),
    )
    .unwrap();
    let measured = metric_entropy_cell(&sys, &cyclic_sofic_map(256, 1).unwrap(), &params, Strategy::Auto)
        .unwrap()
        .normalized();
    let e2e = cert.bound >= measured
        && cert.bound <= 0.05
        && cert.window.trace_ok
        && (tau - 1.0 / n as f64).abs() < 1e-12
        && (koopman - 1.0).norm() < 1e-12;
    let pass = trace_fail == 0 && cheb_fail == 0 && tested_vectors > 0 && e2e;
    outcome(
        pass,
        format!(
            "100 pairs, {trace_fail} trace-bound failures; {tested_vectors} Chebyshev vectors, {cheb_fail} failures; rotation at d = 256: tr(p) = {:.5}, bound {:.4}, measured {measured:.4}, τ(α*α) = {tau:.5}",
            cert.window.trace_p, cert.bound
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 Bernoulli known value", criterion_1),
        ("2 compact action bound", criterion_2),
        ("3 ergodicity obstruction", criterion_3),
        ("4 packing lemma", criterion_4),
        ("5 covering/packing chain", criterion_5),
        ("6 embedding-sequence diagnostics", criterion_6),
        ("7 equivalence proxy", criterion_7),
        ("8 representation suite", criterion_8),
        ("9 spectral-window machinery", criterion_9),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run));
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(o) => {
                if !o.pass {
                    failures += 1;
                }
                println!(
                    "[{}] {name}: {} ({secs:.2} s)",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
            }
            Err(_) => {
                failures += 1;
                println!("[FAIL] {name}: panicked ({secs:.2} s)");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
