use nalgebra::DMatrix;
use proptest::prelude::*;
use sofic::algebra::{lift, DenseMatrix, GroupAlgebraElement};
use sofic::group::{cyclic_sofic_map, Group, GroupElement, Permutation};
use sofic::metric::{delta2, BasePseudometric};
use sofic::spectral::spectral_window_projection;
use sofic::Complex64;

fn groups() -> Vec<(Group, Vec<GroupElement>)> {
    let gs = vec![
        Group::Symmetric(4),
        Group::Free(2),
        Group::parse("Z x Z/6").unwrap(),
        Group::Integers,
    ];
    gs.into_iter()
        .map(|g| {
            let el = if g.is_finite() {
                g.elements().unwrap()
            } else {
                g.ball(3).unwrap()
            };
            (g, el)
        })
        .collect()
}

fn close(a: &GroupAlgebraElement, b: &GroupAlgebraElement) -> bool {
    a.sub(b).terms().all(|(_, c)| c.norm() < 1e-9)
}

fn element(group_elems: &[GroupElement], coeffs: &[(usize, f64, f64)]) -> GroupAlgebraElement {
    GroupAlgebraElement::from_terms(
        coeffs
            .iter()
            .map(|&(i, re, im)| (group_elems[i % group_elems.len()].clone(), Complex64::new(re, im))),
    )
}

fn coeffs() -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
    prop::collection::vec((0usize..1000, -2.0f64..2.0, -2.0f64..2.0), 0..5)
}

proptest! {
    #[test]
    fn group_laws(gi in 0usize..4, a in 0usize..1000, b in 0usize..1000, c in 0usize..1000) {
        let (g, el) = &groups()[gi];
        let (a, b, c) = (&el[a % el.len()], &el[b % el.len()], &el[c % el.len()]);
        let ab_c = g.multiply(&g.multiply(a, b).unwrap(), c).unwrap();
        let a_bc = g.multiply(a, &g.multiply(b, c).unwrap()).unwrap();
        prop_assert_eq!(ab_c, a_bc);
        let inv = g.inverse(a).unwrap();
        prop_assert_eq!(g.multiply(a, &inv).unwrap(), g.identity());
        prop_assert_eq!(g.multiply(&inv, a).unwrap(), g.identity());
        prop_assert_eq!(g.multiply(&g.identity(), a).unwrap(), a.clone());
    }

    #[test]
    fn star_laws(gi in 0usize..4, x in coeffs(), y in coeffs()) {
        let (g, el) = &groups()[gi];
        let a = element(el, &x);
        let b = element(el, &y);
        prop_assert!(close(&a.star(g).unwrap().star(g).unwrap(), &a));
        let lhs = a.convolve(&b, g).unwrap().star(g).unwrap();
        let rhs = b.star(g).unwrap().convolve(&a.star(g).unwrap(), g).unwrap();
        prop_assert!(close(&lhs, &rhs));
        let t = a.star(g).unwrap().convolve(&a, g).unwrap().canonical_trace(g);
        prop_assert!(t.im.abs() < 1e-9);
        prop_assert!((t.re - a.l2_norm_sqr()).abs() < 1e-9);
        prop_assert!(t.re >= -1e-12);
    }

    #[test]
    fn convolution_associative(gi in 0usize..4, x in coeffs(), y in coeffs(), z in coeffs()) {
        let (g, el) = &groups()[gi];
        let (a, b, c) = (element(el, &x), element(el, &y), element(el, &z));
        let l = a.convolve(&b, g).unwrap().convolve(&c, g).unwrap();
        let r = a.convolve(&b.convolve(&c, g).unwrap(), g).unwrap();
        prop_assert!(close(&l, &r));
    }

    #[test]
    fn delta2_is_a_pseudometric(
        k in 2usize..5,
        raw in prop::collection::vec(0u32..100, 30),
        pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 5),
    ) {
        let coords: Vec<Vec<f64>> = pts[..k].to_vec();
        let alphabet = sofic::metric::Alphabet::new((0..k).map(|i| i.to_string()).collect(), coords).unwrap();
        let m = BasePseudometric::euclidean(&alphabet).unwrap();
        let z: Vec<u32> = raw[..10].iter().map(|x| x % k as u32).collect();
        let w: Vec<u32> = raw[10..20].iter().map(|x| x % k as u32).collect();
        let v: Vec<u32> = raw[20..].iter().map(|x| x % k as u32).collect();
        let zw = delta2(&z, &w, &m).unwrap();
        prop_assert!(delta2(&z, &z, &m).unwrap().abs() < 1e-12);
        prop_assert!((zw - delta2(&w, &z, &m).unwrap()).abs() < 1e-12);
        prop_assert!(zw <= delta2(&z, &v, &m).unwrap() + delta2(&v, &w, &m).unwrap() + 1e-12);
        prop_assert!(zw <= m.bound() + 1e-12);
    }

    #[test]
    fn permutation_inverse(images in Just(()).prop_flat_map(|_| Just((0u32..12).collect::<Vec<_>>()).prop_shuffle())) {
        let p = Permutation::from_images(images).unwrap();
        let n = p.len();
        prop_assert_eq!(p.compose(&p.inverse()), Permutation::identity(n));
        prop_assert_eq!(p.inverse().compose(&p), Permutation::identity(n));
    }

    #[test]
    fn cyclic_lift_is_multiplicative(d in 9usize..40, x in coeffs(), y in coeffs()) {
        let g = Group::Integers;
        let el: Vec<GroupElement> = (-2..=2).map(GroupElement::Int).collect();
        let (a, b) = (element(&el, &x), element(&el, &y));
        let sigma = cyclic_sofic_map(d, 4).unwrap();
        let ab = lift(&sigma, &a.convolve(&b, &g).unwrap()).unwrap().to_dense();
        let la = lift(&sigma, &a).unwrap();
        let lb = lift(&sigma, &b).unwrap();
        prop_assert!(ab.max_abs_diff(&la.compose(&lb).to_dense()) < 1e-9);
        let st = lift(&sigma, &a.star(&g).unwrap()).unwrap().to_dense();
        prop_assert!(st.max_abs_diff(&la.adjoint().to_dense()) < 1e-9);
        let tr = (lift(&sigma, &a).unwrap().trace() - a.canonical_trace(&g)).norm();
        prop_assert!(tr < 1e-9);
    }

    #[test]
    fn window_projection_is_a_projection(
        n in 1usize..12,
        entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 144),
        lo in -1.0f64..1.0,
        width in 0.0f64..2.0,
    ) {
        let b = DMatrix::from_fn(n, n, |i, j| {
            let (re, im) = entries[i * 12 + j];
            Complex64::new(re, im)
        });
        let h = DenseMatrix::from_matrix(&b + b.adjoint()).unwrap();
        let w = spectral_window_projection(&h, lo, lo + width).unwrap();
        let p = &w.projection;
        prop_assert!(p.is_self_adjoint(1e-9));
        prop_assert!(p.mul(p).max_abs_diff(p) < 1e-9);
        let rank = (p.trace().re * n as f64).round() as usize;
        prop_assert_eq!(rank, w.rank);
        let in_window = w.eigenvalues.iter().filter(|&&e| e >= lo && e <= lo + width).count();
        prop_assert_eq!(in_window, w.rank);
    }
}
