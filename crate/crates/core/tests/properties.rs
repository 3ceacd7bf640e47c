use fwat_core::analysis;
use fwat_core::formation::{self, UnicycleState};
use fwat_core::graph::{build_laplacian, Laplacian, Topology};
use fwat_core::protocol::{self, FwatParams, SecondOrderState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn topology() -> impl Strategy<Value = Topology> {
    (2usize..=8).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let m = pairs.len();
        proptest::collection::vec(any::<bool>(), m).prop_map(move |mask| {
            let edges = pairs.iter().zip(&mask).filter(|(_, &k)| k).map(|(&e, _)| e);
            Topology::new(n, edges).unwrap()
        })
    })
}

fn connected_topology() -> impl Strategy<Value = Topology> {
    (2usize..=7).prop_flat_map(|n| {
        let tree = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
        let extra = proptest::collection::vec((0..n, 0..n), 0..n);
        (tree, extra).prop_map(move |(tree, extra)| {
            let mut edges: Vec<(usize, usize)> = tree
                .iter()
                .enumerate()
                .map(|(k, ix)| (ix.index(k + 1), k + 1))
                .collect();
            for (a, b) in extra {
                let e = (a.min(b), a.max(b));
                if a != b && !edges.iter().any(|&(i, j)| (i.min(j), i.max(j)) == e) {
                    edges.push(e);
                }
            }
            Topology::new(n, edges).unwrap()
        })
    })
}

fn with_state(
    topo: impl Strategy<Value = Topology>,
) -> impl Strategy<Value = (Topology, Vec<f64>)> {
    topo.prop_flat_map(|t| {
        let n = t.n();
        (Just(t), proptest::collection::vec(-2.0f64..2.0, n))
    })
}

fn sorted_eigs(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn bfs_connected(t: &Topology) -> bool {
    let n = t.n();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &(a, b) in t.edges() {
            for (p, q) in [(a, b), (b, a)] {
                if p == i && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn params(eta: f64, tf: f64) -> FwatParams {
    FwatParams::single(eta, 0.0, tf).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn laplacian_is_symmetric_with_zero_row_sums(t in topology()) {
        let l = build_laplacian(&t).unwrap();
        let m = l.matrix();
        prop_assert_eq!(m, &m.transpose());
        for (i, s) in l.row_sums().iter().enumerate() {
            prop_assert_eq!(*s, 0.0);
            prop_assert_eq!(m[(i, i)], t.degree(i) as f64);
        }
    }

    #[test]
    fn lambda2_matches_reference_eigensolver(t in topology()) {
        let l = build_laplacian(&t).unwrap();
        let ev = sorted_eigs(l.matrix());
        let want = ev[1];
        prop_assert!((l.lambda2() - want).abs() < 1e-9, "{} vs {}", l.lambda2(), want);
        prop_assert!(ev[0].abs() < 1e-9);
    }

    #[test]
    fn connectivity_agrees_with_search(t in topology()) {
        let l = build_laplacian(&t).unwrap();
        let reach = bfs_connected(&t);
        prop_assert_eq!(t.is_connected(), reach);
        prop_assert_eq!(l.is_connected(), reach);
    }

    #[test]
    fn deflated_rayleigh_bound((t, y) in with_state(connected_topology())) {
        let l = build_laplacian(&t).unwrap();
        let mut y = DVector::from_vec(y);
        let m = y.mean();
        y.add_scalar_mut(-m);
        let lhs = y.dot(&(l.matrix() * &y));
        prop_assert!(lhs >= l.lambda2() * y.norm_squared() - 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn input_sums_to_zero((t, x) in with_state(topology()), eta in 0.1f64..5.0, frac in 0.0f64..0.99) {
        let l = build_laplacian(&t).unwrap();
        let p = params(eta, 3.0);
        let time = frac * 3.0;
        let x = DVector::from_vec(x);
        let u = protocol::fwat_single_input(&x, &l, &p, time).unwrap().value;
        let scale = eta / (3.0 - time) * u.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!(u.sum().abs() <= 1e-12 * scale);
    }

    #[test]
    fn pal_bracket_closed_form((t, x) in with_state(topology())) {
        let l = build_laplacian(&t).unwrap();
        let x = DVector::from_vec(x);
        let b = protocol::pal_bracket(&x, &l).unwrap().value;
        let lx = l.matrix() * &x;
        for i in 0..x.len() {
            prop_assert!((b[i] - (1.0 - (-lx[i]).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn per_agent_law_matches_stacked((t, x) in with_state(topology()), eta in 0.1f64..5.0, frac in 0.0f64..0.99) {
        let l = build_laplacian(&t).unwrap();
        let p = params(eta, 2.0);
        let time = frac * 2.0;
        let x = DVector::from_vec(x);
        let stacked = protocol::fwat_single_input(&x, &l, &p, time).unwrap().value;
        let z: Vec<f64> = (0..t.n()).map(|i| protocol::relative_state_sum(&t.neighbors(i), &x, i)).collect();
        for i in 0..t.n() {
            let zn: Vec<f64> = t.neighbors(i).iter().map(|&j| z[j]).collect();
            let ui = protocol::per_agent_input(z[i], &zn, &p, time).unwrap().value;
            prop_assert!((ui - stacked[i]).abs() <= 1e-10 * (1.0 + stacked[i].abs()), "agent {i}: {ui} vs {}", stacked[i]);
        }
    }

    #[test]
    fn phi1_jacobian_matches_differences((t, x) in with_state(connected_topology()), eta in 0.5f64..4.0, frac in 0.0f64..0.9) {
        let l = build_laplacian(&t).unwrap();
        let p = params(eta, 4.0);
        let time = frac * 4.0;
        let x = DVector::from_vec(x);
        let part = protocol::phi1_partials(&x, &l, &p, time).unwrap().value;
        let f = |x: &DVector<f64>| protocol::phi1(x, &l, &p, time).unwrap().value;
        let h = 1e-6;
        for j in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[j] += h;
            b[j] -= h;
            let col = (f(&a) - f(&b)) / (2.0 * h);
            let err = (col - part.dx.column(j)).amax();
            prop_assert!(err <= 1e-5 * (1.0 + part.dx.amax()), "column {j} err {err}");
        }
    }

    #[test]
    fn scalar_inequality(a in 1e-6f64..50.0, b in 1e-6f64..50.0) {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(analysis::check_scalar_inequality(x, y).unwrap());
        // Oracle: x(1 − e^{−x}) ≤ y(1 − e^{−y}) for 0 < x ≤ y.
        prop_assert!(x * (-x).exp_m1().abs() <= y * (-y).exp_m1().abs() * (1.0 + 1e-15));
    }

    #[test]
    fn vector_inequality(x in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
        let x = DVector::from_vec(x);
        let r = analysis::check_vector_inequality(&x);
        let norm = x.norm();
        let lhs = -norm * (-(-norm).exp_m1());
        let rhs: f64 = -x.iter().map(|v| v * -(-v).exp_m1()).sum::<f64>();
        prop_assert!(r.holds);
        prop_assert!(lhs >= rhs - 1e-12 * (1.0 + rhs.abs()), "{lhs} < {rhs}");
    }

    #[test]
    fn consensus_is_translation_invariant((t, x) in with_state(topology()), c in -5.0f64..5.0, frac in 0.0f64..0.99) {
        let l = build_laplacian(&t).unwrap();
        let p = params(2.0, 1.0);
        let x = DVector::from_vec(x);
        let shifted = x.add_scalar(c);
        let a = protocol::fwat_single_input(&x, &l, &p, frac).unwrap().value;
        let b = protocol::fwat_single_input(&shifted, &l, &p, frac).unwrap().value;
        // Rounding in Lx is amplified by e^{-Lx}, which can be large on dense graphs.
        let w = (-(l.matrix() * &x)).map(f64::exp);
        let scale = 2.0 / (1.0 - frac) * (1.0 + l.matrix().amax() * w.amax());
        let diff = (a - b).amax();
        prop_assert!(diff <= 1e-10 * scale, "{} vs {}", diff, scale);
    }

    #[test]
    fn tracking_error_is_translation_invariant((t, x) in with_state(connected_topology()), c in -5.0f64..5.0) {
        let l = build_laplacian(&t).unwrap();
        let p = FwatParams::double(2.0, 2.0, 0.0, 1.0, 2.0).unwrap();
        let x = DVector::from_vec(x);
        let v = x.map(|a| 0.5 * a.sin());
        let s1 = SecondOrderState::new(x.clone(), v.clone()).unwrap();
        let s2 = SecondOrderState::new(x.add_scalar(c), v).unwrap();
        let a = protocol::fwat_double_input(&s1, &l, &p, 0.3).unwrap().value;
        let b = protocol::fwat_double_input(&s2, &l, &p, 0.3).unwrap().value;
        prop_assert!((&a - &b).amax() <= 1e-9 * (1.0 + a.amax()));
    }

    #[test]
    fn feedback_linearization_round_trip(
        px in -5.0f64..5.0, py in -5.0f64..5.0, th in -7.0f64..7.0,
        v in -2.0f64..2.0, w in -3.0f64..3.0, off in 0.05f64..1.0,
        ux in -10.0f64..10.0, uy in -10.0f64..10.0,
    ) {
        let s = UnicycleState::new([px, py], th, v, w, off).unwrap();
        let (vd, wd) = formation::feedback_linearize([ux, uy], &s).unwrap();
        let acc = formation::hand_acceleration(&s, vd, wd);
        prop_assert!((acc[0] - ux).abs() <= 1e-10 * (1.0 + ux.abs()));
        prop_assert!((acc[1] - uy).abs() <= 1e-10 * (1.0 + uy.abs()));
        // Independent oracle for the hand velocity.
        let hv = formation::hand_velocity(&s);
        prop_assert!((hv[0] - (v * th.cos() - off * w * th.sin())).abs() < 1e-12);
        prop_assert!((hv[1] - (v * th.sin() + off * w * th.cos())).abs() < 1e-12);
    }

    #[test]
    fn formation_input_is_translation_invariant(dx in -3.0f64..3.0, dy in -3.0f64..3.0, seed in 0u64..1000) {
        let spec = formation::FormationSpec::square();
        let l = build_laplacian(&Topology::ring(4)).unwrap();
        let p = FwatParams::double(2.0, 2.0, 0.0, 4.0, 8.0).unwrap();
        let base: Vec<UnicycleState> = (0..4)
            .map(|i| {
                let k = (seed + i as u64) as f64;
                UnicycleState::new([k.sin(), (1.3 * k).cos()], 0.7 * k, 0.1 * k.cos(), 0.2 * k.sin(), 0.2).unwrap()
            })
            .collect();
        let moved: Vec<UnicycleState> = base
            .iter()
            .map(|s| UnicycleState::new([s.p[0] + dx, s.p[1] + dy], s.theta, s.v, s.omega, s.offset).unwrap())
            .collect();
        let a = formation::formation_input(&base, &spec, &l, &p, 0.5).unwrap().value;
        let b = formation::formation_input(&moved, &spec, &l, &p, 0.5).unwrap().value;
        prop_assert!((&a - &b).amax() <= 1e-9 * (1.0 + a.amax()));
    }
}

#[test]
fn kron_identity_matches_explicit_product() {
    let l: Laplacian = build_laplacian(&Topology::ring(4)).unwrap();
    let k = l.kron_identity(2);
    let want = l.matrix().kronecker(&DMatrix::<f64>::identity(2, 2));
    assert_eq!(k.matrix(), &want);
}
