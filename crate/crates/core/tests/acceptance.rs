//! Acceptance criteria 1–11. `acceptance_summary` prints one PASS/FAIL line
//! per criterion (run with `--nocapture` to see them) and asserts every
//! criterion except 9, whose failure is analysed in `c9_*` below.

use std::time::{Duration, Instant};

use fwat_core::analysis::{self, CertificateKind};
use fwat_core::formation;
use fwat_core::graph::{build_laplacian, Network, Topology};
use fwat_core::protocol::{self, FwatParams, SecondOrderState};
use fwat_core::scenario::{self, builtin, Init, ScenarioConfig, SweepGrid};
use fwat_core::sim::{self, IntegratorConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn sup_deviation(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().fold(0.0, |a, v| a.max((v - m).abs()))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn c1() -> Outcome {
    let mut worst_dev: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    let mut worst_time = Duration::ZERO;
    let mut gain_ok = true;
    for seed in 1..=5 {
        let mut c = builtin("example1").unwrap();
        c.seed = seed;
        let (out, dt) = timed(|| scenario::run(&c).unwrap());
        let traj = out.trajectory("fwat").unwrap();
        let end = traj.sample_at(4.0 - 1e-3).expect("sample at tf - 1e-3");
        let a0 = traj.first().x.iter().sum::<f64>() / 4.0;
        for s in &traj.samples {
            let a = s.x.iter().sum::<f64>() / 4.0;
            worst_drift = worst_drift.max((a - a0).abs());
        }
        worst_dev = worst_dev.max(sup_deviation(&end.x));
        worst_time = worst_time.max(dt);
        gain_ok &= out.gain.eta_threshold.is_some_and(|th| 4.0 > th);
    }
    Outcome {
        id: 1,
        title: "example1 reproduction",
        passed: worst_dev < 1e-3 && worst_drift < 1e-8 && worst_time < Duration::from_secs(5) && gain_ok,
        detail: format!(
            "max |delta|_inf(tf-1e-3) = {worst_dev:.2e}, max avg drift = {worst_drift:.2e}, slowest run {worst_time:.2?} (5 seeds)"
        ),
    }
}

fn c2() -> Outcome {
    let c = builtin("example2").unwrap();
    let (out, dt) = timed(|| scenario::run(&c).unwrap());
    let traj = out.trajectory("double").unwrap();
    let z = traj.sample_at(3.0 - 1e-3).unwrap().diag.z_norm.unwrap();
    let end = traj.sample_at(6.0 - 1e-3).unwrap();
    let dev = sup_deviation(&end.x);
    let v = max_abs(end.v.as_ref().unwrap());
    Outcome {
        id: 2,
        title: "example2 reproduction",
        passed: z < 1e-3 && dev < 1e-3 && v < 1e-2 && dt < Duration::from_secs(10),
        detail: format!(
            "|z(t1-1e-3)| = {z:.2e}, |delta|_inf = {dev:.2e}, |v|_inf = {v:.2e}, {dt:.2?}"
        ),
    }
}

fn c3() -> Outcome {
    let c = builtin("formation").unwrap();
    let (out, dt) = timed(|| scenario::run(&c).unwrap());
    let traj = out.trajectory("formation").unwrap();
    let end = traj.sample_at(8.0 - 1e-3).unwrap();
    let k = traj
        .extra_names
        .iter()
        .position(|s| s == "disp_err")
        .unwrap();
    // Recompute the displacement error from the recorded hand positions.
    let hand = |i: usize| {
        let hx = traj
            .extra_names
            .iter()
            .position(|s| *s == format!("hx_{i}"))
            .unwrap();
        [end.extra[hx], end.extra[hx + 1]]
    };
    let pairs = [
        (1, 2, [1.0, 0.0]),
        (4, 3, [1.0, 0.0]),
        (4, 1, [0.0, 1.0]),
        (3, 2, [0.0, 1.0]),
    ];
    let err: f64 = pairs
        .iter()
        .map(|&(i, j, d)| {
            let (a, b) = (hand(i), hand(j));
            (b[0] - a[0] - d[0]).hypot(b[1] - a[1] - d[1])
        })
        .sum();
    Outcome {
        id: 3,
        title: "Formation reproduction",
        passed: err < 1e-2 && (err - end.extra[k]).abs() < 1e-12 && dt < Duration::from_secs(30),
        detail: format!("total displacement error {err:.2e} m at tf-1e-3, {dt:.2?}"),
    }
}

fn builtin_graphs() -> Vec<(String, Topology)> {
    let mut out = Vec::new();
    for name in scenario::builtin_names() {
        let c = builtin(name).unwrap();
        if let Some(g) = &c.graph {
            out.push((format!("{name}/graph"), g.topology().unwrap()));
        }
        if let Some(s) = &c.schedule {
            for (k, g) in s.graphs.iter().enumerate() {
                out.push((format!("{name}/schedule[{}]", k + 1), g.topology().unwrap()));
            }
        }
        if let Some(f) = &c.formation {
            out.push((format!("{name}/formation"), f.spec().unwrap().topology()));
        }
    }
    out.push(("complete4".into(), Topology::complete(4)));
    out
}

fn c4() -> Outcome {
    let mut ok = true;
    let mut min_margin = f64::INFINITY;
    let graphs = builtin_graphs();
    for (k, (_, topo)) in graphs.iter().enumerate() {
        assert!(topo.is_connected());
        let l = build_laplacian(topo).unwrap();
        // 1ᵀL1 in integers straight from the edge list.
        let n = topo.n();
        let mut ones_l_ones: i64 = 0;
        for i in 0..n {
            ones_l_ones += topo.degree(i) as i64;
        }
        ones_l_ones -= 2 * topo.edges().len() as i64;
        let r = analysis::counterexample_report(&l, 10_000, 100 + k as u64);
        ok &= ones_l_ones == 0 && r.ones_l_ones == 0 && r.lambda2_n > 0.0 && r.unrestricted_fails;
        // Deflated Rayleigh bound with an independent λ₂.
        let lam2 = {
            let mut ev: Vec<f64> = l
                .matrix()
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .collect();
            ev.sort_by(f64::total_cmp);
            ev[1]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7 + k as u64);
        for _ in 0..10_000 {
            let mut y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let m = y.mean();
            y.add_scalar_mut(-m);
            let margin = y.dot(&(l.matrix() * &y)) - lam2 * y.norm_squared();
            min_margin = min_margin.min(margin);
        }
        ok &= r.deflated_holds;
    }
    ok &= min_margin >= -1e-9;
    Outcome {
        id: 4,
        title: "Counterexample suite",
        passed: ok,
        detail: format!(
            "{} graphs: 1'L1 = 0 and lambda2*n > 0 on all; min deflated margin {min_margin:.2e} over 1e4 vectors each",
            graphs.len()
        ),
    }
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scalar_ok = 0usize;
    for _ in 0..100_000 {
        let a = 50.0 * (1.0 - rng.gen::<f64>());
        let b = 50.0 * (1.0 - rng.gen::<f64>());
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        scalar_ok += analysis::check_scalar_inequality(x, y).unwrap() as usize;
    }
    let mut vector_ok = 0usize;
    for _ in 0..100_000 {
        let n = rng.gen_range(1..=8);
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..=10.0));
        let r = analysis::check_vector_inequality(&x);
        // Independent evaluation of both sides.
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lhs = -norm * (1.0 - (-norm).exp());
        let rhs: f64 = -x.iter().map(|v| v * (1.0 - (-v).exp())).sum::<f64>();
        let agree = (lhs - r.lhs).abs() <= 1e-12 * (1.0 + lhs.abs())
            && (rhs - r.rhs).abs() <= 1e-9 * (1.0 + rhs.abs());
        vector_ok += (r.holds && lhs >= rhs - 1e-12 * (1.0 + rhs.abs()) && agree) as usize;
    }
    Outcome {
        id: 5,
        title: "Inequality property suites",
        passed: scalar_ok == 100_000 && vector_ok == 100_000,
        detail: format!("scalar {scalar_ok}/100000, vector {vector_ok}/100000"),
    }
}

fn closed_form(z0: f64, eta2: f64, t0: f64, t1: f64, t: f64) -> f64 {
    let c = (z0.exp() - 1.0) / (t1 - t0).powf(eta2);
    (1.0 + c * (t1 - t).powf(eta2)).ln()
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let cfg = IntegratorConfig {
        eps_guard: Some(1e-3),
        ..IntegratorConfig::default()
    };
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..=3.0));
        let eta2 = 1.0 + 3.0 * (1.0 - rng.gen::<f64>());
        let t0 = 0.0;
        let t1 = rng.gen_range(0.5..=5.0);
        let traj = sim::integrate_pure_tracking(&z0, eta2, t0, t1, &cfg).unwrap();
        assert_eq!(traj.last().t, t1 - 1e-3);
        for s in &traj.samples {
            for (z, &a) in s.x.iter().zip(z0.iter()) {
                worst = worst.max((z - closed_form(a, eta2, t0, t1, s.t)).abs());
            }
        }
    }
    Outcome {
        id: 6,
        title: "Closed-form tracking",
        passed: worst <= 1e-6,
        detail: format!("max |z - closed form| = {worst:.2e} over 100 cases on [t0, t1-1e-3]"),
    }
}

fn random_connected(rng: &mut ChaCha8Rng) -> Topology {
    let n = rng.gen_range(2..=7);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.3) && !edges.contains(&(i, j)) {
                edges.push((i, j));
            }
        }
    }
    Topology::new(n, edges).unwrap()
}

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let step = 1e-6;
    for _ in 0..100 {
        let topo = random_connected(&mut rng);
        let l = build_laplacian(&topo).unwrap();
        let n = topo.n();
        let tf = rng.gen_range(1.0..=8.0);
        let p = FwatParams::single(rng.gen_range(0.5..=4.0), 0.0, tf).unwrap();
        let t = rng.gen_range(0.0..0.9 * tf);
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let part = protocol::phi1_partials(&x, &l, &p, t).unwrap().value;
        let f = |x: &DVector<f64>, t: f64| protocol::phi1(x, &l, &p, t).unwrap().value;
        let mut fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            fd.set_column(j, &((f(&xp, t) - f(&xm, t)) / (2.0 * step)));
        }
        let fdt = (f(&x, t + step) - f(&x, t - step)) / (2.0 * step);
        let rel_x = (&part.dx - &fd).norm() / part.dx.norm().max(1e-12);
        let rel_t = (&part.dt - &fdt).norm() / part.dt.norm().max(1e-12);
        worst = worst.max(rel_x).max(rel_t);
    }
    Outcome {
        id: 7,
        title: "Jacobian checks",
        passed: worst <= 1e-5,
        detail: format!("max relative error {worst:.2e} over 100 (graph, x, t) triples"),
    }
}

fn c8() -> Outcome {
    let mut ok = true;
    let mut min_xi: f64 = f64::INFINITY;
    let mut min_perp: f64 = f64::INFINITY;
    let mut runs = 0;
    for seed in 1..=10 {
        let mut c = builtin("example2").unwrap();
        c.seed = seed;
        let p = c.prepare().unwrap();
        let traj = p.simulate().unwrap().remove(0).1;
        let net = p.network.as_ref().unwrap();
        let r = analysis::iss_bound_check(&traj, net, &p.params).unwrap();
        ok &= r.certificate.achieved;
        min_xi = min_xi.min(r.xi_min_margin);
        min_perp = min_perp.min(r.perp_min_margin);
        runs += 1;
    }
    Outcome {
        id: 8,
        title: "ISS bound",
        passed: ok && min_xi >= 0.0 && min_perp >= 0.0,
        detail: format!(
            "{runs} runs: min xi margin {min_xi:.2e}, min x_perp margin {min_perp:.2e}"
        ),
    }
}

const C9_STEPS: [f64; 3] = [1e-3, 1e-4, 1e-5];

fn handoff_config() -> IntegratorConfig {
    IntegratorConfig {
        eps_guard: Some(1e-7),
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        ..IntegratorConfig::default()
    }
}

fn example2_start(eta2: f64) -> (SecondOrderState, Network, FwatParams) {
    let mut c: ScenarioConfig = builtin("example2").unwrap();
    c.params.eta2 = Some(eta2);
    let p = c.prepare().unwrap();
    let s = match p.init {
        Init::Double(s) => s,
        _ => unreachable!(),
    };
    (s, p.network.unwrap(), p.params)
}

fn handoff(eta2: f64) -> analysis::HandoffReport {
    let (s, net, p) = example2_start(eta2);
    analysis::handoff_smoothness(&s, &net, &p, &handoff_config(), &C9_STEPS, 1e-3).unwrap()
}

fn c9() -> Outcome {
    let r = handoff(2.0);
    Outcome {
        id: 9,
        title: "Smoothness at t1 (eta2 = 2)",
        passed: r.smooth,
        detail: format!(
            "one-sided derivative jump {:.4} after extrapolation (spread {:.1e}); tolerance 1e-3",
            r.jump, r.extrapolation_spread
        ),
    }
}

fn c10() -> Outcome {
    let mut pal_max: f64 = 0.0;
    let mut fwat_max: f64 = 0.0;
    let mut count = 0;
    for name in scenario::builtin_names() {
        let c = builtin(name).unwrap();
        let p = c.prepare().unwrap();
        let Init::Single(x0) = &p.init else { continue };
        let net = p.network.as_ref().unwrap();
        let fw = sim::integrate_single(x0, net, &p.params, &p.cfg).unwrap();
        let pal = sim::integrate_pal(x0, net, &p.params, &p.cfg).unwrap();
        let drift = |t: &fwat_core::Trajectory| {
            let a0 = t.first().x.iter().sum::<f64>() / t.first().x.len() as f64;
            t.samples
                .iter()
                .map(|s| (s.x.iter().sum::<f64>() / s.x.len() as f64 - a0).abs())
                .fold(0.0f64, f64::max)
        };
        fwat_max = fwat_max.max(drift(&fw));
        pal_max = pal_max.max(drift(&pal));
        count += 1;
    }
    Outcome {
        id: 10,
        title: "Contrast experiment",
        passed: count > 0 && pal_max > 1e-3 && fwat_max < 1e-8,
        detail: format!("{count} scenarios: baseline max drift {pal_max:.2e}, corrected law max drift {fwat_max:.2e}"),
    }
}

fn c11() -> Outcome {
    let grid = SweepGrid {
        tf: vec![1.0, 4.0, 16.0],
        seeds: (0..20).collect(),
        ..SweepGrid::default()
    };
    let mut cells = 0;
    let mut good = 0;
    let mut worst_ratio: f64 = 0.0;
    for base in ["example1", "example2"] {
        let rows = scenario::sweep(&builtin(base).unwrap(), &grid);
        for r in &rows {
            cells += 1;
            if r.status == "ok" && r.settled_before_tf() {
                good += 1;
            }
            if let (Some(a), Some(tf)) = (r.achieved_time, r.tf) {
                worst_ratio = worst_ratio.max(a / tf);
            }
        }
    }
    Outcome {
        id: 11,
        title: "Free-will property sweep",
        passed: cells == 120 && good == cells,
        detail: format!("{good}/{cells} cells settled before tf (single and double integrator); max achieved_time/tf = {worst_ratio:.3}"),
    }
}

#[test]
fn acceptance_summary() {
    let outcomes = [
        c1(),
        c2(),
        c3(),
        c4(),
        c5(),
        c6(),
        c7(),
        c8(),
        c9(),
        c10(),
        c11(),
    ];
    for o in &outcomes {
        println!(
            "criterion {:>2} {}  {}: {}",
            o.id,
            if o.passed { "PASS" } else { "FAIL" },
            o.title,
            o.detail
        );
    }
    let unexpected: Vec<u32> = outcomes
        .iter()
        .filter(|o| !o.passed && o.id != 9)
        .map(|o| o.id)
        .collect();
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}

/// Criterion 9 as stated. It fails: with η₂ = 2 the tracking correction's
/// time derivative tends to `2c ≠ 0` as `t → t1⁻` and is zero after `t1`.
#[test]
#[ignore = "fails as stated: the input has a derivative jump of 2c at t1 when eta2 = 2"]
fn c9_handoff_smoothness_eta2_2() {
    let r = handoff(2.0);
    assert!(r.smooth, "jump {}", r.jump);
}

/// The measured jump matches the closed form of the correction term,
/// `ψ = −η₂/(t1 − t)(1 − e^{−z})` with `z = ln(1 + c(t1 − t)²)`:
/// `ψ ≈ −2c (t1 − t)` near `t1`, so `dψ/dt → 2c` on the left.
#[test]
fn c9_jump_matches_closed_form() {
    let (s, net, p) = example2_start(2.0);
    let z0 = protocol::tracking_error(&s, net.laplacian_at(0.0).unwrap(), &p, 0.0)
        .unwrap()
        .value;
    let c = z0.map(|z| z.exp_m1() / (p.t1 - p.t0).powi(2));
    let predicted = 2.0 * c.amax();
    let r = handoff(2.0);
    let jump = DVector::from_vec(r.left_limit.clone()) - DVector::from_vec(r.right_limit.clone());
    let want = c * 2.0;
    assert!(
        (&jump - &want).amax() < 1e-3 * (1.0 + predicted),
        "jump {jump} want {want}"
    );
    assert!(r.jump > 1e-3);
}

/// With η₂ = 3 the correction is `O((t1 − t)²)` and the same check passes.
#[test]
fn c9_companion_eta2_3_is_smooth() {
    let r = handoff(3.0);
    assert!(
        r.smooth,
        "jump {} spread {}",
        r.jump, r.extrapolation_spread
    );
}

#[test]
fn c3_scheme_cross_check_on_benign_seed() {
    // Seed 1 has a moderate initial tracking error, so the direct unicycle
    // integration also succeeds and must agree with the default scheme.
    let mut c = builtin("formation").unwrap();
    c.seed = 1;
    let p = c.prepare().unwrap();
    let Init::Formation { fleet, spec, .. } = &p.init else {
        unreachable!()
    };
    let net = p.network.as_ref().unwrap();
    let a = formation::integrate_formation(
        fleet,
        spec,
        net,
        &p.params,
        &p.cfg,
        formation::FormationScheme::Unicycle,
    )
    .unwrap();
    let b = formation::integrate_formation(
        fleet,
        spec,
        net,
        &p.params,
        &p.cfg,
        formation::FormationScheme::ClosedFormTracking,
    )
    .unwrap();
    let mut matched = 0;
    for sa in &a.samples {
        let Some(sb) = b.samples.iter().find(|s| (s.t - sa.t).abs() < 1e-12) else {
            continue;
        };
        let d =
            sa.x.iter()
                .zip(&sb.x)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d < 1e-6, "t = {}: hand error differs by {d}", sa.t);
        matched += 1;
    }
    assert!(matched > 10);
    let ca = analysis::settling_certificate(&a, 1e-3);
    assert_eq!(ca.kind, CertificateKind::Consensus);
    assert!(ca.achieved);
}
