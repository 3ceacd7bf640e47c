//! Numerical certificates and inequality oracles.
//!
//! Everything here is a pure function of its inputs (trajectories, matrices,
//! numbers), so re-running a check on a stored trajectory reproduces it
//! bit-for-bit.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Laplacian, Network};
use crate::protocol::{self, FwatParams, SecondOrderState};
use crate::sim::{self, deviation, IntegratorConfig, Trajectory};

/// Default consensus tolerance in state units.
pub const CONSENSUS_TOL: f64 = 1e-3;
/// Default bound on the drift of the average.
pub const AVERAGE_TOL: f64 = 1e-8;
/// Allowed relative uphill step of `V` between samples.
pub const LYAPUNOV_UPHILL_REL: f64 = 1e-9;

/// `δ = x − x̄ 1` and `x̄ = 1ᵀx / n`.
pub fn consensus_error(x: &DVector<f64>) -> (DVector<f64>, f64) {
    let xbar = x.mean();
    (x.map(|v| v - xbar), xbar)
}

/// `−x(1 − e^{−x}) ≥ −y(1 − e^{−y})` for `0 < x ≤ y`, evaluated with no slack.
pub fn check_scalar_inequality(x: f64, y: f64) -> Result<bool> {
    if !(x > 0.0) || x > y {
        return Err(Error::InvalidParams(format!(
            "need 0 < x <= y, got x={x} y={y}"
        )));
    }
    let f = |s: f64| -s * (-(-s).exp_m1());
    Ok(f(x) >= f(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorInequality {
    /// `−‖x‖ (1 − e^{−‖x‖})`
    pub lhs: f64,
    /// `−xᵀ (1 − e^{−x})`
    pub rhs: f64,
    pub holds: bool,
}

/// Round-off slack for [`check_vector_inequality`].
pub const VECTOR_INEQUALITY_SLACK: f64 = 1e-12;

/// `−‖x‖ (1 − e^{−‖x‖}) ≥ −xᵀ (1 − e^{−x})`.
pub fn check_vector_inequality(x: &DVector<f64>) -> VectorInequality {
    let norm = x.norm();
    let lhs = -norm * (-(-norm).exp_m1());
    let rhs = -x.iter().map(|&v| v * (-(-v).exp_m1())).sum::<f64>();
    let scale = 1.0 + lhs.abs().max(rhs.abs());
    VectorInequality {
        lhs,
        rhs,
        holds: lhs >= rhs - VECTOR_INEQUALITY_SLACK * scale,
    }
}

/// Shows that `λ₂‖x‖² ≤ xᵀLx` fails at `x = 1` while the deflated form
/// holds on vectors orthogonal to `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub n: usize,
    pub lambda2: f64,
    /// `λ₂ ‖1‖² = λ₂ n`
    pub lambda2_n: f64,
    /// `1ᵀ L 1`, summed in integer arithmetic.
    pub ones_l_ones: i64,
    /// `λ₂ n > 0 = 1ᵀL1`: the unrestricted inequality is false at `1`.
    pub unrestricted_fails: bool,
    pub deflated_trials: usize,
    /// Smallest `yᵀLy − λ₂‖y‖²` over the random deflated trials.
    pub deflated_min_margin: f64,
    /// The deflated inequality held on every trial within the slack.
    pub deflated_holds: bool,
}

/// Absolute slack for the deflated Rayleigh bound.
pub const RAYLEIGH_SLACK: f64 = 1e-9;

pub fn counterexample_report(l: &Laplacian, trials: usize, seed: u64) -> CounterexampleReport {
    let n = l.n();
    let m = l.matrix();
    let ones_l_ones: i64 = m.iter().map(|&v| v.round() as i64).sum();
    let lambda2 = l.lambda2();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_margin = f64::INFINITY;
    for _ in 0..trials {
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let (y, _) = consensus_error(&y);
        let margin = y.dot(&(m * &y)) - lambda2 * y.norm_squared();
        min_margin = min_margin.min(margin);
    }
    CounterexampleReport {
        n,
        lambda2,
        lambda2_n: lambda2 * n as f64,
        ones_l_ones,
        unrestricted_fails: lambda2 * n as f64 > 0.0 && ones_l_ones == 0,
        deflated_trials: trials,
        deflated_min_margin: min_margin,
        deflated_holds: trials == 0 || min_margin >= -RAYLEIGH_SLACK,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Consensus,
    Tracking,
    Boundedness,
    AverageConservation,
}

/// Worst residual found and where.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub value: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub achieved: bool,
    pub achieved_time: Option<f64>,
    pub tolerance_used: f64,
    pub witness: Witness,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// First index from which `ok` holds through the end of `flags`.
fn persistent_from(flags: &[bool]) -> Option<usize> {
    let tail = flags.iter().rev().take_while(|&&b| b).count();
    (tail > 0).then(|| flags.len() - tail)
}

/// Consensus within `tol` (sup norm of the deviation from the mean) at the
/// final sample. `achieved_time` is the first sample from which the
/// condition holds to the end; the witness is the largest deviation over that
/// trailing window, or the final deviation when not achieved.
pub fn settling_certificate(traj: &Trajectory, tol: f64) -> Certificate {
    let series: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .map(|s| (s.t, max_abs(&deviation(&s.x, traj.dim))))
        .collect();
    threshold_certificate(CertificateKind::Consensus, &series, tol)
}

/// Certificate for `value(t) ≤ tol` holding from some sample to the end of
/// a `(t, value)` series, with the same conventions as
/// [`settling_certificate`].
pub fn threshold_certificate(
    kind: CertificateKind,
    series: &[(f64, f64)],
    tol: f64,
) -> Certificate {
    let flags: Vec<bool> = series.iter().map(|&(_, e)| e <= tol).collect();
    let &(t_last, e_last) = series.last().expect("non-empty series");
    match persistent_from(&flags) {
        Some(k) => {
            let worst =
                series[k..]
                    .iter()
                    .fold((series[k].0, f64::NEG_INFINITY), |acc, &(t, e)| {
                        if e > acc.1 {
                            (t, e)
                        } else {
                            acc
                        }
                    });
            Certificate {
                kind,
                achieved: true,
                achieved_time: Some(series[k].0),
                tolerance_used: tol,
                witness: Witness {
                    value: worst.1,
                    time: worst.0,
                },
            }
        }
        None => Certificate {
            kind,
            achieved: false,
            achieved_time: None,
            tolerance_used: tol,
            witness: Witness {
                value: e_last,
                time: t_last,
            },
        },
    }
}

/// The recorded average stays within `tol` of its initial value.
pub fn average_conservation_certificate(traj: &Trajectory, tol: f64) -> Certificate {
    let a0 = traj.first().diag.avg;
    let (time, drift) = traj
        .samples
        .iter()
        .map(|s| (s.t, (s.diag.avg - a0).abs()))
        .fold((traj.first().t, 0.0), |acc, (t, d)| {
            if d > acc.1 || d.is_nan() {
                (t, d)
            } else {
                acc
            }
        });
    let achieved = drift <= tol;
    Certificate {
        kind: CertificateKind::AverageConservation,
        achieved,
        achieved_time: achieved.then(|| traj.first().t),
        tolerance_used: tol,
        witness: Witness { value: drift, time },
    }
}

/// `‖z‖ ≤ tol` at the last sample at or before `t_check` (normally
/// `t1 − ε`). Needs the `z_norm` diagnostic.
pub fn tracking_certificate(traj: &Trajectory, t_check: f64, tol: f64) -> Result<Certificate> {
    let window: Vec<(f64, f64)> =
        traj.samples
            .iter()
            .take_while(|s| s.t <= t_check)
            .map(|s| {
                s.diag.z_norm.map(|z| (s.t, z)).ok_or_else(|| {
                    Error::InvalidState(format!("no z_norm recorded at t = {}", s.t))
                })
            })
            .collect::<Result<_>>()?;
    let Some(&(t_last, z_last)) = window.last() else {
        return Err(Error::InvalidState(format!(
            "no samples at or before t = {t_check}"
        )));
    };
    let flags: Vec<bool> = window.iter().map(|&(_, z)| z <= tol).collect();
    let achieved = z_last <= tol;
    Ok(Certificate {
        kind: CertificateKind::Tracking,
        achieved,
        achieved_time: persistent_from(&flags).map(|k| window[k].0),
        tolerance_used: tol,
        witness: Witness {
            value: z_last,
            time: t_last,
        },
    })
}

/// Result of the boundedness check on `[t0, t1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssReport {
    pub certificate: Certificate,
    /// Smallest `ξ(t0) + λ₂∫‖z‖ + slack − ξ(t)` over the window.
    pub xi_min_margin: f64,
    /// Smallest `∫‖z‖ + 1e-6 − ‖x⊥(t) − x⊥(t0)‖` over the window.
    pub perp_min_margin: f64,
    /// Largest `ξ(t) / (ξ(t0) + λ₂∫‖z‖)`; how tight the bound is in practice.
    pub tightness: f64,
    pub samples_checked: usize,
}

/// Checks `ξ(t) ≤ ξ(t0) + λ₂ ∫‖z‖ dτ + 1e-6 (1 + ξ(t0))` with
/// `ξ = λ₂ ‖P x‖`, and `‖x⊥(t) − x⊥(t0)‖ ≤ ∫‖z‖ dτ + 1e-6`, on every sample
/// in `[t0, t1]`. The integral uses the trapezoid rule on the samples.
pub fn iss_bound_check(
    traj: &Trajectory,
    network: &Network,
    params: &FwatParams,
) -> Result<IssReport> {
    let window: Vec<_> = traj
        .samples
        .iter()
        .take_while(|s| s.t <= params.t1)
        .collect();
    if window.is_empty() {
        return Err(Error::InvalidState("no samples in [t0, t1]".into()));
    }
    let n = traj.n_agents();
    let mut z_norms = Vec::with_capacity(window.len());
    for s in &window {
        let v =
            s.v.as_ref()
                .ok_or_else(|| Error::InvalidState("boundedness check needs velocities".into()))?;
        let state = SecondOrderState::new(
            DVector::from_column_slice(&s.x),
            DVector::from_column_slice(v),
        )?;
        let l = network.laplacian_at(s.t)?;
        z_norms.push(
            protocol::tracking_error(&state, l, params, s.t)?
                .value
                .norm(),
        );
    }
    let lambda2 = network.lambda2()?;
    let xi = |x: &[f64]| lambda2 * deviation(x, 1).iter().map(|d| d * d).sum::<f64>().sqrt();
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let xi0 = xi(&window[0].x);
    let mean0 = mean(&window[0].x);
    let slack = 1e-6 * (1.0 + xi0);

    let mut integral = 0.0;
    let mut xi_min = f64::INFINITY;
    let mut perp_min = f64::INFINITY;
    let mut tightness: f64 = 0.0;
    let mut worst = Witness {
        value: f64::NEG_INFINITY,
        time: window[0].t,
    };
    for (k, s) in window.iter().enumerate() {
        if k > 0 {
            integral += 0.5 * (z_norms[k] + z_norms[k - 1]) * (s.t - window[k - 1].t);
        }
        let xi_t = xi(&s.x);
        let bound = xi0 + lambda2 * integral;
        let xi_margin = bound + slack - xi_t;
        let perp = (n as f64).sqrt() * (mean(&s.x) - mean0).abs();
        let perp_margin = integral + 1e-6 - perp;
        if bound > 0.0 {
            tightness = tightness.max(xi_t / bound);
        }
        let excess = (-xi_margin).max(-perp_margin);
        if excess > worst.value {
            worst = Witness {
                value: excess,
                time: s.t,
            };
        }
        xi_min = xi_min.min(xi_margin);
        perp_min = perp_min.min(perp_margin);
    }
    let achieved = xi_min >= 0.0 && perp_min >= 0.0;
    Ok(IssReport {
        certificate: Certificate {
            kind: CertificateKind::Boundedness,
            achieved,
            achieved_time: achieved.then(|| window[0].t),
            tolerance_used: slack,
            witness: worst,
        },
        xi_min_margin: xi_min,
        perp_min_margin: perp_min,
        tightness,
        samples_checked: window.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `(t_{k+1}, ΔV)` for steps that rose by more than the allowance.
    pub uphill: Vec<(f64, f64)>,
    /// Per-component state accuracy the allowance was computed with.
    pub state_tol: f64,
    /// `(t_{k+1}, ΔV, allowed)` for steps whose decrease fell short of the
    /// sampled `V̇` bound.
    pub bound_violations: Vec<(f64, f64, f64)>,
}

impl LyapunovReport {
    pub fn monotone(&self) -> bool {
        self.uphill.is_empty()
    }

    pub fn bound_respected(&self) -> bool {
        self.bound_violations.is_empty()
    }
}

/// `V = δᵀδ` along a single-integrator trajectory, with the uphill check and
/// the sampled form of `V̇ ≤ −2η/(t_f − t) ‖Lδ‖ (1 − e^{−‖Lδ‖})`.
///
/// A step may rise by `1e-9 V_k` plus the change in `V` that a per-component
/// state error of `state_tol` can produce, `2√(mV_k)·s + m s²` for `m`
/// components. Pass `state_tol = 0` for the bare relative rule; simulated
/// trajectories need the integrator's accuracy here once `V` reaches its
/// noise floor. The bound is checked as `ΔV ≤ h · max(b_k, b_{k+1}) +
/// allowance + 1e-14`. Samples at or after `tf` are skipped.
pub fn lyapunov_monitor(
    traj: &Trajectory,
    network: &Network,
    params: &FwatParams,
    state_tol: f64,
) -> Result<LyapunovReport> {
    let samples: Vec<_> = traj.samples.iter().filter(|s| s.t < params.tf).collect();
    let mut times = Vec::with_capacity(samples.len());
    let mut values = Vec::with_capacity(samples.len());
    let mut bounds = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let d = DVector::from_vec(deviation(&s.x, traj.dim));
        // A switch time belongs to the new interval; the step that ends there
        // evolved under the previous graph, which is the one active just before.
        let l_at = |t: f64| network.laplacian_at(t);
        let l = l_at(s.t)?;
        let l_prev = if k > 0 { l_at(samples[k - 1].t)? } else { l };
        let b = |l: &Laplacian| {
            let ld = l.apply(&d).norm();
            -2.0 * params.eta / (params.tf - s.t) * ld * (-(-ld).exp_m1())
        };
        times.push(s.t);
        values.push(d.norm_squared());
        bounds.push((b(l), b(l_prev)));
    }
    let m = traj.first().x.len() as f64;
    let allowance = |v: f64| {
        LYAPUNOV_UPHILL_REL * v + 2.0 * (m * v).sqrt() * state_tol + m * state_tol * state_tol
    };
    let mut uphill = Vec::new();
    let mut violations = Vec::new();
    for k in 1..values.len() {
        let dv = values[k] - values[k - 1];
        if dv > allowance(values[k - 1]) {
            uphill.push((times[k], dv));
        }
        let h = times[k] - times[k - 1];
        let allowed = h * bounds[k - 1].0.max(bounds[k].1) + allowance(values[k - 1]) + 1e-14;
        if dv > allowed {
            violations.push((times[k], dv, allowed));
        }
    }
    Ok(LyapunovReport {
        times,
        values,
        uphill,
        state_tol,
        bound_violations: violations,
    })
}

/// Sampled check of `ξ̇ ≤ −ηλ̄₂²/(t_f − t) (1 − e^{−ξ})` with `ξ = λ̄₂ √V`:
/// `ξ_{k+1} ≤ ξ_k + h · max(r_k, r_{k+1}) + tol`. Steps starting in an
/// edgeless interval are only required not to increase `ξ`. Returns the
/// worst excess (negative when the envelope holds with margin).
pub fn rate_envelope_excess(
    traj: &Trajectory,
    network: &Network,
    params: &FwatParams,
    tol: f64,
) -> Result<f64> {
    let lambda2 = network.lambda2()?;
    let samples: Vec<_> = traj.samples.iter().filter(|s| s.t < params.tf).collect();
    let xi: Vec<f64> = samples
        .iter()
        .map(|s| lambda2 * s.diag.lyapunov.max(0.0).sqrt())
        .collect();
    let rate = |k: usize| {
        -params.eta * lambda2 * lambda2 / (params.tf - samples[k].t) * (-(-xi[k]).exp_m1())
    };
    let mut worst = f64::NEG_INFINITY;
    for k in 1..samples.len() {
        let h = samples[k].t - samples[k - 1].t;
        let connected = network.laplacian_at(samples[k - 1].t)?.is_connected();
        let drop = if connected {
            h * rate(k - 1).max(rate(k))
        } else {
            0.0
        };
        worst = worst.max(xi[k] - (xi[k - 1] + drop + tol));
    }
    Ok(worst)
}

/// Closed-form solution of `ż = −η₂/(t1 − t)(1 − e^{−z})`:
/// `z(t) = ln(1 + c (t1 − t)^{η₂})` with `c = (e^{z(t0)} − 1)/(t1 − t0)^{η₂}`.
pub fn tracking_closed_form(z0: f64, eta2: f64, t0: f64, t1: f64, t: f64) -> f64 {
    let c = z0.exp_m1() / (t1 - t0).powf(eta2);
    (c * (t1 - t).powf(eta2)).ln_1p()
}

/// One-sided derivative estimates of the double-integrator input at `t1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffReport {
    pub steps: Vec<f64>,
    /// `(u(t1) − u(t1 − h)) / h` per step.
    pub left_quotients: Vec<Vec<f64>>,
    /// `(u(t1 + h) − u(t1)) / h` per step.
    pub right_quotients: Vec<Vec<f64>>,
    /// Richardson-extrapolated one-sided derivatives from the two finest steps.
    pub left_limit: Vec<f64>,
    pub right_limit: Vec<f64>,
    /// `‖left_limit − right_limit‖∞`
    pub jump: f64,
    /// Largest change of the extrapolated limits between the two step pairs.
    pub extrapolation_spread: f64,
    pub tolerance: f64,
    pub smooth: bool,
}

/// Integrates the double-integrator loop landing exactly on `t1 ± h` for
/// each `h` in `steps` (ordered coarse to fine, ratio constant), and compares
/// the Richardson-extrapolated one-sided difference quotients of `u` at `t1`.
pub fn handoff_smoothness(
    state0: &SecondOrderState,
    network: &Network,
    params: &FwatParams,
    cfg: &IntegratorConfig,
    steps: &[f64],
    tol: f64,
) -> Result<HandoffReport> {
    if steps.len() < 3 {
        return Err(Error::InvalidParams(
            "need at least three step sizes".into(),
        ));
    }
    let ratio = steps[0] / steps[1];
    let mut stops = vec![params.t1];
    for &h in steps {
        stops.push(params.t1 - h);
        stops.push(params.t1 + h);
    }
    let traj = sim::integrate_double_with_stops(state0, network, params, cfg, &stops)?;
    let u_at = |t: f64| -> Result<DVector<f64>> {
        traj.sample_at(t)
            .map(|s| DVector::from_column_slice(&s.u))
            .ok_or_else(|| Error::InvalidState(format!("no sample at t = {t}")))
    };
    let u1 = u_at(params.t1)?;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &h in steps {
        left.push((&u1 - u_at(params.t1 - h)?) / h);
        right.push((u_at(params.t1 + h)? - &u1) / h);
    }
    let rich = |q: &[DVector<f64>], k: usize| (&q[k + 1] * ratio - &q[k]) / (ratio - 1.0);
    let m = steps.len();
    let left_fine = rich(&left, m - 2);
    let right_fine = rich(&right, m - 2);
    let left_coarse = rich(&left, m - 3);
    let right_coarse = rich(&right, m - 3);
    let jump = (&left_fine - &right_fine).amax();
    let spread = (&left_fine - &left_coarse)
        .amax()
        .max((&right_fine - &right_coarse).amax());
    let to_vec = |v: &DVector<f64>| v.as_slice().to_vec();
    Ok(HandoffReport {
        steps: steps.to_vec(),
        left_quotients: left.iter().map(to_vec).collect(),
        right_quotients: right.iter().map(to_vec).collect(),
        left_limit: to_vec(&left_fine),
        right_limit: to_vec(&right_fine),
        jump,
        extrapolation_spread: spread,
        tolerance: tol,
        smooth: jump <= tol,
    })
}

/// Derivative jump of the tracking correction at `t1` predicted by the
/// closed form: `lim_{t→t1⁻} dψ/dt = η₂(η₂ − 1) c (t1 − t)^{η₂ − 2}`, which
/// is `2c` for `η₂ = 2`, zero for `η₂ > 2` and unbounded for `η₂ < 2`.
pub fn predicted_handoff_jump(z0: f64, eta2: f64, t0: f64, t1: f64) -> f64 {
    let c = z0.exp_m1() / (t1 - t0).powf(eta2);
    if eta2 > 2.0 {
        0.0
    } else if eta2 == 2.0 {
        2.0 * c
    } else if c == 0.0 {
        0.0
    } else {
        c.signum() * f64::INFINITY
    }
}
