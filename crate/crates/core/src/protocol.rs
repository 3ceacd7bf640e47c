//! Control laws as pure functions of state, time and parameters.
//!
//! * [`fwat_single_input`]: `u = η/(t_f − t) · L e^{−Lx}` on `[t0, tf)`, zero after.
//! * [`pal_input`]: the earlier non-diffusive law `u = −η/(t_f − t) (1 − e^{−Lx})`,
//!   kept only as a comparison baseline. It does not preserve the average.
//! * [`per_agent_input`]: the same single-integrator law evaluated from
//!   neighbour-local sums `z_i = Σ_{j∈N_i} (x_j − x_i)`.
//! * [`fwat_double_input`]: the three-branch double-integrator law that drives
//!   `z = v + φ₁` to zero by `t1` and then rides the reduced dynamics.
//!
//! Every element-wise exponential saturates its argument at ±[`EXP_CAP`]; the
//! number of clamped components is returned alongside the value.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Laplacian;

/// Exponent arguments are clamped to `[-EXP_CAP, EXP_CAP]`.
pub const EXP_CAP: f64 = 500.0;

/// Gains and time instants of the protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwatParams {
    pub eta: f64,
    pub eta2: f64,
    pub t0: f64,
    pub t1: f64,
    pub tf: f64,
}

impl FwatParams {
    /// Parameters for the single-integrator law. `eta2` is unused and `t1`
    /// is set to `tf`.
    pub fn single(eta: f64, t0: f64, tf: f64) -> Result<Self> {
        let p = Self {
            eta,
            eta2: 0.0,
            t0,
            t1: tf,
            tf,
        };
        p.validate_single()?;
        Ok(p)
    }

    pub fn double(eta: f64, eta2: f64, t0: f64, t1: f64, tf: f64) -> Result<Self> {
        let p = Self {
            eta,
            eta2,
            t0,
            t1,
            tf,
        };
        p.validate_double()?;
        Ok(p)
    }

    pub fn validate_single(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.t0.is_finite() && self.tf.is_finite() && self.t0 < self.tf) {
            return Err(Error::InvalidParams(format!(
                "need t0 < tf, got t0={} tf={}",
                self.t0, self.tf
            )));
        }
        Ok(())
    }

    pub fn validate_double(&self) -> Result<()> {
        self.validate_single()?;
        if !(self.eta2 > 0.0 && self.eta2.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "eta2 must be positive, got {}",
                self.eta2
            )));
        }
        if !(self.t0 < self.t1 && self.t1 < self.tf) {
            return Err(Error::InvalidParams(format!(
                "need t0 < t1 < tf, got t0={} t1={} tf={}",
                self.t0, self.t1, self.tf
            )));
        }
        Ok(())
    }

    /// `η / (t_f − t)`; only meaningful for `t < tf`.
    fn gain(&self, t: f64) -> f64 {
        self.eta / (self.tf - t)
    }

    fn require_started(&self, t: f64) -> Result<()> {
        if t < self.t0 {
            return Err(Error::TimeOutOfRange {
                t,
                reason: format!("precedes t0 = {}", self.t0),
            });
        }
        Ok(())
    }
}

/// Outcome of checking the gain hypotheses against a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainStatus {
    Satisfied,
    Violated,
    /// λ₂ is unknown (for example an all-holiday schedule).
    Unverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCheck {
    pub eta: f64,
    /// `1/λ₂²`, when λ₂ is known and positive.
    pub eta_threshold: Option<f64>,
    pub eta2: Option<f64>,
    pub status: GainStatus,
}

impl GainCheck {
    /// Checks `η > 1/λ₂²`, and `η₂ > 1` when `double` is set.
    pub fn evaluate(params: &FwatParams, lambda2: Option<f64>, double: bool) -> Self {
        let eta2_ok = !double || params.eta2 > 1.0;
        let (threshold, status) = match lambda2 {
            Some(l2) if l2 > 0.0 => {
                let th = 1.0 / (l2 * l2);
                let ok = params.eta > th && eta2_ok;
                (
                    Some(th),
                    if ok {
                        GainStatus::Satisfied
                    } else {
                        GainStatus::Violated
                    },
                )
            }
            _ if !eta2_ok => (None, GainStatus::Violated),
            _ => (None, GainStatus::Unverified),
        };
        Self {
            eta: params.eta,
            eta_threshold: threshold,
            eta2: double.then_some(params.eta2),
            status,
        }
    }
}

/// A value plus the number of exponent arguments that hit [`EXP_CAP`].
#[derive(Debug, Clone, PartialEq)]
pub struct Eval<T> {
    pub value: T,
    pub saturated: usize,
}

impl<T> Eval<T> {
    pub(crate) fn new(value: T, saturated: usize) -> Self {
        Self { value, saturated }
    }
}

/// Position/velocity state of double-integrator agents.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

impl SecondOrderState {
    pub fn new(x: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::InvalidState(format!(
                "position has {} entries, velocity {}",
                x.len(),
                v.len()
            )));
        }
        ensure_finite(&x)?;
        ensure_finite(&v)?;
        Ok(Self { x, v })
    }
}

pub fn ensure_finite(x: &DVector<f64>) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidState(format!(
            "entry {} is not finite",
            i + 1
        ))),
        None => Ok(()),
    }
}

fn check_dim(x: &DVector<f64>, l: &Laplacian) -> Result<()> {
    if x.len() != l.n() {
        return Err(Error::InvalidState(format!(
            "state has {} entries but the graph has {} nodes",
            x.len(),
            l.n()
        )));
    }
    Ok(())
}

fn capped_exp(arg: f64, saturated: &mut usize) -> f64 {
    if arg > EXP_CAP {
        *saturated += 1;
        EXP_CAP.exp()
    } else if arg < -EXP_CAP {
        *saturated += 1;
        (-EXP_CAP).exp()
    } else {
        arg.exp()
    }
}

/// Element-wise `e^{−y}` with saturation.
pub fn exp_neg(y: &DVector<f64>) -> Eval<DVector<f64>> {
    let mut sat = 0;
    let value = y.map(|v| capped_exp(-v, &mut sat));
    Eval::new(value, sat)
}

fn require_before_tf(p: &FwatParams, t: f64) -> Result<()> {
    if t >= p.tf {
        return Err(Error::TimeOutOfRange {
            t,
            reason: format!("the desired velocity is only defined before tf = {}", p.tf),
        });
    }
    Ok(())
}

/// `φ₁(t, x) = −η/(t_f − t) · L e^{−Lx}`, the velocity the double
/// integrator is asked to track (up to sign).
pub fn phi1(x: &DVector<f64>, l: &Laplacian, p: &FwatParams, t: f64) -> Result<Eval<DVector<f64>>> {
    require_before_tf(p, t)?;
    check_dim(x, l)?;
    let e = exp_neg(&l.apply(x));
    Ok(Eval::new(l.apply(&e.value) * (-p.gain(t)), e.saturated))
}

/// Corrected single-integrator law. Zero for `t ≥ tf`.
pub fn fwat_single_input(
    x: &DVector<f64>,
    l: &Laplacian,
    p: &FwatParams,
    t: f64,
) -> Result<Eval<DVector<f64>>> {
    p.require_started(t)?;
    check_dim(x, l)?;
    if t >= p.tf {
        return Ok(Eval::new(DVector::zeros(x.len()), 0));
    }
    let e = exp_neg(&l.apply(x));
    Ok(Eval::new(l.apply(&e.value) * p.gain(t), e.saturated))
}

/// `[I − e^{−diag(Lx)}] 1`, the bracket of the baseline law.
pub fn pal_bracket(x: &DVector<f64>, l: &Laplacian) -> Result<Eval<DVector<f64>>> {
    check_dim(x, l)?;
    let e = exp_neg(&l.apply(x));
    Ok(Eval::new(e.value.map(|v| 1.0 - v), e.saturated))
}

/// Baseline non-diffusive law `u = −η/(t_f − t) [I − e^{−diag(Lx)}] 1`.
///
/// Not average-preserving; only used to contrast with [`fwat_single_input`].
pub fn pal_input(
    x: &DVector<f64>,
    l: &Laplacian,
    p: &FwatParams,
    t: f64,
) -> Result<Eval<DVector<f64>>> {
    p.require_started(t)?;
    if t >= p.tf {
        check_dim(x, l)?;
        return Ok(Eval::new(DVector::zeros(x.len()), 0));
    }
    let b = pal_bracket(x, l)?;
    Ok(Eval::new(b.value * (-p.gain(t)), b.saturated))
}

/// Neighbour-local sum `z_i = Σ_{j∈N_i} (x_j − x_i)`, i.e. `−(Lx)_i`.
pub fn relative_state_sum(neighbors: &[usize], x: &DVector<f64>, i: usize) -> f64 {
    neighbors.iter().map(|&j| x[j] - x[i]).sum()
}

/// Agent `i`'s input from its own relative-state sum and those broadcast by
/// its neighbours: `u_i = η/(t_f − t) Σ_{j∈N_i} (e^{z_i} − e^{z_j})`.
///
/// Equal to component `i` of [`fwat_single_input`]. An isolated agent gets 0.
pub fn per_agent_input(
    z_self: f64,
    z_neighbors: &[f64],
    p: &FwatParams,
    t: f64,
) -> Result<Eval<f64>> {
    p.require_started(t)?;
    if t >= p.tf || z_neighbors.is_empty() {
        return Ok(Eval::new(0.0, 0));
    }
    let mut sat = 0;
    let own = capped_exp(z_self, &mut sat);
    let sum: f64 = z_neighbors
        .iter()
        .map(|&zj| own - capped_exp(zj, &mut sat))
        .sum();
    Ok(Eval::new(p.gain(t) * sum, sat))
}

/// `z = v + φ₁(x)`.
pub fn tracking_error(
    state: &SecondOrderState,
    l: &Laplacian,
    p: &FwatParams,
    t: f64,
) -> Result<Eval<DVector<f64>>> {
    let phi = phi1(&state.x, l, p, t)?;
    Ok(Eval::new(&state.v + phi.value, phi.saturated))
}

/// Partial derivatives of [`phi1`].
#[derive(Debug, Clone, PartialEq)]
pub struct Phi1Partials {
    /// `∂φ₁/∂x = η/(t_f − t) · L diag(e^{−Lx}) L`
    pub dx: DMatrix<f64>,
    /// `∂φ₁/∂t = −η/(t_f − t)² · L e^{−Lx}`
    pub dt: DVector<f64>,
}

pub fn phi1_partials(
    x: &DVector<f64>,
    l: &Laplacian,
    p: &FwatParams,
    t: f64,
) -> Result<Eval<Phi1Partials>> {
    require_before_tf(p, t)?;
    check_dim(x, l)?;
    let lm = l.matrix();
    let e = exp_neg(&l.apply(x));
    let gain = p.gain(t);
    // L diag(w) L, scaling the columns of the left factor by w.
    let mut scaled = lm.clone();
    for (mut col, w) in scaled.column_iter_mut().zip(e.value.iter()) {
        col *= *w;
    }
    let dx = (scaled * lm) * gain;
    let dt = l.apply(&e.value) * (-gain / (p.tf - t));
    Ok(Eval::new(Phi1Partials { dx, dt }, e.saturated))
}

/// Which piece of the double-integrator law is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `[t0, t1)`: feed-forward plus the finite-time tracking correction.
    Tracking,
    /// `[t1, tf)`: feed-forward only, keeping `z` constant.
    Reduced,
    /// `t ≥ tf`.
    Off,
}

impl Branch {
    pub fn at(p: &FwatParams, t: f64) -> Self {
        if t >= p.tf {
            Branch::Off
        } else if t >= p.t1 {
            Branch::Reduced
        } else {
            Branch::Tracking
        }
    }
}

/// Double-integrator law with the branch chosen by time.
pub fn fwat_double_input(
    state: &SecondOrderState,
    l: &Laplacian,
    p: &FwatParams,
    t: f64,
) -> Result<Eval<DVector<f64>>> {
    p.require_started(t)?;
    double_input_with_branch(state, l, p, t, Branch::at(p, t))
}

/// Double-integrator law with an explicit branch. The simulator uses this to
/// switch the tracking correction off inside the guard window before `t1`,
/// where its gain `η₂/(t1 − t)` is singular.
pub fn double_input_with_branch(
    state: &SecondOrderState,
    l: &Laplacian,
    p: &FwatParams,
    t: f64,
    branch: Branch,
) -> Result<Eval<DVector<f64>>> {
    check_dim(&state.x, l)?;
    if state.v.len() != state.x.len() {
        return Err(Error::InvalidState(
            "position and velocity lengths differ".into(),
        ));
    }
    if branch == Branch::Off || t >= p.tf {
        return Ok(Eval::new(DVector::zeros(state.x.len()), 0));
    }
    let partials = phi1_partials(&state.x, l, p, t)?;
    let mut sat = partials.saturated;
    let mut u = -(&partials.value.dx * &state.v) - &partials.value.dt;
    if branch == Branch::Tracking {
        if t >= p.t1 {
            return Err(Error::TimeOutOfRange {
                t,
                reason: format!("tracking branch requested at or after t1 = {}", p.t1),
            });
        }
        let z = tracking_error(state, l, p, t)?;
        sat += z.saturated;
        let ez = exp_neg(&z.value);
        sat += ez.saturated;
        let k = p.eta2 / (p.t1 - t);
        u -= ez.value.map(|e| 1.0 - e) * k;
    }
    Ok(Eval::new(u, sat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_laplacian, Topology};
    use std::f64::consts::E;

    fn path2() -> Laplacian {
        build_laplacian(&Topology::path(2)).unwrap()
    }

    fn params(eta: f64, tf: f64) -> FwatParams {
        FwatParams::single(eta, 0.0, tf).unwrap()
    }

    #[test]
    fn phi1_vanishes_at_consensus() {
        let l = build_laplacian(&Topology::ring(4)).unwrap();
        let x = DVector::from_element(4, 3.7);
        let v = phi1(&x, &l, &params(2.0, 5.0), 1.0).unwrap().value;
        assert!(v.amax() < 1e-15);
    }

    #[test]
    fn phi1_path2_by_hand() {
        // tf − t = 1, η = 1: φ₁ = −L [e^{−1}, e]ᵀ = −[e^{−1} − e, e − e^{−1}]ᵀ
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let v = phi1(&x, &path2(), &params(1.0, 2.0), 1.0).unwrap().value;
        let inv_e = (-1.0f64).exp();
        assert!((v[0] + (inv_e - E)).abs() < 1e-14);
        assert!((v[1] + (E - inv_e)).abs() < 1e-14);
    }

    #[test]
    fn phi1_rejects_tf() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert!(phi1(&x, &path2(), &params(1.0, 2.0), 2.0).is_err());
    }

    #[test]
    fn phi1_grows_towards_tf() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let p = params(1.0, 2.0);
        let norms: Vec<f64> = [1.0, 1.5, 1.9, 1.99, 1.999]
            .iter()
            .map(|&t| phi1(&x, &path2(), &p, t).unwrap().value.norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn single_input_examples() {
        let l = path2();
        let p = params(1.0, 2.0);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(
            fwat_single_input(&x, &l, &p, 2.1).unwrap().value,
            DVector::zeros(2)
        );
        assert_eq!(
            fwat_single_input(&x, &l, &p, 2.0).unwrap().value,
            DVector::zeros(2)
        );
        // u = −φ₁ = [e^{−1} − e, e − e^{−1}]: the larger state moves down.
        let u = fwat_single_input(&x, &l, &p, 1.0).unwrap().value;
        let s = E - 1.0 / E;
        assert!((u[0] + s).abs() < 1e-14 && (u[1] - s).abs() < 1e-14);
        assert!((u[1] - 2.3504).abs() < 1e-4);
        let phi = phi1(&x, &l, &p, 1.0).unwrap().value;
        assert!((u + phi).amax() < 1e-15);
        let c = DVector::from_element(2, 5.0);
        assert_eq!(
            fwat_single_input(&c, &l, &p, 0.5).unwrap().value,
            DVector::zeros(2)
        );
        assert!(fwat_single_input(&x, &l, &p, -0.1).is_err());
    }

    #[test]
    fn pal_examples() {
        let l = path2();
        let p = params(1.0, 2.0);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let u = pal_input(&x, &l, &p, 1.0).unwrap().value;
        assert!((u[0] + (1.0 - 1.0 / E)).abs() < 1e-14);
        assert!((u[1] + (1.0 - E)).abs() < 1e-14);
        assert!(u.sum().abs() > 0.1);
        let c = DVector::from_element(2, -2.0);
        assert_eq!(pal_input(&c, &l, &p, 1.0).unwrap().value, DVector::zeros(2));
    }

    #[test]
    fn per_agent_trivial_cases() {
        let p = params(1.0, 2.0);
        assert_eq!(
            per_agent_input(0.3, &[0.3, 0.3], &p, 1.0).unwrap().value,
            0.0
        );
        assert_eq!(per_agent_input(0.3, &[], &p, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn saturation_counted() {
        let l = path2();
        let x = DVector::from_vec(vec![600.0, 0.0]);
        let u = fwat_single_input(&x, &l, &params(1.0, 2.0), 1.0).unwrap();
        assert_eq!(u.saturated, 2);
        assert!(u.value.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn partials_at_consensus() {
        let l = build_laplacian(&Topology::ring(4)).unwrap();
        let p = params(2.0, 4.0);
        let x = DVector::from_element(4, 0.25);
        let d = phi1_partials(&x, &l, &p, 1.0).unwrap().value;
        let want = l.matrix() * l.matrix() * (2.0 / 3.0);
        assert!((d.dx - want).amax() < 1e-14);
        assert!(d.dt.amax() < 1e-15);
    }

    #[test]
    fn partials_edgeless() {
        let l = build_laplacian(&Topology::edgeless(3)).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let d = phi1_partials(&x, &l, &params(2.0, 4.0), 1.0).unwrap().value;
        assert_eq!(d.dx.amax(), 0.0);
        assert_eq!(d.dt.amax(), 0.0);
    }

    #[test]
    fn tracking_error_cases() {
        let l = path2();
        let p = FwatParams::double(1.0, 2.0, 0.0, 0.5, 2.0).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let phi = phi1(&x, &l, &p, 1.0).unwrap().value;
        let on = SecondOrderState::new(x.clone(), -phi.clone()).unwrap();
        assert!(tracking_error(&on, &l, &p, 1.0).unwrap().value.amax() < 1e-15);
        let rest = SecondOrderState::new(x, DVector::zeros(2)).unwrap();
        assert_eq!(tracking_error(&rest, &l, &p, 1.0).unwrap().value, phi);
        let c = SecondOrderState::new(DVector::from_element(2, 1.0), DVector::zeros(2)).unwrap();
        assert!(tracking_error(&c, &l, &p, 1.0).unwrap().value.amax() < 1e-15);
    }

    #[test]
    fn double_input_branches() {
        let l = build_laplacian(&Topology::ring(4)).unwrap();
        let p = FwatParams::double(2.0, 2.0, 0.0, 3.0, 6.0).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.7, 0.3, 0.9]);
        let v = DVector::from_vec(vec![0.2, -0.1, 0.4, 0.0]);
        let s = SecondOrderState::new(x.clone(), v).unwrap();
        assert_eq!(
            fwat_double_input(&s, &l, &p, 6.0).unwrap().value,
            DVector::zeros(4)
        );
        assert_eq!(
            fwat_double_input(&s, &l, &p, 7.0).unwrap().value,
            DVector::zeros(4)
        );

        // On the manifold z = 0 the correction vanishes.
        let t = 1.0;
        let phi = phi1(&x, &l, &p, t).unwrap().value;
        let on = SecondOrderState::new(x.clone(), -phi).unwrap();
        let b1 = double_input_with_branch(&on, &l, &p, t, Branch::Tracking)
            .unwrap()
            .value;
        let b2 = double_input_with_branch(&on, &l, &p, t, Branch::Reduced)
            .unwrap()
            .value;
        assert!((b1 - b2).amax() < 1e-12);

        let rest = SecondOrderState::new(DVector::from_element(4, 0.4), DVector::zeros(4)).unwrap();
        for t in [0.0, 2.0, 3.0, 5.0, 6.5] {
            assert!(fwat_double_input(&rest, &l, &p, t).unwrap().value.amax() < 1e-14);
        }
    }

    #[test]
    fn gain_check_statuses() {
        let p = params(0.3, 1.0);
        assert_eq!(
            GainCheck::evaluate(&p, Some(2.0), false).status,
            GainStatus::Satisfied
        );
        let p = params(0.1, 1.0);
        assert_eq!(
            GainCheck::evaluate(&p, Some(2.0), false).status,
            GainStatus::Violated
        );
        assert_eq!(
            GainCheck::evaluate(&p, None, false).status,
            GainStatus::Unverified
        );
        let p = FwatParams::double(2.0, 0.5, 0.0, 1.0, 2.0).unwrap();
        assert_eq!(
            GainCheck::evaluate(&p, Some(2.0), true).status,
            GainStatus::Violated
        );
    }

    #[test]
    fn params_validation() {
        assert!(FwatParams::single(0.0, 0.0, 1.0).is_err());
        assert!(FwatParams::single(1.0, 1.0, 1.0).is_err());
        assert!(FwatParams::double(1.0, 2.0, 0.0, 2.0, 1.0).is_err());
        assert!(FwatParams::double(1.0, 2.0, 0.0, 0.5, 1.0).is_ok());
    }
}
