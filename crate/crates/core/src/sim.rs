//! Event-aware integration of the closed-loop systems.
//!
//! The time axis is cut into pieces at every switch time, at the guard point
//! `t1 − ε` and at `t1` (double integrator), and the run stops at
//! `tf − ε`. Integration restarts at each cut so the discontinuous vector
//! field is never stepped across, and every cut is an output sample.
//!
//! Inside a piece that ends before a singular gain `1/(t_s − t)`, steps are
//! capped at `κ (t_s − t)` with `κ = 0.1`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Laplacian, Network};
use crate::protocol::{
    self, double_input_with_branch, fwat_single_input, pal_input, Branch, FwatParams,
    SecondOrderState,
};

/// Ratio between the step size and the distance to the next singular time.
pub const KAPPA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step for RK4, maximum step for the adaptive method.
    pub dt_base: f64,
    /// Terminal guard; `None` selects `max(1e-3, 1e-3 (tf − t0))`.
    pub eps_guard: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Seed for randomized initial conditions.
    pub seed: u64,
    /// Duration to keep integrating with `u = 0` after the guard point.
    #[serde(default)]
    pub coast: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            dt_base: 0.01,
            eps_guard: None,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            seed: 0,
            coast: 0.0,
        }
    }
}

/// Default terminal guard for a horizon `[t0, tf]`.
pub fn default_guard(t0: f64, tf: f64) -> f64 {
    (1e-3f64).max(1e-3 * (tf - t0))
}

impl IntegratorConfig {
    pub fn guard(&self, t0: f64, tf: f64) -> f64 {
        self.eps_guard.unwrap_or_else(|| default_guard(t0, tf))
    }

    pub fn validate(&self, t0: f64, tf: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.dt_base > 0.0 && self.dt_base.is_finite()) {
            return bad(format!("dt_base must be positive, got {}", self.dt_base));
        }
        let g = self.guard(t0, tf);
        if !(g > 0.0 && g < tf - t0) {
            return bad(format!("guard {g} must lie in (0, tf - t0)"));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !(self.coast >= 0.0 && self.coast.is_finite()) {
            return bad(format!("coast must be non-negative, got {}", self.coast));
        }
        Ok(())
    }
}

/// Per-sample diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `δᵀδ` with `δ` the deviation from the current mean (per axis).
    pub lyapunov: f64,
    /// Mean of all state entries.
    pub avg: f64,
    /// `‖v + φ₁‖` for double-integrator runs.
    pub z_norm: Option<f64>,
    /// Exponent saturations while evaluating the recorded input.
    pub saturations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Option<Vec<f64>>,
    pub u: Vec<f64>,
    pub diag: Diagnostics,
    /// Mode-specific columns named by [`Trajectory::extra_names`].
    #[serde(default)]
    pub extra: Vec<f64>,
}

/// Time-stamped samples of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Coordinates per agent (1 for scalar consensus, 2 for planar formation).
    pub dim: usize,
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub extra_names: Vec<String>,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            samples: Vec::new(),
            extra_names: Vec::new(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn n_agents(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len() / self.dim)
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory is non-empty")
    }

    /// Sample whose time equals `t` exactly, if any.
    pub fn sample_at(&self, t: f64) -> Option<&Sample> {
        self.samples.iter().find(|s| s.t == t)
    }

    /// Last sample with time `≤ t`.
    pub fn sample_before(&self, t: f64) -> Option<&Sample> {
        self.samples.iter().take_while(|s| s.t <= t).last()
    }

    pub fn max_avg_drift(&self) -> f64 {
        let a0 = self.first().diag.avg;
        self.samples
            .iter()
            .map(|s| (s.diag.avg - a0).abs())
            .fold(0.0, f64::max)
    }

    pub fn total_saturations(&self) -> usize {
        self.samples.iter().map(|s| s.diag.saturations).sum()
    }
}

/// Deviation of every coordinate from the mean of its axis.
pub fn deviation(x: &[f64], dim: usize) -> Vec<f64> {
    let n = x.len() / dim;
    let mut means = vec![0.0; dim];
    for (k, v) in x.iter().enumerate() {
        means[k % dim] += v;
    }
    for m in &mut means {
        *m /= n as f64;
    }
    x.iter()
        .enumerate()
        .map(|(k, v)| v - means[k % dim])
        .collect()
}

pub(crate) fn base_diagnostics(
    x: &[f64],
    dim: usize,
    z_norm: Option<f64>,
    saturations: usize,
) -> Diagnostics {
    let d = deviation(x, dim);
    Diagnostics {
        lyapunov: d.iter().map(|v| v * v).sum(),
        avg: x.iter().sum::<f64>() / x.len() as f64,
        z_norm,
        saturations,
    }
}

/// One stretch of time integrated without restarting.
#[derive(Debug, Clone)]
pub(crate) struct Piece<D> {
    pub start: f64,
    pub end: f64,
    /// The step cap `κ (singular_at − t)` applies inside this piece.
    pub singular_at: Option<f64>,
    pub data: D,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn axpy_stage(y: &[f64], h: f64, ks: &[Vec<f64>], coeffs: &[f64], out: &mut [f64]) {
    out.copy_from_slice(y);
    for (k, &a) in ks.iter().zip(coeffs) {
        if a != 0.0 {
            for (o, kv) in out.iter_mut().zip(k) {
                *o += h * a * kv;
            }
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates `y` over a piece, calling `on_step` after every accepted step
/// strictly before the piece end. The state is left at `piece.end`.
fn integrate_piece<D, F, O>(
    y: &mut Vec<f64>,
    piece: &Piece<D>,
    cfg: &IntegratorConfig,
    rhs: &mut F,
    on_step: &mut O,
) -> Result<()>
where
    F: FnMut(&D, f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(&D, f64, &[f64]) -> Result<()>,
{
    let dim = y.len();
    let mut t = piece.start;
    let end = piece.end;
    let cap = |t: f64| match piece.singular_at {
        Some(s) => cfg.dt_base.min(KAPPA * (s - t)),
        None => cfg.dt_base,
    };
    let mut h = cap(t);
    let mut ks: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];

    while t < end {
        let remaining = end - t;
        h = h.min(cap(t));
        let landing = h >= remaining * (1.0 - 1e-9);
        if landing {
            h = remaining;
        }
        if !(h > 0.0) || h < 1e-15 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t });
        }
        let mut next_h = h;
        let accepted = match cfg.method {
            Method::Rk4Fixed => {
                rk4_step(y, t, h, &piece.data, rhs, &mut ks, &mut stage, &mut y_new)?;
                if !all_finite(&y_new) {
                    return Err(Error::NonFiniteState { last_good_time: t });
                }
                true
            }
            Method::Rk45Adaptive => {
                let err = dopri_step(
                    y,
                    t,
                    h,
                    &piece.data,
                    cfg,
                    rhs,
                    &mut ks,
                    &mut stage,
                    &mut y_new,
                )?;
                if err <= 1.0 {
                    if !landing {
                        next_h = h * if err == 0.0 {
                            5.0
                        } else {
                            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                        };
                    }
                    true
                } else {
                    let factor = if err.is_finite() {
                        (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
                    } else {
                        0.1
                    };
                    h *= factor;
                    if h < 1e-15 * t.abs().max(1.0) {
                        return Err(Error::NonFiniteState { last_good_time: t });
                    }
                    false
                }
            }
        };
        if !accepted {
            continue;
        }
        std::mem::swap(y, &mut y_new);
        t = if landing { end } else { t + h };
        h = next_h;
        if t < end {
            on_step(&piece.data, t, y)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rk4_step<D, F>(
    y: &[f64],
    t: f64,
    h: f64,
    data: &D,
    rhs: &mut F,
    ks: &mut [Vec<f64>],
    stage: &mut [f64],
    y_new: &mut [f64],
) -> Result<()>
where
    F: FnMut(&D, f64, &[f64], &mut [f64]) -> Result<()>,
{
    rhs(data, t, y, &mut ks[0])?;
    axpy_stage(y, 0.5 * h, &ks[..1], &[1.0], stage);
    rhs(data, t + 0.5 * h, stage, &mut ks[1])?;
    axpy_stage(y, 0.5 * h, &ks[1..2], &[1.0], stage);
    rhs(data, t + 0.5 * h, stage, &mut ks[2])?;
    axpy_stage(y, h, &ks[2..3], &[1.0], stage);
    rhs(data, t + h, stage, &mut ks[3])?;
    axpy_stage(y, h / 6.0, &ks[..4], &[1.0, 2.0, 2.0, 1.0], y_new);
    Ok(())
}

/// One Dormand–Prince trial step; returns the scaled error norm
/// (infinite if any stage is non-finite).
#[allow(clippy::too_many_arguments)]
fn dopri_step<D, F>(
    y: &[f64],
    t: f64,
    h: f64,
    data: &D,
    cfg: &IntegratorConfig,
    rhs: &mut F,
    ks: &mut [Vec<f64>],
    stage: &mut [f64],
    y_new: &mut [f64],
) -> Result<f64>
where
    F: FnMut(&D, f64, &[f64], &mut [f64]) -> Result<()>,
{
    for s in 0..7 {
        let (done, rest) = ks.split_at_mut(s);
        axpy_stage(y, h, done, &A[s][..s], stage);
        if !all_finite(stage) {
            return Ok(f64::INFINITY);
        }
        rhs(data, t + C[s] * h, stage, &mut rest[0])?;
        if !all_finite(&rest[0]) {
            return Ok(f64::INFINITY);
        }
    }
    axpy_stage(y, h, ks, &B, y_new);
    if !all_finite(y_new) {
        return Ok(f64::INFINITY);
    }
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e: f64 = (0..7).map(|s| E[s] * ks[s][i]).sum::<f64>() * h;
        let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
        acc += (e / sc).powi(2);
    }
    let err = (acc / y.len() as f64).sqrt();
    Ok(if err.is_finite() { err } else { f64::INFINITY })
}

/// Runs consecutive pieces, recording a sample at every piece start, at every
/// accepted step and at the final end point.
pub(crate) fn run_pieces<D, F, R>(
    y0: Vec<f64>,
    pieces: &[Piece<D>],
    cfg: &IntegratorConfig,
    mut rhs: F,
    mut record: R,
) -> Result<(Vec<Sample>, Vec<f64>)>
where
    F: FnMut(&D, f64, &[f64], &mut [f64]) -> Result<()>,
    R: FnMut(&D, f64, &[f64]) -> Result<Sample>,
{
    let mut y = y0;
    let mut samples = Vec::new();
    for piece in pieces {
        samples.push(record(&piece.data, piece.start, &y)?);
        let mut on_step = |d: &D, t: f64, y: &[f64]| -> Result<()> {
            samples.push(record(d, t, y)?);
            Ok(())
        };
        integrate_piece(&mut y, piece, cfg, &mut rhs, &mut on_step)?;
    }
    let last = pieces.last().expect("at least one piece");
    samples.push(record(&last.data, last.end, &y)?);
    Ok((samples, y))
}

/// Sorted, de-duplicated cut points.
fn cut_points(mut points: Vec<f64>) -> Vec<f64> {
    points.sort_by(|a, b| a.total_cmp(b));
    points.dedup();
    points
}

fn check_x0(x0: &DVector<f64>, network: &Network) -> Result<()> {
    protocol::ensure_finite(x0)?;
    if x0.len() != network.n() {
        return Err(Error::InvalidState(format!(
            "initial state has {} entries but the graph has {} nodes",
            x0.len(),
            network.n()
        )));
    }
    Ok(())
}

/// Appends `u = 0` samples after the guard point, if `cfg.coast > 0`.
fn append_coast<F>(samples: &mut Vec<Sample>, cfg: &IntegratorConfig, mut at: F)
where
    F: FnMut(f64) -> Sample,
{
    if cfg.coast <= 0.0 {
        return;
    }
    let t_start = samples.last().expect("non-empty").t;
    let steps = (cfg.coast / cfg.dt_base).ceil().max(1.0) as usize;
    for k in 1..=steps {
        let t = if k == steps {
            t_start + cfg.coast
        } else {
            t_start + cfg.dt_base * k as f64
        };
        samples.push(at(t));
    }
}

/// Which single-integrator law closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleLaw {
    /// The average-preserving diffusive law.
    Fwat,
    /// The non-diffusive baseline, for comparison only.
    Pal,
}

/// Integrates `ẋ = u(x, t)` under the diffusive law from `t0` to `tf − ε`.
pub fn integrate_single(
    x0: &DVector<f64>,
    network: &Network,
    params: &FwatParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_single_law(x0, network, params, cfg, SingleLaw::Fwat)
}

/// Same as [`integrate_single`] with the baseline law.
pub fn integrate_pal(
    x0: &DVector<f64>,
    network: &Network,
    params: &FwatParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_single_law(x0, network, params, cfg, SingleLaw::Pal)
}

pub fn integrate_single_law(
    x0: &DVector<f64>,
    network: &Network,
    params: &FwatParams,
    cfg: &IntegratorConfig,
    law: SingleLaw,
) -> Result<Trajectory> {
    params.validate_single()?;
    cfg.validate(params.t0, params.tf)?;
    check_x0(x0, network)?;
    let t_end = params.tf - cfg.guard(params.t0, params.tf);

    let mut points = vec![params.t0, t_end];
    points.extend(network.switch_times_between(params.t0, t_end));
    let points = cut_points(points);
    let pieces = points
        .windows(2)
        .map(|w| {
            Ok(Piece {
                start: w[0],
                end: w[1],
                singular_at: Some(params.tf),
                data: network.laplacian_at(w[0])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let eval = |l: &Laplacian, t: f64, x: &DVector<f64>| match law {
        SingleLaw::Fwat => fwat_single_input(x, l, params, t),
        SingleLaw::Pal => pal_input(x, l, params, t),
    };
    let rhs = |l: &&Laplacian, t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let u = eval(l, t, &DVector::from_column_slice(y))?;
        dy.copy_from_slice(u.value.as_slice());
        Ok(())
    };
    let record = |l: &&Laplacian, t: f64, y: &[f64]| -> Result<Sample> {
        let u = eval(l, t, &DVector::from_column_slice(y))?;
        Ok(Sample {
            t,
            x: y.to_vec(),
            v: None,
            u: u.value.as_slice().to_vec(),
            diag: base_diagnostics(y, 1, None, u.saturated),
            extra: Vec::new(),
        })
    };
    let (mut samples, y_end) = run_pieces(x0.as_slice().to_vec(), &pieces, cfg, rhs, record)?;
    let n = y_end.len();
    append_coast(&mut samples, cfg, |t| Sample {
        t,
        x: y_end.clone(),
        v: None,
        u: vec![0.0; n],
        diag: base_diagnostics(&y_end, 1, None, 0),
        extra: Vec::new(),
    });
    Ok(Trajectory {
        dim: 1,
        samples,
        extra_names: Vec::new(),
    })
}

/// Cut points for the double-integrator horizon: `t0, t1 − ε, t1, tf − ε`
/// plus switch times. Returns the points and the guard `ε`.
pub(crate) fn double_cut_points(
    network: Option<&Network>,
    params: &FwatParams,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, f64)> {
    params.validate_double()?;
    cfg.validate(params.t0, params.tf)?;
    let g = cfg.guard(params.t0, params.tf);
    if params.t1 - g <= params.t0 || params.tf - g <= params.t1 {
        return Err(Error::InvalidParams(format!(
            "guard {g} leaves no room around t1 = {} in [{}, {}]",
            params.t1, params.t0, params.tf
        )));
    }
    let t_end = params.tf - g;
    let mut points = vec![params.t0, params.t1 - g, params.t1, t_end];
    if let Some(net) = network {
        points.extend(net.switch_times_between(params.t0, t_end));
    }
    Ok((cut_points(points), g))
}

/// Branch used on the piece starting at `start`. Inside `[t1 − ε, t1)` the
/// correction is off.
pub(crate) fn piece_branch(params: &FwatParams, guard: f64, start: f64) -> Branch {
    if start < params.t1 - guard {
        Branch::Tracking
    } else {
        Branch::Reduced
    }
}

pub(crate) fn piece_singularity(params: &FwatParams, branch: Branch) -> f64 {
    match branch {
        Branch::Tracking => params.t1,
        _ => params.tf,
    }
}

/// Integrates `ẋ = v, v̇ = u` under the three-branch law.
pub fn integrate_double(
    state0: &SecondOrderState,
    network: &Network,
    params: &FwatParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_double_with_stops(state0, network, params, cfg, &[])
}

/// [`integrate_double`] with extra times that must appear exactly as samples.
pub fn integrate_double_with_stops(
    state0: &SecondOrderState,
    network: &Network,
    params: &FwatParams,
    cfg: &IntegratorConfig,
    stops: &[f64],
) -> Result<Trajectory> {
    check_x0(&state0.x, network)?;
    protocol::ensure_finite(&state0.v)?;
    let (mut points, guard) = double_cut_points(Some(network), params, cfg)?;
    let (first, last) = (points[0], *points.last().expect("non-empty"));
    points.extend(stops.iter().copied().filter(|&t| t > first && t < last));
    let points = cut_points(points);
    let n = state0.x.len();
    let pieces = points
        .windows(2)
        .map(|w| {
            let branch = piece_branch(params, guard, w[0]);
            Ok(Piece {
                start: w[0],
                end: w[1],
                singular_at: Some(piece_singularity(params, branch)),
                data: (network.laplacian_at(w[0])?, branch),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let split = |y: &[f64]| SecondOrderState {
        x: DVector::from_column_slice(&y[..n]),
        v: DVector::from_column_slice(&y[n..]),
    };
    let rhs = |d: &(&Laplacian, Branch), t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let s = split(y);
        let u = double_input_with_branch(&s, d.0, params, t, d.1)?;
        dy[..n].copy_from_slice(&y[n..]);
        dy[n..].copy_from_slice(u.value.as_slice());
        Ok(())
    };
    let record = |d: &(&Laplacian, Branch), t: f64, y: &[f64]| -> Result<Sample> {
        let s = split(y);
        let u = double_input_with_branch(&s, d.0, params, t, d.1)?;
        let z = protocol::tracking_error(&s, d.0, params, t)?;
        Ok(Sample {
            t,
            x: y[..n].to_vec(),
            v: Some(y[n..].to_vec()),
            u: u.value.as_slice().to_vec(),
            diag: base_diagnostics(&y[..n], 1, Some(z.value.norm()), u.saturated + z.saturated),
            extra: Vec::new(),
        })
    };
    let mut y0 = state0.x.as_slice().to_vec();
    y0.extend_from_slice(state0.v.as_slice());
    let (mut samples, y_end) = run_pieces(y0, &pieces, cfg, rhs, record)?;
    let t_end = samples.last().expect("non-empty").t;
    append_coast(&mut samples, cfg, |t| {
        let x: Vec<f64> = (0..n)
            .map(|i| y_end[i] + y_end[n + i] * (t - t_end))
            .collect();
        Sample {
            t,
            diag: base_diagnostics(&x, 1, None, 0),
            x,
            v: Some(y_end[n..].to_vec()),
            u: vec![0.0; n],
            extra: Vec::new(),
        }
    });
    Ok(Trajectory {
        dim: 1,
        samples,
        extra_names: Vec::new(),
    })
}

/// Right-hand side of the isolated tracking subsystem
/// `ż = −η₂/(t1 − t) (1 − e^{−z})`.
pub fn tracking_rate(z: &DVector<f64>, eta2: f64, t1: f64, t: f64) -> protocol::Eval<DVector<f64>> {
    let e = protocol::exp_neg(z);
    protocol::Eval {
        value: e.value.map(|v| -(eta2 / (t1 - t)) * (1.0 - v)),
        saturated: e.saturated,
    }
}

/// Integrates the tracking subsystem on `[t0, t1 − ε]`.
pub fn integrate_pure_tracking(
    z0: &DVector<f64>,
    eta2: f64,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if !(eta2 > 1.0 && eta2.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "eta2 must exceed 1, got {eta2}"
        )));
    }
    if !(t0 < t1) {
        return Err(Error::InvalidParams(format!(
            "need t0 < t1, got {t0} and {t1}"
        )));
    }
    protocol::ensure_finite(z0)?;
    cfg.validate(t0, t1)?;
    let pieces = [Piece {
        start: t0,
        end: t1 - cfg.guard(t0, t1),
        singular_at: Some(t1),
        data: (),
    }];
    let rhs = |_: &(), t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let r = tracking_rate(&DVector::from_column_slice(y), eta2, t1, t);
        dy.copy_from_slice(r.value.as_slice());
        Ok(())
    };
    let record = |_: &(), t: f64, y: &[f64]| -> Result<Sample> {
        let r = tracking_rate(&DVector::from_column_slice(y), eta2, t1, t);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Sample {
            t,
            x: y.to_vec(),
            v: None,
            u: r.value.as_slice().to_vec(),
            diag: Diagnostics {
                lyapunov: norm * norm,
                avg: y.iter().sum::<f64>() / y.len() as f64,
                z_norm: Some(norm),
                saturations: r.saturated,
            },
            extra: Vec::new(),
        })
    };
    let (samples, _) = run_pieces(z0.as_slice().to_vec(), &pieces, cfg, rhs, record)?;
    Ok(Trajectory {
        dim: 1,
        samples,
        extra_names: Vec::new(),
    })
}
