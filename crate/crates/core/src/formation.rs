//! Planar formation control of unicycle robots through their hand positions.
//!
//! A robot at `p` with heading `θ` has hand `h = p + L [cos θ, sin θ]`.
//! Feedback linearization turns the hand into a double integrator `ḧ = u`,
//! and the double-integrator law runs on the error coordinates `h − h*` with
//! the Laplacian lifted to the plane (`L ⊗ I₂`, coordinates interleaved as
//! `[x₁, y₁, x₂, y₂, …]`).

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Laplacian, Network, Topology};
use crate::protocol::{self, Branch, Eval, FwatParams, SecondOrderState, EXP_CAP};
use crate::sim::{self, IntegratorConfig, Piece, Sample, Trajectory};

/// Hand offset used when none is given.
pub const DEFAULT_HAND_OFFSET: f64 = 0.2;

const CONSISTENCY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleState {
    pub p: [f64; 2],
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    /// Hand offset `L_i`.
    pub offset: f64,
}

impl UnicycleState {
    pub fn new(p: [f64; 2], theta: f64, v: f64, omega: f64, offset: f64) -> Result<Self> {
        let s = Self {
            p,
            theta,
            v,
            omega,
            offset,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn at_rest(x: f64, y: f64, theta: f64, offset: f64) -> Result<Self> {
        Self::new([x, y], theta, 0.0, 0.0, offset)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.offset > 0.0) || !self.offset.is_finite() {
            return Err(Error::InvalidState(format!(
                "hand offset must be positive, got {}",
                self.offset
            )));
        }
        let all = [self.p[0], self.p[1], self.theta, self.v, self.omega];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("unicycle state is not finite".into()));
        }
        Ok(())
    }
}

pub fn hand_position(s: &UnicycleState) -> [f64; 2] {
    let (sin, cos) = s.theta.sin_cos();
    [s.p[0] + s.offset * cos, s.p[1] + s.offset * sin]
}

/// `ḣ = [[cos θ, −L sin θ], [sin θ, L cos θ]] [v, ω]ᵀ`
pub fn hand_velocity(s: &UnicycleState) -> [f64; 2] {
    let (sin, cos) = s.theta.sin_cos();
    [
        cos * s.v - s.offset * sin * s.omega,
        sin * s.v + s.offset * cos * s.omega,
    ]
}

/// Velocity-dependent part of `ḧ`.
pub fn coriolis_term(s: &UnicycleState) -> [f64; 2] {
    let (sin, cos) = s.theta.sin_cos();
    let (v, w, l) = (s.v, s.omega, s.offset);
    [
        -sin * v * w - l * cos * w * w,
        cos * v * w - l * sin * w * w,
    ]
}

/// `ḧ` produced by the accelerations `(v̇, ω̇)`.
pub fn hand_acceleration(s: &UnicycleState, v_dot: f64, omega_dot: f64) -> [f64; 2] {
    let (sin, cos) = s.theta.sin_cos();
    let g = coriolis_term(s);
    [
        cos * v_dot - s.offset * sin * omega_dot + g[0],
        sin * v_dot + s.offset * cos * omega_dot + g[1],
    ]
}

/// `(v̇, ω̇)` that realise `ḧ = u_hand`.
pub fn feedback_linearize(u_hand: [f64; 2], s: &UnicycleState) -> Result<(f64, f64)> {
    if !(s.offset > 0.0) {
        return Err(Error::InvalidState(format!(
            "hand offset must be positive, got {}",
            s.offset
        )));
    }
    let (sin, cos) = s.theta.sin_cos();
    let g = coriolis_term(s);
    let (a, b) = (u_hand[0] - g[0], u_hand[1] - g[1]);
    Ok((cos * a + sin * b, (-sin * a + cos * b) / s.offset))
}

/// Robot speed and turn rate that produce the hand velocity `hdot` at
/// heading `theta`.
pub fn twist_for_hand_velocity(hdot: [f64; 2], theta: f64, offset: f64) -> (f64, f64) {
    let (sin, cos) = theta.sin_cos();
    (
        cos * hdot[0] + sin * hdot[1],
        (-sin * hdot[0] + cos * hdot[1]) / offset,
    )
}

/// Desired relative hand displacements `h*_ij = h*_j − h*_i`, one per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSpec {
    n: usize,
    /// 0-based `(i, j, h*_j − h*_i)` with `i < j`, sorted.
    displacements: Vec<(usize, usize, [f64; 2])>,
    targets: Vec<[f64; 2]>,
}

impl FormationSpec {
    /// Builds a spec from 0-based `(i, j, h*_j − h*_i)` triples. Either
    /// orientation is accepted; the edge graph must be connected and the
    /// displacements must close around every cycle.
    pub fn new(
        n: usize,
        displacements: impl IntoIterator<Item = (usize, usize, [f64; 2])>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidFormation(format!(
                "need at least two robots, got {n}"
            )));
        }
        let mut map: BTreeMap<(usize, usize), [f64; 2]> = BTreeMap::new();
        for (i, j, d) in displacements {
            if i >= n || j >= n {
                return Err(Error::InvalidFormation(format!(
                    "edge ({}, {}) out of range for {n} robots",
                    i + 1,
                    j + 1
                )));
            }
            if i == j {
                return Err(Error::InvalidFormation(format!(
                    "self-loop at robot {}",
                    i + 1
                )));
            }
            if !d.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidFormation(format!(
                    "non-finite displacement on ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
            let (key, d) = if i < j {
                ((i, j), d)
            } else {
                ((j, i), [-d[0], -d[1]])
            };
            if let Some(prev) = map.insert(key, d) {
                if prev != d {
                    return Err(Error::InvalidFormation(format!(
                        "conflicting displacements for ({}, {})",
                        key.0 + 1,
                        key.1 + 1
                    )));
                }
            }
        }
        let displacements: Vec<_> = map.into_iter().map(|((i, j), d)| (i, j, d)).collect();
        let targets = Self::solve_targets(n, &displacements)?;
        Ok(Self {
            n,
            displacements,
            targets,
        })
    }

    fn solve_targets(
        n: usize,
        displacements: &[(usize, usize, [f64; 2])],
    ) -> Result<Vec<[f64; 2]>> {
        let mut adj: Vec<Vec<(usize, [f64; 2])>> = vec![Vec::new(); n];
        for &(i, j, d) in displacements {
            adj[i].push((j, d));
            adj[j].push((i, [-d[0], -d[1]]));
        }
        let mut targets: Vec<Option<[f64; 2]>> = vec![None; n];
        targets[0] = Some([0.0, 0.0]);
        let mut queue = VecDeque::from([0]);
        while let Some(i) = queue.pop_front() {
            let hi = targets[i].expect("visited");
            for &(j, d) in &adj[i] {
                if targets[j].is_none() {
                    targets[j] = Some([hi[0] + d[0], hi[1] + d[1]]);
                    queue.push_back(j);
                }
            }
        }
        let targets: Vec<[f64; 2]> = targets
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                t.ok_or_else(|| {
                    Error::InvalidFormation(format!("robot {} is not linked to the others", i + 1))
                })
            })
            .collect::<Result<_>>()?;
        for &(i, j, d) in displacements {
            for a in 0..2 {
                let got = targets[j][a] - targets[i][a];
                if (got - d[a]).abs() > CONSISTENCY_TOL * (1.0 + d[a].abs()) {
                    return Err(Error::InvalidFormation(format!(
                        "displacements do not close around a cycle through ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(targets)
    }

    /// Unit square on the 4-ring: `1:(0,1) 2:(1,1) 3:(1,0) 4:(0,0)` up to translation.
    pub fn square() -> Self {
        Self::new(
            4,
            [
                (0, 1, [1.0, 0.0]),
                (3, 2, [1.0, 0.0]),
                (3, 0, [0.0, 1.0]),
                (2, 1, [0.0, 1.0]),
            ],
        )
        .expect("square spec is consistent")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn displacements(&self) -> &[(usize, usize, [f64; 2])] {
        &self.displacements
    }

    /// Absolute targets, anchored with robot 1 at the origin.
    pub fn targets(&self) -> &[[f64; 2]] {
        &self.targets
    }

    /// Interleaved `[x₁*, y₁*, …]`.
    pub fn stacked_targets(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.n, self.targets.iter().flatten().copied())
    }

    pub fn displacement(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        let (a, b, flip) = if i < j { (i, j, false) } else { (j, i, true) };
        self.displacements
            .iter()
            .find(|e| e.0 == a && e.1 == b)
            .map(|e| if flip { [-e.2[0], -e.2[1]] } else { e.2 })
    }

    /// The graph of the listed displacements.
    pub fn topology(&self) -> Topology {
        Topology::new(self.n, self.displacements.iter().map(|e| (e.0, e.1)))
            .expect("validated edges")
    }

    /// Every edge of `topology` must carry a displacement.
    pub fn check_against(&self, topology: &Topology) -> Result<()> {
        if topology.n() != self.n {
            return Err(Error::InvalidFormation(format!(
                "formation has {} robots but the graph has {} nodes",
                self.n,
                topology.n()
            )));
        }
        for &(i, j) in topology.edges() {
            if self.displacement(i, j).is_none() {
                return Err(Error::InvalidFormation(format!(
                    "no displacement for edge ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// `Σ_{(i,j)} ‖h_j − h_i − h*_ij‖` over the listed displacements.
    pub fn displacement_error(&self, hands: &[[f64; 2]]) -> f64 {
        self.displacements
            .iter()
            .map(|&(i, j, d)| {
                let ex = hands[j][0] - hands[i][0] - d[0];
                let ey = hands[j][1] - hands[i][1] - d[1];
                ex.hypot(ey)
            })
            .sum()
    }

    /// Parses `i j dx dy` lines (1-based). An optional `n <count>` line fixes
    /// the robot count; otherwise it is the largest index. `#` starts a comment.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut n: Option<usize> = None;
        let mut entries = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "n" {
                let v = fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| perr(k + 1, "expected `n <count>`".into()))?;
                n = Some(v);
                continue;
            }
            if fields.len() != 4 {
                return Err(perr(
                    k + 1,
                    format!("expected `i j dx dy`, got {} fields", fields.len()),
                ));
            }
            let idx = |s: &str| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(perr(k + 1, format!("bad robot index `{s}`"))),
                }
            };
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| perr(k + 1, format!("bad number `{s}`")))
            };
            entries.push((
                idx(fields[0])?,
                idx(fields[1])?,
                [num(fields[2])?, num(fields[3])?],
            ));
        }
        let n = n.unwrap_or_else(|| entries.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0));
        Self::new(n, entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for &(i, j, d) in &self.displacements {
            s.push_str(&format!("{} {} {} {}\n", i + 1, j + 1, d[0], d[1]));
        }
        s
    }
}

/// Parses a fleet file with one `x y theta [L]` line per robot. Robots start
/// at rest; a missing offset defaults to [`DEFAULT_HAND_OFFSET`].
pub fn parse_fleet(text: &str, source_name: &str) -> Result<Vec<UnicycleState>> {
    let mut fleet = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: k + 1,
            message,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| perr(format!("bad number `{s}`")))
            })
            .collect::<Result<_>>()?;
        if !(3..=4).contains(&vals.len()) {
            return Err(perr(format!(
                "expected `x y theta [L]`, got {} fields",
                vals.len()
            )));
        }
        let offset = vals.get(3).copied().unwrap_or(DEFAULT_HAND_OFFSET);
        fleet.push(
            UnicycleState::at_rest(vals[0], vals[1], vals[2], offset)
                .map_err(|e| perr(e.to_string()))?,
        );
    }
    Ok(fleet)
}

pub fn fleet_to_text(fleet: &[UnicycleState]) -> String {
    fleet
        .iter()
        .map(|s| format!("{} {} {} {}\n", s.p[0], s.p[1], s.theta, s.offset))
        .collect()
}

/// Stacked hand error `h − h*` and hand velocity `ḣ`.
pub fn hand_state(fleet: &[UnicycleState], spec: &FormationSpec) -> Result<SecondOrderState> {
    if fleet.len() != spec.n() {
        return Err(Error::InvalidFormation(format!(
            "fleet has {} robots but the formation has {}",
            fleet.len(),
            spec.n()
        )));
    }
    let mut e = Vec::with_capacity(2 * fleet.len());
    let mut hd = Vec::with_capacity(2 * fleet.len());
    for (s, target) in fleet.iter().zip(spec.targets()) {
        s.validate()?;
        let h = hand_position(s);
        e.extend([h[0] - target[0], h[1] - target[1]]);
        hd.extend(hand_velocity(s));
    }
    SecondOrderState::new(DVector::from_vec(e), DVector::from_vec(hd))
}

/// Hand accelerations `u` (stacked, interleaved) from the double-integrator
/// law on `h − h*` with the lifted Laplacian `lbar = L ⊗ I₂`.
pub fn formation_input_with_branch(
    fleet: &[UnicycleState],
    spec: &FormationSpec,
    lbar: &Laplacian,
    params: &FwatParams,
    t: f64,
    branch: Branch,
) -> Result<Eval<DVector<f64>>> {
    let state = hand_state(fleet, spec)?;
    protocol::double_input_with_branch(&state, lbar, params, t, branch)
}

/// [`formation_input_with_branch`] with the branch chosen by time.
pub fn formation_input(
    fleet: &[UnicycleState],
    spec: &FormationSpec,
    l: &Laplacian,
    params: &FwatParams,
    t: f64,
) -> Result<Eval<DVector<f64>>> {
    if t < params.t0 {
        return Err(Error::TimeOutOfRange {
            t,
            reason: format!("before t0 = {}", params.t0),
        });
    }
    formation_input_with_branch(
        fleet,
        spec,
        &l.kron_identity(2),
        params,
        t,
        Branch::at(params, t),
    )
}

/// Per-robot `(v̇, ω̇)` for stacked hand accelerations.
pub fn robot_commands(fleet: &[UnicycleState], u_hand: &DVector<f64>) -> Result<Vec<(f64, f64)>> {
    fleet
        .iter()
        .enumerate()
        .map(|(i, s)| feedback_linearize([u_hand[2 * i], u_hand[2 * i + 1]], s))
        .collect()
}

/// How the closed loop is advanced in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationScheme {
    /// Integrates `(p, θ, v, ω)` per robot with `(v̇, ω̇)` from feedback
    /// linearization. Large initial `|z|` makes this stiff.
    Unicycle,
    /// Integrates `(h − h*, θ)` with `ḣ = z − φ₁` and `z(t)` taken from the
    /// exact solution of its decoupled dynamics; `p`, `v`, `ω` are recovered
    /// from the hand state. Same closed loop, without the stiff transient.
    #[default]
    ClosedFormTracking,
}

/// Exact `z(t)` under `ż = −η₂/(t1 − t)(1 − e^{−z})`, written as
/// `e^{z} = e^{z0} r + (1 − r)` with `r = ((t1 − t)/(t1 − t0))^{η₂}` so that
/// neither large positive nor large negative `z0` loses precision.
fn tracking_solution(z0: f64, r: f64, one_minus_r: f64) -> f64 {
    let z0 = z0.clamp(-EXP_CAP, EXP_CAP);
    if z0 >= 0.0 {
        z0 + r.ln() + (one_minus_r * (-z0).exp() / r).ln_1p()
    } else {
        (z0.exp() * r + one_minus_r).ln()
    }
}

fn decay_ratio(eta2: f64, t0: f64, t1: f64, t: f64) -> (f64, f64) {
    let lr = eta2 * ((t1 - t) / (t1 - t0)).ln();
    (lr.exp(), -lr.exp_m1())
}

fn pose_names(n: usize) -> Vec<String> {
    let mut names = Vec::new();
    for i in 1..=n {
        for f in [
            "px", "py", "theta", "v", "omega", "hx", "hy", "vdot", "omegadot",
        ] {
            names.push(format!("{f}_{i}"));
        }
    }
    names.push("disp_err".into());
    names
}

/// Integrates the robots from `fleet0` to `tf − ε`. Sample columns:
/// `x` = `h − h*`, `v` = `ḣ`, `u` = commanded `ḧ`; extras carry poses, twists,
/// hands, `(v̇, ω̇)` and the total displacement error.
pub fn integrate_formation(
    fleet0: &[UnicycleState],
    spec: &FormationSpec,
    network: &Network,
    params: &FwatParams,
    cfg: &IntegratorConfig,
    scheme: FormationScheme,
) -> Result<Trajectory> {
    let n = spec.n();
    if network.n() != n {
        return Err(Error::InvalidFormation(format!(
            "formation has {n} robots but the graph has {} nodes",
            network.n()
        )));
    }
    match network {
        Network::Fixed(_) => {}
        Network::Switching(s) => {
            for topo in s.topologies() {
                spec.check_against(topo)?;
            }
        }
    }
    let state0 = hand_state(fleet0, spec)?;
    let (points, guard) = sim::double_cut_points(Some(network), params, cfg)?;
    let pieces = points
        .windows(2)
        .map(|w| {
            let branch = sim::piece_branch(params, guard, w[0]);
            Ok(Piece {
                start: w[0],
                end: w[1],
                singular_at: Some(sim::piece_singularity(params, branch)),
                data: (network.laplacian_at(w[0])?.kron_identity(2), branch),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Network::Fixed(l) = network {
        let topo = Topology::new(
            n,
            (0..n).flat_map(|i| {
                (i + 1..n)
                    .filter(move |&j| l.matrix()[(i, j)] != 0.0)
                    .map(move |j| (i, j))
            }),
        )?;
        spec.check_against(&topo)?;
    }

    let targets = spec.targets().to_vec();
    let offsets: Vec<f64> = fleet0.iter().map(|s| s.offset).collect();
    let names = pose_names(n);

    let record_fleet = |fleet: &[UnicycleState],
                        lbar: &Laplacian,
                        branch: Option<Branch>,
                        t: f64|
     -> Result<Sample> {
        let hs = hand_state(fleet, spec)?;
        // Coasting samples (no branch) carry no input and no tracking error.
        let (u, z) = if let Some(branch) = branch {
            let u = protocol::double_input_with_branch(&hs, lbar, params, t, branch)?;
            let z = protocol::tracking_error(&hs, lbar, params, t)?;
            (u, Some(z))
        } else {
            (Eval::new(DVector::zeros(2 * n), 0), None)
        };
        let cmds = robot_commands(fleet, &u.value)?;
        let mut extra = Vec::with_capacity(9 * n + 1);
        let mut hands = Vec::with_capacity(n);
        for (s, c) in fleet.iter().zip(&cmds) {
            let h = hand_position(s);
            hands.push(h);
            extra.extend([s.p[0], s.p[1], s.theta, s.v, s.omega, h[0], h[1], c.0, c.1]);
        }
        extra.push(spec.displacement_error(&hands));
        Ok(Sample {
            t,
            x: hs.x.as_slice().to_vec(),
            v: Some(hs.v.as_slice().to_vec()),
            u: u.value.as_slice().to_vec(),
            diag: sim::base_diagnostics(
                hs.x.as_slice(),
                2,
                z.as_ref().map(|z| z.value.norm()),
                u.saturated + z.as_ref().map_or(0, |z| z.saturated),
            ),
            extra,
        })
    };

    let (samples, fleet_end) = match scheme {
        FormationScheme::Unicycle => {
            let unpack = |y: &[f64]| -> Vec<UnicycleState> {
                (0..n)
                    .map(|i| UnicycleState {
                        p: [y[5 * i], y[5 * i + 1]],
                        theta: y[5 * i + 2],
                        v: y[5 * i + 3],
                        omega: y[5 * i + 4],
                        offset: offsets[i],
                    })
                    .collect()
            };
            let rhs = |d: &(Laplacian, Branch), t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
                let fleet = unpack(y);
                let u = formation_input_with_branch(&fleet, spec, &d.0, params, t, d.1)?;
                for (i, s) in fleet.iter().enumerate() {
                    let (sin, cos) = s.theta.sin_cos();
                    let (vd, wd) = feedback_linearize([u.value[2 * i], u.value[2 * i + 1]], s)?;
                    dy[5 * i..5 * i + 5].copy_from_slice(&[s.v * cos, s.v * sin, s.omega, vd, wd]);
                }
                Ok(())
            };
            let record = |d: &(Laplacian, Branch), t: f64, y: &[f64]| {
                record_fleet(&unpack(y), &d.0, Some(d.1), t)
            };
            let y0: Vec<f64> = fleet0
                .iter()
                .flat_map(|s| [s.p[0], s.p[1], s.theta, s.v, s.omega])
                .collect();
            let (samples, y_end) = sim::run_pieces(y0, &pieces, cfg, rhs, record)?;
            (samples, unpack(&y_end))
        }
        FormationScheme::ClosedFormTracking => {
            let z0 = protocol::tracking_error(&state0, &pieces[0].data.0, params, params.t0)?.value;
            let t_freeze = params.t1 - guard;
            let z_at = |t: f64| -> DVector<f64> {
                let (r, omr) = decay_ratio(params.eta2, params.t0, params.t1, t.min(t_freeze));
                z0.map(|z| tracking_solution(z, r, omr))
            };
            // y = [e (2n), θ (n)]
            let unpack = |y: &[f64], lbar: &Laplacian, t: f64| -> Result<Vec<UnicycleState>> {
                let e = DVector::from_column_slice(&y[..2 * n]);
                let hdot = z_at(t) - protocol::phi1(&e, lbar, params, t)?.value;
                Ok((0..n)
                    .map(|i| {
                        let theta = y[2 * n + i];
                        let (sin, cos) = theta.sin_cos();
                        let h = [e[2 * i] + targets[i][0], e[2 * i + 1] + targets[i][1]];
                        let (v, omega) = twist_for_hand_velocity(
                            [hdot[2 * i], hdot[2 * i + 1]],
                            theta,
                            offsets[i],
                        );
                        UnicycleState {
                            p: [h[0] - offsets[i] * cos, h[1] - offsets[i] * sin],
                            theta,
                            v,
                            omega,
                            offset: offsets[i],
                        }
                    })
                    .collect())
            };
            let rhs = |d: &(Laplacian, Branch), t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
                let e = DVector::from_column_slice(&y[..2 * n]);
                let hdot = z_at(t) - protocol::phi1(&e, &d.0, params, t)?.value;
                dy[..2 * n].copy_from_slice(hdot.as_slice());
                for i in 0..n {
                    let (_, omega) = twist_for_hand_velocity(
                        [hdot[2 * i], hdot[2 * i + 1]],
                        y[2 * n + i],
                        offsets[i],
                    );
                    dy[2 * n + i] = omega;
                }
                Ok(())
            };
            let record = |d: &(Laplacian, Branch), t: f64, y: &[f64]| {
                record_fleet(&unpack(y, &d.0, t)?, &d.0, Some(d.1), t)
            };
            let mut y0 = state0.x.as_slice().to_vec();
            y0.extend(fleet0.iter().map(|s| s.theta));
            let (samples, y_end) = sim::run_pieces(y0, &pieces, cfg, rhs, record)?;
            let last = pieces.last().expect("non-empty");
            (samples, unpack(&y_end, &last.data.0, last.end)?)
        }
    };

    let mut samples = samples;
    if cfg.coast > 0.0 {
        let t_end = samples.last().expect("non-empty").t;
        let steps = (cfg.coast / cfg.dt_base).ceil().max(1.0) as usize;
        let lbar = pieces.last().expect("non-empty").data.0.clone();
        for k in 1..=steps {
            let t = if k == steps {
                t_end + cfg.coast
            } else {
                t_end + cfg.dt_base * k as f64
            };
            let fleet: Vec<UnicycleState> = fleet_end
                .iter()
                .map(|s| coast_unicycle(s, t - t_end))
                .collect();
            samples.push(record_fleet(&fleet, &lbar, None, t)?);
        }
    }
    Ok(Trajectory {
        dim: 2,
        samples,
        extra_names: names,
    })
}

/// Unicycle moving with constant `v` and `ω` for `tau` seconds.
pub fn coast_unicycle(s: &UnicycleState, tau: f64) -> UnicycleState {
    let theta = s.theta + s.omega * tau;
    let p = if s.omega.abs() < 1e-12 {
        let (sin, cos) = s.theta.sin_cos();
        [s.p[0] + s.v * cos * tau, s.p[1] + s.v * sin * tau]
    } else {
        let r = s.v / s.omega;
        [
            s.p[0] + r * (theta.sin() - s.theta.sin()),
            s.p[1] - r * (theta.cos() - s.theta.cos()),
        ]
    };
    UnicycleState { p, theta, ..*s }
}

/// Total displacement error recorded at the last sample.
pub fn final_displacement_error(traj: &Trajectory) -> Option<f64> {
    traj.extra_names
        .iter()
        .position(|s| s == "disp_err")
        .map(|k| traj.last().extra[k])
}
