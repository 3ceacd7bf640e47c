//! Scenario configs, built-in scenarios, and the run / verify / sweep drivers.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "example2"
//! mode = "double"
//! seed = 2
//!
//! [graph]
//! family = "ring"
//! n = 4
//!
//! [params]
//! eta = 2.0
//! eta2 = 2.0
//! t1 = 3.0
//! tf = 6.0
//!
//! [integrator]
//! eps_guard = 1e-3
//!
//! [init]
//! x_range = [0.0, 1.0]
//! v_range = [0.0, 0.5]
//! ```

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, Certificate, CertificateKind};
use crate::error::{Error, Result};
use crate::formation::{self, FormationScheme, FormationSpec, UnicycleState};
use crate::graph::{build_laplacian, Active, Interval, Network, SwitchingSchedule, Topology};
use crate::io;
use crate::protocol::{FwatParams, GainCheck, GainStatus, SecondOrderState};
use crate::sim::{self, IntegratorConfig, Method, Trajectory};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TOOL: &str = "fwat";

/// Default consensus tolerance for the formation's total displacement error (m).
pub const FORMATION_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    SingleSwitching,
    Double,
    Formation,
    PureTracking,
    PalComparison,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// `path`, `ring`, `complete`, `edgeless`, `trio_1`, `trio_2`, `trio_3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// 1-based edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Edge-list file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl GraphConfig {
    pub fn family(name: &str, n: usize) -> Self {
        Self {
            family: Some(name.into()),
            n: Some(n),
            ..Self::default()
        }
    }

    pub fn topology(&self) -> Result<Topology> {
        let given = [
            self.family.is_some(),
            self.edges.is_some(),
            self.file.is_some(),
        ];
        if given.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::Config(
                "a graph needs exactly one of family, edges, file".into(),
            ));
        }
        if let Some(f) = &self.family {
            let need_n = || {
                self.n
                    .ok_or_else(|| Error::Config(format!("graph family `{f}` needs n")))
            };
            let trio = Topology::switching_trio();
            return match f.as_str() {
                "path" => Ok(Topology::path(need_n()?)),
                "ring" => Ok(Topology::ring(need_n()?)),
                "complete" => Ok(Topology::complete(need_n()?)),
                "edgeless" => Ok(Topology::edgeless(need_n()?)),
                "trio_1" => Ok(trio[0].clone()),
                "trio_2" => Ok(trio[1].clone()),
                "trio_3" => Ok(trio[2].clone()),
                other => Err(Error::Config(format!("unknown graph family `{other}`"))),
            };
        }
        if let Some(edges) = &self.edges {
            let n = self
                .n
                .or_else(|| edges.iter().map(|e| e[0].max(e[1])).max())
                .ok_or_else(|| Error::Config("empty edge list needs n".into()))?;
            return Topology::from_one_based(n, edges.iter().map(|e| (e[0], e[1])));
        }
        let path = self.file.as_ref().expect("checked above");
        Topology::parse_edge_list(&io::read_text(path)?, &path.display().to_string())
    }

    /// Inline form with explicit 1-based edges.
    pub fn resolved(&self) -> Result<Self> {
        let t = self.topology()?;
        Ok(Self {
            family: None,
            n: Some(t.n()),
            edges: Some(t.edges().iter().map(|&(i, j)| [i + 1, j + 1]).collect()),
            file: None,
        })
    }

    fn rebase(&mut self, base: &Path) {
        if let Some(f) = &self.file {
            self.file = Some(base.join(f));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalConfig {
    pub start: f64,
    /// 1-based index into `graphs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub holiday: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub graphs: Vec<GraphConfig>,
    /// Cycle through `graphs` every `period` seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<IntervalConfig>>,
    /// File with `dwell τ` and `t_k index|holiday` lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell: Option<f64>,
}

impl ScheduleConfig {
    pub fn build(&self, t0: f64, t_end: f64) -> Result<SwitchingSchedule> {
        let topologies = self
            .graphs
            .iter()
            .map(GraphConfig::topology)
            .collect::<Result<Vec<_>>>()?;
        let given = [
            self.period.is_some(),
            self.intervals.is_some(),
            self.intervals_file.is_some(),
        ];
        if given.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::Config(
                "a schedule needs exactly one of period, intervals, intervals_file".into(),
            ));
        }
        if let Some(p) = self.period {
            return SwitchingSchedule::periodic(topologies, p, t0, t_end);
        }
        let (dwell, intervals) = self.interval_list()?;
        SwitchingSchedule::new(topologies, intervals, dwell)
    }

    fn interval_list(&self) -> Result<(f64, Vec<Interval>)> {
        if let Some(path) = &self.intervals_file {
            let (dwell, iv) = SwitchingSchedule::parse_intervals(
                &io::read_text(path)?,
                &path.display().to_string(),
            )?;
            return Ok((self.dwell.unwrap_or(dwell), iv));
        }
        let list = self.intervals.as_ref().expect("checked by caller");
        let dwell = self
            .dwell
            .ok_or_else(|| Error::Config("inline intervals need a dwell".into()))?;
        let iv = list
            .iter()
            .map(|c| {
                let active = match (c.holiday, c.graph) {
                    (true, None) => Active::Holiday,
                    (false, Some(g)) if g >= 1 => Active::Graph(g - 1),
                    _ => {
                        return Err(Error::Config(format!(
                            "interval at {} needs either a 1-based graph index or holiday = true",
                            c.start
                        )))
                    }
                };
                Ok(Interval {
                    start: c.start,
                    active,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((dwell, iv))
    }

    pub fn resolved(&self) -> Result<Self> {
        let graphs = self
            .graphs
            .iter()
            .map(GraphConfig::resolved)
            .collect::<Result<Vec<_>>>()?;
        if self.period.is_some() {
            return Ok(Self {
                graphs,
                ..self.clone()
            });
        }
        let (dwell, iv) = self.interval_list()?;
        Ok(Self {
            graphs,
            period: None,
            intervals: Some(
                iv.iter()
                    .map(|i| match i.active {
                        Active::Graph(g) => IntervalConfig {
                            start: i.start,
                            graph: Some(g + 1),
                            holiday: false,
                        },
                        Active::Holiday => IntervalConfig {
                            start: i.start,
                            graph: None,
                            holiday: true,
                        },
                    })
                    .collect(),
            ),
            intervals_file: None,
            dwell: Some(dwell),
        })
    }

    fn rebase(&mut self, base: &Path) {
        for g in &mut self.graphs {
            g.rebase(base);
        }
        if let Some(f) = &self.intervals_file {
            self.intervals_file = Some(base.join(f));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tf: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_guard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coast: Option<f64>,
}

impl IntegratorSection {
    pub fn build(&self, seed: u64) -> IntegratorConfig {
        let d = IntegratorConfig::default();
        IntegratorConfig {
            method: self.method.unwrap_or(d.method),
            dt_base: self.dt_base.unwrap_or(d.dt_base),
            eps_guard: self.eps_guard,
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            seed,
            coast: self.coast.unwrap_or(d.coast),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_range: Option<[f64; 2]>,
    /// Pure tracking mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_range: Option<[f64; 2]>,
    /// Agent count for pure tracking with a random `z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationConfig {
    /// `[i, j, dx, dy]` rows, 1-based. Defaults to the unit square on the 4-ring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacements: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// `[x, y, theta, L]` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet_file: Option<PathBuf>,
    /// Range for seeded random positions when no fleet is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub headings: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default)]
    pub scheme: FormationScheme,
}

impl FormationConfig {
    pub fn spec(&self) -> Result<FormationSpec> {
        match (&self.displacements, &self.file) {
            (Some(_), Some(_)) => Err(Error::Config("give displacements or file, not both".into())),
            (Some(rows), None) => {
                let mut n = 0;
                let mut entries = Vec::new();
                for r in rows {
                    if r[0] < 1.0 || r[1] < 1.0 || r[0].fract() != 0.0 || r[1].fract() != 0.0 {
                        return Err(Error::Config(format!("bad robot indices in {r:?}")));
                    }
                    let (i, j) = (r[0] as usize - 1, r[1] as usize - 1);
                    n = n.max(i.max(j) + 1);
                    entries.push((i, j, [r[2], r[3]]));
                }
                FormationSpec::new(n, entries)
            }
            (None, Some(path)) => {
                FormationSpec::parse(&io::read_text(path)?, &path.display().to_string())
            }
            (None, None) => Ok(FormationSpec::square()),
        }
    }

    pub fn fleet(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<UnicycleState>> {
        let fleet = match (&self.fleet, &self.fleet_file) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give fleet or fleet_file, not both".into()))
            }
            (Some(rows), None) => rows
                .iter()
                .map(|r| UnicycleState::at_rest(r[0], r[1], r[2], r[3]))
                .collect::<Result<Vec<_>>>()?,
            (None, Some(path)) => {
                formation::parse_fleet(&io::read_text(path)?, &path.display().to_string())?
            }
            (None, None) => {
                let [lo, hi] = self.position_range.unwrap_or([0.0, 3.0]);
                check_range("position_range", lo, hi)?;
                let headings = match &self.headings {
                    Some(h) => h.clone(),
                    None if n == 4 => vec![0.0, FRAC_PI_2, FRAC_PI_3, FRAC_PI_6],
                    None => vec![0.0; n],
                };
                if headings.len() != n {
                    return Err(Error::Config(format!(
                        "{} headings for {n} robots",
                        headings.len()
                    )));
                }
                let offset = self.offset.unwrap_or(formation::DEFAULT_HAND_OFFSET);
                headings
                    .iter()
                    .map(|&th| {
                        let x = rng.gen_range(lo..=hi);
                        let y = rng.gen_range(lo..=hi);
                        UnicycleState::at_rest(x, y, th, offset)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        if fleet.len() != n {
            return Err(Error::Config(format!(
                "fleet has {} robots, formation has {n}",
                fleet.len()
            )));
        }
        Ok(fleet)
    }

    fn rebase(&mut self, base: &Path) {
        for f in [&mut self.file, &mut self.fleet_file].into_iter().flatten() {
            *f = base.join(&*f);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// File stem for the CSV and sidecar; defaults to the scenario name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
    #[serde(default)]
    pub emit_plots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Consensus / tracking tolerance for the certificates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formation: Option<FormationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn check_range(what: &str, lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!(
            "{what} must be finite with lo <= hi, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, n: usize, range: [f64; 2]) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(range[0]..=range[1])).collect()
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative file references resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_toml_str(&io::read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(g) = &mut c.graph {
            g.rebase(base);
        }
        if let Some(s) = &mut c.schedule {
            s.rebase(base);
        }
        if let Some(f) = &mut c.formation {
            f.rebase(base);
        }
        Ok(c)
    }

    /// Copy with every file reference inlined.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.graph = self.graph.as_ref().map(GraphConfig::resolved).transpose()?;
        c.schedule = self
            .schedule
            .as_ref()
            .map(ScheduleConfig::resolved)
            .transpose()?;
        if let Some(f) = &self.formation {
            let spec = f.spec()?;
            let mut f2 = f.clone();
            f2.file = None;
            f2.displacements = Some(
                spec.displacements()
                    .iter()
                    .map(|&(i, j, d)| [(i + 1) as f64, (j + 1) as f64, d[0], d[1]])
                    .collect(),
            );
            if let Some(path) = &f.fleet_file {
                let fleet =
                    formation::parse_fleet(&io::read_text(path)?, &path.display().to_string())?;
                f2.fleet_file = None;
                f2.fleet = Some(
                    fleet
                        .iter()
                        .map(|s| [s.p[0], s.p[1], s.theta, s.offset])
                        .collect(),
                );
            }
            c.formation = Some(f2);
        }
        Ok(c)
    }

    pub fn stem(&self) -> String {
        self.output
            .stem
            .clone()
            .unwrap_or_else(|| self.name.clone())
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(match self.mode {
            Mode::Formation => FORMATION_TOL,
            _ => analysis::CONSENSUS_TOL,
        })
    }

    fn is_double(&self) -> bool {
        matches!(
            self.mode,
            Mode::Double | Mode::Formation | Mode::PureTracking
        )
    }

    pub fn fwat_params(&self) -> Result<FwatParams> {
        let p = &self.params;
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::Config(format!("params.{what} is required")))
        };
        match self.mode {
            Mode::Single | Mode::SingleSwitching | Mode::PalComparison => {
                FwatParams::single(need(p.eta, "eta")?, p.t0, need(p.tf, "tf")?)
            }
            Mode::Double | Mode::Formation => FwatParams::double(
                need(p.eta, "eta")?,
                need(p.eta2, "eta2")?,
                p.t0,
                need(p.t1, "t1")?,
                need(p.tf, "tf")?,
            ),
            Mode::PureTracking => {
                let t1 = need(p.t1, "t1")?;
                let eta2 = need(p.eta2, "eta2")?;
                if !(p.t0 < t1) {
                    return Err(Error::Config(format!(
                        "need t0 < t1, got {} and {t1}",
                        p.t0
                    )));
                }
                // The tracking subsystem ends at t1; tf only closes the horizon.
                Ok(FwatParams {
                    eta: p.eta.unwrap_or(0.0),
                    eta2,
                    t0: p.t0,
                    t1,
                    tf: p.tf.unwrap_or(t1),
                })
            }
        }
    }

    pub fn network(&self, params: &FwatParams) -> Result<Option<Network>> {
        let fixed = |g: &GraphConfig| -> Result<Network> {
            let t = g.topology()?;
            Ok(Network::Fixed(build_laplacian(&t)?))
        };
        match (self.mode, &self.graph, &self.schedule) {
            (Mode::PureTracking, _, _) => Ok(None),
            (_, Some(_), Some(_)) => Err(Error::Config("give graph or schedule, not both".into())),
            (Mode::SingleSwitching, Some(_), None) => Err(Error::Config(
                "single_switching needs a [schedule] section".into(),
            )),
            (_, Some(g), None) => Ok(Some(fixed(g)?)),
            (Mode::Single, None, Some(_)) => Err(Error::Config(
                "single mode takes a [graph]; use single_switching".into(),
            )),
            (_, None, Some(s)) => Ok(Some(Network::Switching(s.build(params.t0, params.tf)?))),
            (Mode::Formation, None, None) => {
                let spec = self.formation.clone().unwrap_or_default().spec()?;
                Ok(Some(Network::Fixed(build_laplacian(&spec.topology())?)))
            }
            (_, None, None) => Err(Error::Config(
                "a [graph] or [schedule] section is required".into(),
            )),
        }
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let params = self.fwat_params()?;
        let network = self.network(&params)?;
        let cfg = self.integrator.build(self.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = network.as_ref().map(Network::n);
        let vector = |given: &Option<Vec<f64>>,
                      range: Option<[f64; 2]>,
                      name: &str,
                      n: usize,
                      rng: &mut ChaCha8Rng| {
            match (given, range) {
                (Some(_), Some(_)) => Err(Error::Config(format!(
                    "give init.{name} or init.{name}_range, not both"
                ))),
                (Some(v), None) if v.len() == n => Ok(v.clone()),
                (Some(v), None) => Err(Error::Config(format!(
                    "init.{name} has {} entries, expected {n}",
                    v.len()
                ))),
                (None, Some(r)) => {
                    check_range(&format!("init.{name}_range"), r[0], r[1])?;
                    Ok(draw(rng, n, r))
                }
                (None, None) => Err(Error::Config(format!(
                    "init.{name} or init.{name}_range is required"
                ))),
            }
        };
        let init = match self.mode {
            Mode::Single | Mode::SingleSwitching | Mode::PalComparison => {
                let n = n.expect("network present");
                Init::Single(DVector::from_vec(vector(
                    &self.init.x,
                    self.init.x_range,
                    "x",
                    n,
                    &mut rng,
                )?))
            }
            Mode::Double => {
                let n = n.expect("network present");
                let x = vector(&self.init.x, self.init.x_range, "x", n, &mut rng)?;
                let v = if self.init.v.is_none() && self.init.v_range.is_none() {
                    vec![0.0; n]
                } else {
                    vector(&self.init.v, self.init.v_range, "v", n, &mut rng)?
                };
                Init::Double(SecondOrderState::new(
                    DVector::from_vec(x),
                    DVector::from_vec(v),
                )?)
            }
            Mode::PureTracking => {
                let n = self
                    .init
                    .z
                    .as_ref()
                    .map(Vec::len)
                    .or(self.init.n)
                    .ok_or_else(|| Error::Config("pure_tracking needs init.z or init.n".into()))?;
                Init::Tracking(DVector::from_vec(vector(
                    &self.init.z,
                    self.init.z_range,
                    "z",
                    n,
                    &mut rng,
                )?))
            }
            Mode::Formation => {
                let fc = self.formation.clone().unwrap_or_default();
                let spec = fc.spec()?;
                let fleet = fc.fleet(spec.n(), &mut rng)?;
                Init::Formation {
                    fleet,
                    spec,
                    scheme: fc.scheme,
                }
            }
        };
        let gain = match self.mode {
            Mode::PureTracking => GainCheck::evaluate(&params, None, true),
            _ => {
                let l2 = network.as_ref().and_then(|n| n.lambda2().ok());
                GainCheck::evaluate(&params, l2, self.is_double())
            }
        };
        Ok(Prepared {
            config: self.clone(),
            params,
            network,
            cfg,
            init,
            gain,
        })
    }
}

/// Initial condition, resolved from the config and seed.
#[derive(Debug, Clone)]
pub enum Init {
    Single(DVector<f64>),
    Double(SecondOrderState),
    Tracking(DVector<f64>),
    Formation {
        fleet: Vec<UnicycleState>,
        spec: FormationSpec,
        scheme: FormationScheme,
    },
}

/// A config with its graph, parameters and initial state built.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub params: FwatParams,
    pub network: Option<Network>,
    pub cfg: IntegratorConfig,
    pub init: Init,
    pub gain: GainCheck,
}

/// Certificates for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResult {
    pub label: String,
    /// Must all hold for the run to pass.
    pub required: Vec<Certificate>,
    /// Reported only.
    pub informational: Vec<Certificate>,
    pub summary: BTreeMap<String, f64>,
}

impl LabelResult {
    pub fn passed(&self) -> bool {
        self.required.iter().all(|c| c.achieved)
    }

    pub fn certificate(&self, kind: CertificateKind) -> Option<&Certificate> {
        self.required
            .iter()
            .chain(&self.informational)
            .find(|c| c.kind == kind)
    }
}

impl Prepared {
    fn network(&self) -> &Network {
        self.network.as_ref().expect("mode has a network")
    }

    pub fn guard(&self) -> f64 {
        let (t0, t_end) = match self.config.mode {
            Mode::PureTracking => (self.params.t0, self.params.t1),
            _ => (self.params.t0, self.params.tf),
        };
        self.cfg.guard(t0, t_end)
    }

    /// Integrates the scenario. Labels: `fwat` (and `pal` for the comparison
    /// mode), `double`, `formation`, `tracking`.
    pub fn simulate(&self) -> Result<Vec<(String, Trajectory)>> {
        let p = &self.params;
        Ok(match &self.init {
            Init::Single(x0) => {
                let mut out = vec![(
                    "fwat".to_string(),
                    sim::integrate_single(x0, self.network(), p, &self.cfg)?,
                )];
                if self.config.mode == Mode::PalComparison {
                    out.push((
                        "pal".to_string(),
                        sim::integrate_pal(x0, self.network(), p, &self.cfg)?,
                    ));
                }
                out
            }
            Init::Double(s) => vec![(
                "double".into(),
                sim::integrate_double(s, self.network(), p, &self.cfg)?,
            )],
            Init::Tracking(z0) => vec![(
                "tracking".into(),
                sim::integrate_pure_tracking(z0, p.eta2, p.t0, p.t1, &self.cfg)?,
            )],
            Init::Formation {
                fleet,
                spec,
                scheme,
            } => vec![(
                "formation".into(),
                formation::integrate_formation(fleet, spec, self.network(), p, &self.cfg, *scheme)?,
            )],
        })
    }

    /// Certificates for a trajectory produced by [`Prepared::simulate`] (or
    /// read back from its CSV).
    pub fn certify(&self, label: &str, traj: &Trajectory) -> Result<LabelResult> {
        let tol = self.config.tolerance();
        let p = &self.params;
        let mut summary = BTreeMap::new();
        let mut required = Vec::new();
        let mut informational = Vec::new();
        let last = traj.last();
        summary.insert("t_end".into(), last.t);
        summary.insert("samples".into(), traj.samples.len() as f64);
        summary.insert("saturations".into(), traj.total_saturations() as f64);
        summary.insert("max_avg_drift".into(), traj.max_avg_drift());
        let final_dev = sim::deviation(&last.x, traj.dim)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        match (self.config.mode, label) {
            (Mode::Single | Mode::SingleSwitching | Mode::PalComparison, _) => {
                let consensus = analysis::settling_certificate(traj, tol);
                let avg = analysis::average_conservation_certificate(traj, analysis::AVERAGE_TOL);
                summary.insert("final_error".into(), final_dev);
                if label == "pal" {
                    informational.extend([consensus, avg]);
                } else {
                    required.extend([consensus, avg]);
                    let xmax = traj.first().x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let state_tol = self.cfg.abs_tol + self.cfg.rel_tol * xmax;
                    let lyap = analysis::lyapunov_monitor(traj, self.network(), p, state_tol)?;
                    summary.insert("lyapunov_uphill_steps".into(), lyap.uphill.len() as f64);
                    summary.insert(
                        "lyapunov_bound_violations".into(),
                        lyap.bound_violations.len() as f64,
                    );
                    if let Ok(excess) =
                        analysis::rate_envelope_excess(traj, self.network(), p, 1e-6)
                    {
                        summary.insert("rate_envelope_excess".into(), excess);
                    }
                }
            }
            (Mode::Double, _) => {
                let t_check = p.t1 - self.guard();
                required.push(analysis::tracking_certificate(traj, t_check, tol)?);
                required.push(analysis::settling_certificate(traj, tol));
                let iss = analysis::iss_bound_check(traj, self.network(), p)?;
                summary.insert("iss_tightness".into(), iss.tightness);
                summary.insert("iss_xi_margin".into(), iss.xi_min_margin);
                required.push(iss.certificate);
                summary.insert("final_error".into(), final_dev);
                if let Some(v) = &last.v {
                    summary.insert(
                        "final_speed".into(),
                        v.iter().fold(0.0f64, |a, b| a.max(b.abs())),
                    );
                }
            }
            (Mode::Formation, _) => {
                let k = traj
                    .extra_names
                    .iter()
                    .position(|s| s == "disp_err")
                    .ok_or_else(|| {
                        Error::InvalidState("formation trajectory lacks disp_err".into())
                    })?;
                let series: Vec<(f64, f64)> =
                    traj.samples.iter().map(|s| (s.t, s.extra[k])).collect();
                required.push(analysis::threshold_certificate(
                    CertificateKind::Consensus,
                    &series,
                    tol,
                ));
                informational.push(analysis::tracking_certificate(
                    traj,
                    p.t1 - self.guard(),
                    analysis::CONSENSUS_TOL,
                )?);
                summary.insert("final_error".into(), last.extra[k]);
                summary.insert("final_hand_spread".into(), final_dev);
            }
            (Mode::PureTracking, _) => {
                required.push(analysis::tracking_certificate(traj, last.t, tol)?);
                let z0 = &traj.first().x;
                let worst = traj
                    .samples
                    .iter()
                    .flat_map(|s| {
                        s.x.iter().zip(z0).map(move |(z, &a)| {
                            (z - analysis::tracking_closed_form(a, p.eta2, p.t0, p.t1, s.t)).abs()
                        })
                    })
                    .fold(0.0f64, f64::max);
                summary.insert("closed_form_max_error".into(), worst);
                if let Some(z) = last.diag.z_norm {
                    summary.insert("final_error".into(), z);
                }
            }
        }
        // JSON has no NaN or infinity.
        summary.retain(|_, v| v.is_finite());
        Ok(LabelResult {
            label: label.into(),
            required,
            informational,
            summary,
        })
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub gain: GainCheck,
    pub results: Vec<LabelResult>,
    pub trajectories: Vec<(String, Trajectory)>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.results.iter().all(LabelResult::passed)
    }

    pub fn result(&self, label: &str) -> Option<&LabelResult> {
        self.results.iter().find(|r| r.label == label)
    }

    pub fn trajectory(&self, label: &str) -> Option<&Trajectory> {
        self.trajectories
            .iter()
            .find(|t| t.0 == label)
            .map(|t| &t.1)
    }
}

fn gain_warnings(gain: &GainCheck) -> Vec<String> {
    match gain.status {
        GainStatus::Satisfied => vec![],
        GainStatus::Violated => vec![format!(
            "gain condition violated: eta = {}{}; convergence is not certified",
            gain.eta,
            gain.eta_threshold
                .map(|t| format!(" needs > {t}"))
                .unwrap_or_default()
        )],
        GainStatus::Unverified => vec!["gain condition unverified: lambda2 unknown".into()],
    }
}

pub fn run(config: &ScenarioConfig) -> Result<RunOutput> {
    let prepared = config.prepare()?;
    let trajectories = prepared.simulate()?;
    let results = trajectories
        .iter()
        .map(|(label, t)| prepared.certify(label, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        config: config.clone(),
        gain: prepared.gain,
        warnings: gain_warnings(&prepared.gain),
        results,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarFile {
    pub label: String,
    pub csv: String,
}

/// JSON written next to each run's CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub gain: GainCheck,
    pub files: Vec<SidecarFile>,
    pub results: Vec<LabelResult>,
    pub passed: bool,
    pub warnings: Vec<String>,
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct Written {
    pub csv: Vec<PathBuf>,
    pub sidecar: PathBuf,
    pub plot_script: Option<PathBuf>,
}

pub fn write_outputs(out: &RunOutput, dir: &Path, emit_plots: bool) -> Result<Written> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = out.config.stem();
    let mut files = Vec::new();
    let mut csv = Vec::new();
    for (k, (label, traj)) in out.trajectories.iter().enumerate() {
        let name = if k == 0 {
            format!("{stem}.csv")
        } else {
            format!("{stem}_{label}.csv")
        };
        let path = dir.join(&name);
        io::save_trajectory_csv(traj, &path)?;
        files.push(SidecarFile {
            label: label.clone(),
            csv: name,
        });
        csv.push(path);
    }
    let sidecar = Sidecar {
        tool: TOOL.into(),
        version: VERSION.into(),
        seed: out.config.seed,
        config: out.config.resolved()?,
        gain: out.gain,
        files: files.clone(),
        results: out.results.clone(),
        passed: out.passed(),
        warnings: out.warnings.clone(),
    };
    let sidecar_path = dir.join(format!("{stem}.json"));
    io::save_json(&sidecar, &sidecar_path)?;
    let plot_script = if emit_plots || out.config.output.emit_plots {
        let path = dir.join(format!("{stem}_plot.py"));
        std::fs::write(&path, plot_script(&out.config, &files)).map_err(|e| Error::io(&path, e))?;
        Some(path)
    } else {
        None
    };
    Ok(Written {
        csv,
        sidecar: sidecar_path,
        plot_script,
    })
}

fn plot_script(config: &ScenarioConfig, files: &[SidecarFile]) -> String {
    let names: Vec<String> = files.iter().map(|f| format!("{:?}", f.csv)).collect();
    let formation = config.mode == Mode::Formation;
    format!(
        r#"import csv
import os
import sys

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FILES = [{files}]
FORMATION = {formation}


def load(name):
    with open(os.path.join(HERE, name), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {{h: [] for h in header}}
    for r in body:
        for h, v in zip(header, r):
            cols[h].append(float(v) if v else float("nan"))
    return header, cols


for name in FILES:
    header, c = load(name)
    t = c["t"]
    fig, ax = plt.subplots(1, 3 if FORMATION else 2, figsize=(13 if FORMATION else 10, 4))
    for h in header:
        if h.startswith("x_"):
            ax[0].plot(t, c[h], label=h)
    ax[0].set_xlabel("t [s]")
    ax[0].set_ylabel("state")
    ax[0].legend(fontsize="small")
    err = c["disp_err"] if FORMATION else c["V"]
    ax[1].semilogy(t, [max(e, 1e-16) for e in err], label="displacement error" if FORMATION else "V")
    if "z_norm" in c and any(v == v for v in c["z_norm"]):
        ax[1].semilogy(t, [max(z, 1e-16) for z in c["z_norm"]], label="|z|")
    ax[1].set_xlabel("t [s]")
    ax[1].legend()
    if FORMATION:
        i = 1
        while "hx_%d" % i in c:
            ax[2].plot(c["hx_%d" % i], c["hy_%d" % i], label="robot %d" % i)
            ax[2].plot(c["hx_%d" % i][-1], c["hy_%d" % i][-1], "o")
            i += 1
        ax[2].set_aspect("equal")
        ax[2].legend(fontsize="small")
    fig.suptitle(name)
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, os.path.splitext(name)[0] + ".png"), dpi=120)
    if "--show" in sys.argv:
        plt.show()
"#,
        files = names.join(", "),
        formation = if formation { "True" } else { "False" },
    )
}

/// Certificates recomputed from a stored CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub label: String,
    pub result: LabelResult,
    /// The recomputed certificates equal the ones stored in the sidecar.
    pub matches_sidecar: bool,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.result.passed()
    }
}

pub fn verify(csv_path: &Path, sidecar_path: &Path) -> Result<VerifyReport> {
    let sidecar: Sidecar = io::load_json(sidecar_path)?;
    let traj = io::load_trajectory_csv(csv_path)?;
    let file_name = csv_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned());
    let label = sidecar
        .files
        .iter()
        .find(|f| Some(&f.csv) == file_name.as_ref())
        .or(sidecar.files.first())
        .map(|f| f.label.clone())
        .ok_or_else(|| Error::Config("sidecar lists no trajectory files".into()))?;
    let prepared = sidecar.config.prepare()?;
    let result = prepared.certify(&label, &traj)?;
    let matches = sidecar.results.contains(&result);
    Ok(VerifyReport {
        label,
        result,
        matches_sidecar: matches,
    })
}

/// Parameter grid for [`sweep`]. Empty axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub eta2: Vec<f64>,
    #[serde(default)]
    pub tf: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: Option<f64>,
    pub eta2: Option<f64>,
    pub tf: Option<f64>,
    pub t1: Option<f64>,
    pub seed: u64,
    pub status: String,
    pub gain: Option<GainStatus>,
    pub achieved: bool,
    pub achieved_time: Option<f64>,
    pub final_error: Option<f64>,
    pub saturations: Option<usize>,
}

impl SweepRow {
    /// Converged, with the settling time before the prescribed `tf`.
    pub fn settled_before_tf(&self) -> bool {
        self.achieved && matches!((self.achieved_time, self.tf), (Some(a), Some(tf)) if a < tf)
    }
}

/// Config for one cell. When `tf` changes, `t1` keeps its fraction of the horizon.
pub fn sweep_cell(
    base: &ScenarioConfig,
    eta: Option<f64>,
    eta2: Option<f64>,
    tf: Option<f64>,
    seed: u64,
) -> ScenarioConfig {
    let mut c = base.clone();
    c.seed = seed;
    if let Some(e) = eta {
        c.params.eta = Some(e);
    }
    if let Some(e) = eta2 {
        c.params.eta2 = Some(e);
    }
    if let (Some(new_tf), Some(old_tf)) = (tf, base.params.tf) {
        let t0 = base.params.t0;
        if let Some(t1) = base.params.t1 {
            c.params.t1 = Some(t0 + (t1 - t0) * (new_tf - t0) / (old_tf - t0));
        }
        c.params.tf = Some(new_tf);
    }
    c
}

fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

/// Runs every grid cell in parallel. Failed cells are recorded, not fatal.
pub fn sweep(base: &ScenarioConfig, grid: &SweepGrid) -> Vec<SweepRow> {
    let seeds = if grid.seeds.is_empty() {
        vec![base.seed]
    } else {
        grid.seeds.clone()
    };
    let mut cells = Vec::new();
    for eta in axis(&grid.eta) {
        for eta2 in axis(&grid.eta2) {
            for tf in axis(&grid.tf) {
                for &seed in &seeds {
                    cells.push(sweep_cell(base, eta, eta2, tf, seed));
                }
            }
        }
    }
    cells
        .par_iter()
        .map(|c| {
            let mut row = SweepRow {
                eta: c.params.eta,
                eta2: c.params.eta2,
                tf: c.params.tf,
                t1: c.params.t1,
                seed: c.seed,
                status: "ok".into(),
                gain: None,
                achieved: false,
                achieved_time: None,
                final_error: None,
                saturations: None,
            };
            match run(c) {
                Ok(out) => {
                    let r = &out.results[0];
                    let cert = r
                        .certificate(CertificateKind::Consensus)
                        .or_else(|| r.certificate(CertificateKind::Tracking));
                    row.gain = Some(out.gain.status);
                    row.achieved = cert.is_some_and(|c| c.achieved);
                    row.achieved_time = cert.and_then(|c| c.achieved_time);
                    row.final_error = r.summary.get("final_error").copied();
                    row.saturations = Some(out.trajectories[0].1.total_saturations());
                }
                Err(e) => {
                    row.status = if e.is_numerical() {
                        format!("numerical_error: {e}")
                    } else {
                        format!("error: {e}")
                    };
                }
            }
            row
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Built-in scenarios: name and one-line description.
pub const BUILTINS: &[(&str, &str)] = &[
    (
        "example1",
        "4 agents, three switching path graphs every 0.5 s, tf = 4",
    ),
    (
        "example2",
        "double integrators on the 4-ring, eta = eta2 = 2, t1 = 3, tf = 6",
    ),
    (
        "formation",
        "4 unicycles forming a unit square, t1 = 4, tf = 8",
    ),
    (
        "pal_comparison",
        "example1 setup under the corrected law and the non-diffusive baseline",
    ),
    ("path2", "two agents on one edge from [1, 0], tf = 2"),
    (
        "holiday",
        "switching graphs with an edgeless interval, tf = 4",
    ),
    (
        "pure_tracking",
        "the isolated tracking subsystem from three initial errors",
    ),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|b| b.0).collect()
}

fn guarded(eps: f64) -> IntegratorSection {
    IntegratorSection {
        eps_guard: Some(eps),
        ..IntegratorSection::default()
    }
}

fn trio_graphs() -> Vec<GraphConfig> {
    ["trio_1", "trio_2", "trio_3"]
        .iter()
        .map(|f| GraphConfig {
            family: Some((*f).into()),
            ..GraphConfig::default()
        })
        .collect()
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let base = |name: &str, mode: Mode| ScenarioConfig {
        name: name.into(),
        mode,
        seed: 1,
        tol: None,
        graph: None,
        schedule: None,
        params: ParamsConfig::default(),
        integrator: guarded(1e-3),
        init: InitConfig::default(),
        formation: None,
        output: OutputConfig::default(),
    };
    let unit = Some([0.0, 1.0]);
    Some(match name {
        "example1" | "pal_comparison" => {
            let mode = if name == "example1" {
                Mode::SingleSwitching
            } else {
                Mode::PalComparison
            };
            ScenarioConfig {
                schedule: Some(ScheduleConfig {
                    graphs: trio_graphs(),
                    period: Some(0.5),
                    ..ScheduleConfig::default()
                }),
                params: ParamsConfig {
                    eta: Some(4.0),
                    tf: Some(4.0),
                    ..ParamsConfig::default()
                },
                init: InitConfig {
                    x_range: unit,
                    ..InitConfig::default()
                },
                ..base(name, mode)
            }
        }
        "example2" => ScenarioConfig {
            graph: Some(GraphConfig::family("ring", 4)),
            params: ParamsConfig {
                eta: Some(2.0),
                eta2: Some(2.0),
                t0: 0.0,
                t1: Some(3.0),
                tf: Some(6.0),
            },
            init: InitConfig {
                x_range: unit,
                v_range: Some([0.0, 0.5]),
                ..InitConfig::default()
            },
            ..base(name, Mode::Double)
        },
        "formation" => ScenarioConfig {
            graph: Some(GraphConfig::family("ring", 4)),
            params: ParamsConfig {
                eta: Some(2.0),
                eta2: Some(2.0),
                t0: 0.0,
                t1: Some(4.0),
                tf: Some(8.0),
            },
            formation: Some(FormationConfig::default()),
            ..base(name, Mode::Formation)
        },
        "path2" => ScenarioConfig {
            graph: Some(GraphConfig::family("path", 2)),
            params: ParamsConfig {
                eta: Some(1.0),
                tf: Some(2.0),
                ..ParamsConfig::default()
            },
            init: InitConfig {
                x: Some(vec![1.0, 0.0]),
                ..InitConfig::default()
            },
            ..base(name, Mode::Single)
        },
        "holiday" => ScenarioConfig {
            schedule: Some(ScheduleConfig {
                graphs: trio_graphs(),
                intervals: Some(vec![
                    IntervalConfig {
                        start: 0.0,
                        graph: Some(1),
                        holiday: false,
                    },
                    IntervalConfig {
                        start: 1.0,
                        graph: None,
                        holiday: true,
                    },
                    IntervalConfig {
                        start: 1.5,
                        graph: Some(2),
                        holiday: false,
                    },
                    IntervalConfig {
                        start: 2.5,
                        graph: Some(3),
                        holiday: false,
                    },
                ]),
                dwell: Some(0.4),
                ..ScheduleConfig::default()
            }),
            params: ParamsConfig {
                eta: Some(4.0),
                tf: Some(4.0),
                ..ParamsConfig::default()
            },
            init: InitConfig {
                x_range: unit,
                ..InitConfig::default()
            },
            ..base(name, Mode::SingleSwitching)
        },
        "pure_tracking" => ScenarioConfig {
            params: ParamsConfig {
                eta2: Some(2.0),
                t1: Some(1.0),
                ..ParamsConfig::default()
            },
            init: InitConfig {
                z: Some(vec![1.0, -0.5, 2.0]),
                ..InitConfig::default()
            },
            ..base(name, Mode::PureTracking)
        },
        _ => return None,
    })
}
