//! Experiment configuration files.
//!
//! A config is a JSON object. Unknown keys are rejected everywhere, and every
//! error carries the path of the offending key (`experiment.epsilon`,
//! `graph.radius`, `experiment.pairs[1][0]`, ...). Defaults are filled in on
//! parsing, so serializing a parsed config gives its canonical form.

use std::path::PathBuf;

use loopperc::graph::{self, LatticeBox, MetricGraph, RegularTree, DEFAULT_VERTEX_BUDGET};
use loopperc::mc::ScanAxis;
use loopperc::noise::PivotalMode;
use loopperc::{mc, VertexSet};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_replicas() -> u64 {
    100_000
}

fn default_budget() -> usize {
    DEFAULT_VERTEX_BUDGET
}

fn default_max_returns() -> u64 {
    60
}

fn default_star_replicas() -> u64 {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub experiment: Experiment,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    /// Master seed; drawn at run time when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Output directory for `results.csv` and `summary.json`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_budget")]
    pub vertex_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Pair {
        #[serde(default = "one")]
        weight: f64,
        #[serde(default = "one")]
        killing: f64,
    },
    Path {
        vertices: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default = "one")]
        killing: f64,
    },
    Star {
        leaves: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default = "one")]
        killing: f64,
    },
    LatticeBox {
        dim: usize,
        radius: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default = "yes")]
        boundary_killing: bool,
        #[serde(default)]
        bulk_killing: f64,
    },
    RegularTree {
        degree: usize,
        depth: usize,
        #[serde(default = "one")]
        weight: f64,
        #[serde(default = "yes")]
        boundary_killing: bool,
    },
    /// A graph saved with `MetricGraph::write_json`.
    File { path: PathBuf },
}

impl GraphSpec {
    pub fn build(&self, budget: usize) -> Result<MetricGraph, CliError> {
        let core = |e| CliError::from_core("graph", e);
        match self {
            &GraphSpec::Pair { weight, killing } => graph::pair(weight, killing).map_err(core),
            &GraphSpec::Path { vertices, weight, killing } => graph::path(vertices, weight, killing).map_err(core),
            &GraphSpec::Star { leaves, weight, killing } => graph::star(leaves, weight, killing).map_err(core),
            &GraphSpec::LatticeBox { dim, radius, weight, boundary_killing, bulk_killing } => {
                LatticeBox { dim, radius, weight, boundary_killing, bulk_killing }.build_with_budget(budget).map_err(core)
            }
            &GraphSpec::RegularTree { degree, depth, weight, boundary_killing } => {
                RegularTree { degree, depth, weight, boundary_killing }.build_with_budget(budget).map_err(core)
            }
            GraphSpec::File { path } => {
                let f = std::fs::File::open(path).map_err(|e| CliError::config("graph.path", format!("{}: {e}", path.display())))?;
                let g = MetricGraph::read_json(std::io::BufReader::new(f)).map_err(|e| CliError::config("graph.path", e.to_string()))?;
                if g.vertex_count() > budget {
                    return Err(CliError::Budget(format!("graph file has {} vertices, budget is {budget}", g.vertex_count())));
                }
                Ok(g)
            }
        }
    }
}

/// A vertex given by id, by lattice coordinates, or as `"root"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VertexRef {
    Id(usize),
    Coords(Vec<i64>),
    Named(String),
}

impl Default for VertexRef {
    fn default() -> Self {
        VertexRef::Named("root".into())
    }
}

impl VertexRef {
    pub fn resolve(&self, g: &MetricGraph, key: &str) -> Result<usize, CliError> {
        match self {
            VertexRef::Id(x) if *x < g.vertex_count() => Ok(*x),
            VertexRef::Id(x) => Err(CliError::config(key, format!("vertex {x} out of range (graph has {})", g.vertex_count()))),
            VertexRef::Named(s) if s == "root" => Ok(g.root()),
            VertexRef::Named(s) => Err(CliError::config(key, format!("unknown vertex name {s:?}; use an id, coordinates or \"root\""))),
            VertexRef::Coords(c) => {
                let coords = g.coords().ok_or_else(|| CliError::config(key, "graph has no coordinates"))?;
                coords.iter().position(|v| v == c).ok_or_else(|| CliError::config(key, format!("no vertex at {c:?}")))
            }
        }
    }
}

/// Target set of a connection event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetRef {
    /// Sphere of this graph distance around the root.
    Sphere { sphere: usize },
    Set(Vec<VertexRef>),
}

impl TargetRef {
    pub fn resolve(&self, g: &MetricGraph, key: &str) -> Result<VertexSet, CliError> {
        match self {
            TargetRef::Sphere { sphere } => {
                let s = g.sphere(g.root(), *sphere).map_err(|e| CliError::from_core(key, e))?;
                if s.is_empty() {
                    return Err(CliError::config(key, format!("sphere of radius {sphere} is empty")));
                }
                Ok(s)
            }
            TargetRef::Set(v) => {
                let ids = v.iter().enumerate().map(|(i, x)| x.resolve(g, &format!("{key}[{i}]"))).collect::<Result<Vec<_>, _>>()?;
                if ids.is_empty() {
                    return Err(CliError::config(key, "must not be empty"));
                }
                Ok(VertexSet::new(ids))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    Connected { a: VertexRef, b: VertexRef },
    Reaches { from: VertexRef, target: TargetRef },
    NoiseCoversStar { x: VertexRef },
    Certain,
}

impl EventSpec {
    pub fn resolve(&self, g: &MetricGraph, key: &str) -> Result<loopperc::noise::Event, CliError> {
        use loopperc::noise::Event;
        Ok(match self {
            EventSpec::Connected { a, b } => Event::Connected { a: a.resolve(g, &format!("{key}.a"))?, b: b.resolve(g, &format!("{key}.b"))? },
            EventSpec::Reaches { from, target } => {
                Event::Reaches { from: from.resolve(g, &format!("{key}.from"))?, target: target.resolve(g, &format!("{key}.target"))? }
            }
            EventSpec::NoiseCoversStar { x } => Event::NoiseCoversStar { x: x.resolve(g, &format!("{key}.x"))? },
            EventSpec::Certain => Event::Certain,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// `P[a ↔ b]` in the intensity-1/2 clusters, with the exact value alongside.
    TwoPoint { pairs: Vec<[VertexRef; 2]> },
    /// Law of the total occupation at one vertex.
    Occupation {
        alpha: f64,
        #[serde(default)]
        vertex: VertexRef,
        #[serde(default = "yes")]
        include_trivial: bool,
    },
    Russo {
        #[serde(default)]
        x0: VertexRef,
        /// Event `{x0 ↔ sphere of this radius around x0}`.
        target_radius: usize,
        epsilon: f64,
        delta: f64,
        #[serde(default)]
        mode: PivotalMode,
    },
    Fkg { epsilon: f64, pairs: Vec<[EventSpec; 2]> },
    FnCurve {
        #[serde(default)]
        x0: VertexRef,
        radii: Vec<usize>,
        epsilons: Vec<f64>,
    },
    OdeScan {
        #[serde(default)]
        x0: VertexRef,
        n: usize,
        grid: Vec<f64>,
        delta: f64,
        /// Constant of the differential inequality; estimated from the
        /// star-cover probability at the root when absent.
        #[serde(default)]
        constant: Option<f64>,
        #[serde(default = "default_max_returns")]
        max_returns: u64,
        #[serde(default = "default_star_replicas")]
        star_replicas: u64,
    },
    ThresholdScan {
        #[serde(default)]
        x0: VertexRef,
        radii: Vec<usize>,
        sweep: ScanAxis,
    },
    Capacity { sets: Vec<Vec<VertexRef>> },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::TwoPoint { .. } => "two_point",
            Experiment::Occupation { .. } => "occupation",
            Experiment::Russo { .. } => "russo",
            Experiment::Fkg { .. } => "fkg",
            Experiment::FnCurve { .. } => "fn_curve",
            Experiment::OdeScan { .. } => "ode_scan",
            Experiment::ThresholdScan { .. } => "threshold_scan",
            Experiment::Capacity { .. } => "capacity",
        }
    }

    pub fn samples(&self) -> bool {
        !matches!(self, Experiment::Capacity { .. })
    }
}

fn unit(key: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::config(key, format!("must lie in [0, 1], got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(key, format!("must be positive and finite, got {v}")))
    }
}

fn nonempty<T>(key: &str, v: &[T]) -> Result<(), CliError> {
    if v.is_empty() {
        Err(CliError::config(key, "must not be empty"))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    /// Range checks that do not need the graph.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.experiment.samples() && self.replicas == 0 {
            return Err(CliError::config("replicas", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(CliError::config("threads", "must be at least 1"));
        }
        match &self.experiment {
            Experiment::TwoPoint { pairs } => nonempty("experiment.pairs", pairs)?,
            Experiment::Occupation { alpha, .. } => {
                positive("experiment.alpha", *alpha)?;
                if self.replicas < loopperc::loopsoup::MIN_KS_SAMPLES as u64 {
                    return Err(CliError::config("replicas", format!("occupation tests need at least {}", loopperc::loopsoup::MIN_KS_SAMPLES)));
                }
            }
            Experiment::Russo { epsilon, delta, .. } => {
                unit("experiment.epsilon", *epsilon)?;
                positive("experiment.delta", *delta)?;
                if epsilon + delta > 1.0 {
                    return Err(CliError::config("experiment.delta", format!("epsilon + delta must not exceed 1, got {}", epsilon + delta)));
                }
            }
            Experiment::Fkg { epsilon, pairs } => {
                unit("experiment.epsilon", *epsilon)?;
                nonempty("experiment.pairs", pairs)?;
            }
            Experiment::FnCurve { radii, epsilons, .. } => {
                nonempty("experiment.radii", radii)?;
                nonempty("experiment.epsilons", epsilons)?;
                for (i, &e) in epsilons.iter().enumerate() {
                    unit(&format!("experiment.epsilons[{i}]"), e)?;
                }
            }
            Experiment::OdeScan { grid, delta, constant, star_replicas, .. } => {
                nonempty("experiment.grid", grid)?;
                for (i, &e) in grid.iter().enumerate() {
                    if !(0.0..0.5).contains(&e) {
                        return Err(CliError::config(format!("experiment.grid[{i}]"), format!("must lie in [0, 1/2), got {e}")));
                    }
                }
                positive("experiment.delta", *delta)?;
                if let Some(c) = constant {
                    positive("experiment.constant", *c)?;
                }
                if *star_replicas == 0 {
                    return Err(CliError::config("experiment.star_replicas", "must be at least 1"));
                }
            }
            Experiment::ThresholdScan { radii, sweep, .. } => {
                nonempty("experiment.radii", radii)?;
                match sweep {
                    ScanAxis::Epsilon { values } => {
                        nonempty("experiment.sweep.values", values)?;
                        for (i, &e) in values.iter().enumerate() {
                            unit(&format!("experiment.sweep.values[{i}]"), e)?;
                        }
                    }
                    ScanAxis::Alpha { values, subdivision } => {
                        nonempty("experiment.sweep.values", values)?;
                        for (i, &a) in values.iter().enumerate() {
                            if !(a >= 0.0 && a.is_finite()) {
                                return Err(CliError::config(format!("experiment.sweep.values[{i}]"), format!("must be nonnegative, got {a}")));
                            }
                        }
                        if *subdivision == 0 {
                            return Err(CliError::config("experiment.sweep.subdivision", "must be at least 1"));
                        }
                    }
                }
            }
            Experiment::Capacity { sets } => {
                nonempty("experiment.sets", sets)?;
                for (i, s) in sets.iter().enumerate() {
                    nonempty(&format!("experiment.sets[{i}]"), s)?;
                }
            }
        }
        Ok(())
    }

    /// Canonical pretty-printed JSON, defaults included.
    pub fn canonical(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of everything that determines the sampled numbers.
    pub fn hash(&self, seed: u64) -> String {
        mc::config_hash(&(&self.graph, &self.experiment, self.replicas, seed, self.vertex_budget))
    }
}

pub fn parse_value(value: Value) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config { key: (path != ".").then_some(path), message: e.into_inner().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config { key: None, message: format!("malformed JSON: {e}") })?;
    parse_value(value)
}

/// Set `path` (dot separated) in a JSON object, creating objects on the way.
pub fn set_key(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::config(path, "empty key segment"));
        }
        let obj = cur.as_object_mut().ok_or_else(|| CliError::config(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Parse `KEY=VALUE`; the value is read as JSON, falling back to a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config { key: None, message: format!("expected KEY=VALUE, got {s:?}") })?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_two_point_round_trips() {
        let cfg = parse_config(r#"{"graph": {"family": "pair"}, "experiment": {"kind": "two_point", "pairs": [[0, 1]]}}"#).unwrap();
        let canon = cfg.canonical();
        assert!(canon.contains("\"killing\": 1.0"));
        let again = parse_config(&canon).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), canon);
    }

    #[test]
    fn range_error_names_the_key() {
        let text = r#"{"graph": {"family": "path", "vertices": 3},
            "experiment": {"kind": "russo", "target_radius": 2, "epsilon": 1.5, "delta": 0.01}}"#;
        match parse_config(text) {
            Err(CliError::Config { key: Some(k), .. }) => assert_eq!(k, "experiment.epsilon"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let text = r#"{"graph": {"family": "pair", "wieght": 2.0}, "experiment": {"kind": "capacity", "sets": [[0]]}}"#;
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("wieght"), "{e}");
        assert!(e.to_string().starts_with("graph"), "{e}");
    }

    #[test]
    fn vertex_refs() {
        let g = LatticeBox::new(2, 1).build().unwrap();
        let r: VertexRef = serde_json::from_str("[1, 0]").unwrap();
        let x = r.resolve(&g, "x").unwrap();
        assert_eq!(g.coords().unwrap()[x], vec![1, 0]);
        assert_eq!(VertexRef::default().resolve(&g, "x").unwrap(), g.root());
        assert!(VertexRef::Id(9).resolve(&g, "x").is_err());
    }

    #[test]
    fn assignments_set_nested_keys() {
        let mut v = serde_json::json!({"experiment": {"kind": "fkg"}});
        let (k, val) = parse_assignment("experiment.epsilon=0.25").unwrap();
        set_key(&mut v, &k, val).unwrap();
        let (k, val) = parse_assignment("graph.family=pair").unwrap();
        set_key(&mut v, &k, val).unwrap();
        assert_eq!(v["experiment"]["epsilon"], 0.25);
        assert_eq!(v["graph"]["family"], "pair");
    }
}
