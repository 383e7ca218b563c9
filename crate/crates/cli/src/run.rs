//! Dispatch a parsed config to the library and collect result rows.

use std::fs;
use std::io::Write;
use std::path::Path;

use loopperc::gff::{GffSampler, HalfWorkspace};
use loopperc::graph::MetricGraph;
use loopperc::loopsoup::{occupation_marginal_test, EliminationOrder, SoupPlan, SoupVisitor};
use loopperc::mc::{self, run_replicas, run_replicas_with, Bernoulli, RunSpec, Samples, ScanAxis};
use loopperc::noise::{fkg_battery, russo_check, RussoParams};
use loopperc::potential::DIRECT_SOLVE_LIMIT;
use loopperc::{capacity, two_point_exact, EstimateReport, GreenTable, VertexSet};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;
use crate::VERSION;

/// One line of `results.csv`. Empty cells mean "not applicable".
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub label: String,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub replicas: u64,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

pub struct Outcome {
    pub rows: Vec<Row>,
    /// Full experiment report for `summary.json`.
    pub details: Value,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    hash: String,
}

impl Ctx<'_> {
    fn spec(&self) -> RunSpec {
        RunSpec::new(format!("cli/{}", self.cfg.experiment.kind()), self.cfg.replicas, self.seed).with_threads(self.cfg.threads)
    }

    fn row(&self, label: impl Into<String>, estimate: f64) -> Row {
        Row {
            experiment: self.cfg.experiment.kind().to_string(),
            label: label.into(),
            estimate,
            replicas: self.cfg.replicas,
            seed: self.seed,
            config_hash: self.hash.clone(),
            version: VERSION.to_string(),
            ..Row::default()
        }
    }

    fn report_row(&self, label: impl Into<String>, r: &EstimateReport) -> Row {
        Row { se: Some(r.std_error), ci_lo: Some(r.ci_low), ci_hi: Some(r.ci_high), replicas: r.replicas, ..self.row(label, r.estimate) }
    }
}

fn core(e: loopperc::Error) -> CliError {
    CliError::from_core("experiment", e)
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn green(g: &MetricGraph) -> Result<GreenTable, CliError> {
    if g.vertex_count() > DIRECT_SOLVE_LIMIT {
        return Err(CliError::Budget(format!("a full Green table needs at most {DIRECT_SOLVE_LIMIT} vertices, graph has {}", g.vertex_count())));
    }
    GreenTable::compute(g, None).map_err(core)
}

/// Validate everything that needs the graph, without sampling.
pub fn plan(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let g = cfg.graph.build(cfg.vertex_budget)?;
    resolve_vertices(cfg, &g)?;
    Ok(json!({
        "version": VERSION,
        "experiment": cfg.experiment.kind(),
        "vertices": g.vertex_count(),
        "edges": g.edge_count(),
        "replicas": if cfg.experiment.samples() { cfg.replicas } else { 0 },
        "seed": cfg.seed,
        "config": cfg,
    }))
}

fn resolve_vertices(cfg: &ExperimentConfig, g: &MetricGraph) -> Result<(), CliError> {
    match &cfg.experiment {
        Experiment::TwoPoint { pairs } => {
            for (i, [a, b]) in pairs.iter().enumerate() {
                a.resolve(g, &format!("experiment.pairs[{i}][0]"))?;
                b.resolve(g, &format!("experiment.pairs[{i}][1]"))?;
            }
        }
        Experiment::Occupation { vertex, .. } => {
            vertex.resolve(g, "experiment.vertex")?;
        }
        Experiment::Russo { x0, .. } | Experiment::FnCurve { x0, .. } | Experiment::OdeScan { x0, .. } | Experiment::ThresholdScan { x0, .. } => {
            x0.resolve(g, "experiment.x0")?;
        }
        Experiment::Fkg { pairs, .. } => {
            for (i, [a, b]) in pairs.iter().enumerate() {
                a.resolve(g, &format!("experiment.pairs[{i}][0]"))?;
                b.resolve(g, &format!("experiment.pairs[{i}][1]"))?;
            }
        }
        Experiment::Capacity { sets } => {
            for (i, s) in sets.iter().enumerate() {
                for (j, x) in s.iter().enumerate() {
                    x.resolve(g, &format!("experiment.sets[{i}][{j}]"))?;
                }
            }
        }
    }
    Ok(())
}

struct Occupation {
    x: usize,
    value: f64,
}

impl SoupVisitor for Occupation {
    fn hold(&mut self, v: usize, t: f64) {
        if v == self.x {
            self.value += t;
        }
    }

    fn trivial(&mut self, v: usize, t: f64) {
        if v == self.x {
            self.value += t;
        }
    }
}

pub fn execute(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let g = cfg.graph.build(cfg.vertex_budget)?;
    resolve_vertices(cfg, &g)?;
    let ctx = Ctx { cfg, seed, hash: cfg.hash(seed) };
    let spec = ctx.spec();
    let mut rows = Vec::new();
    let details = match &cfg.experiment {
        Experiment::TwoPoint { pairs } => {
            let pairs: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .map(|(i, [a, b])| Ok((a.resolve(&g, &format!("experiment.pairs[{i}][0]"))?, b.resolve(&g, &format!("experiment.pairs[{i}][1]"))?)))
                .collect::<Result<_, CliError>>()?;
            let sampler = GffSampler::new(&g).map_err(core)?;
            let counts: Vec<Bernoulli> = run_replicas_with(&spec, || HalfWorkspace::new(&g), |ws, rng, acc: &mut Vec<Bernoulli>| {
                ws.sample(&g, &sampler, rng);
                if acc.is_empty() {
                    acc.resize(pairs.len(), Bernoulli::default());
                }
                for (c, &(a, b)) in acc.iter_mut().zip(&pairs) {
                    c.record(ws.dsu.same(a, b));
                }
            })
            .map_err(core)?;
            let table = if g.vertex_count() <= DIRECT_SOLVE_LIMIT { Some(GreenTable::compute(&g, None).map_err(core)?) } else { None };
            let mut out = Vec::new();
            for (c, &(a, b)) in counts.iter().zip(&pairs) {
                let r = EstimateReport::from_bernoulli(c, seed, ctx.hash.clone());
                rows.push(Row { alpha: Some(0.5), ..ctx.report_row(format!("connect:{a}-{b}"), &r) });
                let exact = table.as_ref().map(|t| two_point_exact(t, a, b)).transpose().map_err(core)?;
                if let Some(p) = exact {
                    rows.push(Row { alpha: Some(0.5), replicas: 0, ..ctx.row(format!("exact:{a}-{b}"), p) });
                }
                out.push(json!({ "a": a, "b": b, "report": r, "exact": exact }));
            }
            json!({ "pairs": out })
        }
        Experiment::Occupation { alpha, vertex, include_trivial } => {
            let x = vertex.resolve(&g, "experiment.vertex")?;
            let plan = SoupPlan::new(&g, &EliminationOrder::default()).map_err(core)?;
            let occ: Samples = run_replicas(&spec, |rng, acc: &mut Samples| {
                let mut o = Occupation { x, value: 0.0 };
                plan.visit(*alpha, *include_trivial, rng, &mut o).expect("validated intensity");
                acc.0.push(o.value);
            })
            .map_err(core)?;
            let (mean, se) = loopperc::stats::mean_se(&occ.0);
            let table = green(&g)?;
            let expected = alpha * table.get(x, x).map_err(core)?;
            rows.push(Row { alpha: Some(*alpha), se: Some(se), ..ctx.row(format!("mean_occupation:{x}"), mean) });
            rows.push(Row { alpha: Some(*alpha), replicas: 0, ..ctx.row(format!("expected_mean:{x}"), expected) });
            let mut ks = None;
            if *include_trivial {
                let r = occupation_marginal_test(&occ.0, x, *alpha, &table).map_err(core)?;
                rows.push(Row { alpha: Some(*alpha), ..ctx.row(format!("ks_p_value:{x}"), r.p_value) });
                ks = Some(r);
            }
            json!({ "vertex": x, "mean": mean, "std_error": se, "expected_mean": expected, "ks": ks })
        }
        Experiment::Russo { x0, target_radius, epsilon, delta, mode } => {
            let x0 = x0.resolve(&g, "experiment.x0")?;
            let target = g.sphere(x0, *target_radius).map_err(core)?;
            if target.is_empty() {
                return Err(CliError::config("experiment.target_radius", format!("no vertex at distance {target_radius}")));
            }
            let r = russo_check(&g, &RussoParams { x0, target, epsilon: *epsilon, delta: *delta, mode: *mode }, &spec).map_err(core)?;
            let base = Row { epsilon: Some(*epsilon), delta: Some(*delta), n: Some(*target_radius), ..ctx.row("", 0.0) };
            rows.push(Row { label: "lhs".into(), estimate: r.lhs, ci_lo: Some(r.ci_lhs.0), ci_hi: Some(r.ci_lhs.1), ..base.clone() });
            rows.push(Row { label: "rhs".into(), estimate: r.rhs, ci_lo: Some(r.ci_rhs.0), ci_hi: Some(r.ci_rhs.1), ..base.clone() });
            rows.push(Row { label: "difference".into(), estimate: r.difference, se: Some(r.difference_se), ..base });
            json(&r)
        }
        Experiment::Fkg { epsilon, pairs } => {
            let events = pairs
                .iter()
                .enumerate()
                .map(|(i, [a, b])| Ok((a.resolve(&g, &format!("experiment.pairs[{i}][0]"))?, b.resolve(&g, &format!("experiment.pairs[{i}][1]"))?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            let reports = fkg_battery(&g, &events, *epsilon, &spec).map_err(core)?;
            for (i, r) in reports.iter().enumerate() {
                let base = Row { epsilon: Some(*epsilon), ..ctx.row("", 0.0) };
                rows.push(Row { label: format!("joint[{i}]"), estimate: r.lhs, ci_lo: Some(r.ci_lhs.0), ci_hi: Some(r.ci_lhs.1), ..base.clone() });
                rows.push(Row { label: format!("product[{i}]"), estimate: r.rhs, ci_lo: Some(r.ci_rhs.0), ci_hi: Some(r.ci_rhs.1), ..base.clone() });
                rows.push(Row { label: format!("covariance[{i}]"), estimate: r.covariance, se: Some(r.covariance_se), ..base });
            }
            json!({ "reports": reports, "violations": reports.iter().filter(|r| r.violation).count() })
        }
        Experiment::FnCurve { x0, radii, epsilons } => {
            let x0 = x0.resolve(&g, "experiment.x0")?;
            let c = mc::fn_curve(&g, x0, radii, epsilons, &spec).map_err(core)?;
            for (i, &eps) in c.epsilons.iter().enumerate() {
                for (j, &n) in c.radii.iter().enumerate() {
                    rows.push(Row { alpha: Some(0.5), epsilon: Some(eps), n: Some(n), ..ctx.report_row("f_n", &c.report(i, j)) });
                }
            }
            json(&c)
        }
        Experiment::OdeScan { x0, n, grid, delta, constant, max_returns, star_replicas } => {
            let x0 = x0.resolve(&g, "experiment.x0")?;
            let star = match constant {
                Some(_) => None,
                None => {
                    let star_spec = RunSpec { replicas: *star_replicas, ..spec.tagged("star") };
                    Some(mc::star_cover_estimate(&g, x0, 0.5, *max_returns, &star_spec).map_err(core)?)
                }
            };
            let c = constant.unwrap_or_else(|| star.as_ref().expect("estimated above").constant);
            let scan = mc::ode_inequality_scan(&g, x0, *n, grid, *delta, c, &spec).map_err(core)?;
            rows.push(Row { alpha: Some(0.5), replicas: star.as_ref().map_or(0, |_| *star_replicas), ..ctx.row("constant", c) });
            for r in &scan.rows {
                let base = Row { alpha: Some(0.5), epsilon: Some(r.epsilon), delta: Some(*delta), n: Some(*n), ..ctx.row("", 0.0) };
                rows.push(Row { delta: None, ..ctx.report_row("f_n", &r.f).with(&base) });
                rows.push(Row { label: "slope".into(), estimate: r.slope, se: Some(r.slope_se), ci_lo: Some(r.slope_ci.0), ci_hi: Some(r.slope_ci.1), ..base.clone() });
                rows.push(Row { label: "witness".into(), estimate: r.witness, ..base });
            }
            json!({ "star": star, "scan": scan, "all_slopes_positive": scan.all_slopes_positive(), "bound_holds": scan.bound_holds() })
        }
        Experiment::ThresholdScan { x0, radii, sweep } => {
            let x0 = x0.resolve(&g, "experiment.x0")?;
            let s = mc::threshold_scan(&g, x0, radii, sweep, &spec).map_err(core)?;
            for c in &s.cells {
                let (alpha, epsilon, m) = match sweep {
                    ScanAxis::Epsilon { .. } => (Some(0.5), Some(c.parameter), None),
                    ScanAxis::Alpha { subdivision, .. } => (Some(c.parameter), None, Some(*subdivision)),
                };
                rows.push(Row { alpha, epsilon, m, n: Some(c.n), ..ctx.report_row("f_n", &c.report) });
                if let Some(r) = &c.coarser {
                    rows.push(Row { alpha, epsilon, m: m.map(|m| m / 2), n: Some(c.n), ..ctx.report_row("f_n_coarse", r) });
                }
            }
            json(&s)
        }
        Experiment::Capacity { sets } => {
            let table = green(&g)?;
            let mut out = Vec::new();
            for (i, s) in sets.iter().enumerate() {
                let ids = s.iter().enumerate().map(|(j, x)| x.resolve(&g, &format!("experiment.sets[{i}][{j}]"))).collect::<Result<Vec<_>, _>>()?;
                let r = capacity(&table, &VertexSet::new(ids)).map_err(core)?;
                rows.push(Row { replicas: 0, ..ctx.row(format!("capacity[{i}]"), r.capacity) });
                out.push(r);
            }
            json!({ "sets": out })
        }
    };
    if let Some(l) = &cfg.label {
        for r in &mut rows {
            r.label = format!("{l}/{}", r.label);
        }
    }
    Ok(Outcome { rows, details })
}

impl Row {
    /// Take the parameter columns of `base`, keep everything else.
    fn with(self, base: &Row) -> Row {
        Row { alpha: base.alpha, epsilon: base.epsilon, delta: base.delta, n: base.n, m: base.m, ..self }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'a str,
    experiment: &'a str,
    label: Option<&'a str>,
    config_hash: &'a str,
    seed: u64,
    seed_drawn: bool,
    config: &'a ExperimentConfig,
    rows: &'a [Row],
    results: &'a Value,
}

/// Write `results.csv` and `summary.json` into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, seed: u64, seed_drawn: bool, outcome: &Outcome) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    for r in &outcome.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let hash = cfg.hash(seed);
    let resolved = ExperimentConfig { seed: Some(seed), ..cfg.clone() };
    let summary = Summary {
        version: VERSION,
        experiment: cfg.experiment.kind(),
        label: cfg.label.as_deref(),
        config_hash: &hash,
        seed,
        seed_drawn,
        config: &resolved,
        rows: &outcome.rows,
        results: &outcome.details,
    };
    let mut f = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| CliError::Io(e.to_string()))?;
    f.write_all(b"\n")?;
    Ok(())
}
