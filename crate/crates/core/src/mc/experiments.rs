//! Experiment drivers built on the replica engine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gff::{GffSampler, HalfWorkspace};
use crate::graph::{LatticeBox, MetricGraph, VertexSet};
use crate::loopsoup::{EliminationOrder, SoupPlan, StarCover, SubdivisionSampler};
use crate::mc::{config_hash, run_replicas_with, wilson_interval, Bernoulli, EstimateReport, Merge, RunSpec};
use crate::noise::{check_epsilon, draw_uniforms, NoiseModel};
use crate::stats::Z_95;
use crate::unionfind::DisjointSet;

/// Connection probabilities `f_n(ε)` on a grid, all cells computed from the
/// same replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnCurve {
    pub radii: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// `counts[i * radii.len() + j]` holds `f_{radii[j]}(epsilons[i])`.
    pub counts: Vec<Bernoulli>,
    pub master_seed: u64,
    pub config_hash: String,
}

impl FnCurve {
    pub fn cell(&self, eps_index: usize, radius_index: usize) -> &Bernoulli {
        &self.counts[eps_index * self.radii.len() + radius_index]
    }

    pub fn report(&self, eps_index: usize, radius_index: usize) -> EstimateReport {
        EstimateReport::from_bernoulli(self.cell(eps_index, radius_index), self.master_seed, self.config_hash.clone())
    }
}

fn sorted_levels(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn spheres(g: &MetricGraph, x0: usize, radii: &[usize]) -> Result<Vec<VertexSet>> {
    radii
        .iter()
        .map(|&n| {
            let s = g.sphere(x0, n)?;
            if s.is_empty() {
                Err(Error::param("n", format!("sphere of radius {n} around {x0} is empty")))
            } else {
                Ok(s)
            }
        })
        .collect()
}

fn reaches(dsu: &mut DisjointSet, x0: usize, target: &VertexSet) -> bool {
    let r = dsu.find(x0);
    target.iter().any(|&t| dsu.find(t) == r)
}

struct CurveScratch {
    half: HalfWorkspace,
    u: Vec<f64>,
    row: Vec<bool>,
}

/// Runs the intensity-1/2 plus noise model once per replica and records
/// `x0 ↔ ∂B_n` at every level in `levels` (sorted ascending) and radius.
fn coupled_indicators<S, F>(g: &MetricGraph, x0: usize, radii: &[usize], levels: &[f64], spec: &RunSpec, record: F) -> Result<S>
where
    S: Merge,
    F: Fn(&[bool], &mut S) + Sync + Send,
{
    g.check_vertex(x0)?;
    for &e in levels {
        check_epsilon("epsilon", e)?;
    }
    let targets = spheres(g, x0, radii)?;
    let sampler = GffSampler::new(g)?;
    let model = NoiseModel::new(g);
    run_replicas_with(
        spec,
        || CurveScratch { half: HalfWorkspace::new(g), u: Vec::new(), row: Vec::new() },
        |s, rng, acc: &mut S| {
            s.half.sample(g, &sampler, rng);
            draw_uniforms(model.bonds().len(), rng, &mut s.u);
            s.row.clear();
            let mut lo = 0.0;
            for &eps in levels {
                // bonds with u < 1 are all the bonds; ε = 1 must include u in [lo, 1]
                let hi = if eps >= 1.0 { f64::INFINITY } else { eps };
                model.add_bonds(&s.u, lo, hi, &mut s.half.dsu);
                lo = hi;
                for t in &targets {
                    s.row.push(reaches(&mut s.half.dsu, x0, t));
                }
            }
            record(&s.row, acc);
        },
    )
}

#[derive(Serialize)]
struct CurveKey<'a> {
    experiment: &'a str,
    graph: &'a crate::graph::Family,
    vertices: usize,
    x0: usize,
    radii: &'a [usize],
    epsilons: &'a [f64],
    replicas: u64,
    tag: &'a str,
}

pub fn fn_curve(g: &MetricGraph, x0: usize, radii: &[usize], epsilons: &[f64], spec: &RunSpec) -> Result<FnCurve> {
    let levels = sorted_levels(epsilons);
    let nr = radii.len();
    let cells = levels.len() * nr;
    let counts: Vec<Bernoulli> = coupled_indicators(g, x0, radii, &levels, spec, |row, acc: &mut Vec<Bernoulli>| {
        if acc.is_empty() {
            acc.resize(cells, Bernoulli::default());
        }
        for (c, &hit) in acc.iter_mut().zip(row) {
            c.record(hit);
        }
    })?;
    let hash = config_hash(&CurveKey {
        experiment: "fn_curve",
        graph: g.family(),
        vertices: g.vertex_count(),
        x0,
        radii,
        epsilons: &levels,
        replicas: spec.replicas,
        tag: &spec.tag,
    });
    Ok(FnCurve { radii: radii.to_vec(), epsilons: levels, counts, master_seed: spec.master_seed, config_hash: hash })
}

/// `f_n(ε) = P[x0 ↔ ∂B_n]` under intensity 1/2 plus 2-bond noise.
pub fn f_n_estimate(g: &MetricGraph, x0: usize, n: usize, epsilon: f64, spec: &RunSpec) -> Result<EstimateReport> {
    Ok(fn_curve(g, x0, &[n], &[epsilon], spec)?.report(0, 0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub radius: usize,
    pub doubled_radius: usize,
    pub at_radius: EstimateReport,
    pub at_doubled: EstimateReport,
    /// Difference in units of the joint standard error.
    pub z: f64,
    /// `|z| < 3`.
    pub consistent: bool,
}

/// Compares `f_n(ε)` on Dirichlet boxes of radius `M` and `2M`.
pub fn truncation_diagnostic(lattice: &LatticeBox, n: usize, epsilon: f64, spec: &RunSpec) -> Result<TruncationReport> {
    if lattice.radius <= n {
        return Err(Error::param("n", format!("ball radius {n} must be below the truncation radius {}", lattice.radius)));
    }
    let doubled = LatticeBox { radius: 2 * lattice.radius, ..*lattice };
    let small = lattice.build()?;
    let large = doubled.build()?;
    let a = f_n_estimate(&small, small.root(), n, epsilon, &spec.tagged("M"))?;
    let b = f_n_estimate(&large, large.root(), n, epsilon, &spec.tagged("2M"))?;
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    let z = if se > 0.0 { (a.estimate - b.estimate) / se } else { 0.0 };
    Ok(TruncationReport { radius: lattice.radius, doubled_radius: doubled.radius, at_radius: a, at_doubled: b, z, consistent: z.abs() < 3.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarCoverStratum {
    pub returns: u64,
    /// Exact probability of this return count under the loop law.
    pub weight: f64,
    pub hits: u64,
    pub trials: u64,
}

/// Probability that one loop of the soup covers the star of `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarCoverEstimate {
    pub vertex: usize,
    pub alpha: f64,
    /// Loop-measure mass of loops through `x`.
    pub loop_mass: f64,
    /// `P[one loop through x covers the star]`, stratified by return count.
    pub cover_per_loop: f64,
    pub cover_per_loop_se: f64,
    /// Mass of the unsampled return counts; an upper bound on the bias.
    pub tail_bound: f64,
    /// `P[𝒪(x)] = 1 − exp(−α · mass · cover_per_loop)`.
    pub probability: f64,
    /// `1 / probability`; infinite when nothing was observed.
    pub constant: f64,
    pub strata: Vec<StarCoverStratum>,
}

/// Estimates `P[𝒪(x)]` at intensity `alpha`.
///
/// With `x` eliminated first every loop visiting `x` is based there, and
/// the number of returns `k` of such a loop has the explicit logarithmic
/// law. Coverage is estimated separately for each `k ≤ max_returns` and
/// combined with the exact weights.
pub fn star_cover_estimate(g: &MetricGraph, x: usize, alpha: f64, max_returns: u64, spec: &RunSpec) -> Result<StarCoverEstimate> {
    g.check_vertex(x)?;
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", "must be positive"));
    }
    if max_returns == 0 {
        return Err(Error::param("max_returns", "must be positive"));
    }
    let mut order = vec![x];
    order.extend((0..g.vertex_count()).filter(|&v| v != x));
    let plan = SoupPlan::new(g, &EliminationOrder::Explicit(order))?;
    let (r, mass) = (plan.return_probability(0), plan.level_mass(0));
    let mut strata = Vec::new();
    let (mut p, mut var, mut covered) = (0.0, 0.0, 0.0);
    for k in 1..=max_returns {
        let weight = (k as f64).ln().mul_add(-1.0, k as f64 * r.ln()).exp() / mass;
        let t: Bernoulli = run_replicas_with(&spec.tagged(&format!("k{k}")), || StarCover::new(g, x), |sc, rng, acc: &mut Bernoulli| {
            sc.reset();
            plan.visit_loop_with_returns(0, k, rng, sc);
            acc.record(sc.hit);
        })?;
        let c = t.mean();
        p += weight * c;
        var += weight * weight * c * (1.0 - c) / t.trials as f64;
        covered += weight;
        strata.push(StarCoverStratum { returns: k, weight, hits: t.successes, trials: t.trials });
    }
    let probability = -(-alpha * mass * p).exp_m1();
    Ok(StarCoverEstimate {
        vertex: x,
        alpha,
        loop_mass: mass,
        cover_per_loop: p,
        cover_per_loop_se: var.sqrt(),
        tail_bound: (1.0 - covered).max(0.0),
        probability,
        constant: 1.0 / probability,
        strata,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeRow {
    pub epsilon: f64,
    pub f: EstimateReport,
    /// `(f(ε+δ) − f(ε)) / δ` from coupled replicas.
    pub slope: f64,
    pub slope_se: f64,
    pub slope_ci: (f64, f64),
    /// `slope / (1 − C f)`.
    pub witness: f64,
    /// `f < 1/(2C)`, where the slope bound is asserted.
    pub bound_applies: bool,
    /// `slope − 3σ > 0`.
    pub slope_positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeScan {
    pub n: usize,
    pub delta: f64,
    pub constant: f64,
    pub rows: Vec<OdeRow>,
    /// `max |ĉ| / min |ĉ|` over the grid.
    pub witness_spread: f64,
    pub replicas: u64,
    pub master_seed: u64,
    pub config_hash: String,
}

impl OdeScan {
    /// Every row where the bound applies has a positive slope.
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().filter(|r| r.bound_applies).all(|r| r.slope_positive)
    }

    pub fn all_slopes_positive(&self) -> bool {
        self.rows.iter().all(|r| r.slope_positive)
    }
}

pub(crate) fn check_grid(grid: &[f64], delta: f64) -> Result<Vec<f64>> {
    let grid = sorted_levels(grid);
    if grid.is_empty() {
        return Err(Error::param("epsilon_grid", "must not be empty"));
    }
    if grid[0] < 0.0 || *grid.last().unwrap() >= 0.5 {
        return Err(Error::param("epsilon_grid", "values must lie in [0, 1/2)"));
    }
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    let spacing = grid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if delta >= spacing {
        return Err(Error::param("delta", format!("must be below the grid spacing {spacing}")));
    }
    Ok(grid)
}

/// Coupled finite-difference slopes of `f_n` over an `ε` grid.
pub fn ode_inequality_scan(g: &MetricGraph, x0: usize, n: usize, grid: &[f64], delta: f64, constant: f64, spec: &RunSpec) -> Result<OdeScan> {
    let grid = check_grid(grid, delta)?;
    if !(constant > 0.0) {
        return Err(Error::param("constant", "must be positive"));
    }
    let mut levels: Vec<f64> = grid.iter().flat_map(|&e| [e, e + delta]).collect();
    levels = sorted_levels(&levels);
    let pos = |v: f64| levels.iter().position(|&l| l == v).expect("level present");
    let idx: Vec<(usize, usize)> = grid.iter().map(|&e| (pos(e), pos(e + delta))).collect();
    let m = grid.len();
    let t: Vec<Bernoulli> = coupled_indicators(g, x0, &[n], &levels, spec, |row, acc: &mut Vec<Bernoulli>| {
        if acc.is_empty() {
            acc.resize(2 * m, Bernoulli::default());
        }
        for (i, &(a, b)) in idx.iter().enumerate() {
            debug_assert!(row[b] || !row[a]);
            acc[i].record(row[a]);
            acc[m + i].record(row[b] && !row[a]);
        }
    })?;
    #[derive(Serialize)]
    struct Key<'a> {
        experiment: &'a str,
        graph: &'a crate::graph::Family,
        x0: usize,
        n: usize,
        grid: &'a [f64],
        delta: f64,
        replicas: u64,
        tag: &'a str,
    }
    let hash = config_hash(&Key { experiment: "ode_scan", graph: g.family(), x0, n, grid: &grid, delta, replicas: spec.replicas, tag: &spec.tag });
    let rows: Vec<OdeRow> = grid
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let f = EstimateReport::from_bernoulli(&t[i], spec.master_seed, hash.clone());
            let d = &t[m + i];
            let slope = d.mean() / delta;
            let slope_se = (d.mean() * (1.0 - d.mean()) / d.trials as f64).sqrt() / delta;
            let (lo, hi) = wilson_interval(d.successes, d.trials, Z_95);
            OdeRow {
                epsilon: eps,
                witness: slope / (1.0 - constant * f.estimate),
                bound_applies: f.estimate < 0.5 / constant,
                slope_positive: slope - 3.0 * slope_se > 0.0,
                f,
                slope,
                slope_se,
                slope_ci: (lo / delta, hi / delta),
            }
        })
        .collect();
    let abs: Vec<f64> = rows.iter().map(|r| r.witness.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(OdeScan {
        n,
        delta,
        constant,
        rows,
        witness_spread: if min > 0.0 { max / min } else { f64::INFINITY },
        replicas: spec.replicas,
        master_seed: spec.master_seed,
        config_hash: hash,
    })
}

/// Parameter axis of a threshold scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScanAxis {
    /// Intensity-1/2 soup plus 2-bond noise at each `ε`.
    Epsilon { values: Vec<f64> },
    /// Loop soup at each `α`, connectivity through the `m`-fold subdivision.
    Alpha { values: Vec<f64>, subdivision: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub parameter: f64,
    pub n: usize,
    pub report: EstimateReport,
    /// Estimate at half the subdivision level, for `α` rows with `m ≥ 2`.
    pub coarser: Option<EstimateReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub axis: ScanAxis,
    pub radii: Vec<usize>,
    pub cells: Vec<ScanCell>,
}

impl ThresholdScan {
    pub fn cell(&self, parameter: f64, n: usize) -> Option<&ScanCell> {
        self.cells.iter().find(|c| c.parameter == parameter && c.n == n)
    }
}

fn alpha_curve(g: &MetricGraph, x0: usize, radii: &[usize], alpha: f64, m: usize, spec: &RunSpec) -> Result<Vec<Bernoulli>> {
    let targets = spheres(g, x0, radii)?;
    if alpha == 0.0 {
        // no loops: only x0 itself is reached
        return Ok(targets
            .iter()
            .map(|t| Bernoulli { trials: spec.replicas, successes: if t.contains(x0) { spec.replicas } else { 0 } })
            .collect());
    }
    let sub = SubdivisionSampler::new(g, m)?;
    let plan = sub.plan(&EliminationOrder::default())?;
    run_replicas_with(spec, || sub.workspace(g), |ws, rng, acc: &mut Vec<Bernoulli>| {
        sub.sample_into(g, &plan, alpha, rng, ws).expect("validated intensity");
        if acc.is_empty() {
            acc.resize(targets.len(), Bernoulli::default());
        }
        for (c, t) in acc.iter_mut().zip(&targets) {
            c.record(reaches(&mut ws.dsu, x0, t));
        }
    })
}

pub fn threshold_scan(g: &MetricGraph, x0: usize, radii: &[usize], axis: &ScanAxis, spec: &RunSpec) -> Result<ThresholdScan> {
    g.check_vertex(x0)?;
    let hash = config_hash(&(g.family(), x0, radii, axis, spec.replicas, &spec.tag));
    let mut cells = Vec::new();
    match axis {
        ScanAxis::Epsilon { values } => {
            let curve = fn_curve(g, x0, radii, values, spec)?;
            for (i, &eps) in curve.epsilons.iter().enumerate() {
                for (j, &n) in radii.iter().enumerate() {
                    let report = EstimateReport::from_bernoulli(curve.cell(i, j), spec.master_seed, hash.clone());
                    cells.push(ScanCell { parameter: eps, n, report, coarser: None });
                }
            }
        }
        ScanAxis::Alpha { values, subdivision } => {
            if *subdivision == 0 {
                return Err(Error::param("m", "must be at least 1"));
            }
            for &alpha in values {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return Err(Error::param("alpha", format!("must be nonnegative, got {alpha}")));
                }
                let row_spec = spec.tagged(&format!("alpha={alpha}"));
                let fine = alpha_curve(g, x0, radii, alpha, *subdivision, &row_spec)?;
                let coarse = if *subdivision >= 2 && alpha > 0.0 {
                    Some(alpha_curve(g, x0, radii, alpha, subdivision / 2, &row_spec.tagged("coarse"))?)
                } else {
                    None
                };
                for (j, &n) in radii.iter().enumerate() {
                    cells.push(ScanCell {
                        parameter: alpha,
                        n,
                        report: EstimateReport::from_bernoulli(&fine[j], spec.master_seed, hash.clone()),
                        coarser: coarse.as_ref().map(|c| EstimateReport::from_bernoulli(&c[j], spec.master_seed, hash.clone())),
                    });
                }
            }
        }
    }
    Ok(ThresholdScan { axis: axis.clone(), radii: radii.to_vec(), cells })
}

/// Whether `a` exceeds `b` by more than `k` joint standard errors.
pub fn exceeds(a: &EstimateReport, b: &EstimateReport, k: f64) -> bool {
    a.estimate - b.estimate > k * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{path, LatticeBox};

    #[test]
    fn trivial_curves() {
        let g = LatticeBox::new(2, 3).build().unwrap();
        let spec = RunSpec::new("t", 500, 1);
        let c = fn_curve(&g, g.root(), &[0, 2], &[0.0, 1.0], &spec).unwrap();
        assert_eq!(c.report(0, 0).estimate, 1.0);
        assert_eq!(c.report(1, 0).estimate, 1.0);
        assert_eq!(c.report(1, 1).estimate, 1.0);
        assert!(c.report(0, 1).estimate < 1.0);
    }

    #[test]
    fn alpha_zero_row() {
        let g = LatticeBox::new(2, 3).build().unwrap();
        let axis = ScanAxis::Alpha { values: vec![0.0], subdivision: 1 };
        let s = threshold_scan(&g, g.root(), &[0, 1, 2], &axis, &RunSpec::new("t", 100, 1)).unwrap();
        assert_eq!(s.cell(0.0, 0).unwrap().report.estimate, 1.0);
        assert_eq!(s.cell(0.0, 1).unwrap().report.estimate, 0.0);
        assert_eq!(s.cell(0.0, 2).unwrap().report.estimate, 0.0);
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(&[0.0, 0.05], 0.05).is_err());
        assert!(check_grid(&[0.0, 0.6], 0.01).is_err());
        assert!(check_grid(&[], 0.01).is_err());
        assert!(check_grid(&[0.1, 0.0], 0.01).is_ok());
        let g = path(3, 1.0, 1.0).unwrap();
        assert!(ode_inequality_scan(&g, 0, 2, &[0.0, 0.1], 0.2, 2.0, &RunSpec::new("t", 10, 1)).is_err());
    }

    #[test]
    fn truncation_needs_room() {
        let spec = RunSpec::new("t", 10, 1);
        assert!(truncation_diagnostic(&LatticeBox::new(2, 2), 2, 0.0, &spec).is_err());
    }
}
