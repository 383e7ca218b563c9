//! Discrete loop soup at arbitrary intensity.
//!
//! Loops are grouped by their lowest vertex in an elimination order
//! `v_0, v_1, ...`. Loops based at `v_i` live in the graph with
//! `v_0..v_{i-1}` removed; their number is Poisson with mean
//! `α·(−ln(1 − r_i))`, where `r_i` is the return probability of the jump
//! chain to `v_i`, and each loop is a logarithmic number of independent
//! return excursions. Excursions are drawn exactly from the chain
//! conditioned to return, i.e. the Doob transform by the hitting
//! probability of `v_i`.
//!
//! All levels share one Cholesky factor: numbering vertices in reverse
//! elimination order makes the kept set of level `i` a leading block of
//! the precision matrix, and leading blocks of a Cholesky factor factor
//! the leading blocks of the matrix.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, MetricGraph};
use crate::linalg::{Precision, ProfileCholesky};
use crate::potential::GreenTable;
use crate::stats::{gamma_cdf, ks_one_sample, KsReport};
use crate::trace::TraceClusters;
use crate::unionfind::DisjointSet;

/// Minimum sample count for [`occupation_marginal_test`].
pub const MIN_KS_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EliminationOrder {
    /// Highest degree first, ties by vertex id.
    #[default]
    DescendingDegree,
    Natural,
    Explicit(Vec<usize>),
}

impl EliminationOrder {
    pub fn resolve(&self, g: &MetricGraph) -> Result<Vec<usize>> {
        let n = g.vertex_count();
        match self {
            EliminationOrder::Natural => Ok((0..n).collect()),
            EliminationOrder::DescendingDegree => {
                let mut v: Vec<usize> = (0..n).collect();
                v.sort_by_key(|&x| (std::cmp::Reverse(g.degree(x)), x));
                Ok(v)
            }
            EliminationOrder::Explicit(v) => {
                let mut seen = vec![false; n];
                if v.len() != n {
                    return Err(Error::param("order", format!("expected {n} vertices, got {}", v.len())));
                }
                for &x in v {
                    if x >= n || std::mem::replace(&mut seen[x], true) {
                        return Err(Error::param("order", "not a permutation of the vertices"));
                    }
                }
                Ok(v.clone())
            }
        }
    }
}

fn default_subdivision() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoupConfig {
    pub alpha: f64,
    #[serde(default)]
    pub order: EliminationOrder,
    #[serde(default = "default_subdivision")]
    pub subdivision: usize,
    /// Add the occupation of loops that never jump.
    #[serde(default = "default_true")]
    pub include_trivial: bool,
}

impl SoupConfig {
    pub fn new(alpha: f64) -> Self {
        SoupConfig { alpha, order: EliminationOrder::default(), subdivision: 1, include_trivial: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be positive and finite, got {}", self.alpha)));
        }
        if self.subdivision == 0 {
            return Err(Error::param("subdivision", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLoop {
    pub base: usize,
    /// Starts and ends at `base`.
    pub path: Vec<usize>,
    /// Edge of each step; one shorter than `path`.
    #[serde(skip)]
    pub edges: Vec<usize>,
    /// Holding time of each visit `path[0..len-1]`.
    pub holds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopSoupSample {
    pub loops: Vec<DiscreteLoop>,
    /// Occupation contributed by loops that never jump.
    pub trivial: Vec<f64>,
}

impl LoopSoupSample {
    /// Total occupation `ℓ_x`.
    pub fn occupation(&self) -> Vec<f64> {
        let mut l = self.trivial.clone();
        for lp in &self.loops {
            for (&x, &t) in lp.path.iter().zip(&lp.holds) {
                l[x] += t;
            }
        }
        l
    }

    /// Number of traversals of each edge, in either direction.
    pub fn traversals(&self, g: &MetricGraph) -> Vec<u32> {
        let mut c = vec![0; g.edge_count()];
        for lp in &self.loops {
            for &e in &lp.edges {
                c[e] += 1;
            }
        }
        c
    }

    pub fn clusters(&self, g: &MetricGraph) -> Result<TraceClusters> {
        let open = self.traversals(g).into_iter().map(|c| c > 0).collect();
        TraceClusters::from_open_edges(g, open)
    }

    /// One JSON object `{base, path, holds}` per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for lp in &self.loops {
            serde_json::to_writer(&mut w, lp)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_occupation_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "vertex,occupation")?;
        for (x, l) in self.occupation().iter().enumerate() {
            writeln!(w, "{x},{l}")?;
        }
        Ok(())
    }
}

/// Callbacks fired while a soup is generated.
pub trait SoupVisitor {
    fn begin_loop(&mut self, _base: usize) {}
    fn step(&mut self, _from: usize, _to: usize, _edge: usize) {}
    fn hold(&mut self, _vertex: usize, _time: f64) {}
    fn end_loop(&mut self) {}
    fn trivial(&mut self, _vertex: usize, _time: f64) {}
}

/// Materializes every loop.
#[derive(Default)]
struct Collector {
    loops: Vec<DiscreteLoop>,
    trivial: Vec<f64>,
}

impl SoupVisitor for Collector {
    fn begin_loop(&mut self, base: usize) {
        self.loops.push(DiscreteLoop { base, path: vec![base], edges: Vec::new(), holds: Vec::new() });
    }
    fn step(&mut self, _from: usize, to: usize, edge: usize) {
        let lp = self.loops.last_mut().unwrap();
        lp.path.push(to);
        lp.edges.push(edge);
    }
    fn hold(&mut self, _vertex: usize, time: f64) {
        self.loops.last_mut().unwrap().holds.push(time);
    }
    fn trivial(&mut self, vertex: usize, time: f64) {
        self.trivial[vertex] += time;
    }
}

/// Per-level return probabilities and hitting functions, shared read-only
/// across replicas.
#[derive(Clone, Debug)]
pub struct SoupPlan<'g> {
    g: &'g MetricGraph,
    order: Vec<usize>,
    /// Index of each vertex in reverse elimination order.
    index: Vec<usize>,
    /// Hitting functions, level with `k` kept vertices at `k(k-1)/2`.
    h: Vec<f64>,
    ret: Vec<f64>,
    mass: Vec<f64>,
    exp: Vec<Exp<f64>>,
}

impl<'g> SoupPlan<'g> {
    pub fn new(g: &'g MetricGraph, order: &EliminationOrder) -> Result<Self> {
        let order = order.resolve(g)?;
        let n = g.vertex_count();
        let prec = Precision::new(g, None)?;
        let rev: Vec<usize> = order.iter().rev().copied().collect();
        let mut index = vec![0; n];
        for (i, &x) in rev.iter().enumerate() {
            index[x] = i;
        }
        let factor = ProfileCholesky::factor(&prec.matrix().permuted(&rev))?;
        let mut h = Vec::with_capacity(n * (n + 1) / 2);
        let mut ret = Vec::with_capacity(n);
        let mut mass = Vec::with_capacity(n);
        let mut y = vec![0.0; n];
        for (level, &v) in order.iter().enumerate() {
            let k = n - level;
            y[..k].fill(0.0);
            let d = factor.diag(k - 1);
            y[k - 1] = 1.0 / d;
            factor.solve_upper_leading(k, &mut y);
            // y is the column G_level(., v); G(v,v) = 1/d²
            let gvv = y[k - 1];
            h.extend(y[..k].iter().map(|&gy| (gy / gvv).clamp(0.0, 1.0)));
            let r = (1.0 - 1.0 / (g.total_rate(v) * gvv)).max(0.0);
            if r >= 1.0 {
                return Err(Error::NotTransient { vertex: v });
            }
            ret.push(r);
            mass.push(-(-r).ln_1p());
        }
        // reorder so level i's vector sits at offset k(k-1)/2
        let mut packed = vec![0.0; h.len()];
        let mut src = 0;
        for level in 0..n {
            let k = n - level;
            let off = k * (k - 1) / 2;
            packed[off..off + k].copy_from_slice(&h[src..src + k]);
            src += k;
        }
        let exp = g.total_rates().iter().map(|&w| Exp::new(w).expect("positive rate")).collect();
        Ok(SoupPlan { g, order, index, h: packed, ret, mass, exp })
    }

    pub fn graph(&self) -> &MetricGraph {
        self.g
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Return probability `r_i` of the jump chain to the level-`i` vertex.
    pub fn return_probability(&self, level: usize) -> f64 {
        self.ret[level]
    }

    /// Loop-measure mass `−ln(1 − r_i)` of level `i`.
    pub fn level_mass(&self, level: usize) -> f64 {
        self.mass[level]
    }

    /// `P_u[hit v_i before leaving the level-i graph]`; zero for removed `u`.
    pub fn hitting(&self, level: usize, u: usize) -> f64 {
        let k = self.order.len() - level;
        let j = self.index[u];
        if j < k {
            self.h[k * (k - 1) / 2 + j]
        } else {
            0.0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, alpha: f64, include_trivial: bool, rng: &mut R) -> Result<LoopSoupSample> {
        let mut c = Collector { loops: Vec::new(), trivial: vec![0.0; self.g.vertex_count()] };
        self.visit(alpha, include_trivial, rng, &mut c)?;
        Ok(LoopSoupSample { loops: c.loops, trivial: c.trivial })
    }

    /// Generates one soup, streaming it into `visitor`.
    pub fn visit<R: Rng + ?Sized, V: SoupVisitor>(&self, alpha: f64, include_trivial: bool, rng: &mut R, visitor: &mut V) -> Result<()> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be positive and finite, got {alpha}")));
        }
        for level in 0..self.order.len() {
            self.visit_level(level, alpha, rng, visitor);
        }
        if include_trivial {
            for (x, &w) in self.g.total_rates().iter().enumerate() {
                let t = Gamma::new(alpha, 1.0 / w).expect("valid gamma").sample(rng);
                visitor.trivial(x, t);
            }
        }
        Ok(())
    }

    /// Only the loops based at the level-`level` vertex.
    pub fn visit_level<R: Rng + ?Sized, V: SoupVisitor>(&self, level: usize, alpha: f64, rng: &mut R, visitor: &mut V) {
        let mean = alpha * self.mass[level];
        if mean <= 0.0 {
            return;
        }
        let count = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
        for _ in 0..count {
            let k = sample_logarithmic(self.ret[level], self.mass[level], rng);
            self.walk_loop(level, k, rng, visitor);
        }
    }

    /// One loop from the normalized loop law of level `level`.
    pub fn visit_single_loop<R: Rng + ?Sized, V: SoupVisitor>(&self, level: usize, rng: &mut R, visitor: &mut V) {
        if self.mass[level] > 0.0 {
            let k = sample_logarithmic(self.ret[level], self.mass[level], rng);
            self.walk_loop(level, k, rng, visitor);
        }
    }

    /// One loop of level `level` with exactly `returns` return excursions.
    pub fn visit_loop_with_returns<R: Rng + ?Sized, V: SoupVisitor>(&self, level: usize, returns: u64, rng: &mut R, visitor: &mut V) {
        self.walk_loop(level, returns, rng, visitor);
    }

    fn walk_loop<R: Rng + ?Sized, V: SoupVisitor>(&self, level: usize, returns: u64, rng: &mut R, visitor: &mut V) {
        let v = self.order[level];
        let k = self.order.len() - level;
        let h = &self.h[k * (k - 1) / 2..k * (k - 1) / 2 + k];
        visitor.begin_loop(v);
        for _ in 0..returns {
            let mut u = v;
            loop {
                visitor.hold(u, self.exp[u].sample(rng));
                let nbrs = self.g.neighbors(u);
                let weight = |n: &graph::Neighbor| {
                    let j = self.index[n.vertex];
                    if j < k {
                        self.g.edge(n.edge).weight * h[j]
                    } else {
                        0.0
                    }
                };
                let total: f64 = nbrs.iter().map(weight).sum();
                let mut target = rng.random::<f64>() * total;
                let mut chosen = None;
                for n in nbrs {
                    let w = weight(n);
                    if w > 0.0 {
                        chosen = Some(n);
                        if target < w {
                            break;
                        }
                        target -= w;
                    }
                }
                let n = chosen.expect("excursion has a positive step");
                visitor.step(u, n.vertex, n.edge);
                u = n.vertex;
                if u == v {
                    break;
                }
            }
        }
        visitor.end_loop();
    }
}

/// `P(k) = r^k / (k·(−ln(1−r)))`, `k ≥ 1`, by sequential inversion.
fn sample_logarithmic<R: Rng + ?Sized>(r: f64, mass: f64, rng: &mut R) -> u64 {
    let mut u = rng.random::<f64>();
    let mut k = 1u64;
    let mut p = r / mass;
    while u > p {
        u -= p;
        p *= r * k as f64 / (k + 1) as f64;
        k += 1;
        if p < 1e-300 {
            break;
        }
    }
    k
}

/// Samples a soup on `g` with `cfg`; `cfg.subdivision` is ignored here.
pub fn sample_discrete_soup<R: Rng + ?Sized>(g: &MetricGraph, cfg: &SoupConfig, rng: &mut R) -> Result<LoopSoupSample> {
    cfg.validate()?;
    SoupPlan::new(g, &cfg.order)?.sample(cfg.alpha, cfg.include_trivial, rng)
}

/// KS comparison of occupation samples `ℓ_x` with `Gamma(α, scale G(x,x))`.
pub fn occupation_marginal_test(occupations: &[f64], x: usize, alpha: f64, table: &GreenTable) -> Result<KsReport> {
    if occupations.len() < MIN_KS_SAMPLES {
        return Err(Error::TooFewSamples { got: occupations.len(), need: MIN_KS_SAMPLES });
    }
    let gxx = table.get(x, x)?;
    ks_one_sample(occupations, |t| gamma_cdf(alpha, gxx, t))
}

/// Connectivity of original vertices through soups on the `m`-fold
/// subdivision. An original edge is open when all of its pieces are
/// traversed.
#[derive(Debug)]
pub struct SubdivisionSampler {
    base_edges: usize,
    pieces: usize,
    fine: MetricGraph,
}

/// Reusable buffers for [`SubdivisionSampler`].
#[derive(Clone, Debug, Default)]
pub struct SubdivisionWorkspace {
    traversed: Vec<bool>,
    pub open: Vec<bool>,
    pub dsu: DisjointSet,
}

struct MarkTraversed<'a>(&'a mut [bool]);

impl SoupVisitor for MarkTraversed<'_> {
    fn step(&mut self, _from: usize, _to: usize, edge: usize) {
        self.0[edge] = true;
    }
}

impl SubdivisionSampler {
    pub fn new(g: &MetricGraph, pieces: usize) -> Result<Self> {
        Self::with_budget(g, pieces, graph::DEFAULT_VERTEX_BUDGET)
    }

    pub fn with_budget(g: &MetricGraph, pieces: usize, budget: usize) -> Result<Self> {
        let fine = graph::subdivide_with_budget(g, pieces, budget)?;
        Ok(SubdivisionSampler { base_edges: g.edge_count(), pieces, fine })
    }

    pub fn fine_graph(&self) -> &MetricGraph {
        &self.fine
    }

    pub fn plan(&self, order: &EliminationOrder) -> Result<SoupPlan<'_>> {
        SoupPlan::new(&self.fine, order)
    }

    pub fn workspace(&self, base: &MetricGraph) -> SubdivisionWorkspace {
        SubdivisionWorkspace {
            traversed: vec![false; self.fine.edge_count()],
            open: vec![false; self.base_edges],
            dsu: DisjointSet::new(base.vertex_count()),
        }
    }

    /// One soup; fills `ws.open` and labels `ws.dsu` on the original graph.
    pub fn sample_into<R: Rng + ?Sized>(&self, base: &MetricGraph, plan: &SoupPlan<'_>, alpha: f64, rng: &mut R, ws: &mut SubdivisionWorkspace) -> Result<()> {
        ws.traversed.iter_mut().for_each(|t| *t = false);
        plan.visit(alpha, false, rng, &mut MarkTraversed(&mut ws.traversed))?;
        for (e, o) in ws.open.iter_mut().enumerate() {
            *o = ws.traversed[e * self.pieces..(e + 1) * self.pieces].iter().all(|&t| t);
        }
        ws.dsu.reset(base.vertex_count());
        for (e, _) in ws.open.iter().enumerate().filter(|(_, &o)| o) {
            let edge = base.edge(e);
            ws.dsu.union(edge.u, edge.v);
        }
        Ok(())
    }
}

pub fn metric_clusters_by_subdivision<R: Rng + ?Sized>(g: &MetricGraph, alpha: f64, m: usize, rng: &mut R) -> Result<TraceClusters> {
    SoupConfig { subdivision: m, ..SoupConfig::new(alpha) }.validate()?;
    let s = SubdivisionSampler::new(g, m)?;
    let plan = s.plan(&EliminationOrder::default())?;
    let mut ws = s.workspace(g);
    s.sample_into(g, &plan, alpha, rng, &mut ws)?;
    TraceClusters::from_open_edges(g, ws.open)
}

/// Edges incident to `x` or to a neighbor of `x`.
pub fn star_edges(g: &MetricGraph, x: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = g.neighbors(x).iter().map(|n| n.edge).collect();
    for n in g.neighbors(x) {
        ids.extend(g.neighbors(n.vertex).iter().map(|m| m.edge));
    }
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Whether one loop traverses every edge of the star of `x`.
pub fn single_loop_covers_star(g: &MetricGraph, sample: &LoopSoupSample, x: usize) -> bool {
    let star = star_edges(g, x);
    sample.loops.iter().any(|lp| star.iter().all(|e| lp.edges.contains(e)))
}

/// Streaming version of [`single_loop_covers_star`].
#[derive(Clone, Debug)]
pub struct StarCover {
    slot: Vec<usize>,
    covered: Vec<bool>,
    missing: usize,
    pub hit: bool,
}

impl StarCover {
    pub fn new(g: &MetricGraph, x: usize) -> Self {
        let star = star_edges(g, x);
        let mut slot = vec![usize::MAX; g.edge_count()];
        for (i, &e) in star.iter().enumerate() {
            slot[e] = i;
        }
        StarCover { slot, covered: vec![false; star.len()], missing: star.len(), hit: false }
    }

    pub fn reset(&mut self) {
        self.hit = false;
    }
}

impl SoupVisitor for StarCover {
    fn begin_loop(&mut self, _base: usize) {
        self.covered.iter_mut().for_each(|c| *c = false);
        self.missing = self.covered.len();
    }
    fn step(&mut self, _from: usize, _to: usize, edge: usize) {
        let s = self.slot[edge];
        if s != usize::MAX && !self.covered[s] {
            self.covered[s] = true;
            self.missing -= 1;
        }
    }
    fn end_loop(&mut self) {
        if self.missing == 0 {
            self.hit = true;
        }
    }
}
