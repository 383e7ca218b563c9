//! Bernoulli 2-bond noise on top of a trace configuration.
//!
//! Each replica draws one uniform per 2-bond, in 2-bond id order, and the
//! bond is open at level `ε` iff its uniform is below `ε`. Configurations at
//! different `ε` built from the same uniforms are therefore nested.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gff::{GffSampler, HalfWorkspace};
use crate::graph::{MetricGraph, TwoBond, VertexSet, UNREACHABLE};
use crate::mc::{run_replicas_with, wilson_interval, Merge, RunSpec};
use crate::stats::Z_95;
use crate::trace::TraceClusters;
use crate::unionfind::DisjointSet;

pub(crate) fn check_epsilon(name: &'static str, eps: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in [0, 1], got {eps}")))
    }
}

/// Open 2-bonds, as ids into [`MetricGraph::two_bonds`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBondConfig {
    pub epsilon: f64,
    open: Vec<usize>,
}

impl TwoBondConfig {
    pub fn new(g: &MetricGraph, epsilon: f64, open: impl IntoIterator<Item = usize>) -> Result<Self> {
        check_epsilon("epsilon", epsilon)?;
        let mut open: Vec<usize> = open.into_iter().collect();
        open.sort_unstable();
        open.dedup();
        if let Some(&b) = open.last() {
            if b >= g.two_bond_count() {
                return Err(Error::param("two_bond", format!("id {b} out of range")));
            }
        }
        Ok(TwoBondConfig { epsilon, open })
    }

    pub fn empty(epsilon: f64) -> Self {
        TwoBondConfig { epsilon, open: Vec::new() }
    }

    pub fn open_ids(&self) -> &[usize] {
        &self.open
    }

    pub fn is_open(&self, id: usize) -> bool {
        self.open.binary_search(&id).is_ok()
    }

    pub fn bonds(&self, g: &MetricGraph) -> Vec<TwoBond> {
        let all = g.two_bonds();
        self.open.iter().map(|&i| all[i]).collect()
    }
}

/// Draws one uniform per 2-bond.
pub fn draw_uniforms<R: Rng + ?Sized>(count: usize, rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..count).map(|_| rng.random::<f64>()));
}

pub fn sample_noise<R: Rng + ?Sized>(g: &MetricGraph, epsilon: f64, rng: &mut R) -> Result<TwoBondConfig> {
    check_epsilon("epsilon", epsilon)?;
    let mut u = Vec::new();
    draw_uniforms(g.two_bond_count(), rng, &mut u);
    Ok(TwoBondConfig { epsilon, open: (0..u.len()).filter(|&i| u[i] < epsilon).collect() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisedSample {
    pub loop_part: TraceClusters,
    pub noise: TwoBondConfig,
    pub merged: TraceClusters,
}

pub fn superpose(g: &MetricGraph, loop_part: TraceClusters, noise: TwoBondConfig) -> Result<NoisedSample> {
    if loop_part.labels().len() != g.vertex_count() || loop_part.open_edges().len() != g.edge_count() {
        return Err(Error::GraphMismatch);
    }
    let mut bonds = loop_part.open_two_bonds().to_vec();
    bonds.extend(noise.bonds(g));
    bonds.sort_unstable();
    bonds.dedup();
    let merged = TraceClusters::with_two_bonds(g, loop_part.open_edges().to_vec(), bonds)?;
    Ok(NoisedSample { loop_part, noise, merged })
}

impl NoisedSample {
    /// The sample seen from inside `set`: trace edges with both endpoints
    /// in `set` are kept, and 2-bonds are kept when all three vertices are.
    pub fn restricted(&self, g: &MetricGraph, set: &VertexSet) -> Result<NoisedSample> {
        let inside = set.mask(g.vertex_count());
        let bonds = g.two_bonds();
        let mut open = self.loop_part.open_edges().to_vec();
        for b in self.noise.open_ids().iter().map(|&i| bonds[i]).chain(self.loop_part.open_two_bonds().iter().copied()) {
            open[b.e] = true;
            open[b.f] = true;
        }
        for (o, e) in open.iter_mut().zip(g.edges()) {
            *o &= inside[e.u] && inside[e.v];
        }
        let kept = self.noise.open_ids().iter().copied().filter(|&i| {
            let (x, y, z) = bonds[i].vertices(g);
            inside[x] && inside[y] && inside[z]
        });
        let noise = TwoBondConfig::new(g, self.noise.epsilon, kept)?;
        let loop_part = TraceClusters::from_open_edges(g, open)?;
        superpose(g, loop_part, noise)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotalMode {
    /// Closed 2-bonds whose opening makes the event occur.
    #[default]
    Upper,
    /// 2-bonds `b` with `ω ∪ {b} ∈ A` and `ω \ {b} ∉ A`.
    Alternative,
}

fn reaches(labels: &[usize], x0: usize, target: &VertexSet) -> bool {
    target.iter().any(|&t| labels[t] == labels[x0])
}

/// Ids of the 2-bonds pivotal for `{x0 ↔ target}` in the merged trace.
pub fn pivotal_two_bonds(g: &MetricGraph, sample: &NoisedSample, x0: usize, target: &VertexSet, mode: PivotalMode) -> Result<Vec<usize>> {
    g.check_vertex(x0)?;
    target.check(g)?;
    let labels = sample.merged.labels();
    let bonds = g.two_bonds();
    if !reaches(labels, x0, target) {
        let mut hit = vec![false; g.vertex_count()];
        for &t in target.iter() {
            hit[labels[t]] = true;
        }
        let lx0 = labels[x0];
        return Ok((0..bonds.len())
            .filter(|&i| !sample.noise.is_open(i))
            .filter(|&i| {
                let (x, y, z) = bonds[i].vertices(g);
                let ls = [labels[x], labels[y], labels[z]];
                ls.contains(&lx0) && ls.iter().any(|&l| hit[l])
            })
            .collect());
    }
    if mode == PivotalMode::Upper {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for &i in sample.noise.open_ids() {
        let rest = sample.noise.open_ids().iter().copied().filter(|&j| j != i);
        let without = superpose(g, sample.loop_part.clone(), TwoBondConfig::new(g, sample.noise.epsilon, rest)?)?;
        if !reaches(without.merged.labels(), x0, target) {
            out.push(i);
        }
    }
    Ok(out)
}

/// Built-in increasing events of the superposed configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Connected { a: usize, b: usize },
    Reaches { from: usize, target: VertexSet },
    /// Every edge at `x` lies in some open 2-bond.
    NoiseCoversStar { x: usize },
    Certain,
}

impl Event {
    pub fn check(&self, g: &MetricGraph) -> Result<()> {
        match self {
            Event::Connected { a, b } => {
                g.check_vertex(*a)?;
                g.check_vertex(*b)
            }
            Event::Reaches { from, target } => {
                g.check_vertex(*from)?;
                target.check(g)
            }
            Event::NoiseCoversStar { x } => g.check_vertex(*x),
            Event::Certain => Ok(()),
        }
    }
}

/// Precomputed 2-bond geometry for hot loops.
#[derive(Clone, Debug)]
pub struct NoiseModel<'g> {
    g: &'g MetricGraph,
    bonds: Vec<TwoBond>,
    triples: Vec<[usize; 3]>,
}

impl<'g> NoiseModel<'g> {
    pub fn new(g: &'g MetricGraph) -> Self {
        let bonds = g.two_bonds();
        let triples = bonds
            .iter()
            .map(|b| {
                let (x, y, z) = b.vertices(g);
                [x, y, z]
            })
            .collect();
        NoiseModel { g, bonds, triples }
    }

    pub fn graph(&self) -> &MetricGraph {
        self.g
    }

    pub fn bonds(&self) -> &[TwoBond] {
        &self.bonds
    }

    pub fn triple(&self, id: usize) -> [usize; 3] {
        self.triples[id]
    }

    /// Labels the loop edges plus every bond with `u < eps` into `dsu`.
    pub fn label(&self, loop_open: &[bool], u: &[f64], eps: f64, dsu: &mut DisjointSet) {
        dsu.reset(self.g.vertex_count());
        for (e, _) in loop_open.iter().enumerate().filter(|(_, &o)| o) {
            let edge = self.g.edge(e);
            dsu.union(edge.u, edge.v);
        }
        self.add_bonds(u, 0.0, eps, dsu);
    }

    /// Adds bonds with `lo <= u < hi`.
    pub fn add_bonds(&self, u: &[f64], lo: f64, hi: f64, dsu: &mut DisjointSet) {
        for (t, &ui) in self.triples.iter().zip(u) {
            if lo <= ui && ui < hi {
                dsu.union(t[0], t[1]);
                dsu.union(t[1], t[2]);
            }
        }
    }

    pub fn occurs(&self, event: &Event, u: &[f64], eps: f64, dsu: &mut DisjointSet) -> bool {
        match event {
            Event::Connected { a, b } => dsu.same(*a, *b),
            Event::Reaches { from, target } => {
                let r = dsu.find(*from);
                target.iter().any(|&t| dsu.find(t) == r)
            }
            Event::NoiseCoversStar { x } => self.g.neighbors(*x).iter().all(|n| {
                self.bonds.iter().zip(u).any(|(b, &ui)| ui < eps && (b.e == n.edge || b.f == n.edge))
            }),
            Event::Certain => true,
        }
    }

    /// Number of closed bonds upper-pivotal for `{x0 ↔ target}`; zero when
    /// the event already holds. `hit` is scratch of vertex-count length.
    pub fn count_pivotal(&self, u: &[f64], eps: f64, x0: usize, target: &VertexSet, dsu: &mut DisjointSet, hit: &mut Vec<bool>) -> u64 {
        hit.clear();
        hit.resize(self.g.vertex_count(), false);
        let r0 = dsu.find(x0);
        for &t in target.iter() {
            let r = dsu.find(t);
            if r == r0 {
                return 0;
            }
            hit[r] = true;
        }
        let mut count = 0;
        for (t, &ui) in self.triples.iter().zip(u) {
            if ui < eps {
                continue;
            }
            let rs = [dsu.find(t[0]), dsu.find(t[1]), dsu.find(t[2])];
            if rs.contains(&r0) && rs.iter().any(|&r| hit[r]) {
                count += 1;
            }
        }
        count
    }
}

/// Paired tallies for a coupled difference `D` and a count `X`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedCounts {
    pub n: u64,
    pub d: u64,
    pub x: u64,
    pub xx: u128,
    pub dx: u64,
}

impl PairedCounts {
    pub fn record(&mut self, d: bool, x: u64) {
        self.n += 1;
        self.d += d as u64;
        self.x += x;
        self.xx += (x as u128) * (x as u128);
        self.dx += if d { x } else { 0 };
    }

    /// Mean and standard error of `D − c·X`.
    pub fn difference(&self, c: f64) -> (f64, f64) {
        let n = self.n as f64;
        let md = self.d as f64 / n;
        let mx = self.x as f64 / n;
        let vd = md - md * md;
        let vx = self.xx as f64 / n - mx * mx;
        let cov = self.dx as f64 / n - md * mx;
        let var = (vd + c * c * vx - 2.0 * c * cov).max(0.0) * n / (n - 1.0).max(1.0);
        (md - c * mx, (var / n).sqrt())
    }

    pub fn x_std_error(&self) -> f64 {
        let n = self.n as f64;
        let mx = self.x as f64 / n;
        let vx = (self.xx as f64 / n - mx * mx).max(0.0) * n / (n - 1.0).max(1.0);
        (vx / n).sqrt()
    }
}

impl Merge for PairedCounts {
    fn merge(&mut self, o: Self) {
        self.n += o.n;
        self.d += o.d;
        self.x += o.x;
        self.xx += o.xx;
        self.dx += o.dx;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RussoParams {
    pub x0: usize,
    pub target: VertexSet,
    pub epsilon: f64,
    pub delta: f64,
    pub mode: PivotalMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RussoReport {
    /// `P_{ε+δ}[A] − P_ε[A]`.
    pub lhs: f64,
    /// `δ/(1−ε) · E_ε[#pivotal]` (no factor in alternative mode).
    pub rhs: f64,
    pub ci_lhs: (f64, f64),
    pub ci_rhs: (f64, f64),
    pub difference: f64,
    pub difference_se: f64,
    /// `4·σ + 5·δ²`.
    pub allowance: f64,
    pub consistent: bool,
    pub replicas: u64,
    pub seed: u64,
    pub params: RussoParams,
}

pub(crate) fn check_russo_params(eps: f64, delta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::param("epsilon", format!("must lie in [0, 1/2), got {eps}")));
    }
    if !(delta > 0.0 && delta < 0.5 - eps) {
        return Err(Error::param("delta", format!("must lie in (0, 1/2 − ε), got {delta}")));
    }
    Ok(())
}

struct NoiseScratch {
    half: HalfWorkspace,
    u: Vec<f64>,
    hit: Vec<bool>,
}

/// Russo finite-difference check at intensity 1/2.
///
/// In alternative mode the pivotal count is taken over closed bonds at `ε`
/// with the event failing plus open bonds whose removal breaks it.
pub fn russo_check(g: &MetricGraph, params: &RussoParams, spec: &RunSpec) -> Result<RussoReport> {
    check_russo_params(params.epsilon, params.delta)?;
    g.check_vertex(params.x0)?;
    params.target.check(g)?;
    let sampler = GffSampler::new(g)?;
    let model = NoiseModel::new(g);
    let (eps, delta) = (params.epsilon, params.delta);
    let event = Event::Reaches { from: params.x0, target: params.target.clone() };
    let t: PairedCounts = run_replicas_with(
        spec,
        || NoiseScratch { half: HalfWorkspace::new(g), u: Vec::new(), hit: Vec::new() },
        |s, rng, acc: &mut PairedCounts| {
            s.half.sample(g, &sampler, rng);
            draw_uniforms(model.bonds().len(), rng, &mut s.u);
            let dsu = &mut s.half.dsu;
            model.add_bonds(&s.u, 0.0, eps, dsu);
            let before = model.occurs(&event, &s.u, eps, dsu);
            let x = match params.mode {
                PivotalMode::Upper => model.count_pivotal(&s.u, eps, params.x0, &params.target, dsu, &mut s.hit),
                PivotalMode::Alternative => alternative_count(&model, &s.half.open, &s.u, eps, params, dsu, &mut s.hit),
            };
            let dsu = &mut s.half.dsu;
            model.add_bonds(&s.u, eps, eps + delta, dsu);
            let after = model.occurs(&event, &s.u, eps + delta, dsu);
            debug_assert!(after || !before);
            acc.record(after && !before, x);
        },
    )?;
    let c = match params.mode {
        PivotalMode::Upper => delta / (1.0 - eps),
        PivotalMode::Alternative => delta,
    };
    let n = t.n as f64;
    let lhs = t.d as f64 / n;
    let rhs = c * t.x as f64 / n;
    let (difference, difference_se) = t.difference(c);
    let allowance = 4.0 * difference_se + 5.0 * delta * delta;
    let half = Z_95 * c * t.x_std_error();
    Ok(RussoReport {
        lhs,
        rhs,
        ci_lhs: wilson_interval(t.d, t.n, Z_95),
        ci_rhs: (rhs - half, rhs + half),
        difference,
        difference_se,
        allowance,
        consistent: difference.abs() <= allowance,
        replicas: t.n,
        seed: spec.master_seed,
        params: params.clone(),
    })
}

fn alternative_count(model: &NoiseModel<'_>, loop_open: &[bool], u: &[f64], eps: f64, p: &RussoParams, dsu: &mut DisjointSet, hit: &mut Vec<bool>) -> u64 {
    let upper = model.count_pivotal(u, eps, p.x0, &p.target, dsu, hit);
    let event = Event::Reaches { from: p.x0, target: p.target.clone() };
    if !model.occurs(&event, u, eps, dsu) {
        return upper;
    }
    let mut scratch = DisjointSet::new(model.graph().vertex_count());
    let mut uu = u.to_vec();
    let mut count = 0;
    for i in 0..u.len() {
        if u[i] >= eps {
            continue;
        }
        uu[i] = 1.0;
        model.label(loop_open, &uu, eps, &mut scratch);
        if !model.occurs(&event, &uu, eps, &mut scratch) {
            count += 1;
        }
        uu[i] = u[i];
    }
    count
}

/// Joint indicator counts of two events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCounts {
    pub n: u64,
    pub a: u64,
    pub b: u64,
    pub ab: u64,
}

impl JointCounts {
    pub fn record(&mut self, a: bool, b: bool) {
        self.n += 1;
        self.a += a as u64;
        self.b += b as u64;
        self.ab += (a && b) as u64;
    }

    /// `P[A∩B] − P[A]P[B]` and its delta-method standard error.
    pub fn covariance(&self) -> (f64, f64) {
        let n = self.n as f64;
        let (pa, pb, pab) = (self.a as f64 / n, self.b as f64 / n, self.ab as f64 / n);
        let cov = pab - pa * pb;
        // influence of one replica on the covariance estimate
        let influence = |a: f64, b: f64| (a * b - pab) - pb * (a - pa) - pa * (b - pb);
        let cells = [
            (pab, influence(1.0, 1.0)),
            (pa - pab, influence(1.0, 0.0)),
            (pb - pab, influence(0.0, 1.0)),
            (1.0 - pa - pb + pab, influence(0.0, 0.0)),
        ];
        let var: f64 = cells.iter().map(|(p, f)| p.max(0.0) * f * f).sum();
        (cov, (var / n).sqrt())
    }
}

impl Merge for JointCounts {
    fn merge(&mut self, o: Self) {
        self.n += o.n;
        self.a += o.a;
        self.b += o.b;
        self.ab += o.ab;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkgParams {
    pub a: Event,
    pub b: Event,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkgReport {
    /// `P[A∩B]`.
    pub lhs: f64,
    /// `P[A]·P[B]`.
    pub rhs: f64,
    pub ci_lhs: (f64, f64),
    pub ci_rhs: (f64, f64),
    pub covariance: f64,
    pub covariance_se: f64,
    /// Covariance below `−3σ`.
    pub violation: bool,
    pub replicas: u64,
    pub seed: u64,
    pub params: FkgParams,
}

pub fn fkg_check(g: &MetricGraph, params: &FkgParams, spec: &RunSpec) -> Result<FkgReport> {
    Ok(fkg_battery(g, &[(params.a.clone(), params.b.clone())], params.epsilon, spec)?.remove(0))
}

/// FKG check for several event pairs, all evaluated on the same replicas.
pub fn fkg_battery(g: &MetricGraph, pairs: &[(Event, Event)], epsilon: f64, spec: &RunSpec) -> Result<Vec<FkgReport>> {
    check_epsilon("epsilon", epsilon)?;
    for (a, b) in pairs {
        a.check(g)?;
        b.check(g)?;
    }
    let sampler = GffSampler::new(g)?;
    let model = NoiseModel::new(g);
    let t: Vec<JointCounts> = run_replicas_with(
        spec,
        || (HalfWorkspace::new(g), Vec::new()),
        |(half, u), rng, acc: &mut Vec<JointCounts>| {
            half.sample(g, &sampler, rng);
            draw_uniforms(model.bonds().len(), rng, u);
            model.add_bonds(u, 0.0, epsilon, &mut half.dsu);
            if acc.is_empty() {
                acc.resize(pairs.len(), JointCounts::default());
            }
            for (c, (a, b)) in acc.iter_mut().zip(pairs) {
                let a = model.occurs(a, u, epsilon, &mut half.dsu);
                let b = model.occurs(b, u, epsilon, &mut half.dsu);
                c.record(a, b);
            }
        },
    )?;
    Ok(t.iter()
        .zip(pairs)
        .map(|(t, (a, b))| {
            let (covariance, covariance_se) = t.covariance();
            let n = t.n as f64;
            let (pa, pb) = (t.a as f64 / n, t.b as f64 / n);
            let (a_lo, a_hi) = wilson_interval(t.a, t.n, Z_95);
            let (b_lo, b_hi) = wilson_interval(t.b, t.n, Z_95);
            FkgReport {
                lhs: t.ab as f64 / n,
                rhs: pa * pb,
                ci_lhs: wilson_interval(t.ab, t.n, Z_95),
                ci_rhs: (a_lo * b_lo, a_hi * b_hi),
                covariance,
                covariance_se,
                violation: covariance < -3.0 * covariance_se,
                replicas: t.n,
                seed: spec.master_seed,
                params: FkgParams { a: a.clone(), b: b.clone(), epsilon },
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub c_n: VertexSet,
    pub k_n: VertexSet,
    pub inner_boundary: VertexSet,
    pub inner_boundary2: VertexSet,
    /// 2-bonds `(x,y)(y,z)` with `x, y ∈ K_n` and `z ∈ C_n`.
    pub boundary_bonds: Vec<TwoBond>,
    /// `d(x0, C_n) > 2`.
    pub a_n: bool,
    /// `x0 ∈ C_n`, in which case `K_n` is empty.
    pub root_in_c: bool,
}

/// Boundary exploration of `B_n(x0)` from the sphere inward.
///
/// `C_n` is the set of vertices of `B_n` joined to the sphere by trace
/// edges with both endpoints in `B_n`; an open 2-bond contributes its two
/// edges.
pub fn explore_boundary(g: &MetricGraph, sample: &NoisedSample, x0: usize, n: usize) -> Result<ExplorationReport> {
    let ball = g.ball(x0, n)?;
    let sphere = g.sphere(x0, n)?;
    let nv = g.vertex_count();
    let inside = ball.mask(nv);
    let mut trace = sample.merged.trace_edges();
    let all_bonds = g.two_bonds();
    for &i in sample.noise.open_ids() {
        trace[all_bonds[i].e] = true;
        trace[all_bonds[i].f] = true;
    }
    let mut dsu = DisjointSet::new(nv);
    for (e, edge) in g.edges().iter().enumerate() {
        if trace[e] && inside[edge.u] && inside[edge.v] {
            dsu.union(edge.u, edge.v);
        }
    }
    let mut touches = vec![false; nv];
    for &s in sphere.iter() {
        let r = dsu.find(s);
        touches[r] = true;
    }
    let c_n = VertexSet::new(ball.iter().copied().filter(|&x| touches[dsu.find(x)]));
    let in_c = c_n.mask(nv);
    let root_in_c = in_c[x0];
    let mut in_k = vec![false; nv];
    if !root_in_c {
        let mut stack = vec![x0];
        in_k[x0] = true;
        while let Some(x) = stack.pop() {
            for nb in g.neighbors(x) {
                let y = nb.vertex;
                if inside[y] && !in_c[y] && !in_k[y] {
                    in_k[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    let k_n = VertexSet::new((0..nv).filter(|&x| in_k[x]));
    let dist = g.multi_source_distances(c_n.iter().copied());
    let at = |d: usize| VertexSet::new(k_n.iter().copied().filter(|&x| dist[x] == d));
    let mut boundary_bonds = Vec::new();
    for b in &all_bonds {
        let (x, y, z) = b.vertices(g);
        if in_k[y] && ((in_k[x] && in_c[z]) || (in_k[z] && in_c[x])) {
            boundary_bonds.push(*b);
        }
    }
    Ok(ExplorationReport {
        inner_boundary: at(1),
        inner_boundary2: at(2),
        a_n: dist[x0] == UNREACHABLE || dist[x0] > 2,
        c_n,
        k_n,
        boundary_bonds,
        root_in_c,
    })
}
