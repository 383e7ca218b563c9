//! Finite weighted metric graphs.
//!
//! A [`MetricGraph`] is stored through its skeleton: dense vertex ids, an edge
//! list of conductances `λ_uv > 0`, and a killing rate `κ_x ≥ 0` per vertex.
//! The cable of edge `(u, v)` is the interval of length `1 / (2 λ_uv)`; lengths
//! are always derived from the weights, never stored.
//!
//! Infinite graphs are represented by Dirichlet truncations: when a builder
//! cuts the graph, every missing neighbor of a boundary vertex is turned into
//! killing of the same weight.

use std::collections::{HashSet, VecDeque};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertex count that builders refuse to exceed unless told otherwise.
pub const DEFAULT_VERTEX_BUDGET: usize = 1 << 22;

/// Marker for unreachable vertices in distance tables.
pub const UNREACHABLE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

impl Edge {
    /// Cable length `1 / (2λ)`.
    pub fn length(&self) -> f64 {
        0.5 / self.weight
    }

    pub fn other(&self, x: usize) -> usize {
        if x == self.u {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub vertex: usize,
    pub edge: usize,
}

/// How a graph was produced. Kept for provenance and for geometry checks
/// (e.g. whether a ball fits inside a truncation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Custom,
    Pair {
        weight: f64,
        killing: f64,
    },
    Path {
        vertices: usize,
        weight: f64,
        killing: f64,
    },
    Star {
        leaves: usize,
        weight: f64,
        killing: f64,
    },
    LatticeBox {
        dim: usize,
        radius: usize,
        weight: f64,
        boundary_killing: bool,
        bulk_killing: f64,
    },
    RegularTree {
        degree: usize,
        depth: usize,
        weight: f64,
        boundary_killing: bool,
    },
    Subdivided {
        pieces: usize,
        base: Box<Family>,
    },
}

impl Family {
    /// Largest `n` such that the skeleton ball of radius `n` around the root
    /// lies strictly inside the truncation, when the family knows it.
    pub fn interior_radius(&self) -> Option<usize> {
        match self {
            Family::LatticeBox { radius, .. } => Some(radius.saturating_sub(1)),
            Family::RegularTree { depth, .. } => Some(depth.saturating_sub(1)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricGraph {
    vertex_count: usize,
    edges: Vec<Edge>,
    killing: Vec<f64>,
    total_rate: Vec<f64>,
    adj_offsets: Vec<usize>,
    adj: Vec<Neighbor>,
    coords: Option<Vec<Vec<i64>>>,
    family: Family,
    root: usize,
}

impl MetricGraph {
    /// Validates and builds a graph. Edges are unordered and must be unique;
    /// self-loops and parallel edges are rejected.
    pub fn new(vertex_count: usize, edges: Vec<Edge>, killing: Vec<f64>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::param("vertices", "graph needs at least one vertex"));
        }
        if killing.len() != vertex_count {
            return Err(Error::param(
                "killing",
                format!("expected {vertex_count} rates, got {}", killing.len()),
            ));
        }
        if let Some(k) = killing.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::param("killing", format!("rate {k} is not a finite nonnegative number")));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut degree = vec![0usize; vertex_count];
        let mut total_rate = killing.clone();
        for (id, e) in edges.iter().enumerate() {
            if e.u >= vertex_count || e.v >= vertex_count {
                return Err(Error::InvalidEdge(id));
            }
            if e.u == e.v {
                return Err(Error::param("edges", format!("edge {id} is a self-loop")));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::param("weight", format!("edge {id} has weight {}", e.weight)));
            }
            if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
                return Err(Error::param("edges", format!("edge {id} duplicates an earlier edge")));
            }
            degree[e.u] += 1;
            degree[e.v] += 1;
            total_rate[e.u] += e.weight;
            total_rate[e.v] += e.weight;
        }
        if let Some(x) = total_rate.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::param("killing", format!("vertex {x} has zero total rate")));
        }

        let mut adj_offsets = Vec::with_capacity(vertex_count + 1);
        adj_offsets.push(0);
        for d in &degree {
            adj_offsets.push(adj_offsets.last().unwrap() + d);
        }
        let mut fill = adj_offsets.clone();
        let mut adj = vec![Neighbor { vertex: 0, edge: 0 }; adj_offsets[vertex_count]];
        for (id, e) in edges.iter().enumerate() {
            adj[fill[e.u]] = Neighbor { vertex: e.v, edge: id };
            fill[e.u] += 1;
            adj[fill[e.v]] = Neighbor { vertex: e.u, edge: id };
            fill[e.v] += 1;
        }

        Ok(Self {
            vertex_count,
            edges,
            killing,
            total_rate,
            adj_offsets,
            adj,
            coords: None,
            family: Family::Custom,
            root: 0,
        })
    }

    pub(crate) fn with_family(mut self, family: Family, root: usize) -> Self {
        self.family = family;
        self.root = root;
        self
    }

    pub(crate) fn with_coords(mut self, coords: Vec<Vec<i64>>) -> Self {
        debug_assert_eq!(coords.len(), self.vertex_count);
        self.coords = Some(coords);
        self
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    pub fn killing(&self) -> &[f64] {
        &self.killing
    }

    /// `w(x) = Σ_y λ_xy + κ_x`.
    pub fn total_rate(&self, x: usize) -> f64 {
        self.total_rate[x]
    }

    pub fn total_rates(&self) -> &[f64] {
        &self.total_rate
    }

    pub fn neighbors(&self, x: usize) -> &[Neighbor] {
        &self.adj[self.adj_offsets[x]..self.adj_offsets[x + 1]]
    }

    pub fn degree(&self, x: usize) -> usize {
        self.adj_offsets[x + 1] - self.adj_offsets[x]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.vertex_count).map(|x| self.degree(x)).max().unwrap_or(0)
    }

    pub fn coords(&self) -> Option<&[Vec<i64>]> {
        self.coords.as_deref()
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Distinguished vertex: lattice origin, tree root, or vertex 0.
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn check_vertex(&self, x: usize) -> Result<()> {
        if x < self.vertex_count {
            Ok(())
        } else {
            Err(Error::InvalidVertex(x))
        }
    }

    /// Edge joining `x` and `y`, if any.
    pub fn edge_between(&self, x: usize, y: usize) -> Option<usize> {
        self.neighbors(x).iter().find(|n| n.vertex == y).map(|n| n.edge)
    }

    /// Skeleton graph distance from `x0` by breadth-first search;
    /// [`UNREACHABLE`] marks other components.
    pub fn distances_from(&self, x0: usize) -> Result<Vec<usize>> {
        self.check_vertex(x0)?;
        Ok(self.multi_source_distances(std::iter::once(x0)))
    }

    pub(crate) fn multi_source_distances(&self, sources: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut dist = vec![UNREACHABLE; self.vertex_count];
        let mut queue = VecDeque::new();
        for s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(x) = queue.pop_front() {
            for n in self.neighbors(x) {
                if dist[n.vertex] == UNREACHABLE {
                    dist[n.vertex] = dist[x] + 1;
                    queue.push_back(n.vertex);
                }
            }
        }
        dist
    }

    /// `B_n = {x : d(x0, x) ≤ n}`.
    pub fn ball(&self, x0: usize, n: usize) -> Result<VertexSet> {
        let dist = self.distances_from(x0)?;
        Ok(VertexSet::from_sorted((0..self.vertex_count).filter(|&x| dist[x] <= n).collect()))
    }

    /// `∂B_n = {x : d(x0, x) = n}`.
    pub fn sphere(&self, x0: usize, n: usize) -> Result<VertexSet> {
        let dist = self.distances_from(x0)?;
        Ok(VertexSet::from_sorted((0..self.vertex_count).filter(|&x| dist[x] == n).collect()))
    }

    /// All unordered pairs of distinct edges sharing a vertex, ordered by
    /// center and then by edge ids.
    pub fn two_bonds(&self) -> Vec<TwoBond> {
        let mut out = Vec::with_capacity(self.two_bond_count());
        let mut ids = Vec::new();
        for y in 0..self.vertex_count {
            ids.clear();
            ids.extend(self.neighbors(y).iter().map(|n| n.edge));
            ids.sort_unstable();
            for (i, &e) in ids.iter().enumerate() {
                for &f in &ids[i + 1..] {
                    out.push(TwoBond { center: y, e, f });
                }
            }
        }
        out
    }

    pub fn two_bond_count(&self) -> usize {
        (0..self.vertex_count)
            .map(|y| {
                let d = self.degree(y);
                d * d.saturating_sub(1) / 2
            })
            .sum()
    }

    /// The sub-graph induced on `kept`, with every edge leaving `kept`
    /// converted into killing at its inner endpoint. Returns the graph and
    /// the map from new ids to original ids.
    pub fn induced_with_killing(&self, kept: &VertexSet) -> Result<(MetricGraph, Vec<usize>)> {
        if kept.is_empty() {
            return Err(Error::EmptySet);
        }
        kept.check(self)?;
        let mut local = vec![UNREACHABLE; self.vertex_count];
        for (i, &x) in kept.iter().enumerate() {
            local[x] = i;
        }
        let mut killing: Vec<f64> = kept.iter().map(|&x| self.killing[x]).collect();
        let mut edges = Vec::new();
        for e in &self.edges {
            match (local[e.u], local[e.v]) {
                (UNREACHABLE, UNREACHABLE) => {}
                (UNREACHABLE, b) => killing[b] += e.weight,
                (a, UNREACHABLE) => killing[a] += e.weight,
                (a, b) => edges.push(Edge { u: a, v: b, weight: e.weight }),
            }
        }
        let g = MetricGraph::new(kept.len(), edges, killing)?;
        Ok((g, kept.as_slice().to_vec()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        file.into_graph()
    }

    pub fn write_json(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &GraphFile::from(self))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_json(r: impl Read) -> Result<Self> {
        let file: GraphFile = serde_json::from_reader(r)?;
        file.into_graph()
    }
}

impl PartialEq for MetricGraph {
    fn eq(&self, other: &Self) -> bool {
        self.vertex_count == other.vertex_count
            && self.edges == other.edges
            && self.killing == other.killing
            && self.coords == other.coords
            && self.family == other.family
            && self.root == other.root
    }
}

/// On-disk form of a graph.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    vertices: usize,
    edges: Vec<(usize, usize, f64)>,
    killing: Vec<f64>,
    #[serde(default = "custom_family")]
    family: Family,
    #[serde(default)]
    root: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<Vec<i64>>>,
}

fn custom_family() -> Family {
    Family::Custom
}

impl From<&MetricGraph> for GraphFile {
    fn from(g: &MetricGraph) -> Self {
        GraphFile {
            vertices: g.vertex_count,
            edges: g.edges.iter().map(|e| (e.u, e.v, e.weight)).collect(),
            killing: g.killing.clone(),
            family: g.family.clone(),
            root: g.root,
            coords: g.coords.clone(),
        }
    }
}

impl GraphFile {
    fn into_graph(self) -> Result<MetricGraph> {
        let edges = self.edges.into_iter().map(|(u, v, weight)| Edge { u, v, weight }).collect();
        let mut g = MetricGraph::new(self.vertices, edges, self.killing)?;
        g.check_vertex(self.root)?;
        if let Some(c) = &self.coords {
            if c.len() != self.vertices {
                return Err(Error::param("coords", "one coordinate vector per vertex expected"));
            }
        }
        g.coords = self.coords;
        Ok(g.with_family(self.family, self.root))
    }
}

/// Sorted set of vertex ids without duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexSet(Vec<usize>);

impl VertexSet {
    pub fn new(ids: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        VertexSet(v)
    }

    pub(crate) fn from_sorted(v: Vec<usize>) -> Self {
        debug_assert!(v.windows(2).all(|w| w[0] < w[1]));
        VertexSet(v)
    }

    pub fn all(g: &MetricGraph) -> Self {
        VertexSet((0..g.vertex_count()).collect())
    }

    pub fn check(&self, g: &MetricGraph) -> Result<()> {
        match self.0.last() {
            Some(&x) if x >= g.vertex_count() => Err(Error::InvalidVertex(x)),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: usize) -> bool {
        self.0.binary_search(&x).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_subset(&self, other: &VertexSet) -> bool {
        self.0.iter().all(|&x| other.contains(x))
    }

    pub fn union(&self, other: &VertexSet) -> VertexSet {
        VertexSet::new(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn difference(&self, other: &VertexSet) -> VertexSet {
        VertexSet(self.0.iter().copied().filter(|&x| !other.contains(x)).collect())
    }

    /// Indicator vector of length `n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &x in &self.0 {
            m[x] = true;
        }
        m
    }
}

impl FromIterator<usize> for VertexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        VertexSet::new(iter)
    }
}

impl<'a> IntoIterator for &'a VertexSet {
    type Item = &'a usize;
    type IntoIter = std::slice::Iter<'a, usize>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Two distinct edges `e < f` sharing the vertex `center`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TwoBond {
    pub center: usize,
    pub e: usize,
    pub f: usize,
}

impl TwoBond {
    pub fn new(g: &MetricGraph, center: usize, e: usize, f: usize) -> Result<Self> {
        g.check_vertex(center)?;
        for id in [e, f] {
            if id >= g.edge_count() {
                return Err(Error::InvalidEdge(id));
            }
            let edge = g.edge(id);
            if edge.u != center && edge.v != center {
                return Err(Error::param("two_bond", format!("edge {id} is not incident to {center}")));
            }
        }
        if e == f {
            return Err(Error::param("two_bond", "the two edges must differ"));
        }
        Ok(TwoBond { center, e: e.min(f), f: e.max(f) })
    }

    /// `(x, y, z)` for the 2-bond `(x,y)(y,z)`, with `y` the center.
    pub fn vertices(&self, g: &MetricGraph) -> (usize, usize, usize) {
        let y = self.center;
        (g.edge(self.e).other(y), y, g.edge(self.f).other(y))
    }
}

fn check_budget(requested: u128, budget: usize) -> Result<usize> {
    if requested > budget as u128 {
        Err(Error::BudgetExceeded { requested, budget })
    } else {
        Ok(requested as usize)
    }
}

fn check_weight(weight: f64) -> Result<()> {
    if weight.is_finite() && weight > 0.0 {
        Ok(())
    } else {
        Err(Error::param("weight", format!("must be positive, got {weight}")))
    }
}

fn check_killing(name: &'static str, k: f64) -> Result<()> {
    if k.is_finite() && k >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be nonnegative, got {k}")))
    }
}

/// Two vertices joined by one edge, both killed at the same rate.
pub fn pair(weight: f64, killing: f64) -> Result<MetricGraph> {
    check_weight(weight)?;
    check_killing("killing", killing)?;
    Ok(MetricGraph::new(2, vec![Edge { u: 0, v: 1, weight }], vec![killing; 2])?
        .with_family(Family::Pair { weight, killing }, 0))
}

/// Path `0 - 1 - ... - (vertices-1)` with uniform weight and killing.
pub fn path(vertices: usize, weight: f64, killing: f64) -> Result<MetricGraph> {
    check_weight(weight)?;
    check_killing("killing", killing)?;
    if vertices == 0 {
        return Err(Error::param("vertices", "path needs at least one vertex"));
    }
    let edges = (1..vertices).map(|i| Edge { u: i - 1, v: i, weight }).collect();
    Ok(MetricGraph::new(vertices, edges, vec![killing; vertices])?
        .with_family(Family::Path { vertices, weight, killing }, 0))
}

/// Center 0 joined to `leaves` leaves.
pub fn star(leaves: usize, weight: f64, killing: f64) -> Result<MetricGraph> {
    check_weight(weight)?;
    check_killing("killing", killing)?;
    let edges = (1..=leaves).map(|i| Edge { u: 0, v: i, weight }).collect();
    Ok(MetricGraph::new(leaves + 1, edges, vec![killing; leaves + 1])?
        .with_family(Family::Star { leaves, weight, killing }, 0))
}

/// The box `{-radius..radius}^dim` of the nearest-neighbour lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeBox {
    pub dim: usize,
    pub radius: usize,
    pub weight: f64,
    /// Give each boundary vertex killing equal to the weight of its missing
    /// neighbours.
    pub boundary_killing: bool,
    pub bulk_killing: f64,
}

impl LatticeBox {
    pub fn new(dim: usize, radius: usize) -> Self {
        LatticeBox {
            dim,
            radius,
            weight: 1.0,
            boundary_killing: true,
            bulk_killing: 0.0,
        }
    }

    pub fn build(&self) -> Result<MetricGraph> {
        self.build_with_budget(DEFAULT_VERTEX_BUDGET)
    }

    pub fn build_with_budget(&self, budget: usize) -> Result<MetricGraph> {
        let LatticeBox { dim, radius, weight, boundary_killing, bulk_killing } = *self;
        if dim == 0 {
            return Err(Error::param("dim", "dimension must be at least 1"));
        }
        if radius == 0 {
            return Err(Error::param("radius", "radius must be at least 1"));
        }
        check_weight(weight)?;
        check_killing("bulk_killing", bulk_killing)?;
        let side = 2 * radius as u128 + 1;
        let requested = side.checked_pow(dim as u32).unwrap_or(u128::MAX);
        let n = check_budget(requested, budget)?;
        let side = side as usize;

        // Lexicographic order, last coordinate fastest.
        let mut stride = vec![1usize; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            stride[k] = stride[k + 1] * side;
        }
        let mut coords = Vec::with_capacity(n);
        let mut edges = Vec::with_capacity(n * dim);
        let mut killing = vec![bulk_killing; n];
        let r = radius as i64;
        for id in 0..n {
            let c: Vec<i64> = (0..dim).map(|k| ((id / stride[k]) % side) as i64 - r).collect();
            let mut missing = 0usize;
            for k in 0..dim {
                if c[k] < r {
                    edges.push(Edge { u: id, v: id + stride[k], weight });
                } else {
                    missing += 1;
                }
                if c[k] == -r {
                    missing += 1;
                }
            }
            if boundary_killing {
                killing[id] += missing as f64 * weight;
            }
            coords.push(c);
        }
        let origin = (0..dim).map(|k| radius * stride[k]).sum();
        Ok(MetricGraph::new(n, edges, killing)?
            .with_coords(coords)
            .with_family(
                Family::LatticeBox { dim, radius, weight, boundary_killing, bulk_killing },
                origin,
            ))
    }
}

/// Rooted truncation of the `degree`-regular tree at depth `depth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularTree {
    pub degree: usize,
    pub depth: usize,
    pub weight: f64,
    pub boundary_killing: bool,
}

impl RegularTree {
    pub fn new(degree: usize, depth: usize) -> Self {
        RegularTree { degree, depth, weight: 1.0, boundary_killing: true }
    }

    pub fn vertex_count(&self) -> u128 {
        let mut total: u128 = 1;
        let mut level: u128 = 1;
        for h in 0..self.depth {
            let branching = if h == 0 { self.degree } else { self.degree - 1 } as u128;
            level = level.saturating_mul(branching);
            total = total.saturating_add(level);
        }
        total
    }

    pub fn build(&self) -> Result<MetricGraph> {
        self.build_with_budget(DEFAULT_VERTEX_BUDGET)
    }

    pub fn build_with_budget(&self, budget: usize) -> Result<MetricGraph> {
        let RegularTree { degree, depth, weight, boundary_killing } = *self;
        if degree < 3 {
            return Err(Error::param("degree", format!("regular trees need degree >= 3, got {degree}")));
        }
        if depth == 0 {
            return Err(Error::param("depth", "depth must be at least 1"));
        }
        check_weight(weight)?;
        let n = check_budget(self.vertex_count(), budget)?;

        let mut edges = Vec::with_capacity(n - 1);
        let mut killing = vec![0.0; n];
        let mut frontier = vec![0usize];
        let mut next_id = 1;
        for h in 0..depth {
            let branching = if h == 0 { degree } else { degree - 1 };
            let mut next = Vec::with_capacity(frontier.len() * branching);
            for &parent in &frontier {
                for _ in 0..branching {
                    edges.push(Edge { u: parent, v: next_id, weight });
                    next.push(next_id);
                    next_id += 1;
                }
            }
            frontier = next;
        }
        if boundary_killing {
            for &leaf in &frontier {
                killing[leaf] = (degree - 1) as f64 * weight;
            }
        }
        Ok(MetricGraph::new(n, edges, killing)?
            .with_family(Family::RegularTree { degree, depth, weight, boundary_killing }, 0))
    }
}

/// Replaces every cable by `pieces` cables of weight `pieces·λ` in series.
///
/// Original vertex ids are kept; the fresh vertices of edge `e` are appended
/// in order from `u` to `v` and carry no killing. Edge `e` of the input
/// becomes edges `e·pieces .. (e+1)·pieces` of the output, again from `u` to
/// `v`. The metric space is unchanged: `pieces · 1/(2·pieces·λ) = 1/(2λ)`.
pub fn subdivide(g: &MetricGraph, pieces: usize) -> Result<MetricGraph> {
    subdivide_with_budget(g, pieces, DEFAULT_VERTEX_BUDGET)
}

pub fn subdivide_with_budget(g: &MetricGraph, pieces: usize, budget: usize) -> Result<MetricGraph> {
    if pieces == 0 {
        return Err(Error::param("pieces", "need at least one piece per edge"));
    }
    if pieces == 1 {
        return Ok(g.clone());
    }
    let requested = g.vertex_count() as u128 + g.edge_count() as u128 * (pieces as u128 - 1);
    let n = check_budget(requested, budget)?;
    let mut edges = Vec::with_capacity(g.edge_count() * pieces);
    let mut next = g.vertex_count();
    for e in g.edges() {
        let weight = e.weight * pieces as f64;
        let mut prev = e.u;
        for _ in 1..pieces {
            edges.push(Edge { u: prev, v: next, weight });
            prev = next;
            next += 1;
        }
        edges.push(Edge { u: prev, v: e.v, weight });
    }
    let mut killing = g.killing().to_vec();
    killing.resize(n, 0.0);
    let mut out = MetricGraph::new(n, edges, killing)?.with_family(
        Family::Subdivided { pieces, base: Box::new(g.family().clone()) },
        g.root(),
    );
    if let Some(c) = g.coords() {
        // fresh vertices have no lattice position; keep ids aligned only
        let mut coords = c.to_vec();
        coords.resize(n, Vec::new());
        out = out.with_coords(coords);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_sphere(g: &MetricGraph, x0: usize, n: usize) -> Vec<usize> {
        // Floyd–Warshall style relaxation, independent of the BFS path.
        let v = g.vertex_count();
        let mut d = vec![vec![UNREACHABLE; v]; v];
        for x in 0..v {
            d[x][x] = 0;
        }
        for e in g.edges() {
            d[e.u][e.v] = 1;
            d[e.v][e.u] = 1;
        }
        for k in 0..v {
            for i in 0..v {
                for j in 0..v {
                    if d[i][k] != UNREACHABLE && d[k][j] != UNREACHABLE && d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        (0..v).filter(|&x| d[x0][x] == n).collect()
    }

    #[test]
    fn path_box_in_one_dimension() {
        let g = LatticeBox { dim: 1, radius: 1, weight: 1.0, boundary_killing: false, bulk_killing: 1.0 }
            .build()
            .unwrap();
        assert_eq!(g.vertex_count(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.total_rate(g.root()), 3.0);
    }

    #[test]
    fn cube_counts() {
        let g = LatticeBox::new(3, 2).build().unwrap();
        assert_eq!(g.vertex_count(), 125);
        assert_eq!(g.edge_count(), 3 * 5 * 5 * 4);
        assert_eq!(g.coords().unwrap()[g.root()], vec![0, 0, 0]);
    }

    #[test]
    fn dirichlet_corner_killing() {
        let g = LatticeBox { dim: 2, radius: 1, weight: 1.5, boundary_killing: true, bulk_killing: 0.0 }
            .build()
            .unwrap();
        // vertex 0 is the corner (-1, -1)
        assert_eq!(g.killing()[0], 3.0);
        assert_eq!(g.killing()[g.root()], 0.0);
        for x in 0..g.vertex_count() {
            assert!((g.total_rate(x) - 4.0 * 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn lattice_errors() {
        assert!(matches!(
            LatticeBox { weight: 0.0, ..LatticeBox::new(2, 2) }.build(),
            Err(Error::InvalidParameter { name: "weight", .. })
        ));
        assert!(matches!(
            LatticeBox::new(3, 10).build_with_budget(1000),
            Err(Error::BudgetExceeded { requested: 9261, .. })
        ));
        assert!(matches!(
            LatticeBox::new(64, 100).build(),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn trees() {
        let g = RegularTree::new(3, 1).build().unwrap();
        assert_eq!((g.vertex_count(), g.edge_count()), (4, 3));
        let g = RegularTree::new(3, 3).build().unwrap();
        assert_eq!(g.vertex_count(), 22);
        assert_eq!(g.killing()[21], 2.0);
        assert_eq!(g.killing()[0], 0.0);
        assert!(RegularTree::new(2, 3).build().is_err());
        assert!(RegularTree::new(4, 20).build_with_budget(1 << 20).is_err());
    }

    #[test]
    fn subdivision_rule() {
        let g = pair(1.0, 1.0).unwrap();
        assert_eq!(subdivide(&g, 1).unwrap(), g);
        let s = subdivide(&g, 2).unwrap();
        assert_eq!(s.vertex_count(), 3);
        assert_eq!(s.edges().iter().map(|e| e.weight).collect::<Vec<_>>(), vec![2.0, 2.0]);
        assert_eq!(s.total_rate(2), 4.0);
        assert_eq!(s.killing()[2], 0.0);
        assert!(subdivide(&g, 0).is_err());
    }

    #[test]
    fn subdivision_preserves_cable_length_exactly() {
        // Integer weights: compare lengths as fractions 1/(2λ).
        let g = MetricGraph::new(
            3,
            vec![Edge { u: 0, v: 1, weight: 3.0 }, Edge { u: 1, v: 2, weight: 7.0 }],
            vec![1.0, 0.0, 2.0],
        )
        .unwrap();
        for m in [2usize, 3, 5, 8] {
            let s = subdivide(&g, m).unwrap();
            for (e, orig) in g.edges().iter().enumerate() {
                let pieces = &s.edges()[e * m..(e + 1) * m];
                let orig_den = 2 * orig.weight as u64;
                for p in pieces {
                    assert_eq!(p.weight.fract(), 0.0);
                    // m · 1/(2 w_p) == 1/(2 λ)  <=>  m · 2λ == 2 w_p
                    assert_eq!(m as u64 * orig_den, 2 * p.weight as u64);
                }
                assert_eq!(pieces[0].u, orig.u);
                assert_eq!(pieces[m - 1].v, orig.v);
            }
        }
    }

    #[test]
    fn balls_and_spheres() {
        let g = LatticeBox::new(3, 4).build().unwrap();
        let x0 = g.root();
        assert_eq!(g.ball(x0, 0).unwrap().as_slice(), &[x0]);
        let s2 = g.sphere(x0, 2).unwrap();
        assert_eq!(s2.len(), 18);
        assert_eq!(s2.as_slice(), brute_sphere(&g, x0, 2).as_slice());
        assert!(g.sphere(x0, 13).unwrap().is_empty());
        assert!(g.ball(x0, 999).unwrap().len() == g.vertex_count());
        assert!(matches!(g.ball(10_000, 1), Err(Error::InvalidVertex(10_000))));
        for n in 1..6 {
            let b = g.ball(x0, n).unwrap();
            let prev = g.ball(x0, n - 1).unwrap();
            assert_eq!(b.difference(&prev), g.sphere(x0, n).unwrap());
            assert!(prev.is_subset(&b));
        }
    }

    #[test]
    fn two_bond_enumeration() {
        assert_eq!(path(3, 1.0, 1.0).unwrap().two_bonds().len(), 1);
        assert_eq!(star(3, 1.0, 1.0).unwrap().two_bonds().len(), 3);
        assert_eq!(pair(1.0, 1.0).unwrap().two_bonds().len(), 0);
        let g = LatticeBox::new(2, 2).build().unwrap();
        let bonds = g.two_bonds();
        assert_eq!(bonds.len(), g.two_bond_count());
        assert_eq!(bonds.len(), 94);
        let unique: HashSet<_> = bonds.iter().collect();
        assert_eq!(unique.len(), bonds.len());
        for b in &bonds {
            assert!(b.e < b.f);
            let (x, y, z) = b.vertices(&g);
            assert!(x != z && x != y && y != z);
        }
    }

    #[test]
    fn rejects_bad_graphs() {
        let e = |u, v, weight| Edge { u, v, weight };
        assert!(MetricGraph::new(2, vec![e(0, 0, 1.0)], vec![1.0; 2]).is_err());
        assert!(MetricGraph::new(2, vec![e(0, 1, 1.0), e(1, 0, 2.0)], vec![1.0; 2]).is_err());
        assert!(MetricGraph::new(2, vec![e(0, 1, -1.0)], vec![1.0; 2]).is_err());
        assert!(MetricGraph::new(3, vec![e(0, 1, 1.0)], vec![1.0, 1.0, 0.0]).is_err());
        assert!(MetricGraph::new(2, vec![e(0, 2, 1.0)], vec![1.0; 2]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = LatticeBox { weight: 0.1, bulk_killing: 1.0 / 3.0, ..LatticeBox::new(2, 2) }.build().unwrap();
        let back = MetricGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        let t = subdivide(&RegularTree::new(3, 2).build().unwrap(), 3).unwrap();
        assert_eq!(MetricGraph::from_json(&t.to_json().unwrap()).unwrap(), t);
        assert!(MetricGraph::from_json(r#"{"vertices":1,"edges":[],"killing":[1.0],"extra":1}"#).is_err());
    }

    #[test]
    fn induced_subgraph_turns_exits_into_killing() {
        let g = path(4, 2.0, 0.5).unwrap();
        let (h, map) = g.induced_with_killing(&VertexSet::new([1, 2])).unwrap();
        assert_eq!(map, vec![1, 2]);
        assert_eq!(h.edge_count(), 1);
        assert_eq!(h.killing(), &[2.5, 2.5]);
    }
}
