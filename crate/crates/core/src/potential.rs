//! Exact potential theory on a metric graph, evaluated at vertices.
//!
//! The Green's function of the jump process (expected local time, i.e.
//! expected visits divided by `w(y)`) is `M⁻¹` for the operator
//! `M_xx = w(x)`, `M_xy = -λ_xy`. Killing outside a kept set `K` is obtained by
//! restricting `M` to `K × K`; on vertices it coincides with the metric graph
//! Green's function.

use std::f64::consts::FRAC_2_PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{MetricGraph, VertexSet, UNREACHABLE};
use crate::linalg::{conjugate_gradient, OrderedCholesky, Precision, ProfileCholesky};

/// Kept sets larger than this are solved iteratively under [`Solver::Auto`].
pub const DIRECT_SOLVE_LIMIT: usize = 4000;
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-10;
pub const ITERATIVE_RESIDUAL_TOL: f64 = 1e-8;
/// Slack allowed when a Green ratio exceeds 1 through rounding.
pub const RATIO_CLAMP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Solver {
    #[default]
    Auto,
    Direct,
    Iterative,
}

/// Dense symmetric table of `G_K(x, y)` for `x, y` in the kept set `K`.
#[derive(Clone, Debug)]
pub struct GreenTable {
    domain: VertexSet,
    index: Vec<usize>,
    values: Vec<f64>,
    residual: f64,
}

impl GreenTable {
    /// Full Green table, or the one killed outside `killed_outside` when given.
    pub fn compute(g: &MetricGraph, killed_outside: Option<&VertexSet>) -> Result<Self> {
        Self::compute_with(g, killed_outside, Solver::Auto)
    }

    pub fn compute_with(g: &MetricGraph, killed_outside: Option<&VertexSet>, solver: Solver) -> Result<Self> {
        let precision = Precision::new(g, killed_outside)?;
        let a = precision.matrix();
        let k = a.len();
        let iterative = match solver {
            Solver::Auto => k > DIRECT_SOLVE_LIMIT,
            Solver::Direct => false,
            Solver::Iterative => true,
        };
        let mut values = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        if iterative {
            for j in 0..k {
                rhs[j] = 1.0;
                let col = &mut values[j * k..(j + 1) * k];
                conjugate_gradient(a, &rhs, col, 0.1 * ITERATIVE_RESIDUAL_TOL, 20 * k + 100)?;
                rhs[j] = 0.0;
            }
        } else {
            let chol = OrderedCholesky::new(a)?;
            let mut scratch = vec![0.0; k];
            for j in 0..k {
                rhs[j] = 1.0;
                chol.solve_into(&rhs, &mut values[j * k..(j + 1) * k], &mut scratch);
                rhs[j] = 0.0;
            }
        }
        // columns were stored as rows; the table is symmetric up to rounding
        for i in 0..k {
            for j in i + 1..k {
                let m = 0.5 * (values[i * k + j] + values[j * k + i]);
                values[i * k + j] = m;
                values[j * k + i] = m;
            }
        }
        let residual = operator_residual(&precision, &values);
        let tol = if iterative { ITERATIVE_RESIDUAL_TOL } else { DIRECT_RESIDUAL_TOL };
        if !(residual <= tol) {
            return Err(Error::Numeric(format!("Green table residual {residual:e} exceeds {tol:e}")));
        }
        let mut index = vec![UNREACHABLE; g.vertex_count()];
        for (i, &x) in precision.kept().iter().enumerate() {
            index[x] = i;
        }
        Ok(GreenTable { domain: precision.kept().clone(), index, values, residual })
    }

    pub fn domain(&self) -> &VertexSet {
        &self.domain
    }

    /// Max-norm of `M G - I`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn position(&self, x: usize) -> Result<usize> {
        match self.index.get(x) {
            Some(&i) if i != UNREACHABLE => Ok(i),
            _ => Err(Error::InvalidVertex(x)),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Result<f64> {
        let (i, j) = (self.position(x)?, self.position(y)?);
        Ok(self.at(i, j))
    }

    /// Value at domain positions `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.domain.len() + j]
    }

    /// Writes `x,y,value` rows for every ordered pair of the domain.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "x,y,value")?;
        for (i, &x) in self.domain.iter().enumerate() {
            for (j, &y) in self.domain.iter().enumerate() {
                writeln!(w, "{x},{y},{}", self.at(i, j))?;
            }
        }
        Ok(())
    }
}

fn operator_residual(p: &Precision, values: &[f64]) -> f64 {
    let a = p.matrix();
    let k = a.len();
    let mut out = vec![0.0; k];
    let mut worst = 0.0f64;
    for j in 0..k {
        a.mul_vec(&values[j * k..(j + 1) * k], &mut out);
        out[j] -= 1.0;
        worst = out.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    worst
}

/// Probability that the process started at `x` hits `y` before leaving the
/// kept set or being killed: `G_K(x, y) / G_K(y, y)`.
pub fn hitting_probability(table: &GreenTable, x: usize, y: usize) -> Result<f64> {
    Ok(table.get(x, y)? / table.get(y, y)?)
}

/// `(2/π) arcsin(G_K(x,y) / √(G_K(x,x) G_K(y,y)))`, the probability that
/// `x` and `y` are joined inside `K` by the intensity-1/2 metric loop soup.
pub fn two_point_exact(table: &GreenTable, x: usize, y: usize) -> Result<f64> {
    let ratio = table.get(x, y)? / (table.get(x, x)? * table.get(y, y)?).sqrt();
    if !(ratio >= -RATIO_CLAMP_TOL && ratio <= 1.0 + RATIO_CLAMP_TOL) {
        return Err(Error::Numeric(format!("Green ratio {ratio} outside [0, 1]")));
    }
    Ok(FRAC_2_PI * ratio.clamp(0.0, 1.0).asin())
}

#[derive(Clone, Debug, Serialize)]
pub struct CapacityResult {
    pub set: VertexSet,
    pub capacity: f64,
    /// Equilibrium weights on `set`, in the order of `set`.
    pub equilibrium_measure: Vec<f64>,
    /// Green energy of the normalized equilibrium measure; equals `1/capacity`.
    pub energy: f64,
    /// Members whose equilibrium weight came out negative (degenerate set).
    pub negative: Vec<usize>,
}

/// Capacity of `set` by solving `G|_{A×A} e = 1`; `cap(A) = Σ e` and
/// `e / Σ e` minimizes the Green energy over probability measures on `A`.
pub fn capacity(table: &GreenTable, set: &VertexSet) -> Result<CapacityResult> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let pos: Vec<usize> = set.iter().map(|&x| table.position(x)).collect::<Result<_>>()?;
    let k = pos.len();
    let mut sub = vec![0.0; k * k];
    for (a, &i) in pos.iter().enumerate() {
        for (b, &j) in pos.iter().enumerate() {
            sub[a * k + b] = table.at(i, j);
        }
    }
    let chol = ProfileCholesky::dense(&sub, k)
        .map_err(|e| Error::Numeric(format!("restricted Green matrix is singular: {e}")))?;
    let mut e = vec![1.0; k];
    chol.solve(&mut e);
    let capacity: f64 = e.iter().sum();
    let negative = set.iter().zip(&e).filter(|(_, w)| **w < 0.0).map(|(&x, _)| x).collect();
    let mut energy = 0.0;
    for a in 0..k {
        for b in 0..k {
            energy += e[a] * sub[a * k + b] * e[b];
        }
    }
    energy /= capacity * capacity;
    Ok(CapacityResult { set: set.clone(), capacity, equilibrium_measure: e, energy, negative })
}

#[derive(Clone, Debug, Serialize)]
pub struct CapGrowthRow {
    pub size: usize,
    pub capacity: f64,
    /// Strictly larger set with (numerically) the same capacity.
    pub stalled: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CapGrowth {
    pub rows: Vec<CapGrowthRow>,
    pub warnings: Vec<String>,
}

impl CapGrowth {
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].capacity >= w[0].capacity * (1.0 - 1e-12))
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].capacity > w[0].capacity)
    }
}

/// Capacities along a nested sequence of connected sets.
pub fn cap_growth_diagnostic(g: &MetricGraph, table: &GreenTable, sets: &[VertexSet]) -> Result<CapGrowth> {
    let mut rows: Vec<CapGrowthRow> = Vec::with_capacity(sets.len());
    let mut warnings = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        if !is_connected(g, set) {
            return Err(Error::param("sets", format!("set {i} is not connected")));
        }
        let cap = capacity(table, set)?.capacity;
        let mut stalled = false;
        if i > 0 {
            let prev = &sets[i - 1];
            if !prev.is_subset(set) {
                return Err(Error::param("sets", format!("set {} is not contained in set {i}", i - 1)));
            }
            let before = rows[i - 1].capacity;
            if set.len() > prev.len() && (cap - before).abs() <= 1e-12 * before {
                stalled = true;
                warnings.push(format!("set {i} strictly contains set {} but capacity did not grow", i - 1));
            } else if cap < before * (1.0 - 1e-12) {
                warnings.push(format!("capacity decreased from set {} to set {i}", i - 1));
            }
        }
        rows.push(CapGrowthRow { size: set.len(), capacity: cap, stalled });
    }
    Ok(CapGrowth { rows, warnings })
}

fn is_connected(g: &MetricGraph, set: &VertexSet) -> bool {
    let Some(&start) = set.iter().next() else { return true };
    let inside = set.mask(g.vertex_count());
    let mut seen = vec![false; g.vertex_count()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 1;
    while let Some(x) = stack.pop() {
        for n in g.neighbors(x) {
            if inside[n.vertex] && !seen[n.vertex] {
                seen[n.vertex] = true;
                count += 1;
                stack.push(n.vertex);
            }
        }
    }
    count == set.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{pair, path, subdivide, Edge, LatticeBox, RegularTree};

    fn two_vertex() -> GreenTable {
        GreenTable::compute(&pair(1.0, 1.0).unwrap(), None).unwrap()
    }

    #[test]
    fn single_vertex() {
        let g = MetricGraph::new(1, vec![], vec![2.0]).unwrap();
        let t = GreenTable::compute(&g, None).unwrap();
        assert!((t.get(0, 0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_vertex_values() {
        // Jump chain: return probability 1/4, so 4/3 expected visits at rate 2.
        let t = two_vertex();
        assert!((t.get(0, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.get(0, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(t.residual() <= DIRECT_RESIDUAL_TOL);
        assert!((hitting_probability(&t, 0, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(hitting_probability(&t, 1, 1).unwrap(), 1.0);
        assert!((two_point_exact(&t, 0, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(two_point_exact(&t, 0, 0).unwrap(), 1.0);
        assert!(matches!(t.get(0, 7), Err(Error::InvalidVertex(7))));
    }

    #[test]
    fn disconnected_pair_has_zero_connection() {
        let g = path(3, 1.0, 1.0).unwrap();
        let t = GreenTable::compute(&g, Some(&VertexSet::new([0, 2]))).unwrap();
        assert_eq!(hitting_probability(&t, 0, 2).unwrap(), 0.0);
        assert_eq!(two_point_exact(&t, 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn not_transient() {
        let g = path(3, 1.0, 0.0).unwrap();
        assert!(matches!(GreenTable::compute(&g, None), Err(Error::NotTransient { .. })));
    }

    #[test]
    fn killed_table_equals_induced_graph_table() {
        let g = LatticeBox::new(2, 3).build().unwrap();
        let kept: VertexSet = g.ball(g.root(), 2).unwrap().iter().copied().filter(|&x| x % 3 != 0).collect();
        let killed = GreenTable::compute(&g, Some(&kept)).unwrap();
        let (h, map) = g.induced_with_killing(&kept).unwrap();
        let full = GreenTable::compute(&h, None).unwrap();
        for i in 0..map.len() {
            for j in 0..map.len() {
                assert!((killed.get(map[i], map[j]).unwrap() - full.get(i, j).unwrap()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn subdivision_invariance_on_tree() {
        let g = RegularTree::new(3, 3).build().unwrap();
        let t = GreenTable::compute(&g, None).unwrap();
        for m in [2, 4, 8] {
            let s = GreenTable::compute(&subdivide(&g, m).unwrap(), None).unwrap();
            for x in 0..g.vertex_count() {
                for y in 0..g.vertex_count() {
                    assert!((s.get(x, y).unwrap() - t.get(x, y).unwrap()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn iterative_agrees_with_direct() {
        let g = LatticeBox::new(3, 2).build().unwrap();
        let a = GreenTable::compute_with(&g, None, Solver::Direct).unwrap();
        let b = GreenTable::compute_with(&g, None, Solver::Iterative).unwrap();
        assert!(b.residual() <= ITERATIVE_RESIDUAL_TOL);
        for i in 0..g.vertex_count() {
            for j in 0..g.vertex_count() {
                assert!((a.at(i, j) - b.at(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn capacity_two_vertex() {
        let t = two_vertex();
        let one = capacity(&t, &VertexSet::new([0])).unwrap();
        assert!((one.capacity - 1.5).abs() < 1e-12);
        let both = capacity(&t, &VertexSet::new([0, 1])).unwrap();
        assert!((both.capacity - 2.0).abs() < 1e-12);
        assert!((both.equilibrium_measure[0] - 1.0).abs() < 1e-12);
        // uniform measure energy: (2/3 + 2/3 + 1/3 + 1/3) / 4 = 1/2
        assert!((both.energy - 0.5).abs() < 1e-12);
        assert!(capacity(&t, &VertexSet::default()).is_err());
    }

    /// Minimizes `μᵀ G μ` over a grid on the probability simplex.
    fn brute_force_energy(t: &GreenTable, set: &[usize], steps: usize) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=steps - a {
                let mu = [a as f64 / steps as f64, b as f64 / steps as f64, (steps - a - b) as f64 / steps as f64];
                let mut e = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        e += mu[i] * mu[j] * t.get(set[i], set[j]).unwrap();
                    }
                }
                best = best.min(e);
            }
        }
        best
    }

    #[test]
    fn capacity_matches_variational_oracle() {
        let graphs = [
            path(3, 1.0, 1.0).unwrap(),
            MetricGraph::new(
                3,
                vec![Edge { u: 0, v: 1, weight: 2.0 }, Edge { u: 1, v: 2, weight: 0.5 }, Edge { u: 0, v: 2, weight: 1.0 }],
                vec![0.3, 1.0, 0.0],
            )
            .unwrap(),
        ];
        for g in &graphs {
            let t = GreenTable::compute(g, None).unwrap();
            let all = VertexSet::all(g);
            let cap = capacity(&t, &all).unwrap();
            let min_energy = brute_force_energy(&t, &[0, 1, 2], 300);
            assert!(cap.negative.is_empty());
            // grid optimum is within O(1/steps²) of the true infimum
            assert!((1.0 / cap.capacity - min_energy).abs() < 1e-4, "{} vs {}", 1.0 / cap.capacity, min_energy);
            assert!(1.0 / cap.capacity <= min_energy + 1e-12);
            let bound: f64 = (0..3).map(|x| 1.0 / t.get(x, x).unwrap()).sum();
            assert!(cap.capacity <= bound);
            for x in 0..3 {
                let single = capacity(&t, &VertexSet::new([x])).unwrap();
                assert!((single.capacity * t.get(x, x).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn capacity_grows_along_lattice_path() {
        let g = LatticeBox::new(3, 3).build().unwrap();
        let t = GreenTable::compute(&g, None).unwrap();
        let coords = g.coords().unwrap();
        let on_axis = |k: i64| (0..g.vertex_count()).find(|&x| coords[x] == vec![k, 0, 0]).unwrap();
        let sets: Vec<VertexSet> = (0..=6).map(|len| VertexSet::new((0..=len).map(|k| on_axis(k - 3)))).collect();
        let growth = cap_growth_diagnostic(&g, &t, &sets).unwrap();
        assert!(growth.is_strictly_increasing());
        assert!(growth.warnings.is_empty());

        let same = vec![VertexSet::new([g.root()]); 3];
        let rep = cap_growth_diagnostic(&g, &t, &same).unwrap();
        assert!(rep.rows.iter().all(|r| r.capacity == rep.rows[0].capacity && !r.stalled));

        let bad = vec![sets[3].clone(), sets[1].clone()];
        assert!(cap_growth_diagnostic(&g, &t, &bad).is_err());
        let split = vec![VertexSet::new([on_axis(-3), on_axis(3)])];
        assert!(cap_growth_diagnostic(&g, &t, &split).is_err());
    }

    #[test]
    fn stalled_growth_is_flagged() {
        // Vertex 1 can only die through vertex 0: G = [[1, 1], [1, 2]], so
        // the equilibrium measure of {0, 1} is (1, 0) and nothing is gained.
        let g = MetricGraph::new(2, vec![Edge { u: 0, v: 1, weight: 1.0 }], vec![1.0, 0.0]).unwrap();
        let t = GreenTable::compute(&g, None).unwrap();
        let rep = cap_growth_diagnostic(&g, &t, &[VertexSet::new([0]), VertexSet::new([0, 1])]).unwrap();
        assert!(rep.rows[1].stalled);
        assert_eq!(rep.warnings.len(), 1);
        assert!(rep.is_monotone());
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        two_vertex().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("x,y,value\n0,0,0.6666666666666"));
    }
}
