//! Sparse symmetric positive-definite systems built from graph operators.
//!
//! Direct solves use an envelope (profile) Cholesky factorization: row `i`
//! of the factor is stored densely from its first structural nonzero up to
//! the diagonal, and fill never escapes the envelope. Lattice boxes in
//! lexicographic order have envelope width `side^(d-1)`, which keeps desk
//! scale problems cheap. Large systems can use Jacobi-preconditioned
//! conjugate gradients instead.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::{MetricGraph, VertexSet, UNREACHABLE};

/// Symmetric matrix with a dense diagonal and sparse off-diagonal rows.
#[derive(Clone, Debug)]
pub struct SparseSym {
    diag: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let mut s = self.diag[i] * x[i];
            for (j, a) in self.row(i) {
                s += a * x[j];
            }
            out[i] = s;
        }
    }

    /// The same matrix with rows and columns renumbered: new index `i`
    /// holds old index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SparseSym {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut offsets = Vec::with_capacity(self.len() + 1);
        offsets.push(0);
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        let mut diag = Vec::with_capacity(self.len());
        for &old in perm {
            diag.push(self.diag[old]);
            for (j, a) in self.row(old) {
                cols.push(inv[j]);
                vals.push(a);
            }
            offsets.push(cols.len());
        }
        SparseSym { diag, offsets, cols, vals }
    }

    /// Envelope size `Σ_i (i - first(i))` for the current numbering.
    pub fn profile(&self) -> usize {
        (0..self.len())
            .map(|i| i - self.row(i).map(|(j, _)| j).filter(|&j| j < i).min().unwrap_or(i))
            .sum()
    }
}

/// Weighted Laplacian-plus-killing operator `M` (`M_xx = w(x)`,
/// `M_xy = -λ_xy`) restricted to a kept vertex set. Exterior neighbours act
/// as killing because `w(x)` counts them.
#[derive(Clone, Debug)]
pub struct Precision {
    kept: VertexSet,
    local: Vec<usize>,
    matrix: SparseSym,
}

impl Precision {
    pub fn new(g: &MetricGraph, kept: Option<&VertexSet>) -> Result<Self> {
        let kept = match kept {
            Some(k) => {
                k.check(g)?;
                if k.is_empty() {
                    return Err(Error::EmptySet);
                }
                k.clone()
            }
            None => VertexSet::all(g),
        };
        let mut local = vec![UNREACHABLE; g.vertex_count()];
        for (i, &x) in kept.iter().enumerate() {
            local[x] = i;
        }
        let mut offsets = Vec::with_capacity(kept.len() + 1);
        offsets.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(kept.len());
        for &x in kept.iter() {
            diag.push(g.total_rate(x));
            for n in g.neighbors(x) {
                if local[n.vertex] != UNREACHABLE {
                    cols.push(local[n.vertex]);
                    vals.push(-g.edge(n.edge).weight);
                }
            }
            offsets.push(cols.len());
        }
        let p = Precision { kept, local, matrix: SparseSym { diag, offsets, cols, vals } };
        p.check_transient(g)?;
        Ok(p)
    }

    /// Every component of the kept set must lose mass somewhere: through
    /// killing or through an edge to a removed vertex.
    fn check_transient(&self, g: &MetricGraph) -> Result<()> {
        let k = self.kept.len();
        let mut seen = vec![false; k];
        let mut queue = VecDeque::new();
        for start in 0..k {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut leaks = false;
            while let Some(i) = queue.pop_front() {
                let x = self.kept.as_slice()[i];
                if g.killing()[x] > 0.0 {
                    leaks = true;
                }
                for n in g.neighbors(x) {
                    match self.local[n.vertex] {
                        UNREACHABLE => leaks = true,
                        j if !seen[j] => {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                        _ => {}
                    }
                }
            }
            if !leaks {
                return Err(Error::NotTransient { vertex: self.kept.as_slice()[start] });
            }
        }
        Ok(())
    }

    pub fn kept(&self) -> &VertexSet {
        &self.kept
    }

    /// Position of graph vertex `x` in the kept set.
    pub fn local_index(&self, x: usize) -> Option<usize> {
        self.local.get(x).copied().filter(|&i| i != UNREACHABLE)
    }

    pub fn matrix(&self) -> &SparseSym {
        &self.matrix
    }
}

/// Envelope Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct ProfileCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl ProfileCholesky {
    pub fn factor(a: &SparseSym) -> Result<Self> {
        let n = a.len();
        let mut first = Vec::with_capacity(n);
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            let f = a.row(i).map(|(j, _)| j).filter(|&j| j < i).min().unwrap_or(i);
            first.push(f);
            start.push(start[i] + i - f + 1);
        }
        let mut values = vec![0.0; start[n]];
        for i in 0..n {
            let base = start[i] - first[i];
            for (j, v) in a.row(i) {
                if j < i {
                    values[base + j] += v;
                }
            }
            values[base + i] = a.diag()[i];
        }
        let mut factor = ProfileCholesky { first, start, values };
        factor.decompose()?;
        Ok(factor)
    }

    /// Factor of a dense symmetric matrix given row-major.
    pub fn dense(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let first = vec![0; n];
        let start: Vec<usize> = (0..=n).map(|i| i * (i + 1) / 2).collect();
        let mut values = vec![0.0; start[n]];
        for i in 0..n {
            values[start[i]..start[i] + i + 1].copy_from_slice(&a[i * n..i * n + i + 1]);
        }
        let mut factor = ProfileCholesky { first, start, values };
        factor.decompose()?;
        Ok(factor)
    }

    fn decompose(&mut self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            let fi = self.first[i];
            let row_i = self.start[i];
            for j in fi..i {
                let fj = self.first[j].max(fi);
                let row_j = self.start[j];
                let li = &self.values[row_i + fj - fi..row_i + j - fi];
                let lj = &self.values[row_j + fj - self.first[j]..row_j + j - self.first[j]];
                let s = dot(li, lj);
                let djj = self.values[row_j + j - self.first[j]];
                let idx = row_i + j - fi;
                self.values[idx] = (self.values[idx] - s) / djj;
            }
            let li = &self.values[row_i..row_i + i - fi];
            let d = self.values[row_i + i - fi] - dot(li, li);
            let scale = self.values[row_i + i - fi].abs().max(f64::MIN_POSITIVE);
            if !(d > 1e-14 * scale) {
                return Err(Error::Factorization { pivot: i, value: d });
            }
            self.values[row_i + i - fi] = d.sqrt();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.start[i + 1] - 1]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.start[i]..self.start[i + 1] - 1]
    }

    /// `y ← L⁻¹ y`. A shorter `y` is solved against the leading block.
    pub fn solve_lower(&self, y: &mut [f64]) {
        for i in 0..y.len().min(self.len()) {
            let f = self.first[i];
            let s = dot(self.row(i), &y[f..i]);
            y[i] = (y[i] - s) / self.diag(i);
        }
    }

    /// `y ← L⁻ᵀ y` on the leading `k × k` block only; entries at or beyond
    /// `k` are ignored. The leading block of `L` is the factor of the leading
    /// block of `A`.
    pub fn solve_upper_leading(&self, k: usize, y: &mut [f64]) {
        for i in (0..k).rev() {
            let xi = y[i] / self.diag(i);
            y[i] = xi;
            if xi != 0.0 {
                let f = self.first[i];
                for (yj, l) in y[f..i].iter_mut().zip(self.row(i)) {
                    *yj -= l * xi;
                }
            }
        }
    }

    /// `y ← L⁻ᵀ y`.
    pub fn solve_upper(&self, y: &mut [f64]) {
        self.solve_upper_leading(self.len(), y)
    }

    /// `y ← A⁻¹ y`.
    pub fn solve(&self, y: &mut [f64]) {
        self.solve_lower(y);
        self.solve_upper(y);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Reverse Cuthill–McKee numbering, component by component, each started
/// from a pseudo-peripheral vertex. Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseSym) -> Vec<usize> {
    let n = a.len();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).count()).collect();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut level = vec![UNREACHABLE; n];
    for seed in 0..n {
        if placed[seed] {
            continue;
        }
        // pseudo-peripheral start: repeat BFS from a min-degree vertex of the
        // deepest level until eccentricity stops growing
        let mut start = seed;
        let mut ecc = 0;
        loop {
            let (last_level, depth) = bfs_levels(a, start, &placed, &mut level);
            let cand = last_level.into_iter().min_by_key(|&v| (degree[v], v)).unwrap_or(start);
            if depth <= ecc {
                break;
            }
            ecc = depth;
            start = cand;
        }
        let begin = order.len();
        placed[start] = true;
        order.push(start);
        let mut head = begin;
        let mut nbrs = Vec::new();
        while head < order.len() {
            let x = order[head];
            head += 1;
            nbrs.clear();
            nbrs.extend(a.row(x).map(|(j, _)| j).filter(|&j| !placed[j]));
            nbrs.sort_by_key(|&j| (degree[j], j));
            nbrs.dedup();
            for &j in &nbrs {
                placed[j] = true;
                order.push(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(a: &SparseSym, start: usize, placed: &[bool], level: &mut [usize]) -> (Vec<usize>, usize) {
    let mut touched = vec![start];
    level[start] = 0;
    let mut head = 0;
    while head < touched.len() {
        let x = touched[head];
        head += 1;
        for (j, _) in a.row(x) {
            if !placed[j] && level[j] == UNREACHABLE {
                level[j] = level[x] + 1;
                touched.push(j);
            }
        }
    }
    let depth = touched.iter().map(|&v| level[v]).max().unwrap_or(0);
    let last = touched.iter().copied().filter(|&v| level[v] == depth).collect();
    for v in touched {
        level[v] = UNREACHABLE;
    }
    (last, depth)
}

/// Cholesky factor together with the numbering it was computed in.
#[derive(Clone, Debug)]
pub struct OrderedCholesky {
    perm: Vec<usize>,
    factor: ProfileCholesky,
}

impl OrderedCholesky {
    /// Picks the natural or RCM numbering, whichever has the smaller envelope.
    pub fn new(a: &SparseSym) -> Result<Self> {
        let natural: Vec<usize> = (0..a.len()).collect();
        let rcm = reverse_cuthill_mckee(a);
        let permuted = a.permuted(&rcm);
        if permuted.profile() < a.profile() {
            Ok(OrderedCholesky { perm: rcm, factor: ProfileCholesky::factor(&permuted)? })
        } else {
            Ok(OrderedCholesky { perm: natural, factor: ProfileCholesky::factor(a)? })
        }
    }

    pub fn with_order(a: &SparseSym, perm: Vec<usize>) -> Result<Self> {
        let factor = ProfileCholesky::factor(&a.permuted(&perm))?;
        Ok(OrderedCholesky { perm, factor })
    }

    pub fn factor(&self) -> &ProfileCholesky {
        &self.factor
    }

    /// `perm[new] = old`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Solves `A x = b`; `scratch` must have length `n`.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64], scratch: &mut [f64]) {
        for (s, &old) in scratch.iter_mut().zip(&self.perm) {
            *s = b[old];
        }
        self.factor.solve(scratch);
        for (&s, &old) in scratch.iter().zip(&self.perm) {
            x[old] = s;
        }
    }

    /// `x = P Lᵀ⁻¹ z`: a centered Gaussian with covariance `A⁻¹` when `z`
    /// is standard normal. `z` is overwritten.
    pub fn sample_into(&self, z: &mut [f64], x: &mut [f64]) {
        self.factor.solve_upper(z);
        for (&s, &old) in z.iter().zip(&self.perm) {
            x[old] = s;
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for `A x = b`, stopped when
/// `‖b - A x‖∞ ≤ tol`. `x` holds the initial guess.
pub fn conjugate_gradient(a: &SparseSym, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<CgStats> {
    let n = a.len();
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let inv_diag: Vec<f64> = a.diag().iter().map(|d| 1.0 / d).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for it in 0..max_iter {
        let res = norm_inf(&r);
        if res <= tol {
            return Ok(CgStats { iterations: it, residual: res });
        }
        a.mul_vec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Numeric(format!("conjugate gradients broke down (pᵀAp = {pap:e})")));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm_inf(&r);
    if res <= tol {
        Ok(CgStats { iterations: max_iter, residual: res })
    } else {
        Err(Error::Numeric(format!(
            "conjugate gradients did not reach {tol:e} in {max_iter} iterations (residual {res:e})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{pair, LatticeBox, RegularTree};

    fn dense_from(a: &SparseSym) -> Vec<f64> {
        let n = a.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = a.diag()[i];
            for (j, v) in a.row(i) {
                d[i * n + j] += v;
            }
        }
        d
    }

    #[test]
    fn two_vertex_precision() {
        let g = pair(1.0, 1.0).unwrap();
        let p = Precision::new(&g, None).unwrap();
        assert_eq!(dense_from(p.matrix()), vec![2.0, -1.0, -1.0, 2.0]);
        let f = OrderedCholesky::new(p.matrix()).unwrap();
        let mut x = vec![0.0; 2];
        let mut s = vec![0.0; 2];
        f.solve_into(&[1.0, 0.0], &mut x, &mut s);
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn recurrent_component_rejected() {
        let g = LatticeBox { boundary_killing: false, ..LatticeBox::new(2, 2) }.build().unwrap();
        assert!(matches!(Precision::new(&g, None), Err(Error::NotTransient { .. })));
        // removing a vertex makes the rest transient
        let kept = VertexSet::new(1..g.vertex_count());
        assert!(Precision::new(&g, Some(&kept)).is_ok());
    }

    #[test]
    fn profile_solve_matches_cg_and_residual() {
        let g = RegularTree::new(3, 4).build().unwrap();
        let p = Precision::new(&g, None).unwrap();
        let a = p.matrix();
        let n = a.len();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = OrderedCholesky::new(a).unwrap();
        let mut x = vec![0.0; n];
        let mut s = vec![0.0; n];
        f.solve_into(&b, &mut x, &mut s);
        let mut ax = vec![0.0; n];
        a.mul_vec(&x, &mut ax);
        let res = ax.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(res < 1e-12, "{res}");
        let mut y = vec![0.0; n];
        conjugate_gradient(a, &b, &mut y, 1e-11, 10_000).unwrap();
        for i in 0..n {
            assert!((x[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn rcm_does_not_lose_vertices() {
        let g = RegularTree::new(4, 3).build().unwrap();
        let a = Precision::new(&g, None).unwrap().matrix().clone();
        let mut perm = reverse_cuthill_mckee(&a);
        assert!(a.permuted(&perm).profile() <= a.profile());
        perm.sort_unstable();
        assert_eq!(perm, (0..a.len()).collect::<Vec<_>>());
    }

    #[test]
    fn leading_block_inverse() {
        // The leading k×k block of L factors the leading block of A.
        let g = LatticeBox::new(2, 2).build().unwrap();
        let a = Precision::new(&g, None).unwrap().matrix().clone();
        let f = ProfileCholesky::factor(&a).unwrap();
        let k = 13;
        let kept = VertexSet::new(0..k);
        let sub = Precision::new(&g, Some(&kept)).unwrap();
        let fsub = ProfileCholesky::factor(sub.matrix()).unwrap();
        for i in 0..k {
            assert!((f.diag(i) - fsub.diag(i)).abs() < 1e-14);
        }
        let mut y = vec![0.0; a.len()];
        y[k - 1] = 1.0;
        f.solve_lower(&mut y[..k]);
        f.solve_upper_leading(k, &mut y);
        let mut z = vec![0.0; k];
        z[k - 1] = 1.0;
        fsub.solve(&mut z);
        for i in 0..k {
            assert!((y[i] - z[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn dense_factor_rejects_indefinite() {
        assert!(ProfileCholesky::dense(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        let f = ProfileCholesky::dense(&[4.0, 2.0, 2.0, 3.0], 2).unwrap();
        let mut y = vec![6.0, 5.0];
        f.solve(&mut y);
        assert!((y[0] - 1.0).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);
    }
}
