//! Vertex-level connectivity of a trace configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MetricGraph, TwoBond, VertexSet};
use crate::unionfind::DisjointSet;

/// Clusters of the graph whose edges are the open edges plus both edges of
/// every open 2-bond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceClusters {
    labels: Vec<usize>,
    open_edges: Vec<bool>,
    open_two_bonds: Vec<TwoBond>,
    cluster_count: usize,
}

impl TraceClusters {
    pub fn from_open_edges(g: &MetricGraph, open_edges: Vec<bool>) -> Result<Self> {
        Self::with_two_bonds(g, open_edges, Vec::new())
    }

    pub fn with_two_bonds(g: &MetricGraph, open_edges: Vec<bool>, open_two_bonds: Vec<TwoBond>) -> Result<Self> {
        if open_edges.len() != g.edge_count() {
            return Err(Error::GraphMismatch);
        }
        let mut dsu = DisjointSet::new(g.vertex_count());
        Self::label_into(g, &open_edges, &open_two_bonds, &mut dsu)?;
        let labels = dsu.canonical_labels();
        Ok(TraceClusters { labels, cluster_count: dsu.set_count(), open_edges, open_two_bonds })
    }

    /// Unions the open structure into `dsu`, which must start as singletons.
    pub(crate) fn label_into(g: &MetricGraph, open_edges: &[bool], bonds: &[TwoBond], dsu: &mut DisjointSet) -> Result<()> {
        for (e, _) in open_edges.iter().enumerate().filter(|(_, &o)| o) {
            let edge = g.edge(e);
            dsu.union(edge.u, edge.v);
        }
        for b in bonds {
            if b.e >= g.edge_count() || b.f >= g.edge_count() {
                return Err(Error::GraphMismatch);
            }
            let (x, y, z) = b.vertices(g);
            dsu.union(x, y);
            dsu.union(y, z);
        }
        Ok(())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, x: usize) -> usize {
        self.labels[x]
    }

    pub fn open_edges(&self) -> &[bool] {
        &self.open_edges
    }

    pub fn open_two_bonds(&self) -> &[TwoBond] {
        &self.open_two_bonds
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn connected(&self, x: usize, y: usize) -> bool {
        self.labels[x] == self.labels[y]
    }

    pub fn connects_to(&self, x: usize, set: &VertexSet) -> bool {
        set.iter().any(|&y| self.labels[y] == self.labels[x])
    }

    pub fn cluster_of(&self, x: usize) -> VertexSet {
        let l = self.labels[x];
        VertexSet::from_sorted((0..self.labels.len()).filter(|&y| self.labels[y] == l).collect())
    }

    /// Open edges plus the edges of open 2-bonds.
    pub fn trace_edges(&self) -> Vec<bool> {
        let mut t = self.open_edges.clone();
        for b in &self.open_two_bonds {
            t[b.e] = true;
            t[b.f] = true;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph;

    #[test]
    fn path_with_two_bond() {
        let g = graph::path(4, 1.0, 1.0).unwrap();
        let c = TraceClusters::from_open_edges(&g, vec![false, false, true]).unwrap();
        assert_eq!(c.labels(), &[0, 1, 2, 2]);
        assert_eq!(c.cluster_count(), 3);
        let b = TwoBond::new(&g, 1, 0, 1).unwrap();
        let c = TraceClusters::with_two_bonds(&g, vec![false; 3], vec![b]).unwrap();
        assert_eq!(c.cluster_count(), 2);
        assert!(c.connected(0, 2) && !c.connected(0, 3));
        assert_eq!(c.trace_edges(), vec![true, true, false]);
        assert_eq!(c.cluster_of(1).as_slice(), &[0, 1, 2]);
    }

    #[test]
    fn wrong_length() {
        let g = graph::path(3, 1.0, 1.0).unwrap();
        assert!(TraceClusters::from_open_edges(&g, vec![true]).is_err());
    }
}
