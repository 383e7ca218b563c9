//! Exact intensity-1/2 clusters through the Gaussian free field.
//!
//! The discrete field is drawn as `φ = P L⁻ᵀ z` from a Cholesky factor of
//! the precision matrix. Given `φ`, the cable between `x` and `y` carries a
//! sign change of the metric-graph field unless `φ_x φ_y > 0` and a bridge
//! stays away from zero, which happens with probability
//! `1 − exp(−2 λ_xy φ_x φ_y)`.
//!
//! # Open-edge bitmap dump
//!
//! [`BitmapWriter`] produces a little-endian stream:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `OEBM` |
//! | 4 | format version, `u32`, currently 1 |
//! | 8 | edge count `E`, `u64` |
//! | ... | one record of `ceil(E/8)` bytes per replica |
//!
//! Edge `e` of a record is bit `e % 8` (least significant first) of byte
//! `e / 8`; a set bit means open. Trailing bits of the last byte are zero.
//! The replica count is the payload length divided by the record size.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MetricGraph, VertexSet};
use crate::linalg::{OrderedCholesky, Precision};
use crate::trace::TraceClusters;
use crate::unionfind::DisjointSet;

/// Where a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub replica: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    /// One value per graph vertex; zero outside the sampled domain.
    pub values: Vec<f64>,
    pub provenance: Option<Provenance>,
}

/// Factorized precision matrix, shared read-only across replicas.
#[derive(Clone, Debug)]
pub struct GffSampler {
    vertex_count: usize,
    domain: Vec<usize>,
    chol: OrderedCholesky,
}

impl GffSampler {
    pub fn new(g: &MetricGraph) -> Result<Self> {
        Self::killed_outside(g, None)
    }

    /// The field on `kept` with zero boundary condition outside it.
    pub fn killed_outside(g: &MetricGraph, kept: Option<&VertexSet>) -> Result<Self> {
        let prec = Precision::new(g, kept)?;
        let chol = OrderedCholesky::new(prec.matrix())?;
        Ok(GffSampler { vertex_count: g.vertex_count(), domain: prec.kept().as_slice().to_vec(), chol })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn domain(&self) -> &[usize] {
        &self.domain
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldSample {
        let mut values = vec![0.0; self.vertex_count];
        let mut z = Vec::new();
        self.sample_into(rng, &mut z, &mut values);
        FieldSample { values, provenance: None }
    }

    /// Writes a field into `phi` (length = vertex count) using `z` as scratch.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut Vec<f64>, phi: &mut [f64]) {
        let k = self.domain.len();
        z.clear();
        z.extend((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        if k == self.vertex_count {
            self.chol.sample_into(z, phi);
        } else {
            let mut local = vec![0.0; k];
            self.chol.sample_into(z, &mut local);
            phi.fill(0.0);
            for (&x, v) in self.domain.iter().zip(local) {
                phi[x] = v;
            }
        }
    }
}

/// Draws the free field on the whole graph.
pub fn sample_gff<R: Rng + ?Sized>(sampler: &GffSampler, rng: &mut R) -> FieldSample {
    sampler.sample(rng)
}

/// Cable-opening probability given the endpoint values.
pub fn opening_probability(weight: f64, phi_x: f64, phi_y: f64) -> f64 {
    let p = phi_x * phi_y;
    if p > 0.0 {
        -(-2.0 * weight * p).exp_m1()
    } else {
        0.0
    }
}

/// Opens each edge independently given the field; one uniform per edge
/// with a positive product, none otherwise.
pub fn open_edges_into<R: Rng + ?Sized>(g: &MetricGraph, phi: &[f64], rng: &mut R, open: &mut [bool]) {
    for (o, e) in open.iter_mut().zip(g.edges()) {
        let p = phi[e.u] * phi[e.v];
        *o = p > 0.0 && rng.random::<f64>() < -(-2.0 * e.weight * p).exp_m1();
    }
}

pub fn lupu_open_edges<R: Rng + ?Sized>(g: &MetricGraph, phi: &FieldSample, rng: &mut R) -> Result<Vec<bool>> {
    if phi.values.len() != g.vertex_count() {
        return Err(Error::GraphMismatch);
    }
    let mut open = vec![false; g.edge_count()];
    open_edges_into(g, &phi.values, rng, &mut open);
    Ok(open)
}

pub fn clusters_at_half<R: Rng + ?Sized>(g: &MetricGraph, sampler: &GffSampler, rng: &mut R) -> Result<TraceClusters> {
    if sampler.vertex_count() != g.vertex_count() {
        return Err(Error::GraphMismatch);
    }
    let phi = sampler.sample(rng);
    let open = lupu_open_edges(g, &phi, rng)?;
    TraceClusters::from_open_edges(g, open)
}

/// Reusable buffers for hot sampling loops.
#[derive(Clone, Debug, Default)]
pub struct HalfWorkspace {
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
    pub open: Vec<bool>,
    pub dsu: DisjointSet,
}

impl HalfWorkspace {
    pub fn new(g: &MetricGraph) -> Self {
        HalfWorkspace {
            z: Vec::with_capacity(g.vertex_count()),
            phi: vec![0.0; g.vertex_count()],
            open: vec![false; g.edge_count()],
            dsu: DisjointSet::new(g.vertex_count()),
        }
    }

    /// Samples field and open edges, then labels the open-edge clusters
    /// into `self.dsu`.
    pub fn sample<R: Rng + ?Sized>(&mut self, g: &MetricGraph, sampler: &GffSampler, rng: &mut R) {
        sampler.sample_into(rng, &mut self.z, &mut self.phi);
        open_edges_into(g, &self.phi, rng, &mut self.open);
        self.relabel(g);
    }

    pub fn relabel(&mut self, g: &MetricGraph) {
        self.dsu.reset(g.vertex_count());
        for (e, _) in self.open.iter().enumerate().filter(|(_, &o)| o) {
            let edge = g.edge(e);
            self.dsu.union(edge.u, edge.v);
        }
    }
}

const MAGIC: &[u8; 4] = b"OEBM";
const VERSION: u32 = 1;

pub struct BitmapWriter<W: Write> {
    out: W,
    edges: usize,
    buf: Vec<u8>,
    records: u64,
}

impl<W: Write> BitmapWriter<W> {
    pub fn new(mut out: W, edge_count: usize) -> Result<Self> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(edge_count as u64).to_le_bytes())?;
        Ok(BitmapWriter { out, edges: edge_count, buf: vec![0; edge_count.div_ceil(8)], records: 0 })
    }

    pub fn write(&mut self, open: &[bool]) -> Result<()> {
        if open.len() != self.edges {
            return Err(Error::GraphMismatch);
        }
        self.buf.fill(0);
        for (e, _) in open.iter().enumerate().filter(|(_, &o)| o) {
            self.buf[e / 8] |= 1 << (e % 8);
        }
        self.out.write_all(&self.buf)?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Reads a bitmap dump; returns the edge count and one record per replica.
pub fn read_bitmaps(mut r: impl Read) -> Result<(usize, Vec<Vec<bool>>)> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::param("bitmap", "bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::param("bitmap", format!("unsupported version {version}")));
    }
    let edges = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let width = edges.div_ceil(8);
    if width == 0 || payload.len() % width != 0 {
        return Err(Error::param("bitmap", "truncated record"));
    }
    let records = payload
        .chunks(width)
        .map(|rec| (0..edges).map(|e| rec[e / 8] >> (e % 8) & 1 == 1).collect())
        .collect();
    Ok((edges, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn opening_rule() {
        assert_eq!(opening_probability(1.0, 1.0, -1.0), 0.0);
        assert_eq!(opening_probability(1.0, 0.0, 3.0), 0.0);
        assert!((opening_probability(1.0, 1.0, 1.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!(opening_probability(1.0, 1e-9, 1.0) < 1e-8);
    }

    #[test]
    fn opposite_signs_never_open() {
        let g = graph::LatticeBox::new(2, 3).build().unwrap();
        let s = GffSampler::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let phi = s.sample(&mut rng);
            let open = lupu_open_edges(&g, &phi, &mut rng).unwrap();
            for (e, edge) in g.edges().iter().enumerate() {
                if open[e] {
                    assert!(phi.values[edge.u] * phi.values[edge.v] > 0.0);
                }
            }
        }
    }

    #[test]
    fn killed_outside_is_zero_there() {
        let g = graph::path(5, 1.0, 1.0).unwrap();
        let kept = VertexSet::new([1, 2]);
        let s = GffSampler::killed_outside(&g, Some(&kept)).unwrap();
        let phi = s.sample(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(phi.values[0], 0.0);
        assert_eq!(phi.values[4], 0.0);
        assert!(phi.values[1] != 0.0);
    }

    #[test]
    fn bitmap_round_trip() {
        let recs = vec![vec![true, false, true, true, false, false, false, false, true, true], vec![false; 10]];
        let mut w = BitmapWriter::new(Vec::new(), 10).unwrap();
        for r in &recs {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        assert_eq!(&bytes[..4], b"OEBM");
        assert_eq!(bytes.len(), 16 + 2 * 2);
        assert_eq!(bytes[16], 0b0000_1101);
        assert_eq!(bytes[17], 0b0000_0011);
        let (e, back) = read_bitmaps(&bytes[..]).unwrap();
        assert_eq!(e, 10);
        assert_eq!(back, recs);
        assert!(read_bitmaps(&bytes[..19]).is_err());
    }
}
