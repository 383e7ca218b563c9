//! Percolation of loop soups on metric graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] builds finite weighted metric graphs (lattice boxes, trees,
//!   subdivisions) and answers skeleton queries;
//! * [`potential`] computes Green's functions, hitting probabilities,
//!   capacities and the exact intensity-1/2 two-point function;
//! * [`gff`] samples intensity-1/2 clusters exactly through the Gaussian
//!   free field;
//! * [`loopsoup`] samples the discrete loop soup at any intensity;
//! * [`noise`] adds Bernoulli 2-bond noise and implements pivotality, Russo
//!   and FKG checks and the boundary exploration;
//! * [`mc`] runs seeded, replica-parallel Monte Carlo experiments.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gff;
pub mod graph;
pub mod linalg;
pub mod loopsoup;
pub mod mc;
pub mod noise;
pub mod potential;
pub mod stats;
pub mod trace;
pub mod unionfind;

pub use error::{Error, Result};
pub use graph::{LatticeBox, MetricGraph, RegularTree, TwoBond, VertexSet};
pub use gff::{FieldSample, GffSampler};
pub use mc::{EstimateReport, RunSpec};
pub use potential::{capacity, hitting_probability, two_point_exact, CapacityResult, GreenTable};
pub use trace::TraceClusters;
pub use unionfind::DisjointSet;
