//! The forecaster: multi-graph convolution, graph-convolutional and
//! fully-connected GRUs, their fusion module and the two-layer
//! encoder/decoder built from it.

mod cells;
mod checkpoint;
mod params;
mod seq2seq;

use std::fmt;
use std::str::FromStr;

pub use cells::{cgrm_step, fc_gru_step, gc_gru_step, graph_conv, Aggregated, TapeCells};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use params::{
    init_params, layout, CgrmParams, FcGruParams, GcGruParams, GraphConvParams, PvcgnParams, PvcgnWeights, Slot,
};
pub use seq2seq::{bind_params, decode, encode, forward, forward_tape, LayerState};

use crate::error::{Error, Result};
use crate::graphs::GraphTriple;
use crate::matrix::CsrMatrix;
use crate::scalar::Scalar;

/// Which of the three graphs feed the convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphSet {
    pub physical: bool,
    pub similarity: bool,
    pub correlation: bool,
}

impl GraphSet {
    pub const ALL: GraphSet = GraphSet { physical: true, similarity: true, correlation: true };
    pub const PHYSICAL: GraphSet = GraphSet { physical: true, similarity: false, correlation: false };
}

impl Default for GraphSet {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for GraphSet {
    type Err = Error;

    /// Letters from `p`, `s`, `c` in any order, or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let mut g = GraphSet { physical: false, similarity: false, correlation: false };
        if s == "none" {
            return Ok(g);
        }
        for ch in s.chars() {
            let flag = match ch {
                'p' => &mut g.physical,
                's' => &mut g.similarity,
                'c' => &mut g.correlation,
                _ => return Err(Error::Config(format!("graph set '{s}': expected letters from p, s, c"))),
            };
            if std::mem::replace(flag, true) {
                return Err(Error::Config(format!("graph set '{s}' repeats '{ch}'")));
            }
        }
        if s.is_empty() {
            return Err(Error::Config("empty graph set".into()));
        }
        Ok(g)
    }
}

impl fmt::Display for GraphSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        for (on, ch) in [(self.physical, 'p'), (self.similarity, 's'), (self.correlation, 'c')] {
            if on {
                s.push(ch);
            }
        }
        f.write_str(if s.is_empty() { "none" } else { &s })
    }
}

/// Recurrent state consumed by the network-wide GRU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FcRecurrence {
    /// Embedding of the previous fused local state.
    #[default]
    Fused,
    /// The GRU's own previous output.
    Own,
}

impl FromStr for FcRecurrence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Self::Fused),
            "own" => Ok(Self::Own),
            _ => Err(Error::Config(format!("fc recurrence '{s}': expected fused or own"))),
        }
    }
}

impl fmt::Display for FcRecurrence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fused => "fused",
            Self::Own => "own",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_stations: usize,
    /// Signal width per station: 2 for inflow/outflow, 11 for OD vectors.
    pub channels: usize,
    pub d: usize,
    pub graphs: GraphSet,
    /// Fuse the network-wide GRU into each module; `false` keeps local states only.
    pub global_branch: bool,
    pub fc_recurrence: FcRecurrence,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_stations: 1,
            channels: 2,
            d: 256,
            graphs: GraphSet::ALL,
            global_branch: true,
            fc_recurrence: FcRecurrence::Fused,
        }
    }
}

/// Aggregation matrices in the model's scalar type. Masked-out or edgeless
/// graphs are `None` and contribute nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraphs<T> {
    pub n: usize,
    pub physical: Option<CsrMatrix<T>>,
    pub similarity: Option<CsrMatrix<T>>,
    pub correlation: Option<CsrMatrix<T>>,
}

impl<T: Scalar> ModelGraphs<T> {
    pub fn new(triple: &GraphTriple, set: GraphSet) -> Self {
        let pick = |on: bool, w: &CsrMatrix<f64>| (on && w.nnz() > 0).then(|| w.cast());
        Self {
            n: triple.n(),
            physical: pick(set.physical, &triple.physical.weights),
            similarity: pick(set.similarity, &triple.similarity.weights),
            correlation: pick(set.correlation, &triple.correlation.weights),
        }
    }

    pub fn from_matrices(
        n: usize,
        physical: Option<CsrMatrix<T>>,
        similarity: Option<CsrMatrix<T>>,
        correlation: Option<CsrMatrix<T>>,
    ) -> Result<Self> {
        for w in [&physical, &similarity, &correlation].into_iter().flatten() {
            if w.n() != n {
                return Err(Error::Shape(format!("graph over {} stations, model has {n}", w.n())));
            }
        }
        Ok(Self { n, physical, similarity, correlation })
    }

    /// No neighbor terms at all.
    pub fn isolated(n: usize) -> Self {
        Self { n, physical: None, similarity: None, correlation: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_set_parse_and_display() {
        assert_eq!("psc".parse::<GraphSet>().unwrap(), GraphSet::ALL);
        assert_eq!("p".parse::<GraphSet>().unwrap(), GraphSet::PHYSICAL);
        let cs: GraphSet = "cs".parse().unwrap();
        assert_eq!(cs.to_string(), "sc");
        assert_eq!("none".parse::<GraphSet>().unwrap().to_string(), "none");
        assert!("pp".parse::<GraphSet>().is_err());
        assert!("x".parse::<GraphSet>().is_err());
        assert!("".parse::<GraphSet>().is_err());
    }

    #[test]
    fn recurrence_roundtrip() {
        for r in [FcRecurrence::Fused, FcRecurrence::Own] {
            assert_eq!(r.to_string().parse::<FcRecurrence>().unwrap(), r);
        }
    }
}
