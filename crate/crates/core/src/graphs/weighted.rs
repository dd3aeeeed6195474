use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::CsrMatrix;

/// Directed edge carrying information from `src` (j) to `dst` (i).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub dst: usize,
    pub src: usize,
}

/// Edges sorted by `(dst, src)` with no duplicates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeList {
    edges: Vec<Edge>,
}

impl EdgeList {
    pub fn new(n: usize, mut edges: Vec<Edge>) -> Result<Self> {
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("duplicate edge".into()));
        }
        if let Some(e) = edges.iter().find(|e| e.src >= n || e.dst >= n) {
            return Err(Error::Argument(format!("edge {}->{} outside 0..{n}", e.src, e.dst)));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn contains(&self, dst: usize, src: usize) -> bool {
        self.edges.binary_search(&Edge { dst, src }).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Physical,
    Similarity,
    Correlation,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Physical => "physical",
            GraphKind::Similarity => "similarity",
            GraphKind::Correlation => "correlation",
        }
    }
}

/// Sparse directed graph with row-normalized weights: `W(i, j)` is the
/// weight of the edge from `j` into `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    pub kind: GraphKind,
    pub edges: EdgeList,
    pub weights: CsrMatrix<f64>,
    /// Construction details (selection rule, scale, warnings).
    pub metadata: BTreeMap<String, String>,
}

impl WeightedGraph {
    pub fn n(&self) -> usize {
        self.weights.n()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.weights.row(i).map(|(_, w)| w).sum()).collect()
    }

    /// Rows without any incoming edge.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.weights.row(i).next().is_none()).collect()
    }

    fn hash_into(&self, h: &mut Sha256) {
        h.update(self.kind.name().as_bytes());
        h.update((self.n() as u64).to_le_bytes());
        for (i, j, w) in self.weights.triplets() {
            h.update((i as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
            h.update(w.to_bits().to_le_bytes());
        }
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.n(),
            kind: self.kind,
            edges: self.weights.triplets().map(|(i, j, w)| JsonEdge { i, j, w }).collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn from_json(g: GraphJson) -> Result<Self> {
        let edges = EdgeList::new(g.n, g.edges.iter().map(|e| Edge { dst: e.i, src: e.j }).collect())?;
        if g.edges.iter().any(|e| !(e.w > 0.0 && e.w.is_finite())) {
            return Err(Error::Format("graph weights must be positive and finite".into()));
        }
        let weights = CsrMatrix::from_triplets(g.n, g.edges.iter().map(|e| (e.i, e.j, e.w)).collect())?;
        Ok(Self { kind: g.kind, edges, weights, metadata: g.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonEdge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub kind: GraphKind,
    pub edges: Vec<JsonEdge>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// The three structural inputs of the model over a shared station set.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTriple {
    pub physical: WeightedGraph,
    pub similarity: WeightedGraph,
    pub correlation: WeightedGraph,
}

impl GraphTriple {
    pub fn new(physical: WeightedGraph, similarity: WeightedGraph, correlation: WeightedGraph) -> Result<Self> {
        let n = physical.n();
        if similarity.n() != n || correlation.n() != n {
            return Err(Error::Shape("graphs disagree on station count".into()));
        }
        Ok(Self { physical, similarity, correlation })
    }

    pub fn n(&self) -> usize {
        self.physical.n()
    }

    /// Hex SHA-256 over the weights of all three graphs.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for g in [&self.physical, &self.similarity, &self.correlation] {
            g.hash_into(&mut h);
        }
        hex_digest(h)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for g in [&self.physical, &self.similarity, &self.correlation] {
            g.save(&dir.join(format!("{}.json", g.kind.name())))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |k: GraphKind| -> Result<WeightedGraph> {
            let g = WeightedGraph::load(&dir.join(format!("{}.json", k.name())))?;
            if g.kind != k {
                return Err(Error::Format(format!("{}.json holds a {} graph", k.name(), g.kind.name())));
            }
            Ok(g)
        };
        Self::new(load(GraphKind::Physical)?, load(GraphKind::Similarity)?, load(GraphKind::Correlation)?)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
