use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::dtw::dtw_matrix;
use super::weighted::{hex_digest, Edge, EdgeList, GraphKind, WeightedGraph};
use crate::error::{Error, Result};
use crate::ingest::{zscore_fit, AfcRecord, NormStats, RidershipTensor};
use crate::matrix::{CsrMatrix, Matrix};

/// Edge selection rule for the virtual graphs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    TopK(usize),
    Threshold(f64),
}

impl Selection {
    /// `topk:10` or `thresh:0.1`
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("selection {s:?} is not topk:K or thresh:T"));
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "topk" => Ok(Selection::TopK(v.trim().parse().map_err(|_| bad())?)),
            "thresh" | "threshold" => Ok(Selection::Threshold(v.trim().parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selection::TopK(k) => write!(f, "topk:{k}"),
            Selection::Threshold(t) => write!(f, "thresh:{t}"),
        }
    }
}

fn check_square(scores: &Matrix<f64>) -> Result<usize> {
    if scores.rows() != scores.cols() {
        return Err(Error::Shape(format!("score matrix is {}x{}", scores.rows(), scores.cols())));
    }
    Ok(scores.rows())
}

fn topk_impl(scores: &Matrix<f64>, k: usize, diagonal: bool) -> Result<EdgeList> {
    let n = check_square(scores)?;
    if k == 0 || k >= n {
        return Err(Error::Config(format!("top-k needs 1 <= k < N (k={k}, N={n})")));
    }
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| diagonal || j != i));
        // descending score, ties to the smaller source index
        cand.sort_by(|&a, &b| scores[(i, b)].total_cmp(&scores[(i, a)]).then(a.cmp(&b)));
        edges.extend(cand.iter().take(k).map(|&j| Edge { dst: i, src: j }));
    }
    EdgeList::new(n, edges)
}

/// For every destination row `i`, edges from the `k` sources with the
/// largest off-diagonal scores.
pub fn select_topk(scores: &Matrix<f64>, k: usize) -> Result<EdgeList> {
    topk_impl(scores, k, false)
}

/// [`select_topk`] with the diagonal eligible (correlation graph).
pub fn select_topk_with_diagonal(scores: &Matrix<f64>, k: usize) -> Result<EdgeList> {
    topk_impl(scores, k, true)
}

/// Edges `j -> i` for every `S(i, j) >= tau`; the diagonal is considered
/// only when `diagonal` is set.
pub fn select_threshold(scores: &Matrix<f64>, tau: f64, diagonal: bool) -> Result<EdgeList> {
    let n = check_square(scores)?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {tau}")));
    }
    let edges = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| (diagonal || i != j) && scores[(i, j)] >= tau)
        .map(|(i, j)| Edge { dst: i, src: j })
        .collect();
    EdgeList::new(n, edges)
}

/// `W(i, j) = S(i, j) / sum over selected k of S(i, k)`.
pub fn row_normalize(scores: &Matrix<f64>, edges: &EdgeList, kind: GraphKind) -> Result<WeightedGraph> {
    let n = check_square(scores)?;
    let mut row_sum = vec![0.0; n];
    for e in edges.iter() {
        let s = scores[(e.dst, e.src)];
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Normalization(format!("selected edge {}->{} has score {s}", e.src, e.dst)));
        }
        row_sum[e.dst] += s;
    }
    let triplets = edges.iter().map(|e| (e.dst, e.src, scores[(e.dst, e.src)] / row_sum[e.dst])).collect();
    Ok(WeightedGraph {
        kind,
        edges: edges.clone(),
        weights: CsrMatrix::from_triplets(n, triplets)?,
        metadata: BTreeMap::new(),
    })
}

fn note_empty_rows(g: &mut WeightedGraph) {
    let empty = g.empty_rows();
    if !empty.is_empty() {
        let list: Vec<String> = empty.iter().map(ToString::to_string).collect();
        g.metadata.insert("warning.empty_rows".into(), list.join(","));
    }
}

/// Physical graph from undirected station pairs: the 0/1 connection
/// matrix with a zero diagonal, normalized per row.
pub fn build_physical(pairs: &[(usize, usize)], n: usize) -> Result<WeightedGraph> {
    let mut conn = Matrix::<f64>::zeros(n, n);
    for &(a, b) in pairs {
        if a >= n || b >= n {
            return Err(Error::Argument(format!("pair ({a},{b}) outside 0..{n}")));
        }
        if a == b {
            return Err(Error::Argument(format!("self pair ({a},{a}) in physical topology")));
        }
        conn[(a, b)] = 1.0;
        conn[(b, a)] = 1.0;
    }
    let edges = select_threshold(&conn, 1.0, false)?;
    let mut g = row_normalize(&conn, &edges, GraphKind::Physical)?;
    note_empty_rows(&mut g);
    Ok(g)
}

/// Per-station `(inflow, outflow)` series after joint z-scoring with
/// statistics fit on the same tensor.
pub fn zscored_series(tensor: &RidershipTensor) -> Result<(Vec<Vec<[f64; 2]>>, NormStats)> {
    let stats = zscore_fit(tensor.values())?;
    let series = (0..tensor.n_stations())
        .map(|i| tensor.station_series(i).into_iter().map(|[a, b]| [stats.apply_one(a), stats.apply_one(b)]).collect())
        .collect();
    Ok((series, stats))
}

/// `S(i, j) = exp(-dtw(series_i, series_j))` off the diagonal, zero on it.
pub fn similarity_matrix(series: &[Vec<[f64; 2]>]) -> Result<Matrix<f64>> {
    Ok(similarity_from_distances(&dtw_matrix(series)?))
}

pub fn similarity_from_distances(dist: &[Vec<f64>]) -> Matrix<f64> {
    let n = dist.len();
    Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (-dist[i][j]).exp() })
}

fn series_key(series: &[Vec<[f64; 2]>]) -> String {
    let mut h = Sha256::new();
    h.update((series.len() as u64).to_le_bytes());
    for s in series {
        h.update((s.len() as u64).to_le_bytes());
        for p in s {
            h.update(p[0].to_bits().to_le_bytes());
            h.update(p[1].to_bits().to_le_bytes());
        }
    }
    hex_digest(h)
}

/// DTW distance matrix, read from or written to `cache_dir` under a key
/// derived from the series content.
pub fn dtw_matrix_cached(series: &[Vec<[f64; 2]>], cache_dir: Option<&Path>) -> Result<Vec<Vec<f64>>> {
    let Some(dir) = cache_dir else { return dtw_matrix(series) };
    let n = series.len();
    let path = dir.join(format!("dtw-{}.bin", &series_key(series)[..32]));
    if let Ok(bytes) = std::fs::read(&path) {
        if bytes.len() == 8 + n * n * 8 && u64::from_le_bytes(bytes[..8].try_into().unwrap()) == n as u64 {
            let vals: Vec<f64> =
                bytes[8..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            return Ok(vals.chunks(n.max(1)).map(<[f64]>::to_vec).take(n).collect());
        }
    }
    let d = dtw_matrix(series)?;
    std::fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(8 + n * n * 8);
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    for row in &d {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(&path, bytes)?;
    Ok(d)
}

/// Selected edges whose score is not positive cannot be normalized; they
/// are removed and counted.
fn drop_nonpositive(scores: &Matrix<f64>, edges: EdgeList, n: usize) -> Result<(EdgeList, usize)> {
    let before = edges.len();
    let kept: Vec<Edge> = edges.iter().copied().filter(|e| scores[(e.dst, e.src)] > 0.0).collect();
    let dropped = before - kept.len();
    Ok((EdgeList::new(n, kept)?, dropped))
}

fn select(scores: &Matrix<f64>, selection: Selection, diagonal: bool) -> Result<EdgeList> {
    match (selection, diagonal) {
        (Selection::TopK(k), false) => select_topk(scores, k),
        (Selection::TopK(k), true) => select_topk_with_diagonal(scores, k),
        (Selection::Threshold(t), d) => select_threshold(scores, t, d),
    }
}

fn finish_virtual(
    scores: &Matrix<f64>,
    selection: Selection,
    diagonal: bool,
    kind: GraphKind,
) -> Result<WeightedGraph> {
    let n = scores.rows();
    let (edges, dropped) = drop_nonpositive(scores, select(scores, selection, diagonal)?, n)?;
    let mut g = row_normalize(scores, &edges, kind)?;
    g.metadata.insert("selection".into(), selection.to_string());
    g.metadata.insert("edges".into(), g.edges.len().to_string());
    if dropped > 0 {
        g.metadata.insert("warning.dropped_zero_score_edges".into(), dropped.to_string());
    }
    note_empty_rows(&mut g);
    Ok(g)
}

/// Similarity graph from a training-span tensor: z-score, DTW distance
/// matrix, `exp(-d)` scores, selection and row normalization.
pub fn build_similarity(tensor: &RidershipTensor, selection: Selection) -> Result<WeightedGraph> {
    build_similarity_cached(tensor, selection, None)
}

pub fn build_similarity_cached(
    tensor: &RidershipTensor,
    selection: Selection,
    cache_dir: Option<&Path>,
) -> Result<WeightedGraph> {
    let (series, stats) = zscored_series(tensor)?;
    let scores = similarity_from_distances(&dtw_matrix_cached(&series, cache_dir)?);
    let mut g = finish_virtual(&scores, selection, false, GraphKind::Similarity)?;
    g.metadata.insert("dtw_scale".into(), format!("zscore mean={} std={}", stats.mean, stats.std));
    g.metadata.insert("dtw_points".into(), tensor.n_bins().to_string());
    Ok(g)
}

/// `D(i, j)`: trips that entered at `j` and exited at `i`.
pub fn od_counts(records: &[AfcRecord], n: usize) -> Result<Matrix<f64>> {
    let mut d = Matrix::zeros(n, n);
    for r in records {
        if r.entry_station >= n || r.exit_station >= n {
            return Err(Error::Argument(format!("record station outside 0..{n}")));
        }
        d[(r.exit_station, r.entry_station)] += 1.0;
    }
    Ok(d)
}

/// `C(i, j) = D(i, j) / sum_k D(i, k)`; rows without arrivals stay zero.
pub fn correlation_ratios(counts: &Matrix<f64>) -> Matrix<f64> {
    let n = counts.rows();
    let mut c = counts.clone();
    for i in 0..n {
        let total: f64 = counts.row(i).iter().sum();
        if total > 0.0 {
            for v in c.row_mut(i) {
                *v /= total;
            }
        }
    }
    c
}

/// Correlation graph from training-span trips. The diagonal (same-station
/// trips) is eligible for selection.
pub fn build_correlation(records: &[AfcRecord], n: usize, selection: Selection) -> Result<WeightedGraph> {
    let ratios = correlation_ratios(&od_counts(records, n)?);
    let mut g = finish_virtual(&ratios, selection, true, GraphKind::Correlation)?;
    g.metadata.insert("trips".into(), records.len().to_string());
    Ok(g)
}
