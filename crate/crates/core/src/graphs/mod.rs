//! Physical, similarity and correlation graphs over the station set.

mod build;
pub mod dtw;
mod weighted;

pub use build::{
    build_correlation, build_physical, build_similarity, build_similarity_cached, correlation_ratios,
    dtw_matrix_cached, od_counts, row_normalize, select_threshold, select_topk, select_topk_with_diagonal,
    similarity_from_distances, similarity_matrix, zscored_series, Selection,
};
pub use dtw::{dtw_distance, dtw_matrix};
pub use weighted::{Edge, EdgeList, GraphJson, GraphKind, GraphTriple, JsonEdge, WeightedGraph};

/// Reads an undirected topology CSV with header `src,dst` naming stations.
pub fn read_topology<R: std::io::Read>(
    reader: R,
    index: &crate::ingest::StationIndex,
) -> crate::Result<Vec<(usize, usize)>> {
    use crate::Error;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["src", "dst"] {
        return Err(Error::Parse { line: 1, message: "expected header src,dst".into() });
    }
    let mut pairs = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let get = |c: usize| {
            index.get(&rec[c]).ok_or_else(|| Error::Parse { line, message: format!("unknown station {:?}", &rec[c]) })
        };
        pairs.push((get(0)?, get(1)?));
    }
    Ok(pairs)
}

pub fn write_topology<W: std::io::Write>(
    writer: W,
    pairs: &[(usize, usize)],
    index: &crate::ingest::StationIndex,
) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["src", "dst"])?;
    for &(a, b) in pairs {
        w.write_record([index.name(a), index.name(b)])?;
    }
    w.flush()?;
    Ok(())
}
