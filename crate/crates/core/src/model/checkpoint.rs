//! `PVC1` container: magic, a `key=value` header, then named tensors.
//!
//! ```text
//! "PVC1"  u32 header_len  header (UTF-8)
//! u32 count
//! count × { u32 name_len  name  u32 rank  rank × u32 dim  f64 payload }
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::params::PvcgnParams;
use super::{FcRecurrence, GraphSet, ModelConfig};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::ingest::NormStats;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"PVC1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: PvcgnParams<T>,
    /// Content hash of the graphs the parameters were trained against.
    pub graph_hash: String,
    pub input_norm: Option<NormStats>,
    pub target_norm: Option<NormStats>,
    /// Free-form provenance (epoch, seed, ...).
    pub metadata: BTreeMap<String, String>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    Ok(buf)
}

fn header<T: Scalar>(ck: &Checkpoint<T>) -> KeyValues {
    let c = &ck.params.config;
    let mut kv = KeyValues::default();
    for (k, v) in &ck.metadata {
        kv.set(&format!("meta.{k}"), v);
    }
    kv.set("n_stations", &c.n_stations.to_string());
    kv.set("channels", &c.channels.to_string());
    kv.set("d", &c.d.to_string());
    kv.set("graphs", &c.graphs.to_string());
    kv.set("global_branch", &c.global_branch.to_string());
    kv.set("fc_recurrence", &c.fc_recurrence.to_string());
    kv.set("precision", T::PRECISION);
    kv.set("graph_hash", &ck.graph_hash);
    for (key, s) in [("input_norm", ck.input_norm), ("target_norm", ck.target_norm)] {
        if let Some(s) = s {
            // shortest round-trip representation
            kv.set(&format!("{key}.mean"), &format!("{:?}", s.mean));
            kv.set(&format!("{key}.std"), &format!("{:?}", s.std));
        }
    }
    kv
}

pub fn write_checkpoint<T: Scalar, W: Write>(ck: &Checkpoint<T>, mut w: W) -> Result<()> {
    let text = header(ck).render();
    w.write_all(MAGIC)?;
    put_u32(&mut w, text.len())?;
    w.write_all(text.as_bytes())?;
    let p = &ck.params;
    put_u32(&mut w, p.tensors.len())?;
    for (name, t) in p.names.iter().zip(&p.tensors) {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, 2)?;
        put_u32(&mut w, t.rows())?;
        put_u32(&mut w, t.cols())?;
        for &v in t.as_slice() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn norm_from(kv: &KeyValues, key: &str) -> Result<Option<NormStats>> {
    match (kv.get(&format!("{key}.mean")), kv.get(&format!("{key}.std"))) {
        (Some(m), Some(s)) => {
            let parse = |v: &str| v.parse::<f64>().map_err(|_| Error::Format(format!("bad {key} value '{v}'")));
            Ok(Some(NormStats::new(parse(m)?, parse(s)?)?))
        }
        (None, None) => Ok(None),
        _ => Err(Error::Format(format!("incomplete {key} in checkpoint header"))),
    }
}

fn required<'k>(kv: &'k KeyValues, key: &str) -> Result<&'k str> {
    kv.get(key).ok_or_else(|| Error::Format(format!("checkpoint header lacks '{key}'")))
}

fn parse_field<F: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<F> {
    let v = required(kv, key)?;
    v.parse().map_err(|_| Error::Format(format!("checkpoint header '{key}={v}' is invalid")))
}

/// Reads a checkpoint. With `expected_graph_hash`, a checkpoint trained
/// against other graphs is refused.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R, expected_graph_hash: Option<&str>) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a PVC1 checkpoint".into()));
    }
    let len = get_u32(&mut r)?;
    let text = String::from_utf8(get_bytes(&mut r, len)?).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let kv = KeyValues::parse(&text)?;
    let graph_hash = required(&kv, "graph_hash")?.to_string();
    if let Some(want) = expected_graph_hash {
        if want != graph_hash {
            return Err(Error::GraphMismatch { expected: graph_hash, found: want.to_string() });
        }
    }
    let config = ModelConfig {
        n_stations: parse_field(&kv, "n_stations")?,
        channels: parse_field(&kv, "channels")?,
        d: parse_field(&kv, "d")?,
        graphs: required(&kv, "graphs")?.parse::<GraphSet>()?,
        global_branch: parse_field(&kv, "global_branch")?,
        fc_recurrence: required(&kv, "fc_recurrence")?.parse::<FcRecurrence>()?,
    };
    let mut params = PvcgnParams::<T>::zeros(config)?;
    let count = get_u32(&mut r)?;
    if count != params.tensors.len() {
        return Err(Error::Format(format!("checkpoint has {count} tensors, model needs {}", params.tensors.len())));
    }
    for k in 0..count {
        let name_len = get_u32(&mut r)?;
        let name = String::from_utf8(get_bytes(&mut r, name_len)?).map_err(|_| Error::Format("tensor name".into()))?;
        if name != params.names[k] {
            return Err(Error::Format(format!("tensor {k} is '{name}', expected '{}'", params.names[k])));
        }
        let rank = get_u32(&mut r)?;
        let dims = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let want = params.tensors[k].shape();
        if dims != [want.0, want.1] {
            return Err(Error::Format(format!("tensor '{name}' has dims {dims:?}, expected {want:?}")));
        }
        let bytes = get_bytes(&mut r, want.0 * want.1 * 8)?;
        let data = bytes.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        params.tensors[k] = Matrix::from_vec(want.0, want.1, data)?;
    }
    let metadata = kv.iter().filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.to_string()))).collect();
    Ok(Checkpoint {
        params,
        graph_hash,
        input_norm: norm_from(&kv, "input_norm")?,
        target_norm: norm_from(&kv, "target_norm")?,
        metadata,
    })
}

pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(ck, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path, expected_graph_hash: Option<&str>) -> Result<Checkpoint<T>> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?), expected_graph_hash)
}
