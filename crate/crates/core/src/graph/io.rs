//! On-disk layout of a finalized split: `nodes.txt` (one account id per
//! line), `edges.bin` (u32 little-endian index pairs), `attrs.f32`
//! (row-major normalized attributes), `raw_attrs.f64` (row-major raw
//! attributes) and `meta.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphSplit, NormStats, RawAttributes, N_ATTRS};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::util::{read_file, read_json, read_string, sha256_hex, write_file, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub split_index: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub attr_width: usize,
    pub norm: Option<NormStats>,
    /// SHA-256 of every data file, keyed by file name.
    pub files: BTreeMap<String, String>,
}

fn encode(graph: &GraphSplit) -> Vec<(&'static str, Vec<u8>)> {
    let mut nodes = String::new();
    for id in &graph.node_ids {
        nodes.push_str(id);
        nodes.push('\n');
    }
    let mut edges = Vec::with_capacity(graph.edges.len() * 8);
    for &(u, v) in &graph.edges {
        edges.extend_from_slice(&u.to_le_bytes());
        edges.extend_from_slice(&v.to_le_bytes());
    }
    let attrs = graph
        .attributes
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let raw = graph
        .raw_attributes
        .iter()
        .flatten()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    vec![
        ("nodes.txt", nodes.into_bytes()),
        ("edges.bin", edges),
        ("attrs.f32", attrs),
        ("raw_attrs.f64", raw),
    ]
}

fn meta_for(graph: &GraphSplit, files: &[(&'static str, Vec<u8>)]) -> SplitMeta {
    SplitMeta {
        split_index: graph.split_index,
        n_nodes: graph.num_nodes(),
        n_edges: graph.num_edges(),
        attr_width: N_ATTRS,
        norm: graph.norm.clone(),
        files: files
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect(),
    }
}

pub fn split_meta(graph: &GraphSplit) -> SplitMeta {
    meta_for(graph, &encode(graph))
}

pub fn save_split(graph: &GraphSplit, dir: &Path) -> Result<SplitMeta> {
    let files = encode(graph);
    let meta = meta_for(graph, &files);
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
    }
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(meta)
}

pub fn load_split(dir: &Path) -> Result<GraphSplit> {
    let meta: SplitMeta = read_json(&dir.join("meta.json"))?;
    let bad = |what: &str| Error::InvalidInput(format!("{}: {what}", dir.display()));

    let node_ids: Vec<String> = read_string(&dir.join("nodes.txt"))?
        .lines()
        .map(str::to_string)
        .collect();
    if node_ids.len() != meta.n_nodes {
        return Err(bad("node count differs from meta.json"));
    }
    let n = node_ids.len();

    let eb = read_file(&dir.join("edges.bin"))?;
    if eb.len() % 8 != 0 {
        return Err(bad("edges.bin length not a multiple of 8"));
    }
    let edges: Vec<(u32, u32)> = eb
        .chunks_exact(8)
        .map(|c| {
            (
                u32::from_le_bytes(c[..4].try_into().unwrap()),
                u32::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect();

    let raw_path = dir.join("raw_attrs.f64");
    let raw: Vec<RawAttributes> = if raw_path.exists() {
        let rb = read_file(&raw_path)?;
        if rb.len() != n * N_ATTRS * 8 {
            return Err(bad("raw_attrs.f64 has the wrong size"));
        }
        rb.chunks_exact(N_ATTRS * 8)
            .map(|row| {
                let mut r = [0.0; N_ATTRS];
                for (j, c) in row.chunks_exact(8).enumerate() {
                    r[j] = f64::from_le_bytes(c.try_into().unwrap());
                }
                r
            })
            .collect()
    } else {
        vec![[0.0; N_ATTRS]; n]
    };

    let ab = read_file(&dir.join("attrs.f32"))?;
    if ab.len() != n * N_ATTRS * 4 {
        return Err(bad("attrs.f32 has the wrong size"));
    }
    let attrs = ab
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut g = GraphSplit::from_parts(meta.split_index, node_ids, edges, raw)?;
    if g.num_edges() != meta.n_edges {
        return Err(bad("edge count differs from meta.json"));
    }
    g.attributes = Tensor::new(n, N_ATTRS, attrs)?;
    g.norm = meta.norm;
    Ok(g)
}
