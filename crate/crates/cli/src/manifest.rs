//! Run manifests: enough provenance to reproduce a run byte-for-byte.

use serde::Serialize;

use mcn_core::graph::Dataset;

pub const MANIFEST_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "MCN1";

#[derive(Serialize)]
pub struct DatasetFingerprint {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    /// FNV-1a over the edge list and dimensions.
    pub hash: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub checkpoint_format: &'static str,
    pub tool_version: &'static str,
    pub config: String,
    pub dataset: DatasetFingerprint,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut state: u64) -> u64 {
    for b in bytes {
        state ^= b as u64;
        state = state.wrapping_mul(0x100000001b3);
    }
    state
}

pub fn fingerprint(data: &Dataset) -> DatasetFingerprint {
    let mut h = 0xcbf29ce484222325u64;
    for (u, v) in data.graph.edges() {
        h = fnv1a(u.to_le_bytes(), h);
        h = fnv1a(v.to_le_bytes(), h);
    }
    for dim in [
        data.graph.n_nodes(),
        data.features.dim(),
        data.labels.n_classes,
    ] {
        h = fnv1a(dim.to_le_bytes(), h);
    }
    DatasetFingerprint {
        n_nodes: data.graph.n_nodes(),
        n_edges: data.graph.n_edges(),
        feature_dim: data.features.dim(),
        n_classes: data.labels.n_classes,
        hash: format!("{h:016x}"),
    }
}

impl RunManifest {
    pub fn new(config: String, data: &Dataset, seeds: Vec<u64>, outputs: Vec<String>) -> Self {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            checkpoint_format: CHECKPOINT_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            dataset: fingerprint(data),
            seeds,
            outputs,
        }
    }
}
