//! Node input features: frozen row encodings, time features and temporal
//! random-walk positional encodings, concatenated in that order.

mod encoder;
mod rwpe;
mod time;

pub use encoder::{
    digest_seed, hash_bucket, projection_matrix, FrozenRowEncoder, NumericStat, TableEncoding, DEFAULT_BUCKETS,
    DEFAULT_D_ENC,
};
pub use rwpe::{rwpe, rwpe_traced, walk_key, DEFAULT_WALKS, DEFAULT_WALK_LENGTH};
pub use time::{time_features, time_width, DEFAULT_TIME_PAIRS};

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor2;
use crate::relgraph::{HeteroGraph, NodeId, RelationalBundle, SampledSubgraph, STATIC_TIME};

pub const FEATURE_CACHE_MAGIC: &[u8; 4] = b"KSFC";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("stale feature cache: {0}")]
    StaleCache(String),
    #[error("malformed feature cache: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub d_enc: usize,
    pub buckets: usize,
    pub time_pairs: usize,
    pub rwpe_k: usize,
    pub walks: usize,
    pub rwpe_seed: u64,
    /// Neighbor sampling fanout per hop, outward from the seed.
    pub fanout: Vec<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            d_enc: DEFAULT_D_ENC,
            buckets: DEFAULT_BUCKETS,
            time_pairs: DEFAULT_TIME_PAIRS,
            rwpe_k: DEFAULT_WALK_LENGTH,
            walks: DEFAULT_WALKS,
            rwpe_seed: 0,
            fanout: vec![16, 8, 4],
        }
    }
}

impl FeatureConfig {
    pub fn width(&self) -> usize {
        self.d_enc + time_width(self.time_pairs) + self.rwpe_k
    }

    /// Fields that determine cached feature values.
    fn cache_key(&self) -> serde_json::Value {
        serde_json::json!([self.d_enc, self.buckets, self.time_pairs, self.rwpe_k, self.walks, self.rwpe_seed])
    }
}

/// Smallest and largest non-static node time among nodes passing `include`;
/// widened to a unit interval when degenerate.
pub fn time_range(g: &HeteroGraph, include: impl Fn(NodeId) -> bool) -> (i64, i64) {
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for n in 0..g.num_nodes() {
        let t = g.node_time(n);
        if t != STATIC_TIME && include(n) {
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    if lo > hi {
        return (0, 1);
    }
    if lo == hi {
        hi = lo + 1;
    }
    (lo, hi)
}

/// Assembles feature rows and memoises them per `(node, seed time)`.
pub struct Featurizer {
    pub config: FeatureConfig,
    pub encoder: FrozenRowEncoder,
    pub t_min: i64,
    pub t_max: i64,
    static_part: Vec<Vec<f64>>,
    cache: RwLock<HashMap<(NodeId, i64), Vec<f64>>>,
}

impl Featurizer {
    pub fn new(
        config: FeatureConfig,
        encoder: FrozenRowEncoder,
        bundle: &RelationalBundle,
        g: &HeteroGraph,
        t_min: i64,
        t_max: i64,
    ) -> Self {
        let static_part = (0..g.num_nodes())
            .into_par_iter()
            .map(|n| {
                let (t, r) = g.locate(n);
                let mut v = encoder.encode_row(bundle, t, r);
                v.extend(time_features(g.node_time(n), t_min, t_max, config.time_pairs));
                v
            })
            .collect();
        Self { config, encoder, t_min, t_max, static_part, cache: RwLock::new(HashMap::new()) }
    }

    pub fn width(&self) -> usize {
        self.config.width()
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("feature cache lock").len()
    }

    /// Ensures every `(node, at)` key is cached.
    pub fn prepare(&self, g: &HeteroGraph, keys: &[(NodeId, i64)]) {
        let mut missing: Vec<(NodeId, i64)> = {
            let cache = self.cache.read().expect("feature cache lock");
            keys.iter().copied().filter(|k| !cache.contains_key(k)).collect()
        };
        if missing.is_empty() {
            return;
        }
        missing.sort_unstable();
        missing.dedup();
        let c = &self.config;
        let sp = &self.static_part;
        let fresh: Vec<_> = missing
            .into_par_iter()
            .map(|(n, at)| {
                let mut v = sp[n].clone();
                v.extend(rwpe(g, n, at, c.rwpe_k, c.walks, c.rwpe_seed));
                ((n, at), v)
            })
            .collect();
        self.cache.write().expect("feature cache lock").extend(fresh);
    }

    pub fn node_features(&self, g: &HeteroGraph, node: NodeId, at: i64) -> Vec<f64> {
        self.prepare(g, &[(node, at)]);
        self.cache.read().expect("feature cache lock")[&(node, at)].clone()
    }

    /// One feature row per local node of the subgraph.
    pub fn subgraph_features(&self, g: &HeteroGraph, sub: &SampledSubgraph) -> Tensor2 {
        let keys: Vec<_> = (0..sub.num_nodes()).map(|l| (sub.global[l], sub.time_of(l))).collect();
        self.prepare(g, &keys);
        let w = self.width();
        let mut data = Vec::with_capacity(keys.len() * w);
        let cache = self.cache.read().expect("feature cache lock");
        for k in &keys {
            data.extend_from_slice(&cache[k]);
        }
        Tensor2::from_vec(keys.len(), w, data)
    }

    /// Binary cache: magic, u32 version, u64 header length, JSON header, then
    /// per record u64 node, i64 seed time and `width` little-endian f64.
    pub fn save_cache(&self, path: &Path) -> Result<(), FeatureError> {
        let header = serde_json::json!({
            "version": 1,
            "d_enc": self.config.d_enc,
            "time_width": time_width(self.config.time_pairs),
            "rwpe_k": self.config.rwpe_k,
            "manifest_digest": self.encoder.manifest_digest,
            "encoder_digest": self.encoder.digest(),
            "config": self.config.cache_key(),
            "time_range": [self.t_min, self.t_max],
            "records": self.cached(),
        });
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(FEATURE_CACHE_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let cache = self.cache.read().expect("feature cache lock");
        let mut keys: Vec<_> = cache.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            w.write_all(&(k.0 as u64).to_le_bytes())?;
            w.write_all(&k.1.to_le_bytes())?;
            for x in &cache[&k] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads records written by [`Featurizer::save_cache`]. Fails with
    /// [`FeatureError::StaleCache`] if the file was produced under a
    /// different manifest, encoder, time range or feature configuration.
    pub fn load_cache(&self, path: &Path) -> Result<usize, FeatureError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_CACHE_MAGIC {
            return Err(FeatureError::Malformed("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(FeatureError::Malformed("unsupported version".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header)?;
        let header: serde_json::Value =
            serde_json::from_slice(&header).map_err(|e| FeatureError::Malformed(e.to_string()))?;
        let expect = |field: &str, value: serde_json::Value| -> Result<(), FeatureError> {
            if header[field] != value {
                return Err(FeatureError::StaleCache(format!("{field} differs")));
            }
            Ok(())
        };
        expect("manifest_digest", self.encoder.manifest_digest.clone().into())?;
        expect("encoder_digest", self.encoder.digest().into())?;
        expect("config", self.config.cache_key())?;
        expect("time_range", serde_json::json!([self.t_min, self.t_max]))?;
        let n = header["records"].as_u64().ok_or_else(|| FeatureError::Malformed("records".into()))? as usize;
        let w = self.width();
        let mut cache = self.cache.write().expect("feature cache lock");
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            let node = u64::from_le_bytes(b8) as usize;
            if node >= self.static_part.len() {
                return Err(FeatureError::StaleCache(format!("node {node} out of range")));
            }
            r.read_exact(&mut b8)?;
            let at = i64::from_le_bytes(b8);
            let mut v = Vec::with_capacity(w);
            for _ in 0..w {
                r.read_exact(&mut b8)?;
                v.push(f64::from_le_bytes(b8));
            }
            cache.insert((node, at), v);
        }
        Ok(n)
    }
}
