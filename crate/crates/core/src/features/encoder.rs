use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FeatureError;
use crate::relgraph::{seeds, ColumnData, ColumnKind, RelationalBundle};

pub const DEFAULT_D_ENC: usize = 128;
pub const DEFAULT_BUCKETS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericStat {
    /// Position in the table's column list.
    pub column: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEncoding {
    pub table: String,
    pub numeric: Vec<NumericStat>,
    /// `(column position, column name)` of hashed categoricals.
    pub categorical: Vec<(usize, String)>,
    #[serde(skip)]
    projection: Vec<f64>,
}

impl TableEncoding {
    pub fn input_width(&self, buckets: usize) -> usize {
        self.numeric.len() + buckets * self.categorical.len()
    }
}

/// Standardize, hash, project. Parameters are fixed once fitted.
///
/// Numeric columns (minus task labels) are standardized with statistics of
/// the fitting rows, categoricals are one-hot hashed into `buckets` slots, and
/// the concatenation is multiplied by a Gaussian matrix seeded from the
/// manifest digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenRowEncoder {
    pub d_enc: usize,
    pub buckets: usize,
    pub manifest_digest: String,
    pub tables: Vec<TableEncoding>,
}

/// SHA-256 bucket of a categorical value.
pub fn hash_bucket(column: &str, value: &str, buckets: usize) -> usize {
    let mut h = Sha256::new();
    h.update(column.as_bytes());
    h.update([0u8]);
    h.update(value.as_bytes());
    let d = h.finalize();
    (u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) % buckets as u64) as usize
}

/// The projection seed: the first 64 bits of the manifest digest.
pub fn digest_seed(digest: &str) -> u64 {
    u64::from_str_radix(&digest[..16.min(digest.len())], 16).unwrap_or(0)
}

/// Row-major `input_width × d_enc` matrix with N(0, 1/input_width) entries.
pub fn projection_matrix(digest: &str, table: usize, input_width: usize, d_enc: usize) -> Vec<f64> {
    let mut rng = seeds::stream(digest_seed(digest), table as u64);
    let scale = 1.0 / (input_width.max(1) as f64).sqrt();
    (0..input_width * d_enc).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

impl FrozenRowEncoder {
    /// Fits standardization statistics on rows for which `include(table, row)`
    /// holds.
    pub fn fit(
        bundle: &RelationalBundle,
        d_enc: usize,
        buckets: usize,
        include: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let m = &bundle.manifest;
        let digest = m.digest();
        let mut tables = Vec::with_capacity(m.tables.len());
        for (ti, (schema, data)) in m.tables.iter().zip(&bundle.tables).enumerate() {
            let labels = m.label_columns(&schema.name);
            let mut numeric = Vec::new();
            let mut categorical = Vec::new();
            for (ci, (cs, col)) in schema.columns.iter().zip(&data.columns).enumerate() {
                if labels.contains(cs.name.as_str()) {
                    continue;
                }
                match (&cs.kind, col) {
                    (ColumnKind::Numeric, ColumnData::Numeric(v)) => {
                        let vals: Vec<f64> = (0..data.n_rows).filter(|&r| include(ti, r)).filter_map(|r| v[r]).collect();
                        let n = vals.len() as f64;
                        let (mean, std) = if vals.is_empty() {
                            (0.0, 1.0)
                        } else {
                            let mean = vals.iter().sum::<f64>() / n;
                            let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
                        };
                        numeric.push(NumericStat { column: ci, mean, std });
                    }
                    (ColumnKind::Categorical, _) => categorical.push((ci, cs.name.clone())),
                    _ => {}
                }
            }
            tables.push(TableEncoding { table: schema.name.clone(), numeric, categorical, projection: Vec::new() });
        }
        let mut enc = Self { d_enc, buckets, manifest_digest: digest, tables };
        enc.rebuild_projections();
        enc
    }

    /// Regenerates the projection matrices, e.g. after deserializing.
    pub fn rebuild_projections(&mut self) {
        for (ti, t) in self.tables.iter_mut().enumerate() {
            t.projection = projection_matrix(&self.manifest_digest, ti, t.input_width(self.buckets), self.d_enc);
        }
    }

    pub fn table_index(&self, table: &str) -> Result<usize, FeatureError> {
        self.tables.iter().position(|t| t.table == table).ok_or_else(|| FeatureError::UnknownTable(table.to_string()))
    }

    /// The pre-projection vector of one row.
    pub fn input_vector(&self, bundle: &RelationalBundle, table: usize, row: usize) -> Vec<f64> {
        let t = &self.tables[table];
        let data = &bundle.tables[table];
        let mut x = vec![0.0; t.input_width(self.buckets)];
        for (k, s) in t.numeric.iter().enumerate() {
            if let ColumnData::Numeric(v) = &data.columns[s.column] {
                if let Some(val) = v[row] {
                    x[k] = (val - s.mean) / s.std;
                }
            }
        }
        let base = t.numeric.len();
        for (k, (ci, name)) in t.categorical.iter().enumerate() {
            if let ColumnData::Categorical { codes, vocab } = &data.columns[*ci] {
                if let Some(c) = codes[row] {
                    x[base + k * self.buckets + hash_bucket(name, &vocab[c as usize], self.buckets)] = 1.0;
                }
            }
        }
        x
    }

    pub fn encode_row(&self, bundle: &RelationalBundle, table: usize, row: usize) -> Vec<f64> {
        let x = self.input_vector(bundle, table, row);
        let p = &self.tables[table].projection;
        let mut out = vec![0.0; self.d_enc];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                crate::autodiff::axpy(xi, &p[i * self.d_enc..(i + 1) * self.d_enc], &mut out);
            }
        }
        out
    }

    pub fn encode_by_name(&self, bundle: &RelationalBundle, table: &str, row: usize) -> Result<Vec<f64>, FeatureError> {
        let ti = self.table_index(table)?;
        Ok(self.encode_row(bundle, ti, row))
    }

    /// SHA-256 over the fitted state.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("encoder serializes");
        crate::autodiff::hex(&Sha256::digest(&bytes))
    }
}
