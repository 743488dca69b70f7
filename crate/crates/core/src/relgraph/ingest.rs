use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::schema::{ColumnKind, SchemaManifest};
use super::GraphError;

/// Typed column storage. `None` marks a null cell.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    /// Codes index into `vocab`, which is built in order of first appearance.
    Categorical { codes: Vec<Option<u32>>, vocab: Vec<String> },
    /// Epoch seconds.
    Timestamp(Vec<Option<i64>>),
    PrimaryKey(Vec<String>),
    /// Row indices into the target table.
    ForeignKey { target: usize, rows: Vec<Option<usize>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableData {
    pub name: String,
    pub n_rows: usize,
    /// Same order as the manifest's column list.
    pub columns: Vec<ColumnData>,
}

impl TableData {
    pub fn column(&self, manifest: &SchemaManifest, name: &str) -> Option<&ColumnData> {
        let schema = manifest.tables.iter().find(|t| t.name == self.name)?;
        let pos = schema.columns.iter().position(|c| c.name == name)?;
        self.columns.get(pos)
    }

    /// The first timestamp column, if any.
    pub fn timestamps(&self) -> Option<&[Option<i64>]> {
        self.columns.iter().find_map(|c| match c {
            ColumnData::Timestamp(v) => Some(v.as_slice()),
            _ => None,
        })
    }

    pub fn primary_keys(&self) -> &[String] {
        self.columns
            .iter()
            .find_map(|c| match c {
                ColumnData::PrimaryKey(v) => Some(v.as_slice()),
                _ => None,
            })
            .expect("validated tables have a primary key")
    }
}

/// A foreign key whose value matched no row of the target table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DanglingKey {
    pub table: String,
    pub column: String,
    /// 1-based data row (the header is line 1, so this is line − 1).
    pub row: usize,
    pub value: String,
}

/// Schema plus typed row data for every table.
#[derive(Clone, Debug)]
pub struct RelationalBundle {
    pub manifest: SchemaManifest,
    pub tables: Vec<TableData>,
    /// Foreign keys dropped during ingest.
    pub dangling: Vec<DanglingKey>,
}

impl PartialEq for RelationalBundle {
    /// Bundles compare on schema and data; the ingest report is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.tables == other.tables
    }
}

impl RelationalBundle {
    pub fn table(&self, name: &str) -> Option<&TableData> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Labels and timestamps of a task, one entry per row of its table.
    pub fn task_rows(&self, task: &str) -> Result<TaskRows, GraphError> {
        let m = &self.manifest;
        let schema = m.task(task).ok_or_else(|| GraphError::Schema(format!("unknown task {task}")))?;
        let table_idx = m.table_index(&schema.table).expect("validated");
        let table = &self.tables[table_idx];
        let labels = match table.column(m, &schema.label) {
            Some(ColumnData::Numeric(v)) => v.clone(),
            _ => unreachable!("validated label column"),
        };
        let times = match table.column(m, &schema.timestamp) {
            Some(ColumnData::Timestamp(v)) => v.clone(),
            _ => unreachable!("validated timestamp column"),
        };
        Ok(TaskRows { table: table_idx, labels, times })
    }

    /// Writes every table back to CSV under `dir` using the manifest's file
    /// names, plus the manifest itself as `manifest.json`.
    pub fn emit(&self, dir: &Path) -> Result<(), GraphError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), self.manifest.to_json())?;
        for (schema, table) in self.manifest.tables.iter().zip(&self.tables) {
            let mut w = csv::Writer::from_path(dir.join(&schema.file))?;
            w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
            let mut record: Vec<String> = Vec::with_capacity(schema.columns.len());
            for r in 0..table.n_rows {
                record.clear();
                for col in &table.columns {
                    record.push(match col {
                        ColumnData::Numeric(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                        ColumnData::Categorical { codes, vocab } => {
                            codes[r].map(|c| vocab[c as usize].clone()).unwrap_or_default()
                        }
                        ColumnData::Timestamp(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                        ColumnData::PrimaryKey(v) => v[r].clone(),
                        ColumnData::ForeignKey { target, rows } => {
                            rows[r].map(|t| self.tables[*target].primary_keys()[t].clone()).unwrap_or_default()
                        }
                    });
                }
                w.write_record(&record)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Per-row labels and observation times for one task.
#[derive(Clone, Debug)]
pub struct TaskRows {
    pub table: usize,
    pub labels: Vec<Option<f64>>,
    pub times: Vec<Option<i64>>,
}

impl TaskRows {
    /// Row indices carrying a label.
    pub fn labeled_rows(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&r| self.labels[r].is_some()).collect()
    }
}

/// Parses epoch seconds, RFC 3339, `YYYY-MM-DD HH:MM:SS` or `YYYY-MM-DD`
/// (the last two read as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

enum RawColumn {
    Typed(ColumnData),
    ForeignKey { target: usize, values: Vec<Option<String>> },
}

/// Reads the CSV of every table in `manifest` from `base_dir`.
///
/// Foreign keys that match no target row are dropped (set to null) and
/// reported in [`RelationalBundle::dangling`].
pub fn ingest(manifest: &SchemaManifest, base_dir: &Path) -> Result<RelationalBundle, GraphError> {
    manifest.validate()?;
    let mut raw_tables = Vec::with_capacity(manifest.tables.len());
    for schema in &manifest.tables {
        let path = base_dir.join(&schema.file);
        let mut reader = csv::Reader::from_path(&path)?;
        let header = reader.headers()?.clone();
        let mut positions = Vec::with_capacity(schema.columns.len());
        for c in &schema.columns {
            let pos = header.iter().position(|h| h == c.name).ok_or_else(|| GraphError::MissingColumn {
                table: schema.name.clone(),
                column: c.name.clone(),
            })?;
            positions.push(pos);
        }
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
        for record in reader.records() {
            let record = record?;
            for (k, &pos) in positions.iter().enumerate() {
                cells[k].push(record.get(pos).unwrap_or("").to_string());
            }
        }
        let n_rows = cells.first().map_or(0, Vec::len);
        let mut columns = Vec::with_capacity(schema.columns.len());
        for (c, values) in schema.columns.iter().zip(cells) {
            let parse_err = |row: usize, message: String| GraphError::Parse {
                table: schema.name.clone(),
                column: c.name.clone(),
                line: row + 2,
                message,
            };
            let col = match &c.kind {
                ColumnKind::Numeric => {
                    let mut out = Vec::with_capacity(n_rows);
                    for (r, v) in values.iter().enumerate() {
                        out.push(if v.is_empty() {
                            None
                        } else {
                            let x: f64 = v.trim().parse().map_err(|_| parse_err(r, format!("not a number: {v:?}")))?;
                            if !x.is_finite() {
                                return Err(parse_err(r, format!("non-finite value {v:?}")));
                            }
                            Some(x)
                        });
                    }
                    RawColumn::Typed(ColumnData::Numeric(out))
                }
                ColumnKind::Categorical => {
                    let mut vocab: Vec<String> = Vec::new();
                    let mut lookup: HashMap<String, u32> = HashMap::new();
                    let codes = values
                        .into_iter()
                        .map(|v| {
                            if v.is_empty() {
                                return None;
                            }
                            Some(*lookup.entry(v.clone()).or_insert_with(|| {
                                vocab.push(v);
                                (vocab.len() - 1) as u32
                            }))
                        })
                        .collect();
                    RawColumn::Typed(ColumnData::Categorical { codes, vocab })
                }
                ColumnKind::Timestamp => {
                    let mut out = Vec::with_capacity(n_rows);
                    for (r, v) in values.iter().enumerate() {
                        out.push(if v.is_empty() {
                            None
                        } else {
                            Some(parse_timestamp(v).ok_or_else(|| parse_err(r, format!("unparsable timestamp {v:?}")))?)
                        });
                    }
                    RawColumn::Typed(ColumnData::Timestamp(out))
                }
                ColumnKind::PrimaryKey => {
                    let mut seen = HashMap::new();
                    for (r, v) in values.iter().enumerate() {
                        if v.is_empty() {
                            return Err(parse_err(r, "empty primary key".into()));
                        }
                        if seen.insert(v.clone(), r).is_some() {
                            return Err(parse_err(r, format!("duplicate primary key {v:?}")));
                        }
                    }
                    RawColumn::Typed(ColumnData::PrimaryKey(values))
                }
                ColumnKind::ForeignKey { target } => RawColumn::ForeignKey {
                    target: manifest.table_index(target).expect("validated"),
                    values: values.into_iter().map(|v| if v.is_empty() { None } else { Some(v) }).collect(),
                },
            };
            columns.push(col);
        }
        raw_tables.push((n_rows, columns));
    }

    let pk_lookup: Vec<HashMap<String, usize>> = raw_tables
        .iter()
        .map(|(_, cols)| {
            cols.iter()
                .find_map(|c| match c {
                    RawColumn::Typed(ColumnData::PrimaryKey(v)) => {
                        Some(v.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect())
                    }
                    _ => None,
                })
                .expect("validated tables have a primary key")
        })
        .collect();

    let mut dangling = Vec::new();
    let mut tables = Vec::with_capacity(raw_tables.len());
    for ((n_rows, raw), schema) in raw_tables.into_iter().zip(&manifest.tables) {
        let mut columns = Vec::with_capacity(raw.len());
        for (col, cs) in raw.into_iter().zip(&schema.columns) {
            columns.push(match col {
                RawColumn::Typed(c) => c,
                RawColumn::ForeignKey { target, values } => {
                    let rows = values
                        .into_iter()
                        .enumerate()
                        .map(|(r, v)| {
                            let v = v?;
                            match pk_lookup[target].get(&v) {
                                Some(&t) => Some(t),
                                None => {
                                    log::warn!("{}.{} row {}: dangling foreign key {v:?} dropped", schema.name, cs.name, r + 1);
                                    dangling.push(DanglingKey {
                                        table: schema.name.clone(),
                                        column: cs.name.clone(),
                                        row: r + 1,
                                        value: v,
                                    });
                                    None
                                }
                            }
                        })
                        .collect();
                    ColumnData::ForeignKey { target, rows }
                }
            });
        }
        tables.push(TableData { name: schema.name.clone(), n_rows, columns });
    }

    let bundle = RelationalBundle { manifest: manifest.clone(), tables, dangling };
    for task in &manifest.tasks {
        let rows = bundle.task_rows(&task.name)?;
        if let Some(r) = rows.labels.iter().position(|l| matches!(l, Some(v) if *v != 0.0 && *v != 1.0)) {
            return Err(GraphError::Parse {
                table: task.table.clone(),
                column: task.label.clone(),
                line: r + 2,
                message: format!("label {} is not binary", rows.labels[r].unwrap()),
            });
        }
    }
    Ok(bundle)
}
