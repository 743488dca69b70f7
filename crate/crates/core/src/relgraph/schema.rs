use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GraphError;

/// Describes the tables of one database and the binary tasks defined on it.
///
/// Stored as JSON next to the table CSVs; `file` paths are resolved relative
/// to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaManifest {
    /// Database name, used to group tasks into supervision regimes.
    pub name: String,
    pub tables: Vec<TableSchema>,
    #[serde(default)]
    pub tasks: Vec<TaskSchema>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    pub name: String,
    pub file: String,
    pub columns: Vec<ColumnSchema>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Timestamp,
    PrimaryKey,
    ForeignKey { target: String },
}

/// A binary classification task: one label per row of `table`, observed at
/// the row's `timestamp`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSchema {
    pub name: String,
    pub table: String,
    pub label: String,
    pub timestamp: String,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self { name: name.into(), kind }
    }
}

impl SchemaManifest {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let m: SchemaManifest = serde_json::from_str(text).map_err(|e| GraphError::Schema(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Reads and validates a manifest file; returns it with the directory its
    /// table paths are relative to.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), GraphError> {
        let text = std::fs::read_to_string(path)?;
        let m = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        crate::autodiff::hex(&Sha256::digest(&bytes))
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn task(&self, name: &str) -> Option<&TaskSchema> {
        self.tasks.iter().find(|t| t.name == name)
    }

    /// Columns that carry task labels and must stay invisible to features.
    pub fn label_columns(&self, table: &str) -> HashSet<&str> {
        self.tasks.iter().filter(|t| t.table == table).map(|t| t.label.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let err = |m: String| Err(GraphError::Schema(m));
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return err(format!("duplicate table {}", t.name));
            }
        }
        for t in &self.tables {
            let mut cols = HashSet::new();
            let mut pks = 0;
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return err(format!("duplicate column {}.{}", t.name, c.name));
                }
                match &c.kind {
                    ColumnKind::PrimaryKey => pks += 1,
                    ColumnKind::ForeignKey { target } if !names.contains(target.as_str()) => {
                        return err(format!("foreign key {}.{} targets unknown table {target}", t.name, c.name));
                    }
                    _ => {}
                }
            }
            if pks != 1 {
                return err(format!("table {} must have exactly one primary key, found {pks}", t.name));
            }
        }
        let mut task_names = HashSet::new();
        for task in &self.tasks {
            if !task_names.insert(task.name.as_str()) {
                return err(format!("duplicate task {}", task.name));
            }
            let Some(table) = self.tables.iter().find(|t| t.name == task.table) else {
                return err(format!("task {} targets unknown table {}", task.name, task.table));
            };
            let kind_of = |name: &str| table.columns.iter().find(|c| c.name == name).map(|c| &c.kind);
            match kind_of(&task.label) {
                Some(ColumnKind::Numeric) => {}
                Some(_) => return err(format!("task {} label column {} must be numeric", task.name, task.label)),
                None => return err(format!("task {} label column {} missing", task.name, task.label)),
            }
            match kind_of(&task.timestamp) {
                Some(ColumnKind::Timestamp) => {}
                _ => {
                    return err(format!(
                        "task {} timestamp column {} must exist with kind timestamp",
                        task.name, task.timestamp
                    ))
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "name": "shop",
        "tables": [
            {"name": "users", "file": "users.csv", "columns": [
                {"name": "user_id", "kind": "primary_key"},
                {"name": "age", "kind": "numeric"},
                {"name": "churned", "kind": "numeric"},
                {"name": "seen_at", "kind": "timestamp"}
            ]},
            {"name": "orders", "file": "orders.csv", "columns": [
                {"name": "order_id", "kind": "primary_key"},
                {"name": "user_id", "kind": "foreign_key", "target": "users"}
            ]}
        ],
        "tasks": [{"name": "churn", "table": "users", "label": "churned", "timestamp": "seen_at"}]
    }"#;

    #[test]
    fn parses_tagged_column_kinds() {
        let m = SchemaManifest::from_json(TOY).unwrap();
        assert_eq!(m.tables[1].columns[1].kind, ColumnKind::ForeignKey { target: "users".into() });
        assert_eq!(m.label_columns("users").into_iter().collect::<Vec<_>>(), vec!["churned"]);
        let back = SchemaManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest(), m.digest());
    }

    #[test]
    fn rejects_dangling_targets_and_missing_keys() {
        let bad = TOY.replace("\"target\": \"users\"", "\"target\": \"people\"");
        assert!(matches!(SchemaManifest::from_json(&bad), Err(GraphError::Schema(_))));
        let no_pk = TOY.replace("{\"name\": \"order_id\", \"kind\": \"primary_key\"},", "");
        assert!(matches!(SchemaManifest::from_json(&no_pk), Err(GraphError::Schema(_))));
        let bad_task = TOY.replace("\"label\": \"churned\"", "\"label\": \"seen_at\"");
        assert!(matches!(SchemaManifest::from_json(&bad_task), Err(GraphError::Schema(_))));
    }
}
