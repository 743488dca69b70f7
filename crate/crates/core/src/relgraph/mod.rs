//! Relational tables to a heterogeneous temporal graph, plus temporal
//! neighborhood sampling.

mod graph;
mod ingest;
mod sample;
mod schema;
pub mod seeds;

pub use graph::{EdgeType, HeteroGraph, NodeId, STATIC_TIME};
pub use ingest::{ingest, parse_timestamp, ColumnData, DanglingKey, RelationalBundle, TableData, TaskRows};
pub use sample::{sample_neighborhood, SampledSubgraph, SubgraphEdges};
pub use schema::{ColumnKind, ColumnSchema, SchemaManifest, TableSchema, TaskSchema};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("table {table} is missing column {column}")]
    MissingColumn { table: String, column: String },
    #[error("{table}.{column} line {line}: {message}")]
    Parse { table: String, column: String, line: usize, message: String },
    #[error("unknown seed node {0}")]
    UnknownSeed(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
