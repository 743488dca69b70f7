use std::io::Write;
use std::path::Path;

use super::ingest::{ColumnData, RelationalBundle};
use super::schema::ColumnKind;
use super::GraphError;

/// Global node id: tables are laid out contiguously in manifest order.
pub type NodeId = usize;

/// Timestamp of edges whose source row has no time. Always admissible.
pub const STATIC_TIME: i64 = i64::MIN;

/// `(src_table, fk, dst_table)` in the direction of the foreign key, or its
/// reversed twin. Twins have ids `2k` (original) and `2k + 1` (reversed).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeType {
    pub src_table: usize,
    pub fk: String,
    pub dst_table: usize,
    pub reversed: bool,
}

#[derive(Clone, Debug, Default)]
struct TypedEdges {
    src: Vec<NodeId>,
    dst: Vec<NodeId>,
    time: Vec<i64>,
    /// In-edges grouped by destination row (relative to the destination
    /// table), sorted by time within each group.
    in_offsets: Vec<usize>,
    in_edges: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct HeteroGraph {
    table_names: Vec<String>,
    table_offsets: Vec<usize>,
    node_times: Vec<i64>,
    edge_types: Vec<EdgeType>,
    edges: Vec<TypedEdges>,
    /// All out-edges of each node over every type, sorted by time:
    /// `(dst, time)`.
    out_offsets: Vec<usize>,
    out_adj: Vec<(NodeId, i64)>,
}

impl HeteroGraph {
    /// One node per row and, for every non-null foreign key, one edge plus its
    /// reversed twin. Edges take the source row's first timestamp column.
    pub fn build(bundle: &RelationalBundle) -> Self {
        let m = &bundle.manifest;
        let mut table_offsets = Vec::with_capacity(bundle.tables.len() + 1);
        let mut node_times = Vec::new();
        table_offsets.push(0);
        for t in &bundle.tables {
            match t.timestamps() {
                Some(ts) => node_times.extend(ts.iter().map(|v| v.unwrap_or(STATIC_TIME))),
                None => node_times.extend(std::iter::repeat(STATIC_TIME).take(t.n_rows)),
            }
            table_offsets.push(node_times.len());
        }

        let mut edge_types = Vec::new();
        let mut edges = Vec::new();
        for (ti, (schema, table)) in m.tables.iter().zip(&bundle.tables).enumerate() {
            for (cs, col) in schema.columns.iter().zip(&table.columns) {
                let (ColumnKind::ForeignKey { .. }, ColumnData::ForeignKey { target, rows }) = (&cs.kind, col) else {
                    continue;
                };
                let mut fwd = TypedEdges::default();
                for (r, t) in rows.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let u = table_offsets[ti] + r;
                    let v = table_offsets[*target] + t;
                    if u == v {
                        continue;
                    }
                    fwd.src.push(u);
                    fwd.dst.push(v);
                    fwd.time.push(node_times[u]);
                }
                let rev = TypedEdges { src: fwd.dst.clone(), dst: fwd.src.clone(), time: fwd.time.clone(), ..Default::default() };
                edge_types.push(EdgeType { src_table: ti, fk: cs.name.clone(), dst_table: *target, reversed: false });
                edge_types.push(EdgeType { src_table: *target, fk: cs.name.clone(), dst_table: ti, reversed: true });
                edges.push(fwd);
                edges.push(rev);
            }
        }

        for (et, e) in edge_types.iter().zip(edges.iter_mut()) {
            let base = table_offsets[et.dst_table];
            let n_dst = table_offsets[et.dst_table + 1] - base;
            let mut counts = vec![0usize; n_dst + 1];
            for &d in &e.dst {
                counts[d - base + 1] += 1;
            }
            for i in 0..n_dst {
                counts[i + 1] += counts[i];
            }
            let mut fill = counts.clone();
            let mut in_edges = vec![0; e.dst.len()];
            for (k, &d) in e.dst.iter().enumerate() {
                in_edges[fill[d - base]] = k;
                fill[d - base] += 1;
            }
            for w in counts.windows(2) {
                in_edges[w[0]..w[1]].sort_by_key(|&k| (e.time[k], k));
            }
            e.in_offsets = counts;
            e.in_edges = in_edges;
        }

        let n = node_times.len();
        let mut out_counts = vec![0usize; n + 1];
        for e in &edges {
            for &s in &e.src {
                out_counts[s + 1] += 1;
            }
        }
        for i in 0..n {
            out_counts[i + 1] += out_counts[i];
        }
        let mut fill = out_counts.clone();
        let mut out_adj = vec![(0, 0); out_counts[n]];
        for e in &edges {
            for k in 0..e.src.len() {
                out_adj[fill[e.src[k]]] = (e.dst[k], e.time[k]);
                fill[e.src[k]] += 1;
            }
        }
        for w in out_counts.windows(2) {
            out_adj[w[0]..w[1]].sort_by_key(|&(d, t)| (t, d));
        }

        Self {
            table_names: m.tables.iter().map(|t| t.name.clone()).collect(),
            table_offsets,
            node_times,
            edge_types,
            edges,
            out_offsets: out_counts,
            out_adj,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_times.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(|e| e.src.len()).sum()
    }

    pub fn num_tables(&self) -> usize {
        self.table_names.len()
    }

    pub fn table_name(&self, table: usize) -> &str {
        &self.table_names[table]
    }

    pub fn table_nodes(&self, table: usize) -> std::ops::Range<NodeId> {
        self.table_offsets[table]..self.table_offsets[table + 1]
    }

    pub fn node(&self, table: usize, row: usize) -> NodeId {
        debug_assert!(row < self.table_offsets[table + 1] - self.table_offsets[table]);
        self.table_offsets[table] + row
    }

    /// `(table, row)` of a node.
    pub fn locate(&self, node: NodeId) -> (usize, usize) {
        let t = self.table_offsets.partition_point(|&o| o <= node) - 1;
        (t, node - self.table_offsets[t])
    }

    /// The node's own timestamp, or [`STATIC_TIME`].
    pub fn node_time(&self, node: NodeId) -> i64 {
        self.node_times[node]
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    /// `(src, dst, time)` of every edge of a type.
    pub fn edges_of(&self, edge_type: usize) -> impl Iterator<Item = (NodeId, NodeId, i64)> + '_ {
        let e = &self.edges[edge_type];
        (0..e.src.len()).map(move |k| (e.src[k], e.dst[k], e.time[k]))
    }

    /// In-edges of `node` of one type with time ≤ `at`, as `(src, time)` in
    /// time order. Empty if `node` is not in the type's destination table.
    pub fn admissible_in(&self, edge_type: usize, node: NodeId, at: i64) -> impl Iterator<Item = (NodeId, i64)> + '_ {
        let e = &self.edges[edge_type];
        let range = self.in_range(edge_type, node);
        let slice = &e.in_edges[range];
        let n = slice.partition_point(|&k| e.time[k] <= at);
        slice[..n].iter().map(move |&k| (e.src[k], e.time[k]))
    }

    pub(crate) fn admissible_in_count(&self, edge_type: usize, node: NodeId, at: i64) -> usize {
        let e = &self.edges[edge_type];
        let slice = &e.in_edges[self.in_range(edge_type, node)];
        slice.partition_point(|&k| e.time[k] <= at)
    }

    pub(crate) fn admissible_in_nth(&self, edge_type: usize, node: NodeId, i: usize) -> NodeId {
        let e = &self.edges[edge_type];
        let start = self.in_range(edge_type, node).start;
        e.src[e.in_edges[start + i]]
    }

    fn in_range(&self, edge_type: usize, node: NodeId) -> std::ops::Range<usize> {
        let dst_table = self.edge_types[edge_type].dst_table;
        let base = self.table_offsets[dst_table];
        if node < base || node >= self.table_offsets[dst_table + 1] {
            return 0..0;
        }
        let e = &self.edges[edge_type];
        e.in_offsets[node - base]..e.in_offsets[node - base + 1]
    }

    /// Destinations of all out-edges of `node` (both directions) with time ≤
    /// `at`, in time order.
    pub fn admissible_out(&self, node: NodeId, at: i64) -> &[(NodeId, i64)] {
        let adj = &self.out_adj[self.out_offsets[node]..self.out_offsets[node + 1]];
        &adj[..adj.partition_point(|&(_, t)| t <= at)]
    }

    pub fn has_edge(&self, edge_type: usize, src: NodeId, dst: NodeId) -> bool {
        let e = &self.edges[edge_type];
        e.in_edges[self.in_range(edge_type, dst)].iter().any(|&k| e.src[k] == src)
    }

    /// Debug edge list, one line per directed edge:
    /// `src_table,src_row,fk,dst_table,dst_row,timestamp`. Reversed edges
    /// carry the fk name prefixed with `rev:`; static edges print `static`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "src_table,src_row,fk,dst_table,dst_row,timestamp")?;
        for (t, et) in self.edge_types.iter().enumerate() {
            let fk = if et.reversed { format!("rev:{}", et.fk) } else { et.fk.clone() };
            for (s, d, time) in self.edges_of(t) {
                let (st, sr) = self.locate(s);
                let (dt, dr) = self.locate(d);
                let ts = if time == STATIC_TIME { "static".to_string() } else { time.to_string() };
                writeln!(w, "{},{sr},{fk},{},{dr},{ts}", self.table_names[st], self.table_names[dt])?;
            }
        }
        Ok(())
    }

    pub fn dump_edge_list(&self, path: &Path) -> Result<(), GraphError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_edge_list(f)?;
        Ok(())
    }
}
