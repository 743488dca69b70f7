use std::path::Path;

use kspace::relgraph::{
    ingest, sample_neighborhood, ColumnData, GraphError, HeteroGraph, RelationalBundle, SchemaManifest, STATIC_TIME,
};
use proptest::prelude::*;

const MANIFEST: &str = r#"{
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
            {"name": "user_id", "kind": "foreign_key", "target": "users"},
            {"name": "amount", "kind": "numeric"},
            {"name": "placed_at", "kind": "timestamp"}
        ]}
    ],
    "tasks": [{"name": "churn", "table": "users", "label": "churned", "timestamp": "seen_at"}]
}"#;

fn load(dir: &Path, users: &str, orders: &str) -> Result<RelationalBundle, GraphError> {
    std::fs::write(dir.join("users.csv"), users).unwrap();
    std::fs::write(dir.join("orders.csv"), orders).unwrap();
    let m = SchemaManifest::from_json(MANIFEST).unwrap();
    ingest(&m, dir)
}

const USERS: &str = "user_id,age,churned,seen_at\nu1,30,1,100\nu2,,0,200\nu3,41,,\n";

#[test]
fn toy_graph_has_original_and_reversed_types() {
    let dir = tempfile::tempdir().unwrap();
    let b = load(dir.path(), USERS, "order_id,user_id,amount,placed_at\no1,u1,5,50\no2,u1,7,150\no3,u2,1,1970-01-01\n").unwrap();
    let g = HeteroGraph::build(&b);
    assert_eq!(g.num_nodes(), 6);
    assert_eq!(g.num_edges(), 6);
    let types = g.edge_types();
    assert_eq!(types.len(), 2);
    assert_eq!((g.table_name(types[0].src_table), types[0].fk.as_str(), g.table_name(types[0].dst_table)), ("orders", "user_id", "users"));
    assert!(!types[0].reversed && types[1].reversed);
    assert_eq!((types[1].src_table, types[1].dst_table), (types[0].dst_table, types[0].src_table));
    let users = 0;
    let u1 = g.node(users, 0);
    let at_100: Vec<_> = g.admissible_in(0, u1, 100).collect();
    assert_eq!(at_100, vec![(g.node(1, 0), 50)]);
    assert_eq!(g.admissible_in(0, u1, 1_000).count(), 2);
    assert_eq!(g.node_time(g.node(users, 2)), STATIC_TIME);
    let mut dump = Vec::new();
    g.write_edge_list(&mut dump).unwrap();
    let text = String::from_utf8(dump).unwrap();
    assert!(text.starts_with("src_table,src_row,fk,dst_table,dst_row,timestamp\n"));
    assert!(text.contains("orders,0,user_id,users,0,50\n"));
    assert!(text.contains("users,0,rev:user_id,orders,0,50\n"));
    assert!(text.contains("orders,2,user_id,users,1,0\n"));
}

#[test]
fn empty_orders_table_gives_user_nodes_only() {
    let dir = tempfile::tempdir().unwrap();
    let b = load(dir.path(), USERS, "order_id,user_id,amount,placed_at\n").unwrap();
    let g = HeteroGraph::build(&b);
    assert_eq!(g.num_nodes(), 3);
    assert_eq!(g.num_edges(), 0);
}

#[test]
fn null_and_dangling_foreign_keys_produce_no_edge() {
    let dir = tempfile::tempdir().unwrap();
    let b = load(dir.path(), USERS, "order_id,user_id,amount,placed_at\no1,,5,50\no2,u9,7,150\no3,u3,1,10\n").unwrap();
    assert_eq!(b.dangling.len(), 1);
    assert_eq!((b.dangling[0].row, b.dangling[0].value.as_str()), (2, "u9"));
    let g = HeteroGraph::build(&b);
    assert_eq!(g.num_edges(), 2);
}

#[test]
fn ingest_reports_missing_columns_and_bad_cells() {
    let dir = tempfile::tempdir().unwrap();
    let err = load(dir.path(), "user_id,age,churned\nu1,3,1\n", "order_id,user_id,amount,placed_at\n").unwrap_err();
    assert!(matches!(err, GraphError::MissingColumn { ref column, .. } if column == "seen_at"));
    let err = load(dir.path(), "user_id,age,churned,seen_at\nu1,3,1,soon\n", "order_id,user_id,amount,placed_at\n").unwrap_err();
    assert!(matches!(err, GraphError::Parse { line: 2, .. }), "{err}");
    let err = load(dir.path(), "user_id,age,churned,seen_at\nu1,3,1,1\nu2,3,2,1\n", "order_id,user_id,amount,placed_at\n").unwrap_err();
    assert!(matches!(err, GraphError::Parse { line: 3, .. }), "{err}");
}

#[test]
fn emit_then_ingest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let b = load(dir.path(), USERS, "order_id,user_id,amount,placed_at\no1,u1,5.25,50\no2,,7,\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    b.emit(out.path()).unwrap();
    let (m, base) = SchemaManifest::load(&out.path().join("manifest.json")).unwrap();
    let back = ingest(&m, &base).unwrap();
    assert_eq!(back, b);
    let users = b.table("users").unwrap();
    assert_eq!(users.column(&b.manifest, "age"), Some(&ColumnData::Numeric(vec![Some(30.0), None, Some(41.0)])));
}

/// Star graph: one hub user with `n` orders at times `0..n`.
fn star(n: usize, extra_users: usize) -> HeteroGraph {
    let dir = tempfile::tempdir().unwrap();
    let mut users = String::from("user_id,age,churned,seen_at\nhub,1,0,0\n");
    for i in 0..extra_users {
        users.push_str(&format!("x{i},1,0,0\n"));
    }
    let mut orders = String::from("order_id,user_id,amount,placed_at\n");
    for i in 0..n {
        orders.push_str(&format!("o{i},hub,1,{i}\n"));
    }
    HeteroGraph::build(&load(dir.path(), &users, &orders).unwrap())
}

#[test]
fn isolated_seed_yields_only_itself() {
    let g = star(3, 1);
    let s = sample_neighborhood(&g, &[(1, 1_000)], &[16, 8, 4], 0).unwrap();
    assert_eq!(s.global, vec![1]);
    assert_eq!(s.num_edges(), 0);
    assert!(matches!(sample_neighborhood(&g, &[(99, 0)], &[16], 0), Err(GraphError::UnknownSeed(99))));
}

#[test]
fn fanout_above_degree_takes_every_neighbor() {
    let g = star(2, 0);
    let s = sample_neighborhood(&g, &[(0, 10)], &[16], 0).unwrap();
    let mut got: Vec<_> = s.global[1..].to_vec();
    got.sort();
    assert_eq!(got, vec![1, 2]);
}

#[test]
fn uniform_inclusion_frequencies() {
    let g = star(32, 0);
    let trials = 10_000;
    let mut hits = vec![0usize; 32];
    for r in 0..trials {
        let s = sample_neighborhood(&g, &[(0, 1_000)], &[16], r).unwrap();
        assert_eq!(s.num_nodes(), 17);
        for &n in &s.global[1..] {
            hits[n - 1] += 1;
        }
    }
    for h in hits {
        let f = h as f64 / trials as f64;
        assert!((f - 0.5).abs() <= 0.02, "inclusion frequency {f}");
    }
}

#[test]
fn per_seed_subgraphs_are_disjoint_and_scheduling_independent() {
    let g = star(20, 0);
    let seeds = [(0, 10), (0, 15), (3, 100)];
    let a = sample_neighborhood(&g, &seeds, &[4, 4], 9).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| sample_neighborhood(&g, &seeds, &[4, 4], 9).unwrap());
    assert_eq!(a, b);
    assert_eq!(&a.global[..3], &[0, 0, 3]);
    for layer in &a.layers {
        for e in layer {
            for k in 0..e.len() {
                assert_eq!(a.seed_of[e.src[k]], a.seed_of[e.dst[k]]);
            }
        }
    }
}

fn random_bundle(n_users: usize, orders: &[(usize, Option<i64>)], times: &[Option<i64>]) -> RelationalBundle {
    let dir = tempfile::tempdir().unwrap();
    let mut users = String::from("user_id,age,churned,seen_at\n");
    for i in 0..n_users {
        let t = times[i % times.len()].map(|t| t.to_string()).unwrap_or_default();
        users.push_str(&format!("u{i},1,0,{t}\n"));
    }
    let mut o = String::from("order_id,user_id,amount,placed_at\n");
    for (i, (u, t)) in orders.iter().enumerate() {
        let t = t.map(|t| t.to_string()).unwrap_or_default();
        o.push_str(&format!("o{i},u{},1,{t}\n", u % n_users));
    }
    load(dir.path(), &users, &o).unwrap()
}

prop_compose! {
    fn arb_graph()(n_users in 1usize..8,
                   orders in prop::collection::vec((0usize..8, prop::option::of(0i64..50)), 0..40),
                   times in prop::collection::vec(prop::option::of(0i64..50), 1..4)) -> HeteroGraph {
        HeteroGraph::build(&random_bundle(n_users, &orders, &times))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_edge_has_one_reversed_twin(g in arb_graph()) {
        for t in (0..g.num_edge_types()).step_by(2) {
            let mut fwd: Vec<_> = g.edges_of(t).map(|(s, d, time)| (d, s, time)).collect();
            let mut rev: Vec<_> = g.edges_of(t + 1).collect();
            fwd.sort();
            rev.sort();
            prop_assert_eq!(fwd, rev);
        }
        for t in 0..g.num_edge_types() {
            for (s, d, _) in g.edges_of(t) {
                prop_assert!(s != d && s < g.num_nodes() && d < g.num_nodes());
            }
        }
    }

    #[test]
    fn sampled_edges_are_admissible_bounded_and_reversible(
        g in arb_graph(), at in 0i64..60, rng in any::<u64>(), f0 in 1usize..4, f1 in 1usize..4,
    ) {
        let seeds: Vec<_> = (0..g.num_nodes()).map(|n| (n, at)).collect();
        let fanout = [f0, f1];
        let s = sample_neighborhood(&g, &seeds, &fanout, rng).unwrap();
        prop_assert_eq!(&s, &sample_neighborhood(&g, &seeds, &fanout, rng).unwrap());
        for (l, layer) in s.layers.iter().enumerate() {
            for (t, e) in layer.iter().enumerate() {
                let mut per_dst = std::collections::HashMap::new();
                for k in 0..e.len() {
                    let (u, v) = (s.global[e.src[k]], s.global[e.dst[k]]);
                    let time = g.admissible_in(t, v, i64::MAX).find(|&(x, _)| x == u).map(|x| x.1);
                    prop_assert!(time.is_some());
                    prop_assert!(time.unwrap() <= s.time_of(e.dst[k]));
                    prop_assert!(g.has_edge(t ^ 1, v, u));
                    *per_dst.entry(e.dst[k]).or_insert(0usize) += 1;
                }
                prop_assert!(per_dst.values().all(|&c| c <= fanout[l]));
            }
        }
    }
}
