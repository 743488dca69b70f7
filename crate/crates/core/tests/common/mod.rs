#![allow(dead_code)]

pub mod hook_free;
pub mod naive;

use std::path::Path;

use kspace::relgraph::{ingest, RelationalBundle, SchemaManifest};

pub const SHOP: &str = r#"{
    "name": "shop",
    "tables": [
        {"name": "users", "file": "users.csv", "columns": [
            {"name": "user_id", "kind": "primary_key"},
            {"name": "age", "kind": "numeric"},
            {"name": "region", "kind": "categorical"},
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

pub fn shop(dir: &Path, users: &str, orders: &str) -> RelationalBundle {
    std::fs::write(dir.join("users.csv"), users).unwrap();
    std::fs::write(dir.join("orders.csv"), orders).unwrap();
    ingest(&SchemaManifest::from_json(SHOP).unwrap(), dir).unwrap()
}

/// `users[i] = (age, region, churned, seen_at)`, `orders[j] = (user, amount, placed_at)`.
pub fn shop_from(
    users: &[(Option<f64>, Option<&str>, u8, Option<i64>)],
    orders: &[(usize, f64, Option<i64>)],
) -> RelationalBundle {
    let dir = tempfile::tempdir().unwrap();
    let opt = |x: Option<String>| x.unwrap_or_default();
    let mut u = String::from("user_id,age,region,churned,seen_at\n");
    for (i, (age, region, y, t)) in users.iter().enumerate() {
        u.push_str(&format!(
            "u{i},{},{},{y},{}\n",
            opt(age.map(|a| a.to_string())),
            region.unwrap_or(""),
            opt(t.map(|t| t.to_string()))
        ));
    }
    let mut o = String::from("order_id,user_id,amount,placed_at\n");
    for (j, (user, amount, t)) in orders.iter().enumerate() {
        o.push_str(&format!("o{j},u{user},{amount},{}\n", opt(t.map(|t| t.to_string()))));
    }
    shop(dir.path(), &u, &o)
}

pub mod tiny {
    use kspace::backbone::BackboneConfig;
    use kspace::features::FeatureConfig;
    use kspace::synth::{generate, GroundTruth, LeakageSpec, SPLIT_FRACTIONS};
    use kspace::trainer::{Dataset, TrainConfig};

    pub fn spec(seed: u64) -> LeakageSpec {
        LeakageSpec { users: 240, items: 30, interactions: 2400, seed, ..Default::default() }
    }

    pub fn features() -> FeatureConfig {
        FeatureConfig { d_enc: 8, rwpe_k: 4, walks: 8, fanout: vec![4, 2], ..Default::default() }
    }

    pub fn backbone() -> BackboneConfig {
        BackboneConfig { d: 8, layers: 2, ..Default::default() }
    }

    pub fn train() -> TrainConfig {
        TrainConfig { epochs: 1, steps_per_epoch: 3, n_support: 16, n_query: 16, eval_support: 64, ..Default::default() }
    }

    pub fn dataset(seed: u64) -> (Dataset, GroundTruth) {
        let (bundle, truth) = generate(&spec(seed)).unwrap();
        (Dataset::build(vec![bundle], &features(), SPLIT_FRACTIONS).unwrap(), truth)
    }
}
