use std::path::Path;
use std::process::{Command, Output};

use metapop_cli::config::{parse_document, parse_table};
use proptest::prelude::*;

const MODEL_I_SIMULATE: &str = r#"
experiment = "simulate"
seed = 42
replicas = 2
[model]
variant = "I"
phi = 0.4
capacity = 3
[window]
side = 5
[simulate]
horizon = 5.0
step = 0.5
"#;

fn metapop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metapop")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_twice_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", MODEL_I_SIMULATE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = metapop(&["simulate", "-c", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = std::fs::read_to_string(a.join("simulate.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read_to_string(b.join("simulate.csv")).unwrap());
    let mut lines = csv_a.lines();
    assert!(lines.next().unwrap().starts_with("# config {"));
    assert_eq!(lines.next().unwrap(), "# seed 42");
    assert_eq!(lines.next().unwrap(), "replica,time,total");
    assert_eq!(lines.next().unwrap(), "0,0,75");
}

#[test]
fn json_embeds_schema_config_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", MODEL_I_SIMULATE);
    let out = tmp.path().join("o");
    let o = metapop(&["simulate", "-c", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("simulate.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["seed"], 7);
    assert_eq!(doc["config"]["seed"], 7);
    assert_eq!(doc["config"]["model"]["phi"], 0.4);
    assert_eq!(doc["config"]["simulate"]["step"], 0.5);
    assert!(doc["config"].get("threads").is_none());
    assert_eq!(doc["result"]["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn ruin_prints_the_hand_value() {
    let tmp = tempfile::tempdir().unwrap();
    let o = metapop(&["ruin", "--r1", "0", "--r2", "3", "--j", "1", "--p", "0.6666667", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("0.571428"), "{stdout}");
}

#[test]
fn ruin_accepts_negative_endpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let o = metapop(&["ruin", "--r1", "-2", "--r2", "2", "--j", "0", "--p", "0.5", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ruin probability 0.5"));
}

#[test]
fn sweep_over_phi_is_non_increasing_within_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        r#"
experiment = "sweep"
seed = 3
replicas = 200
[model]
variant = "I"
phi = 0.5
capacity = 3
[window]
side = 6
[sweep]
axis = "phi"
values = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4]
horizon = 30.0
"#,
    );
    let out = tmp.path().join("o");
    let o = metapop(&["sweep", "-c", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(3)
        .map(|l| l.split(',').take(6).map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7);
    // (value, replicas, survivals, estimate, ci_lo, ci_hi)
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            assert!(rows[i][5] >= rows[j][4], "survival at phi = {} clearly below phi = {}", rows[i][0], rows[j][0]);
        }
    }
    assert!(rows[0][3] > rows[6][3]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let order = |low_phi: f64, extra: &str| {
        format!(
            "experiment = \"check-order\"\n[model]\nvariant = \"I\"\nphi = {low_phi}\ncapacity = 3\n[check_order]\n{extra}\n[check_order.high]\nvariant = \"I\"\nphi = 0.5\ncapacity = 3\n"
        )
    };
    let ordered = write(tmp.path(), "a.toml", &order(0.9, ""));
    let reversed = write(tmp.path(), "b.toml", &order(0.2, ""));
    let starved = write(tmp.path(), "c.toml", &order(0.9, "budget = 1"));
    let bad = write(tmp.path(), "d.toml", "experiment = \"survival\"\nbogus = 1\n");
    assert_eq!(metapop(&["check-order", "-c", &ordered, "--out", out]).status.code(), Some(0));
    assert_eq!(metapop(&["check-order", "-c", &reversed, "--out", out]).status.code(), Some(1));
    assert_eq!(metapop(&["check-order", "-c", &starved, "--out", out]).status.code(), Some(2));
    let o = metapop(&["run", &bad, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown key `bogus`") && err.contains("model.variant"), "{err}");
    let missing = tmp.path().join("nope.toml");
    let o = metapop(&["run", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.toml"));
}

#[test]
fn subcommand_must_match_configured_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", MODEL_I_SIMULATE);
    let o = metapop(&["survival", "-c", &cfg]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn percolation_flags_build_a_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = metapop(&[
        "percolation", "--width", "20", "--height", "20", "--p", "0,1", "--replicas", "5", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("percolation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(3).collect();
    assert_eq!(rows, ["0,5,0,0,0,0.434482465,0", "1,5,5,1,0.565517535,1,20"]);
}

const KEYS: &[&str] = &["", "model", "window", "init", "output", "simulate"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extra_keys_are_always_rejected(section in 0..KEYS.len(), key in "[a-z]{3,10}_x", value in 0i64..100) {
        let mut doc = parse_document(MODEL_I_SIMULATE).unwrap();
        let table = if KEYS[section].is_empty() {
            &mut doc
        } else {
            doc.entry(KEYS[section]).or_insert(toml::Value::Table(Default::default())).as_table_mut().unwrap()
        };
        table.insert(key.clone(), toml::Value::Integer(value));
        let errors = parse_table(&doc).unwrap_err();
        prop_assert!(errors.iter().any(|e| e.contains("unknown key") && e.contains(&key)), "{errors:?}");
    }

    #[test]
    fn resolved_configs_round_trip(phi in 0.01f64..3.0, cap in 1u32..20, side in 2usize..9, seed in any::<u32>(), horizon in 0.5f64..50.0) {
        let text = format!(
            "experiment = \"simulate\"\nseed = {seed}\n[model]\nvariant = \"I\"\nphi = {phi:?}\ncapacity = {cap}\n[window]\nside = {side}\n[simulate]\nhorizon = {horizon:?}\n"
        );
        let config = metapop_cli::parse_str(&text).unwrap();
        let again = metapop_cli::parse_str(&config.to_toml()).unwrap();
        prop_assert_eq!(config, again);
    }
}
