//! The `ftm` subcommands driven through `main_with` against loopback owners.

use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use ftm_cli::cli::main_with;
use ftm_cli::{LocalOwners, RunReport};
use ftm_core::geometry::{matches, Trajectory};
use ftm_core::ingest::{read_ndjson, write_ndjson};
use ftm_core::partition::PartitionParams;
use ftm_core::privacy::PrivacyParams;
use ftm_core::synth::{generate_corpus, generate_queries, CorpusConfig, QueryConfig};
use ftm_core::verify::{make_backend, BackendConfig};
use ftm_node::ClientConfig;

fn run(args: &[&str]) -> (u8, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with(std::iter::once("ftm").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn owners_for(corpus: &[Trajectory], k: usize) -> LocalOwners {
    let c = ClientConfig::new(CorpusConfig::default().origin, 50.0, PrivacyParams::new(0.01, 1e-5, 0.6, 0.81).unwrap()).unwrap();
    LocalOwners::start(
        ftm_cli::shard_round_robin(corpus, k),
        c.spec(),
        50.0,
        PartitionParams::new(0.5).unwrap(),
        make_backend("simulated-ideal", &BackendConfig::default()).unwrap(),
    )
    .unwrap()
}

fn write_queries(dir: &Path, qs: &[Trajectory]) -> String {
    let p = dir.join("queries.ndjson");
    write_ndjson(std::fs::File::create(&p).unwrap(), qs).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_seeded_ndjson() {
    let (code, out, _) = run(&["gen-data", "--n", "25", "--seed", "4"]);
    assert_eq!(code, 0);
    let corpus = read_ndjson(out.as_bytes(), None).unwrap();
    assert_eq!(corpus.len(), 25);
    assert_eq!(run(&["gen-data", "--n", "25", "--seed", "4"]).1, out);
    assert_ne!(run(&["gen-data", "--n", "25", "--seed", "5"]).1, out);
    let want = generate_corpus(&CorpusConfig {
        trajectories: 25,
        seed: 4,
        ..CorpusConfig::default()
    });
    assert_eq!(corpus, want);
}

#[test]
fn publish_prints_only_grids_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusConfig {
        trajectories: 20,
        ..CorpusConfig::default()
    });
    let qs = generate_queries(&corpus, &CorpusConfig::default(), 3, &QueryConfig::default(), 2);
    let path = write_queries(dir.path(), &qs);
    let args = ["publish", "--query", &path, "--epsilon", "0.01", "--delta", "1e-5", "--rho", "0.6", "--p0", "0.81", "--seed", "3"];
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 5);
    for k in ["grids", "tau", "cell_side", "query_len", "sub_query_len"] {
        assert!(keys.contains(&k), "{keys:?}");
    }
    assert_eq!(v["query_len"].as_u64().unwrap() as usize, qs[0].len());
    assert!(!v["grids"].as_array().unwrap().is_empty());
    assert_eq!(run(&args).1, out);
    let (code, _, _) = run(&["publish", "--query", &path, "--query-id", "missing"]);
    assert_eq!(code, 2);
}

#[test]
fn query_report_is_deterministic_and_exact() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusConfig {
        trajectories: 300,
        seed: 8,
        ..CorpusConfig::default()
    });
    let qs = generate_queries(&corpus, &CorpusConfig::default(), 8, &QueryConfig::default(), 6);
    let path = write_queries(dir.path(), &qs);
    let owners = owners_for(&corpus, 2);
    let list = owners.addrs().join(",");
    let args = ["query", "--owners", &list, "--query", &path, "--mode", "filtered", "--seed", "11"];
    let (code, out, table) = run(&args);
    assert_eq!(code, 0, "{table}");
    assert!(table.lines().last().unwrap().starts_with("mean"));
    let a: RunReport = serde_json::from_str(&out).unwrap();
    let b: RunReport = serde_json::from_str(&run(&args).1).unwrap();
    assert_eq!(a.without_wall_time(), b.without_wall_time());
    assert_eq!(a.without_wall_time().to_json(), b.without_wall_time().to_json());
    assert_eq!(a.records.len(), qs.len());
    for (rec, q) in a.records.iter().zip(&qs) {
        let want: Vec<String> = corpus.iter().filter(|t| matches(t, q, 50.0)).map(|t| t.id.clone()).collect();
        assert_eq!(rec.ids, want);
        assert!(rec.retention >= 0.0 && rec.retention <= 1.0);
    }
    assert_eq!(a.settings.owners, 2);

    let naive = ["query", "--owners", &list, "--query", &path, "--mode", "naive", "--seed", "11", "--quiet"];
    let n: RunReport = serde_json::from_str(&run(&naive).1).unwrap();
    for (f, n) in a.records.iter().zip(&n.records) {
        assert_eq!(f.ids, n.ids);
        assert!(f.bytes() < n.bytes());
    }
    owners.shutdown();
}

#[test]
fn unreachable_owner_is_a_protocol_failure() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusConfig {
        trajectories: 10,
        ..CorpusConfig::default()
    });
    let qs = generate_queries(&corpus, &CorpusConfig::default(), 1, &QueryConfig::default(), 1);
    let path = write_queries(dir.path(), &qs);
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let (code, _, err) = run(&["query", "--owners", &addr, "--query", &path]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"]["class"], "protocol");
    assert_eq!(v["error"]["exit_code"], 1);
}

#[test]
fn mismatched_grid_is_a_protocol_failure() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusConfig {
        trajectories: 30,
        ..CorpusConfig::default()
    });
    let qs = generate_queries(&corpus, &CorpusConfig::default(), 1, &QueryConfig::default(), 1);
    let path = write_queries(dir.path(), &qs);
    let owners = owners_for(&corpus, 1);
    let list = owners.addrs().join(",");
    let (code, _, err) = run(&["query", "--owners", &list, "--query", &path, "--epsilon", "0.02"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("protocol"));
    owners.shutdown();
}

#[test]
fn bench_modes_agree_and_filtered_is_cheaper() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db.ndjson");
    let corpus = generate_corpus(&CorpusConfig::default());
    write_ndjson(std::fs::File::create(&db).unwrap(), &corpus).unwrap();
    let csv_path = dir.path().join("out.csv");
    let (code, _, err) = run(&[
        "bench",
        "--queries",
        "100",
        "--db",
        db.to_str().unwrap(),
        "--mode",
        "filtered,naive",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let headers: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, ftm_cli::bench::CSV_COLUMNS.to_vec());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let bytes = |r: &csv::StringRecord| r[col("bytes")].parse::<f64>().unwrap();
    assert_eq!(&rows[0][col("mode")], "filtered");
    assert!(bytes(&rows[0]) < bytes(&rows[1]));
    assert_eq!(&rows[0][col("infeasible")], "false");
}

#[test]
fn infeasible_cells_are_flagged_and_the_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("out.csv");
    // epsilon 1 gives a cell side of about 42 m, below tau
    let (code, _, err) = run(&[
        "bench",
        "--queries",
        "3",
        "--sizes",
        "50",
        "--epsilons",
        "1,0.01",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let flag = ftm_cli::bench::CSV_COLUMNS.iter().position(|c| *c == "infeasible").unwrap();
    assert_eq!(&rows[0][flag], "true");
    assert_eq!(&rows[1][flag], "false");
    assert!(err.contains("infeasible"));
}

#[test]
fn shipped_schema_lists_report_fields() {
    let schema: serde_json::Value = serde_json::from_str(include_str!("../../../docs/report.schema.json")).unwrap();
    let corpus = Arc::new(generate_corpus(&CorpusConfig {
        trajectories: 40,
        ..CorpusConfig::default()
    }));
    let owners = owners_for(&corpus, 1);
    let qs = generate_queries(&corpus, &CorpusConfig::default(), 2, &QueryConfig::default(), 1);
    let mut cfg = ClientConfig::new(CorpusConfig::default().origin, 50.0, PrivacyParams::new(0.01, 1e-5, 0.6, 0.81).unwrap()).unwrap();
    cfg.plan = "filtered".into();
    let report = ftm_cli::run_batch(&owners.addrs(), &qs, &cfg, 0, false).unwrap().report;
    owners.shutdown();
    let v = serde_json::to_value(&report).unwrap();
    assert_eq!(schema["properties"]["schema_version"]["const"], ftm_cli::SCHEMA_VERSION);
    let check = |obj: &serde_json::Value, path: &str| {
        let props = &schema.pointer(path).unwrap()["properties"];
        let required: Vec<&str> = schema.pointer(path).unwrap()["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap())
            .collect();
        let mut got: Vec<&str> = obj.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want: Vec<&str> = props.as_object().unwrap().keys().map(String::as_str).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "{path}");
        let mut req = required.clone();
        req.sort_unstable();
        assert_eq!(req, want, "{path} required");
    };
    check(&v, "");
    check(&v["settings"], "/$defs/settings");
    check(&v["aggregates"], "/$defs/aggregates");
    check(&v["records"][0], "/$defs/record");
}
