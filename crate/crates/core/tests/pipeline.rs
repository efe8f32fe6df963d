//! In-process client/owner runs of the filtered and naive plans against a
//! plaintext full scan.

use ftm_core::geometry::{matches, Point, Trajectory};
use ftm_core::grid::{build_index, GridSpec};
use ftm_core::partition::PartitionParams;
use ftm_core::plan::{plans, LocalChannel, OwnerContext, OwnerRun};
use ftm_core::privacy::{solve_noise_bound, PrivacyParams};
use ftm_core::publish::{publish, PublishedQuery};
use ftm_core::synth::{generate_corpus, generate_queries, CorpusConfig, QueryConfig};
use ftm_core::verify::{audit, meter, SimulatedIdeal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAU: f64 = 50.0;

struct Fixture {
    corpus: Vec<Trajectory>,
    queries: Vec<Trajectory>,
    spec: GridSpec,
    params: PrivacyParams,
}

fn fixture(n: usize, queries: usize) -> Fixture {
    let cfg = CorpusConfig {
        trajectories: n,
        seed: 77,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&cfg);
    let queries = generate_queries(&corpus, &cfg, queries, &QueryConfig::default(), 78);
    let params = PrivacyParams::new(0.01, 1e-5, 0.6, 0.81).unwrap();
    let bound = solve_noise_bound(&params).unwrap();
    Fixture {
        corpus,
        queries,
        spec: GridSpec::new(cfg.origin, bound.cell_side),
        params,
    }
}

fn publish_query(f: &Fixture, q: &Trajectory, seed: u64) -> PublishedQuery {
    let bound = solve_noise_bound(&f.params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    publish(q, TAU, &f.params, &bound, &f.spec, &mut rng).unwrap()
}

struct Measured {
    run: OwnerRun,
    comparisons: u64,
    bytes: u64,
}

/// Runs `plan` and audits its transcript; `protected` are owner points the
/// client must never see.
fn run(f: &Fixture, plan: &str, published: &PublishedQuery, q: &Trajectory, alpha: f64, protected: &[Point]) -> Measured {
    let index = build_index(&f.corpus, TAU, f.spec).unwrap();
    let ctx = OwnerContext {
        db: &f.corpus,
        index: &index,
        partition: PartitionParams::new(alpha).unwrap(),
    };
    let backend = SimulatedIdeal::default();
    let mut ch = LocalChannel::new(&backend, &q.points, &published.sub_query.points, TAU, f.spec.cell_side);
    let run = plans().get(plan).unwrap().run(&ctx, &published.wire_view(), &mut ch).unwrap();
    audit(&ch.transcript, &q.points, protected).unwrap();
    Measured {
        run,
        comparisons: ch.comparisons,
        bytes: meter(&ch.transcript),
    }
}

#[test]
fn filtered_equals_naive_equals_oracle() {
    let f = fixture(400, 25);
    let mut nonempty = 0;
    for (i, q) in f.queries.iter().enumerate() {
        let published = publish_query(&f, q, i as u64);
        let oracle: Vec<u32> = (0..f.corpus.len() as u32).filter(|&j| matches(&f.corpus[j as usize], q, TAU)).collect();
        // unmatched trajectories' vertices never reach the client
        let protected: Vec<Point> = (0..f.corpus.len())
            .filter(|j| !oracle.contains(&(*j as u32)))
            .flat_map(|j| f.corpus[j].points.clone())
            .collect();
        let filtered = run(&f, "filtered", &published, q, 0.5, &protected);
        let naive = run(&f, "naive", &published, q, 0.5, &protected);
        assert_eq!(filtered.run.matched, oracle, "query {i}");
        assert_eq!(naive.run.matched, oracle, "query {i}");
        assert!(filtered.run.validate_sessions < naive.run.validate_sessions);
        assert!(filtered.comparisons < naive.comparisons);
        assert!(filtered.bytes < naive.bytes);
        assert!(filtered.run.surviving <= filtered.run.stats.partitions);
        let r = filtered.run.stats.retention();
        assert!((0.0..=1.0).contains(&r));
        nonempty += !oracle.is_empty() as usize;
    }
    assert!(nonempty >= 15, "{nonempty}");
}

#[test]
fn plan_results_do_not_depend_on_alpha() {
    let f = fixture(300, 8);
    for (i, q) in f.queries.iter().enumerate() {
        let published = publish_query(&f, q, 100 + i as u64);
        let base = run(&f, "filtered", &published, q, 0.5, &[]).run.matched;
        for alpha in [0.25, 1.0, 2.0, 4.0] {
            assert_eq!(run(&f, "filtered", &published, q, alpha, &[]).run.matched, base);
        }
    }
}

#[test]
fn unknown_plan_is_reported() {
    assert!(plans().get("bogus").is_err());
    assert_eq!(plans().names(), vec!["filtered".to_string(), "naive".to_string()]);
}
