mod oracle;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use refeed::eval::{mrr_at_k, ndcg_at_k, recall_at_k, RankedDoc};
use refeed::{evaluate, Metric, Qrels, Run};

#[test]
fn metrics_match_brute_force() {
    let mut rng = oracle::rng(0x6d65_7472);
    let mut with_relevant = 0;
    for _ in 0..100 {
        let inst = oracle::metric_instance(&mut rng);
        let ranked: Vec<&str> = inst.ranked.iter().map(String::as_str).collect();
        let j = &inst.judgments;
        for k in [1, 3, 5, 10, 20, 100] {
            assert_eq!(recall_at_k(&ranked, j, k), oracle::recall(&ranked, j, k));
            assert_eq!(mrr_at_k(&ranked, j, k), oracle::mrr(&ranked, j, k));
        }
        for k in [1, 5, 10] {
            match (ndcg_at_k(&ranked, j, k), oracle::ndcg(&ranked, j, k)) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9, "{a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
        with_relevant += usize::from(oracle::recall(&ranked, j, 1).is_some());
    }
    assert!(with_relevant > 50);
}

fn random_run(rng: &mut rand_chacha::ChaCha8Rng, n_queries: usize, len: usize) -> (Run, Qrels) {
    let mut run = Run::default();
    let mut qrels = Qrels::default();
    for q in 0..n_queries {
        let qid = format!("q{q:02}");
        let mut score = 10.0;
        let docs = (0..len)
            .map(|r| {
                score -= rng.random_range(0.0..1.0);
                RankedDoc { doc_id: format!("d{}", rng.random_range(0..10_000)), rank: r + 1, score }
            })
            .collect::<Vec<_>>();
        for d in docs.iter().take(3 * len / 2) {
            if rng.random_bool(0.05) {
                qrels.insert(&qid, &d.doc_id, rng.random_range(1..=3));
            }
        }
        for _ in 0..rng.random_range(1..4) {
            qrels.insert(&qid, &format!("x{}", rng.random_range(0..100)), 1);
        }
        run.queries.insert(qid, dedup(docs));
    }
    (run, qrels)
}

fn dedup(docs: Vec<RankedDoc>) -> Vec<RankedDoc> {
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<RankedDoc> = docs.into_iter().filter(|d| seen.insert(d.doc_id.clone())).collect();
    for (i, d) in out.iter_mut().enumerate() {
        d.rank = i + 1;
    }
    out
}

#[test]
fn aggregates_are_means_of_oracle_values() {
    let mut rng = oracle::rng(20);
    let (run, qrels) = random_run(&mut rng, 20, 120);
    let report = evaluate(&run, &qrels, &Metric::DEFAULT_SET, None).unwrap();
    assert_eq!(report.n_queries, 20);
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for qid in run.queries.keys() {
        let ranked = run.ranked_ids(qid);
        let j = qrels.query(qid).unwrap();
        *sums.entry("recall@100".into()).or_default() += oracle::recall(&ranked, j, 100).unwrap();
        *sums.entry("recall@20".into()).or_default() += oracle::recall(&ranked, j, 20).unwrap();
        *sums.entry("mrr@100".into()).or_default() += oracle::mrr(&ranked, j, 100).unwrap();
        *sums.entry("ndcg@10".into()).or_default() += oracle::ndcg(&ranked, j, 10).unwrap();
    }
    for (name, sum) in sums {
        let got = report.aggregate[&name];
        assert!((got - sum / 20.0).abs() <= 1e-12, "{name}: {got} vs {}", sum / 20.0);
    }
}

#[test]
fn paired_test_matches_hand_formula() {
    let mut rng = oracle::rng(21);
    let (run_a, qrels) = random_run(&mut rng, 20, 120);
    let (run_b, _) = random_run(&mut rng, 20, 120);
    let report = evaluate(&run_a, &qrels, &[Metric::Recall(100)], Some(("b", &run_b))).unwrap();
    let sig = report.significance.unwrap();

    let diffs: Vec<f64> = run_a
        .queries
        .keys()
        .map(|q| {
            let j = qrels.query(q).unwrap();
            oracle::recall(&run_a.ranked_ids(q), j, 100).unwrap()
                - oracle::recall(&run_b.ranked_ids(q), j, 100).unwrap()
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    assert!((sig.t - t).abs() <= 1e-9 * t.abs().max(1.0));
    assert!((0.0..=1.0).contains(&sig.p));
}

#[test]
fn rescaling_scores_leaves_metrics_unchanged() {
    let mut rng = oracle::rng(22);
    let (run, qrels) = random_run(&mut rng, 20, 60);
    let mut text = String::new();
    let mut scaled = String::new();
    for (q, docs) in &run.queries {
        for d in docs {
            writeln!(text, "{q} Q0 {} {} {:.6} t", d.doc_id, d.rank, d.score).unwrap();
            writeln!(scaled, "{q} Q0 {} {} {:.6} t", d.doc_id, d.rank, 3.0 * d.score.exp()).unwrap();
        }
    }
    let a = Run::parse(text.as_bytes()).unwrap();
    let b = Run::parse(scaled.as_bytes()).unwrap();
    let ra = evaluate(&a, &qrels, &Metric::DEFAULT_SET, None).unwrap();
    let rb = evaluate(&b, &qrels, &Metric::DEFAULT_SET, None).unwrap();
    assert_eq!(ra.aggregate, rb.aggregate);
}
