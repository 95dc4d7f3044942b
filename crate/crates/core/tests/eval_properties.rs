use hcmgnn::eval::{default_thresholds, export_embeddings, rank_metrics, read_embeddings, silhouette, stratify_by_degree, RankMetrics, RankedCase};
use hcmgnn::hetgraph::{EntityType, HetGraphBuilder, Triplet};
use hcmgnn::numerics::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const CANDIDATES: usize = 31;

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

fn random_cases(trials: usize, seed: u64, score: impl Fn(&mut ChaCha8Rng) -> f64) -> Vec<RankedCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let scores: Vec<f64> = (0..CANDIDATES).map(|_| score(&mut rng)).collect();
            RankedCase::with_rng(Triplet::new(0, 0, 0), scores, &mut rng)
        })
        .collect()
}

#[test]
fn uniform_random_scorer_matches_analytic_expectation() {
    let m = rank_metrics(&random_cases(4000, 1, |r| r.random::<f64>())).unwrap();
    let n = CANDIDATES as f64;
    assert!((m.hit1 - 1.0 / n).abs() < 0.01, "hit1 {}", m.hit1);
    assert!((m.hit5 - 5.0 / n).abs() < 0.01, "hit5 {}", m.hit5);
    assert!((m.mrr - harmonic(CANDIDATES) / n).abs() < 0.01, "mrr {}", m.mrr);
    assert!((harmonic(CANDIDATES) / n - 0.1299).abs() < 5e-5);
}

#[test]
fn constant_scores_fall_back_to_uniform_ties() {
    let m = rank_metrics(&random_cases(4000, 2, |_| 0.5)).unwrap();
    assert!((m.hit1 - 1.0 / CANDIDATES as f64).abs() < 0.01, "hit1 {}", m.hit1);
    assert!((m.mrr - harmonic(CANDIDATES) / CANDIDATES as f64).abs() < 0.01);
}

#[test]
fn closed_form_contributions() {
    let one = RankMetrics::from_ranks(&[1]).unwrap();
    assert_eq!((one.hit1, one.ndcg1, one.ndcg3, one.mrr), (1.0, 1.0, 1.0, 1.0));
    let two = RankMetrics::from_ranks(&[2]).unwrap();
    assert_eq!(two.hit1, 0.0);
    assert!((two.ndcg3 - 1.0 / 3f64.log2()).abs() < 1e-15);
    assert!((two.ndcg3 - 0.6309).abs() < 1e-4);
    assert!(RankMetrics::from_ranks(&[]).is_err());
    assert!(rank_metrics(&[]).is_err());
}

fn brute_rank(scores: &[f64], ids: &[usize]) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    1 + order.iter().position(|&i| i == 0).unwrap()
}

fn case_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    // few distinct values so that ties are common
    (prop::collection::vec(0u8..5, CANDIDATES), Just((0..CANDIDATES).collect::<Vec<_>>()).prop_shuffle())
        .prop_map(|(s, ids)| (s.into_iter().map(|x| f64::from(x) / 4.0).collect(), ids))
}

proptest! {
    #[test]
    fn rank_follows_tie_rule((scores, ids) in case_strategy()) {
        let c = RankedCase::new(Triplet::new(0, 0, 0), scores.clone(), ids.clone());
        prop_assert_eq!(c.rank, brute_rank(&scores, &ids));
        prop_assert!((1..=CANDIDATES).contains(&c.rank));
    }

    #[test]
    fn metric_identities_and_order(cases in prop::collection::vec(case_strategy(), 1..40)) {
        let cases: Vec<RankedCase> = cases.into_iter().map(|(s, i)| RankedCase::new(Triplet::new(0, 0, 0), s, i)).collect();
        let m = rank_metrics(&cases).unwrap();
        prop_assert_eq!(m.ndcg1.to_bits(), m.hit1.to_bits());
        prop_assert!(0.0 <= m.hit1 && m.hit1 <= m.hit3 && m.hit3 <= m.hit5 && m.hit5 <= 1.0);
        prop_assert!(m.hit1 <= m.mrr && m.mrr <= 1.0);
        prop_assert!(m.ndcg3 <= m.hit3 && m.ndcg5 <= m.hit5);
    }

    #[test]
    fn metrics_invariant_under_increasing_transform(cases in prop::collection::vec(case_strategy(), 1..20)) {
        let plain: Vec<RankedCase> = cases.iter().map(|(s, i)| RankedCase::new(Triplet::new(0, 0, 0), s.clone(), i.clone())).collect();
        let moved: Vec<RankedCase> = cases
            .iter()
            .map(|(s, i)| RankedCase::new(Triplet::new(0, 0, 0), s.iter().map(|x| (3.0 * x).exp() - 7.0).collect(), i.clone()))
            .collect();
        prop_assert_eq!(rank_metrics(&plain).unwrap(), rank_metrics(&moved).unwrap());
    }

    #[test]
    fn strata_are_cumulative(ranks in prop::collection::vec(1usize..=31, 1..30)) {
        let g = degree_graph();
        let cases: Vec<RankedCase> = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut scores = vec![0.0; CANDIDATES];
                scores[0] = 0.5;
                for s in scores.iter_mut().skip(1).take(r - 1) {
                    *s = 1.0;
                }
                RankedCase::new(Triplet::new(i % 2, 0, 0), scores, (0..CANDIDATES).collect())
            })
            .collect();
        let strata = stratify_by_degree(&cases, &g, &[1.0, 2.5, 3.0, 10.0]).unwrap();
        prop_assert!(strata.windows(2).all(|w| w[0].count <= w[1].count));
        prop_assert_eq!(strata[3].count, cases.len());
        prop_assert_eq!(strata[3].hit1, Some(rank_metrics(&cases).unwrap().hit1));
    }
}

/// g0-m0-d0 triangle plus one extra edge per node: average degree of (0,0,0) is 3.
fn degree_graph() -> hcmgnn::hetgraph::HetGraph {
    use EntityType::*;
    let mut b = HetGraphBuilder::new();
    for (ta, a, tb, c) in [(Gene, "g0", Microbe, "m0"), (Gene, "g0", Disease, "d0"), (Microbe, "m0", Disease, "d0"), (Gene, "g0", Microbe, "m1"), (Microbe, "m0", Disease, "d1"), (Disease, "d0", Gene, "g1")] {
        b.add_association(ta, a, tb, c).unwrap();
    }
    b.build().0
}

#[test]
fn stratification_examples() {
    let g = degree_graph();
    let case = RankedCase::new(Triplet::new(0, 0, 0), vec![1.0, 0.0], vec![0, 1]);
    let strata = stratify_by_degree(std::slice::from_ref(&case), &g, &[2.0, 4.0]).unwrap();
    assert_eq!((strata[0].count, strata[0].hit1), (0, None));
    assert_eq!((strata[1].count, strata[1].hit1), (1, Some(1.0)));
    assert!(stratify_by_degree(&[case], &g, &[4.0, 2.0]).is_err());
}

#[test]
fn default_thresholds_are_twelve_increasing_and_cover_the_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let degrees: Vec<f64> = (0..200).map(|_| f64::from(rng.random_range(1u32..30)) / 3.0).collect();
    let t = default_thresholds(&degrees, 12);
    assert_eq!(t.len(), 12);
    assert!(t.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*t.last().unwrap(), degrees.iter().copied().fold(f64::MIN, f64::max));
    // heavy repetition forces even spacing
    let t = default_thresholds(&[1.0, 1.0, 1.0, 1.0, 2.0], 12);
    assert_eq!(t.len(), 12);
    assert!(t.windows(2).all(|w| w[0] < w[1]));
}

fn blob(n: usize, dim: usize, rng: &mut ChaCha8Rng, center: f64, spread: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| center + spread * Distribution::<f64>::sample(&StandardNormal, rng)).collect()).collect()
}

#[test]
fn silhouette_of_separated_clusters_is_high() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows = blob(30, 4, &mut rng, 0.0, 0.05);
    rows.extend(blob(30, 4, &mut rng, 10.0, 0.05));
    let labels: Vec<u8> = (0..60).map(|i| u8::from(i < 30)).collect();
    assert!(silhouette(&Matrix::from_rows(&rows).unwrap(), &labels).unwrap() > 0.9);
}

#[test]
fn silhouette_of_shuffled_labels_on_one_blob_is_near_zero() {
    let mut total = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_rows(&blob(80, 3, &mut rng, 0.0, 1.0)).unwrap();
        let labels: Vec<u8> = (0..80).map(|_| rng.random_range(0..2)).collect();
        total += silhouette(&x, &labels).unwrap();
    }
    assert!((total / 20.0).abs() < 0.1);
}

#[test]
fn silhouette_degenerate_cases() {
    let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!(silhouette(&x, &[1, 1, 0, 0]).unwrap(), 0.0);
    assert!(silhouette(&x, &[1, 1, 1, 1]).is_err());
    assert!(silhouette(&x, &[1, 0]).is_err());
    let y = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![5.0]]).unwrap();
    // singleton class contributes 0
    let s = silhouette(&y, &[0, 0, 1]).unwrap();
    assert!(s > 0.0 && s < 1.0);
}

#[test]
fn embedding_export_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows = blob(25, 12, &mut rng, 0.3, 1.0);
    let x = Matrix::from_rows(&rows).unwrap();
    let labels: Vec<u8> = (0..25).map(|i| u8::from(i % 3 == 0)).collect();
    let ids: Vec<String> = (0..25).map(|i| format!("G{i}|M0|D1")).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.tsv");
    export_embeddings(&path, &ids, &labels, &x).unwrap();
    let (ids2, labels2, x2) = read_embeddings(&path).unwrap();
    assert_eq!((ids2, labels2.clone()), (ids, labels.clone()));
    assert_eq!(x2.shape(), (25, 12));
    let (a, b) = (silhouette(&x, &labels).unwrap(), silhouette(&x2, &labels2).unwrap());
    assert!((a - b).abs() < 1e-9);
    assert!(export_embeddings(&dir.path().join("missing/emb.tsv"), &[], &[], &Matrix::zeros(0, 3)).is_err());
}
