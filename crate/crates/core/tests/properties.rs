use std::collections::BTreeSet;

use embsteal_core::corpus::{dedup_contained, id_order, split_and_sample, Collection, SplitSpec, TrainSample};
use embsteal_core::loss::Objective;
use embsteal_core::retrieval::{exact_search, ndcg_at_k, recall_at_k, Gain, PassageIndex, Qrels};
use embsteal_core::teacher::{concat_teachers, estimate_cost, EmbeddingVector, TeacherSpec};
use embsteal_core::tensor::Tensor;
use embsteal_core::tokenizer::{token_spans, truncate_tokens};
use embsteal_core::world::{SyntheticWorld, WorldConfig};
use embsteal_core::{Kind, TextRecord};
use proptest::prelude::*;

fn passages(texts: &[String]) -> Collection {
    Collection::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| TextRecord::passage(i.to_string(), t.clone()))
            .collect(),
    )
    .unwrap()
}

fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dedup_is_idempotent_and_leaves_no_containment(texts in prop::collection::vec("[ab ]{1,6}", 1..60)) {
        let c = passages(&texts);
        let (once, stats) = dedup_contained(&c).unwrap();
        let (twice, again) = dedup_contained(&once).unwrap();
        prop_assert_eq!(once.records(), twice.records());
        prop_assert_eq!(again.removed(), 0);
        prop_assert_eq!(stats.ingested - stats.removed(), once.len());
        let kept = once.records();
        for a in kept {
            for b in kept {
                if a.id != b.id {
                    prop_assert!(!(b.text.starts_with(&a.text) || b.text.ends_with(&a.text)),
                        "{:?} is contained in {:?}", a.text, b.text);
                }
            }
        }
        let positions: Vec<usize> = kept.iter().map(|r| r.id.parse().unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn split_partitions_the_collection(nq in 3usize..30, np in 3usize..60, seed in 0u64..1000) {
        let mut recs: Vec<TextRecord> = (0..nq).map(|i| TextRecord::query(format!("q{i}"), "x")).collect();
        recs.extend((0..np).map(|i| TextRecord::passage(format!("p{i}"), "y")));
        let c = Collection::new(recs).unwrap();
        let spec = SplitSpec { dev_passages: 2, dev_queries: 1, train_sample: TrainSample::All, seed };
        let s = split_and_sample(&c, &spec).unwrap();
        let train: BTreeSet<&str> = s.train.records().iter().map(|r| r.id.as_str()).collect();
        let dev: BTreeSet<&str> = s.dev.records().iter().map(|r| r.id.as_str()).collect();
        prop_assert!(train.is_disjoint(&dev));
        prop_assert_eq!(train.len() + dev.len(), c.len());
        let sampled = SplitSpec { train_sample: TrainSample::Count(nq), ..spec };
        let a = split_and_sample(&c, &sampled);
        let b = split_and_sample(&c, &sampled);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        if let Ok(a) = a {
            prop_assert_eq!(a.train.len(), nq);
            prop_assert!(a.train.records().iter().all(|r| !dev.contains(r.id.as_str())));
        }
    }

    #[test]
    fn id_order_is_a_total_order(a in "[0-9a-c]{0,5}", b in "[0-9a-c]{0,5}", c in "[0-9a-c]{0,5}") {
        prop_assert_eq!(id_order(&a, &b), id_order(&b, &a).reverse());
        if id_order(&a, &b).is_le() && id_order(&b, &c).is_le() {
            prop_assert!(id_order(&a, &c).is_le());
        }
        prop_assert_eq!(id_order(&a, &b).is_eq(), a == b);
    }

    #[test]
    fn normalized_vectors_have_unit_norm(v in nonzero_vec(7)) {
        let e = EmbeddingVector::normalized(v).unwrap();
        let n: f64 = e.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concat_cosine_is_mean_of_halves(a in nonzero_vec(4), b in nonzero_vec(3), c in nonzero_vec(4), d in nonzero_vec(3)) {
        let [a, b, c, d] = [a, b, c, d].map(|v| EmbeddingVector::normalized(v).unwrap());
        let ab = concat_teachers(&a, &b).unwrap();
        let cd = concat_teachers(&c, &d).unwrap();
        let n: f64 = ab.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
        prop_assert!((ab.cosine(&cd) - (a.cosine(&c) + b.cosine(&d)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cost_is_monotone_and_near_additive(x in 0i64..50_000_000, y in 0i64..50_000_000) {
        for spec in [TeacherSpec::openai(), TeacherSpec::cohere()] {
            let cx = estimate_cost(&spec, x).unwrap().0;
            let cy = estimate_cost(&spec, y).unwrap().0;
            let cxy = estimate_cost(&spec, x + y).unwrap().0;
            prop_assert!((cxy as i64 - (cx + cy) as i64).abs() <= 1);
            if x <= y {
                prop_assert!(cx <= cy);
            }
        }
    }

    #[test]
    fn truncation_keeps_a_token_prefix(text in "[a-z ,.]{0,40}", max in 0usize..12) {
        let (kept, n, cut) = truncate_tokens(&text, max);
        let all = token_spans(&text);
        prop_assert!(text.starts_with(kept));
        prop_assert_eq!(n, all.len().min(max));
        prop_assert_eq!(cut, all.len() > max);
        prop_assert_eq!(token_spans(kept).len(), n);
    }

    #[test]
    fn losses_ignore_row_scale(
        t in prop::collection::vec(nonzero_vec(3), 1..5),
        scale in prop::collection::vec(0.1f64..10.0, 5),
    ) {
        let n = t.len();
        let s: Vec<Vec<f64>> = t.iter().rev().cloned().collect();
        let flat = |rows: &[Vec<f64>], k: &[f64]| -> Tensor {
            Tensor::matrix(n, 3, rows.iter().zip(k).flat_map(|(r, c)| r.iter().map(move |x| x * c)).collect()).unwrap()
        };
        let ones = vec![1.0; n];
        for obj in [Objective::Cosine, Objective::Contrastive { temperature: 0.05 }] {
            let base = obj.value(&flat(&t, &ones), &flat(&s, &ones)).unwrap();
            let scaled = obj.value(&flat(&t, &scale[..n]), &flat(&s, &scale[..n])).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
        let cos = Objective::Cosine.value(&flat(&t, &ones), &flat(&s, &ones)).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cos));
    }

    #[test]
    fn rankings_ignore_query_scale(
        docs in prop::collection::vec(nonzero_vec(4), 1..30),
        q in nonzero_vec(4),
        shift in -4i32..4,
    ) {
        let ids: Vec<String> = (0..docs.len()).map(|i| format!("d{i}")).collect();
        let index = PassageIndex::from_vectors(4, ids.iter().map(String::as_str).zip(docs.iter().map(Vec::as_slice))).unwrap();
        let c = 2f64.powi(shift);
        let qs: Vec<f64> = q.iter().map(|x| x * c).collect();
        let a = exact_search([("q", q.as_slice())], &index, 10).unwrap();
        let b = exact_search([("q", qs.as_slice())], &index, 10).unwrap();
        let order = |r: &embsteal_core::retrieval::RunRanking| -> Vec<String> {
            r.queries[0].1.iter().map(|s| s.doc_id.clone()).collect()
        };
        prop_assert_eq!(order(&a), order(&b));
        let mut qrels = Qrels::new();
        qrels.insert("q", "d0", 2).unwrap();
        for m in [ndcg_at_k(&a, &qrels, 10, Gain::Exponential).mean, recall_at_k(&a, &qrels, 10, 1).mean] {
            let m = m.unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulated_teachers_emit_unit_vectors(seed in 0u64..10_000) {
        let cfg = WorldConfig {
            seed,
            train_queries: 20,
            train_passages: 40,
            eval_queries: 8,
            eval_passages: 16,
            ..WorldConfig::default()
        };
        let (world, data) = SyntheticWorld::generate(&cfg).unwrap();
        for spec in [TeacherSpec::sim_openai(seed), TeacherSpec::sim_cohere(seed)] {
            let t = world.teacher(&spec).unwrap();
            for r in data.train.iter().chain(&data.eval_passages) {
                let v = world.simulate_teacher(&t, r).unwrap();
                prop_assert_eq!(v.dim(), spec.dim);
                let n: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() <= 1e-4);
                prop_assert_eq!(&v, &world.simulate_teacher(&t, r).unwrap());
            }
        }
        let kinds: BTreeSet<Kind> = data.train.iter().map(|r| r.kind).collect();
        prop_assert_eq!(kinds.len(), 2);
    }
}
