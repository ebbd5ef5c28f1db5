use embsteal::cache::{read_cache, CacheWriter};
use embsteal::trec::{format_qrels, format_run, parse_qrels, parse_run};
use embsteal::tsv::{ingest_tsv, write_tsv};
use embsteal_core::retrieval::{Qrels, RunRanking, Scored};
use embsteal_core::teacher::EmbeddingVector;
use embsteal_core::{Kind, TextRecord};
use proptest::prelude::*;

fn ids(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[a-z0-9]{1,6}", n).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tsv_round_trips(
        ids in ids(1..20),
        texts in prop::collection::vec("[a-z ,.]{0,12}[a-z]", 20),
    ) {
        let records: Vec<TextRecord> = ids.iter().zip(&texts).map(|(i, t)| TextRecord::passage(i.clone(), t.clone())).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        write_tsv(&p, &records).unwrap();
        let got = ingest_tsv(&p, Kind::Passage).unwrap();
        prop_assert!(got.malformed.is_empty());
        prop_assert_eq!(got.collection.records(), &records[..]);
    }

    #[test]
    fn cache_round_trips_at_f32_precision(
        ids in ids(1..12),
        raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 12),
        split in 0usize..12,
    ) {
        let vecs: Vec<EmbeddingVector> = raw
            .iter()
            .map(|v| {
                let mut v = v.clone();
                v[0] += 2.0;
                EmbeddingVector::normalized(v).unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.embc");
        let split = split.min(ids.len());
        // two sessions: appending after reopen keeps earlier entries
        for range in [0..split, split..ids.len()] {
            let (mut w, _) = CacheWriter::open(&p, 5).unwrap();
            for i in range {
                w.append(&ids[i], &vecs[i]).unwrap();
            }
            w.commit().unwrap();
        }
        let c = read_cache(&p).unwrap();
        prop_assert_eq!(c.len(), ids.len());
        prop_assert_eq!(c.torn_bytes, 0);
        for ((id, v), (want_id, want)) in c.entries.iter().zip(ids.iter().zip(&vecs)) {
            prop_assert_eq!(id, want_id);
            for (a, b) in v.values().iter().zip(want.values()) {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
    }

    #[test]
    fn qrels_and_runs_round_trip(
        judged in prop::collection::btree_map(("q[0-9]{1,2}", "d[0-9]{1,3}"), 0u32..4, 0..30),
        scores in prop::collection::vec(-1e3f64..1e3, 1..10),
    ) {
        let mut q = Qrels::new();
        for ((qid, did), rel) in &judged {
            q.insert(qid, did, *rel).unwrap();
        }
        prop_assert_eq!(parse_qrels(&format_qrels(&q)).unwrap(), q);

        let docs: Vec<Scored> = scores.iter().enumerate().map(|(i, s)| Scored { doc_id: format!("d{i}"), score: *s }).collect();
        let run = RunRanking { queries: vec![("q1".into(), docs.clone()), ("q0".into(), docs)] };
        prop_assert_eq!(parse_run(&format_run(&run, "t")).unwrap(), run);
    }
}

#[test]
fn torn_tail_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.embc");
    let (mut w, _) = CacheWriter::open(&p, 2).unwrap();
    w.append("a", &EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap()).unwrap();
    w.commit().unwrap();
    drop(w);
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.extend_from_slice(&[9, 0, 0, 0, b'x']);
    std::fs::write(&p, &bytes).unwrap();
    let c = read_cache(&p).unwrap();
    assert_eq!((c.len(), c.torn_bytes), (1, 5));
    let (_, reopened) = CacheWriter::open(&p, 2).unwrap();
    assert_eq!(reopened.len(), 1);
}
