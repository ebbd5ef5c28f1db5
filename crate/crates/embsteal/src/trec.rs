//! TREC qrels and run files.

use std::fmt::Write as _;

use embsteal_core::retrieval::{Qrels, RunRanking, Scored};

use crate::error::{AppError, Result};

/// Parses `qid 0 docid rel` lines.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = |why: &str| AppError::Data(format!("qrels line {}: {why}", i + 1));
        let [qid, _, did, rel] = f[..] else {
            return Err(bad("expected 4 fields"));
        };
        let rel: u32 = rel.parse().map_err(|_| bad("relevance must be a non-negative integer"))?;
        q.insert(qid, did, rel).map_err(|_| bad("duplicate judgment"))?;
    }
    Ok(q)
}

pub fn format_qrels(q: &Qrels) -> String {
    let mut s = String::new();
    for (qid, did, rel) in q.iter() {
        let _ = writeln!(s, "{qid} 0 {did} {rel}");
    }
    s
}

/// `qid Q0 docid rank score tag`, ranks from 1. Scores use the shortest
/// representation that parses back to the same `f64`.
pub fn format_run(run: &RunRanking, tag: &str) -> String {
    let mut s = String::new();
    for (qid, docs) in &run.queries {
        for (i, d) in docs.iter().enumerate() {
            let _ = writeln!(s, "{qid} Q0 {} {} {} {tag}", d.doc_id, i + 1, d.score);
        }
    }
    s
}

/// Reads a run file back, keeping query order of first appearance and
/// ordering each list by rank.
pub fn parse_run(text: &str) -> Result<RunRanking> {
    let mut run = RunRanking::default();
    let mut ranked: Vec<Vec<(usize, Scored)>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = |why: &str| AppError::Data(format!("run line {}: {why}", i + 1));
        let [qid, _, did, rank, score, _] = f[..] else {
            return Err(bad("expected 6 fields"));
        };
        let rank: usize = rank.parse().map_err(|_| bad("bad rank"))?;
        let score: f64 = score.parse().map_err(|_| bad("bad score"))?;
        let slot = match run.queries.iter().position(|(q, _)| q == qid) {
            Some(p) => p,
            None => {
                run.queries.push((qid.to_string(), Vec::new()));
                ranked.push(Vec::new());
                run.queries.len() - 1
            }
        };
        ranked[slot].push((
            rank,
            Scored {
                doc_id: did.to_string(),
                score,
            },
        ));
    }
    for ((_, docs), mut r) in run.queries.iter_mut().zip(ranked) {
        r.sort_by_key(|(rank, _)| *rank);
        *docs = r.into_iter().map(|(_, s)| s).collect();
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_round_trip() {
        let text = "q1 0 d1 1\nq1 0 d2 0\n\nq2 0 d9 2\n";
        let q = parse_qrels(text).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q.rel("q2", "d9"), 2);
        assert_eq!(format_qrels(&q), "q1 0 d1 1\nq1 0 d2 0\nq2 0 d9 2\n");
        assert!(parse_qrels("q1 0 d1\n").is_err());
        assert!(parse_qrels("q1 0 d1 1\nq1 0 d1 1\n").is_err());
        assert!(parse_qrels("q1 0 d1 -1\n").is_err());
    }

    #[test]
    fn run_round_trip_is_bit_exact() {
        let run = RunRanking {
            queries: vec![(
                "q".into(),
                vec![
                    Scored { doc_id: "a".into(), score: 0.1 + 0.2 },
                    Scored { doc_id: "b".into(), score: -1.0 / 3.0 },
                ],
            )],
        };
        let text = format_run(&run, "student");
        assert_eq!(text.lines().next().unwrap(), "q Q0 a 1 0.30000000000000004 student");
        assert_eq!(parse_run(&text).unwrap(), run);
    }
}
