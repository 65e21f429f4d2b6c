mod common;

use std::sync::Arc;

use common::{hashed_row, spawn, Behavior};
use multipivot::modelwire::{EndpointConfig, WireClient, WireQuery, WireScorer};
use multipivot::types::{DecodeParams, SourceEntry, SourceSet, StepDistribution, TokenSeq};
use multipivot::{beam_search, Combiner, Error, Scorer, StepQuery, TokenId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn query(rng: &mut ChaCha8Rng, v: usize) -> WireQuery {
    let n = rng.random_range(1..6);
    let p = rng.random_range(0..4);
    WireQuery {
        src_lang: ["en", "es", "fr"][rng.random_range(0..3)].into(),
        tgt_lang: "tgt".into(),
        source_tokens: Some((0..n).map(|_| rng.random_range(0..v as TokenId)).collect()),
        source_text: None,
        prefix_tokens: (0..p).map(|_| rng.random_range(0..v as TokenId)).collect(),
    }
}

fn expected(q: &WireQuery, v: usize) -> StepDistribution {
    StepDistribution::renormalized(hashed_row(q, v), 1e-4).unwrap()
}

fn client(url: String, max_batch: usize) -> WireClient {
    WireClient::new(EndpointConfig {
        max_batch,
        ..EndpointConfig::new(url)
    })
    .unwrap()
}

#[test]
fn empty_batch_is_empty() {
    let server = spawn(1, 16, Behavior::Hashed);
    let c = client(server.url(), 8);
    assert!(c.fetch_step_batch(&[]).unwrap().is_empty());
    assert_eq!(server.step_requests(), 0);
}

#[test]
fn order_preserved_under_shuffles() {
    let v = 24;
    let server = spawn(1, v, Behavior::Hashed);
    let c = client(server.url(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fixtures: Vec<WireQuery> = (0..40).map(|_| query(&mut rng, v)).collect();
    for round in 0..10 {
        let mut qs = fixtures.clone();
        qs.shuffle(&mut rng);
        qs.truncate(1 + round * 4);
        let got = c.fetch(&qs).unwrap();
        assert_eq!(got.len(), qs.len());
        for (q, d) in qs.iter().zip(&got) {
            assert_eq!(d, &expected(q, v));
        }
    }
}

#[test]
fn fixed_row_round_trips_bit_for_bit() {
    let probs = [0.5, 0.25, 0.125, 0.0625, 0.0625, 0.0];
    let row: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let server = spawn(1, row.len(), Behavior::Fixed(row.clone()));
    let c = client(server.url(), 4);
    let q = WireQuery {
        src_lang: "en".into(),
        tgt_lang: "tgt".into(),
        source_tokens: Some(vec![1]),
        source_text: None,
        prefix_tokens: vec![],
    };
    let got = c.fetch_step_batch(&[q.clone(), q]).unwrap();
    let want = StepDistribution::renormalized(row, 1e-4).unwrap();
    for d in got {
        let a: Vec<u64> = d.logprobs().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = want.logprobs().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn malformed_rows_are_protocol_errors_with_index() {
    let v = 12;
    let server = spawn(1, v, Behavior::WrongLength { index: 2 });
    let c = client(server.url(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let qs: Vec<WireQuery> = (0..5).map(|_| query(&mut rng, v)).collect();
    match c.fetch_step_batch(&qs) {
        Err(Error::Protocol { index: Some(2), .. }) => {}
        other => panic!("expected protocol error at 2, got {other:?}"),
    }
    server.set_behavior(Behavior::Unnormalized { index: 4 });
    match c.fetch_step_batch(&qs) {
        Err(Error::Protocol { index: Some(4), .. }) => {}
        other => panic!("expected protocol error at 4, got {other:?}"),
    }
    server.set_behavior(Behavior::MissingRow);
    match c.fetch_step_batch(&qs) {
        Err(Error::Protocol { index: None, .. }) => {}
        other => panic!("expected protocol error, got {other:?}"),
    }
    // Indices are reported against the caller's list, not the chunk.
    server.set_behavior(Behavior::WrongLength { index: 1 });
    let small = client(server.url(), 2);
    match small.fetch(&qs[..3]) {
        Err(Error::Protocol { index: Some(1), .. }) => {}
        other => panic!("expected protocol error at 1, got {other:?}"),
    }
}

#[test]
fn retries_are_idempotent() {
    let v = 10;
    let server = spawn(1, v, Behavior::FailFirst { n: 2, status: 503 });
    let c = client(server.url(), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let qs: Vec<WireQuery> = (0..9).map(|_| query(&mut rng, v)).collect();
    let got = c.fetch_step_batch(&qs).unwrap();
    assert_eq!(server.step_requests(), 3);
    let bodies = server.state.bodies.lock().unwrap().clone();
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(got.len(), qs.len());
    for (q, d) in qs.iter().zip(&got) {
        assert_eq!(d, &expected(q, v));
    }
}

#[test]
fn retries_exhausted_is_backend_error() {
    let server = spawn(1, 10, Behavior::FailFirst { n: 10, status: 500 });
    let c = client(server.url(), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let err = c.fetch_step_batch(&[query(&mut rng, 10)]).unwrap_err();
    assert!(matches!(err, Error::Backend(_)), "{err:?}");
    assert_eq!(server.step_requests(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = spawn(1, 10, Behavior::FailFirst { n: 10, status: 400 });
    let c = client(server.url(), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(c.fetch_step_batch(&[query(&mut rng, 10)]).is_err());
    assert_eq!(server.step_requests(), 1);
}

#[test]
fn handshake_is_cached_and_idempotent() {
    let server = spawn(1, 128, Behavior::Hashed);
    let c = client(server.url(), 16);
    let a = c.handshake().unwrap();
    let b = c.handshake().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.vocab_size, 128);
    assert_eq!(c.meta(), Some(a));

    // Every later batch is checked against the advertised 128.
    let short = spawn(1, 128, Behavior::WrongLength { index: 0 });
    let c2 = client(short.url(), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let qs = vec![query(&mut rng, 128)];
    assert!(matches!(
        c2.fetch_step_batch(&qs),
        Err(Error::Protocol { .. })
    ));
    short.set_behavior(Behavior::Hashed);
    assert_eq!(c2.fetch_step_batch(&qs).unwrap()[0].len(), 128);
}

#[test]
fn version_mismatch_is_fatal() {
    let server = spawn(2, 16, Behavior::Hashed);
    let c = client(server.url(), 16);
    assert!(matches!(c.handshake(), Err(Error::Protocol { .. })));
    assert!(WireScorer::connect(EndpointConfig::new(server.url()), 0).is_err());
}

#[test]
fn unreachable_endpoint_is_backend_error() {
    let cfg = EndpointConfig {
        retries: 0,
        timeout_ms: 500,
        ..EndpointConfig::new("http://127.0.0.1:9")
    };
    let err = WireClient::new(cfg).unwrap().handshake().unwrap_err();
    assert!(err.is_backend(), "{err:?}");
}

#[test]
fn oversized_batch_is_rejected() {
    let server = spawn(1, 8, Behavior::Hashed);
    let c = client(server.url(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let qs: Vec<WireQuery> = (0..3).map(|_| query(&mut rng, 8)).collect();
    assert!(matches!(
        c.fetch_step_batch(&qs),
        Err(Error::InvalidArgument(_))
    ));
    assert_eq!(c.fetch(&qs).unwrap().len(), 3);
}

/// The hashed server function, evaluated locally.
struct LocalHashed {
    v: usize,
}

impl Scorer for LocalHashed {
    fn vocab_size(&self) -> usize {
        self.v
    }
    fn eos_id(&self) -> TokenId {
        0
    }
    fn score_batch(&self, qs: &[StepQuery<'_>]) -> multipivot::Result<Vec<StepDistribution>> {
        Ok(qs
            .iter()
            .map(|q| expected(&WireQuery::from(q), self.v))
            .collect())
    }
}

#[test]
fn remote_decode_matches_local_decode() {
    let v = 9;
    let server = spawn(1, v, Behavior::Hashed);
    let remote = WireScorer::from_client(Arc::new(client(server.url(), 5)), 0).unwrap();
    let local = LocalHashed { v };
    let sources = SourceSet::new(vec![
        SourceEntry {
            lang: "en".into(),
            seq: TokenSeq(vec![3, 4, 5, 0]),
        },
        SourceEntry {
            lang: "es".into(),
            seq: TokenSeq(vec![6, 2, 0]),
        },
    ])
    .unwrap();
    for combiner in [Combiner::MultiAvg, Combiner::MaxEns, Combiner::LogAvg] {
        let p = DecodeParams {
            beam_size: 3,
            max_len: 6,
            combiner,
            ..Default::default()
        };
        let a = beam_search(&sources, "tgt", &remote, &p, false).unwrap();
        let b = beam_search(&sources, "tgt", &local, &p, false).unwrap();
        assert_eq!(a.hypotheses, b.hypotheses);
    }
}
