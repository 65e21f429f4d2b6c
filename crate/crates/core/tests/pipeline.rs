use std::sync::Arc;

use multipivot::corpus::{read_records, write_jsonl, Corpus, SentenceRecord};
use multipivot::metrics::{Direction, EvalReport, SystemScores};
use multipivot::pipeline::{
    eval_items, evaluate_systems, produce_pivots, run_corpus, translate_sentence, Backend,
    EvalOptions, RunConfig, Strategy, SystemOutputs,
};
use multipivot::synth::{
    build_task, experiment_run_config, ExperimentConfig, SyntheticBackend, SyntheticTask,
};
use multipivot::types::{DecodeParams, SourceSet};
use multipivot::{beam_search, Error, Scorer};

fn task(config: ExperimentConfig) -> Arc<SyntheticTask> {
    Arc::new(build_task(&config).unwrap())
}

fn corpus_of(t: &SyntheticTask) -> Corpus {
    let c = &t.config;
    Corpus::from_records(
        &t.corpus_records(),
        &c.source_lang,
        &c.target_lang,
        Some(&t.vocab),
        t.eos(),
    )
    .unwrap()
}

fn small(n: usize) -> ExperimentConfig {
    ExperimentConfig {
        corpus_size: n,
        bootstrap_resamples: 200,
        ..Default::default()
    }
}

#[test]
fn noiseless_single_pivot_is_the_cipher_image() {
    let t = task(ExperimentConfig {
        corpus_size: 5,
        ..ExperimentConfig::noiseless()
    });
    let mut cfg = experiment_run_config(&t.config);
    cfg.pivots = vec!["es".into()];
    for s in &t.sentences {
        let scorer = t.scorer(&s.id).unwrap();
        let set = produce_pivots(&s.source, &cfg, &scorer).unwrap();
        assert_eq!(set.k(), 1);
        assert_eq!(set.entries()[0].seq, t.pivot_reference(s, "es").unwrap());
    }
}

#[test]
fn pivots_follow_config_order_and_match_independent_search() {
    let t = task(small(6));
    let cfg = experiment_run_config(&t.config);
    for s in &t.sentences {
        let scorer = t.scorer(&s.id).unwrap();
        let set = produce_pivots(&s.source, &cfg, &scorer).unwrap();
        let langs: Vec<&str> = set.entries().iter().map(|e| e.lang.as_str()).collect();
        assert_eq!(langs, ["en", "es", "fr"]);
        for e in set.entries() {
            let solo = beam_search(
                &SourceSet::single("src", s.source.clone()),
                &e.lang,
                &scorer,
                &cfg.pivot_decode,
                false,
            )
            .unwrap();
            assert_eq!(solo.best().unwrap().tokens, e.seq);
        }
        let with_src = RunConfig {
            include_direct_path: true,
            ..cfg.clone()
        };
        let set = produce_pivots(&s.source, &with_src, &scorer).unwrap();
        assert_eq!(set.k(), 4);
        assert_eq!(set.entries()[3].lang, "src");
        assert_eq!(set.entries()[3].seq, s.source);
    }
}

#[test]
fn single_pivot_equals_one_pivot_ensemble() {
    let t = task(small(8));
    let base = experiment_run_config(&t.config);
    for s in &t.sentences {
        let scorer = t.scorer(&s.id).unwrap();
        let single = translate_sentence(
            &s.source,
            &base.for_strategy(&Strategy::SinglePivot("fr".into())),
            &scorer,
            false,
        )
        .unwrap();
        for st in [Strategy::MultiAvg, Strategy::MaxEns, Strategy::LogAvg] {
            let cfg = RunConfig {
                pivots: vec!["fr".into()],
                strategy: st,
                ..base.clone()
            };
            let ens = translate_sentence(&s.source, &cfg, &scorer, false).unwrap();
            assert_eq!(ens.hypothesis.tokens, single.hypothesis.tokens);
            assert_eq!(ens.hypothesis.score, single.hypothesis.score);
        }
    }
}

#[test]
fn triggered_sentences_max_follows_confident_pivot() {
    let t = task(small(60));
    let base = experiment_run_config(&t.config);
    let mut seen = 0;
    for s in t.sentences.iter().filter(|s| s.triggered) {
        let scorer = t.scorer(&s.id).unwrap();
        let conf = &t.config.pivots[s.confident_pivot];
        let single = translate_sentence(
            &s.source,
            &base.for_strategy(&Strategy::SinglePivot(conf.clone())),
            &scorer,
            false,
        )
        .unwrap();
        let maxens = translate_sentence(
            &s.source,
            &base.for_strategy(&Strategy::MaxEns),
            &scorer,
            false,
        )
        .unwrap();
        let multiavg = translate_sentence(
            &s.source,
            &base.for_strategy(&Strategy::MultiAvg),
            &scorer,
            false,
        )
        .unwrap();
        assert_eq!(
            maxens.hypothesis.tokens, single.hypothesis.tokens,
            "{}",
            s.id
        );
        assert_ne!(
            multiavg.hypothesis.tokens, single.hypothesis.tokens,
            "{}",
            s.id
        );
        // Every generated token but eos came from the confident pivot.
        let prov = maxens.hypothesis.provenance.unwrap();
        assert!(prov[..prov.len() - 1]
            .iter()
            .all(|&k| k == s.confident_pivot));
        seen += 1;
    }
    assert!(seen > 5);
}

#[test]
fn noiseless_every_strategy_returns_the_reference() {
    let t = task(ExperimentConfig {
        corpus_size: 6,
        ..ExperimentConfig::noiseless()
    });
    let base = experiment_run_config(&t.config);
    for s in &t.sentences {
        let scorer = t.scorer(&s.id).unwrap();
        for st in [
            Strategy::Direct,
            Strategy::SinglePivot("en".into()),
            Strategy::MultiAvg,
            Strategy::MaxEns,
            Strategy::LogAvg,
        ] {
            let out =
                translate_sentence(&s.source, &base.for_strategy(&st), &scorer, false).unwrap();
            assert_eq!(out.hypothesis.tokens, s.reference, "{st}");
        }
    }
}

#[test]
fn errors_carry_stage_labels() {
    let t = task(small(3));
    let s = &t.sentences[0];
    let scorer = t.scorer(&s.id).unwrap();
    let mut cfg = experiment_run_config(&t.config);
    cfg.pivots = vec!["en".into(), "xx".into()];
    match translate_sentence(&s.source, &cfg, &scorer, false) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage.to_string(), "pivot (xx)"),
        other => panic!("{other:?}"),
    }
    cfg.pivots = vec!["en".into()];
    cfg.target_lang = "es".into();
    match translate_sentence(&s.source, &cfg, &scorer, false) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage.to_string(), "final"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_corpus_is_invalid() {
    let t = task(small(2));
    let empty = Corpus {
        src_lang: "src".into(),
        tgt_lang: "tgt".into(),
        sentences: vec![],
    };
    let cfg = experiment_run_config(&t.config);
    let r = run_corpus(
        &empty,
        &cfg,
        &[Strategy::MaxEns],
        &SyntheticBackend(t.clone()),
        Some(&t.vocab),
        &EvalOptions::default(),
    );
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn identical_strategies_tie() {
    let t = task(small(4));
    let mut cfg = experiment_run_config(&t.config);
    cfg.pivots = vec!["en".into()];
    let run = run_corpus(
        &corpus_of(&t),
        &cfg,
        &[Strategy::MultiAvg, Strategy::MaxEns],
        &SyntheticBackend(t.clone()),
        Some(&t.vocab),
        &EvalOptions::default(),
    )
    .unwrap();
    let report = run.report.unwrap();
    assert_eq!(report.systems[0].bleu, report.systems[1].bleu);
    assert!(report.is_marked("MultiAvg") && report.is_marked("MaxEns"));
}

#[test]
fn corpus_run_equals_manual_composition() {
    let t = task(small(10));
    let cfg = experiment_run_config(&t.config);
    let strategies = [
        Strategy::Direct,
        Strategy::MaxEns,
        Strategy::SinglePivot("es".into()),
    ];
    let run = run_corpus(
        &corpus_of(&t),
        &cfg,
        &strategies,
        &SyntheticBackend(t.clone()),
        Some(&t.vocab),
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(run.outputs.len(), 30);
    for (k, st) in strategies.iter().enumerate() {
        for (j, s) in t.sentences.iter().enumerate() {
            let row = &run.outputs[k * 10 + j];
            assert_eq!(row.id, s.id);
            assert_eq!(row.system, st.label());
            let scorer = t.scorer(&s.id).unwrap();
            let manual =
                translate_sentence(&s.source, &cfg.for_strategy(st), &scorer, false).unwrap();
            assert_eq!(row.tokens.as_deref(), Some(manual.hypothesis.tokens.ids()));
            assert_eq!(row.score, Some(manual.hypothesis.score));
            assert_eq!(row.provenance, manual.hypothesis.provenance);
        }
    }
}

#[test]
fn permuting_the_corpus_permutes_outputs_only() {
    let t = task(small(12));
    let cfg = experiment_run_config(&t.config);
    let strategies = [Strategy::Direct, Strategy::MultiAvg, Strategy::MaxEns];
    let backend = SyntheticBackend(t.clone());
    let opts = EvalOptions::default();
    let forward = corpus_of(&t);
    let mut reversed = forward.clone();
    reversed.sentences.reverse();
    let a = run_corpus(&forward, &cfg, &strategies, &backend, Some(&t.vocab), &opts).unwrap();
    let b = run_corpus(
        &reversed,
        &cfg,
        &strategies,
        &backend,
        Some(&t.vocab),
        &opts,
    )
    .unwrap();
    assert_eq!(a.report, b.report);
    for k in 0..strategies.len() {
        let mut rows_b: Vec<_> = b.outputs[k * 12..(k + 1) * 12].to_vec();
        rows_b.reverse();
        assert_eq!(&a.outputs[k * 12..(k + 1) * 12], &rows_b[..]);
    }
}

/// Synthetic backend that refuses every third sentence.
struct Flaky(SyntheticBackend);

impl Backend for Flaky {
    fn scorer_for(&self, id: &str) -> multipivot::Result<Arc<dyn Scorer>> {
        let n: usize = id[1..].parse().unwrap();
        if n.is_multiple_of(3) {
            return Err(Error::Backend(format!("no scorer for {id}")));
        }
        self.0.scorer_for(id)
    }
}

#[test]
fn failures_are_counted_not_dropped() {
    let t = task(small(10));
    let cfg = experiment_run_config(&t.config);
    let run = run_corpus(
        &corpus_of(&t),
        &cfg,
        &[Strategy::MultiAvg, Strategy::MaxEns],
        &Flaky(SyntheticBackend(t.clone())),
        Some(&t.vocab),
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(run.failed(), 8);
    let report = run.report.unwrap();
    for s in &report.systems {
        assert_eq!(s.failed, 4);
        assert_eq!(s.scored + s.failed, 10);
    }
    let failed = run.outputs.iter().find(|o| o.failed()).unwrap();
    assert!(failed.error.as_ref().unwrap().contains("s00000"));
}

#[test]
fn unfinished_final_hypotheses_count_as_failures() {
    let t = task(small(4));
    let mut cfg = experiment_run_config(&t.config);
    cfg.final_decode = DecodeParams {
        max_len: 3,
        ..cfg.final_decode
    };
    let run = run_corpus(
        &corpus_of(&t),
        &cfg,
        &[Strategy::MaxEns],
        &SyntheticBackend(t.clone()),
        Some(&t.vocab),
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(run.failed(), 4);
    assert!(run
        .outputs
        .iter()
        .all(|o| !o.finished && o.tokens.is_some()));
    assert_eq!(run.report.unwrap().systems[0].scored, 0);
}

#[test]
fn outputs_read_back_as_corpus_records() {
    let t = task(small(3));
    let cfg = experiment_run_config(&t.config);
    let run = run_corpus(
        &corpus_of(&t),
        &cfg,
        &[Strategy::MaxEns],
        &SyntheticBackend(t.clone()),
        Some(&t.vocab),
        &EvalOptions::default(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &run.outputs).unwrap();
    let recs: Vec<SentenceRecord> = read_records(buf.as_slice()).unwrap();
    assert_eq!(recs.len(), 3);
    for (r, o) in recs.iter().zip(&run.outputs) {
        assert_eq!(r.id, o.id);
        assert_eq!(r.lang, "tgt");
        assert_eq!(r.text, o.text);
        assert!(r.tokens.is_some());
    }
    let line = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
    assert!(line.contains("\"provenance\":["));
    assert!(line.contains("\"pivots\":["));
}

#[test]
fn report_table_matches_golden_file() {
    let sys = |name: &str, bleu, chrf, tng, gt| SystemScores {
        name: name.into(),
        bleu,
        chrf_hallucination_rate: chrf,
        tng_hallucination_rate: tng,
        ground_truth_hallucination_rate: gt,
        scored: 1012,
        failed: 0,
    };
    let report = EvalReport {
        direction: Direction {
            src: "af".into(),
            tgt: "ast".into(),
        },
        bleu_label: "BLEU (caller tokenization)".into(),
        systems: vec![
            sys("Direct", 12.04, 23.5, 1.2, None),
            sys("MultiAvg", 13.1, 22.5, 0.0, None),
            sys("MaxEns", 13.35, 21.8, 0.99, None),
            sys("EN Pivot", 13.4, 18.8, 0.5, None),
        ],
        significance_marks: vec!["MaxEns".into(), "EN Pivot".into()],
    };
    let golden = include_str!("fixtures/report_table.txt");
    assert_eq!(report.render_table(), golden);

    let mut with_truth = report.clone();
    with_truth.systems[0].ground_truth_hallucination_rate = Some(30.0);
    let table = with_truth.render_table();
    assert!(table.contains("Hallucinations (ground truth), %\n"));
    assert!(table.contains("30.00       -           -           -\n"));
}

#[test]
fn evaluation_marks_only_unbeaten_systems() {
    let items: Vec<_> = (0..60)
        .map(|i| multipivot::pipeline::EvalItem {
            id: format!("x{i:03}"),
            source: format!("q{i} r{i} s{i} t{i} u{i}"),
            reference: format!("a{i} b{i} c{i} d{i} e{i} f{i}"),
        })
        .collect();
    let good = SystemOutputs {
        name: "good".into(),
        outputs: items
            .iter()
            .map(|it| (it.id.clone(), Some(it.reference.clone())))
            .collect(),
        ground_truth: None,
    };
    let bad = SystemOutputs {
        name: "bad".into(),
        outputs: items
            .iter()
            .map(|it| (it.id.clone(), Some("zz yy xx ww".to_string())))
            .collect(),
        ground_truth: None,
    };
    let dir = Direction {
        src: "a".into(),
        tgt: "b".into(),
    };
    let r = evaluate_systems(dir, &items, &[bad, good], &EvalOptions::default()).unwrap();
    assert_eq!(r.significance_marks, vec!["good".to_string()]);
    assert_eq!(r.system("good").unwrap().bleu, 100.0);
    assert_eq!(r.system("bad").unwrap().chrf_hallucination_rate, 100.0);
}

#[test]
fn eval_items_need_every_reference() {
    let t = task(small(3));
    let mut c = corpus_of(&t);
    assert_eq!(eval_items(&c).unwrap().len(), 3);
    c.sentences[1].reference = None;
    assert!(eval_items(&c).is_none());
}
