use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::task::{build_task, ExperimentConfig, SyntheticBackend};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{chrf, BootstrapParams, Direction, EvalReport};
use crate::pipeline::{
    eval_items, evaluate_systems, translate_corpus, translate_sentence, EvalOptions, PivotOutput,
    RunConfig, SentenceOutput, Strategy, SystemOutputs,
};
use crate::types::TokenSeq;

/// How often the max ensemble follows the confident pivot on triggered
/// sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentPivotCheck {
    pub triggered: usize,
    pub maxens_matches_confident: usize,
    pub multiavg_matches_confident: usize,
}

impl ConfidentPivotCheck {
    pub fn maxens_rate(&self) -> f64 {
        if self.triggered == 0 {
            return 1.0;
        }
        self.maxens_matches_confident as f64 / self.triggered as f64
    }

    pub fn multiavg_rate(&self) -> f64 {
        if self.triggered == 0 {
            return 1.0;
        }
        self.multiavg_matches_confident as f64 / self.triggered as f64
    }
}

/// Agreement of the chrF proxy with ground truth, over scored sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyCalibration {
    pub system: String,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl ProxyCalibration {
    pub fn precision(&self) -> Option<f64> {
        let d = self.true_positive + self.false_positive;
        (d > 0).then(|| self.true_positive as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.true_positive + self.false_negative;
        (d > 0).then(|| self.true_positive as f64 / d as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpOutput {
    pub text: Option<String>,
    pub chrf: Option<f64>,
    pub hallucination: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of the per-sentence inspection dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDump {
    pub id: String,
    pub triggered: bool,
    pub confident_pivot: String,
    pub source: String,
    pub reference: String,
    pub pivots: Vec<PivotOutput>,
    pub outputs: BTreeMap<String, DumpOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub report: EvalReport,
    pub confident_check: ConfidentPivotCheck,
    pub calibration: Vec<ProxyCalibration>,
    #[serde(skip)]
    pub sentences: Vec<SentenceDump>,
}

impl ExperimentReport {
    pub fn render(&self) -> String {
        let mut out = self.report.render_table();
        let f = &self.confident_check;
        let _ = writeln!(
            out,
            "\nTriggered sentences: {}; output equals confident single pivot: MaxEns {:.1}%, MultiAvg {:.1}%",
            f.triggered,
            100.0 * f.maxens_rate(),
            100.0 * f.multiavg_rate()
        );
        let _ = writeln!(
            out,
            "\nchrF < {} proxy vs ground truth (tp/fp/fn/tn)",
            self.config.chrf_threshold
        );
        for c in &self.calibration {
            let _ = writeln!(
                out,
                "{:<12}{}/{}/{}/{}",
                c.system, c.true_positive, c.false_positive, c.false_negative, c.true_negative
            );
        }
        out
    }
}

/// Strategies of a synthetic study, in table order.
pub fn experiment_strategies(config: &ExperimentConfig) -> Vec<Strategy> {
    vec![
        Strategy::Direct,
        Strategy::MultiAvg,
        Strategy::MaxEns,
        Strategy::SinglePivot(config.pivots[0].clone()),
    ]
}

pub fn experiment_run_config(config: &ExperimentConfig) -> RunConfig {
    RunConfig {
        source_lang: config.source_lang.clone(),
        target_lang: config.target_lang.clone(),
        pivots: config.pivots.clone(),
        strategy: Strategy::MaxEns,
        include_direct_path: false,
        pivot_decode: config.pivot_params(),
        final_decode: config.final_params(),
        backend: None,
    }
}

pub fn experiment_eval_options(config: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        bleu_label: "BLEU (whitespace tokens)".into(),
        chrf_threshold: config.chrf_threshold,
        bootstrap: BootstrapParams {
            resamples: config.bootstrap_resamples,
            seed: config.seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn output_tokens(o: &SentenceOutput) -> Option<TokenSeq> {
    if o.failed() {
        return None;
    }
    o.tokens.clone().map(TokenSeq)
}

/// Builds the task, runs Direct, MultiAvg, MaxEns and the first pivot alone
/// over the whole corpus, and scores them against references and the known
/// hallucination labels.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let task = Arc::new(build_task(config)?);
    let vocab = &task.vocab;
    let eos = task.eos();
    let corpus = Corpus::from_records(
        &task.corpus_records(),
        &config.source_lang,
        &config.target_lang,
        Some(vocab),
        eos,
    )?;
    let run = experiment_run_config(config);
    let strategies = experiment_strategies(config);
    let backend = SyntheticBackend(Arc::clone(&task));
    let outputs = translate_corpus(&corpus, &run, &strategies, &backend, Some(vocab))?;
    let opts = experiment_eval_options(config);

    let mut systems = Vec::new();
    for s in &strategies {
        let name = s.label();
        let mut sys = SystemOutputs::from_outputs(&name, &outputs);
        let truth: HashMap<String, bool> = outputs
            .iter()
            .filter(|o| o.system == name)
            .filter_map(|o| {
                let sent = task.sentence(&o.id)?;
                Some((
                    o.id.clone(),
                    task.is_hallucination(sent, &output_tokens(o)?),
                ))
            })
            .collect();
        sys.ground_truth = Some(truth);
        systems.push(sys);
    }
    let items =
        eval_items(&corpus).ok_or_else(|| Error::invalid("synthetic corpus lacks references"))?;
    let direction = Direction {
        src: config.source_lang.clone(),
        tgt: config.target_lang.clone(),
    };
    let report = evaluate_systems(direction, &items, &systems, &opts)?;

    let by_system = |name: &str| -> HashMap<&str, &SentenceOutput> {
        outputs
            .iter()
            .filter(|o| o.system == name)
            .map(|o| (o.id.as_str(), o))
            .collect()
    };
    let maxens = by_system(&Strategy::MaxEns.label());
    let multiavg = by_system(&Strategy::MultiAvg.label());

    let mut confident_check = ConfidentPivotCheck {
        triggered: 0,
        maxens_matches_confident: 0,
        multiavg_matches_confident: 0,
    };
    for sent in task.sentences.iter().filter(|s| s.triggered) {
        confident_check.triggered += 1;
        let pivot = &config.pivots[sent.confident_pivot];
        let single = run.for_strategy(&Strategy::SinglePivot(pivot.clone()));
        let scorer = task.scorer(&sent.id)?;
        let Ok(t) = translate_sentence(&sent.source, &single, &scorer, false) else {
            continue;
        };
        let confident = Some(t.hypothesis.tokens);
        if maxens.get(sent.id.as_str()).and_then(|o| output_tokens(o)) == confident {
            confident_check.maxens_matches_confident += 1;
        }
        if multiavg
            .get(sent.id.as_str())
            .and_then(|o| output_tokens(o))
            == confident
        {
            confident_check.multiavg_matches_confident += 1;
        }
    }

    let mut calibration: Vec<ProxyCalibration> = systems
        .iter()
        .map(|s| ProxyCalibration {
            system: s.name.clone(),
            true_positive: 0,
            false_positive: 0,
            false_negative: 0,
            true_negative: 0,
        })
        .collect();
    let mut sentences = Vec::with_capacity(corpus.len());
    for (sent, item) in task.sentences.iter().zip(&items) {
        let mut dump = SentenceDump {
            id: sent.id.clone(),
            triggered: sent.triggered,
            confident_pivot: config.pivots[sent.confident_pivot].clone(),
            source: item.source.clone(),
            reference: item.reference.clone(),
            pivots: maxens
                .get(sent.id.as_str())
                .map(|o| o.pivots.clone())
                .unwrap_or_default(),
            outputs: BTreeMap::new(),
        };
        for (sys, cal) in systems.iter().zip(calibration.iter_mut()) {
            let text = sys.outputs.get(&sent.id).cloned().flatten();
            let truth = sys
                .ground_truth
                .as_ref()
                .and_then(|g| g.get(&sent.id).copied())
                .unwrap_or(false);
            let score = match &text {
                Some(t) => Some(chrf(t, &item.reference, &opts.chrf)?),
                None => None,
            };
            if let Some(c) = score {
                match (c < opts.chrf_threshold, truth) {
                    (true, true) => cal.true_positive += 1,
                    (true, false) => cal.false_positive += 1,
                    (false, true) => cal.false_negative += 1,
                    (false, false) => cal.true_negative += 1,
                }
            }
            let error = outputs
                .iter()
                .find(|o| o.system == sys.name && o.id == sent.id)
                .and_then(|o| o.error.clone());
            dump.outputs.insert(
                sys.name.clone(),
                DumpOutput {
                    text,
                    chrf: score,
                    hallucination: truth,
                    error,
                },
            );
        }
        sentences.push(dump);
    }

    Ok(ExperimentReport {
        config: config.clone(),
        report,
        confident_check,
        calibration,
        sentences,
    })
}
