use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub src: String,
    pub tgt: String,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScores {
    pub name: String,
    pub bleu: f64,
    pub chrf_hallucination_rate: f64,
    pub tng_hallucination_rate: f64,
    /// Known-by-construction hallucination rate; only synthetic runs have one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_hallucination_rate: Option<f64>,
    pub scored: usize,
    pub failed: usize,
}

/// Per-direction comparison of systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Direction,
    pub bleu_label: String,
    pub systems: Vec<SystemScores>,
    /// Systems not significantly outperformed on BLEU by the best system.
    pub significance_marks: Vec<String>,
}

const CELL: usize = 12;

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::invalid("report without systems"));
        }
        for s in &self.systems {
            for r in [
                Some(s.chrf_hallucination_rate),
                Some(s.tng_hallucination_rate),
                s.ground_truth_hallucination_rate,
            ]
            .into_iter()
            .flatten()
            {
                if !(0.0..=100.0).contains(&r) {
                    return Err(Error::invalid(format!(
                        "rate {r} for {} out of range",
                        s.name
                    )));
                }
            }
        }
        if self.significance_marks.is_empty() {
            return Err(Error::invalid("significance marks must not be empty"));
        }
        Ok(())
    }

    pub fn system(&self, name: &str) -> Option<&SystemScores> {
        self.systems.iter().find(|s| s.name == name)
    }

    pub fn is_marked(&self, name: &str) -> bool {
        self.significance_marks.iter().any(|m| m == name)
    }

    /// Plain-text table with one block per metric. BLEU cells of systems in the
    /// not-significantly-outperformed set are wrapped in `**`.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let dir = self.direction.to_string();
        let header = |out: &mut String, title: &str| {
            let _ = writeln!(out, "{title}");
            let mut line = format!("{:<CELL$}", "direction");
            for s in &self.systems {
                let _ = write!(line, "{:<CELL$}", s.name);
            }
            let _ = writeln!(out, "{}", line.trim_end());
        };
        let row = |out: &mut String, cell: &dyn Fn(&SystemScores) -> String| {
            let mut line = format!("{dir:<CELL$}");
            for s in &self.systems {
                let _ = write!(line, "{:<CELL$}", cell(s));
            }
            let _ = writeln!(out, "{}", line.trim_end());
        };

        header(&mut out, &self.bleu_label);
        row(&mut out, &|s| {
            if self.is_marked(&s.name) {
                format!("**{:.2}**", s.bleu)
            } else {
                format!("{:.2}", s.bleu)
            }
        });
        out.push('\n');
        header(&mut out, "Hallucinations (chrF < 20), %");
        row(&mut out, &|s| format!("{:.2}", s.chrf_hallucination_rate));
        out.push('\n');
        header(&mut out, "Oscillatory hallucinations (TNG), %");
        row(&mut out, &|s| format!("{:.2}", s.tng_hallucination_rate));
        if self
            .systems
            .iter()
            .any(|s| s.ground_truth_hallucination_rate.is_some())
        {
            out.push('\n');
            header(&mut out, "Hallucinations (ground truth), %");
            row(&mut out, &|s| match s.ground_truth_hallucination_rate {
                Some(r) => format!("{r:.2}"),
                None => "-".into(),
            });
        }
        out.push('\n');
        header(&mut out, "Sentences scored / failed");
        row(&mut out, &|s| format!("{}/{}", s.scored, s.failed));
        out
    }
}
