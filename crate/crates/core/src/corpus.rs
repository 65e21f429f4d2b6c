//! JSONL sentence files.
//!
//! One JSON object per line: `{"id": str, "lang": str, "text": str}` or
//! `{"id": str, "lang": str, "tokens": [int]}`. When both `text` and `tokens`
//! are present, `tokens` wins. A corpus file may mix languages; sources and
//! references are matched by `id`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenId>>,
}

impl SentenceRecord {
    /// Token form of the sentence, eos-terminated.
    pub fn to_tokens(&self, vocab: Option<&Vocab>, eos: TokenId) -> Result<TokenSeq> {
        if let Some(t) = &self.tokens {
            let mut ids: Vec<TokenId> = t.iter().copied().filter(|&i| i != eos).collect();
            ids.push(eos);
            return Ok(TokenSeq(ids));
        }
        match (&self.text, vocab) {
            (Some(text), Some(v)) => v.encode(text),
            (Some(_), None) => Err(Error::invalid(format!(
                "sentence {} has only text and no vocabulary was given",
                self.id
            ))),
            (None, _) => Err(Error::invalid(format!(
                "sentence {} has neither text nor tokens",
                self.id
            ))),
        }
    }

    /// Text form used by the metrics. With a vocabulary, tokens are decoded;
    /// without one the stored text is used, and token-only records render as
    /// space-separated ids.
    pub fn to_text(&self, vocab: Option<&Vocab>, eos: TokenId) -> String {
        match (&self.tokens, vocab, &self.text) {
            (Some(t), Some(v), _) => v.decode(&TokenSeq(t.clone())),
            (_, _, Some(text)) => text.clone(),
            (Some(t), None, None) => TokenSeq(t.clone())
                .body(eos)
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            (None, _, None) => String::new(),
        }
    }
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records_file(path: &Path) -> Result<Vec<SentenceRecord>> {
    read_records(BufReader::new(File::open(path)?))
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

/// One source sentence with its optional reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSentence {
    pub id: String,
    pub source: TokenSeq,
    pub source_text: String,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub src_lang: String,
    pub tgt_lang: String,
    pub sentences: Vec<CorpusSentence>,
}

impl Corpus {
    /// Sources are the `src_lang` records in file order; references are the
    /// `tgt_lang` records with a matching id.
    pub fn from_records(
        records: &[SentenceRecord],
        src_lang: &str,
        tgt_lang: &str,
        vocab: Option<&Vocab>,
        eos: TokenId,
    ) -> Result<Self> {
        let mut refs: HashMap<&str, String> = HashMap::new();
        for r in records.iter().filter(|r| r.lang == tgt_lang) {
            if refs.insert(&r.id, r.to_text(vocab, eos)).is_some() {
                return Err(Error::invalid(format!("duplicate reference id {}", r.id)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut sentences = Vec::new();
        for r in records.iter().filter(|r| r.lang == src_lang) {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate source id {}", r.id)));
            }
            sentences.push(CorpusSentence {
                id: r.id.clone(),
                source: r.to_tokens(vocab, eos)?,
                source_text: r.to_text(vocab, eos),
                reference: refs.get(r.id.as_str()).cloned(),
            });
        }
        if sentences.is_empty() {
            return Err(Error::invalid(format!(
                "corpus has no sentences in source language {src_lang:?}"
            )));
        }
        Ok(Corpus {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(
            ["a", "b", "c", "</s>"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            3,
            None,
        )
        .unwrap()
    }

    #[test]
    fn tokens_take_precedence() {
        let line = r#"{"id":"1","lang":"xx","text":"a a","tokens":[2,1]}"#;
        let recs = read_records(line.as_bytes()).unwrap();
        let v = vocab();
        assert_eq!(recs[0].to_tokens(Some(&v), 3).unwrap().ids(), &[2, 1, 3]);
        assert_eq!(recs[0].to_text(Some(&v), 3), "c b");
        assert_eq!(recs[0].to_text(None, 3), "a a");
        let ids = r#"{"id":"1","lang":"xx","tokens":[2,1,3]}"#;
        let recs = read_records(ids.as_bytes()).unwrap();
        assert_eq!(recs[0].to_text(None, 3), "2 1");
    }

    #[test]
    fn corpus_matches_by_id() {
        let text = r#"
{"id":"s1","lang":"xx","text":"a b"}
{"id":"s2","lang":"xx","tokens":[2]}
{"id":"s2","lang":"yy","text":"c"}
{"id":"s1","lang":"yy","text":"b a"}
"#;
        let recs = read_records(text.as_bytes()).unwrap();
        let v = vocab();
        let c = Corpus::from_records(&recs, "xx", "yy", Some(&v), 3).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].reference.as_deref(), Some("b a"));
        assert_eq!(c.sentences[1].source.ids(), &[2, 3]);
        assert!(Corpus::from_records(&recs, "zz", "yy", Some(&v), 3).is_err());
        assert!(Corpus::from_records(&recs, "xx", "yy", None, 3).is_err());
    }

    #[test]
    fn bad_line_reports_position() {
        let err = read_records("{\"id\":1}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
