//! Sentence-pair inference corpora in JSON-lines form.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Sentence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Contradiction, NliLabel::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Contradiction => "contradiction",
            NliLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NliLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entailment" => Ok(NliLabel::Entailment),
            "contradiction" => Ok(NliLabel::Contradiction),
            "neutral" => Ok(NliLabel::Neutral),
            other => Err(Error::Invalid(format!("unknown inference label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliInstance {
    pub id: String,
    pub premise: Sentence,
    pub hypothesis: Sentence,
    pub label: NliLabel,
}

#[derive(Clone, Debug, Default)]
pub struct NliCorpus {
    pub instances: Vec<NliInstance>,
    /// Lines skipped because annotators reached no consensus (`"-"`).
    pub dropped: usize,
}

#[derive(Deserialize)]
struct RawPair {
    #[serde(rename = "pairID")]
    pair_id: Option<String>,
    sentence1: String,
    sentence2: String,
    gold_label: String,
    sentence1_tokens: Option<Vec<String>>,
    sentence2_tokens: Option<Vec<String>>,
    sentence1_semtags: Option<Vec<String>>,
    sentence2_semtags: Option<Vec<String>>,
}

/// Whitespace tokenization that also splits off punctuation characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() && ch != '\'' && ch != '-' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

pub fn read_nli_jsonl(path: &Path) -> Result<NliCorpus> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_nli_jsonl_str(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn read_nli_jsonl_str(text: &str, source: &str) -> Result<NliCorpus> {
    let mut corpus = NliCorpus::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(source, lineno + 1, m);
        let raw: RawPair = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if raw.gold_label.trim() == "-" {
            corpus.dropped += 1;
            continue;
        }
        let label = raw.gold_label.parse::<NliLabel>().map_err(|e| err(e.to_string()))?;
        let id = raw.pair_id.unwrap_or_else(|| format!("p{}", lineno + 1));
        let side = |suffix: &str, text: &str, toks: Option<Vec<String>>, tags: Option<Vec<String>>| -> Result<Sentence> {
            let mut s = Sentence::new(format!("{id}{suffix}"), toks.unwrap_or_else(|| tokenize(text)));
            if s.is_empty() {
                return Err(err(format!("empty sentence in pair {id}")));
            }
            s.semtags = tags;
            s.validate().map_err(|e| err(e.to_string()))?;
            Ok(s)
        };
        let premise = side("/p", &raw.sentence1, raw.sentence1_tokens, raw.sentence1_semtags)?;
        let hypothesis = side("/h", &raw.sentence2, raw.sentence2_tokens, raw.sentence2_semtags)?;
        corpus.instances.push(NliInstance {
            id,
            premise,
            hypothesis,
            label,
        });
    }
    Ok(corpus)
}
