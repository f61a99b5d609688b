//! Corpora, vocabularies and file formats.

pub mod conllu;
pub mod nli;
pub mod semtag;
pub mod vocab;

pub use conllu::{read_conllu, read_conllu_str, write_conllu, write_conllu_string};
pub use nli::{read_nli_jsonl, read_nli_jsonl_str, tokenize, NliCorpus, NliInstance, NliLabel};
pub use semtag::{read_semtag_tsv, read_semtag_tsv_str, write_semtag_tsv, write_semtag_tsv_string, Tagset};
pub use vocab::Vocabulary;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized sentence with optional annotation layers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semtags: Option<Vec<String>>,
    /// `heads[i]` is the 1-based head of token `i + 1`; 0 is the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deprels: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Sentence {
            id: id.into(),
            tokens,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks that every present layer matches the token count and that
    /// heads lie in `[0, n]`.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        let check = |name: &str, len: Option<usize>| match len {
            Some(l) if l != n => Err(Error::Invalid(format!(
                "sentence {}: {name} layer has {l} entries for {n} tokens",
                self.id
            ))),
            _ => Ok(()),
        };
        check("upos", self.upos.as_ref().map(Vec::len))?;
        check("semtag", self.semtags.as_ref().map(Vec::len))?;
        check("head", self.heads.as_ref().map(Vec::len))?;
        check("deprel", self.deprels.as_ref().map(Vec::len))?;
        if let Some(h) = &self.heads {
            if let Some(&bad) = h.iter().find(|&&x| x > n) {
                return Err(Error::Invalid(format!(
                    "sentence {}: head {bad} out of range for {n} tokens",
                    self.id
                )));
            }
        }
        Ok(())
    }
}
