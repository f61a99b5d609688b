//! Token/tag TSV corpora and tagset files.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Sentence;
use crate::error::{Error, Result};

pub fn read_semtag_tsv(path: &Path) -> Result<Vec<Sentence>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_semtag_tsv_str(&fs::read_to_string(path)?, &path.display().to_string())
}

/// One `token<TAB>tag` per line; blank lines end sentences.
pub fn read_semtag_tsv_str(text: &str, source: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>, out: &mut Vec<Sentence>| {
        if !tokens.is_empty() {
            let mut s = Sentence::new(format!("s{}", out.len() + 1), std::mem::take(tokens));
            s.semtags = Some(std::mem::take(tags));
            out.push(s);
        }
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut out);
            continue;
        }
        let (tok, tag) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, lineno + 1, "expected token<TAB>tag"))?;
        tokens.push(tok.to_string());
        tags.push(tag.trim().to_string());
    }
    flush(&mut tokens, &mut tags, &mut out);
    Ok(out)
}

pub fn write_semtag_tsv_string(sentences: &[Sentence]) -> Result<String> {
    let mut out = String::new();
    for s in sentences {
        let tags = s
            .semtags
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("sentence {} has no semantic tags", s.id)))?;
        for (t, g) in s.tokens.iter().zip(tags) {
            let _ = writeln!(out, "{t}\t{g}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_semtag_tsv(path: &Path, sentences: &[Sentence]) -> Result<()> {
    fs::write(path, write_semtag_tsv_string(sentences)?)?;
    Ok(())
}

/// Declared tag inventory. File format: one tag per line, optionally
/// followed by a tab and its coarse class; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tagset {
    pub tags: Vec<String>,
    pub classes: Vec<Option<String>>,
}

impl Tagset {
    pub fn parse(text: &str) -> Self {
        let mut ts = Tagset::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t').map(str::trim);
            let tag = parts.next().unwrap_or_default().to_string();
            ts.tags.push(tag);
            ts.classes.push(parts.next().filter(|c| !c.is_empty()).map(str::to_string));
        }
        ts
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// Distinct coarse classes in declaration order.
    pub fn coarse_classes(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.classes
            .iter()
            .flatten()
            .filter(|c| seen.insert(c.as_str()))
            .map(String::as_str)
            .collect()
    }

    /// Tags used in `sentences` but not declared, in first-seen order.
    /// Unknown tags are allowed; callers report them as warnings.
    pub fn unknown_tags(&self, sentences: &[Sentence]) -> Vec<String> {
        let mut seen = HashSet::new();
        sentences
            .iter()
            .filter_map(|s| s.semtags.as_ref())
            .flatten()
            .filter(|t| !self.contains(t) && seen.insert(t.as_str()))
            .cloned()
            .collect()
    }
}
