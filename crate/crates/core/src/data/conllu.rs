//! CoNLL-U reading and writing.
//!
//! Only ID, FORM, UPOS, HEAD and DEPREL are kept. A `SemTag=` entry in the
//! MISC column carries a semantic tag, which is how projected tags are
//! written back out. Comment lines, multiword-token ranges (`3-4`) and
//! empty nodes (`5.1`) are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Sentence;
use crate::error::{Error, Result};

const SEMTAG_KEY: &str = "SemTag=";

pub fn read_conllu(path: &Path) -> Result<Vec<Sentence>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_conllu_str(&fs::read_to_string(path)?, &path.display().to_string())
}

#[derive(Default)]
struct Pending {
    id: Option<String>,
    tokens: Vec<String>,
    upos: Vec<Option<String>>,
    heads: Vec<Option<usize>>,
    deprels: Vec<Option<String>>,
    semtags: Vec<Option<String>>,
    first_line: usize,
}

fn column(v: &str) -> Option<String> {
    (v != "_").then(|| v.to_string())
}

/// Keeps a string layer when any token has a value; gaps become `_`.
fn string_layer(values: Vec<Option<String>>) -> Option<Vec<String>> {
    if values.iter().all(Option::is_none) {
        return None;
    }
    Some(values.into_iter().map(|v| v.unwrap_or_else(|| "_".into())).collect())
}

impl Pending {
    fn finish(self, index: usize, source: &str) -> Result<Sentence> {
        let heads = if self.heads.iter().all(Option::is_none) {
            None
        } else if self.heads.iter().all(Option::is_some) {
            Some(self.heads.into_iter().map(Option::unwrap).collect())
        } else {
            return Err(Error::parse(source, self.first_line, "HEAD given for some tokens but not others"));
        };
        let s = Sentence {
            id: self.id.unwrap_or_else(|| format!("s{}", index + 1)),
            tokens: self.tokens,
            upos: string_layer(self.upos),
            semtags: string_layer(self.semtags),
            heads,
            deprels: string_layer(self.deprels),
        };
        s.validate()
            .map_err(|e| Error::parse(source, self.first_line, e.to_string()))?;
        Ok(s)
    }
}

pub fn read_conllu_str(text: &str, source: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut cur = Pending::default();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !cur.tokens.is_empty() {
                let done = std::mem::take(&mut cur);
                out.push(done.finish(out.len(), source)?);
            } else {
                cur.id = None;
            }
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                let id = id.trim_start().trim_start_matches('=').trim();
                cur.id = Some(id.to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(source, lineno, format!("expected 10 columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let expected = cur.tokens.len() + 1;
        match cols[0].parse::<usize>() {
            Ok(i) if i == expected => {}
            _ => {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("token id {:?}, expected {expected}", cols[0]),
                ))
            }
        }
        if cur.tokens.is_empty() {
            cur.first_line = lineno;
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(
                h.parse::<usize>()
                    .map_err(|_| Error::parse(source, lineno, format!("non-integer HEAD {h:?}")))?,
            ),
        };
        let semtag = cols[9]
            .split('|')
            .find_map(|kv| kv.strip_prefix(SEMTAG_KEY))
            .map(str::to_string);
        cur.tokens.push(cols[1].to_string());
        cur.upos.push(column(cols[3]));
        cur.heads.push(head);
        cur.deprels.push(column(cols[7]));
        cur.semtags.push(semtag);
    }
    if !cur.tokens.is_empty() {
        out.push(cur.finish(out.len(), source)?);
    }
    Ok(out)
}

pub fn write_conllu_string(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "# sent_id = {}", s.id);
        for (i, form) in s.tokens.iter().enumerate() {
            let layer = |l: &Option<Vec<String>>| l.as_ref().map_or("_".to_string(), |v| v[i].clone());
            let head = s.heads.as_ref().map_or("_".to_string(), |h| h[i].to_string());
            let misc = s
                .semtags
                .as_ref()
                .map_or("_".to_string(), |t| format!("{SEMTAG_KEY}{}", t[i]));
            let _ = writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t{}",
                i + 1,
                form,
                layer(&s.upos),
                head,
                layer(&s.deprels),
                misc
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_conllu(path: &Path, sentences: &[Sentence]) -> Result<()> {
    fs::write(path, write_conllu_string(sentences))?;
    Ok(())
}
