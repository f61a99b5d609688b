//! Evaluation metrics and the comparison-set / tag-frequency analysis.

mod plot;
mod report;

pub use plot::{emit_frequency_plot, read_frequency_csv, render_svg};
pub use report::{EvalReport, PredictionRecord, Labels};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::DependencyTree;

/// Fraction of positions where `pred` equals `gold`.
pub fn accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    let (correct, total) = count_correct(pred, gold)?;
    if total == 0 {
        return Err(Error::Invalid("accuracy over zero items".into()));
    }
    Ok(correct as f64 / total as f64)
}

pub fn count_correct<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<(usize, usize)> {
    if pred.len() != gold.len() {
        return Err(Error::Invalid(format!(
            "prediction length {} differs from gold length {}",
            pred.len(),
            gold.len()
        )));
    }
    Ok((pred.iter().zip(gold).filter(|(p, g)| p == g).count(), gold.len()))
}

/// Token counts behind attachment scores; add sentences, then read the
/// micro-averaged scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentCounts {
    pub tokens: usize,
    pub head_correct: usize,
    pub labeled_correct: usize,
}

impl AttachmentCounts {
    pub fn add(&mut self, pred: &DependencyTree, gold: &DependencyTree) -> Result<()> {
        let n = gold.heads.len();
        if pred.heads.len() != n || pred.labels.len() != n || gold.labels.len() != n {
            return Err(Error::Invalid(format!(
                "tree length mismatch: predicted {}/{} vs gold {}/{}",
                pred.heads.len(),
                pred.labels.len(),
                n,
                gold.labels.len()
            )));
        }
        for i in 0..n {
            if pred.heads[i] == gold.heads[i] {
                self.head_correct += 1;
                if pred.labels[i] == gold.labels[i] {
                    self.labeled_correct += 1;
                }
            }
        }
        self.tokens += n;
        Ok(())
    }

    pub fn las(&self) -> f64 {
        ratio(self.labeled_correct, self.tokens)
    }

    pub fn uas(&self) -> f64 {
        ratio(self.head_correct, self.tokens)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `(LAS, UAS)` of one sentence.
pub fn las_uas(pred: &DependencyTree, gold: &DependencyTree) -> Result<(f64, f64)> {
    let mut c = AttachmentCounts::default();
    c.add(pred, gold)?;
    Ok((c.las(), c.uas()))
}

/// Precision and recall of one label. `None` marks an undefined ratio
/// (zero denominator), which is not the same as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelPrf {
    pub label: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub predicted: usize,
    pub support: usize,
}

/// Per-label precision/recall. Labels seen in `preds` or `golds` but not
/// listed in `labels` are appended (sorted) rather than rejected.
pub fn per_label_prf<S: AsRef<str>>(preds: &[S], golds: &[S], labels: &[S]) -> Result<Vec<LabelPrf>> {
    if preds.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for l in labels {
        if seen.insert(l.as_ref().to_string()) {
            order.push(l.as_ref().to_string());
        }
    }
    let extra: BTreeSet<&str> = preds
        .iter()
        .chain(golds)
        .map(AsRef::as_ref)
        .filter(|l| !seen.contains(*l))
        .collect();
    order.extend(extra.into_iter().map(str::to_string));

    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (p.as_ref(), g.as_ref());
        *predicted.entry(p).or_default() += 1;
        *support.entry(g).or_default() += 1;
        if p == g {
            *tp.entry(p).or_default() += 1;
        }
    }
    Ok(order
        .into_iter()
        .map(|label| {
            let t = tp.get(label.as_str()).copied().unwrap_or(0);
            let p = predicted.get(label.as_str()).copied().unwrap_or(0);
            let s = support.get(label.as_str()).copied().unwrap_or(0);
            LabelPrf {
                precision: (p > 0).then(|| t as f64 / p as f64),
                recall: (s > 0).then(|| t as f64 / s as f64),
                true_positives: t,
                predicted: p,
                support: s,
                label,
            }
        })
        .collect())
}

/// Support-weighted average of per-label recall (equals accuracy).
pub fn micro_recall(table: &[LabelPrf]) -> f64 {
    let total: usize = table.iter().map(|r| r.support).sum();
    let weighted: f64 = table
        .iter()
        .filter_map(|r| r.recall.map(|rec| rec * r.support as f64))
        .sum();
    ratio_f(weighted, total)
}

fn ratio_f(a: f64, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a / b as f64
    }
}

/// Instances one system got right and another got wrong.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSet {
    pub superior: String,
    pub inferior: String,
    pub members: Vec<String>,
}

impl ComparisonSet {
    /// `SUPERIOR-INFERIOR`, e.g. `lws-fsn`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.superior, self.inferior)
    }
}

/// One set per pair of systems where the first ranks strictly above the
/// second. `ranking` lists systems from worst to best; `outputs` maps each
/// system to per-instance correctness. Sets are ordered by superior (best
/// first), then inferior (worst first).
pub fn comparison_sets(outputs: &BTreeMap<String, BTreeMap<String, bool>>, ranking: &[String]) -> Result<Vec<ComparisonSet>> {
    let mut uniq = BTreeSet::new();
    for s in ranking {
        if !uniq.insert(s) {
            return Err(Error::Invalid(format!("system {s:?} ranked twice")));
        }
        if !outputs.contains_key(s) {
            return Err(Error::Invalid(format!("ranked system {s:?} has no outputs")));
        }
    }
    let ids: BTreeSet<&String> = outputs.values().flat_map(|m| m.keys()).collect();
    for (system, m) in outputs {
        let missing: Vec<&str> = ids.iter().filter(|id| !m.contains_key(**id)).map(|s| s.as_str()).collect();
        if !missing.is_empty() {
            return Err(Error::Invalid(format!(
                "system {system:?} is missing instances: {}",
                missing.join(", ")
            )));
        }
    }
    let mut sets = Vec::new();
    for sup in (0..ranking.len()).rev() {
        for inf in 0..sup {
            let (s, i) = (&outputs[&ranking[sup]], &outputs[&ranking[inf]]);
            sets.push(ComparisonSet {
                superior: ranking[sup].clone(),
                inferior: ranking[inf].clone(),
                members: ids.iter().filter(|id| s[**id] && !i[**id]).map(|id| id.to_string()).collect(),
            });
        }
    }
    Ok(sets)
}

/// Token-level relative frequency of each tag inside the set, divided by
/// its relative frequency over `full_test`. Tags of the test set that never
/// occur in the set get 0. Sorted by ratio, descending (ties by tag).
pub fn normalized_tag_frequencies(
    set: &ComparisonSet,
    instance_semtags: &BTreeMap<String, Vec<String>>,
    full_test: &[Vec<String>],
) -> Result<Vec<(String, f64)>> {
    if set.members.is_empty() {
        return Ok(Vec::new());
    }
    let mut full: BTreeMap<&str, usize> = BTreeMap::new();
    let mut full_total = 0usize;
    for tags in full_test {
        for t in tags {
            *full.entry(t).or_default() += 1;
            full_total += 1;
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for id in &set.members {
        let tags = instance_semtags
            .get(id)
            .ok_or_else(|| Error::Invalid(format!("no semantic tags for instance {id:?}")))?;
        for t in tags {
            *counts.entry(t).or_default() += 1;
            total += 1;
        }
    }
    if let Some(t) = counts.keys().find(|t| !full.contains_key(*t)) {
        return Err(Error::Invalid(format!("tag {t:?} occurs in the set but not in the full test set")));
    }
    let mut out: Vec<(String, f64)> = full
        .iter()
        .map(|(&tag, &n)| {
            let in_set = counts.get(tag).copied().unwrap_or(0);
            let r = if total == 0 {
                0.0
            } else {
                (in_set as f64 / total as f64) / (n as f64 / full_total as f64)
            };
            (tag.to_string(), r)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}
