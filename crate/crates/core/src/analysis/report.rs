use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabelPrf;
use crate::error::{Error, Result};

/// Metrics of one evaluation. Values are fractions in `[0, 1]`; the table
/// rendering shows percentages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub system: String,
    pub split: String,
    pub metrics: BTreeMap<String, f64>,
    /// Per-label tables keyed by layer (e.g. `upos`, `semtag`, `label`).
    pub per_label: BTreeMap<String, Vec<LabelPrf>>,
    pub counts: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.2}", 100.0 * v),
        None => "—".to_string(),
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} / {} / {}", self.task, self.system, self.split)?;
        for (k, v) in &self.metrics {
            writeln!(f, "  {k:<20}{:>8}", pct(Some(*v)))?;
        }
        for (k, v) in &self.counts {
            writeln!(f, "  {k:<20}{v:>8}")?;
        }
        for (layer, table) in &self.per_label {
            writeln!(f, "\n  {layer:<12}{:>10}{:>10}{:>9}", "precision", "recall", "support")?;
            for r in table {
                writeln!(
                    f,
                    "  {:<12}{:>10}{:>10}{:>9}",
                    r.label,
                    pct(r.precision),
                    pct(r.recall),
                    r.support
                )?;
            }
        }
        Ok(())
    }
}

/// A single label or a label sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Labels {
    One(String),
    Many(Vec<String>),
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub gold: Labels,
    pub pred: Labels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semtags_pred: Option<Vec<String>>,
}

impl PredictionRecord {
    /// An instance is correct when every predicted label matches.
    pub fn correct(&self) -> bool {
        self.gold == self.pred
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<Self>> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let src = path.display().to_string();
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(&src, i + 1, e.to_string())))
            .collect()
    }

    pub fn write_jsonl(path: &Path, records: &[Self]) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for r in records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}
