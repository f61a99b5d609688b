use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{ModelDims, System};

/// Main task of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Upos,
    Dep,
    Nli,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Upos => "upos",
            TaskKind::Dep => "dep",
            TaskKind::Nli => "nli",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upos" => Ok(TaskKind::Upos),
            "dep" => Ok(TaskKind::Dep),
            "nli" => Ok(TaskKind::Nli),
            other => Err(Error::Config(format!("unknown task {other:?} (upos|dep|nli)"))),
        }
    }
}

/// How the two tasks' labels are laid out over the training data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataRegime {
    /// Two corpora, each labelled for one task; batches never mix them.
    #[default]
    Disjoint,
    /// One corpus labelled for both tasks.
    Overlapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Weight of the auxiliary loss.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub regime: DataRegime,
    pub grad_clip: bool,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Abort as soon as any op produces a non-finite value.
    pub checked: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 0.1,
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 20,
            dropout: 0.3,
            recurrent_dropout: 0.3,
            regime: DataRegime::Disjoint,
            grad_clip: true,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            checked: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(format!("training.lambda must be ≥ 0, got {}", self.lambda));
        }
        if self.epochs == 0 {
            return bad("training.epochs must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return bad("training.batch_size must be ≥ 1".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!("training.learning_rate must be positive, got {}", self.learning_rate));
        }
        for (k, v) in [("dropout", self.dropout), ("recurrent_dropout", self.recurrent_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("training.{k} must be in [0, 1), got {v}"));
            }
        }
        if self.grad_clip && (self.clip_norm.is_nan() || self.clip_norm <= 0.0) {
            return bad(format!("training.clip_norm must be positive, got {}", self.clip_norm));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub task: TaskKind,
    pub system: System,
    pub seed: u64,
    /// Seeded repetitions averaged by `multi_run`.
    pub runs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            task: TaskKind::Upos,
            system: System::Fsn,
            seed: 1,
            runs: super::DEFAULT_RUNS,
        }
    }
}

/// Corpus locations. `train`/`dev`/`test` hold the main task (CoNLL-U, or
/// JSON lines for inference); `aux_*` hold semantic-tag TSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tagset: Option<PathBuf>,
    /// Fill missing semantic tags on the main corpus with a tagger trained
    /// on `aux_train`.
    pub project_aux: bool,
    /// Epochs for the projection tagger and for encoder pretraining.
    pub aux_epochs: usize,
    /// Pretrain the inference encoder's semtag path on `aux_train` and
    /// warm-start from it.
    pub pretrain_aux: bool,
}

impl DataConfig {
    pub fn paths_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 7] {
        [
            ("data.train", &mut self.train),
            ("data.dev", &mut self.dev),
            ("data.test", &mut self.test),
            ("data.aux_train", &mut self.aux_train),
            ("data.aux_dev", &mut self.aux_dev),
            ("data.aux_test", &mut self.aux_test),
            ("data.tagset", &mut self.tagset),
        ]
    }
}

/// Everything a run needs besides the data itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub training: TrainingConfig,
    pub model: ModelDims,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.model.validate()?;
        if self.run.runs == 0 {
            return Err(Error::Config("run.runs must be ≥ 1".into()));
        }
        if self.data.train.is_none() && !(self.run.task == TaskKind::Upos && self.data.aux_train.is_some()) {
            return Err(Error::Config("data.train is required".into()));
        }
        if (self.data.project_aux || self.data.pretrain_aux) && self.data.aux_train.is_none() {
            return Err(Error::Config("data.aux_train is required for projection or pretraining".into()));
        }
        Ok(())
    }
}

/// Published hyperparameters per task family, with fixture data paths.
fn family(name: &str) -> Option<(TaskKind, TrainingConfig, DataConfig)> {
    let base = TrainingConfig::default();
    let tagging_data = DataConfig {
        train: Some("ud/train.conllu".into()),
        dev: Some("ud/dev.conllu".into()),
        test: Some("ud/test.conllu".into()),
        aux_train: Some("semtag/train.tsv".into()),
        aux_dev: Some("semtag/dev.tsv".into()),
        aux_test: Some("semtag/test.tsv".into()),
        tagset: Some("semtag/tagset.tsv".into()),
        aux_epochs: 10,
        ..Default::default()
    };
    let nli_data = |split: &str| DataConfig {
        train: Some(format!("nli/{split}train.jsonl").into()),
        dev: Some(format!("nli/{split}dev.jsonl").into()),
        test: Some(format!("nli/{split}test.jsonl").into()),
        aux_train: Some("semtag/train.tsv".into()),
        tagset: Some("semtag/tagset.tsv".into()),
        project_aux: true,
        pretrain_aux: true,
        aux_epochs: 10,
        ..Default::default()
    };
    Some(match name {
        "upos" => (TaskKind::Upos, base, tagging_data),
        "dep" => (
            TaskKind::Dep,
            TrainingConfig {
                lambda: 0.5,
                learning_rate: 2e-3,
                batch_size: 50,
                epochs: 15,
                dropout: 0.33,
                recurrent_dropout: 0.0,
                regime: DataRegime::Overlapped,
                ..base
            },
            DataConfig {
                aux_dev: None,
                aux_test: None,
                project_aux: true,
                ..tagging_data
            },
        ),
        "snli" => (
            TaskKind::Nli,
            TrainingConfig {
                learning_rate: 5e-5,
                batch_size: 128,
                epochs: 37,
                regime: DataRegime::Overlapped,
                ..base
            },
            nli_data(""),
        ),
        "sicke" => (
            TaskKind::Nli,
            TrainingConfig {
                learning_rate: 5e-5,
                batch_size: 8,
                epochs: 20,
                regime: DataRegime::Overlapped,
                ..base
            },
            nli_data("sicke-"),
        ),
        _ => return None,
    })
}

/// Built-in preset names: `<family>-<system>`.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for f in ["upos", "dep", "snli", "sicke"] {
        for s in System::ALL {
            out.push(format!("{f}-{s}"));
        }
    }
    out
}

/// The built-in configuration for e.g. `upos-fsn` or `dep-lws`.
pub fn preset(name: &str) -> Result<RunConfig> {
    let unknown = || Error::Config(format!("unknown preset {name:?}; known: {}", preset_names().join(", ")));
    let (fam, sys) = name.rsplit_once('-').ok_or_else(unknown)?;
    let system: System = sys.parse().map_err(|_| unknown())?;
    let (task, training, data) = family(fam).ok_or_else(unknown)?;
    Ok(RunConfig {
        run: RunSection {
            task,
            system,
            ..Default::default()
        },
        training,
        model: ModelDims::default(),
        data,
    })
}
