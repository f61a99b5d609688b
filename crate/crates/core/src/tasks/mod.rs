//! Task models: a joint UPOS/semantic tagger, a biaffine dependency parser
//! and an attention-based sentence-pair inference model. Each pairs a main
//! task with semantic tagging as the auxiliary task.

pub mod mst;
pub mod nli;
pub mod parser;
pub mod tagger;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::data::{Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::Ctx;
use crate::sharing::{SubspaceSplit, TopologyKind};

pub use mst::{is_tree, mst_decode, tree_score};
pub use nli::{NliModel, NliOutput, NliPrediction, PretrainReport};
pub use parser::{biaffine_arc_scores, DependencyTree, ParseOutput, ParsePrediction, ParserModel};
pub use nli::PretrainConfig;
pub use tagger::{project_tags, TagOutput, TaggerModel};

/// Which model is trained: the single-task baseline or one of the three
/// sharing topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    St,
    Fsn,
    Psn,
    Lws,
}

impl System {
    pub const ALL: [System; 4] = [System::St, System::Fsn, System::Psn, System::Lws];

    /// The single-task baseline uses the fully shared wiring with the
    /// auxiliary task switched off.
    pub fn topology(self) -> TopologyKind {
        match self {
            System::St | System::Fsn => TopologyKind::Fsn,
            System::Psn => TopologyKind::Psn,
            System::Lws => TopologyKind::Lws,
        }
    }

    pub fn uses_aux(self) -> bool {
        self != System::St
    }

    pub fn as_str(self) -> &'static str {
        match self {
            System::St => "st",
            System::Fsn => "fsn",
            System::Psn => "psn",
            System::Lws => "lws",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "st" => Ok(System::St),
            "fsn" => Ok(System::Fsn),
            "psn" => Ok(System::Psn),
            "lws" => Ok(System::Lws),
            other => Err(Error::Config(format!("unknown system {other:?} (st|fsn|psn|lws)"))),
        }
    }
}

/// Layer widths. `hidden_dim` is the width of a bi-LSTM layer's output,
/// so each direction has `hidden_dim / 2` units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Shared part of a split layer; the remainder is private. Defaults to
    /// half of `hidden_dim`.
    pub shared_dim: Option<usize>,
    pub arc_dim: usize,
    pub label_dim: usize,
    pub mlp_dim: usize,
    pub orthogonal_init: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed_dim: 32,
            hidden_dim: 32,
            shared_dim: None,
            arc_dim: 32,
            label_dim: 16,
            mlp_dim: 32,
            orthogonal_init: false,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 2 || !self.hidden_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("hidden_dim must be even and ≥ 2, got {}", self.hidden_dim)));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("arc_dim", self.arc_dim),
            ("label_dim", self.label_dim),
            ("mlp_dim", self.mlp_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.split()?;
        Ok(())
    }

    pub fn lstm_units(&self) -> usize {
        self.hidden_dim / 2
    }

    pub fn split(&self) -> Result<SubspaceSplit> {
        match self.shared_dim {
            None => Ok(SubspaceSplit::half(self.hidden_dim)),
            Some(s) if s >= 1 && s <= self.hidden_dim => Ok(SubspaceSplit {
                shared_dim: s,
                private_dim: self.hidden_dim - s,
            }),
            Some(s) => Err(Error::Config(format!(
                "shared_dim {s} does not fit a layer of width {}",
                self.hidden_dim
            ))),
        }
    }
}

/// Word and label inventories, built from training data and then frozen.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub words: Vocabulary,
    pub upos: Vocabulary,
    pub semtags: Vocabulary,
    pub deprels: Vocabulary,
}

impl Vocabs {
    /// Collects every token and label in `sentences`; `extra_semtags`
    /// (a declared tagset) are added first so their ids are stable.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, extra_semtags: &[String]) -> Self {
        let mut v = Vocabs {
            words: Vocabulary::new(),
            upos: Vocabulary::labels(),
            semtags: Vocabulary::labels(),
            deprels: Vocabulary::labels(),
        };
        for t in extra_semtags {
            v.semtags.add(t);
        }
        for s in sentences {
            s.tokens.iter().for_each(|t| {
                v.words.add(t);
            });
            for (layer, vocab) in [(&s.upos, &mut v.upos), (&s.semtags, &mut v.semtags), (&s.deprels, &mut v.deprels)] {
                if let Some(tags) = layer {
                    tags.iter().for_each(|t| {
                        vocab.add(t);
                    });
                }
            }
        }
        v.freeze();
        v
    }

    pub fn freeze(&mut self) {
        self.words.freeze();
        self.upos.freeze();
        self.semtags.freeze();
        self.deprels.freeze();
    }

    pub fn word_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.words.id_or_unk(t)).collect()
    }
}

/// Gold label ids with a mask; labels missing from the inventory are
/// masked out.
pub(crate) fn gold_ids(vocab: &Vocabulary, tags: &[String]) -> (Vec<usize>, Vec<bool>) {
    tags.iter()
        .map(|t| match vocab.get(t) {
            Some(id) => (id, true),
            None => (0, false),
        })
        .unzip()
}

pub(crate) fn decode_tags(vocab: &Vocabulary, logits: &crate::Tensor) -> Vec<String> {
    // an empty inventory still has a one-column head; decode it as "_"
    logits
        .argmax_rows()
        .into_iter()
        .map(|i| if i < vocab.len() { vocab.token(i).to_string() } else { "_".to_string() })
        .collect()
}

/// Loss terms of one instance. A term is absent when the instance carries
/// no labels for that task, or the auxiliary task is disabled.
#[derive(Clone, Copy, Debug, Default)]
pub struct TaskLosses {
    pub main: Option<Var>,
    pub aux: Option<Var>,
}

/// Common surface the training loop drives.
pub trait MultiTaskModel {
    type Instance: Clone;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn system(&self) -> System;

    /// Builds the instance's loss terms on `tape`.
    fn instance_losses(&self, tape: &mut Tape, instance: &Self::Instance, ctx: &mut Ctx) -> Result<TaskLosses>;

    /// Parameters touched only by the auxiliary path (its private layers
    /// and output head).
    fn aux_exclusive_params(&self) -> Vec<crate::ParamId>;

    /// Parameters of fully shared hidden layers.
    fn shared_params(&self) -> Vec<crate::ParamId>;

    /// Parameter count of the output heads and scorers.
    fn head_param_count(&self) -> usize;

    fn structure(&self) -> crate::sharing::StructureReport;
}

/// Finite-difference check of `model`'s full loss (`main + λ·aux`) on one
/// instance, in evaluation mode (no dropout). Samples at most `per_param`
/// coordinates of each parameter tensor.
pub fn check_model_gradients<M: MultiTaskModel>(
    model: &mut M,
    instance: &M::Instance,
    lambda: f64,
    epsilon: f64,
    per_param: usize,
    seed: u64,
) -> Result<crate::autodiff::GradCheckReport> {
    let mut params = std::mem::take(model.params_mut());
    let mut loss = |p: &mut ParamStore, backward: bool| -> Result<f64> {
        std::mem::swap(model.params_mut(), p);
        let r = (|| {
            let mut tape = Tape::new();
            let l = crate::training::batch_loss(&*model, &mut tape, &[instance], lambda, &mut Ctx::eval())?;
            let total = l
                .total
                .ok_or_else(|| Error::Invalid("instance has no weighted loss terms".into()))?;
            let v = tape.value(total).item();
            if backward {
                tape.backward(total, model.params_mut())?;
            }
            Ok(v)
        })();
        std::mem::swap(model.params_mut(), p);
        r
    };
    let report = crate::autodiff::check_param_gradients(&mut params, &mut loss, epsilon, per_param, seed);
    *model.params_mut() = params;
    report
}
