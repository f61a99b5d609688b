//! One-layer bi-LSTM tagger predicting UPOS (main) and semantic tags (aux).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{decode_tags, gold_ids, ModelDims, MultiTaskModel, System, TaskLosses, Vocabs};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::nn::{Activation, Ctx, Dense, Embedding, InitScheme};
use crate::sharing::{build_topology, LayerSpec, SharingTopology, StructureReport, TaskId, TopologySpec};

#[derive(Clone, Debug)]
pub struct TaggerModel {
    pub system: System,
    pub dims: ModelDims,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    pub embedding: Embedding,
    pub topology: SharingTopology,
    pub upos_head: Dense,
    pub semtag_head: Dense,
    /// Optimizer steps taken so far; zero means untrained.
    pub trained_steps: u64,
}

/// Logits of both heads, `[n × |upos|]` and `[n × |semtags|]`.
#[derive(Clone, Copy, Debug)]
pub struct TagOutput {
    pub upos: Var,
    pub semtag: Var,
}

impl TaggerModel {
    pub fn new(system: System, dims: ModelDims, vocabs: Vocabs, seed: u64) -> Result<Self> {
        dims.validate()?;
        if vocabs.upos.is_empty() && vocabs.semtags.is_empty() {
            return Err(Error::Config("tagger needs at least one tag inventory".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let init = InitScheme {
            orthogonal_recurrent: dims.orthogonal_init,
        };
        let (e, h, u) = (dims.embed_dim, dims.hidden_dim, dims.lstm_units());
        let embedding = Embedding::new(&mut params, "tagger.embed", vocabs.words.len(), e, &mut rng);
        let spec = match system {
            System::St | System::Fsn => TopologySpec::fsn(&[LayerSpec::bilstm(e, u)]),
            System::Psn => TopologySpec::psn(
                &[LayerSpec::bilstm(e, u)],
                &[LayerSpec::sigmoid_dense(h, h)],
                &[LayerSpec::sigmoid_dense(h, h)],
            ),
            System::Lws => TopologySpec::lws(&[LayerSpec::bilstm(e, u)], Some(dims.split()?), &[], &[]),
        };
        let topology = build_topology(&mut params, "tagger.enc", &spec, init, &mut rng)?;
        let upos_head = Dense::new(
            &mut params,
            "tagger.upos",
            topology.output_dim(TaskId::Main),
            vocabs.upos.len().max(1),
            Activation::Linear,
            &mut rng,
        );
        let semtag_head = Dense::new(
            &mut params,
            "tagger.semtag",
            topology.output_dim(TaskId::Aux),
            vocabs.semtags.len().max(1),
            Activation::Linear,
            &mut rng,
        );
        Ok(TaggerModel {
            system,
            dims,
            vocabs,
            params,
            embedding,
            topology,
            upos_head,
            semtag_head,
            trained_steps: 0,
        })
    }

    /// Per-token logits for both tasks. Both heads always run; callers mask
    /// whichever task has no labels.
    pub fn tag_forward(&self, tape: &mut Tape, sentence: &Sentence, ctx: &mut Ctx) -> Result<TagOutput> {
        if sentence.is_empty() {
            return Err(Error::Invalid(format!("sentence {:?} is empty", sentence.id)));
        }
        let ids = self.vocabs.word_ids(&sentence.tokens);
        let x = self.embedding.lookup(tape, &self.params, &ids)?;
        let s = self.topology.forward(tape, &self.params, x, ctx)?;
        Ok(TagOutput {
            upos: self.upos_head.forward(tape, &self.params, s.main)?,
            semtag: self.semtag_head.forward(tape, &self.params, s.aux)?,
        })
    }

    /// Argmax UPOS and semantic tags.
    pub fn predict(&self, sentence: &Sentence) -> Result<(Vec<String>, Vec<String>)> {
        let mut tape = Tape::new();
        let out = self.tag_forward(&mut tape, sentence, &mut Ctx::eval())?;
        Ok((
            decode_tags(&self.vocabs.upos, tape.value(out.upos)),
            decode_tags(&self.vocabs.semtags, tape.value(out.semtag)),
        ))
    }

    /// Fills the semtag layer of every sentence from this model's
    /// predictions; other layers are left as they are.
    pub fn project_tags(&self, corpus: &[Sentence]) -> Result<Vec<Sentence>> {
        if self.trained_steps == 0 {
            return Err(Error::Invalid("cannot project tags with an untrained tagger".into()));
        }
        corpus
            .iter()
            .map(|s| {
                let (_, semtags) = self.predict(s)?;
                let mut out = s.clone();
                out.semtags = Some(semtags);
                Ok(out)
            })
            .collect()
    }
}

/// Free-function form of [`TaggerModel::project_tags`].
pub fn project_tags(model: &TaggerModel, corpus: &[Sentence]) -> Result<Vec<Sentence>> {
    model.project_tags(corpus)
}

impl MultiTaskModel for TaggerModel {
    type Instance = Sentence;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn system(&self) -> System {
        self.system
    }

    fn instance_losses(&self, tape: &mut Tape, s: &Sentence, ctx: &mut Ctx) -> Result<TaskLosses> {
        let out = self.tag_forward(tape, s, ctx)?;
        let mut losses = TaskLosses::default();
        if let Some(upos) = &s.upos {
            let (gold, mask) = gold_ids(&self.vocabs.upos, upos);
            if mask.iter().any(|&m| m) {
                losses.main = Some(tape.softmax_cross_entropy(out.upos, &gold, &mask)?);
            }
        }
        if self.system.uses_aux() {
            if let Some(tags) = &s.semtags {
                let (gold, mask) = gold_ids(&self.vocabs.semtags, tags);
                if mask.iter().any(|&m| m) {
                    losses.aux = Some(tape.softmax_cross_entropy(out.semtag, &gold, &mask)?);
                }
            }
        }
        Ok(losses)
    }

    fn aux_exclusive_params(&self) -> Vec<ParamId> {
        let mut ids = self.topology.private_param_ids(TaskId::Aux);
        ids.extend(self.semtag_head.param_ids());
        ids
    }

    fn shared_params(&self) -> Vec<ParamId> {
        self.topology.shared_param_ids()
    }

    fn head_param_count(&self) -> usize {
        [&self.upos_head, &self.semtag_head]
            .iter()
            .flat_map(|d| d.param_ids())
            .map(|id| self.params.numel(id))
            .sum()
    }

    fn structure(&self) -> StructureReport {
        self.topology.report(&self.params, self.head_param_count())
    }
}
