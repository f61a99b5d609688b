//! Attention-based sentence-pair inference (encode, soft-align, enhance,
//! compose, pool, classify) with semantic tagging at the encoding level.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{decode_tags, gold_ids, ModelDims, MultiTaskModel, System, TaskLosses, Vocabs};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::{NliInstance, NliLabel, Sentence};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, DType};
use crate::nn::{Activation, AdamState, BiLstm, Ctx, Dense, Embedding, InitScheme};
use crate::sharing::{build_topology, LayerSpec, SharingTopology, StructureReport, TaskId, TaskStates, TopologySpec};

#[derive(Clone, Debug)]
pub struct NliModel {
    pub system: System,
    pub dims: ModelDims,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    pub embedding: Embedding,
    pub encoder: SharingTopology,
    pub semtag_head: Dense,
    pub enhance: Dense,
    pub compose: BiLstm,
    pub mlp: Dense,
    pub classifier: Dense,
}

/// Nodes of one pair's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct NliOutput {
    /// `[1 × 3]` in [`NliLabel::ALL`] order.
    pub logits: Var,
    pub semtag_premise: Var,
    pub semtag_hypothesis: Var,
    /// Raw alignment scores `e = A·Bᵀ`, `[n_p × n_h]`.
    pub attention: Var,
    /// Row softmax of `e`: premise tokens over hypothesis tokens.
    pub align_premise: Var,
    /// Row softmax of `eᵀ`: hypothesis tokens over premise tokens.
    pub align_hypothesis: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NliPrediction {
    pub label: NliLabel,
    pub probs: [f64; 3],
    pub premise_semtags: Vec<String>,
    pub hypothesis_semtags: Vec<String>,
}

/// Settings for semtag-only pretraining of the encoder.
#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 16,
            dropout: 0.0,
            clip_norm: Some(5.0),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: u64,
}

impl NliModel {
    pub fn new(system: System, dims: ModelDims, vocabs: Vocabs, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let init = InitScheme {
            orthogonal_recurrent: dims.orthogonal_init,
        };
        let (e, h, u) = (dims.embed_dim, dims.hidden_dim, dims.lstm_units());
        let spec = match system {
            System::St | System::Fsn => TopologySpec::fsn(&[LayerSpec::bilstm(e, u)]),
            // the shared lower layer predicts semtags (through a private
            // projection) and feeds the main encoder
            System::Psn => TopologySpec::psn(
                &[LayerSpec::bilstm(e, u)],
                &[LayerSpec::bilstm(h, u)],
                &[LayerSpec::sigmoid_dense(h, h)],
            ),
            System::Lws => TopologySpec::lws(&[LayerSpec::bilstm(e, u)], Some(dims.split()?), &[], &[]),
        };
        let embedding = Embedding::new(&mut params, "nli.embed", vocabs.words.len(), e, &mut rng);
        let encoder = build_topology(&mut params, "nli.enc", &spec, init, &mut rng)?;
        let enc = encoder.output_dim(TaskId::Main);
        let semtag_head = Dense::new(
            &mut params,
            "nli.semtag",
            encoder.output_dim(TaskId::Aux),
            vocabs.semtags.len().max(1),
            Activation::Linear,
            &mut rng,
        );
        let enhance = Dense::new(&mut params, "nli.enhance", 4 * enc, h, Activation::Relu, &mut rng);
        let compose = BiLstm::new(&mut params, "nli.compose", h, u, init, &mut rng);
        let mlp = Dense::new(&mut params, "nli.mlp", 4 * h, dims.mlp_dim, Activation::Tanh, &mut rng);
        let classifier = Dense::new(&mut params, "nli.out", dims.mlp_dim, 3, Activation::Linear, &mut rng);
        Ok(NliModel {
            system,
            dims,
            vocabs,
            params,
            embedding,
            encoder,
            semtag_head,
            enhance,
            compose,
            mlp,
            classifier,
        })
    }

    fn encode(&self, tape: &mut Tape, s: &Sentence, ctx: &mut Ctx) -> Result<TaskStates> {
        if s.is_empty() {
            return Err(Error::Invalid(format!("sentence {:?} is empty", s.id)));
        }
        let ids = self.vocabs.word_ids(&s.tokens);
        let x = self.embedding.lookup(tape, &self.params, &ids)?;
        self.encoder.forward(tape, &self.params, x, ctx)
    }

    /// `[a; ã; a−ã; a⊙ã]` projected, composed and pooled to `[avg; max]`.
    fn compose_side(&self, tape: &mut Tape, a: Var, aligned: Var, ctx: &mut Ctx) -> Result<Var> {
        let diff = tape.sub(a, aligned)?;
        let prod = tape.mul(a, aligned)?;
        let m = tape.concat(&[a, aligned, diff, prod], 1)?;
        let m = ctx.dropout(tape, m)?;
        let p = self.enhance.forward(tape, &self.params, m)?;
        let v = self.compose.forward(tape, &self.params, p, ctx)?;
        let avg = tape.mean_axis(v, 0)?;
        let max = tape.max_axis(v, 0)?;
        tape.concat(&[avg, max], 0)
    }

    pub fn nli_forward(&self, tape: &mut Tape, premise: &Sentence, hypothesis: &Sentence, ctx: &mut Ctx) -> Result<NliOutput> {
        let sp = self.encode(tape, premise, ctx)?;
        let sh = self.encode(tape, hypothesis, ctx)?;
        let semtag_premise = self.semtag_head.forward(tape, &self.params, sp.aux)?;
        let semtag_hypothesis = self.semtag_head.forward(tape, &self.params, sh.aux)?;

        let (a, b) = (sp.main, sh.main);
        let bt = tape.transpose(b)?;
        let e = tape.matmul(a, bt)?;
        let et = tape.transpose(e)?;
        let align_premise = tape.softmax_rows(e)?;
        let align_hypothesis = tape.softmax_rows(et)?;
        let a_tilde = tape.matmul(align_premise, b)?;
        let b_tilde = tape.matmul(align_hypothesis, a)?;
        let va = self.compose_side(tape, a, a_tilde, ctx)?;
        let vb = self.compose_side(tape, b, b_tilde, ctx)?;
        let v = tape.concat(&[va, vb], 0)?;
        let width = tape.shape(v)[0];
        let v = tape.reshape(v, &[1, width])?;
        let v = ctx.dropout(tape, v)?;
        let hidden = self.mlp.forward(tape, &self.params, v)?;
        let logits = self.classifier.forward(tape, &self.params, hidden)?;
        Ok(NliOutput {
            logits,
            semtag_premise,
            semtag_hypothesis,
            attention: e,
            align_premise,
            align_hypothesis,
        })
    }

    pub fn predict(&self, inst: &NliInstance) -> Result<NliPrediction> {
        let mut tape = Tape::new();
        let out = self.nli_forward(&mut tape, &inst.premise, &inst.hypothesis, &mut Ctx::eval())?;
        let logits = tape.value(out.logits).data();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let probs = [exp[0] / z, exp[1] / z, exp[2] / z];
        let label = NliLabel::from_index(crate::tensor::argmax(&probs)).expect("three classes");
        Ok(NliPrediction {
            label,
            probs,
            premise_semtags: decode_tags(&self.vocabs.semtags, tape.value(out.semtag_premise)),
            hypothesis_semtags: decode_tags(&self.vocabs.semtags, tape.value(out.semtag_hypothesis)),
        })
    }

    fn semtag_loss(&self, tape: &mut Tape, s: &Sentence, ctx: &mut Ctx) -> Result<Option<Var>> {
        let Some(tags) = &s.semtags else {
            return Ok(None);
        };
        let (gold, mask) = gold_ids(&self.vocabs.semtags, tags);
        if !mask.iter().any(|&m| m) {
            return Ok(None);
        }
        let st = self.encode(tape, s, ctx)?;
        let logits = self.semtag_head.forward(tape, &self.params, st.aux)?;
        Ok(Some(tape.softmax_cross_entropy(logits, &gold, &mask)?))
    }

    /// Mean semtag loss over `corpus` without dropout.
    pub fn semtag_corpus_loss(&self, corpus: &[Sentence]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in corpus {
            let mut tape = Tape::new();
            if let Some(l) = self.semtag_loss(&mut tape, s, &mut Ctx::eval())? {
                total += tape.value(l).item();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Invalid("semtag corpus has no tagged sentences".into()));
        }
        Ok(total / count as f64)
    }

    /// Trains the encoder's semtag path alone on `corpus`, optionally
    /// saving the resulting parameters to `checkpoint_path`.
    pub fn pretrain_aux_encoder(
        &mut self,
        corpus: &[Sentence],
        config: &PretrainConfig,
        checkpoint_path: Option<&Path>,
    ) -> Result<PretrainReport> {
        if corpus.is_empty() {
            return Err(Error::Invalid("pretraining needs a non-empty semtag corpus".into()));
        }
        if config.batch_size == 0 || config.epochs == 0 {
            return Err(Error::Config("pretraining needs positive epochs and batch size".into()));
        }
        let initial_loss = self.semtag_corpus_loss(corpus)?;
        let mut adam = AdamState::new(&self.params, config.learning_rate);
        let mut ctx = Ctx::train(config.dropout, 0.0, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let mut tape = Tape::new();
                let mut terms = Vec::new();
                for &i in batch {
                    if let Some(l) = self.semtag_loss(&mut tape, &corpus[i], &mut ctx)? {
                        terms.push(l);
                    }
                }
                let Some((&first, rest)) = terms.split_first() else {
                    continue;
                };
                let mut loss = first;
                for &t in rest {
                    loss = tape.add(loss, t)?;
                }
                let loss = tape.scale(loss, 1.0 / terms.len() as f64)?;
                self.params.zero_grad();
                tape.backward(loss, &mut self.params)?;
                if let Some(c) = config.clip_norm {
                    self.params.clip_grad_norm(c);
                }
                adam.step(&mut self.params);
            }
        }
        if let Some(path) = checkpoint_path {
            checkpoint::save(&self.params, path, DType::F64)?;
        }
        Ok(PretrainReport {
            initial_loss,
            final_loss: self.semtag_corpus_loss(corpus)?,
            steps: adam.steps(),
        })
    }

    /// Loads pretrained parameters saved by [`NliModel::pretrain_aux_encoder`].
    pub fn warm_start(&mut self, checkpoint_path: &Path) -> Result<()> {
        checkpoint::restore(&mut self.params, checkpoint_path)
    }
}

impl MultiTaskModel for NliModel {
    type Instance = NliInstance;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn system(&self) -> System {
        self.system
    }

    fn instance_losses(&self, tape: &mut Tape, inst: &NliInstance, ctx: &mut Ctx) -> Result<TaskLosses> {
        let out = self.nli_forward(tape, &inst.premise, &inst.hypothesis, ctx)?;
        let mut losses = TaskLosses {
            main: Some(tape.softmax_cross_entropy(out.logits, &[inst.label.index()], &[true])?),
            aux: None,
        };
        if !self.system.uses_aux() {
            return Ok(losses);
        }
        // premise and hypothesis are tagged independently
        let mut logits = Vec::new();
        let (mut gold, mut mask) = (Vec::new(), Vec::new());
        for (s, l) in [(&inst.premise, out.semtag_premise), (&inst.hypothesis, out.semtag_hypothesis)] {
            if let Some(tags) = &s.semtags {
                let (g, m) = gold_ids(&self.vocabs.semtags, tags);
                logits.push(l);
                gold.extend(g);
                mask.extend(m);
            }
        }
        if mask.iter().any(|&m| m) {
            let all = tape.concat(&logits, 0)?;
            losses.aux = Some(tape.softmax_cross_entropy(all, &gold, &mask)?);
        }
        Ok(losses)
    }

    fn aux_exclusive_params(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.private_param_ids(TaskId::Aux);
        ids.extend(self.semtag_head.param_ids());
        ids
    }

    fn shared_params(&self) -> Vec<ParamId> {
        self.encoder.shared_param_ids()
    }

    fn head_param_count(&self) -> usize {
        let mut ids = self.compose.param_ids();
        for d in [&self.semtag_head, &self.enhance, &self.mlp, &self.classifier] {
            ids.extend(d.param_ids());
        }
        ids.into_iter().map(|id| self.params.numel(id)).sum()
    }

    fn structure(&self) -> StructureReport {
        self.encoder.report(&self.params, self.head_param_count())
    }
}
