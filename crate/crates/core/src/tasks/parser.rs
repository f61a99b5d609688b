//! Graph-based dependency parser: a four-layer bi-LSTM stack with a UPOS
//! head after the first layer whose softmax feeds the second layer, four
//! ReLU projections, a biaffine arc scorer and an affine+biaffine label
//! scorer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mst::mst_decode;
use super::{decode_tags, gold_ids, ModelDims, MultiTaskModel, System, TaskLosses, Vocabs};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::nn::{init, Activation, Ctx, Dense, Embedding, InitScheme};
use crate::sharing::{
    build_topology, LayerSpec, SharingTopology, StructureReport, TaskId, TaskStates, TopologyKind, TopologySpec,
};


/// Head index per token (0 = ROOT) and a relation label per token.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependencyTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

/// `score[i][j] = h_dep[i]·U·h_head[j] + h_head[j]·u` for `h_dep: [n × d]`,
/// `h_head: [(n+1) × d]` (ROOT first), `u_mat: [d × d]`, `u_vec: [d × 1]`.
pub fn biaffine_arc_scores(tape: &mut Tape, h_dep: Var, h_head: Var, u_mat: Var, u_vec: Var) -> Result<Var> {
    let du = tape.matmul(h_dep, u_mat)?;
    let ht = tape.transpose(h_head)?;
    let bilinear = tape.matmul(du, ht)?;
    let lin = tape.matmul(h_head, u_vec)?;
    let lin_row = tape.transpose(lin)?;
    tape.add_row(bilinear, lin_row)
}

#[derive(Clone, Debug)]
pub struct ParserModel {
    pub system: System,
    pub dims: ModelDims,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    pub embedding: Embedding,
    pub topology: SharingTopology,
    pub upos_head: Dense,
    pub semtag_head: Dense,
    pub root: ParamId,
    pub arc_dep: Dense,
    pub arc_head: Dense,
    pub label_dep: Dense,
    pub label_head: Dense,
    pub arc_u: ParamId,
    pub arc_v: ParamId,
    /// `[label_dim × labels·label_dim]`
    pub label_u: ParamId,
    pub label_affine: Dense,
}

/// Nodes of one parser forward pass.
#[derive(Clone, Debug)]
pub struct ParseOutput {
    pub upos: Var,
    pub semtag: Var,
    /// `[n × (n+1)]`
    pub arcs: Var,
    /// `[n × labels]`, scored for the arcs in `label_heads`.
    pub labels: Var,
    pub label_heads: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsePrediction {
    pub upos: Vec<String>,
    pub semtags: Vec<String>,
    pub tree: DependencyTree,
}

impl ParserModel {
    pub fn new(system: System, dims: ModelDims, vocabs: Vocabs, seed: u64) -> Result<Self> {
        dims.validate()?;
        if vocabs.deprels.is_empty() {
            return Err(Error::Config("parser needs a dependency-label inventory".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let init = InitScheme {
            orthogonal_recurrent: dims.orthogonal_init,
        };
        let (e, h, u) = (dims.embed_dim, dims.hidden_dim, dims.lstm_units());
        let n_upos = vocabs.upos.len().max(1);
        let n_sem = vocabs.semtags.len().max(1);
        let n_lab = vocabs.deprels.len();
        let l1 = LayerSpec::bilstm(e, u);
        let l2 = LayerSpec::bilstm(e + h + n_upos, u);
        let upper = LayerSpec::bilstm(h, u);
        let spec = match system {
            System::St | System::Fsn => TopologySpec::fsn(&[l1, l2, upper, upper]),
            System::Psn => TopologySpec::psn(&[l1, l2], &[upper, upper], &[LayerSpec::sigmoid_dense(h, h)]),
            System::Lws => TopologySpec::lws(&[l1, l2], Some(dims.split()?), &[upper, upper], &[]),
        };
        let embedding = Embedding::new(&mut params, "parser.embed", vocabs.words.len(), e, &mut rng);
        let topology = build_topology(&mut params, "parser.enc", &spec, init, &mut rng)?;
        let upos_head = Dense::new(&mut params, "parser.upos", h, n_upos, Activation::Linear, &mut rng);
        let semtag_head = Dense::new(
            &mut params,
            "parser.semtag",
            topology.output_dim(TaskId::Aux),
            n_sem,
            Activation::Linear,
            &mut rng,
        );
        let top = topology.output_dim(TaskId::Main);
        let root = params.add("parser.root", init::normal(&[1, top], 0.1, &mut rng));
        let (a, l) = (dims.arc_dim, dims.label_dim);
        let mut proj = |name: &str, out: usize| Dense::new(&mut params, name, top, out, Activation::Relu, &mut rng);
        let arc_dep = proj("parser.arc_dep", a);
        let arc_head = proj("parser.arc_head", a);
        let label_dep = proj("parser.label_dep", l);
        let label_head = proj("parser.label_head", l);
        let arc_u = params.add("parser.arc_u", init::glorot_uniform(a, a, &mut rng));
        let arc_v = params.add("parser.arc_v", init::glorot_uniform(a, 1, &mut rng));
        let label_u = params.add("parser.label_u", init::glorot_uniform(l, n_lab * l, &mut rng));
        let label_affine = Dense::new(&mut params, "parser.label_affine", 2 * l, n_lab, Activation::Linear, &mut rng);
        Ok(ParserModel {
            system,
            dims,
            vocabs,
            params,
            embedding,
            topology,
            upos_head,
            semtag_head,
            root,
            arc_dep,
            arc_head,
            label_dep,
            label_head,
            arc_u,
            arc_v,
            label_u,
            label_affine,
        })
    }

    /// Full forward pass. Labels are scored on the gold arcs when
    /// `gold_arcs` is set and the sentence has heads, otherwise on the
    /// MST-decoded arcs.
    pub fn parse_forward(&self, tape: &mut Tape, s: &Sentence, ctx: &mut Ctx, gold_arcs: bool) -> Result<ParseOutput> {
        if s.is_empty() {
            return Err(Error::Invalid(format!("sentence {:?} is empty", s.id)));
        }
        let p = &self.params;
        let ids = self.vocabs.word_ids(&s.tokens);
        let x = self.embedding.lookup(tape, p, &ids)?;
        let gated = self.topology.kind == TopologyKind::Lws;
        let mut upos = None;
        let states = self.topology.forward_with(tape, p, x, ctx, |i, tape, st| {
            if i != 0 {
                return Ok(st);
            }
            let logits = self.upos_head.forward(tape, p, st.main)?;
            upos = Some(logits);
            let probs = tape.softmax_rows(logits)?;
            let main = tape.concat(&[x, st.main, probs], 1)?;
            let aux = if gated { tape.concat(&[x, st.aux, probs], 1)? } else { main };
            Ok(TaskStates { main, aux })
        })?;
        let last = *states.last().expect("non-empty topology");
        let upos = upos.expect("level 0 always runs");
        let semtag = self.semtag_head.forward(tape, p, last.aux)?;

        let top = ctx.dropout(tape, last.main)?;
        let root = tape.param(p, self.root);
        let with_root = tape.concat(&[root, top], 0)?;
        let hd = self.arc_dep.forward(tape, p, top)?;
        let hh = self.arc_head.forward(tape, p, with_root)?;
        let u = tape.param(p, self.arc_u);
        let v = tape.param(p, self.arc_v);
        let arcs = biaffine_arc_scores(tape, hd, hh, u, v)?;

        let label_heads = match (&s.heads, gold_arcs) {
            (Some(h), true) => h.clone(),
            _ => mst_decode(tape.value(arcs))?,
        };
        let ld = self.label_dep.forward(tape, p, top)?;
        let lh_all = self.label_head.forward(tape, p, with_root)?;
        let lh = tape.gather_rows(lh_all, &label_heads, None)?;
        let lu = tape.param(p, self.label_u);
        let dl = tape.matmul(ld, lu)?;
        let biaffine = tape.block_row_dot(dl, lh)?;
        let pair = tape.concat(&[ld, lh], 1)?;
        let affine = self.label_affine.forward(tape, p, pair)?;
        let labels = tape.add(biaffine, affine)?;
        Ok(ParseOutput {
            upos,
            semtag,
            arcs,
            labels,
            label_heads,
        })
    }

    pub fn predict(&self, s: &Sentence) -> Result<ParsePrediction> {
        let mut tape = Tape::new();
        let out = self.parse_forward(&mut tape, s, &mut Ctx::eval(), false)?;
        let labels = decode_tags(&self.vocabs.deprels, tape.value(out.labels));
        Ok(ParsePrediction {
            upos: decode_tags(&self.vocabs.upos, tape.value(out.upos)),
            semtags: decode_tags(&self.vocabs.semtags, tape.value(out.semtag)),
            tree: DependencyTree {
                heads: out.label_heads,
                labels,
            },
        })
    }

    /// Copy of `s` with predicted UPOS, heads and relations (and semantic
    /// tags unless the auxiliary task is off).
    pub fn annotate(&self, s: &Sentence) -> Result<Sentence> {
        let pred = self.predict(s)?;
        let mut out = s.clone();
        out.upos = Some(pred.upos);
        out.heads = Some(pred.tree.heads);
        out.deprels = Some(pred.tree.labels);
        if self.system.uses_aux() {
            out.semtags = Some(pred.semtags);
        }
        Ok(out)
    }
}

impl MultiTaskModel for ParserModel {
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
        let out = self.parse_forward(tape, s, ctx, true)?;
        let mut terms = Vec::new();
        if let Some(upos) = &s.upos {
            let (gold, mask) = gold_ids(&self.vocabs.upos, upos);
            if mask.iter().any(|&m| m) {
                terms.push(tape.softmax_cross_entropy(out.upos, &gold, &mask)?);
            }
        }
        if let Some(heads) = &s.heads {
            let all = vec![true; heads.len()];
            terms.push(tape.softmax_cross_entropy(out.arcs, heads, &all)?);
            if let Some(rels) = &s.deprels {
                let (gold, mask) = gold_ids(&self.vocabs.deprels, rels);
                if mask.iter().any(|&m| m) {
                    terms.push(tape.softmax_cross_entropy(out.labels, &gold, &mask)?);
                }
            }
        }
        let mut losses = TaskLosses::default();
        if let Some((&first, rest)) = terms.split_first() {
            let mut total = first;
            for &t in rest {
                total = tape.add(total, t)?;
            }
            losses.main = Some(total);
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
        let mut ids = vec![self.root, self.arc_u, self.arc_v, self.label_u];
        for d in [
            &self.upos_head,
            &self.semtag_head,
            &self.arc_dep,
            &self.arc_head,
            &self.label_dep,
            &self.label_head,
            &self.label_affine,
        ] {
            ids.extend(d.param_ids());
        }
        ids.into_iter().map(|id| self.params.numel(id)).sum()
    }

    fn structure(&self) -> StructureReport {
        self.topology.report(&self.params, self.head_param_count())
    }
}

