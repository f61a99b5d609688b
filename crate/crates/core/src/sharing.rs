//! Parameter-sharing topologies for a main task and an auxiliary task.
//!
//! A topology is a stack of levels. A *shared* level is one layer whose
//! parameters serve both tasks; a *private* level gives each task its own
//! layer (or none); a *split* level gives each task its own layer whose
//! output is divided into a shared and a private subspace, with the two
//! shared subspaces modulating each other through sigmoid gates:
//!
//! ```text
//! h_main_shared' = h_main_shared ⊙ σ(h_aux_shared · W_a2m)
//! h_aux_shared'  = h_aux_shared  ⊙ σ(h_main_shared · W_m2a)
//! ```
//!
//! Both updates read the pre-gate values. The three kinds:
//!
//! * FSN: shared levels only; tasks differ only in their output heads.
//! * PSN: shared levels followed by at least one private layer per task.
//! * LWS: split levels, optionally followed by task-private levels.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, BiLstm, Ctx, Dense, InitScheme};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Fsn,
    Psn,
    Lws,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Fsn => "fsn",
            TopologyKind::Psn => "psn",
            TopologyKind::Lws => "lws",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fsn" => Ok(TopologyKind::Fsn),
            "psn" => Ok(TopologyKind::Psn),
            "lws" => Ok(TopologyKind::Lws),
            other => Err(Error::Config(format!("unknown topology kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    Main,
    Aux,
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(TaskId::Main),
            "aux" => Ok(TaskId::Aux),
            other => Err(Error::Invalid(format!("unknown task id {other:?}"))),
        }
    }
}

/// Width of the shared and private parts of a split layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSplit {
    pub shared_dim: usize,
    pub private_dim: usize,
}

impl SubspaceSplit {
    /// Even split of `width` (the shared part gets the extra unit).
    pub fn half(width: usize) -> Self {
        let shared_dim = width.div_ceil(2);
        SubspaceSplit {
            shared_dim,
            private_dim: width - shared_dim,
        }
    }

    pub fn width(&self) -> usize {
        self.shared_dim + self.private_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    BiLstm { input_dim: usize, hidden_dim: usize },
    Dense { input_dim: usize, output_dim: usize, activation: Activation },
}

impl LayerSpec {
    pub fn bilstm(input_dim: usize, hidden_dim: usize) -> Self {
        LayerSpec::BiLstm {
            input_dim,
            hidden_dim,
        }
    }

    /// σ-activated dense layer, the private layer form `σ(h·W)`.
    pub fn sigmoid_dense(input_dim: usize, output_dim: usize) -> Self {
        LayerSpec::Dense {
            input_dim,
            output_dim,
            activation: Activation::Sigmoid,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            LayerSpec::BiLstm { input_dim, .. } | LayerSpec::Dense { input_dim, .. } => input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            LayerSpec::BiLstm { hidden_dim, .. } => 2 * hidden_dim,
            LayerSpec::Dense { output_dim, .. } => output_dim,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    BiLstm(BiLstm),
    Dense(Dense),
}

impl Layer {
    fn build(spec: LayerSpec, params: &mut ParamStore, name: &str, init: InitScheme, rng: &mut impl Rng) -> Self {
        match spec {
            LayerSpec::BiLstm {
                input_dim,
                hidden_dim,
            } => Layer::BiLstm(BiLstm::new(params, name, input_dim, hidden_dim, init, rng)),
            LayerSpec::Dense {
                input_dim,
                output_dim,
                activation,
            } => Layer::Dense(Dense::new(params, name, input_dim, output_dim, activation, rng)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut Ctx) -> Result<Var> {
        let expected = self.input_dim();
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != expected {
            return Err(Error::shape("layer", tape.shape(x), &[0, expected]));
        }
        match self {
            Layer::BiLstm(l) => l.forward(tape, params, x, ctx),
            Layer::Dense(d) => d.forward(tape, params, x),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Layer::BiLstm(l) => l.input_dim(),
            Layer::Dense(d) => d.in_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Layer::BiLstm(l) => l.output_dim(),
            Layer::Dense(d) => d.out_dim,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Layer::BiLstm(l) => l.param_ids(),
            Layer::Dense(d) => d.param_ids(),
        }
    }
}

/// Gating matrices between the shared subspaces of a split level.
#[derive(Clone, Debug)]
pub struct GatePair {
    /// `[aux_shared × main_shared]`
    pub a2m: ParamId,
    /// `[main_shared × aux_shared]`
    pub m2a: ParamId,
    pub main_split: SubspaceSplit,
    pub aux_split: SubspaceSplit,
}

#[derive(Clone, Debug)]
pub enum Level {
    Shared(Layer),
    Private { main: Option<Layer>, aux: Option<Layer> },
    Split { main: Layer, aux: Layer, gate: GatePair },
}

#[derive(Clone, Copy, Debug)]
pub enum LevelSpec {
    Shared(LayerSpec),
    Private {
        main: Option<LayerSpec>,
        aux: Option<LayerSpec>,
    },
    Split {
        main: LayerSpec,
        aux: LayerSpec,
        main_split: SubspaceSplit,
        aux_split: SubspaceSplit,
    },
}

#[derive(Clone, Debug)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub levels: Vec<LevelSpec>,
}

impl TopologySpec {
    /// Every layer shared.
    pub fn fsn(layers: &[LayerSpec]) -> Self {
        TopologySpec {
            kind: TopologyKind::Fsn,
            levels: layers.iter().copied().map(LevelSpec::Shared).collect(),
        }
    }

    /// Shared layers, then per-task private stacks (padded so the longer
    /// stack determines the number of private levels).
    pub fn psn(shared: &[LayerSpec], main_private: &[LayerSpec], aux_private: &[LayerSpec]) -> Self {
        let mut levels: Vec<LevelSpec> = shared.iter().copied().map(LevelSpec::Shared).collect();
        levels.extend(private_levels(main_private, aux_private));
        TopologySpec {
            kind: TopologyKind::Psn,
            levels,
        }
    }

    /// Split layers (one per task, identical shapes) gated between tasks,
    /// then optional task-private stacks.
    pub fn lws(split_layers: &[LayerSpec], split: Option<SubspaceSplit>, main_private: &[LayerSpec], aux_private: &[LayerSpec]) -> Self {
        let mut levels: Vec<LevelSpec> = split_layers
            .iter()
            .map(|&l| {
                let s = split.unwrap_or_else(|| SubspaceSplit::half(l.output_dim()));
                LevelSpec::Split {
                    main: l,
                    aux: l,
                    main_split: s,
                    aux_split: s,
                }
            })
            .collect();
        levels.extend(private_levels(main_private, aux_private));
        TopologySpec {
            kind: TopologyKind::Lws,
            levels,
        }
    }
}

fn private_levels(main: &[LayerSpec], aux: &[LayerSpec]) -> Vec<LevelSpec> {
    (0..main.len().max(aux.len()))
        .map(|i| LevelSpec::Private {
            main: main.get(i).copied(),
            aux: aux.get(i).copied(),
        })
        .collect()
}

/// Hidden states of both tasks after some level. Under full sharing both
/// fields hold the same node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskStates {
    pub main: Var,
    pub aux: Var,
}

impl TaskStates {
    pub fn get(&self, task: TaskId) -> Var {
        match task {
            TaskId::Main => self.main,
            TaskId::Aux => self.aux,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SharingTopology {
    pub kind: TopologyKind,
    pub levels: Vec<Level>,
}

/// Parameter counts by ownership bucket.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub kind: String,
    pub shared: usize,
    pub private_main: usize,
    pub private_aux: usize,
    pub subspace_main: usize,
    pub subspace_aux: usize,
    pub gates: usize,
    pub heads: usize,
}

impl StructureReport {
    pub fn total(&self) -> usize {
        self.shared + self.private_main + self.private_aux + self.subspace_main + self.subspace_aux + self.gates + self.heads
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "kind={}\nshared={}\nprivate_main={}\nprivate_aux={}\nsubspace_main={}\nsubspace_aux={}\ngates={}\nheads={}\ntotal={}\n",
            self.kind,
            self.shared,
            self.private_main,
            self.private_aux,
            self.subspace_main,
            self.subspace_aux,
            self.gates,
            self.heads,
            self.total()
        )
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "topology {}", self.kind.to_uppercase())?;
        let rows = [
            ("shared hidden", self.shared),
            ("private hidden (main)", self.private_main),
            ("private hidden (aux)", self.private_aux),
            ("split layers (main)", self.subspace_main),
            ("split layers (aux)", self.subspace_aux),
            ("gates", self.gates),
            ("output heads", self.heads),
            ("total", self.total()),
        ];
        for (k, v) in rows {
            writeln!(f, "  {k:<24}{v:>10}")?;
        }
        Ok(())
    }
}

/// Allocates the parameters of a topology and validates its structure.
pub fn build_topology(
    params: &mut ParamStore,
    name: &str,
    spec: &TopologySpec,
    init: InitScheme,
    rng: &mut impl Rng,
) -> Result<SharingTopology> {
    validate(spec)?;
    let mut levels = Vec::with_capacity(spec.levels.len());
    for (i, level) in spec.levels.iter().enumerate() {
        let lname = format!("{name}.l{i}");
        levels.push(match *level {
            LevelSpec::Shared(l) => Level::Shared(Layer::build(l, params, &format!("{lname}.shared"), init, rng)),
            LevelSpec::Private { main, aux } => Level::Private {
                main: main.map(|l| Layer::build(l, params, &format!("{lname}.main"), init, rng)),
                aux: aux.map(|l| Layer::build(l, params, &format!("{lname}.aux"), init, rng)),
            },
            LevelSpec::Split {
                main,
                aux,
                main_split,
                aux_split,
            } => {
                let main = Layer::build(main, params, &format!("{lname}.main"), init, rng);
                let aux = Layer::build(aux, params, &format!("{lname}.aux"), init, rng);
                // zero gates: σ(0) = 0.5 everywhere at the start
                let a2m = params.add(
                    format!("{lname}.gate.a2m"),
                    Tensor::zeros(&[aux_split.shared_dim, main_split.shared_dim]),
                );
                let m2a = params.add(
                    format!("{lname}.gate.m2a"),
                    Tensor::zeros(&[main_split.shared_dim, aux_split.shared_dim]),
                );
                Level::Split {
                    main,
                    aux,
                    gate: GatePair {
                        a2m,
                        m2a,
                        main_split,
                        aux_split,
                    },
                }
            }
        });
    }
    Ok(SharingTopology {
        kind: spec.kind,
        levels,
    })
}

fn validate(spec: &TopologySpec) -> Result<()> {
    let cfg = |m: String| Err(Error::Config(m));
    if spec.levels.is_empty() {
        return cfg("topology needs at least one level".into());
    }
    for (i, level) in spec.levels.iter().enumerate() {
        if let LevelSpec::Split {
            main,
            aux,
            main_split,
            aux_split,
        } = level
        {
            for (task, l, s) in [("main", main, main_split), ("aux", aux, aux_split)] {
                if s.shared_dim == 0 || s.width() != l.output_dim() {
                    return cfg(format!(
                        "level {i}: {task} split {}+{} does not partition output width {}",
                        s.shared_dim,
                        s.private_dim,
                        l.output_dim()
                    ));
                }
            }
        }
    }
    let shared = spec.levels.iter().filter(|l| matches!(l, LevelSpec::Shared(_))).count();
    let split = spec.levels.iter().filter(|l| matches!(l, LevelSpec::Split { .. })).count();
    let (main_private, aux_private) = spec.levels.iter().fold((0, 0), |(m, a), l| match l {
        LevelSpec::Private { main, aux } => (m + main.is_some() as usize, a + aux.is_some() as usize),
        _ => (m, a),
    });
    match spec.kind {
        TopologyKind::Fsn if shared != spec.levels.len() => cfg("FSN topologies have no task-private or split layers".into()),
        TopologyKind::Psn if shared == 0 || split > 0 => cfg("PSN needs shared layers and no split layers".into()),
        TopologyKind::Psn if main_private == 0 || aux_private == 0 => {
            cfg("PSN needs at least one private hidden layer per task".into())
        }
        TopologyKind::Psn if spec.levels.iter().position(|l| !matches!(l, LevelSpec::Shared(_))) != Some(shared) => {
            cfg("PSN shared layers must precede private layers".into())
        }
        TopologyKind::Lws if split == 0 || shared > 0 => cfg("LWS needs split layers and no fully shared layers".into()),
        _ => Ok(()),
    }
}

impl SharingTopology {
    /// Runs level `i` on the given task inputs.
    pub fn forward_level(
        &self,
        i: usize,
        tape: &mut Tape,
        params: &ParamStore,
        input: TaskStates,
        ctx: &mut Ctx,
    ) -> Result<TaskStates> {
        match &self.levels[i] {
            Level::Shared(layer) => {
                let h = layer.forward(tape, params, input.main, ctx)?;
                Ok(TaskStates { main: h, aux: h })
            }
            Level::Private { main, aux } => {
                let m = match main {
                    Some(l) => l.forward(tape, params, input.main, ctx)?,
                    None => input.main,
                };
                let a = match aux {
                    Some(l) => l.forward(tape, params, input.aux, ctx)?,
                    None => input.aux,
                };
                Ok(TaskStates { main: m, aux: a })
            }
            Level::Split { main, aux, gate } => {
                let hm = main.forward(tape, params, input.main, ctx)?;
                let ha = aux.forward(tape, params, input.aux, ctx)?;
                let (ms, mp) = split_subspaces(tape, hm, gate.main_split)?;
                let (as_, ap) = split_subspaces(tape, ha, gate.aux_split)?;
                let w_a2m = tape.param(params, gate.a2m);
                let w_m2a = tape.param(params, gate.m2a);
                let (gm, ga) = lws_gate(tape, ms, as_, w_a2m, w_m2a)?;
                let m = join_subspaces(tape, gm, mp)?;
                let a = join_subspaces(tape, ga, ap)?;
                Ok(TaskStates { main: m, aux: a })
            }
        }
    }

    /// Runs all levels; `between(i, tape, states)` may rewrite the states
    /// emitted by level `i` before they feed level `i+1`.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        x: Var,
        ctx: &mut Ctx,
        mut between: impl FnMut(usize, &mut Tape, TaskStates) -> Result<TaskStates>,
    ) -> Result<Vec<TaskStates>> {
        let mut states = TaskStates { main: x, aux: x };
        let mut out = Vec::with_capacity(self.levels.len());
        for i in 0..self.levels.len() {
            states = self.forward_level(i, tape, params, states, ctx)?;
            out.push(states);
            states = between(i, tape, states)?;
        }
        Ok(out)
    }

    /// Final states of both tasks.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut Ctx) -> Result<TaskStates> {
        let states = self.forward_with(tape, params, x, ctx, |_, _, s| Ok(s))?;
        Ok(*states.last().expect("validated non-empty"))
    }

    pub fn input_dim(&self) -> usize {
        match &self.levels[0] {
            Level::Shared(l) | Level::Split { main: l, .. } => l.input_dim(),
            Level::Private { main, aux } => main.as_ref().or(aux.as_ref()).map(Layer::input_dim).unwrap_or(0),
        }
    }

    /// Output width for `task` after level `i`, given the input width.
    pub fn output_dim_at(&self, i: usize, task: TaskId, input_dim: usize) -> usize {
        let mut dim = input_dim;
        for level in &self.levels[..=i] {
            dim = match (level, task) {
                (Level::Shared(l), _) => l.output_dim(),
                (Level::Private { main, .. }, TaskId::Main) => main.as_ref().map_or(dim, Layer::output_dim),
                (Level::Private { aux, .. }, TaskId::Aux) => aux.as_ref().map_or(dim, Layer::output_dim),
                (Level::Split { main, .. }, TaskId::Main) => main.output_dim(),
                (Level::Split { aux, .. }, TaskId::Aux) => aux.output_dim(),
            };
        }
        dim
    }

    pub fn output_dim(&self, task: TaskId) -> usize {
        self.output_dim_at(self.levels.len() - 1, task, self.input_dim())
    }

    /// Parameters a task's forward path touches.
    pub fn task_param_ids(&self, task: TaskId) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for level in &self.levels {
            match (level, task) {
                (Level::Shared(l), _) => ids.extend(l.param_ids()),
                (Level::Private { main: Some(l), .. }, TaskId::Main)
                | (Level::Private { aux: Some(l), .. }, TaskId::Aux) => ids.extend(l.param_ids()),
                (Level::Private { .. }, _) => {}
                (Level::Split { main, aux, gate }, _) => {
                    ids.extend(main.param_ids());
                    ids.extend(aux.param_ids());
                    ids.extend([gate.a2m, gate.m2a]);
                }
            }
        }
        ids
    }

    /// Parameters used only by `task`: private layers, plus split layers
    /// for LWS.
    pub fn exclusive_param_ids(&self, task: TaskId) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for level in &self.levels {
            match (level, task) {
                (Level::Private { main: Some(l), .. }, TaskId::Main)
                | (Level::Private { aux: Some(l), .. }, TaskId::Aux)
                | (Level::Split { main: l, .. }, TaskId::Main)
                | (Level::Split { aux: l, .. }, TaskId::Aux) => ids.extend(l.param_ids()),
                _ => {}
            }
        }
        ids
    }

    /// Parameters of `task`'s private (ungated) layers. Unlike split
    /// layers, these cannot influence the other task's output.
    pub fn private_param_ids(&self, task: TaskId) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for level in &self.levels {
            match (level, task) {
                (Level::Private { main: Some(l), .. }, TaskId::Main) | (Level::Private { aux: Some(l), .. }, TaskId::Aux) => {
                    ids.extend(l.param_ids())
                }
                _ => {}
            }
        }
        ids
    }

    /// Parameters of fully shared levels.
    pub fn shared_param_ids(&self) -> Vec<ParamId> {
        self.levels
            .iter()
            .filter_map(|l| match l {
                Level::Shared(layer) => Some(layer.param_ids()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn gate_param_ids(&self) -> Vec<ParamId> {
        self.levels
            .iter()
            .filter_map(|l| match l {
                Level::Split { gate, .. } => Some([gate.a2m, gate.m2a]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn report(&self, params: &ParamStore, head_params: usize) -> StructureReport {
        let count = |ids: Vec<ParamId>| ids.into_iter().map(|id| params.numel(id)).sum::<usize>();
        let mut r = StructureReport {
            kind: self.kind.to_string(),
            heads: head_params,
            gates: count(self.gate_param_ids()),
            shared: count(self.shared_param_ids()),
            ..Default::default()
        };
        for level in &self.levels {
            match level {
                Level::Shared(_) => {}
                Level::Private { main, aux } => {
                    r.private_main += main.as_ref().map_or(0, |l| count(l.param_ids()));
                    r.private_aux += aux.as_ref().map_or(0, |l| count(l.param_ids()));
                }
                Level::Split { main, aux, .. } => {
                    r.subspace_main += count(main.param_ids());
                    r.subspace_aux += count(aux.param_ids());
                }
            }
        }
        r
    }
}

fn split_subspaces(tape: &mut Tape, h: Var, split: SubspaceSplit) -> Result<(Var, Var)> {
    let shared = tape.narrow(h, 1, 0, split.shared_dim)?;
    if split.private_dim == 0 {
        return Ok((shared, shared));
    }
    let private = tape.narrow(h, 1, split.shared_dim, split.private_dim)?;
    Ok((shared, private))
}

fn join_subspaces(tape: &mut Tape, shared: Var, private: Var) -> Result<Var> {
    if shared == private {
        // no private subspace
        return Ok(shared);
    }
    tape.concat(&[shared, private], 1)
}

/// Simultaneous bidirectional gating of two shared subspaces, from their
/// pre-gate values. `w_a2m: [aux × main]`, `w_m2a: [main × aux]`.
pub fn lws_gate(tape: &mut Tape, h_main_shared: Var, h_aux_shared: Var, w_a2m: Var, w_m2a: Var) -> Result<(Var, Var)> {
    let za = tape.matmul(h_aux_shared, w_a2m)?;
    let gate_main = tape.sigmoid(za)?;
    let zm = tape.matmul(h_main_shared, w_m2a)?;
    let gate_aux = tape.sigmoid(zm)?;
    let main = tape.mul(h_main_shared, gate_main)?;
    let aux = tape.mul(h_aux_shared, gate_aux)?;
    Ok((main, aux))
}

/// Forward pass of a fully shared topology; both tasks read the result.
pub fn fsn_forward(topology: &SharingTopology, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut Ctx) -> Result<Var> {
    if topology.kind != TopologyKind::Fsn {
        return Err(Error::Config(format!("fsn_forward on a {} topology", topology.kind)));
    }
    Ok(topology.forward(tape, params, x, ctx)?.main)
}

/// Forward pass of a partially shared topology along one task's path only.
pub fn psn_forward(
    topology: &SharingTopology,
    tape: &mut Tape,
    params: &ParamStore,
    x: Var,
    task: TaskId,
    ctx: &mut Ctx,
) -> Result<Var> {
    if topology.kind != TopologyKind::Psn {
        return Err(Error::Config(format!("psn_forward on a {} topology", topology.kind)));
    }
    let mut h = x;
    for level in &topology.levels {
        let layer = match (level, task) {
            (Level::Shared(l), _) => Some(l),
            (Level::Private { main, .. }, TaskId::Main) => main.as_ref(),
            (Level::Private { aux, .. }, TaskId::Aux) => aux.as_ref(),
            (Level::Split { .. }, _) => unreachable!("validated PSN has no split levels"),
        };
        if let Some(l) = layer {
            h = l.forward(tape, params, h, ctx)?;
        }
    }
    Ok(h)
}

/// Forward pass of an LWS topology: `(main, aux)` final states.
pub fn lws_forward(topology: &SharingTopology, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut Ctx) -> Result<(Var, Var)> {
    if topology.kind != TopologyKind::Lws {
        return Err(Error::Config(format!("lws_forward on a {} topology", topology.kind)));
    }
    let s = topology.forward(tape, params, x, ctx)?;
    Ok((s.main, s.aux))
}
