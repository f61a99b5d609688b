//! End-to-end runs: load the configured corpora, build the model for the
//! configured task and system, train, evaluate and collect predictions.

use std::path::Path;

use super::{multi_run, train, Corpus, DataRegime, Metrics, MultiRunSummary, RunConfig, RunResult, TaskKind};
use crate::analysis::{count_correct, per_label_prf, AttachmentCounts, EvalReport, Labels, PredictionRecord};
use crate::autodiff::ParamStore;
use crate::data::{read_conllu, read_nli_jsonl, read_semtag_tsv, NliInstance, Sentence, Tagset};
use crate::error::{Error, Result};
use crate::tasks::{MultiTaskModel, NliModel, ParserModel, PretrainConfig, System, TaggerModel, Vocabs};

/// Loaded and (if configured) tag-projected corpora.
#[derive(Clone, Debug)]
pub enum TaskData {
    Tagging {
        train: Corpus<Sentence>,
        dev: Vec<Sentence>,
        test: Vec<Sentence>,
        aux_dev: Vec<Sentence>,
        aux_test: Vec<Sentence>,
        vocabs: Vocabs,
    },
    Parsing {
        train: Corpus<Sentence>,
        dev: Vec<Sentence>,
        test: Vec<Sentence>,
        vocabs: Vocabs,
    },
    Nli {
        train: Corpus<NliInstance>,
        dev: Vec<NliInstance>,
        test: Vec<NliInstance>,
        /// Semantic-tag corpus for encoder pretraining.
        pretrain: Vec<Sentence>,
        vocabs: Vocabs,
    },
}

impl TaskData {
    pub fn vocabs(&self) -> &Vocabs {
        match self {
            TaskData::Tagging { vocabs, .. } | TaskData::Parsing { vocabs, .. } | TaskData::Nli { vocabs, .. } => vocabs,
        }
    }
}

fn existing(path: &Option<std::path::PathBuf>, key: &str) -> Result<Option<std::path::PathBuf>> {
    match path {
        None => Ok(None),
        Some(p) if p.exists() => Ok(Some(p.clone())),
        Some(p) => Err(Error::Config(format!("{key}: no such file {}", p.display()))),
    }
}

fn conllu(path: &Option<std::path::PathBuf>, key: &str) -> Result<Vec<Sentence>> {
    existing(path, key)?.map_or(Ok(Vec::new()), |p| read_conllu(&p))
}

fn semtag_tsv(path: &Option<std::path::PathBuf>, key: &str) -> Result<Vec<Sentence>> {
    existing(path, key)?.map_or(Ok(Vec::new()), |p| read_semtag_tsv(&p))
}

fn nli(path: &Option<std::path::PathBuf>, key: &str) -> Result<Vec<NliInstance>> {
    existing(path, key)?.map_or(Ok(Vec::new()), |p| Ok(read_nli_jsonl(&p)?.instances))
}

/// Reads every configured corpus, builds vocabularies from the training
/// splits only, and projects semantic tags where requested.
pub fn load_task_data(cfg: &RunConfig) -> Result<TaskData> {
    cfg.validate()?;
    let d = &cfg.data;
    let tagset = match existing(&d.tagset, "data.tagset")? {
        Some(p) => Tagset::load(&p)?,
        None => Tagset::default(),
    };
    let aux_train = semtag_tsv(&d.aux_train, "data.aux_train")?;
    let tags: Vec<String> = tagset.tags.clone();
    match cfg.run.task {
        TaskKind::Upos => {
            let main = conllu(&d.train, "data.train")?;
            let vocabs = Vocabs::build(main.iter().chain(&aux_train), &tags);
            let (main, aux) = match cfg.training.regime {
                DataRegime::Disjoint => (main, aux_train),
                // overlapped: the main corpus already carries both layers
                DataRegime::Overlapped => (main, Vec::new()),
            };
            Ok(TaskData::Tagging {
                train: Corpus::new(main, aux),
                dev: conllu(&d.dev, "data.dev")?,
                test: conllu(&d.test, "data.test")?,
                aux_dev: semtag_tsv(&d.aux_dev, "data.aux_dev")?,
                aux_test: semtag_tsv(&d.aux_test, "data.aux_test")?,
                vocabs,
            })
        }
        TaskKind::Dep => {
            let mut train = conllu(&d.train, "data.train")?;
            let mut dev = conllu(&d.dev, "data.dev")?;
            let mut test = conllu(&d.test, "data.test")?;
            if d.project_aux {
                let tagger = projection_tagger(cfg, &train, &aux_train, &tags)?;
                for corpus in [&mut train, &mut dev, &mut test] {
                    project_missing(&tagger, corpus)?;
                }
            }
            let vocabs = Vocabs::build(train.iter(), &tags);
            Ok(TaskData::Parsing {
                train: Corpus::new(train, Vec::new()),
                dev,
                test,
                vocabs,
            })
        }
        TaskKind::Nli => {
            let mut train = nli(&d.train, "data.train")?;
            let mut dev = nli(&d.dev, "data.dev")?;
            let mut test = nli(&d.test, "data.test")?;
            if d.project_aux {
                let sentences: Vec<Sentence> = train.iter().flat_map(|p| [p.premise.clone(), p.hypothesis.clone()]).collect();
                let tagger = projection_tagger(cfg, &sentences, &aux_train, &tags)?;
                for corpus in [&mut train, &mut dev, &mut test] {
                    for inst in corpus.iter_mut() {
                        for s in [&mut inst.premise, &mut inst.hypothesis] {
                            if s.semtags.is_none() {
                                *s = tagger.project_tags(std::slice::from_ref(s))?.remove(0);
                            }
                        }
                    }
                }
            }
            let sentences = train.iter().flat_map(|p| [&p.premise, &p.hypothesis]);
            let vocabs = Vocabs::build(sentences.chain(&aux_train), &tags);
            Ok(TaskData::Nli {
                train: Corpus::new(train, Vec::new()),
                dev,
                test,
                pretrain: aux_train,
                vocabs,
            })
        }
    }
}

/// A tagger trained only on the semantic-tag corpus, used to fill the
/// semtag layer of corpora that lack it.
fn projection_tagger(cfg: &RunConfig, main: &[Sentence], aux_train: &[Sentence], tags: &[String]) -> Result<TaggerModel> {
    if aux_train.is_empty() {
        return Err(Error::Config("semantic-tag projection needs a non-empty data.aux_train".into()));
    }
    let vocabs = Vocabs::build(main.iter().chain(aux_train), tags);
    let mut tagger = TaggerModel::new(System::Fsn, cfg.model, vocabs, cfg.run.seed)?;
    let tcfg = super::TrainingConfig {
        lambda: 1.0,
        learning_rate: 1e-2,
        epochs: cfg.data.aux_epochs.max(1),
        batch_size: 8,
        dropout: 0.0,
        recurrent_dropout: 0.0,
        regime: DataRegime::Disjoint,
        ..cfg.training.clone()
    };
    let corpus = Corpus::new(Vec::new(), aux_train.to_vec());
    let r = train(&mut tagger, &tcfg, cfg.run.seed, &corpus, |_| Ok(Metrics::new()))?;
    tagger.trained_steps = r.steps;
    Ok(tagger)
}

fn project_missing(tagger: &TaggerModel, corpus: &mut [Sentence]) -> Result<()> {
    for s in corpus.iter_mut() {
        if s.semtags.is_none() {
            *s = tagger.project_tags(std::slice::from_ref(s))?.remove(0);
        }
    }
    Ok(())
}

/// A trained model of any task.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Tagger(TaggerModel),
    Parser(ParserModel),
    Nli(NliModel),
}

impl TrainedModel {
    /// A freshly initialized model for `cfg` (the same seed gives the same
    /// parameter names and shapes, so checkpoints can be restored into it).
    pub fn build(cfg: &RunConfig, vocabs: Vocabs, seed: u64) -> Result<Self> {
        let (sys, dims) = (cfg.run.system, cfg.model);
        Ok(match cfg.run.task {
            TaskKind::Upos => TrainedModel::Tagger(TaggerModel::new(sys, dims, vocabs, seed)?),
            TaskKind::Dep => TrainedModel::Parser(ParserModel::new(sys, dims, vocabs, seed)?),
            TaskKind::Nli => TrainedModel::Nli(NliModel::new(sys, dims, vocabs, seed)?),
        })
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            TrainedModel::Tagger(m) => &m.params,
            TrainedModel::Parser(m) => &m.params,
            TrainedModel::Nli(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            TrainedModel::Tagger(m) => &mut m.params,
            TrainedModel::Parser(m) => &mut m.params,
            TrainedModel::Nli(m) => &mut m.params,
        }
    }

    pub fn vocabs(&self) -> &Vocabs {
        match self {
            TrainedModel::Tagger(m) => &m.vocabs,
            TrainedModel::Parser(m) => &m.vocabs,
            TrainedModel::Nli(m) => &m.vocabs,
        }
    }

    pub fn structure(&self) -> crate::sharing::StructureReport {
        match self {
            TrainedModel::Tagger(m) => m.structure(),
            TrainedModel::Parser(m) => m.structure(),
            TrainedModel::Nli(m) => m.structure(),
        }
    }

    /// Marks a model restored from a checkpoint as trained.
    pub fn mark_trained(&mut self, steps: u64) {
        if let TrainedModel::Tagger(m) = self {
            m.trained_steps = steps.max(1);
        }
    }
}

/// Outcome of one run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub result: RunResult,
    pub model: TrainedModel,
    pub test_report: EvalReport,
    /// Per-instance test predictions.
    pub predictions: Vec<PredictionRecord>,
    /// Test sentences annotated by the model (tagging and parsing only).
    pub annotated: Vec<Sentence>,
}

fn push_prf(report: &mut EvalReport, layer: &str, preds: &[String], golds: &[String], labels: &[String]) -> Result<()> {
    if !golds.is_empty() {
        report.per_label.insert(layer.to_string(), per_label_prf(preds, golds, labels)?);
    }
    Ok(())
}

fn ratio(c: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| c as f64 / n as f64)
}

/// Evaluates a tagger on a UPOS corpus and a semtag corpus (either may be
/// empty).
pub fn evaluate_tagger(m: &TaggerModel, upos: &[Sentence], semtag: &[Sentence], full: bool) -> Result<(EvalReport, Vec<PredictionRecord>, Vec<Sentence>)> {
    let mut report = EvalReport {
        task: "upos".into(),
        system: m.system.to_string(),
        ..Default::default()
    };
    let (mut records, mut annotated) = (Vec::new(), Vec::new());
    let (mut up, mut ug, mut sp, mut sg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut collect = |s: &Sentence, want_upos: bool| -> Result<()> {
        let (pu, ps) = m.predict(s)?;
        if let (true, Some(g)) = (want_upos, &s.upos) {
            ug.extend(g.iter().cloned());
            up.extend(pu.iter().cloned());
            if full {
                records.push(PredictionRecord {
                    id: s.id.clone(),
                    gold: Labels::Many(g.clone()),
                    pred: Labels::Many(pu.clone()),
                    premise: None,
                    hypothesis: None,
                    semtags_pred: m.system.uses_aux().then(|| ps.clone()),
                });
                let mut a = s.clone();
                a.upos = Some(pu.clone());
                if m.system.uses_aux() {
                    a.semtags = Some(ps.clone());
                }
                annotated.push(a);
            }
        }
        if let Some(g) = &s.semtags {
            if m.system.uses_aux() {
                sg.extend(g.iter().cloned());
                sp.extend(ps);
            }
        }
        Ok(())
    };
    for s in upos {
        collect(s, true)?;
    }
    for s in semtag {
        collect(s, false)?;
    }
    let (uc, un) = count_correct(&up, &ug)?;
    let (sc, sn) = count_correct(&sp, &sg)?;
    if let Some(a) = ratio(uc, un) {
        report.metrics.insert("upos_accuracy".into(), a);
        report.counts.insert("upos_tokens".into(), un);
    }
    if let Some(a) = ratio(sc, sn) {
        report.metrics.insert("semtag_accuracy".into(), a);
        report.counts.insert("semtag_tokens".into(), sn);
    }
    if full {
        push_prf(&mut report, "upos", &up, &ug, m.vocabs.upos.entries())?;
        push_prf(&mut report, "semtag", &sp, &sg, m.vocabs.semtags.entries())?;
    }
    Ok((report, records, annotated))
}

pub fn evaluate_parser(m: &ParserModel, corpus: &[Sentence], full: bool) -> Result<(EvalReport, Vec<PredictionRecord>, Vec<Sentence>)> {
    let mut report = EvalReport {
        task: "dep".into(),
        system: m.system.to_string(),
        ..Default::default()
    };
    let (mut records, mut annotated) = (Vec::new(), Vec::new());
    let mut att = AttachmentCounts::default();
    let (mut up, mut ug, mut sp, mut sg, mut lp, mut lg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in corpus {
        let pred = m.predict(s)?;
        if let (Some(h), Some(l)) = (&s.heads, &s.deprels) {
            let gold = crate::tasks::DependencyTree {
                heads: h.clone(),
                labels: l.clone(),
            };
            att.add(&pred.tree, &gold)?;
            lg.extend(l.iter().cloned());
            lp.extend(pred.tree.labels.iter().cloned());
            if full {
                let arcs = |t: &crate::tasks::DependencyTree| {
                    t.heads.iter().zip(&t.labels).map(|(h, l)| format!("{h}:{l}")).collect()
                };
                records.push(PredictionRecord {
                    id: s.id.clone(),
                    gold: Labels::Many(arcs(&gold)),
                    pred: Labels::Many(arcs(&pred.tree)),
                    premise: None,
                    hypothesis: None,
                    semtags_pred: m.system.uses_aux().then(|| pred.semtags.clone()),
                });
            }
        }
        if let Some(g) = &s.upos {
            ug.extend(g.iter().cloned());
            up.extend(pred.upos.iter().cloned());
        }
        if let (Some(g), true) = (&s.semtags, m.system.uses_aux()) {
            sg.extend(g.iter().cloned());
            sp.extend(pred.semtags.iter().cloned());
        }
        if full {
            let mut a = s.clone();
            a.upos = Some(pred.upos);
            a.heads = Some(pred.tree.heads);
            a.deprels = Some(pred.tree.labels);
            if m.system.uses_aux() {
                a.semtags = Some(pred.semtags);
            }
            annotated.push(a);
        }
    }
    if att.tokens > 0 {
        report.metrics.insert("las".into(), att.las());
        report.metrics.insert("uas".into(), att.uas());
        report.counts.insert("tokens".into(), att.tokens);
    }
    let (uc, un) = count_correct(&up, &ug)?;
    if let Some(a) = ratio(uc, un) {
        report.metrics.insert("upos_accuracy".into(), a);
    }
    let (sc, sn) = count_correct(&sp, &sg)?;
    if let Some(a) = ratio(sc, sn) {
        report.metrics.insert("semtag_accuracy".into(), a);
    }
    if full {
        push_prf(&mut report, "deprel", &lp, &lg, m.vocabs.deprels.entries())?;
    }
    Ok((report, records, annotated))
}

pub fn evaluate_nli(m: &NliModel, corpus: &[NliInstance], full: bool) -> Result<(EvalReport, Vec<PredictionRecord>)> {
    let mut report = EvalReport {
        task: "nli".into(),
        system: m.system.to_string(),
        ..Default::default()
    };
    let mut records = Vec::new();
    let (mut p, mut g, mut sp, mut sg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for inst in corpus {
        let pred = m.predict(inst)?;
        p.push(pred.label.to_string());
        g.push(inst.label.to_string());
        if m.system.uses_aux() {
            for (s, tags) in [(&inst.premise, &pred.premise_semtags), (&inst.hypothesis, &pred.hypothesis_semtags)] {
                if let Some(gold) = &s.semtags {
                    sg.extend(gold.iter().cloned());
                    sp.extend(tags.iter().cloned());
                }
            }
        }
        if full {
            let mut tags = pred.premise_semtags.clone();
            tags.extend(pred.hypothesis_semtags.iter().cloned());
            records.push(PredictionRecord {
                id: inst.id.clone(),
                gold: Labels::One(inst.label.to_string()),
                pred: Labels::One(pred.label.to_string()),
                premise: Some(inst.premise.tokens.join(" ")),
                hypothesis: Some(inst.hypothesis.tokens.join(" ")),
                semtags_pred: Some(tags),
            });
        }
    }
    let (c, n) = count_correct(&p, &g)?;
    if let Some(a) = ratio(c, n) {
        report.metrics.insert("accuracy".into(), a);
        report.counts.insert("pairs".into(), n);
    }
    let (sc, sn) = count_correct(&sp, &sg)?;
    if let Some(a) = ratio(sc, sn) {
        report.metrics.insert("semtag_accuracy".into(), a);
    }
    if full {
        let labels: Vec<String> = crate::data::NliLabel::ALL.iter().map(|l| l.to_string()).collect();
        push_prf(&mut report, "label", &p, &g, &labels)?;
    }
    Ok((report, records))
}

/// Trains one model for `cfg` with `seed` and evaluates it on the test
/// split. With `pretrain_checkpoint` set, inference encoder pretraining
/// (when configured) saves its checkpoint there before warm-starting.
pub fn run_experiment(cfg: &RunConfig, data: &TaskData, seed: u64, pretrain_checkpoint: Option<&Path>) -> Result<Experiment> {
    cfg.validate()?;
    let mut model = TrainedModel::build(cfg, data.vocabs().clone(), seed)?;
    let t = &cfg.training;
    let (mut result, test_report, predictions, annotated) = match (&mut model, data) {
        (
            TrainedModel::Tagger(m),
            TaskData::Tagging {
                train: corpus,
                dev,
                test,
                aux_dev,
                aux_test,
                ..
            },
        ) => {
            let r = train(m, t, seed, corpus, |m| Ok(evaluate_tagger(m, dev, aux_dev, false)?.0.metrics))?;
            m.trained_steps = r.steps;
            let (rep, recs, ann) = evaluate_tagger(m, test, aux_test, true)?;
            (r, rep, recs, ann)
        }
        (TrainedModel::Parser(m), TaskData::Parsing { train: corpus, dev, test, .. }) => {
            let r = train(m, t, seed, corpus, |m| Ok(evaluate_parser(m, dev, false)?.0.metrics))?;
            let (rep, recs, ann) = evaluate_parser(m, test, true)?;
            (r, rep, recs, ann)
        }
        (
            TrainedModel::Nli(m),
            TaskData::Nli {
                train: corpus,
                dev,
                test,
                pretrain,
                ..
            },
        ) => {
            if cfg.data.pretrain_aux && m.system.uses_aux() {
                let pc = PretrainConfig {
                    epochs: cfg.data.aux_epochs.max(1),
                    dropout: 0.0,
                    clip_norm: t.grad_clip.then_some(t.clip_norm),
                    seed,
                    ..Default::default()
                };
                m.pretrain_aux_encoder(pretrain, &pc, pretrain_checkpoint)?;
                if let Some(path) = pretrain_checkpoint {
                    m.warm_start(path)?;
                }
            }
            let r = train(m, t, seed, corpus, |m| Ok(evaluate_nli(m, dev, false)?.0.metrics))?;
            let (rep, recs) = evaluate_nli(m, test, true)?;
            (r, rep, recs, Vec::new())
        }
        _ => unreachable!("model built from the same task as the data"),
    };
    result.test = test_report.metrics.clone();
    let mut test_report = test_report;
    test_report.split = "test".into();
    Ok(Experiment {
        result,
        model,
        test_report,
        predictions,
        annotated,
    })
}

/// The same run with the auxiliary loss weight forced to zero; the
/// architecture is untouched.
pub fn ablate_aux(cfg: &RunConfig, data: &TaskData, seed: u64) -> Result<Experiment> {
    let mut ablated = cfg.clone();
    ablated.training.lambda = 0.0;
    run_experiment(&ablated, data, seed, None)
}

/// `cfg.run.runs` seeded repetitions starting at `cfg.run.seed`.
pub fn multi_run_config(cfg: &RunConfig, data: &TaskData) -> Result<MultiRunSummary> {
    multi_run(cfg.run.runs, cfg.run.seed, |seed| Ok(run_experiment(cfg, data, seed, None)?.result))
}
