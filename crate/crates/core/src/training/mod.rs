//! Joint optimization: the weighted multi-task loss, batch scheduling for
//! the two data regimes, the training loop, multi-seed averaging and the
//! auxiliary-loss ablation.

mod config;
mod experiment;

pub use config::{preset, preset_names, DataConfig, DataRegime, RunConfig, RunSection, TaskKind, TrainingConfig};
pub use experiment::{
    ablate_aux, evaluate_nli, evaluate_parser, evaluate_tagger, load_task_data, multi_run_config, run_experiment, Experiment,
    TaskData, TrainedModel,
};

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Ctx};
use crate::tasks::MultiTaskModel;

pub type Metrics = BTreeMap<String, f64>;

/// `main + λ·aux`. At `λ = 0` the main node itself is returned, so the
/// auxiliary path is not even part of the differentiated expression.
pub fn joint_loss(tape: &mut Tape, main: Var, aux: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Ok(main);
    }
    let weighted = tape.scale(aux, lambda)?;
    tape.add(main, weighted)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!("auxiliary weight λ must be a finite value ≥ 0, got {lambda}")));
    }
    Ok(())
}

/// Loss nodes of one batch. `total` is absent when nothing in the batch
/// carries weight (an auxiliary-only batch at `λ = 0`).
#[derive(Clone, Copy, Debug, Default)]
pub struct BatchLoss {
    pub total: Option<Var>,
    pub main: Option<Var>,
    pub aux: Option<Var>,
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    if terms.len() > 1 {
        acc = tape.scale(acc, 1.0 / terms.len() as f64)?;
    }
    Ok(Some(acc))
}

/// Per-task means over the instances of `batch` that carry each task's
/// labels, combined with [`joint_loss`].
pub fn batch_loss<M: MultiTaskModel>(
    model: &M,
    tape: &mut Tape,
    batch: &[&M::Instance],
    lambda: f64,
    ctx: &mut Ctx,
) -> Result<BatchLoss> {
    check_lambda(lambda)?;
    let (mut mains, mut auxes) = (Vec::new(), Vec::new());
    for inst in batch {
        let l = model.instance_losses(tape, inst, ctx)?;
        mains.extend(l.main);
        auxes.extend(l.aux);
    }
    let main = mean_of(tape, &mains)?;
    let aux = mean_of(tape, &auxes)?;
    let total = match (main, aux) {
        (Some(m), Some(a)) => Some(joint_loss(tape, m, a, lambda)?),
        (Some(m), None) => Some(m),
        (None, Some(_)) if lambda == 0.0 => None,
        (None, Some(a)) => Some(tape.scale(a, lambda)?),
        (None, None) => None,
    };
    Ok(BatchLoss { total, main, aux })
}

/// Training instances. In the disjoint regime `main` and `aux` are the two
/// corpora, each carrying only its own task's labels; in the overlapped
/// regime every instance carries both and `aux` is usually empty.
#[derive(Clone, Debug)]
pub struct Corpus<I> {
    pub main: Vec<I>,
    pub aux: Vec<I>,
}

impl<I> Corpus<I> {
    pub fn new(main: Vec<I>, aux: Vec<I>) -> Self {
        Corpus { main, aux }
    }
}

/// Batches of one epoch as indices into the concatenation `main ++ aux`.
/// Disjoint batches never mix the two corpora.
pub fn schedule_batches(
    main_len: usize,
    aux_len: usize,
    batch_size: usize,
    regime: DataRegime,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    match regime {
        DataRegime::Disjoint => {
            let mut batches = Vec::new();
            for (offset, len) in [(0, main_len), (main_len, aux_len)] {
                let mut idx: Vec<usize> = (offset..offset + len).collect();
                idx.shuffle(rng);
                batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
            }
            batches.shuffle(rng);
            batches
        }
        DataRegime::Overlapped => {
            let mut idx: Vec<usize> = (0..main_len + aux_len).collect();
            idx.shuffle(rng);
            idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
        }
    }
}

/// Loss and metric history of one training run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: Metrics,
    pub dev: Metrics,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub system: String,
    pub lambda: f64,
    pub epochs: Vec<EpochLog>,
    pub test: Metrics,
    pub steps: u64,
    pub wall_clock_secs: f64,
}

/// Equality ignores wall-clock time, so two runs with one seed compare
/// equal.
impl PartialEq for RunResult {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.system == other.system
            && self.lambda.to_bits() == other.lambda.to_bits()
            && self.steps == other.steps
            && self.test == other.test
            && self.epochs.len() == other.epochs.len()
            && self
                .epochs
                .iter()
                .zip(&other.epochs)
                .all(|(a, b)| a.epoch == b.epoch && a.train == b.train && a.dev == b.dev)
    }
}

impl RunResult {
    /// `epoch,split,metric_name,value` rows; test metrics use the epoch
    /// label `final`.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,split,metric_name,value\n");
        for e in &self.epochs {
            for (split, m) in [("train", &e.train), ("dev", &e.dev)] {
                for (k, v) in m {
                    s.push_str(&format!("{},{split},{k},{v}\n", e.epoch));
                }
            }
        }
        for (k, v) in &self.test {
            s.push_str(&format!("final,test,{k},{v}\n"));
        }
        s
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.train.get("loss").copied())
    }
}

/// Trains `model` in place for `config.epochs` epochs, evaluating with
/// `dev_eval` after each. Returns the history; `test` is left empty for
/// the caller to fill.
pub fn train<M: MultiTaskModel>(
    model: &mut M,
    config: &TrainingConfig,
    seed: u64,
    data: &Corpus<M::Instance>,
    mut dev_eval: impl FnMut(&M) -> Result<Metrics>,
) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let use_aux = model.system().uses_aux();
    let aux_len = if use_aux { data.aux.len() } else { 0 };
    if data.main.is_empty() && aux_len == 0 {
        return Err(Error::Invalid("no training instances".into()));
    }
    let mut adam = AdamState::with_betas(
        model.params(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_epsilon,
    );
    let mut ctx = Ctx::train(config.dropout, config.recurrent_dropout, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c_4e55);
    let mut result = RunResult {
        seed,
        system: model.system().to_string(),
        lambda: config.lambda,
        ..Default::default()
    };
    let main_len = data.main.len();
    for epoch in 1..=config.epochs {
        let batches = schedule_batches(main_len, aux_len, config.batch_size, config.regime, &mut rng);
        let (mut sum_total, mut sum_main, mut sum_aux) = (0.0, 0.0, 0.0);
        let (mut n_total, mut n_main, mut n_aux) = (0usize, 0usize, 0usize);
        for idx in batches {
            let step = adam.steps() as usize + 1;
            let batch: Vec<&M::Instance> = idx
                .iter()
                .map(|&i| if i < main_len { &data.main[i] } else { &data.aux[i - main_len] })
                .collect();
            let mut tape = Tape::new();
            tape.set_checked(config.checked);
            let loss = batch_loss(model, &mut tape, &batch, config.lambda, &mut ctx).map_err(|e| at_step(e, step))?;
            model.params_mut().zero_grad();
            if let Some(total) = loss.total {
                let v = tape.value(total).item();
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        detail: format!("loss is {v}"),
                    });
                }
                tape.backward(total, model.params_mut()).map_err(|e| at_step(e, step))?;
                sum_total += v;
                n_total += 1;
            }
            if let Some(m) = loss.main {
                sum_main += tape.value(m).item();
                n_main += 1;
            }
            if let Some(a) = loss.aux {
                sum_aux += tape.value(a).item();
                n_aux += 1;
            }
            if config.grad_clip {
                model.params_mut().clip_grad_norm(config.clip_norm);
            }
            adam.step(model.params_mut());
        }
        let mut train = Metrics::new();
        for (k, s, n) in [("loss", sum_total, n_total), ("main_loss", sum_main, n_main), ("aux_loss", sum_aux, n_aux)] {
            if n > 0 {
                train.insert(k.to_string(), s / n as f64);
            }
        }
        let dev = dev_eval(model)?;
        result.epochs.push(EpochLog { epoch, train, dev });
    }
    result.steps = adam.steps();
    result.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { op, node } => Error::NonFiniteLoss {
            step,
            detail: format!("non-finite value produced by {op} (node {node})"),
        },
        other => other,
    }
}

/// Mean and population standard deviation of each final test metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiRunSummary {
    pub runs: Vec<RunResult>,
    pub mean: Metrics,
    pub stdev: Metrics,
}

pub const DEFAULT_RUNS: usize = 5;

/// Runs `run(seed)` for seeds `base_seed + i`, `i < n_runs`, and aggregates
/// the final test metrics.
pub fn multi_run(n_runs: usize, base_seed: u64, mut run: impl FnMut(u64) -> Result<RunResult>) -> Result<MultiRunSummary> {
    if n_runs == 0 {
        return Err(Error::Config("multi_run needs at least one run".into()));
    }
    let runs = (0..n_runs as u64)
        .map(|i| run(base_seed + i))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(runs))
}

pub fn aggregate(runs: Vec<RunResult>) -> MultiRunSummary {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        for (k, v) in &r.test {
            values.entry(k.clone()).or_default().push(*v);
        }
    }
    let mut summary = MultiRunSummary {
        runs,
        ..Default::default()
    };
    for (k, vs) in values {
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let var = vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        summary.mean.insert(k.clone(), mean);
        summary.stdev.insert(k, var.sqrt());
    }
    summary
}
