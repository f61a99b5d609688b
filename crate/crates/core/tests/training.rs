use sharenet_core::data::Sentence;
use sharenet_core::nn::checkpoint::{self, DType};
use sharenet_core::nn::Ctx;
use sharenet_core::synthetic::{correlated_tagging_corpus, strip_layers};
use sharenet_core::tasks::{ModelDims, MultiTaskModel, System, TaggerModel, Vocabs};
use sharenet_core::training::{
    aggregate, batch_loss, joint_loss, multi_run, schedule_batches, train, Corpus, DataRegime, Metrics, RunResult,
    TrainingConfig,
};
use sharenet_core::{Error, ParamStore, Tape, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_dims() -> ModelDims {
    ModelDims {
        embed_dim: 8,
        hidden_dim: 8,
        ..Default::default()
    }
}

fn tagger(system: System, corpus: &[Sentence], seed: u64) -> TaggerModel {
    TaggerModel::new(system, small_dims(), Vocabs::build(corpus, &[]), seed).unwrap()
}

fn quick_config(lambda: f64) -> TrainingConfig {
    TrainingConfig {
        lambda,
        learning_rate: 1e-2,
        batch_size: 2,
        epochs: 1,
        dropout: 0.0,
        recurrent_dropout: 0.0,
        regime: DataRegime::Overlapped,
        ..Default::default()
    }
}

fn no_eval<M>(_: &M) -> sharenet_core::Result<Metrics> {
    Ok(Metrics::new())
}

#[test]
fn joint_loss_weights_the_auxiliary_term() {
    let mut tape = Tape::new();
    let m = tape.constant(Tensor::scalar(1.0));
    let a = tape.constant(Tensor::scalar(2.0));
    let j = joint_loss(&mut tape, m, a, 0.1).unwrap();
    assert!((tape.value(j).item() - 1.2).abs() < 1e-15);
    // λ = 0 hands back the main node untouched
    assert_eq!(joint_loss(&mut tape, m, a, 0.0).unwrap(), m);
    assert!(matches!(joint_loss(&mut tape, m, a, -0.5), Err(Error::Config(_))));
    assert!(joint_loss(&mut tape, m, a, f64::NAN).is_err());
}

#[test]
fn zero_lambda_freezes_aux_exclusive_parameters() {
    let corpus = correlated_tagging_corpus(20, 3, 0.0);
    for system in [System::Fsn, System::Psn, System::Lws] {
        let mut model = tagger(system, &corpus, 5);
        let before = model.params().clone();
        let r = train(&mut model, &quick_config(0.0), 9, &Corpus::new(corpus.clone(), vec![]), no_eval).unwrap();
        assert_eq!(r.steps, 10);
        let aux = model.aux_exclusive_params();
        assert!(!aux.is_empty());
        for id in aux {
            let (a, b) = (before.value(id).data(), model.params().value(id).data());
            assert!(
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
                "{system}: {} moved",
                before.get(id).name
            );
        }
        // the main head did train
        let id = model.params().find("tagger.upos.w").unwrap();
        assert_ne!(before.value(id), model.params().value(id));
    }
}

fn gradients(model: &mut TaggerModel, batch: &[Sentence], lambda: f64) -> ParamStore {
    let refs: Vec<&Sentence> = batch.iter().collect();
    let mut tape = Tape::new();
    let loss = batch_loss(&*model, &mut tape, &refs, lambda, &mut Ctx::eval()).unwrap();
    model.params_mut().zero_grad();
    tape.backward(loss.total.unwrap(), model.params_mut()).unwrap();
    model.params().clone()
}

fn max_grad_diff(a: &ParamStore, b: &ParamStore, ids: &[sharenet_core::ParamId]) -> f64 {
    ids.iter()
        .flat_map(|&id| a.grad(id).data().iter().zip(b.grad(id).data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn ablated_shared_gradients_match_single_task() {
    let corpus = correlated_tagging_corpus(6, 4, 0.0);
    // FSN at λ = 0 against the single-task system of identical initialization
    let mut fsn = tagger(System::Fsn, &corpus, 2);
    let mut st = tagger(System::St, &corpus, 2);
    assert!(fsn.params().values_bitwise_eq(st.params()));
    let g_fsn = gradients(&mut fsn, &corpus, 0.0);
    let g_st = gradients(&mut st, &corpus, 0.0);
    let shared = fsn.shared_params();
    assert!(!shared.is_empty());
    assert!(max_grad_diff(&g_fsn, &g_st, &shared) <= 1e-10);

    // every topology: λ = 0 on fully labelled data equals training on the
    // main labels alone
    let main_only = strip_layers(&corpus, true, false, false);
    for system in System::ALL {
        let mut a = tagger(system, &corpus, 2);
        let mut b = tagger(system, &corpus, 2);
        let ga = gradients(&mut a, &corpus, 0.0);
        let gb = gradients(&mut b, &main_only, 0.3);
        let all: Vec<_> = a.params().ids().collect();
        assert!(max_grad_diff(&ga, &gb, &all) <= 1e-10, "{system}");
    }
}

#[test]
fn ablated_lws_still_runs_its_gates() {
    let corpus = correlated_tagging_corpus(4, 4, 0.0);
    let mut model = tagger(System::Lws, &corpus, 2);
    let params_before = model.structure().total();
    let g = gradients(&mut model, &corpus, 0.0);
    let a2m = g.find("tagger.enc.l0.gate.a2m").unwrap();
    let m2a = g.find("tagger.enc.l0.gate.m2a").unwrap();
    // aux→main transfer feeds the main loss; main→aux does not
    assert!(g.grad(a2m).data().iter().any(|&x| x != 0.0));
    assert!(g.grad(m2a).data().iter().all(|&x| x == 0.0));
    assert_eq!(model.structure().total(), params_before);
}

#[test]
fn same_seed_gives_identical_runs_and_checkpoints() {
    let corpus = correlated_tagging_corpus(12, 6, 0.1);
    let cfg = TrainingConfig {
        dropout: 0.3,
        recurrent_dropout: 0.3,
        epochs: 2,
        ..quick_config(0.5)
    };
    let run = || {
        let mut m = tagger(System::Lws, &corpus, 1);
        let r = train(&mut m, &cfg, 42, &Corpus::new(corpus.clone(), vec![]), |m: &TaggerModel| {
            let (p, _) = m.predict(&corpus[0])?;
            Ok(Metrics::from([("n".to_string(), p.len() as f64)]))
        })
        .unwrap();
        (r, checkpoint::to_bytes(m.params(), DType::F64).unwrap())
    };
    let (r1, c1) = run();
    let (r2, c2) = run();
    assert_eq!(r1, r2);
    assert_eq!(c1, c2);
}

#[test]
fn step_count_follows_the_regime() {
    let corpus = correlated_tagging_corpus(10, 1, 0.0);
    let mut cfg = quick_config(0.1);
    cfg.batch_size = 4;
    cfg.epochs = 3;
    let mut m = tagger(System::Fsn, &corpus, 1);
    let r = train(&mut m, &cfg, 1, &Corpus::new(corpus.clone(), vec![]), no_eval).unwrap();
    assert_eq!(r.steps, 3 * 3);

    let main = strip_layers(&corpus, true, false, false);
    let aux = strip_layers(&corpus[..7], false, true, false);
    cfg.regime = DataRegime::Disjoint;
    let mut m = tagger(System::Fsn, &corpus, 1);
    let r = train(&mut m, &cfg, 1, &Corpus::new(main.clone(), aux.clone()), no_eval).unwrap();
    assert_eq!(r.steps, 3 * (3 + 2));
    // the single-task system never sees the auxiliary corpus
    let mut m = tagger(System::St, &corpus, 1);
    let r = train(&mut m, &cfg, 1, &Corpus::new(main, aux), no_eval).unwrap();
    assert_eq!(r.steps, 3 * 3);
}

#[test]
fn disjoint_batches_do_not_mix_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batches = schedule_batches(11, 7, 3, DataRegime::Disjoint, &mut rng);
    assert_eq!(batches.len(), 4 + 3);
    for b in &batches {
        assert!(b.iter().all(|&i| i < 11) || b.iter().all(|&i| i >= 11), "{b:?}");
    }
    let mut all: Vec<usize> = batches.concat();
    all.sort_unstable();
    assert_eq!(all, (0..18).collect::<Vec<_>>());
}

#[test]
fn aux_only_batch_leaves_main_head_untouched() {
    let corpus = correlated_tagging_corpus(4, 2, 0.0);
    let aux = strip_layers(&corpus, false, true, false);
    let mut model = tagger(System::Fsn, &corpus, 1);
    let g = gradients(&mut model, &aux, 1.0);
    for name in ["tagger.upos.w", "tagger.upos.b"] {
        let id = g.find(name).unwrap();
        assert!(g.grad(id).data().iter().all(|&x| x == 0.0), "{name}");
    }
    let id = g.find("tagger.semtag.w").unwrap();
    assert!(g.grad(id).data().iter().any(|&x| x != 0.0));
}

#[test]
fn non_finite_loss_names_step_and_op() {
    let corpus = correlated_tagging_corpus(4, 2, 0.0);
    let mut model = tagger(System::Fsn, &corpus, 1);
    let id = model.params().find("tagger.upos.b").unwrap();
    model.params_mut().value_mut(id).data_mut()[0] = f64::NAN;
    let err = train(&mut model, &quick_config(0.1), 1, &Corpus::new(corpus, vec![]), no_eval).unwrap_err();
    match err {
        Error::NonFiniteLoss { step, detail } => {
            assert_eq!(step, 1);
            assert!(detail.contains("add_row"), "{detail}");
        }
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn training_loss_falls() {
    let corpus = correlated_tagging_corpus(16, 8, 0.0);
    let vocabs = Vocabs::build(&corpus, &[]);
    let mut model = TaggerModel::new(System::Psn, ModelDims::default(), vocabs, 1).unwrap();
    let mut cfg = quick_config(1.0);
    cfg.epochs = 30;
    cfg.batch_size = 4;
    let r = train(&mut model, &cfg, 1, &Corpus::new(corpus, vec![]), no_eval).unwrap();
    let first = r.epochs[0].train["loss"];
    let last = r.final_train_loss().unwrap();
    assert!(last < 0.1 * first, "{first} → {last}");
    assert!(r.epochs.iter().all(|e| e.train.contains_key("main_loss") && e.train.contains_key("aux_loss")));
}

fn fake_run(seed: u64, acc: f64) -> RunResult {
    RunResult {
        seed,
        system: "fsn".into(),
        test: Metrics::from([("accuracy".to_string(), acc)]),
        ..Default::default()
    }
}

#[test]
fn multi_run_statistics() {
    let one = multi_run(1, 7, |s| Ok(fake_run(s, 0.8))).unwrap();
    assert_eq!(one.stdev["accuracy"], 0.0);
    assert_eq!(one.mean["accuracy"], 0.8);
    let same = multi_run(5, 7, |_| Ok(fake_run(7, 0.61))).unwrap();
    assert!(same.stdev["accuracy"].abs() < 1e-15);
    let mut seeds = Vec::new();
    let s = multi_run(4, 10, |seed| {
        seeds.push(seed);
        Ok(fake_run(seed, [0.2, 0.4, 0.6, 0.8][seeds.len() - 1]))
    })
    .unwrap();
    assert_eq!(seeds, vec![10, 11, 12, 13]);
    assert!((s.mean["accuracy"] - 0.5).abs() < 1e-12);
    assert!((s.stdev["accuracy"] - 0.05f64.sqrt()).abs() < 1e-12);
    assert!(multi_run(0, 1, |s| Ok(fake_run(s, 0.0))).is_err());
    assert_eq!(aggregate(vec![]).mean.len(), 0);
}

#[test]
fn metrics_csv_schema() {
    let mut r = fake_run(1, 0.5);
    r.epochs.push(sharenet_core::training::EpochLog {
        epoch: 1,
        train: Metrics::from([("loss".to_string(), 2.0)]),
        dev: Metrics::from([("accuracy".to_string(), 0.25)]),
    });
    assert_eq!(
        r.metrics_csv(),
        "epoch,split,metric_name,value\n1,train,loss,2\n1,dev,accuracy,0.25\nfinal,test,accuracy,0.5\n"
    );
}
