//! Acceptance battery: one PASS/FAIL line per criterion. Criterion 10 is
//! informational and never fails the run.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharenet_core::analysis::{
    accuracy, comparison_sets, las_uas, micro_recall, normalized_tag_frequencies, per_label_prf, AttachmentCounts,
    ComparisonSet,
};
use sharenet_core::data::{read_conllu, read_semtag_tsv, write_conllu, write_semtag_tsv, Sentence};
use sharenet_core::nn::checkpoint::{self, DType};
use sharenet_core::nn::Ctx;
use sharenet_core::synthetic::{correlated_tagging_corpus, nli_pairs, strip_layers};
use sharenet_core::tasks::{DependencyTree, ModelDims, MultiTaskModel, NliModel, ParserModel, System, TaggerModel, Vocabs};
use sharenet_core::training::{batch_loss, train, Corpus, DataRegime, Metrics, TrainingConfig};
use sharenet_core::verify::{run_battery, CheckOutcome, VerifyOptions};
use sharenet_core::{ParamId, ParamStore, Tape};

type Outcome = Result<String, String>;

/// Number, name, gating flag and check.
type Criterion<'a> = (usize, &'static str, bool, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

/// Checks from the verification battery whose names match `prefixes`.
fn battery_subset(outcomes: &[CheckOutcome], prefixes: &[&str]) -> Outcome {
    let picked: Vec<&CheckOutcome> = outcomes
        .iter()
        .filter(|o| prefixes.iter().any(|p| o.name.starts_with(p)))
        .collect();
    ensure(!picked.is_empty(), "no matching checks")?;
    let failed: Vec<String> = picked.iter().filter(|o| !o.passed).map(|o| format!("{}: {}", o.name, o.detail)).collect();
    ensure(failed.is_empty(), failed.join("; "))?;
    Ok(picked.iter().map(|o| format!("{} ({})", o.name, o.detail)).collect::<Vec<_>>().join("; "))
}

fn gradient_fidelity(outcomes: &[CheckOutcome], elapsed: Duration) -> Outcome {
    let grads: Vec<&CheckOutcome> = outcomes.iter().filter(|o| o.name.starts_with("grad/")).collect();
    let ops = grads.iter().filter(|o| !o.name.starts_with("grad/model/")).count();
    let models = grads.len() - ops;
    ensure(models == 12, format!("expected 12 model checks, found {models}"))?;
    let failed: Vec<String> = grads.iter().filter(|o| !o.passed).map(|o| format!("{}: {}", o.name, o.detail)).collect();
    ensure(failed.is_empty(), failed.join("; "))?;
    let secs: f64 = grads.iter().map(|o| o.seconds).sum();
    ensure(secs < 120.0, format!("gradient checks took {secs:.1}s"))?;
    Ok(format!(
        "{ops} op checks and {models} model checks within 1e-4 in {secs:.1}s (battery {:.1}s)",
        elapsed.as_secs_f64()
    ))
}

fn structure_reports() -> Outcome {
    let s = sharenet_core::verify::toy_sentence();
    let v = Vocabs::build([&s], &[]);
    let pair = nli_pairs().swap_remove(0);
    let nv = Vocabs::build([&pair.premise, &pair.hypothesis], &[]);
    let reports = [
        TaggerModel::new(System::Fsn, ModelDims::default(), v.clone(), 1).map_err(e2s)?.structure(),
        ParserModel::new(System::Fsn, ModelDims::default(), v, 1).map_err(e2s)?.structure(),
        NliModel::new(System::Fsn, ModelDims::default(), nv, 1).map_err(e2s)?.structure(),
    ];
    for r in &reports {
        ensure(
            r.private_main == 0 && r.private_aux == 0 && r.subspace_main == 0 && r.gates == 0 && r.shared > 0,
            format!("FSN report has private parameters: {}", r.to_kv().replace('\n', " ")),
        )?;
    }
    Ok("FSN tagger/parser/NLI reports: 0 private".into())
}

fn quick(lambda: f64, batch: usize, epochs: usize, lr: f64) -> TrainingConfig {
    TrainingConfig {
        lambda,
        learning_rate: lr,
        batch_size: batch,
        epochs,
        dropout: 0.0,
        recurrent_dropout: 0.0,
        regime: DataRegime::Overlapped,
        ..Default::default()
    }
}

fn no_eval<M>(_: &M) -> sharenet_core::Result<Metrics> {
    Ok(Metrics::new())
}

fn small_tagger(system: System, corpus: &[Sentence], seed: u64) -> Result<TaggerModel, String> {
    let dims = ModelDims {
        embed_dim: 8,
        hidden_dim: 8,
        ..Default::default()
    };
    TaggerModel::new(system, dims, Vocabs::build(corpus, &[]), seed).map_err(e2s)
}

fn gradients(model: &mut TaggerModel, batch: &[Sentence], lambda: f64) -> Result<ParamStore, String> {
    let refs: Vec<&Sentence> = batch.iter().collect();
    let mut tape = Tape::new();
    let loss = batch_loss(&*model, &mut tape, &refs, lambda, &mut Ctx::eval()).map_err(e2s)?;
    model.params_mut().zero_grad();
    tape.backward(loss.total.ok_or("no loss")?, model.params_mut()).map_err(e2s)?;
    Ok(model.params().clone())
}

fn max_grad_diff(a: &ParamStore, b: &ParamStore, ids: &[ParamId]) -> f64 {
    ids.iter()
        .flat_map(|&id| a.grad(id).data().iter().zip(b.grad(id).data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn lambda_ablation() -> Outcome {
    let corpus = correlated_tagging_corpus(20, 3, 0.0);
    for system in [System::Fsn, System::Psn, System::Lws] {
        let mut m = small_tagger(system, &corpus, 5)?;
        let before = m.params().clone();
        let r = train(&mut m, &quick(0.0, 2, 1, 1e-2), 9, &Corpus::new(corpus.clone(), vec![]), no_eval).map_err(e2s)?;
        ensure(r.steps == 10, format!("{system}: {} steps", r.steps))?;
        let aux = m.aux_exclusive_params();
        ensure(!aux.is_empty(), format!("{system}: no aux-exclusive parameters"))?;
        for id in aux {
            let same = before.value(id).data().iter().zip(m.params().value(id).data()).all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, format!("{system}: {} changed", before.get(id).name))?;
        }
    }
    let batch = &corpus[..6];
    let mut fsn = small_tagger(System::Fsn, &corpus, 2)?;
    let mut st = small_tagger(System::St, &corpus, 2)?;
    let (gf, gs) = (gradients(&mut fsn, batch, 0.0)?, gradients(&mut st, batch, 0.0)?);
    let shared = fsn.shared_params();
    let d_st = max_grad_diff(&gf, &gs, &shared);
    ensure(d_st <= 1e-10, format!("FSN vs ST shared gradients differ by {d_st:e}"))?;
    let main_only = strip_layers(batch, true, false, false);
    let mut worst: f64 = 0.0;
    for system in System::ALL {
        let mut a = small_tagger(system, &corpus, 2)?;
        let mut b = small_tagger(system, &corpus, 2)?;
        let (ga, gb) = (gradients(&mut a, batch, 0.0)?, gradients(&mut b, &main_only, 0.7)?);
        let ids: Vec<ParamId> = a.params().ids().collect();
        worst = worst.max(max_grad_diff(&ga, &gb, &ids));
    }
    ensure(worst <= 1e-10, format!("λ=0 vs main-only gradients differ by {worst:e}"))?;
    Ok(format!(
        "aux-exclusive params bitwise frozen over 10 steps (FSN/PSN/LWS); FSN−ST {d_st:.1e}; all systems vs main-only {worst:.1e}"
    ))
}

fn tagger_accuracy(m: &TaggerModel, corpus: &[Sentence]) -> sharenet_core::Result<(f64, f64)> {
    let (mut up, mut ug, mut sp, mut sg) = (vec![], vec![], vec![], vec![]);
    for s in corpus {
        let (u, t) = m.predict(s)?;
        up.extend(u);
        sp.extend(t);
        ug.extend(s.upos.clone().unwrap_or_default());
        sg.extend(s.semtags.clone().unwrap_or_default());
    }
    Ok((accuracy(&up, &ug)?, accuracy(&sp, &sg)?))
}

fn acc_metrics(m: &TaggerModel, corpus: &[Sentence]) -> sharenet_core::Result<Metrics> {
    let (u, s) = tagger_accuracy(m, corpus)?;
    Ok(Metrics::from([("upos".to_string(), u), ("semtag".to_string(), s)]))
}

/// First epoch at which `key` reached `target`, if it ended there.
fn reached(epochs: &[sharenet_core::training::EpochLog], key: &str, target: f64) -> Option<usize> {
    let last = epochs.last()?.dev.get(key).copied()?;
    if last < target {
        return None;
    }
    epochs.iter().find(|e| e.dev.get(key).is_some_and(|&v| v >= target)).map(|e| e.epoch)
}

const SMOKE_LIMIT: f64 = 180.0;

fn overfit() -> Outcome {
    let mut notes = Vec::new();
    let timed = |name: &str, t: Instant| -> Result<f64, String> {
        let s = t.elapsed().as_secs_f64();
        ensure(s < SMOKE_LIMIT, format!("{name} took {s:.0}s"))?;
        Ok(s)
    };

    let t = Instant::now();
    let corpus = correlated_tagging_corpus(50, 1, 0.0);
    let mut m = TaggerModel::new(System::St, ModelDims::default(), Vocabs::build(&corpus, &[]), 1).map_err(e2s)?;
    let r = train(&mut m, &quick(1.0, 8, 60, 3e-3), 1, &Corpus::new(corpus.clone(), vec![]), |m| acc_metrics(m, &corpus))
        .map_err(e2s)?;
    let fin = r.epochs.last().and_then(|e| e.dev.get("upos").copied()).unwrap_or(0.0);
    let ep = reached(&r.epochs, "upos", 0.99).ok_or(format!("ST tagger ended at {:.2}%", 100.0 * fin))?;
    notes.push(format!("ST tagger {:.1}% (≥99% at epoch {ep}, {:.0}s)", 100.0 * fin, timed("ST tagger", t)?));

    let corpus = correlated_tagging_corpus(200, 2, 0.0);
    for system in [System::Fsn, System::Psn, System::Lws] {
        let t = Instant::now();
        let mut m = TaggerModel::new(system, ModelDims::default(), Vocabs::build(&corpus, &[]), 1).map_err(e2s)?;
        train(&mut m, &quick(1.0, 8, 15, 3e-3), 1, &Corpus::new(corpus.clone(), vec![]), no_eval).map_err(e2s)?;
        let (u, s) = tagger_accuracy(&m, &corpus).map_err(e2s)?;
        ensure(u >= 0.95 && s >= 0.95, format!("{system}: upos {:.2}%, semtag {:.2}%", 100.0 * u, 100.0 * s))?;
        notes.push(format!("{system} {:.1}/{:.1}% ({:.0}s)", 100.0 * u, 100.0 * s, timed(&system.to_string(), t)?));
    }

    let t = Instant::now();
    let corpus = correlated_tagging_corpus(10, 2, 0.0);
    let mut p = ParserModel::new(System::St, ModelDims::default(), Vocabs::build(&corpus, &[]), 1).map_err(e2s)?;
    train(&mut p, &quick(1.0, 2, 60, 3e-3), 1, &Corpus::new(corpus.clone(), vec![]), no_eval).map_err(e2s)?;
    let mut att = AttachmentCounts::default();
    for s in &corpus {
        let gold = DependencyTree {
            heads: s.heads.clone().unwrap_or_default(),
            labels: s.deprels.clone().unwrap_or_default(),
        };
        att.add(&p.predict(s).map_err(e2s)?.tree, &gold).map_err(e2s)?;
    }
    ensure(att.uas() == 1.0, format!("parser UAS {:.2}%", 100.0 * att.uas()))?;
    notes.push(format!("parser UAS 100% ({:.0}s)", timed("parser", t)?));

    let t = Instant::now();
    let pairs = nli_pairs();
    let vocabs = Vocabs::build(pairs.iter().flat_map(|p| [&p.premise, &p.hypothesis]), &[]);
    let mut n = NliModel::new(System::St, ModelDims::default(), vocabs, 1).map_err(e2s)?;
    train(&mut n, &quick(1.0, 4, 60, 3e-3), 1, &Corpus::new(pairs.clone(), vec![]), no_eval).map_err(e2s)?;
    let mut ok = 0;
    for p in &pairs {
        ok += usize::from(n.predict(p).map_err(e2s)?.label == p.label);
    }
    ensure(ok == pairs.len(), format!("NLI {ok}/{}", pairs.len()))?;
    notes.push(format!("NLI 8/8 ({:.0}s)", timed("NLI", t)?));
    Ok(notes.join("; "))
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn analysis_pipeline() -> Outcome {
    let rows = [
        ("fsn", [true, false, false, false, true]),
        ("st", [true, true, false, false, false]),
        ("psn", [true, true, true, false, false]),
        ("lws", [false, true, true, true, true]),
    ];
    let outputs: BTreeMap<String, BTreeMap<String, bool>> = rows
        .iter()
        .map(|(s, c)| (s.to_string(), c.iter().enumerate().map(|(i, &ok)| (format!("i{}", i + 1), ok)).collect()))
        .collect();
    let sets = comparison_sets(&outputs, &strs(&["fsn", "st", "psn", "lws"])).map_err(e2s)?;
    let got: Vec<(String, Vec<String>)> = sets.iter().map(|s| (s.name(), s.members.clone())).collect();
    let want: Vec<(String, Vec<String>)> = [
        ("lws-fsn", &["i2", "i3", "i4"][..]),
        ("lws-st", &["i3", "i4", "i5"]),
        ("lws-psn", &["i4", "i5"]),
        ("psn-fsn", &["i2", "i3"]),
        ("psn-st", &["i3"]),
        ("st-fsn", &["i2"]),
    ]
    .iter()
    .map(|(n, m)| (n.to_string(), strs(m)))
    .collect();
    ensure(got == want, format!("comparison sets {got:?}"))?;

    let set = ComparisonSet {
        superior: "x".into(),
        inferior: "y".into(),
        members: strs(&["s1"]),
    };
    let tags = BTreeMap::from([
        ("s1".to_string(), strs(&["A", "A", "B", "B"])),
        ("s2".to_string(), strs(&["B", "B", "C", "C"])),
    ]);
    let full: Vec<Vec<String>> = tags.values().cloned().collect();
    let r = normalized_tag_frequencies(&set, &tags, &full).map_err(e2s)?;
    let want = vec![("A".to_string(), 2.0), ("B".to_string(), 1.0), ("C".to_string(), 0.0)];
    ensure(r == want, format!("toy ratios {r:?}"))?;
    let all = ComparisonSet {
        members: strs(&["s1", "s2"]),
        ..set
    };
    let r = normalized_tag_frequencies(&all, &tags, &full).map_err(e2s)?;
    ensure(r.iter().all(|(_, v)| *v == 1.0), format!("set == test ratios {r:?}"))?;

    let (mut golds, mut preds) = (Vec::new(), Vec::new());
    for (g, p, n) in [("a", "a", 5), ("a", "b", 1), ("b", "a", 2), ("b", "b", 4)] {
        golds.extend(std::iter::repeat_n(g, n));
        preds.extend(std::iter::repeat_n(p, n));
    }
    let t = per_label_prf(&preds, &golds, &["a", "b"]).map_err(e2s)?;
    let close = |x: Option<f64>, y: f64| x.is_some_and(|x| (x - y).abs() <= 1e-12);
    ensure(
        close(t[0].precision, 5.0 / 7.0)
            && close(t[0].recall, 5.0 / 6.0)
            && close(t[1].precision, 4.0 / 5.0)
            && close(t[1].recall, 4.0 / 6.0),
        format!("P/R table {t:?}"),
    )?;
    Ok("6 hand-checked sets; ratios {A:2, B:1, C:0}; set==test → 1.0; P/R of [[5,1],[2,4]]".into())
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_recall: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.random_range(1..12);
        let mut tree = || DependencyTree {
            heads: (0..n).map(|_| rng.random_range(0..=n)).collect(),
            labels: (0..n).map(|_| ["a", "b", "c"][rng.random_range(0..3)].to_string()).collect(),
        };
        let (pred, gold) = (tree(), tree());
        let (las, uas) = las_uas(&pred, &gold).map_err(e2s)?;
        ensure(las <= uas, format!("trial {trial}: LAS {las} > UAS {uas}"))?;

        let labels = strs(&["x", "y", "z", "w"]);
        let g: Vec<String> = (0..n).map(|_| labels[rng.random_range(0..4)].clone()).collect();
        let p: Vec<String> = (0..n).map(|_| labels[rng.random_range(0..4)].clone()).collect();
        let table = per_label_prf(&p, &g, &labels).map_err(e2s)?;
        let diff = (micro_recall(&table) - accuracy(&p, &g).map_err(e2s)?).abs();
        worst_recall = worst_recall.max(diff);
    }
    ensure(worst_recall <= 1e-12, format!("micro recall off accuracy by {worst_recall:e}"))?;
    Ok(format!("1000 trials: LAS ≤ UAS; |micro recall − accuracy| ≤ {worst_recall:.1e}"))
}

fn determinism() -> Outcome {
    let corpus = correlated_tagging_corpus(12, 6, 0.1);
    let cfg = TrainingConfig {
        dropout: 0.3,
        recurrent_dropout: 0.3,
        ..quick(0.5, 4, 2, 1e-2)
    };
    let run = || -> Result<Vec<u8>, String> {
        let mut m = TaggerModel::new(System::Lws, ModelDims::default(), Vocabs::build(&corpus, &[]), 4).map_err(e2s)?;
        train(&mut m, &cfg, 11, &Corpus::new(corpus.clone(), vec![]), no_eval).map_err(e2s)?;
        checkpoint::to_bytes(m.params(), DType::F64).map_err(e2s)
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, "same seed gave different checkpoints")?;

    let dir = tempfile::tempdir().map_err(e2s)?;
    let mut files = 0;
    for split in ["train", "dev", "test"] {
        let src = read_conllu(&fixture(&format!("ud/{split}.conllu"))).map_err(e2s)?;
        let out = dir.path().join("x.conllu");
        write_conllu(&out, &src).map_err(e2s)?;
        ensure(read_conllu(&out).map_err(e2s)? == src, format!("ud/{split}.conllu round trip"))?;
        let src = read_semtag_tsv(&fixture(&format!("semtag/{split}.tsv"))).map_err(e2s)?;
        let out = dir.path().join("x.tsv");
        write_semtag_tsv(&out, &src).map_err(e2s)?;
        ensure(read_semtag_tsv(&out).map_err(e2s)? == src, format!("semtag/{split}.tsv round trip"))?;
        files += 2;
    }

    let m = TaggerModel::new(System::Psn, ModelDims::default(), Vocabs::build(&corpus, &[]), 2).map_err(e2s)?;
    let path = dir.path().join("m.ckpt");
    checkpoint::save(m.params(), &path, DType::F64).map_err(e2s)?;
    let back = checkpoint::load(&path).map_err(e2s)?;
    ensure(back.values_bitwise_eq(m.params()), "checkpoint load changed values")?;
    let mut fresh = TaggerModel::new(System::Psn, ModelDims::default(), Vocabs::build(&corpus, &[]), 99).map_err(e2s)?;
    checkpoint::restore(fresh.params_mut(), &path).map_err(e2s)?;
    ensure(fresh.params().values_bitwise_eq(m.params()), "checkpoint restore changed values")?;
    Ok(format!("identical {}-byte checkpoints; {files} fixture round trips; save/load/restore bitwise", a.len()))
}

fn direction_check() -> Outcome {
    let dev = correlated_tagging_corpus(100, 1000, 0.0);
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=5u64 {
        let noisy = correlated_tagging_corpus(100, seed, 0.3);
        let vocabs = Vocabs::build(noisy.iter().chain(&dev), &[]);
        let mut acc = BTreeMap::new();
        for system in [System::St, System::Lws] {
            let mut m = TaggerModel::new(system, ModelDims::default(), vocabs.clone(), seed).map_err(e2s)?;
            train(&mut m, &quick(1.0, 8, 10, 3e-3), seed, &Corpus::new(noisy.clone(), vec![]), no_eval).map_err(e2s)?;
            acc.insert(system.to_string(), tagger_accuracy(&m, &dev).map_err(e2s)?.0);
        }
        let (lws, st) = (acc["lws"], acc["st"]);
        wins += usize::from(lws >= st);
        rows.push(format!("{:.1}/{:.1}", 100.0 * lws, 100.0 * st));
    }
    let detail = format!("LWS ≥ ST dev UPOS in {wins}/5 seeds (lws/st: {})", rows.join(", "));
    if wins >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let battery = run_battery(VerifyOptions::default());
    let battery_time = start.elapsed();

    let criteria: Vec<Criterion> = vec![
        (1, "gradient fidelity", true, Box::new(|| gradient_fidelity(&battery, battery_time))),
        (2, "MST oracle equivalence", true, Box::new(|| battery_subset(&battery, &["mst/"]))),
        (
            3,
            "sharing structure",
            true,
            Box::new(|| {
                let checks = battery_subset(
                    &battery,
                    &["sharing/fsn-no-private", "sharing/psn-isolation", "sharing/lws-asymmetry"],
                )?;
                Ok(format!("{}; {checks}", structure_reports()?))
            }),
        ),
        (4, "LWS gate analytics", true, Box::new(|| battery_subset(&battery, &["sharing/gate-analytics"]))),
        (5, "λ-ablation contract", true, Box::new(lambda_ablation)),
        (6, "overfit smoke tests", true, Box::new(overfit)),
        (7, "analysis pipeline", true, Box::new(analysis_pipeline)),
        (8, "metric identities", true, Box::new(metric_identities)),
        (9, "determinism and round trips", true, Box::new(determinism)),
        (10, "qualitative direction (non-gating)", false, Box::new(direction_check)),
    ];

    let mut gating_failures = 0;
    for (n, name, gating, check) in &criteria {
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        let (mark, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => (if *gating { "FAIL" } else { "MISS" }, d),
        };
        println!("criterion {n:>2} {mark}  {name}: {detail} [{secs:.1}s]");
        if outcome.is_err() && *gating {
            gating_failures += 1;
        }
    }
    if gating_failures == 0 {
        println!("acceptance: all gating criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {gating_failures} gating criteria failed");
        ExitCode::FAILURE
    }
}
