use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use sharenet_core::analysis::{
    comparison_sets, emit_frequency_plot, normalized_tag_frequencies, per_label_prf, EvalReport, Labels, LabelPrf,
    PredictionRecord,
};
use sharenet_core::autodiff::Fault;
use sharenet_core::data::{read_conllu, read_semtag_tsv, write_conllu, write_semtag_tsv, Sentence};
use sharenet_core::nn::checkpoint::{self, DType};
use sharenet_core::tasks::Vocabs;
use sharenet_core::training::{
    aggregate, evaluate_nli, evaluate_parser, evaluate_tagger, load_task_data, run_experiment, MultiRunSummary,
    RunConfig, RunResult, TaskData, TaskKind, TrainedModel,
};
use sharenet_core::verify::{all_passed, run_battery, VerifyOptions};

use crate::config;
use crate::{CliError, FaultArg, Split};

type Res<T = ()> = Result<T, CliError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Res {
    fs::write(path, contents).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn fmt_metrics(m: &BTreeMap<String, f64>) -> String {
    m.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" ")
}

pub fn train(spec: &str, overrides: &[String], out: Option<PathBuf>) -> Res {
    let (cfg, name) = config::load(spec)?;
    let cfg = config::apply_overrides(cfg, overrides)?;
    let cfg = config::resolve_paths(cfg, &config::fixture_root());
    cfg.validate()?;
    let data = load_task_data(&cfg)?;
    let out = out.unwrap_or_else(|| Path::new("runs").join(&name));
    fs::create_dir_all(&out)?;
    write(&out.join("resolved_config.toml"), config::to_toml(&cfg))?;

    let mut results = Vec::with_capacity(cfg.run.runs);
    for i in 0..cfg.run.runs as u64 {
        let seed = cfg.run.seed + i;
        let dir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let mut seed_cfg = cfg.clone();
        seed_cfg.run.seed = seed;
        seed_cfg.run.runs = 1;
        write(&dir.join("resolved_config.toml"), config::to_toml(&seed_cfg))?;

        let pretrain = (cfg.run.task == TaskKind::Nli && cfg.data.pretrain_aux).then(|| dir.join("pretrain.ckpt"));
        let exp = run_experiment(&cfg, &data, seed, pretrain.as_deref())?;
        for e in &exp.result.epochs {
            println!(
                "seed {seed} epoch {:>3}  train {}  dev {}",
                e.epoch,
                fmt_metrics(&e.train),
                fmt_metrics(&e.dev)
            );
        }
        println!("seed {seed} test  {}", fmt_metrics(&exp.result.test));

        write(&dir.join("metrics.csv"), exp.result.metrics_csv())?;
        write(&dir.join("result.json"), json(&exp.result))?;
        checkpoint::save(exp.model.params(), &dir.join("model.ckpt"), DType::F64)?;
        write(&dir.join("vocabs.json"), json(exp.model.vocabs()))?;
        PredictionRecord::write_jsonl(&dir.join("predictions.jsonl"), &exp.predictions)?;
        write(&dir.join("test_report.json"), exp.test_report.to_json()? + "\n")?;
        let structure = exp.model.structure();
        write(&dir.join("structure.txt"), structure.to_kv())?;
        if !exp.annotated.is_empty() {
            write_conllu(&dir.join("annotated.conllu"), &exp.annotated)?;
        }
        if i == 0 {
            print!("{structure}");
        }
        results.push(exp.result);
    }
    let summary = aggregate(results);
    write(&out.join("summary.json"), json(&summary))?;
    print_summary(&summary);
    println!("wrote {}", out.display());
    Ok(())
}

fn print_summary(s: &MultiRunSummary) {
    println!("{} run(s)", s.runs.len());
    for (k, mean) in &s.mean {
        let sd = s.stdev.get(k).copied().unwrap_or(0.0);
        println!("  {k:<20}{:>8} ± {}", pct(*mean), pct(sd));
    }
}

/// Rebuilds the model of a `seed-N` run directory from its checkpoint.
fn load_run(run: &Path) -> Res<(RunConfig, TrainedModel)> {
    let cfg = config::read_resolved(run)?;
    let vpath = run.join("vocabs.json");
    let text = fs::read_to_string(&vpath)
        .map_err(|e| CliError::Usage(format!("{}: {e} (expected a seed-N run directory)", vpath.display())))?;
    let vocabs: Vocabs = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", vpath.display())))?;
    let mut model = TrainedModel::build(&cfg, vocabs, cfg.run.seed)?;
    checkpoint::restore(model.params_mut(), &run.join("model.ckpt"))?;
    let steps = fs::read_to_string(run.join("result.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<RunResult>(&t).ok())
        .map_or(1, |r| r.steps);
    model.mark_trained(steps);
    Ok((cfg, model))
}

pub fn eval(run: &Path, split: Split, out: Option<&Path>) -> Res {
    let (cfg, model) = load_run(run)?;
    let data = load_task_data(&cfg)?;
    let test = split == Split::Test;
    let mut report: EvalReport = match (&model, &data) {
        (TrainedModel::Tagger(m), TaskData::Tagging { dev, test: t, aux_dev, aux_test, .. }) => {
            let (main, aux) = if test { (t, aux_test) } else { (dev, aux_dev) };
            evaluate_tagger(m, main, aux, true)?.0
        }
        (TrainedModel::Parser(m), TaskData::Parsing { dev, test: t, .. }) => {
            evaluate_parser(m, if test { t } else { dev }, true)?.0
        }
        (TrainedModel::Nli(m), TaskData::Nli { dev, test: t, .. }) => evaluate_nli(m, if test { t } else { dev }, true)?.0,
        _ => return Err(CliError::Usage("run config and checkpoint disagree on the task".into())),
    };
    report.split = if test { "test" } else { "dev" }.into();
    if report.metrics.is_empty() {
        return Err(CliError::Failed(format!("no gold annotations in the {} split", report.split)));
    }
    print!("{report}");
    if let Some(out) = out {
        write(out, report.to_json()? + "\n")?;
    }
    Ok(())
}

fn read_input(path: &Path) -> Res<Vec<Sentence>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    Ok(match ext {
        "conllu" => read_conllu(path)?,
        "tsv" => read_semtag_tsv(path)?,
        _ => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            text.lines()
                .map(str::split_whitespace)
                .map(|t| t.map(String::from).collect::<Vec<_>>())
                .filter(|t| !t.is_empty())
                .enumerate()
                .map(|(i, t)| Sentence::new(format!("line-{}", i + 1), t))
                .collect()
        }
    })
}

pub fn tag(run: &Path, input: &Path, output: &Path) -> Res {
    let (cfg, model) = load_run(run)?;
    let sentences = read_input(input)?;
    let uses_aux = cfg.run.system.uses_aux();
    let tsv_out = output.extension().is_some_and(|e| e == "tsv");
    if tsv_out && !uses_aux {
        return Err(CliError::Usage(format!(
            "system {} has no semantic-tag output; write CoNLL-U instead",
            cfg.run.system
        )));
    }
    let mut out = Vec::with_capacity(sentences.len());
    for s in sentences {
        let mut a = s.clone();
        match &model {
            TrainedModel::Tagger(m) => {
                let (upos, semtags) = m.predict(&s)?;
                if uses_aux {
                    a.semtags = Some(semtags);
                }
                a.upos.get_or_insert(upos);
            }
            TrainedModel::Parser(m) => {
                a = m.annotate(&s)?;
                // keep given tags, predict the rest
                if s.upos.is_some() {
                    a.upos = s.upos.clone();
                }
            }
            TrainedModel::Nli(_) => {
                return Err(CliError::Usage("tag needs a tagging or parsing run, not an inference run".into()))
            }
        }
        out.push(a);
    }
    if tsv_out {
        write_semtag_tsv(output, &out)?;
    } else {
        write_conllu(output, &out)?;
    }
    println!("tagged {} sentence(s) -> {}", out.len(), output.display());
    Ok(())
}

fn flat(l: &Labels) -> Vec<String> {
    match l {
        Labels::One(s) => vec![s.clone()],
        Labels::Many(v) => v.clone(),
    }
}

/// `head:rel` arc labels are scored on the relation alone.
fn relation(label: &str) -> &str {
    match label.split_once(':') {
        Some((h, rel)) if h.bytes().all(|b| b.is_ascii_digit()) => rel,
        _ => label,
    }
}

fn per_label_table(records: &[PredictionRecord]) -> Res<Vec<LabelPrf>> {
    let (mut pred, mut gold) = (Vec::new(), Vec::new());
    for r in records {
        let (g, p) = (flat(&r.gold), flat(&r.pred));
        gold.extend(g.iter().map(|s| relation(s).to_string()));
        pred.extend(p.iter().map(|s| relation(s).to_string()));
    }
    let labels: Vec<String> = gold.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    per_label_prf(&pred, &gold, &labels).map_err(|e| CliError::Usage(e.to_string()))
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "—".into(), pct)
}

/// Checks that every dump covers the same instances with the same gold
/// labels, in the same order.
fn check_aligned(dumps: &[(String, Vec<PredictionRecord>)]) -> Res {
    let (first_sys, first) = &dumps[0];
    let mut seen = BTreeSet::new();
    for r in first {
        if !seen.insert(&r.id) {
            return Err(CliError::Usage(format!("dump {first_sys}: duplicate instance {:?}", r.id)));
        }
    }
    for (sys, recs) in &dumps[1..] {
        if recs.len() != first.len() {
            return Err(CliError::Usage(format!(
                "misaligned dumps: {first_sys} has {} instances, {sys} has {}",
                first.len(),
                recs.len()
            )));
        }
        for (a, b) in first.iter().zip(recs) {
            if a.id != b.id {
                return Err(CliError::Usage(format!(
                    "misaligned dumps: {first_sys} has {:?} where {sys} has {:?}",
                    a.id, b.id
                )));
            }
            if a.gold != b.gold {
                return Err(CliError::Usage(format!("misaligned dumps: gold labels of {:?} differ in {sys}", a.id)));
            }
        }
    }
    Ok(())
}

pub fn analyze(specs: &[String], ranking: Option<Vec<String>>, out: &Path) -> Res {
    let mut dumps: Vec<(String, Vec<PredictionRecord>)> = Vec::new();
    for spec in specs {
        let (sys, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--dump {spec:?} is not SYSTEM=PATH")))?;
        if dumps.iter().any(|(s, _)| s == sys) {
            return Err(CliError::Usage(format!("system {sys:?} given twice")));
        }
        dumps.push((sys.to_string(), PredictionRecord::read_jsonl(Path::new(path))?));
    }
    if dumps.len() < 2 {
        return Err(CliError::Usage("analyze needs at least two dumps".into()));
    }
    check_aligned(&dumps)?;
    let ranking = ranking.unwrap_or_else(|| dumps.iter().map(|(s, _)| s.clone()).collect());
    let outputs: BTreeMap<String, BTreeMap<String, bool>> = dumps
        .iter()
        .map(|(s, recs)| (s.clone(), recs.iter().map(|r| (r.id.clone(), r.correct())).collect()))
        .collect();
    let sets = comparison_sets(&outputs, &ranking).map_err(|e| CliError::Usage(e.to_string()))?;

    for sub in ["sets", "freq", "per_label"] {
        fs::create_dir_all(out.join(sub))?;
    }
    write(&out.join("sets.json"), json(&sets))?;
    let by_sys: BTreeMap<&str, &Vec<PredictionRecord>> = dumps.iter().map(|(s, r)| (s.as_str(), r)).collect();
    let mut summary = String::from("system\tinstances\tcorrect\taccuracy\n");
    for (sys, recs) in &dumps {
        let c = recs.iter().filter(|r| r.correct()).count();
        summary.push_str(&format!("{sys}\t{}\t{c}\t{}\n", recs.len(), pct(c as f64 / recs.len().max(1) as f64)));
    }
    summary.push_str("\nset\tsize\n");
    for set in &sets {
        let name = set.name();
        let mut ids = set.members.join("\n");
        if !ids.is_empty() {
            ids.push('\n');
        }
        write(&out.join("sets").join(format!("{name}.txt")), ids)?;
        summary.push_str(&format!("{name}\t{}\n", set.members.len()));
        if set.members.is_empty() {
            eprintln!("warning: comparison set {name} is empty");
            continue;
        }
        // tag distribution from the superior system, else the best-ranked
        // system that predicted tags
        let source = std::iter::once(&set.superior)
            .chain(ranking.iter().rev())
            .map(|s| by_sys[s.as_str()])
            .find(|recs| recs.iter().all(|r| r.semtags_pred.is_some()));
        let Some(source) = source else {
            eprintln!("warning: no dump carries semantic tags; skipping frequencies for {name}");
            continue;
        };
        let tags: BTreeMap<String, Vec<String>> = source
            .iter()
            .map(|r| (r.id.clone(), r.semtags_pred.clone().unwrap_or_default()))
            .collect();
        let full: Vec<Vec<String>> = tags.values().cloned().collect();
        let ratios = normalized_tag_frequencies(set, &tags, &full).map_err(|e| CliError::Failed(e.to_string()))?;
        emit_frequency_plot(&ratios, &out.join("freq").join(&name))?;
    }
    if sets.iter().all(|s| s.members.is_empty()) {
        eprintln!("warning: every comparison set is empty; the dumps agree on every instance");
    }
    for (sys, recs) in &dumps {
        let mut tsv = String::from("label\tprecision\trecall\tsupport\n");
        for r in per_label_table(recs)? {
            tsv.push_str(&format!("{}\t{}\t{}\t{}\n", r.label, opt_pct(r.precision), opt_pct(r.recall), r.support));
        }
        write(&out.join("per_label").join(format!("{sys}.tsv")), tsv)?;
    }
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("wrote {}", out.display());
    Ok(())
}

pub fn verify(fault: Option<FaultArg>, skip_models: bool) -> Res {
    let opts = VerifyOptions {
        fault: fault.map(|FaultArg::SigmoidGrad| Fault::SigmoidGrad),
        skip_models,
    };
    let outcomes = run_battery(opts);
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    println!("{}/{} checks passed", outcomes.len() - failed.len(), outcomes.len());
    if all_passed(&outcomes) {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
    }
}

fn report_seed(dir: &Path) -> Res {
    let path = dir.join("test_report.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let rep = EvalReport::from_json(&text)?;
    println!("== {}", dir.display());
    print!("{rep}");
    if let Ok(kv) = fs::read_to_string(dir.join("structure.txt")) {
        println!("  structure: {}", kv.lines().collect::<Vec<_>>().join(" "));
    }
    Ok(())
}

pub fn report(dirs: &[PathBuf]) -> Res {
    for dir in dirs {
        let summary = dir.join("summary.json");
        if summary.is_file() {
            let text = fs::read_to_string(&summary)?;
            let s: MultiRunSummary =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", summary.display())))?;
            println!("== {}", dir.display());
            print_summary(&s);
            let mut seeds: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("test_report.json").is_file())
                .collect();
            seeds.sort();
            for s in seeds {
                report_seed(&s)?;
            }
        } else if dir.join("test_report.json").is_file() {
            report_seed(dir)?;
        } else {
            return Err(CliError::Usage(format!("{} is not a run directory", dir.display())));
        }
    }
    Ok(())
}
