//! Self-check battery: op and model gradient checks against central
//! differences, MST decoding against exhaustive enumeration, and the
//! sharing-topology invariants.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_param_gradients, Fault, ParamStore, Tape, Var};
use crate::data::{NliInstance, Sentence};
use crate::error::{Error, Result};
use crate::nn::{Ctx, InitScheme};
use crate::sharing::{build_topology, lws_gate, psn_forward, LayerSpec, SubspaceSplit, TaskId, TaskStates, TopologySpec};
use crate::synthetic::nli_pairs;
use crate::tasks::{
    check_model_gradients, is_tree, mst_decode, tree_score, ModelDims, MultiTaskModel, NliModel, ParserModel, System,
    TaggerModel, Vocabs,
};
use crate::tensor::Tensor;

/// Largest accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark}  {:<28} {} ({:.2}s)", self.name, self.detail, self.seconds)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    /// Corrupts a backward rule on every tape the battery builds.
    pub fault: Option<Fault>,
    /// Skip the end-to-end model gradient checks. They are always skipped
    /// under a fault, which only reaches tapes the battery builds itself.
    pub skip_models: bool,
}

fn timed(name: impl Into<String>, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every check, in a fixed order.
pub fn run_battery(opts: VerifyOptions) -> Vec<CheckOutcome> {
    let mut out = op_checks(opts.fault);
    if !opts.skip_models && opts.fault.is_none() {
        out.extend(model_checks());
    }
    out.push(timed("mst/oracle", mst_oracle));
    out.extend(sharing_checks());
    out
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

/// Gradient check of one op. The op output is contracted with fixed random
/// weights so every output coordinate contributes.
fn op_check(name: &str, shapes: &[&[usize]], fault: Option<Fault>, build: Build) -> CheckOutcome {
    timed(format!("grad/{name}"), || {
        let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
        let mut params = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| params.add(format!("x{i}"), random(s, &mut rng)))
            .collect();
        let weights_seed = rng.random::<u64>();
        let loss = |p: &mut ParamStore, backward: bool| -> Result<f64> {
            let mut tape = Tape::new();
            tape.inject_fault(fault);
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(p, id)).collect();
            let out = build(&mut tape, &vars)?;
            let w = random(tape.shape(out), &mut ChaCha8Rng::seed_from_u64(weights_seed));
            let w = tape.constant(w);
            let prod = tape.mul(out, w)?;
            let l = tape.sum(prod)?;
            if backward {
                tape.backward(l, p)?;
            }
            Ok(tape.value(l).item())
        };
        let report = check_param_gradients(&mut params, loss, 1e-5, 64, 1)?;
        let err = report.max_rel_error();
        Ok((err <= GRAD_TOLERANCE, format!("max rel err {err:.2e}")))
    })
}

/// One gradient check per differentiable tape op.
pub fn op_checks(fault: Option<Fault>) -> Vec<CheckOutcome> {
    let table: &[(&str, &[&[usize]], Build)] = &[
        ("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("add", &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1])),
        ("sub", &[&[2, 3], &[2, 3]], |t, v| t.sub(v[0], v[1])),
        ("mul", &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1])),
        ("add_row", &[&[3, 4], &[1, 4]], |t, v| t.add_row(v[0], v[1])),
        ("scale", &[&[2, 3]], |t, v| t.scale(v[0], -0.7)),
        ("mul_const", &[&[2, 3]], |t, v| {
            t.mul_const(v[0], Tensor::new(vec![2, 3], vec![0.0, 2.0, 1.0, 2.0, 0.0, 0.5]).unwrap())
        }),
        ("sigmoid", &[&[2, 3]], |t, v| t.sigmoid(v[0])),
        ("tanh", &[&[2, 3]], |t, v| t.tanh(v[0])),
        ("relu", &[&[3, 3]], |t, v| t.relu(v[0])),
        ("transpose", &[&[2, 3]], |t, v| t.transpose(v[0])),
        ("reshape", &[&[2, 3]], |t, v| t.reshape(v[0], &[3, 2])),
        ("concat", &[&[2, 3], &[2, 2]], |t, v| t.concat(&[v[0], v[1]], 1)),
        ("narrow", &[&[3, 5]], |t, v| t.narrow(v[0], 1, 1, 3)),
        ("row", &[&[3, 4]], |t, v| t.row(v[0], 2)),
        ("sum", &[&[2, 3]], |t, v| t.sum(v[0])),
        ("mean", &[&[2, 3]], |t, v| t.mean(v[0])),
        ("mean_axis", &[&[4, 3]], |t, v| t.mean_axis(v[0], 0)),
        ("max_axis", &[&[4, 3]], |t, v| t.max_axis(v[0], 0)),
        ("softmax_rows", &[&[3, 4]], |t, v| t.softmax_rows(v[0])),
        ("gather_rows", &[&[5, 3]], |t, v| t.gather_rows(v[0], &[4, 1, 1, 3], Some(0))),
        ("block_row_dot", &[&[3, 6], &[3, 2]], |t, v| t.block_row_dot(v[0], v[1])),
        ("softmax_cross_entropy", &[&[4, 3]], |t, v| {
            t.softmax_cross_entropy(v[0], &[2, 0, 1, 1], &[true, true, false, true])
        }),
        ("lws_gate", &[&[1, 2], &[1, 1], &[1, 2], &[2, 1]], |t, v| {
            let (m, a) = lws_gate(t, v[0], v[1], v[2], v[3])?;
            t.concat(&[m, a], 1)
        }),
    ];
    table
        .iter()
        .map(|(name, shapes, build)| op_check(name, shapes, fault, *build))
        .collect()
}

/// A four-token sentence carrying every annotation layer.
pub fn toy_sentence() -> Sentence {
    let w = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
    Sentence {
        id: "toy".into(),
        tokens: w("the dog sees John"),
        upos: Some(w("DET NOUN VERB PROPN")),
        semtags: Some(w("DEF CON ENS PER")),
        heads: Some(vec![2, 3, 0, 3]),
        deprels: Some(w("det nsubj root obj")),
    }
}

fn toy_pair() -> NliInstance {
    nli_pairs().swap_remove(2)
}

fn toy_dims() -> ModelDims {
    ModelDims {
        embed_dim: 32,
        hidden_dim: 32,
        ..Default::default()
    }
}

fn model_check<M: MultiTaskModel>(name: String, mut model: M, instance: &M::Instance) -> CheckOutcome {
    timed(name, || {
        let report = check_model_gradients(&mut model, instance, 0.5, 1e-3, 8, 7)?;
        let err = report.max_rel_error();
        let worst = report.worst().map(|p| p.name.as_str()).unwrap_or("-");
        Ok((
            err <= GRAD_TOLERANCE,
            format!("max rel err {err:.2e} over {} coords (worst {worst})", report.coordinates()),
        ))
    })
}

/// End-to-end gradient checks of the three task models under every system.
pub fn model_checks() -> Vec<CheckOutcome> {
    let s = toy_sentence();
    let pair = toy_pair();
    let tag_vocabs = Vocabs::build([&s], &[]);
    let nli_vocabs = Vocabs::build([&pair.premise, &pair.hypothesis], &[]);
    let mut out = Vec::new();
    for system in System::ALL {
        let build = || -> Result<_> {
            Ok((
                TaggerModel::new(system, toy_dims(), tag_vocabs.clone(), 1)?,
                ParserModel::new(system, toy_dims(), tag_vocabs.clone(), 2)?,
                NliModel::new(system, toy_dims(), nli_vocabs.clone(), 3)?,
            ))
        };
        match build() {
            Ok((t, p, n)) => {
                out.push(model_check(format!("grad/model/tagger-{system}"), t, &s));
                out.push(model_check(format!("grad/model/parser-{system}"), p, &s));
                out.push(model_check(format!("grad/model/nli-{system}"), n, &pair));
            }
            Err(e) => out.push(timed(format!("grad/model/{system}"), || Err(e))),
        }
    }
    out
}

/// Best single-root tree by enumerating all head arrays.
fn exhaustive_best(scores: &Tensor) -> f64 {
    let n = scores.shape()[0];
    let mut heads = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    'outer: loop {
        if is_tree(&heads) {
            best = best.max(tree_score(scores, &heads));
        }
        for h in heads.iter_mut() {
            *h += 1;
            if *h <= n {
                continue 'outer;
            }
            *h = 0;
        }
        return best;
    }
}

fn mst_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2018);
    let mut cases: Vec<Tensor> = (0..500).map(|_| random(&[5, 6], &mut rng)).collect();
    // strong cycles among tokens with weak root edges
    for k in 2..=5 {
        let mut t = Tensor::full(&[5, 6], -1.0);
        for d in 0..k {
            let head = (d + 1) % k + 1;
            t.data_mut()[d * 6 + head] = 10.0 + d as f64;
        }
        cases.push(t);
    }
    let mut ties = Tensor::full(&[5, 6], 0.0);
    ties.data_mut()[0] = 1.0;
    cases.push(ties);
    let mut mismatches = 0;
    for s in &cases {
        let heads = mst_decode(s)?;
        if !is_tree(&heads) || (tree_score(s, &heads) - exhaustive_best(s)).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{} instances, {mismatches} mismatches", cases.len())))
}

/// FSN privacy, PSN isolation, LWS directional asymmetry and gate
/// analytics.
pub fn sharing_checks() -> Vec<CheckOutcome> {
    let s = toy_sentence();
    let vocabs = Vocabs::build([&s], &[]);
    vec![
        timed("sharing/fsn-no-private", || {
            let m = TaggerModel::new(System::Fsn, toy_dims(), vocabs.clone(), 1)?;
            let r = m.structure();
            let private = r.private_main + r.private_aux + r.subspace_main + r.subspace_aux + r.gates;
            Ok((private == 0 && r.shared > 0, format!("shared={} private={private}", r.shared)))
        }),
        timed("sharing/psn-isolation", || {
            let spec = TopologySpec::psn(
                &[LayerSpec::bilstm(4, 3)],
                &[LayerSpec::bilstm(6, 3)],
                &[LayerSpec::sigmoid_dense(6, 5)],
            );
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut params = ParamStore::new();
            let topo = build_topology(&mut params, "v", &spec, InitScheme::default(), &mut rng)?;
            let mut tape = Tape::new();
            let x = tape.constant(random(&[4, 4], &mut rng));
            let h = psn_forward(&topo, &mut tape, &params, x, TaskId::Main, &mut Ctx::eval())?;
            let sq = tape.mul(h, h)?;
            let l = tape.sum(sq)?;
            tape.backward(l, &mut params)?;
            let leak: f64 = topo
                .exclusive_param_ids(TaskId::Aux)
                .iter()
                .map(|&id| params.grad(id).norm_sq())
                .sum();
            Ok((leak == 0.0, format!("|∂main/∂aux-private|² = {leak}")))
        }),
        timed("sharing/lws-asymmetry", || {
            let spec = TopologySpec::lws(
                &[LayerSpec::bilstm(4, 4)],
                Some(SubspaceSplit {
                    shared_dim: 5,
                    private_dim: 3,
                }),
                &[],
                &[],
            );
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut params = ParamStore::new();
            let topo = build_topology(&mut params, "v", &spec, InitScheme::default(), &mut rng)?;
            let x = random(&[3, 4], &mut rng);
            let run = |params: &ParamStore| -> Result<(Tensor, Tensor)> {
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let s = topo.forward_level(0, &mut tape, params, TaskStates { main: xv, aux: xv }, &mut Ctx::eval())?;
                Ok((tape.value(s.main).clone(), tape.value(s.aux).clone()))
            };
            let (m0, a0) = run(&params)?;
            let a2m = params
                .find("v.l0.gate.a2m")
                .ok_or_else(|| Error::Invalid("no a2m gate".into()))?;
            params.value_mut(a2m).data_mut().iter_mut().for_each(|w| *w += 0.75);
            let (m1, a1) = run(&params)?;
            let aux_same = a0.data().iter().zip(a1.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            Ok((aux_same && m0 != m1, format!("aux bitwise unchanged={aux_same}, main changed={}", m0 != m1)))
        }),
        timed("sharing/gate-analytics", || {
            let mut tape = Tape::new();
            let hm = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.0]])?);
            let ha = tape.constant(Tensor::from_rows(&[vec![4.0, 5.0]])?);
            let z1 = tape.constant(Tensor::zeros(&[2, 3]));
            let z2 = tape.constant(Tensor::zeros(&[3, 2]));
            let (gm, ga) = lws_gate(&mut tape, hm, ha, z1, z2)?;
            let halves = tape.value(gm).data() == [0.5, -1.0, 1.5] && tape.value(ga).data() == [2.0, 2.5];

            let hm = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]])?);
            let ha = tape.constant(Tensor::from_rows(&[vec![3.0]])?);
            let a2m = tape.constant(Tensor::from_rows(&[vec![0.1, -0.2]])?);
            let m2a = tape.constant(Tensor::from_rows(&[vec![0.4], vec![-0.3]])?);
            let (gm, _) = lws_gate(&mut tape, hm, ha, a2m, m2a)?;
            let v = tape.value(gm).data();
            // σ(0.3)·1 and σ(−0.6)·2 by hand
            let hand = (v[0] - 0.574_442_5).abs() < 1e-6 && (v[1] - 0.708_687_6).abs() < 1e-6;
            Ok((halves && hand, format!("zero-weight halving={halves}, hand example={hand}")))
        }),
    ]
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}
