use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharenet_core::autodiff::check_param_gradients;
use sharenet_core::nn::{bilstm, Ctx, InitScheme, LstmCell};
use sharenet_core::{ParamStore, Tape, Tensor, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn zero_state(tape: &mut Tape, h: usize) -> (Var, Var) {
    (tape.constant(Tensor::zeros(&[1, h])), tape.constant(Tensor::zeros(&[1, h])))
}

#[test]
fn zero_weights_give_zero_hidden_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamStore::new();
    let cell = LstmCell::new(&mut params, "c", 3, 4, InitScheme::default(), &mut rng);
    for id in cell.param_ids() {
        params.value_mut(id).fill(0.0);
    }
    let mut tape = Tape::new();
    let x = tape.constant(random(&[1, 3], &mut rng));
    let (h0, c0) = zero_state(&mut tape, 4);
    let (h, _) = cell.step(&mut tape, &params, x, h0, c0).unwrap();
    assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn hidden_state_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamStore::new();
    let cell = LstmCell::new(&mut params, "c", 3, 5, InitScheme::default(), &mut rng);
    for id in cell.param_ids() {
        params.value_mut(id).data_mut().iter_mut().for_each(|w| *w *= 8.0);
    }
    let mut tape = Tape::new();
    let x = tape.constant(random(&[20, 3], &mut rng).map(|v| v * 10.0));
    let hs = cell.run(&mut tape, &params, x, false, &mut Ctx::eval()).unwrap();
    for h in hs {
        assert!(tape.value(h).data().iter().all(|&v| v > -1.0 && v < 1.0));
    }
}

#[test]
fn step_rejects_wrong_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamStore::new();
    let cell = LstmCell::new(&mut params, "c", 3, 4, InitScheme::default(), &mut rng);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2]));
    let (h0, c0) = zero_state(&mut tape, 4);
    assert!(cell.step(&mut tape, &params, x, h0, c0).is_err());
}

#[test]
fn three_step_sequence_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParamStore::new();
    let cell = LstmCell::new(&mut params, "c", 3, 4, InitScheme::default(), &mut rng);
    let xs: Vec<Tensor> = (0..3).map(|_| random(&[1, 3], &mut rng)).collect();
    let target = random(&[1, 4], &mut rng);
    let report = check_param_gradients(
        &mut params,
        |p, backward| {
            let mut tape = Tape::new();
            let (mut h, mut c) = zero_state(&mut tape, 4);
            for x in &xs {
                let xv = tape.constant(x.clone());
                (h, c) = cell.step(&mut tape, p, xv, h, c)?;
            }
            let tv = tape.constant(target.clone());
            let prod = tape.mul(h, tv)?;
            let loss = tape.sum(prod)?;
            if backward {
                tape.backward(loss, p)?;
            }
            Ok(tape.value(loss).item())
        },
        1e-5,
        usize::MAX,
        0,
    )
    .unwrap();
    assert!(report.max_rel_error() <= 1e-4, "{:?}", report.worst());
}

#[test]
fn bilstm_shapes_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamStore::new();
    let fwd = LstmCell::new(&mut params, "f", 3, 4, InitScheme::default(), &mut rng);
    let bwd = LstmCell::new(&mut params, "b", 3, 4, InitScheme::default(), &mut rng);
    let rows: Vec<Tensor> = (0..5).map(|_| random(&[1, 3], &mut rng)).collect();

    let mut tape = Tape::new();
    let seq: Vec<Var> = rows.iter().map(|r| tape.constant(r.clone())).collect();
    let out = bilstm(&mut tape, &params, &fwd, &bwd, &seq, &mut Ctx::eval()).unwrap();
    assert_eq!(out.len(), 5);
    assert_eq!(tape.shape(out[0]), &[1, 8]);

    let rev: Vec<Var> = seq.iter().rev().copied().collect();
    let swapped = bilstm(&mut tape, &params, &bwd, &fwd, &rev, &mut Ctx::eval()).unwrap();
    for t in 0..5 {
        let a = tape.value(out[4 - t]).data();
        let b = tape.value(swapped[t]).data();
        assert_eq!(&a[..4], &b[4..]);
        assert_eq!(&a[4..], &b[..4]);
    }

    assert!(bilstm(&mut tape, &params, &fwd, &bwd, &[], &mut Ctx::eval()).is_err());
}

#[test]
fn bilstm_single_token_runs_one_step_each_way() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamStore::new();
    let fwd = LstmCell::new(&mut params, "f", 3, 2, InitScheme::default(), &mut rng);
    let bwd = LstmCell::new(&mut params, "b", 3, 2, InitScheme::default(), &mut rng);
    let x = random(&[1, 3], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let out = bilstm(&mut tape, &params, &fwd, &bwd, &[xv], &mut Ctx::eval()).unwrap();
    let (h0, c0) = zero_state(&mut tape, 2);
    let (hf, _) = fwd.step(&mut tape, &params, xv, h0, c0).unwrap();
    let (hb, _) = bwd.step(&mut tape, &params, xv, h0, c0).unwrap();
    let got = tape.value(out[0]).data().to_vec();
    let mut want = tape.value(hf).data().to_vec();
    want.extend_from_slice(tape.value(hb).data());
    assert_eq!(got, want);
}
