use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward-pass context: train/eval switch, dropout rates and the RNG that
/// draws dropout masks.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub training: bool,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn train(dropout: f64, recurrent_dropout: f64, seed: u64) -> Result<Self> {
        for rate in [dropout, recurrent_dropout] {
            check_rate(rate)?;
        }
        Ok(Ctx {
            training: true,
            dropout,
            recurrent_dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn eval() -> Self {
        Ctx {
            training: false,
            dropout: 0.0,
            recurrent_dropout: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let rate = self.dropout;
        dropout(tape, x, rate, self.training, &mut self.rng)
    }

    /// Inverted-dropout mask of `shape` for the recurrent rate, or `None`
    /// when recurrent dropout is inactive.
    pub fn recurrent_mask(&mut self, shape: &[usize]) -> Option<Tensor> {
        if !self.training || self.recurrent_dropout == 0.0 {
            return None;
        }
        Some(mask(shape, self.recurrent_dropout, &mut self.rng))
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn mask(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Inverted dropout: zeroes each element with probability `rate` and
/// scales survivors by `1/(1−rate)`. Identity when not training.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let m = mask(tape.shape(x), rate, rng);
    tape.mul_const(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(dropout(&mut tape, x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut tape, x, 0.9, false, &mut rng).unwrap(), x);
        assert!(dropout(&mut tape, x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn survival_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::new();
        let n = 100_000;
        let x = tape.constant(Tensor::full(&[n], 1.0));
        let y = dropout(&mut tape, x, 0.3, true, &mut rng).unwrap();
        let v = tape.value(y);
        let survived = v.data().iter().filter(|&&z| z != 0.0).count() as f64 / n as f64;
        assert!((survived - 0.7).abs() <= 0.01, "{survived}");
        let mean = v.sum() / n as f64;
        assert!((mean - 1.0).abs() <= 0.02, "{mean}");
    }
}
