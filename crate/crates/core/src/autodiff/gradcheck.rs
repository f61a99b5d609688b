//! Central finite differences, used as an independent oracle for the
//! reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor;

/// `(f(x+εeᵢ) − f(x−εeᵢ)) / 2ε` for every coordinate of `at`.
pub fn finite_difference_grad(mut f: impl FnMut(&Tensor) -> f64, at: &Tensor, epsilon: f64) -> Tensor {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut x = at.clone();
    let mut out = Tensor::zeros(at.shape());
    for i in 0..at.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + epsilon;
        let up = f(&x);
        x.data_mut()[i] = orig - epsilon;
        let down = f(&x);
        x.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * epsilon);
    }
    out
}

/// `|a−b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn coordinates(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

/// Compares the analytic gradient of `loss` with central differences for
/// every parameter in `params`.
///
/// `loss` must be a deterministic function of the parameter values that
/// runs a full forward pass and, when asked, a backward pass. For each
/// tensor at most `per_param` coordinates are sampled (all of them when the
/// tensor is smaller); `seed` fixes the sample. A coordinate is compared
/// at step `epsilon` and, unless that already agrees, at `epsilon / 10`,
/// `epsilon / 100` and `epsilon / 1000`; the best agreement counts.
pub fn check_param_gradients(
    params: &mut ParamStore,
    mut loss: impl FnMut(&mut ParamStore, bool) -> Result<f64>,
    epsilon: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    params.zero_grad();
    loss(params, true)?;
    let analytic: Vec<Tensor> = params.ids().map(|id| params.grad(id).clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let n = params.numel(id);
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let a = analytic[id.0].data()[c];
            let mut best = f64::INFINITY;
            // smaller steps guard against a ReLU or max kink
            // lying within one step of the point
            for eps in [epsilon, epsilon / 10.0, epsilon / 100.0, epsilon / 1000.0] {
                let orig = params.value(id).data()[c];
                params.value_mut(id).data_mut()[c] = orig + eps;
                let up = loss(params, false)?;
                params.value_mut(id).data_mut()[c] = orig - eps;
                let down = loss(params, false)?;
                params.value_mut(id).data_mut()[c] = orig;
                best = best.min(relative_error(a, (up - down) / (2.0 * eps)));
                if best <= 1e-7 {
                    break;
                }
            }
            worst = worst.max(best);
        }
        report.params.push(ParamCheck {
            name: params.get(id).name.clone(),
            checked: coords.len(),
            max_rel_error: worst,
        });
    }
    params.zero_grad();
    Ok(report)
}
