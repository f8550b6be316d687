use rand::seq::index::sample;

use super::{Classifier, Parameterized};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Fraction of parameters probed.
    pub fraction: f64,
    /// Lower bound on the number of probed parameters.
    pub min_probes: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            fraction: 0.01,
            min_probes: 32,
            seed: 0,
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn nudge<M: Parameterized<f64>>(m: &mut M, flat: usize, delta: f64) {
    let mut k = flat;
    for p in m.params_mut() {
        if k < p.len() {
            p.data_mut()[k] += delta;
            return;
        }
        k -= p.len();
    }
}

/// Central-difference check of an arbitrary scalar objective.
/// `f(model, Some(grad))` must return the objective and accumulate its
/// gradient into `grad`; `f(model, None)` only evaluates.
pub fn grad_check_params<M, F>(model: &M, seed: u64, fraction: f64, f: F) -> f64
where
    M: Parameterized<f64> + Clone,
    F: Fn(&M, Option<&mut M>) -> f64,
{
    let cfg = GradCheckConfig {
        fraction,
        seed,
        ..Default::default()
    };
    check_with(model, &cfg, f)
}

fn check_with<M, F>(model: &M, cfg: &GradCheckConfig, f: F) -> f64
where
    M: Parameterized<f64> + Clone,
    F: Fn(&M, Option<&mut M>) -> f64,
{
    let mut grad = model.zeros_like();
    f(model, Some(&mut grad));
    let analytic: Vec<f64> = grad.params().iter().flat_map(|p| p.data().iter().copied()).collect();
    let n = analytic.len();
    let want = ((n as f64 * cfg.fraction).ceil() as usize).max(cfg.min_probes).min(n);
    let mut idx = sample(&mut stream_rng(cfg.seed, 0x6763, 0), n, want).into_vec();
    idx.sort_unstable();

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in idx {
        nudge(&mut probe, k, cfg.step);
        let lp = f(&probe, None);
        nudge(&mut probe, k, -2.0 * cfg.step);
        let lm = f(&probe, None);
        nudge(&mut probe, k, cfg.step);
        let numeric = (lp - lm) / (2.0 * cfg.step);
        worst = worst.max(rel_err(analytic[k], numeric));
    }
    worst
}

/// Maximum relative error between the analytic loss gradient of a
/// classifier and central differences over a random parameter subset.
pub fn grad_check<M>(model: &M, xs: &[M::Input<'_>], labels: &[usize], cfg: &GradCheckConfig) -> f64
where
    M: Classifier<f64>,
{
    check_with(model, cfg, |m, g| match g {
        Some(g) => m.loss_grad_batch(xs, labels, g).expect("gradient evaluation"),
        None => m.loss_batch(xs, labels).expect("loss evaluation"),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Dense, Tensor};
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn linear_objective_is_exact() {
        let d = Dense::<f64>::new(6, 5, &mut stream_rng(8, 0, 0));
        let x = [0.5, -0.25, 1.0, 2.0, -1.5, 0.75];
        let err = grad_check_params(&d, 1, 1.0, |m: &Dense<f64>, g: Option<&mut Dense<f64>>| {
            let y = m.forward(&x, 1).unwrap();
            if let Some(g) = g {
                m.backward(&x, &[1.0; 5], 1, g, false).unwrap();
            }
            y.iter().sum()
        });
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let d = Dense::<f64>::new(2, 1, &mut stream_rng(8, 0, 0));
        let err = grad_check_params(&d, 1, 1.0, |m: &Dense<f64>, g: Option<&mut Dense<f64>>| {
            if let Some(g) = g {
                g.w = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
            }
            m.w.data().iter().map(|v| v * v).sum()
        });
        assert!(err > 1e-2);
    }
}
