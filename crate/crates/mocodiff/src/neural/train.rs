use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neural::{adam_step, AdamState, UNet};
use crate::numerics::ImageTensor;

/// One training example: network input, timestep, regression target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x: ImageTensor,
    pub t: usize,
    pub target: ImageTensor,
}

/// Mean squared error and its gradient with respect to the output.
pub fn mse_loss_and_upstream(output: &ImageTensor, target: &ImageTensor) -> (f64, ImageTensor) {
    let n = output.len() as f64;
    let mut loss = 0.0;
    let mut up = Vec::with_capacity(output.len());
    for (&o, &t) in output.data().iter().zip(target.data()) {
        let d = o - t;
        loss += d * d;
        up.push(2.0 * d / n);
    }
    let upstream = ImageTensor::from_vec(output.shape().to_vec(), up)
        .expect("upstream shape mirrors output");
    (loss / n, upstream)
}

/// One optimizer step on a batch: per-sample losses and gradients are
/// computed in parallel, then reduced in index order so results do not
/// depend on the worker count. Returns the mean batch loss.
pub fn batch_step(
    model: &mut UNet,
    state: &mut AdamState,
    samples: &[TrainSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let frozen: &UNet = model;
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_iter()
        .map(|s| {
            let (loss, grad) = frozen.forward_with_grad(&s.x, s.t, |out| {
                mse_loss_and_upstream(out, &s.target)
            })?;
            Ok((loss, grad.values))
        })
        .collect();

    let b = samples.len() as f64;
    let mut total_loss = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for r in per_sample {
        let (loss, g) = r?;
        total_loss += loss;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    for v in &mut grad {
        *v /= b;
    }
    adam_step(state, model.params_mut(), &grad)?;
    Ok(total_loss / b)
}

/// Patience-based early stopping that snapshots the best parameters seen.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_params: Option<Vec<f64>>,
    rounds_since_best: usize,
}

impl EarlyStopping {
    /// Validation-round patience; the pipeline default is 10.
    pub fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_params: None, rounds_since_best: 0 }
    }

    /// Record a validation result. Returns true once patience is exhausted.
    pub fn observe(&mut self, val_loss: f64, params: &[f64]) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_params = Some(params.to_vec());
            self.rounds_since_best = 0;
        } else {
            self.rounds_since_best += 1;
        }
        self.rounds_since_best >= self.patience
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    /// Write the best snapshot back into the model.
    pub fn restore_best(&self, model: &mut UNet) -> Result<()> {
        match &self.best_params {
            Some(p) => model.set_params(p.clone()),
            None => Err(Error::InvalidArgument("no validation round observed".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_unet, UNetConfig};
    use crate::numerics::{gaussian, Rng};

    fn tiny(seed: u64) -> UNet {
        build_unet(UNetConfig {
            in_channels: 1,
            base_channels: 4,
            depth: 1,
            time_embed_dim: 8,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn one_step_decreases_fixed_batch_loss() {
        let mut failures = 0;
        for seed in 0..20u64 {
            let mut model = tiny(seed);
            let mut rng = Rng::new(500 + seed);
            let samples: Vec<TrainSample> = (0..4)
                .map(|_| TrainSample {
                    x: gaussian(&mut rng, &[1, 8, 8]).unwrap(),
                    t: 0,
                    target: gaussian(&mut rng, &[1, 8, 8]).unwrap().scale(0.3),
                })
                .collect();
            let loss_before = {
                let mut total = 0.0;
                for s in &samples {
                    let out = model.forward(&s.x, s.t).unwrap();
                    total += mse_loss_and_upstream(&out, &s.target).0;
                }
                total / samples.len() as f64
            };
            let mut state = AdamState::new(model.param_count(), 1e-3);
            batch_step(&mut model, &mut state, &samples).unwrap();
            let loss_after = {
                let mut total = 0.0;
                for s in &samples {
                    let out = model.forward(&s.x, s.t).unwrap();
                    total += mse_loss_and_upstream(&out, &s.target).0;
                }
                total / samples.len() as f64
            };
            if loss_after >= loss_before {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures}/20 seeds failed to decrease");
    }

    #[test]
    fn batch_step_is_deterministic() {
        let run = || {
            let mut model = tiny(3);
            let mut rng = Rng::new(77);
            let samples: Vec<TrainSample> = (0..3)
                .map(|_| TrainSample {
                    x: gaussian(&mut rng, &[1, 8, 8]).unwrap(),
                    t: 1,
                    target: gaussian(&mut rng, &[1, 8, 8]).unwrap(),
                })
                .collect();
            let mut state = AdamState::new(model.param_count(), 1e-3);
            let mut losses = Vec::new();
            for _ in 0..3 {
                losses.push(batch_step(&mut model, &mut state, &samples).unwrap());
            }
            (losses, model.params().to_vec())
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut model = tiny(1);
        let mut state = AdamState::new(model.param_count(), 1e-3);
        assert!(batch_step(&mut model, &mut state, &[]).is_err());
    }

    #[test]
    fn early_stopping_restores_best() {
        let mut model = tiny(2);
        let mut es = EarlyStopping::new(3);
        let best = vec![42.0; model.param_count()];
        assert!(!es.observe(1.0, &vec![0.0; model.param_count()]));
        assert!(!es.observe(0.5, &best));
        assert!(!es.observe(0.7, &vec![1.0; model.param_count()]));
        assert!(!es.observe(0.6, &vec![2.0; model.param_count()]));
        assert!(es.observe(0.9, &vec![3.0; model.param_count()]));
        assert_eq!(es.best_loss(), 0.5);
        es.restore_best(&mut model).unwrap();
        assert!(model.params().iter().all(|&v| v == 42.0));
    }
}
