//! Supervised comparator: the same U-Net regressing clean images from
//! corrupted ones under plain MSE, with the time input held at zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neural::{batch_step, mse_loss_and_upstream, AdamState, EarlyStopping, TrainSample, UNet};
use crate::numerics::{ImageTensor, Rng};

/// One (corrupted, clean) pair with its identity fields.
#[derive(Debug, Clone)]
pub struct PairedItem {
    pub corrupted: ImageTensor,
    pub clean: ImageTensor,
    pub patient: String,
    pub plane: String,
    pub slice: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PairedDataset {
    pub items: Vec<PairedItem>,
}

impl PairedDataset {
    pub fn new(items: Vec<PairedItem>) -> Result<Self> {
        for item in &items {
            if item.corrupted.shape() != item.clean.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "pair for patient {} slice {}: {:?} vs {:?}",
                    item.patient,
                    item.slice,
                    item.corrupted.shape(),
                    item.clean.shape()
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Knobs for the supervised run. lr/batch defaults follow the pipeline
/// configuration (1e-3, batch 6); patience counts validation rounds.
#[derive(Debug, Clone)]
pub struct SupervisedTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub val_interval: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for SupervisedTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 6, max_steps: 2000, val_interval: 50, patience: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    /// Mean train loss, one entry per optimizer step.
    pub steps: Vec<f64>,
    /// (step, validation loss) per validation round.
    pub val: Vec<(usize, f64)>,
    pub best_val: f64,
    pub stopped_early: bool,
}

fn to_sample(item: &PairedItem) -> Result<TrainSample> {
    let (h, w) = item.corrupted.hw()?;
    Ok(TrainSample {
        x: item.corrupted.clone().reshape(vec![1, h, w])?,
        t: 0,
        target: item.clean.clone().reshape(vec![1, h, w])?,
    })
}

/// Exact mean MSE of model(corrupted) against clean over a dataset.
pub fn supervised_val_loss(model: &UNet, dataset: &PairedDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let losses: Vec<f64> = dataset
        .items
        .par_iter()
        .map(|item| {
            let s = to_sample(item)?;
            let out = model.forward(&s.x, 0)?;
            Ok(mse_loss_and_upstream(&out, &s.target).0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Minimize MSE(model(corrupted), clean) with early stopping on the
/// validation set; returns the best-validation model and the history.
pub fn train_supervised(
    model: UNet,
    train: &PairedDataset,
    val: &PairedDataset,
    cfg: &SupervisedTrainConfig,
) -> Result<(UNet, TrainHistory)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("empty train/val dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut model = model;
    let mut optimizer = AdamState::new(model.param_count(), cfg.lr);
    let mut rng = Rng::new(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory { best_val: f64::INFINITY, ..Default::default() };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len(); // trigger reshuffle on first use
    let mut step = 0usize;
    'outer: while step < cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(to_sample(&train.items[order[cursor]])?);
            cursor += 1;
        }
        let loss = batch_step(&mut model, &mut optimizer, &batch)?;
        history.steps.push(loss);
        step += 1;

        if step % cfg.val_interval == 0 || step == cfg.max_steps {
            let val_loss = supervised_val_loss(&model, val)?;
            history.val.push((step, val_loss));
            if stopper.observe(val_loss, model.params()) {
                history.stopped_early = true;
                break 'outer;
            }
        }
    }
    if history.val.is_empty() {
        let val_loss = supervised_val_loss(&model, val)?;
        history.val.push((step, val_loss));
        stopper.observe(val_loss, model.params());
    }
    stopper.restore_best(&mut model)?;
    history.best_val = stopper.best_loss();
    Ok((model, history))
}

/// Single forward pass, clipped to [0,1].
pub fn correct_supervised(model: &UNet, y: &ImageTensor) -> Result<ImageTensor> {
    let (h, w) = y.hw()?;
    let x = y.clone().reshape(vec![1, h, w])?;
    Ok(model.forward(&x, 0)?.reshape(vec![h, w])?.clip(0.0, 1.0))
}
