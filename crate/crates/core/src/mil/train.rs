use alloc::vec::Vec;

use super::auc::auc;
use super::data::Bag;
use super::effect::{Aggregator, Knobs};
use super::model::{gradient, predict, MilModel, Task};
use crate::error::MilError;

/// Answer from the report callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Signal {
    Continue,
    Prune,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub aggregator: Aggregator,
    pub task: Task,
    pub lr: f64,
    pub epochs: u32,
    pub weight_decay: f64,
}

impl TrainSettings {
    pub fn from_knobs(knobs: &Knobs, task: Task) -> Self {
        TrainSettings {
            aggregator: knobs.aggregator,
            task,
            lr: knobs.lr,
            epochs: knobs.epochs,
            weight_decay: knobs.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: MilModel,
    /// Validation metric after the last epoch run (minimized).
    pub final_metric: f64,
    pub epochs_run: u32,
    pub pruned: bool,
}

/// Minimized validation metric: `1 - AUC` for classification, mean squared
/// error for regression.
pub fn validation_metric(model: &MilModel, val: &[Bag], aggregator: Aggregator, task: Task) -> Result<f64, MilError> {
    let scores: Vec<f64> = val.iter().map(|b| predict(b, aggregator, model)).collect();
    match task {
        Task::Classification => {
            let labels: Vec<bool> = val.iter().map(Bag::is_positive).collect();
            Ok(1.0 - auc(&scores, &labels)?)
        }
        Task::Regression => Ok(scores
            .iter()
            .zip(val)
            .map(|(s, b)| (s - b.label) * (s - b.label))
            .sum::<f64>()
            / val.len() as f64),
    }
}

/// Full-batch gradient descent. After every epoch the validation metric is
/// passed to `report(epoch, metric)` (epochs are 1-based); a [`Signal::Prune`]
/// answer stops training immediately.
pub fn train_mil(
    train: &[Bag],
    val: &[Bag],
    mut model: MilModel,
    settings: &TrainSettings,
    report: &mut dyn FnMut(u32, f64) -> Signal,
) -> Result<TrainOutcome, MilError> {
    let mut metric = validation_metric(&model, val, settings.aggregator, settings.task)?;
    let mut epochs_run = 0;
    for epoch in 1..=settings.epochs {
        let (loss, grad) = gradient(&model, train, settings.aggregator, settings.task, settings.weight_decay);
        if !loss.is_finite() {
            return Err(MilError::NonFiniteLoss {
                epoch,
                lr: settings.lr,
            });
        }
        for (p, g) in model.params_mut().zip(grad.params()) {
            *p -= settings.lr * g;
        }
        if !model.is_finite() {
            return Err(MilError::NonFiniteLoss {
                epoch,
                lr: settings.lr,
            });
        }
        metric = validation_metric(&model, val, settings.aggregator, settings.task)?;
        epochs_run = epoch;
        if report(epoch, metric) == Signal::Prune {
            return Ok(TrainOutcome {
                model,
                final_metric: metric,
                epochs_run,
                pruned: true,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        final_metric: metric,
        epochs_run,
        pruned: false,
    })
}
