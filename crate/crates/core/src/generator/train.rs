use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Dropout;
use super::{GenError, Generator, ModelConfig, TrainConfig};
use crate::autograd::{ParamStore, Tape};
use crate::gradcheck::{finite_difference_check, GradCheckReport, FD_STEP};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Matrix;

/// One (history, future) pair: unpadded source tokens and a target ending in `EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-token training NLL over the epoch.
    pub loss: f64,
    /// Validation score when this epoch was evaluated.
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch, or the last epoch when none was evaluated.
    pub model: Generator,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub stopped_early: bool,
}

/// Patience rule over a higher-is-better validation metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    bad_evals: usize,
}

impl EarlyStopper {
    /// `patience == 0` never stops.
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad_evals: 0,
        }
    }

    /// Records an evaluation; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(_, b)| metric > b);
        if improved {
            self.best = Some((epoch, metric));
            self.bad_evals = 0;
        } else {
            self.bad_evals += 1;
        }
        (
            improved,
            self.patience > 0 && self.bad_evals >= self.patience,
        )
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

fn batch_loss(
    model: &Generator,
    batch: &[&TrainExample],
    mut drop: Option<Dropout>,
) -> (Vec<Matrix>, f64, usize) {
    let mut tape = Tape::new(model.params());
    let mut parts = Vec::with_capacity(batch.len());
    let mut count = 0;
    for ex in batch {
        let (nll, n) = model.pair_nll(&mut tape, &ex.source, &ex.target, &mut drop);
        parts.push(nll);
        count += n;
    }
    let total = tape.sum_scalars(&parts);
    let sum = tape.scalar(total);
    let loss = tape.scale(total, 1.0 / count.max(1) as f64);
    (tape.backward(loss), sum, count)
}

/// Mean per-token NLL of `data` without dropout.
pub fn teacher_forced_loss(model: &Generator, data: &[TrainExample]) -> Result<f64, GenError> {
    let mut sum = 0.0;
    let mut count = 0;
    for ex in data {
        model.check_pair(&ex.source, &ex.target)?;
        let mut tape = Tape::new(model.params());
        let (nll, n) = model.pair_nll(&mut tape, &ex.source, &ex.target, &mut None);
        sum += tape.scalar(nll);
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Minibatch Adam on teacher-forced NLL. `validate` scores the current model (higher is
/// better) and is called every `eval_interval` epochs once warm-up is over.
pub fn train<F>(
    model: Generator,
    data: &[TrainExample],
    tcfg: &TrainConfig,
    mut validate: F,
) -> Result<TrainOutcome, GenError>
where
    F: FnMut(&Generator) -> f64,
{
    tcfg.validate()?;
    if data.is_empty() {
        return Err(GenError::EmptyTrainSet);
    }
    for ex in data {
        model.check_pair(&ex.source, &ex.target)?;
    }
    let mut model = model;
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            lr: tcfg.lr,
            max_grad_norm: tcfg.max_grad_norm,
            ..AdamConfig::default()
        },
    );
    let mut order_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0xD809_D809_D809_D809);
    let p = model.config().dropout;
    let mut stopper = EarlyStopper::new(tcfg.patience);
    let mut best_params: Option<ParamStore> = None;
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
            let drop = Some(Dropout {
                p,
                rng: &mut drop_rng,
            });
            let (grads, s, n) = batch_loss(&model, &batch, drop);
            if !s.is_finite() {
                return Err(GenError::NonFiniteLoss(epoch));
            }
            sum += s;
            count += n;
            adam.step(model.params_mut(), &grads);
        }
        if !model.params().all_finite() {
            return Err(GenError::NonFiniteLoss(epoch));
        }
        let loss = sum / count.max(1) as f64;
        let due = epoch > tcfg.warmup_epochs
            && (epoch - tcfg.warmup_epochs).is_multiple_of(tcfg.eval_interval);
        let val_metric = due.then(|| validate(&model));
        debug!("epoch {epoch}: loss {loss:.6} val {val_metric:?}");
        log.push(EpochLog {
            epoch,
            loss,
            val_metric,
        });
        if let Some(m) = val_metric {
            let (improved, stop) = stopper.observe(epoch, m);
            if improved {
                best_params = Some(model.params().clone());
            }
            if stop {
                info!("early stop at epoch {epoch}");
                stopped_early = true;
                break;
            }
        }
    }

    let best = stopper.best();
    if let Some(params) = best_params {
        *model.params_mut() = params;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: best.map(|b| b.0),
        best_metric: best.map(|b| b.1),
        stopped_early,
    })
}

/// Compares the analytic gradient of the mean NLL of `data` with central differences for
/// every parameter tensor. Dropout is disabled.
pub fn grad_check(
    cfg: &ModelConfig,
    data: &[TrainExample],
    tol: f64,
) -> Result<GradCheckReport, GenError> {
    let cfg = ModelConfig {
        dropout: 0.0,
        ..cfg.clone()
    };
    let model = Generator::new(cfg)?;
    if data.is_empty() {
        return Err(GenError::EmptyTrainSet);
    }
    for ex in data {
        model.check_pair(&ex.source, &ex.target)?;
    }
    let batch: Vec<&TrainExample> = data.iter().collect();
    let (grads, _, _) = batch_loss(&model, &batch, None);
    let report = finite_difference_check(model.params(), &grads, FD_STEP, |p: &ParamStore| {
        let mut probe = model.clone();
        *probe.params_mut() = p.clone();
        let mut tape = Tape::new(probe.params());
        let mut sum = 0.0;
        let mut count = 0;
        for ex in data {
            let (nll, n) = probe.pair_nll(&mut tape, &ex.source, &ex.target, &mut None);
            sum += tape.scalar(nll);
            count += n;
        }
        sum / count.max(1) as f64
    });
    if report.max_rel_err >= tol {
        return Err(GenError::GradMismatch {
            tensor: report.worst_tensor.clone(),
            err: report.max_rel_err,
        });
    }
    Ok(report)
}
