use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{candidates, Model, TrainConfig};
use crate::autodiff::{Adam, AdamConfig, Rng, Tape, Tensor};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ProcessedSession};
use crate::intent::BetaMode;

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub loss_ce: f64,
    pub loss_zero: f64,
    pub seconds: f64,
    pub beta_draws: u64,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub loss_ce: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
}

struct SessionStep {
    grads: BTreeMap<String, Tensor>,
    loss: f64,
    ce: f64,
    l_zero: f64,
    beta_draws: u64,
    clamped: usize,
}

fn divergence(session: &ProcessedSession, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Divergence {
            session_id: session.session_id.clone(),
        },
        other => other,
    }
}

fn session_step(model: &Model, ds: &Dataset, session: &ProcessedSession, epoch: usize, weight: f64) -> Result<SessionStep> {
    let cfg = &model.config;
    let key = format!("{epoch}:{}", session.session_id);
    let mut beta_rng = Rng::derive(cfg.beta_seed(), "beta", &key);
    let mut neg_rng = Rng::derive(cfg.seed, "negatives", &key);
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let fwd = model.forward(&p, ds, session, BetaMode::Sample(&mut beta_rng))?;
    let cands = candidates(ds, session, cfg.candidate_mode, &mut neg_rng);
    let gt_pos = cands
        .binary_search(&session.ground_truth)
        .map_err(|_| Error::Protocol(format!("session {}: ground truth missing from candidates", session.session_id)))?;
    let logits = model.candidate_logits(&p, ds, fwd.intent, &cands)?;
    let (loss, ce) = model.loss(logits, gt_pos, fwd.l_zero)?;
    if !loss.item().is_finite() {
        return Err(Error::Divergence {
            session_id: session.session_id.clone(),
        });
    }
    let grads = tape.backward(loss.scale(weight)?)?;
    Ok(SessionStep {
        grads: p.gradients(&grads),
        loss: loss.item(),
        ce: ce.item(),
        l_zero: fwd.l_zero.item(),
        beta_draws: beta_rng.beta_draws(),
        clamped: fwd.clamped,
    })
}

/// Trains fresh parameters on the training split.
pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_model(Model::init(ds, config)?, ds)
}

/// Minibatch Adam over shuffled sessions. Sessions in a batch run in
/// parallel; their gradients are summed in batch order so results do not
/// depend on the thread count.
pub fn train_model(mut model: Model, ds: &Dataset) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    });
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::new();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        Rng::derive(cfg.seed, "shuffle", &epoch.to_string()).shuffle(&mut order);
        let (mut loss, mut ce, mut lz, mut draws, mut clamped) = (0.0, 0.0, 0.0, 0u64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let results: Vec<SessionStep> = batch
                .par_iter()
                .map(|&i| {
                    let s = &ds.train[i];
                    session_step(&model, ds, s, epoch, weight).map_err(|e| divergence(s, e))
                })
                .collect::<Result<_>>()?;
            let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
            let (mut batch_loss, mut batch_ce) = (0.0, 0.0);
            for r in results {
                for (name, g) in r.grads {
                    match total.get_mut(&name) {
                        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                        None => {
                            total.insert(name, g);
                        }
                    }
                }
                batch_loss += r.loss;
                batch_ce += r.ce;
                lz += r.l_zero;
                draws += r.beta_draws;
                clamped += r.clamped;
            }
            loss += batch_loss;
            ce += batch_ce;
            model.params.set_grads(total);
            adam.step(&mut model.params)?;
            let step = StepLog {
                step: adam.steps(),
                loss: batch_loss * weight,
                loss_ce: batch_ce * weight,
            };
            debug!("step {} loss {:.6} ce {:.6}", step.step, step.loss, step.loss_ce);
            steps.push(step);
        }
        let n = ds.train.len() as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            loss: loss / n,
            loss_ce: ce / n,
            loss_zero: lz / n,
            seconds: start.elapsed().as_secs_f64(),
            beta_draws: draws,
            clamped,
        };
        info!(
            "epoch {} loss {:.5} ce {:.5} zero {:.5} ({:.2}s)",
            log.epoch, log.loss, log.loss_ce, log.loss_zero, log.seconds
        );
        epochs.push(log);
    }
    Ok(TrainOutcome { model, epochs, steps })
}
