use jokerank_tensor::{AdamState, Graph, ParamStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::LabelChoice;
use crate::error::{Error, Result};
use crate::evaluation::auc_roc;

use super::data::{BatchInput, DlExample, TokenCache};
use super::loss::{total_loss_graph, LossTargets};
use super::network::DlNetwork;

/// Batch size used for evaluation-mode passes.
pub const INFERENCE_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches.
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlTrainLog {
    /// Evaluation-mode loss on the probe subset before the first update.
    pub initial_train_loss: f64,
    /// Evaluation-mode loss on the probe subset for the selected parameters.
    pub final_train_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Training instances used for the start and end losses.
pub const LOSS_PROBE: usize = 2048;

/// Up to `LOSS_PROBE` evenly spaced instances.
fn loss_probe(train: &[DlExample]) -> Vec<DlExample> {
    let step = train.len().div_ceil(LOSS_PROBE).max(1);
    train.iter().step_by(step).cloned().collect()
}

fn refs(examples: &[DlExample]) -> Vec<&DlExample> {
    examples.iter().collect()
}

/// Positive-class probabilities `(reuse, return)` in evaluation mode.
pub fn predict(net: &DlNetwork, store: &ParamStore, tokens: &TokenCache, examples: &[DlExample]) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(INFERENCE_BATCH) {
        let batch = BatchInput::new(&refs(chunk));
        let mut g = Graph::new();
        let heads = net.forward(&mut g, store, tokens, &batch)?;
        let (r, t) = (g.value(heads.log_reuse).data(), g.value(heads.log_return).data());
        out.extend((0..chunk.len()).map(|i| [r[2 * i + 1].exp(), t[2 * i + 1].exp()]));
    }
    Ok(out)
}

/// Evaluation-mode loss over a whole set, as a mean over instances.
pub fn evaluate_loss(net: &DlNetwork, store: &ParamStore, tokens: &TokenCache, examples: &[DlExample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in examples.chunks(INFERENCE_BATCH) {
        let r = refs(chunk);
        let batch = BatchInput::new(&r);
        let mut g = Graph::new();
        let heads = net.forward(&mut g, store, tokens, &batch)?;
        let loss = total_loss_graph(&mut g, heads.log_reuse, heads.log_return, &LossTargets::from_examples(&r), net.config())?;
        total += g.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

fn label_of(e: &DlExample, choice: LabelChoice) -> u8 {
    match choice {
        LabelChoice::Reuse => e.label_reuse,
        LabelChoice::Return => e.label_return,
    }
}

pub fn selection_auc(net: &DlNetwork, store: &ParamStore, tokens: &TokenCache, examples: &[DlExample]) -> Result<f64> {
    let choice = net.config().selection_label;
    let col = usize::from(choice == LabelChoice::Return);
    let probs = predict(net, store, tokens, examples)?;
    let scores: Vec<f64> = probs.iter().map(|p| p[col]).collect();
    let labels: Vec<u8> = examples.iter().map(|e| label_of(e, choice)).collect();
    auc_roc(&scores, &labels)
}

fn check_classes(examples: &[DlExample], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Degenerate(format!("{what} set is empty")));
    }
    for choice in [LabelChoice::Reuse, LabelChoice::Return] {
        let pos = examples.iter().filter(|e| label_of(e, choice) == 1).count();
        if pos == 0 || pos == examples.len() {
            return Err(Error::Degenerate(format!("{what} set has one class for the {} label", choice.as_str())));
        }
    }
    Ok(())
}

/// Rounds every parameter to 32-bit precision, the checkpoint precision.
pub fn round_to_f32(store: &mut ParamStore) {
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = f64::from(*v as f32));
    }
}

/// Mini-batch Adam with per-epoch validation and early stopping. Returns
/// the best-validation parameters rounded to checkpoint precision.
pub fn fit(
    net: &DlNetwork,
    tokens: &TokenCache,
    train: &[DlExample],
    val: &[DlExample],
    seed: u64,
) -> Result<(ParamStore, DlTrainLog)> {
    let cfg = net.config();
    check_classes(train, "training")?;
    check_classes(val, "validation")?;
    let mut store = net.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_edd1);
    let mut adam = AdamState::new();
    let probe = loss_probe(train);
    let initial_train_loss = evaluate_loss(net, &store, tokens, &probe)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(ParamStore, usize, f64)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let examples: Vec<&DlExample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = BatchInput::new(&examples);
            let mut g = Graph::training(rng.gen());
            let heads = net.forward(&mut g, &store, tokens, &batch)?;
            let targets = LossTargets::from_examples(&examples);
            let loss = total_loss_graph(&mut g, heads.log_reuse, heads.log_return, &targets, cfg)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b + 1 });
            }
            g.backward(loss)?;
            adam.step(&mut store, &g.param_grads(), cfg.learning_rate)?;
            loss_sum += value;
            batches += 1;
        }
        let val_auc = selection_auc(net, &store, tokens, val)?;
        log::info!("epoch {epoch}: train loss {:.5}, validation AUC {val_auc:.4}", loss_sum / batches as f64);
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_auc,
        });
        if best.as_ref().is_none_or(|(_, _, auc)| val_auc > *auc) {
            best = Some((store.clone(), epoch, val_auc));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (mut best_store, best_epoch, best_val_auc) = best.expect("at least one epoch");
    round_to_f32(&mut best_store);
    let final_train_loss = evaluate_loss(net, &best_store, tokens, &probe)?;
    Ok((
        best_store,
        DlTrainLog {
            initial_train_loss,
            final_train_loss,
            epochs,
            best_epoch,
            best_val_auc,
        },
    ))
}
