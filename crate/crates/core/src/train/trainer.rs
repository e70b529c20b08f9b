use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adam_step, AdamState, PlateauState};
use super::{Result, TrainConfig, TrainError};
use crate::corpus::CorpusManifest;
use crate::eval::evaluate_model;
use crate::frontend::FeatureSet;
use crate::model::{save_checkpoint, Graph, Mode, ModelGraph};
use crate::util::{atomic_write, stable_hash64, write_json_pretty};

/// Recorded once per run so logs state how reproducible it is.
pub const EXECUTION_MODE: &str = "single-threaded, bitwise deterministic";

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ua: Option<f64>,
    pub val_wa: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_ua: Option<f64>,
    pub stopped_early: bool,
}

/// Inputs of one training run. `test_ids` are the fold's held-out ids; the
/// run refuses to start if any fit or validation record (or its origin) is
/// among them.
pub struct TrainRun<'a> {
    pub fit: &'a CorpusManifest,
    pub val: &'a CorpusManifest,
    pub test_ids: &'a BTreeSet<String>,
    pub features: &'a FeatureSet,
    pub config: &'a TrainConfig,
    /// Where checkpoints, history and resume state go; nothing is written
    /// when absent.
    pub out_dir: Option<&'a Path>,
    /// Continue from `state.json` in `out_dir` if present.
    pub resume: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunState {
    epochs_done: usize,
    plateau: PlateauState,
    best_epoch: Option<usize>,
    best_val_ua: Option<f64>,
    bad_for_early_stop: usize,
    config: TrainConfig,
    arch_digest: String,
    execution: String,
}

fn labels_of(m: &CorpusManifest) -> Result<Vec<usize>> {
    m.records
        .iter()
        .map(|r| r.emotion.map(|e| e.index()).ok_or_else(|| TrainError::Unlabeled(r.id.clone())))
        .collect()
}

fn check_leakage(run: &TrainRun) -> Result<()> {
    for r in run.fit.records.iter().chain(&run.val.records) {
        if run.test_ids.contains(&r.id) {
            return Err(TrainError::TestLeakage(r.id.clone()));
        }
        if run.test_ids.contains(r.origin_id()) {
            return Err(TrainError::TestLeakage(format!("{} (derived from {})", r.id, r.origin_id())));
        }
    }
    if let Some(r) = run.val.records.iter().find(|r| r.augmented) {
        return Err(TrainError::BadConfig(format!("augmented record '{}' in the validation set", r.id)));
    }
    let fit: BTreeSet<&str> = run.fit.ids().collect();
    if let Some(r) = run.val.records.iter().find(|r| fit.contains(r.id.as_str())) {
        return Err(TrainError::BadConfig(format!("'{}' is in both fit and validation sets", r.id)));
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let h = stable_hash64(&[b"shuffle", &seed.to_le_bytes(), &(epoch as u64).to_le_bytes()]);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(h));
    order
}

fn dropout_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    stable_hash64(&[
        b"dropout",
        &seed.to_le_bytes(),
        &(epoch as u64).to_le_bytes(),
        &(batch as u64).to_le_bytes(),
    ])
}

fn history_jsonl(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for h in history {
        writeln!(out, "{}", serde_json::to_string(h).expect("record serializes")).unwrap();
    }
    out
}

fn load_history(path: &Path, epochs: usize) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()).take(epochs) {
        out.push(serde_json::from_str(line)?);
    }
    if out.len() != epochs {
        return Err(TrainError::Resume(format!("history has {} of {epochs} epochs", out.len())));
    }
    Ok(out)
}

/// Run `config.epochs` epochs of shuffled mini-batches with Adam and plateau
/// reduction driven by validation UA. The last batch of an epoch may be
/// short. With `out_dir`, writes `history.jsonl`, `last.ckpt`, `best.ckpt`,
/// `optimizer.bin` and `state.json` after every epoch.
pub fn train_model(model: &mut ModelGraph<f32>, run: &TrainRun) -> Result<TrainOutcome> {
    let cfg = run.config;
    cfg.validate()?;
    if run.fit.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    check_leakage(run)?;
    let labels = labels_of(run.fit)?;
    labels_of(run.val)?;
    for id in run.fit.ids().chain(run.val.ids()) {
        if run.features.get(id).is_none() {
            return Err(TrainError::MissingFeatures(id.to_string()));
        }
    }
    let ids: Vec<&str> = run.fit.ids().collect();
    let arch_digest = model.arch().digest();

    let mut adam = AdamState::new(&model.params.tensors);
    let mut state = RunState {
        epochs_done: 0,
        plateau: PlateauState::new(cfg),
        best_epoch: None,
        best_val_ua: None,
        bad_for_early_stop: 0,
        config: cfg.clone(),
        arch_digest: arch_digest.clone(),
        execution: EXECUTION_MODE.into(),
    };
    let mut history = Vec::new();
    if let (Some(dir), true) = (run.out_dir, run.resume) {
        let state_path = dir.join("state.json");
        if state_path.exists() {
            let saved: RunState = serde_json::from_str(&std::fs::read_to_string(&state_path)?)?;
            if saved.config != *cfg || saved.arch_digest != arch_digest {
                return Err(TrainError::Resume("saved run used a different configuration".into()));
            }
            model.load_weights(dir.join("last.ckpt"))?;
            adam = AdamState::from_bytes(&std::fs::read(dir.join("optimizer.bin"))?)?;
            history = load_history(&dir.join("history.jsonl"), saved.epochs_done)?;
            state = saved;
            log::info!("resuming after epoch {}", state.epochs_done);
        }
    }
    if let Some(dir) = run.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    log::info!(
        "training {} on {} utterances ({} validation), {}",
        model.arch().tag(),
        ids.len(),
        run.val.len(),
        EXECUTION_MODE
    );

    let mut stopped_early = false;
    for epoch in state.epochs_done..cfg.epochs {
        model.set_mode(Mode::Train);
        let lr = state.plateau.lr;
        let order = epoch_order(ids.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_ids: Vec<&str> = chunk.iter().map(|&i| ids[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = run.features.batch(&batch_ids).map_err(TrainError::MissingFeatures)?;
            let mut g = Graph::new();
            let fwd = model.forward(&mut g, x, dropout_seed(cfg.seed, epoch, b))?;
            let loss = g.softmax_cross_entropy(fwd.logits, &batch_labels)?;
            let value = f64::from(g.value(loss).data[0]);
            if !value.is_finite() {
                let dump = match run.out_dir {
                    Some(dir) => {
                        save_checkpoint(model, epoch as u64, dir.join("diverged.ckpt"))?;
                        write_json_pretty(dir.join("diverged_state.json"), &state)?;
                        Some(dir.join("diverged.ckpt"))
                    }
                    None => None,
                };
                return Err(TrainError::DivergedLoss { epoch, batch: b, dump });
            }
            loss_sum += value * chunk.len() as f64;
            g.backward(loss)?;
            let grads = model.collect_grads(&g);
            adam_step(&mut model.params.tensors, &grads, &mut adam, lr, cfg)?;
        }
        let train_loss = loss_sum / ids.len() as f64;

        let (val_ua, val_wa) = if run.val.is_empty() {
            (None, None)
        } else {
            let ev = evaluate_model(model, run.val, run.features, false, cfg.batch_size)?;
            (Some(ev.metrics.ua), Some(ev.metrics.wa))
        };
        model.set_mode(Mode::Train);
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_ua,
            val_wa,
            lr,
        });
        log::debug!("epoch {epoch}: loss {train_loss:.5} val UA {val_ua:?} lr {lr:.3e}");

        let improved = val_ua.is_some_and(|ua| state.best_val_ua.is_none_or(|b| ua > b + cfg.plateau_min_delta));
        if let Some(ua) = val_ua {
            state.plateau.update(ua, cfg);
        }
        if improved {
            state.best_val_ua = val_ua;
            state.best_epoch = Some(epoch);
            state.bad_for_early_stop = 0;
        } else {
            state.bad_for_early_stop += 1;
        }
        state.epochs_done = epoch + 1;
        if let Some(dir) = run.out_dir {
            if improved {
                save_checkpoint(model, epoch as u64, dir.join("best.ckpt"))?;
            }
            save_checkpoint(model, epoch as u64, dir.join("last.ckpt"))?;
            atomic_write(dir.join("optimizer.bin"), &adam.to_bytes())?;
            atomic_write(dir.join("history.jsonl"), history_jsonl(&history).as_bytes())?;
            write_json_pretty(dir.join("state.json"), &state)?;
        }
        if cfg.early_stop.is_some_and(|p| !run.val.is_empty() && state.bad_for_early_stop >= p) {
            log::info!("early stop after epoch {epoch}");
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        best_epoch: state.best_epoch,
        best_val_ua: state.best_val_ua,
        stopped_early,
    })
}
