use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::{forward_tape, Architecture, EncoderConfig, EncoderParams, ForwardVars};
use crate::energy::{dirichlet_energy, EnergyTraceRow};
use crate::error::{Error, Result};
use crate::eval::{similarity_matrix, MetricsReport};
use crate::mmkg::Modality;
use crate::tensor::{DenseMatrix, Tape};
use crate::training::{iterative_augment, total_loss_tape, AdamW, AlignmentTask, LossBreakdown, Schedule, TrainConfig};

/// Validation metrics of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Validation {
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub mrr: f64,
}

/// One training epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    /// 1 for the main run, 2 for the pseudo-label stage.
    pub stage: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    /// Training pairs used in this stage.
    pub seeds: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub validation: Option<Validation>,
    pub energy: EnergyTraceRow,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub architecture: Architecture,
    pub params: EncoderParams<DenseMatrix>,
    pub history: Vec<HistoryRow>,
    /// Training and validation pairs after the split.
    pub train_pairs: Vec<(usize, usize)>,
    pub validation_pairs: Vec<(usize, usize)>,
    /// Pseudo-labelled pairs added for the second stage.
    pub augmented: Vec<(usize, usize)>,
    pub stopped_early: bool,
    /// Diagnostic of a non-finite loss; `params` then holds the last finite state.
    pub diverged: Option<String>,
}

/// Salt separating the split shuffle from the batch shuffles.
const SPLIT_SALT: u64 = 0x5eed_5711;

type Pairs = Vec<(usize, usize)>;

fn split_validation(seeds: &[(usize, usize)], fraction: f64, seed: u64) -> (Pairs, Pairs) {
    let mut all = seeds.to_vec();
    all.sort_unstable();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let mut n_val = (fraction * all.len() as f64).floor() as usize;
    if n_val >= all.len() {
        n_val = 0;
    }
    let val = all.split_off(all.len() - n_val);
    (all, val)
}

fn register(tape: &mut Tape, params: &EncoderParams<DenseMatrix>) -> EncoderParams<crate::tensor::Var> {
    let vars: Vec<_> = params
        .named()
        .into_iter()
        .enumerate()
        .map(|(i, (_, t))| tape.param(i, t))
        .collect();
    params.with_values(vars)
}

/// Objective value of `pairs` (entity indices) under `params`.
pub fn total_loss(
    task: &AlignmentTask,
    params: &EncoderParams<DenseMatrix>,
    encoder: &EncoderConfig,
    pairs: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = register(&mut tape, params);
    let fwd = forward_tape(&mut tape, &vars, &task.input, encoder)?;
    let (_, b) = total_loss_tape(
        &mut tape,
        &fwd,
        &task.joint_pairs(pairs),
        &task.joint.laplacian,
        &cfg.loss,
    )?;
    Ok(b)
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let mut out = LossBreakdown::default();
    for p in parts {
        out.task0 += p.task0 / n;
        out.taskk += p.taskk / n;
        for (m, v) in &p.modal_km1 {
            *out.modal_km1.entry(*m).or_default() += v / n;
        }
        for (m, v) in &p.modal_k {
            *out.modal_k.entry(*m).or_default() += v / n;
        }
        out.penalty += p.penalty / n;
        out.total += p.total / n;
        out.phi_floored += p.phi_floored;
    }
    out
}

fn energies(tape: &mut Tape, fwd: &ForwardVars, task: &AlignmentTask) -> Result<(f64, f64, f64)> {
    let lap = &task.joint.laplacian;
    let concat = fwd.h_concat(tape)?;
    Ok((
        dirichlet_energy(tape.value(fwd.h_ori), lap)?,
        dirichlet_energy(tape.value(concat), lap)?,
        dirichlet_energy(tape.value(fwd.h_fus), lap)?,
    ))
}

fn validate_on(task: &AlignmentTask, h_ori: &DenseMatrix, pairs: &[(usize, usize)]) -> Option<Validation> {
    if pairs.is_empty() {
        return None;
    }
    let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let tgt: Vec<usize> = pairs.iter().map(|p| task.target_row(p.1)).collect();
    let omega = similarity_matrix(&h_ori.select_rows(&src), &h_ori.select_rows(&tgt));
    let gold: Vec<(usize, usize)> = (0..pairs.len()).map(|i| (i, i)).collect();
    let r = MetricsReport::evaluate(&omega, &gold, &[1, 10]);
    Some(Validation {
        hits_at_1: r.hits_at_1,
        hits_at_10: r.hits_at_10,
        mrr: r.mrr,
    })
}

struct StageOutcome {
    stopped_early: bool,
    diverged: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    task: &AlignmentTask,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    params: &mut EncoderParams<DenseMatrix>,
    pairs: &[(usize, usize)],
    validation: &[(usize, usize)],
    epochs: usize,
    stage: usize,
    rng: &mut ChaCha8Rng,
    history: &mut Vec<HistoryRow>,
) -> Result<StageOutcome> {
    let mut outcome = StageOutcome {
        stopped_early: false,
        diverged: None,
    };
    if epochs == 0 {
        return Ok(outcome);
    }
    let batch = cfg.batch_size.min(pairs.len());
    let batches = pairs.len().div_ceil(batch);
    let steps_per_epoch = batches.div_ceil(cfg.grad_accumulation);
    let schedule = Schedule::new(cfg.learning_rate, cfg.warmup_fraction, epochs * steps_per_epoch);
    let shapes: Vec<_> = params.named().iter().map(|(_, t)| t.shape()).collect();
    let mut opt = AdamW::new(&shapes, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let mut order: Vec<(usize, usize)> = task.joint_pairs(pairs);
    let mut best: Option<(f64, usize, EncoderParams<DenseMatrix>)> = None;

    for epoch in 1..=epochs {
        order.shuffle(rng);
        let mut parts = Vec::with_capacity(batches);
        let mut acc: Vec<Option<DenseMatrix>> = vec![None; shapes.len()];
        let mut pending = 0;
        let mut last_lr = 0.0;
        let mut snapshot = None;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut tape = Tape::new();
            let vars = register(&mut tape, params);
            let fwd = forward_tape(&mut tape, &vars, &task.input, encoder)?;
            let (total, breakdown) = match total_loss_tape(&mut tape, &fwd, chunk, &task.joint.laplacian, &cfg.loss) {
                Ok(v) => v,
                Err(Error::Numerical(msg)) => {
                    log::error!("stage {stage} epoch {epoch}: {msg}");
                    outcome.diverged = Some(format!("stage {stage} epoch {epoch}: {msg}"));
                    return Ok(outcome);
                }
                Err(e) => return Err(e),
            };
            parts.push(breakdown);
            if b == 0 {
                let e = energies(&mut tape, &fwd, task)?;
                snapshot = Some((e, tape.value(fwd.h_ori).clone()));
            }
            let grads = tape.backward(total)?.into_vec();
            for (slot, g) in acc.iter_mut().zip(grads) {
                match (slot.as_mut(), g) {
                    (Some(s), Some(g)) => s.add_assign(&g),
                    (None, Some(g)) => *slot = Some(g),
                    _ => {}
                }
            }
            pending += 1;
            if pending == cfg.grad_accumulation || b + 1 == batches {
                if pending > 1 {
                    for g in acc.iter_mut().flatten() {
                        *g = g.scale(1.0 / pending as f64);
                    }
                }
                last_lr = schedule.lr(opt.steps_taken() + 1);
                let grads = std::mem::replace(&mut acc, vec![None; shapes.len()]);
                opt.step(&mut params.tensors_mut(), &grads, last_lr);
                pending = 0;
            }
        }
        let ((e_0, e_km1, e_k), h_ori) = snapshot.expect("at least one batch per epoch");
        let val = validate_on(task, &h_ori, validation);
        history.push(HistoryRow {
            stage,
            epoch,
            learning_rate: last_lr,
            seeds: pairs.len(),
            loss: mean_breakdown(&parts),
            validation: val,
            energy: EnergyTraceRow::new(epoch, e_0, e_km1, e_k, cfg.loss.c_min, cfg.loss.c_max),
        });

        if let (Some(patience), Some(v)) = (cfg.patience, val) {
            // validation reflects the parameters before this epoch's updates
            match &best {
                Some((h1, _, _)) if v.hits_at_1 <= *h1 => {}
                _ => best = Some((v.hits_at_1, epoch, params.clone())),
            }
            if let Some((_, at, _)) = &best {
                if epoch - at >= patience {
                    outcome.stopped_early = true;
                    break;
                }
            }
        }
    }
    if outcome.stopped_early {
        if let Some((_, _, p)) = best {
            *params = p;
        }
    }
    Ok(outcome)
}

/// Trains a fresh encoder on `seeds` (entity pairs). Deterministic for a fixed `cfg.seed`.
pub fn train(
    task: &AlignmentTask,
    seeds: &[(usize, usize)],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::structural("training needs at least one seed pair"));
    }
    for &(s, t) in seeds {
        if s >= task.n_source || t >= task.n_target {
            return Err(Error::structural(format!("seed pair ({s}, {t}) is out of range")));
        }
    }
    let architecture = Architecture::new(encoder.clone(), &task.input)?;
    let encoder = &architecture.config;
    let mut params = EncoderParams::init(&architecture, cfg.seed);
    let (train_pairs, validation_pairs) = split_validation(seeds, cfg.validation_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut history = Vec::new();

    let first = run_stage(
        task,
        encoder,
        cfg,
        &mut params,
        &train_pairs,
        &validation_pairs,
        cfg.epochs,
        1,
        &mut rng,
        &mut history,
    )?;
    let mut result = TrainResult {
        architecture: architecture.clone(),
        params,
        history,
        train_pairs,
        validation_pairs,
        augmented: Vec::new(),
        stopped_early: first.stopped_early,
        diverged: first.diverged,
    };
    if !cfg.iterative || result.diverged.is_some() {
        return Ok(result);
    }

    let excluded: Vec<(usize, usize)> = seeds.to_vec();
    let augmented = iterative_augment(task, &result.params, encoder, &excluded, cfg.mutual_floor)?;
    log::info!("iterative stage adds {} pseudo-labelled pairs", augmented.len());
    let mut pairs = result.train_pairs.clone();
    pairs.extend_from_slice(&augmented);
    let second = run_stage(
        task,
        encoder,
        cfg,
        &mut result.params,
        &pairs,
        &result.validation_pairs,
        cfg.extra_epochs,
        2,
        &mut rng,
        &mut result.history,
    )?;
    result.augmented = augmented;
    result.stopped_early |= second.stopped_early;
    result.diverged = second.diverged;
    Ok(result)
}

fn history_header(modalities: &[Modality]) -> Vec<String> {
    let mut h: Vec<String> = ["stage", "epoch", "learning_rate", "seeds", "task0", "taskk"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(modalities.iter().map(|m| format!("modal_km1_{m}")));
    h.extend(modalities.iter().map(|m| format!("modal_k_{m}")));
    for s in [
        "penalty",
        "total",
        "phi_floored",
        "val_hits_at_1",
        "val_hits_at_10",
        "val_mrr",
        "E_0",
        "E_km1",
        "E_k",
        "lower",
        "upper",
        "violated",
    ] {
        h.push(s.to_string());
    }
    h
}

/// History as CSV with one column per loss term; absent values are left empty.
pub fn write_history_csv<W: Write>(out: W, rows: &[HistoryRow]) -> Result<()> {
    let modalities: Vec<Modality> = rows
        .iter()
        .flat_map(|r| r.loss.modal_km1.keys().chain(r.loss.modal_k.keys()).copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(history_header(&modalities))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        let mut rec = vec![
            r.stage.to_string(),
            r.epoch.to_string(),
            r.learning_rate.to_string(),
            r.seeds.to_string(),
            r.loss.task0.to_string(),
            r.loss.taskk.to_string(),
        ];
        rec.extend(modalities.iter().map(|m| opt(r.loss.modal_km1.get(m).copied())));
        rec.extend(modalities.iter().map(|m| opt(r.loss.modal_k.get(m).copied())));
        rec.extend([
            r.loss.penalty.to_string(),
            r.loss.total.to_string(),
            r.loss.phi_floored.to_string(),
            opt(r.validation.map(|v| v.hits_at_1)),
            opt(r.validation.map(|v| v.hits_at_10)),
            opt(r.validation.map(|v| v.mrr)),
            r.energy.e_0.to_string(),
            r.energy.e_km1.to_string(),
            r.energy.e_k.to_string(),
            r.energy.lower.to_string(),
            r.energy.upper.to_string(),
            r.energy.violated.to_string(),
        ]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history_csv_file(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    write_history_csv(std::fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmkg::{generate_synthetic, SyntheticSpec};

    fn fixture() -> (AlignmentTask, Vec<(usize, usize)>) {
        let spec = SyntheticSpec {
            n: 20,
            noise: 0.0,
            overlap: 0.5,
            dim_r: 8,
            dim_t: 12,
            dim_v: 6,
            communities: 4,
            ..SyntheticSpec::default()
        };
        let (s, t, seeds) = generate_synthetic(&spec).unwrap();
        let task = AlignmentTask::new(&s, &t, &Modality::ALL, true).unwrap();
        (task, seeds.train)
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            dim: 8,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let (task, seeds) = fixture();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = train(&task, &seeds, &small(), &cfg).unwrap();
        assert!(r.history.is_empty());
        assert_eq!(r.params, EncoderParams::init(&r.architecture, cfg.seed));
    }

    #[test]
    fn split_keeps_every_seed_once() {
        let seeds: Vec<(usize, usize)> = (0..30).map(|i| (i, 29 - i)).collect();
        let (tr, va) = split_validation(&seeds, 0.1, 7);
        assert_eq!((tr.len(), va.len()), (27, 3));
        let mut all: Vec<_> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, seeds);
    }

    #[test]
    fn history_csv_has_constant_width() {
        let (task, seeds) = fixture();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let r = train(&task, &seeds, &small(), &cfg).unwrap();
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &r.history).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let widths: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
        assert_eq!(widths.len(), 4);
        assert!(widths.iter().all(|&w| w == widths[0]));
        assert!(text.starts_with("stage,epoch,"));
    }

    #[test]
    fn empty_seeds_rejected() {
        let (task, _) = fixture();
        assert!(train(&task, &[], &small(), &TrainConfig::default()).is_err());
    }
}
