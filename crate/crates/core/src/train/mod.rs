//! Training engine: batched gradient accumulation over windows, Adam updates,
//! per-epoch validation with best-on-validation checkpointing, and exact
//! resume from a saved state.

pub mod adam;
pub mod checkpoint;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::path::Path;

use crate::data::labels::LabelSet;
use crate::data::sampler::{window_class_key, BalancedStream, UniformStream};
use crate::data::window::{extract_window, make_windows, windows_for_dataset, Window};
use crate::data::{augment_window, AugmentPolicy, FeatureSequence, LoadedDataset};
use crate::error::{Error, Result};
use crate::loss::{au_pos_weights, bce_multilabel, ccc_loss, inverse_frequency_weights, weighted_cross_entropy};
use crate::metrics::{au_f1, ccc, macro_f1, AuMetrics, ExprMetrics, MetricReport, ScoreTrack, VaMetrics};
use crate::model::{argmax, model_forward, Mode, ModelConfig, ModelParams};
use crate::rng::{self, Rng};
use crate::tensor::{NodeId, Tape};
use crate::{AU_UNITS, EXPR_CLASSES};

/// Which objective(s) the run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Va,
    Expr,
    Au,
    Multi,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "va" => Ok(Task::Va),
            "expr" => Ok(Task::Expr),
            "au" => Ok(Task::Au),
            "multi" => Ok(Task::Multi),
            other => Err(Error::Config(format!(
                "unknown task {other:?}; expected va, expr, au, or multi"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Va => "va",
            Task::Expr => "expr",
            Task::Au => "au",
            Task::Multi => "multi",
        }
    }

    pub fn score_tracks(&self) -> &'static [ScoreTrack] {
        match self {
            Task::Va => &[ScoreTrack::Va],
            Task::Expr => &[ScoreTrack::Expr],
            Task::Au => &[ScoreTrack::Au],
            Task::Multi => &[ScoreTrack::Va, ScoreTrack::Expr, ScoreTrack::Au],
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::Va => "ccc_mean",
            Task::Expr => "expr_macro_f1",
            Task::Au => "au_f1_mean",
            Task::Multi => "multi_mean",
        }
    }
}

/// Run-level training options.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: u32,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub win_len: usize,
    pub stride: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: AugmentPolicy,
    /// Draw windows class-balanced over expression labels when available.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Multi,
            epochs: 30,
            batch_size: 32,
            eval_batch_size: 16,
            win_len: 64,
            stride: 32,
            lr: 1e-4,
            seed: 42,
            augment: AugmentPolicy::default(),
            balanced: true,
        }
    }
}

// ── Evaluation ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
struct FramePred {
    dist: f64,
    va: [f64; 2],
    expr: [f64; EXPR_CLASSES],
    au: [f64; AU_UNITS],
}

/// Run inference over the given windows of one video and keep, per frame,
/// the prediction from the window whose center lies nearest.
fn assemble_video_predictions(
    cfg: &ModelConfig,
    params: &ModelParams,
    features: &FeatureSequence,
    windows: &[(usize, usize)],
    batch_size: usize,
) -> Result<Vec<Option<FramePred>>> {
    let t_total = features.len();
    let mut slots: Vec<Option<FramePred>> = vec![None; t_total];
    // Batching only groups work; each window is an independent pure forward.
    for chunk in windows.chunks(batch_size.max(1)) {
        for &(start, len) in chunk {
            let mut tape = Tape::new();
            let reg = params.register(&mut tape)?;
            let window_feats = &features.features[start * features.dim..(start + len) * features.dim];
            let mut rng = Rng::new(0);
            let out = model_forward(&mut tape, window_feats, len, cfg, &reg, Mode::Infer, &mut rng)?;
            let preds = out.extract(&tape);
            let center = start as f64 + (len as f64 - 1.0) / 2.0;
            for i in 0..len {
                let frame = start + i;
                let dist = (frame as f64 - center).abs();
                let better = match &slots[frame] {
                    None => true,
                    Some(existing) => dist < existing.dist,
                };
                if better {
                    slots[frame] = Some(FramePred {
                        dist,
                        va: preds.va[i],
                        expr: preds.expr_logits[i],
                        au: preds.au_logits[i],
                    });
                }
            }
        }
    }
    Ok(slots)
}

/// Evaluate a model over a dataset: windowed inference, per-frame
/// de-duplication by nearest window center, then the challenge metrics over
/// every annotated frame.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &ModelParams,
    ds: &LoadedDataset,
    win_len: usize,
    stride: usize,
    batch_size: usize,
) -> Result<MetricReport> {
    let mut va_pred = (Vec::new(), Vec::new());
    let mut va_gold = (Vec::new(), Vec::new());
    let mut expr_pred = Vec::new();
    let mut expr_gold = Vec::new();
    let mut au_pred: Vec<[u8; AU_UNITS]> = Vec::new();
    let mut au_gold: Vec<[u8; AU_UNITS]> = Vec::new();

    for video in &ds.videos {
        let windows = make_windows(video.features.len(), Some(&video.labels), win_len, stride)?;
        let slots =
            assemble_video_predictions(cfg, params, &video.features, &windows, batch_size)?;
        let labels = &video.labels;
        for (i, slot) in slots.iter().enumerate() {
            let Some(pred) = slot else { continue };
            if labels.va.mask[i] {
                va_pred.0.push(pred.va[0]);
                va_pred.1.push(pred.va[1]);
                va_gold.0.push(labels.va.values[i][0]);
                va_gold.1.push(labels.va.values[i][1]);
            }
            if labels.expr.mask[i] {
                expr_pred.push(argmax(&pred.expr));
                expr_gold.push(labels.expr.classes[i] as usize);
            }
            if labels.au.mask[i] {
                au_pred.push(std::array::from_fn(|u| u8::from(pred.au[u] > 0.0)));
                au_gold.push(labels.au.bits[i]);
            }
        }
    }

    let va = if va_gold.0.is_empty() {
        None
    } else {
        Some(VaMetrics::new(
            ccc(&va_pred.0, &va_gold.0)?,
            ccc(&va_pred.1, &va_gold.1)?,
            va_gold.0.len(),
        ))
    };
    let expr = if expr_gold.is_empty() {
        None
    } else {
        Some(ExprMetrics {
            macro_f1: macro_f1(&expr_pred, &expr_gold, EXPR_CLASSES)?,
            frames: expr_gold.len(),
        })
    };
    let au = if au_gold.is_empty() {
        None
    } else {
        let (per_unit, mean) = au_f1(&au_pred, &au_gold)?;
        Some(AuMetrics {
            f1_per_unit: per_unit,
            f1_mean: mean,
            frames: au_gold.len(),
        })
    };
    Ok(MetricReport { va, expr, au })
}

/// Per-frame predictions for an unlabeled sequence, as a fully-valid label
/// set: tanh-bounded VA, argmax expression, action units thresholded at
/// sigmoid 0.5 (logit 0).
pub fn predict_sequence(
    cfg: &ModelConfig,
    params: &ModelParams,
    features: &FeatureSequence,
) -> Result<LabelSet> {
    use crate::data::labels::{AuTrack, ExprTrack, VaTrack};
    if features.dim != cfg.d_v {
        return Err(Error::dimension(
            "predict_sequence",
            &[features.dim],
            &[cfg.d_v],
        ));
    }
    let windows = make_windows(features.len(), None, cfg.max_t, cfg.max_t)?;
    let slots = assemble_video_predictions(cfg, params, features, &windows, 16)?;
    let t = features.len();
    let mut set = LabelSet {
        frame_ids: features.frame_ids.clone(),
        va: VaTrack {
            values: Vec::with_capacity(t),
            mask: vec![true; t],
        },
        expr: ExprTrack {
            classes: Vec::with_capacity(t),
            mask: vec![true; t],
        },
        au: AuTrack {
            bits: Vec::with_capacity(t),
            mask: vec![true; t],
        },
    };
    for slot in slots {
        let pred = slot.expect("windows cover every frame when unlabeled");
        // Quantize to the 6-decimal label format so the written file parses
        // back to exactly these values.
        set.va.values.push([
            (pred.va[0] * 1e6).round() / 1e6,
            (pred.va[1] * 1e6).round() / 1e6,
        ]);
        set.expr.classes.push(argmax(&pred.expr) as u8);
        set.au
            .bits
            .push(std::array::from_fn(|u| u8::from(pred.au[u] > 0.0)));
    }
    Ok(set)
}

// ── Training ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Default)]
struct LossValues {
    total: f64,
    va: Option<f64>,
    expr: Option<f64>,
    au: Option<f64>,
}

/// Aggregates reported by one training epoch.
#[derive(Debug, Clone, Default)]
pub struct EpochStats {
    pub loss_total: f64,
    pub loss_va: Option<f64>,
    pub loss_expr: Option<f64>,
    pub loss_au: Option<f64>,
    /// Windows that contributed gradient.
    pub windows: usize,
    pub skipped_windows: u64,
    pub skipped_batches: u64,
}

enum Sampler {
    Balanced(BalancedStream),
    Uniform(UniformStream),
}

impl Sampler {
    fn next_index(&mut self) -> usize {
        match self {
            Sampler::Balanced(s) => s.next_index(),
            Sampler::Uniform(s) => s.next_index(),
        }
    }

    fn rng_state(&self) -> u64 {
        match self {
            Sampler::Balanced(s) => s.rng_state(),
            Sampler::Uniform(s) => s.rng_state(),
        }
    }

    fn set_rng_state(&mut self, state: u64) {
        match self {
            Sampler::Balanced(s) => s.set_rng_state(state),
            Sampler::Uniform(s) => s.set_rng_state(state),
        }
    }
}

fn window_eligible(task: Task, ds: &LoadedDataset, w: &Window) -> bool {
    let labels = &ds.videos[w.video].labels;
    let range = w.start..w.start + w.len;
    let va_ok = range.clone().filter(|&i| labels.va.mask[i]).count() >= 2;
    let expr_ok = range.clone().any(|i| labels.expr.mask[i]);
    let au_ok = range.clone().any(|i| labels.au.mask[i]);
    match task {
        Task::Va => va_ok,
        Task::Expr => expr_ok,
        Task::Au => au_ok,
        Task::Multi => va_ok || expr_ok || au_ok,
    }
}

/// Mutable training state; one per run, single-writer.
pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: u32,
    pub global_step: u64,
    pub best_score: f64,
    pub best_epoch: u32,
    windows: Vec<Window>,
    sampler: Sampler,
    augment_rng: Rng,
    class_weights: [f64; EXPR_CLASSES],
    au_weights: [f64; AU_UNITS],
}

impl Trainer {
    pub fn new(
        model_cfg: &ModelConfig,
        train_cfg: &TrainConfig,
        train_ds: &LoadedDataset,
    ) -> Result<Self> {
        model_cfg.validate()?;
        train_cfg.augment.validate()?;
        let params = ModelParams::init(model_cfg, model_cfg.seed)?;
        let adam = AdamState::new(&params, AdamHyper::with_lr(train_cfg.lr));
        Self::with_state(model_cfg, train_cfg, train_ds, params, adam, 0, 0, f64::NEG_INFINITY, 0, None, None)
    }

    /// Rebuild a trainer from a checkpoint; the window set and class weights
    /// are derived from the dataset exactly as in a fresh run.
    pub fn from_checkpoint(
        ck: &Checkpoint,
        train_cfg: &TrainConfig,
        train_ds: &LoadedDataset,
    ) -> Result<Self> {
        let sampler_state = ck
            .rng_states
            .iter()
            .find(|(n, _)| n == "sampler")
            .map(|(_, s)| *s);
        let augment_state = ck
            .rng_states
            .iter()
            .find(|(n, _)| n == "augment")
            .map(|(_, s)| *s);
        Self::with_state(
            &ck.config,
            train_cfg,
            train_ds,
            ck.params.clone(),
            ck.adam.clone(),
            ck.epoch,
            ck.global_step,
            ck.best_score,
            ck.best_epoch,
            sampler_state,
            augment_state,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn with_state(
        model_cfg: &ModelConfig,
        train_cfg: &TrainConfig,
        train_ds: &LoadedDataset,
        params: ModelParams,
        adam: AdamState,
        epoch: u32,
        global_step: u64,
        best_score: f64,
        best_epoch: u32,
        sampler_state: Option<u64>,
        augment_state: Option<u64>,
    ) -> Result<Self> {
        if train_ds.d_v != model_cfg.d_v {
            return Err(Error::Config(format!(
                "dataset feature dim {} does not match model d_v {}",
                train_ds.d_v, model_cfg.d_v
            )));
        }
        if train_cfg.win_len > model_cfg.max_t {
            return Err(Error::Config(format!(
                "win_len {} exceeds model max_T {}",
                train_cfg.win_len, model_cfg.max_t
            )));
        }
        let windows = windows_for_dataset(train_ds, train_cfg.win_len, train_cfg.stride)?;
        if windows.is_empty() {
            return Err(Error::Config("training split yields no windows".into()));
        }
        let keys: Vec<Option<u8>> = windows
            .iter()
            .map(|w| window_class_key(train_ds, w))
            .collect();
        if !windows
            .iter()
            .any(|w| window_eligible(train_cfg.task, train_ds, w))
        {
            return Err(Error::Config(format!(
                "task/label mismatch: no window in split {:?} has labels usable for task {}",
                train_ds.split,
                train_cfg.task.name()
            )));
        }
        let sampler_rng = Rng::for_stream(train_cfg.seed, rng::stream::SAMPLER);
        let sampler = if train_cfg.balanced && keys.iter().any(|k| k.is_some()) {
            Sampler::Balanced(BalancedStream::new(&keys, sampler_rng)?)
        } else {
            let eligible: Vec<usize> = windows
                .iter()
                .enumerate()
                .filter(|(_, w)| window_eligible(train_cfg.task, train_ds, w))
                .map(|(i, _)| i)
                .collect();
            Sampler::Uniform(UniformStream::new(eligible, sampler_rng)?)
        };
        let mut trainer = Trainer {
            model_cfg: model_cfg.clone(),
            train_cfg: train_cfg.clone(),
            params,
            adam,
            epoch,
            global_step,
            best_score,
            best_epoch,
            windows,
            sampler,
            augment_rng: Rng::for_stream(train_cfg.seed, rng::stream::AUGMENT),
            class_weights: inverse_frequency_weights(&train_ds.expr_counts()),
            au_weights: {
                let (pos, neg) = train_ds.au_counts();
                au_pos_weights(&pos, &neg)
            },
        };
        if let Some(s) = sampler_state {
            trainer.sampler.set_rng_state(s);
        }
        if let Some(s) = augment_state {
            trainer.augment_rng = Rng::from_state(s);
        }
        Ok(trainer)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model_cfg.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            global_step: self.global_step,
            best_score: self.best_score,
            best_epoch: self.best_epoch,
            best_metric: self.train_cfg.task.metric_name().into(),
            rng_states: vec![
                ("sampler".into(), self.sampler.rng_state()),
                ("augment".into(), self.augment_rng.state()),
            ],
        }
    }

    /// Forward + backward over one window. Returns per-parameter gradients
    /// (walk order) and the loss values observed.
    fn window_gradients(
        &self,
        sample: &crate::data::window::WindowSample,
        step: u64,
    ) -> Result<(Vec<Vec<f64>>, LossValues)> {
        let mut tape = Tape::new();
        let reg = self.params.register(&mut tape)?;
        let mut drop_rng = Rng::for_step(self.train_cfg.seed, rng::stream::DROPOUT, step);
        let out = model_forward(
            &mut tape,
            &sample.features,
            sample.len(),
            &self.model_cfg,
            &reg,
            Mode::Train,
            &mut drop_rng,
        )?;

        let task = self.train_cfg.task;
        let mut parts: Vec<NodeId> = Vec::new();
        let mut values = LossValues::default();
        let mut try_part = |tape: &mut Tape,
                            part: Result<NodeId>,
                            slot: &mut Option<f64>,
                            required: bool|
         -> Result<()> {
            match part {
                Ok(node) => {
                    *slot = Some(tape.value(node)[0]);
                    parts.push(node);
                    Ok(())
                }
                Err(Error::SkipBatch(msg)) if !required => {
                    let _ = msg;
                    Ok(())
                }
                Err(e) => Err(e),
            }
        };
        let multi = task == Task::Multi;
        if task == Task::Va || multi {
            let part = ccc_loss(&mut tape, out.va, &sample.va, &sample.va_mask);
            try_part(&mut tape, part, &mut values.va, !multi)?;
        }
        if task == Task::Expr || multi {
            let part = weighted_cross_entropy(
                &mut tape,
                out.expr_logits,
                &sample.expr,
                &sample.expr_mask,
                &self.class_weights,
                &sample.frame_ids,
            );
            try_part(&mut tape, part, &mut values.expr, !multi)?;
        }
        if task == Task::Au || multi {
            let part = bce_multilabel(
                &mut tape,
                out.au_logits,
                &sample.au,
                &sample.au_mask,
                &self.au_weights,
                &sample.frame_ids,
            );
            try_part(&mut tape, part, &mut values.au, !multi)?;
        }
        if parts.is_empty() {
            return Err(Error::SkipBatch(
                "no task has enough valid frames in this window".into(),
            ));
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = tape.add(total, p)?;
        }
        values.total = tape.value(total)[0];
        tape.backward(total)?;
        let grads = reg
            .all_ids()
            .iter()
            .map(|&id| {
                tape.grad(id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.numel_of(id)])
            })
            .collect();
        Ok((grads, values))
    }

    /// One epoch: `windows.len()` draws from the sampler, gradients averaged
    /// over each batch before a single Adam step. Skip signals are counted,
    /// never fatal.
    pub fn train_epoch(&mut self, ds: &LoadedDataset) -> Result<EpochStats> {
        let draws = self.windows.len();
        let batch = self.train_cfg.batch_size.max(1);
        let mut stats = EpochStats::default();
        let mut sums = LossValues::default();
        let mut counts = (0usize, 0usize, 0usize);

        let mut grad_acc: Vec<Vec<f64>> = {
            let mut out = Vec::new();
            self.params.for_each(|_, p| out.push(vec![0.0; p.data.len()]));
            out
        };
        let mut batch_contrib = 0usize;

        for i in 0..draws {
            let widx = self.sampler.next_index();
            let w = self.windows[widx];
            let mut sample = extract_window(ds, &w);
            if !self.train_cfg.augment.is_off() {
                sample = augment_window(&sample, &self.train_cfg.augment, &mut self.augment_rng);
            }
            let step = self.global_step;
            self.global_step += 1;
            match self.window_gradients(&sample, step) {
                Ok((grads, values)) => {
                    for (acc, g) in grad_acc.iter_mut().zip(grads.iter()) {
                        for (a, &v) in acc.iter_mut().zip(g.iter()) {
                            *a += v;
                        }
                    }
                    batch_contrib += 1;
                    stats.windows += 1;
                    sums.total += values.total;
                    if let Some(v) = values.va {
                        sums.va = Some(sums.va.unwrap_or(0.0) + v);
                        counts.0 += 1;
                    }
                    if let Some(v) = values.expr {
                        sums.expr = Some(sums.expr.unwrap_or(0.0) + v);
                        counts.1 += 1;
                    }
                    if let Some(v) = values.au {
                        sums.au = Some(sums.au.unwrap_or(0.0) + v);
                        counts.2 += 1;
                    }
                }
                Err(Error::SkipBatch(_)) => {
                    stats.skipped_windows += 1;
                }
                Err(e) => return Err(e),
            }

            let end_of_batch = (i + 1) % batch == 0 || i + 1 == draws;
            if end_of_batch {
                if batch_contrib > 0 {
                    for acc in grad_acc.iter_mut() {
                        for v in acc.iter_mut() {
                            *v /= batch_contrib as f64;
                        }
                    }
                    adam_step(&mut self.params, &grad_acc, &mut self.adam)?;
                } else {
                    stats.skipped_batches += 1;
                }
                for acc in grad_acc.iter_mut() {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                }
                batch_contrib = 0;
            }
        }

        if stats.windows > 0 {
            stats.loss_total = sums.total / stats.windows as f64;
        }
        stats.loss_va = sums.va.map(|s| s / counts.0 as f64);
        stats.loss_expr = sums.expr.map(|s| s / counts.1 as f64);
        stats.loss_au = sums.au.map(|s| s / counts.2 as f64);
        Ok(stats)
    }
}

/// Result of a fit run: the best checkpoint, the state after the final
/// epoch (the resume point), and the per-epoch log lines.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub epoch_lines: Vec<String>,
    pub skipped_batches: u64,
}

fn epoch_line(epoch: u32, stats: &EpochStats, report: &MetricReport) -> String {
    let mut line = format!("{epoch} loss_total={:.6}", stats.loss_total);
    if let Some(v) = stats.loss_va {
        line.push_str(&format!(" loss_va={v:.6}"));
    }
    if let Some(v) = stats.loss_expr {
        line.push_str(&format!(" loss_expr={v:.6}"));
    }
    if let Some(v) = stats.loss_au {
        line.push_str(&format!(" loss_au={v:.6}"));
    }
    line.push_str(&format!(
        " skipped_windows={} skipped_batches={}",
        stats.skipped_windows, stats.skipped_batches
    ));
    line.push(' ');
    line.push_str(&report.to_flat_line());
    line
}

fn check_val_labels(task: Task, val_ds: &LoadedDataset) -> Result<()> {
    use crate::data::labels::TaskKind;
    let ok = match task {
        Task::Va => val_ds.valid_frames(TaskKind::Va) >= 2,
        Task::Expr => val_ds.valid_frames(TaskKind::Expr) > 0,
        Task::Au => val_ds.valid_frames(TaskKind::Au) > 0,
        Task::Multi => {
            val_ds.valid_frames(TaskKind::Va) >= 2
                || val_ds.valid_frames(TaskKind::Expr) > 0
                || val_ds.valid_frames(TaskKind::Au) > 0
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "task/label mismatch: validation split {:?} has no annotations for task {}",
            val_ds.split,
            task.name()
        )))
    }
}

fn run_fit(
    mut trainer: Trainer,
    train_ds: &LoadedDataset,
    val_ds: &LoadedDataset,
    out_dir: Option<&Path>,
) -> Result<FitOutcome> {
    let tc = trainer.train_cfg.clone();
    check_val_labels(tc.task, val_ds)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let eval_now = |t: &Trainer| -> Result<(MetricReport, f64)> {
        let report = evaluate(
            &t.model_cfg,
            &t.params,
            val_ds,
            tc.win_len,
            tc.win_len,
            tc.eval_batch_size,
        )?;
        let score = report
            .score(tc.task.score_tracks())
            .ok_or_else(|| Error::Config("validation produced no score for the task".into()))?;
        Ok((report, score))
    };

    let mut best: Option<Checkpoint> = None;
    let mut epoch_lines = Vec::new();
    let mut skipped_batches = 0;

    if tc.epochs == 0 && trainer.epoch == 0 {
        // Degenerate run: evaluate the initial weights once and return them.
        let (_report, score) = eval_now(&trainer)?;
        trainer.best_score = score;
        trainer.best_epoch = 0;
        let ck = trainer.to_checkpoint();
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("best.afck"), &ck)?;
            save_checkpoint(&dir.join("last.afck"), &ck)?;
            std::fs::write(dir.join("train.log"), "")?;
        }
        return Ok(FitOutcome {
            best: ck.clone(),
            last: ck,
            epoch_lines,
            skipped_batches: 0,
        });
    }

    for epoch in trainer.epoch + 1..=tc.epochs {
        let stats = trainer.train_epoch(train_ds)?;
        skipped_batches += stats.skipped_batches;
        trainer.epoch = epoch;
        let (report, score) = eval_now(&trainer)?;
        epoch_lines.push(epoch_line(epoch, &stats, &report));
        if score > trainer.best_score {
            trainer.best_score = score;
            trainer.best_epoch = epoch;
            let ck = trainer.to_checkpoint();
            if let Some(dir) = out_dir {
                save_checkpoint(&dir.join("best.afck"), &ck)?;
            }
            best = Some(ck);
        }
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("last.afck"), &trainer.to_checkpoint())?;
            let mut log = epoch_lines.join("\n");
            log.push('\n');
            std::fs::write(dir.join("train.log"), log)?;
        }
    }

    let last = trainer.to_checkpoint();
    // Resumed runs may never improve on the loaded best; fall back to the
    // carried state, which records the historical best score.
    let best = best.unwrap_or_else(|| last.clone());
    Ok(FitOutcome {
        best,
        last,
        epoch_lines,
        skipped_batches,
    })
}

/// Train from scratch for `train_cfg.epochs` epochs, evaluating on `val_ds`
/// after each and keeping the best checkpoint by the task's tracked metric.
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_ds: &LoadedDataset,
    val_ds: &LoadedDataset,
    out_dir: Option<&Path>,
) -> Result<FitOutcome> {
    let trainer = Trainer::new(model_cfg, train_cfg, train_ds)?;
    run_fit(trainer, train_ds, val_ds, out_dir)
}

/// Continue a run from a checkpoint until `train_cfg.epochs` total epochs.
/// With identical data and config this reproduces the uninterrupted
/// trajectory bit for bit.
pub fn fit_resume(
    ck: &Checkpoint,
    train_cfg: &TrainConfig,
    train_ds: &LoadedDataset,
    val_ds: &LoadedDataset,
    out_dir: Option<&Path>,
) -> Result<FitOutcome> {
    let trainer = Trainer::from_checkpoint(ck, train_cfg, train_ds)?;
    run_fit(trainer, train_ds, val_ds, out_dir)
}
