//! Window construction, the Adam epoch loop with early stopping on
//! validation ND, and per-epoch diagnostics.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TimeSeriesPanel;
use crate::metrics::MetricsError;
use crate::model::{Model, ModelError, WindowView};
use crate::nn::{AdamConfig, AdamState, ParamStore};
use crate::seeding;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("window of {cond}+{pred} days does not fit {t} observed days")]
    WindowTooLong { cond: usize, pred: usize, t: usize },
    #[error("no training windows (need at least one training and one validation window)")]
    NoWindows,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(
        "non-finite loss {loss} in epoch {epoch} on window {window_index} (days {start}..{end})"
    )]
    NonFiniteLoss {
        epoch: usize,
        window_index: usize,
        start: usize,
        end: usize,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One training instance: `cond_len` warm-up days followed by `pred_len`
/// scored days, starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingWindow {
    pub start: usize,
    pub cond_len: usize,
    pub pred_len: usize,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.cond_len + self.pred_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> usize {
        self.start + self.len()
    }
}

/// How prediction-range covariates and transitions are fed while sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FuturePolicy {
    /// Freeze covariates and transitions at the last conditioning day
    /// (future mobility is unknown at forecast time).
    #[default]
    HoldLast,
    /// Use the observed future values (retrospective backtesting).
    Actual,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub cond_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    pub validation_fraction: f64,
    pub batch_size: usize,
    /// Score the conditioning range too, not just the prediction range.
    pub full_range_loss: bool,
    pub future_covariates: FuturePolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            patience: 10,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            cond_len: 28,
            pred_len: 7,
            stride: 7,
            validation_fraction: 0.2,
            batch_size: 1,
            full_range_loss: false,
            future_covariates: FuturePolicy::HoldLast,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs and patience must be positive".into(),
            ));
        }
        if self.stride == 0 {
            return Err(TrainError::InvalidConfig("stride must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainError::InvalidConfig(
                "validation_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.cond_len == 0 || self.pred_len == 0 {
            return Err(TrainError::InvalidConfig(
                "cond_len and pred_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nd: f64,
    pub val_nrmse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based index of the epoch with the lowest validation ND.
    pub best_epoch: usize,
    pub best_val_nd: f64,
    pub best_val_nrmse: f64,
    pub stopped_early: bool,
}

/// Windows at starts 0, stride, 2·stride, … while they fit.
pub fn make_windows(
    t_len: usize,
    cond_len: usize,
    pred_len: usize,
    stride: usize,
) -> Result<Vec<TrainingWindow>, TrainError> {
    if stride == 0 {
        return Err(TrainError::InvalidConfig("stride must be positive".into()));
    }
    let total = cond_len + pred_len;
    if total > t_len {
        return Err(TrainError::WindowTooLong {
            cond: cond_len,
            pred: pred_len,
            t: t_len,
        });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + total <= t_len {
        out.push(TrainingWindow {
            start,
            cond_len,
            pred_len,
        });
        start += stride;
    }
    Ok(out)
}

/// Chronological split: the last ~`fraction` of windows become validation.
pub fn split_windows(
    windows: &[TrainingWindow],
    fraction: f64,
) -> Result<(Vec<TrainingWindow>, Vec<TrainingWindow>), TrainError> {
    if windows.len() < 2 {
        return Err(TrainError::NoWindows);
    }
    let n_val = ((windows.len() as f64 * fraction).round() as usize)
        .max(1)
        .min(windows.len() - 1);
    let cut = windows.len() - n_val;
    Ok((windows[..cut].to_vec(), windows[cut..].to_vec()))
}

fn window_view<'a>(
    panel: &'a TimeSeriesPanel,
    transitions: &'a [Array2<f64>],
    w: &TrainingWindow,
) -> WindowView<'a> {
    WindowView {
        targets: panel.targets.slice(ndarray::s![.., w.start..w.end()]),
        covariates: &panel.covariates[w.start..w.end()],
        transitions: &transitions[w.start..w.end()],
    }
}

/// Forward/backward one window, adding its gradients into the model's
/// buffers. Returns the window's loss.
pub fn accumulate_window(
    model: &mut Model,
    panel: &TimeSeriesPanel,
    transitions: &[Array2<f64>],
    window: &TrainingWindow,
    full_range_loss: bool,
) -> Result<f64, TrainError> {
    let view = window_view(panel, transitions, window);
    let loss_range = if full_range_loss {
        0..window.len()
    } else {
        window.cond_len..window.len()
    };
    let fwd = model.forward_window(&view, loss_range)?;
    let grads = fwd.tape.backward(fwd.loss).map_err(ModelError::Nn)?;
    model.params.absorb(&fwd.tape, &fwd.lease, &grads);
    Ok(fwd.loss_value)
}

/// Point forecast for one window via conditioning plus ancestral sampling.
pub fn forecast_window(
    model: &Model,
    panel: &TimeSeriesPanel,
    transitions: &[Array2<f64>],
    window: &TrainingWindow,
    policy: FuturePolicy,
    seed: u64,
) -> Result<Array2<f64>, TrainError> {
    let cond = TrainingWindow {
        start: window.start,
        cond_len: window.cond_len,
        pred_len: 0,
    };
    let cond_view = window_view(panel, transitions, &cond);
    let (state, _) = model.condition(&cond_view)?;

    let last_day = window.start + window.cond_len - 1;
    let pred_range = (window.start + window.cond_len)..window.end();
    let (covs, trans): (Vec<_>, Vec<_>) = match policy {
        FuturePolicy::HoldLast => (
            vec![panel.covariates[last_day].clone(); window.pred_len],
            vec![transitions[last_day].clone(); window.pred_len],
        ),
        FuturePolicy::Actual => (
            panel.covariates[pred_range.clone()].to_vec(),
            transitions[pred_range.clone()].to_vec(),
        ),
    };
    let z_last = panel.targets.column(last_day).to_owned();
    let artifact = model.ancestral_sample(&state, &z_last, &covs, &trans, seed)?;
    Ok(artifact.point)
}

/// Pooled validation metrics over a window set. Deterministic in `seed`.
pub fn evaluate_windows(
    model: &Model,
    panel: &TimeSeriesPanel,
    transitions: &[Array2<f64>],
    windows: &[TrainingWindow],
    policy: FuturePolicy,
    seed: u64,
) -> Result<(f64, f64), TrainError> {
    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    let mut abs_actual = 0.0;
    let mut count = 0usize;
    for (k, w) in windows.iter().enumerate() {
        let point = forecast_window(
            model,
            panel,
            transitions,
            w,
            policy,
            seeding::fanout_indexed(seed, "window", k as u64),
        )?;
        let pred_start = w.start + w.cond_len;
        let actual = panel.targets.slice(ndarray::s![.., pred_start..w.end()]);
        for (z, zh) in actual.iter().zip(point.iter()) {
            abs_err += (z - zh).abs();
            sq_err += (z - zh) * (z - zh);
            abs_actual += z.abs();
            count += 1;
        }
    }
    if abs_actual == 0.0 {
        return Err(TrainError::Metrics(MetricsError::ZeroDenominator));
    }
    let nd = abs_err / abs_actual;
    let nrmse = (sq_err / count as f64).sqrt() / (abs_actual / count as f64);
    Ok((nd, nrmse))
}

pub struct TrainOutcome {
    pub best_params: ParamStore,
    pub report: TrainReport,
}

/// The epoch loop: shuffle, accumulate per-batch gradients, clip, step;
/// validate by sampling; keep the best-ND parameters; stop after `patience`
/// epochs without improvement.
pub fn train(
    model: &mut Model,
    tc: &TrainConfig,
    panel: &TimeSeriesPanel,
    transitions: &[Array2<f64>],
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    if transitions.len() != panel.t_len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} transition matrices for {} days",
            transitions.len(),
            panel.t_len()
        )));
    }
    let windows = make_windows(panel.t_len(), tc.cond_len, tc.pred_len, tc.stride)?;
    let (train_windows, val_windows) = split_windows(&windows, tc.validation_fraction)?;

    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(seeding::fanout(tc.seed, "shuffle"));
    let val_seed = seeding::fanout(tc.seed, "validation");
    let mut adam = AdamState::new(tc.adam, &model.params);

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_nd: f64::INFINITY,
        best_val_nrmse: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;

    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            model.params.zero_grads();
            for &wi in chunk {
                let w = &train_windows[wi];
                let loss =
                    accumulate_window(model, panel, transitions, w, tc.full_range_loss)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        window_index: wi,
                        start: w.start,
                        end: w.end(),
                        loss,
                    });
                }
                loss_sum += loss;
            }
            if let Some(max_norm) = tc.clip_norm {
                model.params.clip_global_norm(max_norm);
            }
            adam.step(&mut model.params);
        }
        let train_loss = loss_sum / train_windows.len() as f64;

        let (val_nd, val_nrmse) = evaluate_windows(
            model,
            panel,
            transitions,
            &val_windows,
            tc.future_covariates,
            val_seed,
        )?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_nd,
            val_nrmse,
        });

        if val_nd < report.best_val_nd {
            report.best_val_nd = val_nd;
            report.best_val_nrmse = val_nrmse;
            report.best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best_params,
        report,
    })
}

/// Plot-ready `(epoch, validation ND)` table.
pub fn nd_vs_epoch_trace(report: &TrainReport) -> Vec<(usize, f64)> {
    report.epochs.iter().map(|e| (e.epoch, e.val_nd)).collect()
}

/// One JSON record per epoch followed by a summary record.
pub fn write_report_jsonl(path: &std::path::Path, report: &TrainReport) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in &report.epochs {
        writeln!(f, "{}", serde_json::to_string(e).expect("serializable record"))?;
    }
    let summary = serde_json::json!({
        "best_epoch": report.best_epoch,
        "best_val_nd": report.best_val_nd,
        "best_val_nrmse": report.best_val_nrmse,
        "stopped_early": report.stopped_early,
    });
    writeln!(f, "{summary}")?;
    Ok(())
}
