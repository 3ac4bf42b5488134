//! Offline training loop, metrics CSV and ensemble checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use setrl_nn::{Checkpoint, Module, ParameterSet};

use super::buffer::ReplayBuffer;
use super::ensemble::{QEnsemble, TrainConfig};
use crate::encoders::{NetConfig, Network};
use crate::error::{CoreError, Result};

pub const METRICS_HEADER: &str = "step,loss,mean_target";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean summed TD loss over the logging window.
    pub loss: f64,
    pub mean_target: f64,
    pub wall_time_s: f64,
}

impl MetricsRow {
    /// One CSV line; the wall-time column only when `wall_time` is set.
    pub fn csv(&self, wall_time: bool) -> String {
        let line = format!("{},{},{}", self.step, self.loss, self.mean_target);
        if wall_time {
            format!("{line},{:.3}", self.wall_time_s)
        } else {
            line
        }
    }
}

/// Where training writes its artifacts. Everything is optional.
#[derive(Default)]
pub struct TrainOutputs<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    /// Intermediate checkpoints go here as `step_<n>.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Appends a `wall_time_s` column. Off by default so that reruns
    /// produce identical files.
    pub wall_time: bool,
}

/// Runs `ensemble.config().steps` gradient steps on the buffer.
pub fn train_offline(
    ensemble: &mut QEnsemble,
    buffer: &mut ReplayBuffer,
    mut outputs: TrainOutputs<'_>,
) -> Result<Vec<MetricsRow>> {
    let config = ensemble.config().clone();
    if buffer.is_empty() {
        return Err(CoreError::EmptyBuffer);
    }
    if let Some(w) = outputs.metrics.as_deref_mut() {
        let extra = if outputs.wall_time { ",wall_time_s" } else { "" };
        writeln!(w, "{METRICS_HEADER}{extra}")?;
    }
    let start = Instant::now();
    let log_every = config.log_every.max(1);
    let mut rows = Vec::new();
    let (mut loss_acc, mut target_acc, mut n_acc) = (0.0, 0.0, 0usize);
    for step in 1..=config.steps {
        let m = ensemble.train_step(buffer)?;
        if !m.loss.is_finite() {
            return Err(CoreError::Config(format!("loss diverged at step {step}")));
        }
        loss_acc += m.loss;
        target_acc += m.mean_target;
        n_acc += 1;
        if step.is_multiple_of(log_every) || step == config.steps {
            let row = MetricsRow {
                step,
                loss: loss_acc / n_acc as f64,
                mean_target: target_acc / n_acc as f64,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            if let Some(w) = outputs.metrics.as_deref_mut() {
                writeln!(w, "{}", row.csv(outputs.wall_time))?;
            }
            rows.push(row);
            (loss_acc, target_acc, n_acc) = (0.0, 0.0, 0);
        }
        if let Some(dir) = &outputs.checkpoint_dir {
            if config.checkpoint_every > 0 && step.is_multiple_of(config.checkpoint_every) {
                std::fs::create_dir_all(dir)?;
                ensemble.to_checkpoint().save(dir.join(format!("step_{step}.ckpt")))?;
            }
        }
    }
    Ok(rows)
}

/// Header of DQN checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnDescriptor {
    pub algo: String,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub gradient_steps: u64,
}

impl QEnsemble {
    /// Online and target networks under `online.{0,1}.` and `target.{0,1}.`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let desc = DqnDescriptor {
            algo: "dqn".into(),
            net: self.net_config().clone(),
            train: self.config().clone(),
            gradient_steps: self.gradient_steps(),
        };
        let mut params = ParameterSet::new();
        for (group, nets) in [("online", &self.online), ("target", &self.target)] {
            for (i, n) in nets.iter().enumerate() {
                params.extend_prefixed(&format!("{group}.{i}."), n.parameters());
            }
        }
        Checkpoint::new(serde_json::to_string(&desc).expect("descriptor"), params)
    }

    /// Rebuilds the networks; optimizer moments start fresh.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let desc: DqnDescriptor = serde_json::from_str(&ckpt.descriptor)
            .map_err(|e| CoreError::Config(format!("not a DQN checkpoint: {e}")))?;
        let mut ens = QEnsemble::new(&desc.net, desc.train)?;
        let load = |net: &mut Network, prefix: &str| -> Result<()> {
            let mut part = ParameterSet::new();
            for (name, t) in ckpt.params.iter() {
                if let Some(rest) = name.strip_prefix(prefix) {
                    part.push(rest, t.clone());
                }
            }
            Ok(net.load_parameters(&part)?)
        };
        for i in 0..2 {
            load(&mut ens.online[i], &format!("online.{i}."))?;
            load(&mut ens.target[i], &format!("target.{i}."))?;
        }
        Ok(ens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
