//! Online training driven by a run configuration.

use std::path::Path;

use sipsim_neural::checkpoint::{self, CheckpointMeta};
use sipsim_neural::{ReceiverNets, TrainConfig, TrainLogRecord, Trainer};

use crate::config::RunConfig;
use crate::Result;

/// Trains from scratch, or from `resume` with a fresh optimizer, and returns
/// the networks with the metadata stored alongside them.
pub fn train(
    cfg: &RunConfig,
    tc: TrainConfig,
    resume: Option<ReceiverNets<f32>>,
    on_log: impl FnMut(&TrainLogRecord) -> sipsim_neural::Result<()>,
) -> Result<(ReceiverNets<f32>, CheckpointMeta)> {
    let channel = cfg.channel_model()?;
    let mut trainer = match resume {
        Some(nets) => Trainer::resume(tc, &channel, nets)?,
        None => Trainer::new(tc, &channel)?,
    };
    trainer.run(on_log)?;
    let tc = &trainer.config;
    let meta = CheckpointMeta {
        alpha: tc.alpha,
        iterations: tc.iterations,
        layers: tc.layers.clone(),
        mcs: tc.mcs.clone(),
        steps: trainer.steps_done(),
        note: cfg.label(),
    };
    Ok((trainer.nets, meta))
}

/// Trains with the config's `[train]` section and writes the checkpoint.
pub fn train_to(cfg: &RunConfig, out: &Path) -> Result<CheckpointMeta> {
    let (nets, meta) = train(cfg, cfg.train_config()?, None, |_| Ok(()))?;
    checkpoint::save(out, &nets, &meta)?;
    Ok(meta)
}
