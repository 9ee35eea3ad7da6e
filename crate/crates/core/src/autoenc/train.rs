use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use ndarray::{Array1, Array2};

use super::{
    adam_step, batch_loss, batch_loss_and_grad, encode_batch, forward_batch, record_frames, AdamConfig, AdamState,
    CellKind, Forward, ModelDims, ModelParams, Real, SimFrames,
};
use crate::dataset::{SimulationRecord, SplitDataset};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub t_in: usize,
    pub t_fin: usize,
    pub epochs: usize,
    /// Simulations per mini-batch; each brings all of its components.
    pub batch_size: usize,
    /// Simulations per gradient shard. Shards are the unit of parallel work
    /// and are reduced in order, so changing the thread count never changes
    /// results.
    pub shard_sims: usize,
    pub adam: AdamConfig,
    pub dims: ModelDims,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_in: 12,
            t_fin: 31,
            epochs: 150,
            batch_size: 8,
            shard_sims: 8,
            adam: AdamConfig::default(),
            dims: ModelDims::default(),
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_in == 0 || self.t_in >= self.t_fin {
            return Err(Error::Config(format!(
                "need 0 < t_in < t_fin, got t_in = {}, t_fin = {}",
                self.t_in, self.t_fin
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.shard_sims == 0 {
            return Err(Error::Config("batch_size and shard_sims must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean mini-batch loss seen while training the epoch.
    pub train_loss: f64,
    /// Loss on the test split after the epoch.
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<F> {
    pub params: ModelParams<F>,
    pub history: Vec<EpochLoss>,
}

/// Random stream that draws the initial weights of a training run.
pub fn init_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    seed::stream(seed, 0x1a17)
}

/// Mini-batch Adam training on the normalized split.
pub fn train<F: Real>(
    split: &SplitDataset,
    cfg: &TrainConfig,
    kind: CellKind,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if split.t_fin != cfg.t_fin || split.t_in != cfg.t_in {
        return Err(Error::Config(format!(
            "split has t_in/t_fin {}/{}, config {}/{}",
            split.t_in, split.t_fin, cfg.t_in, cfg.t_fin
        )));
    }
    let train_frames = record_frames::<F>(&split.normalized_train())?;
    let test_frames = record_frames::<F>(&split.normalized_test())?;
    let mut params = ModelParams::<F>::init(cfg.dims, kind, &mut init_rng(cfg.seed));
    let mut adam = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let test_refs: Vec<&SimFrames<F>> = test_frames.iter().collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seed::stream(cfg.seed, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SimFrames<F>> = chunk.iter().map(|&i| &train_frames[i]).collect();
            let (loss, grad) = batch_loss_and_grad(&params, &batch, cfg.t_in, cfg.shard_sims, exec)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            adam_step(&mut params, &grad, &mut adam, &cfg.adam);
        }
        let test_loss = if test_refs.is_empty() {
            f64::NAN
        } else {
            batch_loss(&params, &test_refs, cfg.t_in, cfg.shard_sims, exec)?
                .to_f64()
                .unwrap_or(f64::NAN)
        };
        let record = EpochLoss {
            epoch,
            train_loss: total / train_frames.len() as f64,
            test_loss,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}

/// Forward passes for every component of every (normalized) record, using
/// the first `t_in` frames as input. Work is split into fixed groups of
/// simulations, independent of the thread count.
pub fn predict_records<F: Real>(
    params: &ModelParams<F>,
    records: &[SimulationRecord],
    t_in: usize,
    exec: Execution,
) -> Result<Vec<Vec<Forward<F>>>> {
    let frames = record_frames::<F>(records)?;
    let refs: Vec<&SimFrames<F>> = frames.iter().collect();
    if !refs.is_empty() {
        super::model::check_groups(params, &refs, t_in)?;
    }
    let groups: Vec<&[&SimFrames<F>]> = refs.chunks(8).collect();
    let out = par::map(exec, &groups, |g| {
        let seqs: Vec<&ndarray::Array2<F>> = g.iter().flat_map(|s| s.iter()).collect();
        let mut fwd = forward_batch(params, &seqs, t_in).into_iter();
        g.iter()
            .map(|s| fwd.by_ref().take(s.len()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    });
    Ok(out.into_iter().flatten().collect())
}
/// [`train`] in the precision named by the config. Weights come back as
/// `f64`; for `f32` training the conversion is exact.
pub fn train_at(
    split: &SplitDataset,
    cfg: &TrainConfig,
    kind: CellKind,
    exec: Execution,
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome<f64>> {
    match cfg.precision {
        Precision::F64 => train::<f64>(split, cfg, kind, exec, on_epoch),
        Precision::F32 => {
            let out = train::<f32>(split, cfg, kind, exec, on_epoch)?;
            Ok(TrainOutcome {
                params: out.params.cast(),
                history: out.history,
            })
        }
    }
}

/// [`predict_records`] evaluated in the given precision.
pub fn predict_records_at(
    params: &ModelParams<f64>,
    records: &[SimulationRecord],
    t_in: usize,
    precision: Precision,
    exec: Execution,
) -> Result<Vec<Vec<Forward<f64>>>> {
    match precision {
        Precision::F64 => predict_records(params, records, t_in, exec),
        Precision::F32 => {
            let out = predict_records(&params.cast::<f32>(), records, t_in, exec)?;
            Ok(out.iter().map(|sim| sim.iter().map(Forward::cast).collect()).collect())
        }
    }
}

/// Encoder hidden state over the full length of each sequence, evaluated in
/// the given precision. Sequences are grouped by length and batched in fixed
/// groups of 64.
pub fn encode_records(
    params: &ModelParams<f64>,
    seqs: &[&Array2<f64>],
    precision: Precision,
    exec: Execution,
) -> Result<Vec<Array1<f64>>> {
    fn run<F: super::Real>(
        params: &ModelParams<F>,
        seqs: &[&Array2<f64>],
        exec: Execution,
    ) -> Result<Vec<Array1<f64>>> {
        let cast: Vec<Array2<F>> = seqs.iter().map(|s| super::cast_frames(s)).collect();
        let refs: Vec<&Array2<F>> = cast.iter().collect();
        let chunks: Vec<&[&Array2<F>]> = refs.chunks(64).collect();
        let parts = par::map(exec, &chunks, |c| encode_batch(params, c));
        let mut out = Vec::with_capacity(seqs.len());
        for p in parts {
            out.extend(p?.into_iter().map(|h| h.mapv(|v| v.to_f64().unwrap_or(f64::NAN))));
        }
        Ok(out)
    }
    if let Some(s) = seqs.iter().find(|s| s.nrows() != seqs[0].nrows()) {
        return Err(Error::ShapeMismatch(format!(
            "sequences of {} and {} steps",
            seqs[0].nrows(),
            s.nrows()
        )));
    }
    match precision {
        Precision::F64 => run(params, seqs, exec),
        Precision::F32 => run(&params.cast::<f32>(), seqs, exec),
    }
}
