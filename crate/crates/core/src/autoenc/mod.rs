//! Composite sequence autoencoder: an encoder cell summarizes the first
//! `t_in` box frames into one hidden vector, which feeds two decoders, one
//! reconstructing the input window and one predicting the remaining
//! `t_fin − t_in` frames. Forward pass, backpropagation through time and
//! Adam are implemented here; the model is generic over `f32`/`f64`.

mod adam;
mod cell;
mod model;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cell::{cell_step, CellKind, CellParams, DenseParams};
pub use model::{
    batch_loss, batch_loss_and_grad, decode, encode, encode_batch, forward, forward_batch, Forward, ModelDims,
    ModelParams, ParamCounts, SimFrames, TENSOR_NAMES,
};
pub use train::{
    encode_records, init_rng, predict_records, predict_records_at, train, train_at, EpochLoss, Precision, TrainConfig,
    TrainOutcome,
};

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::Array2;

use crate::dataset::SimulationRecord;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Floating-point types the model can run in.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts normalized records into per-simulation frame matrices.
pub fn record_frames<F: Real>(records: &[SimulationRecord]) -> Result<Vec<SimFrames<F>>> {
    records
        .iter()
        .map(|r| {
            r.components
                .iter()
                .map(|c| {
                    if !c.normalized {
                        return Err(Error::Misuse(format!(
                            "sim `{}` component `{}` is not normalized",
                            r.sim_id, c.component_id
                        )));
                    }
                    Ok(cast_frames(&c.frames))
                })
                .collect()
        })
        .collect()
}

pub fn cast_frames<F: Real>(a: &Array2<f64>) -> Array2<F> {
    a.mapv(|v| F::from_f64(v).unwrap_or_else(F::nan))
}

/// Training loss over normalized simulation records.
pub fn loss<F: Real>(params: &ModelParams<F>, batch: &[SimulationRecord], t_in: usize) -> Result<F> {
    let frames = record_frames::<F>(batch)?;
    let refs: Vec<&SimFrames<F>> = frames.iter().collect();
    batch_loss(params, &refs, t_in, usize::MAX, Execution::Sequential)
}

/// Gradient of [`loss`] with respect to every weight.
pub fn backward<F: Real>(params: &ModelParams<F>, batch: &[SimulationRecord], t_in: usize) -> Result<ModelParams<F>> {
    let frames = record_frames::<F>(batch)?;
    let refs: Vec<&SimFrames<F>> = frames.iter().collect();
    Ok(batch_loss_and_grad(params, &refs, t_in, usize::MAX, Execution::Sequential)?.1)
}
