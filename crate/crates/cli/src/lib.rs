//! Pipeline commands behind the `boxseq` binary: synthesize clouds, fit box
//! sequences, train and evaluate the autoencoder, predict and embed.

pub mod commands;
pub mod config;

pub use commands::{cmd_embed, cmd_eval, cmd_fit, cmd_predict, cmd_synth, cmd_train};
pub use config::PipelineConfig;
