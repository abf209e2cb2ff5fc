//! Pipeline stages of the `aoa` command: data preparation, reader training
//! and evaluation, n-best extraction, language models, clustering, weight
//! tuning and re-ranking. Every stage reads and writes files in one output
//! directory.

pub mod commands;
pub mod config;
mod error;
pub mod fsutil;
pub mod report;

pub use commands::{
    cmd_cluster, cmd_eval, cmd_nbest, cmd_prepare, cmd_rerank, cmd_synth, cmd_train, cmd_train_lm, cmd_tune, Models, RerankReport,
    SynthTask, TuneReport,
};
pub use config::{RunConfig, OUTPUT_DIR_ENV};
pub use error::CliError;
pub use report::EvalReport;

use aoa_core::rerank::FeatureWeights;

/// Parses `nn,global,local,class`.
pub fn rerank_weights(text: &str) -> Result<FeatureWeights, CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("weights {text:?} are not numbers")))?;
    let arr: [f64; 4] =
        values.try_into().map_err(|_| CliError::Usage(format!("weights {text:?} must have four comma-separated values")))?;
    if arr.iter().any(|w| !w.is_finite()) {
        return Err(CliError::Usage(format!("weights {text:?} must be finite")));
    }
    Ok(FeatureWeights::from_array(arr))
}
