//! Named hyperparameter presets for the two dialect/language sub-tasks.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const PRESET_NAMES: &[&str] = &["subtask2", "subtask1-run1", "subtask1-run2", "subtask1-run3"];

/// Returns the model and training settings of a preset. Data-dependent
/// sizes (`alphabet_size`, `num_classes`) are left at zero.
pub fn preset(name: &str) -> Result<(ModelConfig, TrainConfig)> {
    let base = ModelConfig::default();
    let train = TrainConfig::default();
    let big_filters = "1:50,2:100,3:150,4:200,5:200,6:200,7:200";
    match name {
        "subtask2" => Ok((base, train)),
        "subtask1-run1" => Ok((base, TrainConfig { batch_size: 64, ..train })),
        "subtask1-run2" => Ok((
            ModelConfig {
                filter_spec: big_filters.parse()?,
                ..base
            },
            TrainConfig { batch_size: 64, ..train },
        )),
        "subtask1-run3" => Ok((
            ModelConfig {
                filter_spec: big_filters.parse()?,
                fc_dim: 500,
                dropout_fc: 0.7,
                ..base
            },
            TrainConfig { batch_size: 64, ..train },
        )),
        other => Err(Error::InvalidConfig(format!(
            "unknown preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
