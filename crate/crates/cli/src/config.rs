//! Settings resolution: defaults, then a preset, then a TOML file, then
//! individual flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use charlid::model::{FilterSpec, ModelConfig};
use charlid::presets::preset;
use charlid::train::TrainConfig;
use clap::Args;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Args, Debug, Clone, Default)]
pub struct ModelOpts {
    /// TOML file with `[model]` and `[train]` tables
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Named preset applied before the config file
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Characters kept per text
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Character embedding size
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Convolution banks as `width:filters,...`
    #[arg(long, value_name = "SPEC")]
    pub filters: Option<FilterSpec>,
    /// Hidden layer size; 0 removes the layer
    #[arg(long)]
    pub fc_dim: Option<usize>,
    /// Dropout rate on character embeddings
    #[arg(long)]
    pub dropout_embed: Option<f64>,
    /// Dropout rate before the output layer
    #[arg(long)]
    pub dropout_fc: Option<f64>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Epochs without dev improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Upper bound on epochs
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Option<toml::Table>,
    train: Option<toml::Table>,
}

fn overlay<T: Serialize + DeserializeOwned>(base: T, table: Option<toml::Table>) -> Result<T> {
    let Some(table) = table else {
        return Ok(base);
    };
    let mut merged = toml::Table::try_from(&base).context("serializing defaults")?;
    merged.extend(table);
    Ok(merged.try_into()?)
}

impl ModelOpts {
    pub fn paths(&self) -> Vec<&Path> {
        self.config.iter().map(PathBuf::as_path).collect()
    }

    /// Resolves both configurations. `alphabet_size` and `num_classes` are
    /// left for the caller to fill from data.
    pub fn resolve(&self, seed: u64) -> Result<(ModelConfig, TrainConfig)> {
        let (mut model, mut train) = match &self.preset {
            Some(name) => preset(name)?,
            None => (ModelConfig::default(), TrainConfig::default()),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let file: ConfigFile =
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            model = overlay(model, file.model)
                .with_context(|| format!("[model] in {}", path.display()))?;
            train = overlay(train, file.train)
                .with_context(|| format!("[train] in {}", path.display()))?;
        }
        macro_rules! set {
            ($cfg:ident . $field:ident <- $opt:expr) => {
                if let Some(v) = $opt.clone() {
                    $cfg.$field = v;
                }
            };
        }
        set!(model.max_len <- self.max_len);
        set!(model.embed_dim <- self.embed_dim);
        set!(model.filter_spec <- self.filters);
        set!(model.fc_dim <- self.fc_dim);
        set!(model.dropout_embed <- self.dropout_embed);
        set!(model.dropout_fc <- self.dropout_fc);
        set!(train.batch_size <- self.batch_size);
        set!(train.learning_rate <- self.learning_rate);
        set!(train.patience <- self.patience);
        set!(train.max_epochs <- self.max_epochs);
        train.seed = seed;
        train.validate()?;
        Ok((model, train))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_without_any_source() {
        let (m, t) = ModelOpts::default().resolve(42).unwrap();
        assert_eq!(m, ModelConfig::default());
        assert_eq!(t, TrainConfig::default());
    }

    #[test]
    fn file_overrides_preset_and_flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "[model]\nmax_len = 100\nfilter_spec = \"2:4\"\n[train]\npatience = 3\nmode = {{ fixed_epochs = 7 }}"
        )
        .unwrap();
        let opts = ModelOpts {
            config: Some(f.path().to_path_buf()),
            preset: Some("subtask1-run3".into()),
            max_len: Some(50),
            ..Default::default()
        };
        let (m, t) = opts.resolve(9).unwrap();
        assert_eq!(m.max_len, 50);
        assert_eq!(m.filter_spec.to_string(), "2:4");
        assert_eq!(m.fc_dim, 500);
        assert_eq!((t.patience, t.batch_size, t.seed), (3, 64, 9));
        assert_eq!(t.mode, charlid::train::StopMode::FixedEpochs(7));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[model]\nmax_length = 100").unwrap();
        let opts = ModelOpts {
            config: Some(f.path().to_path_buf()),
            ..Default::default()
        };
        assert!(opts.resolve(1).is_err());
    }
}
