use charlid::corpus::{
    build_alphabet, encode, encode_corpus, parse_dsl, split_train_dev, Alphabet, EncodedExample,
    EncodedText, LabelSet,
};
use charlid::eval::{confusion, report};
use charlid::model::{inspect, predict, FilterSpec, ModelConfig};
use charlid::train::{evaluate_loss, EpochRecord, TrainConfig, Trainer};
use charlid::{Error, Result};
use serde::{Deserialize, Serialize};

/// Demo-sized settings; every field may be omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoOptions {
    pub max_len: usize,
    pub embed_dim: usize,
    pub filters: FilterSpec,
    pub fc_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            max_len: 64,
            embed_dim: 16,
            filters: "2:8,3:8,4:8".parse().expect("valid spec"),
            fc_dim: 32,
            batch_size: 16,
            learning_rate: 0.001,
            dev_fraction: 0.2,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub characters: usize,
    pub labels: Vec<String>,
    pub parameters: usize,
    pub train_examples: usize,
    pub dev_examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfusionView {
    pub labels: Vec<String>,
    /// `counts[gold][predicted]` on the dev split.
    pub counts: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassProbability {
    pub label: String,
    pub probability: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionView {
    pub label: String,
    pub probabilities: Vec<ClassProbability>,
}

/// One filter's strongest window in the input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterHit {
    pub width: usize,
    pub filter: usize,
    pub activation: f32,
    /// Character offset of the window in the (truncated) input.
    pub start: usize,
    pub window: String,
}

pub struct Session {
    alphabet: Alphabet,
    labels: LabelSet,
    config: ModelConfig,
    trainer: Trainer,
    train: Vec<EncodedExample>,
    dev: Vec<EncodedExample>,
    history: Vec<EpochRecord>,
}

impl Session {
    pub fn new(corpus_tsv: &str, options: &DemoOptions) -> Result<Self> {
        let corpus = parse_dsl(corpus_tsv, "corpus", false)?;
        if corpus.len() < 2 {
            return Err(Error::InvalidArgument("paste at least two labelled lines".into()));
        }
        let alphabet = build_alphabet(&corpus)?;
        let labels = LabelSet::from_examples(&corpus)?;
        let config = ModelConfig {
            alphabet_size: alphabet.len(),
            num_classes: labels.len(),
            max_len: options.max_len,
            embed_dim: options.embed_dim,
            filter_spec: options.filters.clone(),
            fc_dim: options.fc_dim,
            ..ModelConfig::default()
        };
        let train_config = TrainConfig {
            batch_size: options.batch_size,
            learning_rate: options.learning_rate,
            seed: options.seed,
            ..TrainConfig::default()
        };
        let encoded = encode_corpus(&corpus, &alphabet, &labels, config.max_len)?;
        let (train, dev) = split_train_dev(&encoded, options.dev_fraction, options.seed)?;
        let trainer = Trainer::new(config.clone(), train_config)?;
        Ok(Session {
            alphabet,
            labels,
            config,
            trainer,
            train,
            dev,
            history: Vec::new(),
        })
    }

    pub fn summary(&self) -> Summary {
        Summary {
            characters: self.alphabet.len(),
            labels: self.labels.names().to_vec(),
            parameters: self.config.num_parameters(),
            train_examples: self.train.len(),
            dev_examples: self.dev.len(),
        }
    }

    /// Trains one more epoch and scores the dev split.
    pub fn epoch(&mut self) -> Result<EpochRecord> {
        let train_loss = self.trainer.run_epoch(&self.train)?;
        let (dev_loss, dev_acc) = evaluate_loss(&self.trainer.params, &self.config, &self.dev)?;
        let record = EpochRecord {
            epoch: self.trainer.epoch,
            train_loss,
            dev_loss: Some(dev_loss),
            dev_accuracy: Some(dev_acc),
        };
        self.history.push(record.clone());
        Ok(record)
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn confusion(&self) -> Result<ConfusionView> {
        let gold: Vec<usize> = self.dev.iter().map(|e| e.label).collect();
        let pred = self
            .dev
            .iter()
            .map(|e| predict(&self.trainer.params, &self.config, &e.input).map(|p| p.label))
            .collect::<Result<Vec<_>>>()?;
        let cm = confusion(&gold, &pred, &self.labels)?;
        let r = report(&cm)?;
        Ok(ConfusionView {
            labels: cm.labels.clone(),
            counts: cm.counts,
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
        })
    }

    fn encode(&self, text: &str) -> Result<EncodedText> {
        encode(text, &self.alphabet, self.config.max_len)
    }

    pub fn predict(&self, text: &str) -> Result<PredictionView> {
        let p = predict(&self.trainer.params, &self.config, &self.encode(text)?)?;
        Ok(PredictionView {
            label: self.labels.names()[p.label].clone(),
            probabilities: self
                .labels
                .names()
                .iter()
                .zip(&p.probabilities)
                .map(|(l, &q)| ClassProbability {
                    label: l.clone(),
                    probability: q,
                })
                .collect(),
        })
    }

    /// The `top` most active filters and the windows that triggered them.
    pub fn inspect(&self, text: &str, top: usize) -> Result<Vec<FilterHit>> {
        let encoded = self.encode(text)?;
        let mut hits = Vec::new();
        for bank in inspect(&self.trainer.params, &self.config, &encoded)? {
            for (f, (&v, &start)) in bank.values.iter().zip(&bank.argmax).enumerate() {
                if v <= 0.0 {
                    continue;
                }
                let window = EncodedText::from_indices(
                    encoded.indices()[start..start + bank.width].to_vec(),
                );
                hits.push(FilterHit {
                    width: bank.width,
                    filter: f,
                    activation: v,
                    start,
                    window: self.alphabet.decode(&window),
                });
            }
        }
        hits.sort_by(|a, b| b.activation.total_cmp(&a.activation));
        hits.truncate(top);
        Ok(hits)
    }
}
