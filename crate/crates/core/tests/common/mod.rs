#![allow(dead_code)]

use charlid::corpus::{build_alphabet, encode_corpus, Alphabet, EncodedExample, LabelSet};
use charlid::model::ModelConfig;
use charlid::synthetic::separable_corpus;

pub struct Prepared {
    pub alphabet: Alphabet,
    pub labels: LabelSet,
    pub train: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    pub config: ModelConfig,
}

/// 50 training and 30 test examples over three classes, encoded with the
/// scaled-down configuration (L=40, d=16, filters 2:8,3:8, fc=32).
pub fn separable_task(seed: u64) -> Prepared {
    let train_raw = separable_corpus(&[17, 17, 16], seed);
    let test_raw = separable_corpus(&[10, 10, 10], seed + 1000);
    let alphabet = build_alphabet(&train_raw).unwrap();
    let labels = LabelSet::from_examples(&train_raw).unwrap();
    let config = ModelConfig {
        alphabet_size: alphabet.len(),
        num_classes: labels.len(),
        max_len: 40,
        embed_dim: 16,
        filter_spec: "2:8,3:8".parse().unwrap(),
        fc_dim: 32,
        ..ModelConfig::default()
    };
    Prepared {
        train: encode_corpus(&train_raw, &alphabet, &labels, 40).unwrap(),
        test: encode_corpus(&test_raw, &alphabet, &labels, 40).unwrap(),
        alphabet,
        labels,
        config,
    }
}
