//! Central finite-difference check of the hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Batch, EncodedText, PAD_INDEX};
use crate::error::{Error, Result};

use super::layers::cross_entropy;
use super::network::{backward, forward, forward_inputs};
use super::{init_params, ModelConfig, ModelParams};

/// Step used by the `gradcheck` command.
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub parameters_checked: usize,
}

/// The small configuration used for verification: alphabet 10, L=12, d=5,
/// filters `2:3,3:4`, K=4.
pub fn tiny_config(fc_dim: usize) -> ModelConfig {
    ModelConfig {
        alphabet_size: 10,
        num_classes: 4,
        max_len: 12,
        embed_dim: 5,
        filter_spec: "2:3,3:4".parse().expect("static spec"),
        fc_dim,
        dropout_embed: 0.0,
        dropout_fc: 0.0,
    }
}

/// Random batch of three texts: a run of non-reserved characters followed
/// by PAD, with random labels.
fn random_batch(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Batch {
    let l = config.max_len;
    let (inputs, labels) = (0..3)
        .map(|_| {
            let len = rng.gen_range(l / 2..=l);
            let mut idx: Vec<u32> = (0..len)
                .map(|_| rng.gen_range(2..config.alphabet_size.max(3) as u32))
                .map(|i| i.min(config.alphabet_size as u32 - 1))
                .collect();
            idx.resize(l, PAD_INDEX);
            (EncodedText::from_indices(idx), rng.gen_range(0..config.num_classes))
        })
        .unzip();
    Batch::new(inputs, labels).expect("three examples")
}

fn loss(params: &ModelParams<f64>, config: &ModelConfig, batch: &Batch) -> Result<f64> {
    let (probs, _) = forward_inputs(params, config, &batch.inputs, None)?;
    cross_entropy(&probs, &batch.labels)
}

/// Compares analytic gradients with `(L(θ+ε) − L(θ−ε)) / 2ε` for every
/// scalar parameter in `f64`, with dropout disabled. The error for one
/// parameter is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn gradient_check(config: &ModelConfig, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let config = ModelConfig {
        dropout_embed: 0.0,
        dropout_fc: 0.0,
        ..config.clone()
    };
    let params: ModelParams<f64> = init_params(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c);
    let batch = random_batch(&config, &mut rng);

    let (_, cache) = forward(&params, &config, &batch, true, 0)?;
    let grads = backward(&params, &config, &cache.expect("train mode"), &batch.labels)?;

    let names: Vec<String> = config.tensor_layout().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        parameters_checked: 0,
    };
    for (ti, name) in names.iter().enumerate() {
        for i in 0..analytic[ti].len() {
            let original = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = original + epsilon;
            let up = loss(&probe, &config, &batch)?;
            probe.tensors_mut()[ti][i] = original - epsilon;
            let down = loss(&probe, &config, &batch)?;
            probe.tensors_mut()[ti][i] = original;

            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[ti][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_relative_error || report.worst_tensor.is_empty() {
                report.max_relative_error = rel;
                report.worst_tensor = name.clone();
                report.worst_index = i;
            }
            report.parameters_checked += 1;
        }
    }
    Ok(report)
}

/// Runs [`gradient_check`] on the tiny configuration with and without the
/// fully-connected layer for every seed. Returns the worst report, with
/// `parameters_checked` summed over all runs.
pub fn gradient_check_suite(seeds: &[u64], epsilon: f64) -> Result<GradCheckReport> {
    let mut worst: Option<GradCheckReport> = None;
    let mut checked = 0;
    for &seed in seeds {
        for fc in [7, 0] {
            let mut r = gradient_check(&tiny_config(fc), seed, epsilon)?;
            checked += r.parameters_checked;
            r.worst_tensor = format!("{} (fc={fc}, seed={seed})", r.worst_tensor);
            if worst
                .as_ref()
                .is_none_or(|w| r.max_relative_error > w.max_relative_error)
            {
                worst = Some(r);
            }
        }
    }
    let mut worst = worst.ok_or_else(|| Error::InvalidArgument("no seeds given".into()))?;
    worst.parameters_checked = checked;
    Ok(worst)
}
