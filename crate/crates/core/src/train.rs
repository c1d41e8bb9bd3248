//! Adam optimization of the cross-entropy loss with dev-loss early stopping
//! (or a fixed epoch budget).

use serde::{Deserialize, Serialize};

use crate::corpus::{batches, Batch, EncodedExample};
use crate::error::{Error, Result};
use crate::model::{
    backward, cast, cross_entropy, forward, forward_inputs, init_params, ModelConfig,
    ModelParams, Prediction, Scalar,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// Stop after `patience` epochs without dev-loss improvement.
    EarlyStop,
    /// Train for exactly this many epochs without a dev set.
    FixedEpochs(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mode: StopMode,
}

impl Default for TrainConfig {
    /// Adam's original defaults, mini-batches of 16, patience 10.
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
            patience: 10,
            max_epochs: 500,
            seed: 42,
            mode: StopMode::EarlyStop,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon_hat >= 0.0) {
            return fail("epsilon_hat must be non-negative");
        }
        if self.patience < 1 {
            return fail("patience must be at least 1");
        }
        if self.max_epochs < 1 {
            return fail("max_epochs must be at least 1");
        }
        if self.mode == StopMode::FixedEpochs(0) {
            return fail("fixed_epochs must be at least 1");
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let gs = grads.tensors();
    let shapes_match = params.tensors().iter().map(|t| t.len()).eq(gs.iter().map(|t| t.len()))
        && state.m.tensors().iter().map(|t| t.len()).eq(gs.iter().map(|t| t.len()));
    if !shapes_match {
        return Err(Error::Shape("gradient shapes do not match parameters".into()));
    }
    if let Some(i) = gs.iter().position(|t| t.iter().any(|x| !x.is_finite())) {
        let name = tensor_names(params).swap_remove(i);
        return Err(Error::NonFiniteGradient(name));
    }

    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let (b1, b2): (T, T) = (cast(b1), cast(b2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let (bc1, bc2): (T, T) = (cast(bc1), cast(bc2));
    let lr: T = cast(config.learning_rate);
    let eps: T = cast(config.epsilon_hat);

    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

fn tensor_names<T: Scalar>(params: &ModelParams<T>) -> Vec<String> {
    let mut names = vec!["embedding".to_string()];
    for i in 0..params.conv.len() {
        names.push(format!("conv{i}.weight"));
        names.push(format!("conv{i}.bias"));
    }
    if params.fc.is_some() {
        names.push("fc.weight".into());
        names.push("fc.bias".into());
    }
    names.push("output.weight".into());
    names.push("output.bias".into());
    names
}

/// Losses and accuracy recorded after one epoch (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
}

impl EpochRecord {
    /// `epoch  train_loss  dev_loss  dev_accuracy`, tab-separated; missing
    /// dev values print as `-`.
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}\t{:.6}\t{}\t{}",
            self.epoch,
            self.train_loss,
            opt(self.dev_loss),
            opt(self.dev_accuracy)
        )
    }
}

pub const LOG_HEADER: &str = "epoch\ttrain_loss\tdev_loss\tdev_accuracy";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
    /// Last epoch run (1-based).
    pub stopped_epoch: usize,
    /// Total optimizer steps.
    pub steps: u64,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn dev_losses(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.dev_loss).collect()
    }
}

/// Patience bookkeeping: stop once `patience` consecutive epochs fail to
/// strictly improve on the best loss seen.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if !(loss < best) => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateful optimizer loop, one epoch at a time. Used by [`train_model`]
/// and by callers that want to observe or interleave epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
}

impl Trainer {
    /// Initializes parameters from `train_config.seed`.
    pub fn new(model_config: ModelConfig, train_config: TrainConfig) -> Result<Self> {
        model_config.validate()?;
        train_config.validate()?;
        let params = init_params(&model_config, train_config.seed)?;
        Ok(Self::with_params(params, model_config, train_config))
    }

    pub fn with_params(
        params: ModelParams<f32>,
        model_config: ModelConfig,
        train_config: TrainConfig,
    ) -> Self {
        Trainer {
            adam: AdamState::new(&params),
            params,
            model_config,
            train_config,
            epoch: 0,
        }
    }

    /// One pass over `data` in freshly shuffled mini-batches. Returns the
    /// size-weighted mean training loss (dropout active).
    pub fn run_epoch(&mut self, data: &[EncodedExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training data is empty".into()));
        }
        self.epoch += 1;
        let seed = self.train_config.seed;
        let epoch_seed = seed.wrapping_add(self.epoch as u64);
        let mut total = 0.0;
        for (b, batch) in batches(data, self.train_config.batch_size, epoch_seed)?
            .into_iter()
            .enumerate()
        {
            let dropout_seed = mix(seed ^ mix(((self.epoch as u64) << 32) | b as u64));
            total += self.step(&batch, dropout_seed)? * batch.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    /// Forward, backward and one Adam update on a single batch; returns the
    /// batch loss before the update.
    pub fn step(&mut self, batch: &Batch, dropout_seed: u64) -> Result<f64> {
        let (probs, cache) = forward(&self.params, &self.model_config, batch, true, dropout_seed)?;
        let loss = cross_entropy(&probs, &batch.labels)?;
        let grads = backward(
            &self.params,
            &self.model_config,
            &cache.expect("training-mode cache"),
            &batch.labels,
        )?;
        adam_step(&mut self.params, &grads, &mut self.adam, &self.train_config)?;
        Ok(loss as f64)
    }
}

/// Mean inference-mode loss and accuracy of `params` on `data`.
pub fn evaluate_loss(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    data: &[EncodedExample],
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation data is empty".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in data.chunks(256) {
        let inputs: Vec<_> = chunk.iter().map(|e| e.input.clone()).collect();
        let labels: Vec<_> = chunk.iter().map(|e| e.label).collect();
        let (probs, _) = forward_inputs(params, config, &inputs, None)?;
        loss += cross_entropy(&probs, &labels)? as f64 * chunk.len() as f64;
        correct += (0..probs.rows)
            .filter(|&r| Prediction::from_probabilities(probs.row(r).to_vec()).label == labels[r])
            .count();
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Parameters selected by training and the epoch log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub history: TrainHistory,
}

/// Early-stopping training (see [`train_model_with`]).
pub fn train_model(
    train_data: &[EncodedExample],
    dev_data: &[EncodedExample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_model_with(train_data, dev_data, model_config, train_config, |_| {})
}

/// Trains until the dev loss has not strictly improved for `patience`
/// epochs (or `max_epochs` is hit) and returns the snapshot taken at the
/// best dev loss. `on_epoch` sees every epoch record as it is produced.
pub fn train_model_with(
    train_data: &[EncodedExample],
    dev_data: &[EncodedExample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    if dev_data.is_empty() {
        return Err(Error::InvalidArgument(
            "early stopping needs a non-empty dev set".into(),
        ));
    }
    let mut trainer = Trainer::new(model_config.clone(), train_config.clone())?;
    let mut stopper = EarlyStopping::new(train_config.patience);
    let mut history = TrainHistory::default();
    let mut best = trainer.params.clone();

    while trainer.epoch < train_config.max_epochs {
        let train_loss = trainer.run_epoch(train_data)?;
        let (dev_loss, dev_acc) = evaluate_loss(&trainer.params, model_config, dev_data)?;
        let record = EpochRecord {
            epoch: trainer.epoch,
            train_loss,
            dev_loss: Some(dev_loss),
            dev_accuracy: Some(dev_acc),
        };
        on_epoch(&record);
        history.epochs.push(record);
        match stopper.observe(trainer.epoch, dev_loss) {
            StopDecision::Improved => best.clone_from(&trainer.params),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    history.best_epoch = stopper.best_epoch().unwrap_or(0);
    history.stopped_epoch = trainer.epoch;
    history.steps = trainer.adam.t;
    Ok(TrainOutcome {
        params: best,
        history,
    })
}

/// Trains on all of `train_data` for exactly the number of epochs in
/// `train_config.mode` and returns the final parameters.
pub fn train_fixed_epochs(
    train_data: &[EncodedExample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_fixed_epochs_with(train_data, model_config, train_config, |_| {})
}

pub fn train_fixed_epochs_with(
    train_data: &[EncodedExample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let StopMode::FixedEpochs(n) = train_config.mode else {
        return Err(Error::InvalidConfig(
            "fixed-epoch training needs mode fixed_epochs(n)".into(),
        ));
    };
    if train_data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    let mut trainer = Trainer::new(model_config.clone(), train_config.clone())?;
    let mut history = TrainHistory::default();
    for _ in 0..n {
        let train_loss = trainer.run_epoch(train_data)?;
        let record = EpochRecord {
            epoch: trainer.epoch,
            train_loss,
            dev_loss: None,
            dev_accuracy: None,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    history.best_epoch = n;
    history.stopped_epoch = n;
    history.steps = trainer.adam.t;
    Ok(TrainOutcome {
        params: trainer.params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DenseParams, FilterSpec};

    /// Model whose only parameter of interest is the output bias.
    fn scalar_model(bias: Vec<f64>) -> ModelParams<f64> {
        let mut p = ModelParams::<f64>::zeros(&ModelConfig {
            alphabet_size: 2,
            num_classes: bias.len(),
            max_len: 1,
            embed_dim: 1,
            filter_spec: "1:1".parse::<FilterSpec>().unwrap(),
            fc_dim: 0,
            dropout_embed: 0.0,
            dropout_fc: 0.0,
        });
        p.output = DenseParams {
            inputs: 1,
            outputs: bias.len(),
            weight: vec![0.0; bias.len()],
            bias,
        };
        p
    }

    #[test]
    fn first_adam_step_matches_hand_evaluation() {
        let mut p = scalar_model(vec![0.0]);
        let mut g = p.zeros_like();
        g.output.bias[0] = 0.5;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        // m̂ = 0.5, v̂ = 0.25: Δ = -0.001 * 0.5 / (0.5 + 1e-8)
        let want = -0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p.output.bias[0] - want).abs() < 1e-9);
        assert!((p.output.bias[0] + 0.000999999980).abs() < 1e-9);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_model(vec![0.3, -0.2]);
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_is_scale_invariant() {
        let mut p = scalar_model(vec![0.0, 0.0]);
        let mut g = p.zeros_like();
        g.output.bias = vec![0.37, 0.74];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        assert!((p.output.bias[0] - p.output.bias[1]).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut p = scalar_model(vec![0.0]);
        let mut g = p.zeros_like();
        g.output.bias[0] = f64::NAN;
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("output.bias"), "{err}");
        assert_eq!(st.t, 0);
    }

    #[test]
    fn patience_counts_from_best() {
        let mut losses = vec![1.0, 0.9, 0.95, 0.96];
        losses.extend(std::iter::repeat_n(0.97, 11));
        let mut es = EarlyStopping::new(10);
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            if es.observe(i + 1, l) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(es.best_epoch(), Some(2));
        assert_eq!(stopped, Some(12));
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.observe(1, 0.5), StopDecision::Improved);
        assert_eq!(es.observe(2, 0.5), StopDecision::Stop);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { mode: StopMode::FixedEpochs(0), ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn epoch_record_tsv() {
        let r = EpochRecord {
            epoch: 3,
            train_loss: 0.5,
            dev_loss: None,
            dev_accuracy: Some(1.0),
        };
        assert_eq!(r.to_tsv(), "3\t0.500000\t-\t1.000000");
    }
}
