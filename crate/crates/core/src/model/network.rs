use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Batch, EncodedText};
use crate::error::{Error, Result};
use crate::par_map;

use super::layers::{conv_relu_forward, max_pool_over_time, softmax, Matrix, Pooled};
use super::{cast, Gradients, ModelConfig, ModelParams, Scalar};

/// Activations and dropout masks of one example, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ExampleCache<T> {
    pub indices: Vec<u32>,
    /// Embedded sequence after dropout, `[L × d]`.
    pub embedded: Matrix<T>,
    /// Inverted-dropout multipliers for `embedded` (absent when no dropout).
    pub embed_mask: Option<Vec<T>>,
    pub pools: Vec<Pooled<T>>,
    /// Concatenated pooled vector.
    pub pooled: Vec<T>,
    /// Fully-connected output after ReLU, before dropout.
    pub fc_out: Option<Vec<T>>,
    pub hidden_mask: Option<Vec<T>>,
    /// Input to the output layer.
    pub hidden: Vec<T>,
    pub probs: Vec<T>,
}

/// Per-example caches of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub examples: Vec<ExampleCache<T>>,
}

/// Class distribution of one text and its most probable class.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T = f32> {
    pub probabilities: Vec<T>,
    pub label: usize,
}

impl<T: Scalar> Prediction<T> {
    pub fn from_probabilities(probabilities: Vec<T>) -> Self {
        let label = argmax(&probabilities);
        Prediction {
            probabilities,
            label,
        }
    }
}

/// First index of the maximum.
pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Batched forward pass. In training mode, dropout masks are drawn from
/// `dropout_seed` and the returned cache feeds [`backward`]; in inference
/// mode no dropout is applied and no cache is returned.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &Batch,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(Matrix<T>, Option<ForwardCache<T>>)> {
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= config.num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            config.num_classes
        )));
    }
    let (probs, examples) =
        forward_inputs(params, config, &batch.inputs, train_mode.then_some(dropout_seed))?;
    Ok((probs, train_mode.then_some(ForwardCache { examples })))
}

/// Forward pass over unlabeled inputs. `dropout` carries the mask seed in
/// training mode and is `None` for inference.
pub fn forward_inputs<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    inputs: &[EncodedText],
    dropout: Option<u64>,
) -> Result<(Matrix<T>, Vec<ExampleCache<T>>)> {
    config.validate()?;
    params.check_shapes(config)?;
    for (i, input) in inputs.iter().enumerate() {
        if input.len() != config.max_len {
            return Err(Error::Shape(format!(
                "input {i} has length {}, model expects {}",
                input.len(),
                config.max_len
            )));
        }
        if let Some(&bad) = input
            .indices()
            .iter()
            .find(|&&c| c as usize >= config.alphabet_size)
        {
            return Err(Error::InvalidArgument(format!(
                "input {i} has index {bad} outside an alphabet of {}",
                config.alphabet_size
            )));
        }
    }
    let examples = par_map(inputs.len(), |i| {
        let rng = dropout.map(|seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        });
        forward_example(params, config, inputs[i].indices(), rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let k = config.num_classes;
    let mut probs = Vec::with_capacity(examples.len() * k);
    for e in &examples {
        probs.extend_from_slice(&e.probs);
    }
    Ok((Matrix::new(examples.len(), k, probs)?, examples))
}

fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut Option<ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng.as_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = cast::<T>(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Scalar>(xs: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (x, &k) in xs.iter_mut().zip(m) {
            *x = *x * k;
        }
    }
}

fn forward_example<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    indices: &[u32],
    mut rng: Option<ChaCha8Rng>,
) -> Result<ExampleCache<T>> {
    let d = config.embed_dim;
    let mut data = Vec::with_capacity(indices.len() * d);
    for &c in indices {
        let c = c as usize;
        data.extend_from_slice(&params.embedding[c * d..(c + 1) * d]);
    }
    let embed_mask = dropout_mask(data.len(), config.dropout_embed, &mut rng);
    apply_mask(&mut data, &embed_mask);
    let embedded = Matrix::new(indices.len(), d, data)?;

    let mut pools = Vec::with_capacity(params.conv.len());
    let mut pooled = Vec::with_capacity(config.pooled_dim());
    for bank in &params.conv {
        let h = conv_relu_forward(&embedded, bank)?;
        let p = max_pool_over_time(&h)?;
        pooled.extend_from_slice(&p.values);
        pools.push(p);
    }

    let (fc_out, mut hidden) = match &params.fc {
        Some(fc) => {
            let mut a = fc.apply(&pooled);
            for v in &mut a {
                *v = v.max(T::zero());
            }
            (Some(a.clone()), a)
        }
        None => (None, pooled.clone()),
    };
    let hidden_mask = dropout_mask(hidden.len(), config.dropout_fc, &mut rng);
    apply_mask(&mut hidden, &hidden_mask);

    let probs = softmax(&params.output.apply(&hidden));
    Ok(ExampleCache {
        indices: indices.to_vec(),
        embedded,
        embed_mask,
        pools,
        pooled,
        fc_out,
        hidden_mask,
        hidden,
        probs,
    })
}

/// Gradients of the batch-mean cross-entropy with respect to every tensor.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    cache: &ForwardCache<T>,
    labels: &[usize],
) -> Result<Gradients<T>> {
    let n = cache.examples.len();
    if n == 0 || n != labels.len() {
        return Err(Error::Shape(format!(
            "cache holds {n} examples but {} labels were given",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= config.num_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    params.check_shapes(config)?;
    let scale = cast::<T>(1.0 / n as f64);
    let per_example = par_map(n, |i| {
        let mut g = params.zeros_like();
        backward_example(params, &cache.examples[i], labels[i], scale, &mut g);
        g
    });
    // summed in example order so the result does not depend on threading
    let mut iter = per_example.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for g in iter {
        total.add_assign(&g);
    }
    Ok(total)
}

fn backward_example<T: Scalar>(
    params: &ModelParams<T>,
    ex: &ExampleCache<T>,
    label: usize,
    scale: T,
    grads: &mut Gradients<T>,
) {
    // softmax + cross-entropy: dL/dz = p - onehot
    let dz: Vec<T> = ex
        .probs
        .iter()
        .enumerate()
        .map(|(k, &p)| (if k == label { p - T::one() } else { p }) * scale)
        .collect();

    let out = &params.output;
    let gout = &mut grads.output;
    let mut dhidden = vec![T::zero(); out.inputs];
    for (h, &hv) in ex.hidden.iter().enumerate() {
        let wrow = &out.weight[h * out.outputs..(h + 1) * out.outputs];
        let grow = &mut gout.weight[h * out.outputs..(h + 1) * out.outputs];
        let mut acc = T::zero();
        for k in 0..out.outputs {
            grow[k] = grow[k] + hv * dz[k];
            acc = acc + wrow[k] * dz[k];
        }
        dhidden[h] = acc;
    }
    for (b, &g) in gout.bias.iter_mut().zip(&dz) {
        *b = *b + g;
    }
    apply_mask(&mut dhidden, &ex.hidden_mask);

    let dpooled = match (&params.fc, &mut grads.fc, &ex.fc_out) {
        (Some(fc), Some(gfc), Some(a)) => {
            let da: Vec<T> = dhidden
                .iter()
                .zip(a)
                .map(|(&g, &av)| if av > T::zero() { g } else { T::zero() })
                .collect();
            let mut dp = vec![T::zero(); fc.inputs];
            for (i, &pv) in ex.pooled.iter().enumerate() {
                let wrow = &fc.weight[i * fc.outputs..(i + 1) * fc.outputs];
                let grow = &mut gfc.weight[i * fc.outputs..(i + 1) * fc.outputs];
                let mut acc = T::zero();
                for j in 0..fc.outputs {
                    grow[j] = grow[j] + pv * da[j];
                    acc = acc + wrow[j] * da[j];
                }
                dp[i] = acc;
            }
            for (b, &g) in gfc.bias.iter_mut().zip(&da) {
                *b = *b + g;
            }
            dp
        }
        _ => dhidden,
    };

    let d = params.embed_dim;
    let mut dx = vec![T::zero(); ex.embedded.data.len()];
    let mut offset = 0;
    for ((bank, gbank), pool) in params.conv.iter().zip(&mut grads.conv).zip(&ex.pools) {
        let n = bank.filters;
        for f in 0..n {
            let g = dpooled[offset + f];
            // ReLU'd max is positive only when the winning pre-activation is
            if pool.values[f] <= T::zero() || g == T::zero() {
                continue;
            }
            let t = pool.argmax[f];
            gbank.bias[f] = gbank.bias[f] + g;
            for j in 0..bank.width {
                let xrow = ex.embedded.row(t + j);
                for c in 0..d {
                    let wi = (j * d + c) * n + f;
                    gbank.weight[wi] = gbank.weight[wi] + g * xrow[c];
                    let xi = (t + j) * d + c;
                    dx[xi] = dx[xi] + g * bank.weight[wi];
                }
            }
        }
        offset += n;
    }
    apply_mask(&mut dx, &ex.embed_mask);

    for (t, &c) in ex.indices.iter().enumerate() {
        let row = &mut grads.embedding[c as usize * d..(c as usize + 1) * d];
        for (e, &g) in row.iter_mut().zip(&dx[t * d..(t + 1) * d]) {
            *e = *e + g;
        }
    }
}

/// Inference-mode prediction for a single encoded text.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    encoded: &EncodedText,
) -> Result<Prediction<T>> {
    let (probs, _) = forward_inputs(params, config, std::slice::from_ref(encoded), None)?;
    Ok(Prediction::from_probabilities(probs.data))
}

/// Pooled activations of one convolution bank for a single text.
#[derive(Clone, Debug, PartialEq)]
pub struct BankActivation<T = f32> {
    pub width: usize,
    pub values: Vec<T>,
    /// Window start of each filter's maximum.
    pub argmax: Vec<usize>,
}

/// Inference-mode pooling results per bank, for visualizing which character
/// windows drive each filter.
pub fn inspect<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    encoded: &EncodedText,
) -> Result<Vec<BankActivation<T>>> {
    let (_, mut caches) = forward_inputs(params, config, std::slice::from_ref(encoded), None)?;
    let cache = caches.pop().expect("one example");
    Ok(params
        .conv
        .iter()
        .zip(cache.pools)
        .map(|(b, p)| BankActivation {
            width: b.width,
            values: p.values,
            argmax: p.argmax,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, FilterSpec};

    fn small_config(fc_dim: usize) -> ModelConfig {
        ModelConfig {
            alphabet_size: 8,
            num_classes: 3,
            max_len: 10,
            embed_dim: 4,
            filter_spec: "2:3,3:2".parse::<FilterSpec>().unwrap(),
            fc_dim,
            dropout_embed: 0.2,
            dropout_fc: 0.5,
        }
    }

    fn text(seed: u32) -> EncodedText {
        EncodedText::from_indices((0..10).map(|i| (i * 7 + seed) % 8).collect())
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let cfg = small_config(5);
        let p = ModelParams::<f32>::zeros(&cfg);
        let pred = predict(&p, &cfg, &text(1)).unwrap();
        for &q in &pred.probabilities {
            assert!((q - 1.0 / 3.0).abs() < 1e-7);
        }
        assert_eq!(pred.label, 0);
    }

    #[test]
    fn constructed_logits_ln2_and_zero() {
        let cfg = ModelConfig {
            num_classes: 2,
            fc_dim: 0,
            ..small_config(0)
        };
        let mut p = ModelParams::<f64>::zeros(&cfg);
        p.output.bias = vec![2f64.ln(), 0.0];
        let pred = predict(&p, &cfg, &text(0)).unwrap();
        assert!((pred.probabilities[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pred.probabilities[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inference_rows_sum_to_one_and_ignore_dropout_seed() {
        let cfg = small_config(5);
        let p: ModelParams<f32> = init_params(&cfg, 3).unwrap();
        let batch = Batch::new(vec![text(1), text(2)], vec![0, 2]).unwrap();
        let (a, cache) = forward(&p, &cfg, &batch, false, 1).unwrap();
        let (b, _) = forward(&p, &cfg, &batch, false, 99).unwrap();
        assert!(cache.is_none());
        assert_eq!(a, b);
        for r in 0..a.rows {
            let s: f32 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn train_mode_applies_dropout() {
        let cfg = small_config(5);
        let p: ModelParams<f32> = init_params(&cfg, 3).unwrap();
        let batch = Batch::new(vec![text(1)], vec![0]).unwrap();
        let (_, cache) = forward(&p, &cfg, &batch, true, 7).unwrap();
        let ex = &cache.unwrap().examples[0];
        let mask = ex.embed_mask.as_ref().unwrap();
        assert!(mask.contains(&0.0));
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.25).abs() < 1e-6));
    }

    #[test]
    fn batch_of_one_matches_predict_bitwise() {
        let cfg = small_config(5);
        let p: ModelParams<f32> = init_params(&cfg, 4).unwrap();
        let batch = Batch::new(vec![text(3)], vec![1]).unwrap();
        let (probs, _) = forward(&p, &cfg, &batch, false, 0).unwrap();
        let pred = predict(&p, &cfg, &text(3)).unwrap();
        assert_eq!(probs.data, pred.probabilities);
    }

    #[test]
    fn rejects_bad_labels_and_inputs() {
        let cfg = small_config(5);
        let p: ModelParams<f32> = init_params(&cfg, 4).unwrap();
        let batch = Batch::new(vec![text(3)], vec![3]).unwrap();
        assert!(forward(&p, &cfg, &batch, false, 0).is_err());
        let short = EncodedText::from_indices(vec![1, 2]);
        assert!(predict(&p, &cfg, &short).is_err());
        let oov = EncodedText::from_indices(vec![9; 10]);
        assert!(predict(&p, &cfg, &oov).is_err());
    }

    #[test]
    fn output_bias_gradient_is_mean_residual() {
        let cfg = small_config(5);
        let p: ModelParams<f64> = init_params(&cfg, 2).unwrap();
        let labels = vec![0, 2, 1];
        let batch = Batch::new(vec![text(1), text(2), text(5)], labels.clone()).unwrap();
        let (probs, cache) = forward(&p, &cfg, &batch, true, 11).unwrap();
        let g = backward(&p, &cfg, &cache.unwrap(), &labels).unwrap();
        for k in 0..3 {
            let want: f64 = (0..3)
                .map(|r| probs.get(r, k) - f64::from(u8::from(labels[r] == k)))
                .sum::<f64>()
                / 3.0;
            assert!((g.output.bias[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_only_input_touches_only_pad_row() {
        let cfg = ModelConfig {
            dropout_embed: 0.0,
            dropout_fc: 0.0,
            ..small_config(5)
        };
        let mut p: ModelParams<f64> = init_params(&cfg, 2).unwrap();
        // a non-zero PAD row so the convolutions see something
        for x in &mut p.embedding[..cfg.embed_dim] {
            *x = 0.3;
        }
        for c in &mut p.conv {
            c.bias.fill(0.1);
        }
        let pad = EncodedText::from_indices(vec![0; 10]);
        let batch = Batch::new(vec![pad], vec![1]).unwrap();
        let (_, cache) = forward(&p, &cfg, &batch, true, 0).unwrap();
        let g = backward(&p, &cfg, &cache.unwrap(), &[1]).unwrap();
        let d = cfg.embed_dim;
        assert!(g.embedding[..d].iter().any(|&x| x != 0.0));
        assert!(g.embedding[d..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_label_count_mismatch() {
        let cfg = small_config(5);
        let p: ModelParams<f64> = init_params(&cfg, 2).unwrap();
        let batch = Batch::new(vec![text(1)], vec![0]).unwrap();
        let (_, cache) = forward(&p, &cfg, &batch, true, 0).unwrap();
        assert!(backward(&p, &cfg, &cache.unwrap(), &[0, 1]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2f32, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5f32, 0.5]), 0);
    }
}
