//! Invariants checked against independent brute-force references.

mod common;

use charlid::corpus::{
    batch_order, build_alphabet, encode, split_train_dev, Alphabet, LabelSet, LabeledExample,
};
use charlid::ensemble::vote;
use charlid::eval::{confusion, report};
use charlid::model::{
    conv_relu_forward, cross_entropy, init_params, max_pool_over_time, predict, softmax,
    ConvParams, Matrix, ModelConfig, ModelParams, Prediction,
};
use charlid::persist::{model_from_bytes, model_to_bytes};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- references -------------------------------------------------------

fn conv_oracle(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64]) -> Vec<Vec<f64>> {
    let (len, width) = (x.len(), w.len());
    let mut out = Vec::new();
    for t in 0..=len - width {
        let mut row = Vec::new();
        for f in 0..b.len() {
            let mut s = b[f];
            for j in 0..width {
                for c in 0..x[0].len() {
                    s += x[t + j][c] * w[j][c][f];
                }
            }
            row.push(if s > 0.0 { s } else { 0.0 });
        }
        out.push(row);
    }
    out
}

fn vote_oracle(preds: &[Prediction<f64>]) -> usize {
    let k = preds[0].probabilities.len();
    let counts: Vec<usize> = (0..k)
        .map(|c| preds.iter().filter(|p| p.label == c).count())
        .collect();
    let sums: Vec<f64> = (0..k)
        .map(|c| preds.iter().map(|p| p.probabilities[c]).sum())
        .collect();
    let mut candidates: Vec<usize> = (0..k).collect();
    let top = *counts.iter().max().unwrap();
    candidates.retain(|&c| counts[c] == top);
    let best_sum = candidates.iter().map(|&c| sums[c]).fold(f64::MIN, f64::max);
    candidates.retain(|&c| sums[c] == best_sum);
    candidates[0]
}

struct Counts {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    support: Vec<u64>,
}

fn count_oracle(gold: &[usize], pred: &[usize], k: usize) -> Counts {
    let mut c = Counts {
        tp: vec![0; k],
        fp: vec![0; k],
        fn_: vec![0; k],
        support: vec![0; k],
    };
    for (&g, &p) in gold.iter().zip(pred) {
        c.support[g] += 1;
        if g == p {
            c.tp[g] += 1;
        } else {
            c.fp[p] += 1;
            c.fn_[g] += 1;
        }
    }
    c
}

fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn labels(k: usize) -> LabelSet {
    LabelSet::new((0..k).map(|i| format!("L{i}"))).unwrap()
}

// ---- layers -----------------------------------------------------------

#[test]
fn conv_matches_triple_loop_on_random_tensors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let len = rng.gen_range(1..=10);
        let d = rng.gen_range(1..=4);
        let width = rng.gen_range(1..=4.min(len));
        let n = rng.gen_range(1..=5);
        let x: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<Vec<Vec<f64>>> = (0..width)
            .map(|_| {
                (0..d)
                    .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();

        let bank = ConvParams {
            width,
            in_dim: d,
            filters: n,
            weight: w.iter().flatten().flatten().copied().collect(),
            bias: b.clone(),
        };
        let got = conv_relu_forward(&Matrix::from_rows(&x).unwrap(), &bank).unwrap();
        let want = conv_oracle(&x, &w, &b);
        for (t, row) in want.iter().enumerate() {
            for (f, &v) in row.iter().enumerate() {
                assert!((got.get(t, f) - v).abs() < 1e-6);
            }
        }
    }
}

proptest! {
    #[test]
    fn pooling_equals_columnwise_max(rows in 1usize..12, cols in 1usize..6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // small integer range forces ties
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-3..4) as f64).collect();
        let h = Matrix::new(rows, cols, data).unwrap();
        let p = max_pool_over_time(&h).unwrap();
        for f in 0..cols {
            let col: Vec<f64> = (0..rows).map(|t| h.get(t, f)).collect();
            let m = col.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(p.values[f], m);
            prop_assert_eq!(p.argmax[f], col.iter().position(|&v| v == m).unwrap());
        }
    }

    #[test]
    fn softmax_matches_direct_formula(logits in prop::collection::vec(-20.0f64..20.0, 1..8)) {
        let p = softmax(&logits);
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        for (q, x) in p.iter().zip(&logits) {
            prop_assert!((q - x.exp() / z).abs() < 1e-6);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_mean_neg_log(
        rows in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 4), 0usize..4), 1..6)
    ) {
        let normalized: Vec<Vec<f64>> = rows
            .iter()
            .map(|(r, _)| { let s: f64 = r.iter().sum(); r.iter().map(|x| x / s).collect() })
            .collect();
        let gold: Vec<usize> = rows.iter().map(|(_, g)| *g).collect();
        let m = Matrix::from_rows(&normalized).unwrap();
        let want = normalized.iter().zip(&gold).map(|(r, &g)| -r[g].ln()).sum::<f64>()
            / gold.len() as f64;
        prop_assert!((cross_entropy(&m, &gold).unwrap() - want).abs() < 1e-6);
    }
}

#[test]
fn inference_rows_sum_to_one_for_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let alphabet_size = rng.gen_range(3..12);
        let max_len = rng.gen_range(4..16);
        let config = ModelConfig {
            alphabet_size,
            num_classes: rng.gen_range(2..6),
            max_len,
            embed_dim: rng.gen_range(1..6),
            filter_spec: format!("1:{},{}:2", rng.gen_range(1..4), rng.gen_range(2..=4))
                .parse()
                .unwrap(),
            fc_dim: rng.gen_range(0..6),
            dropout_embed: 0.2,
            dropout_fc: 0.5,
        };
        let params: ModelParams<f32> = init_params(&config, trial).unwrap();
        let text = charlid::corpus::EncodedText::from_indices(
            (0..max_len).map(|_| rng.gen_range(0..alphabet_size as u32)).collect(),
        );
        let a = predict(&params, &config, &text).unwrap();
        let b = predict(&params, &config, &text).unwrap();
        assert_eq!(a, b, "inference is deterministic");
        assert!((a.probabilities.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(a.probabilities.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn zero_pad_row_and_biases_make_padding_length_irrelevant() {
    // With a zero PAD row and zero conv biases, windows made only of PAD
    // output exactly 0, so extra padding cannot change any pooled maximum.
    let base = ModelConfig {
        alphabet_size: 6,
        num_classes: 3,
        max_len: 20,
        embed_dim: 4,
        filter_spec: "2:3,3:3".parse().unwrap(),
        fc_dim: 5,
        dropout_embed: 0.0,
        dropout_fc: 0.0,
    };
    let text = "abcab";
    let alphabet = Alphabet::from_chars("abcd".chars().collect()).unwrap();
    let short = encode(text, &alphabet, 20).unwrap();
    let long = encode(text, &alphabet, 30).unwrap();
    let params: ModelParams<f64> = init_params(&base, 3).unwrap();
    let long_config = ModelConfig { max_len: 30, ..base.clone() };
    assert!(params.embedding[..4].iter().all(|&x| x == 0.0));
    let a = predict(&params, &base, &short).unwrap();
    let b = predict(&params, &long_config, &long).unwrap();
    assert_eq!(a, b);
}

// ---- corpus -----------------------------------------------------------

proptest! {
    #[test]
    fn encode_always_returns_l_valid_indices(text in ".{0,60}", l in 1usize..50) {
        let alphabet = Alphabet::from_chars("abcxyz é".chars().collect()).unwrap();
        let e = encode(&text, &alphabet, l).unwrap();
        prop_assert_eq!(e.len(), l);
        prop_assert!(e.indices().iter().all(|&i| (i as usize) < alphabet.len()));
    }

    #[test]
    fn encode_is_idempotent_on_decoded_text(text in "[abc]{0,20}", extra in 0usize..10) {
        let alphabet = Alphabet::from_chars(vec!['a', 'b', 'c']).unwrap();
        let l = text.chars().count() + extra + 1;
        let e = encode(&text, &alphabet, l).unwrap();
        let decoded = alphabet.decode(&e);
        prop_assert_eq!(&decoded, &text);
        prop_assert_eq!(encode(&decoded, &alphabet, l).unwrap(), e);
    }

    #[test]
    fn alphabet_is_order_insensitive(texts in prop::collection::vec(".{0,12}", 1..8), seed: u64) {
        let corpus: Vec<LabeledExample> =
            texts.iter().map(|t| LabeledExample::new(t.clone(), "x")).collect();
        let mut shuffled = corpus.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(build_alphabet(&corpus).unwrap(), build_alphabet(&shuffled).unwrap());
    }

    #[test]
    fn split_partitions_by_position(n in 2usize..200, frac in 0.01f64..0.99, seed: u64) {
        let data: Vec<usize> = (0..n).collect();
        let (train, dev) = split_train_dev(&data, frac, seed).unwrap();
        prop_assert_eq!(dev.len(), ((n as f64 * frac).floor() as usize).clamp(1, n - 1));
        let mut all: Vec<usize> = train.iter().chain(&dev).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, data);
    }

    #[test]
    fn batches_cover_every_example_once(n in 1usize..300, b in 1usize..70, seed: u64) {
        let chunks = batch_order(n, b, seed).unwrap();
        prop_assert!(chunks.iter().all(|c| !c.is_empty() && c.len() <= b));
        let mut all: Vec<usize> = chunks.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn batches_differ_between_epoch_seeds() {
    let a = batch_order(100, 16, 1).unwrap().concat();
    let b = batch_order(100, 16, 2).unwrap().concat();
    assert_ne!(a, b);
}

// ---- eval -------------------------------------------------------------

#[test]
fn report_matches_count_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let k = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=50);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let r = report(&confusion(&gold, &pred, &labels(k)).unwrap()).unwrap();
        let c = count_oracle(&gold, &pred, k);

        let f1: Vec<f64> = (0..k).map(|i| f1_from_counts(c.tp[i], c.fp[i], c.fn_[i])).collect();
        for i in 0..k {
            assert_eq!(r.per_class[i].f1, f1[i]);
            assert_eq!(r.per_class[i].support, c.support[i]);
        }
        let present: Vec<usize> = (0..k).filter(|&i| c.support[i] > 0).collect();
        let macro_f1 = present.iter().map(|&i| f1[i]).sum::<f64>() / present.len() as f64;
        let weighted = (0..k).map(|i| f1[i] * c.support[i] as f64).sum::<f64>() / n as f64;
        let tp: u64 = c.tp.iter().sum();
        let fp: u64 = c.fp.iter().sum();
        let fn_: u64 = c.fn_.iter().sum();
        assert_eq!(r.macro_f1, macro_f1);
        assert_eq!(r.weighted_f1, weighted);
        assert_eq!(r.micro_f1, f1_from_counts(tp, fp, fn_));
        assert!((r.micro_f1 - r.accuracy).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.macro_f1));
    }
}

proptest! {
    #[test]
    fn metrics_invariant_under_joint_permutation(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40),
        seed: u64,
    ) {
        let mut shuffled = pairs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let split = |ps: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { ps.iter().copied().unzip() };
        let (g1, p1) = split(&pairs);
        let (g2, p2) = split(&shuffled);
        let a = report(&confusion(&g1, &p1, &labels(4)).unwrap()).unwrap();
        let b = report(&confusion(&g2, &p2, &labels(4)).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn weighted_equals_macro_for_uniform_gold(
        preds in prop::collection::vec(0usize..3, 9),
    ) {
        let gold: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let r = report(&confusion(&gold, &preds, &labels(3)).unwrap()).unwrap();
        prop_assert!((r.weighted_f1 - r.macro_f1).abs() < 1e-12);
    }
}

// ---- ensemble ---------------------------------------------------------

fn random_predictions(rng: &mut ChaCha8Rng) -> Vec<Prediction<f64>> {
    let k = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=10);
    (0..m)
        .map(|_| {
            // quarter steps keep sums exact so summed-probability ties occur
            let raw: Vec<u32> = (0..k).map(|_| rng.gen_range(0..4)).collect();
            let total: u32 = raw.iter().sum::<u32>().max(1);
            let probs: Vec<f64> = if raw.iter().all(|&x| x == 0) {
                vec![1.0 / k as f64; k]
            } else {
                raw.iter().map(|&x| x as f64 / total as f64).collect()
            };
            Prediction::from_probabilities(probs)
        })
        .collect()
}

#[test]
fn vote_matches_tally_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let preds = random_predictions(&mut rng);
        assert_eq!(vote(&preds).unwrap().label, vote_oracle(&preds));
    }
}

proptest! {
    #[test]
    fn vote_is_permutation_invariant(seed: u64, shuffle_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // dyadic probabilities: sums are exact in any order
        let k = [2usize, 3, 5][rng.gen_range(0..3)];
        let preds: Vec<Prediction<f64>> = (0..rng.gen_range(1..8))
            .map(|_| {
                let hi = rng.gen_range(0..k);
                let probs = (0..k).map(|c| if c == hi { 0.5 } else { 0.5 / (k - 1) as f64 }).collect();
                Prediction::from_probabilities(probs)
            })
            .collect();
        let mut shuffled = preds.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        prop_assert_eq!(vote(&preds).unwrap(), vote(&shuffled).unwrap());
    }
}

// ---- persist ----------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn model_bytes_round_trip(
        alphabet_chars in prop::collection::btree_set(any::<char>(), 0..6),
        k in 1usize..4,
        d in 1usize..4,
        fc in 0usize..4,
        seed: u64,
    ) {
        let alphabet = Alphabet::from_chars(alphabet_chars.into_iter().collect()).unwrap();
        let labels = labels(k);
        let config = ModelConfig {
            alphabet_size: alphabet.len(),
            num_classes: k,
            max_len: 5,
            embed_dim: d,
            filter_spec: "1:2,3:1".parse().unwrap(),
            fc_dim: fc,
            dropout_embed: 0.25,
            dropout_fc: 0.5,
        };
        let params: ModelParams<f32> = init_params(&config, seed).unwrap();
        let bytes = model_to_bytes(&params, &config, &alphabet, &labels, seed).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        let bits = |p: &ModelParams<f32>| -> Vec<u32> {
            p.tensors().iter().flat_map(|t| t.iter().map(|x| x.to_bits())).collect()
        };
        prop_assert_eq!(bits(&back.params), bits(&params));
        prop_assert_eq!(&back.config, &config);
        prop_assert_eq!(&back.alphabet, &alphabet);
        prop_assert_eq!(&back.labels, &labels);
        let again = model_to_bytes(&back.params, &back.config, &back.alphabet, &back.labels, seed);
        prop_assert_eq!(again.unwrap(), bytes);
    }
}
