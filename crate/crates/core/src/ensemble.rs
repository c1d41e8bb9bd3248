//! Models trained on different random train/dev splits, combined by
//! plurality vote.

use crate::corpus::{split_train_dev, Alphabet, EncodedExample, EncodedText, LabelSet};
use crate::error::{Error, Result};
use crate::model::{predict, ModelConfig, ModelParams, Prediction, Scalar};
use crate::train::{train_model, TrainConfig, TrainHistory};

/// Dev share of each member's split.
pub const MEMBER_DEV_FRACTION: f64 = 0.1;

/// Identifier of the vote rule, recorded in ensemble manifests.
pub const VOTE_RULE: &str = "plurality/sum-probability/lowest-index";

#[derive(Clone, Debug)]
pub struct Member {
    pub params: ModelParams<f32>,
    pub config: ModelConfig,
    pub seed: u64,
    pub history: Option<TrainHistory>,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<Member>,
    pub alphabet: Alphabet,
    pub labels: LabelSet,
}

impl Ensemble {
    pub fn new(members: Vec<Member>, alphabet: Alphabet, labels: LabelSet) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidArgument("an ensemble needs at least one member".into()))?;
        for (i, m) in members.iter().enumerate() {
            let c = &m.config;
            if c.max_len != first.config.max_len
                || c.alphabet_size != alphabet.len()
                || c.num_classes != labels.len()
            {
                return Err(Error::Member {
                    member: i,
                    source: Box::new(Error::InvalidConfig(
                        "members must share alphabet, max_len and label set".into(),
                    )),
                });
            }
        }
        Ok(Ensemble {
            members,
            alphabet,
            labels,
        })
    }

    pub fn max_len(&self) -> usize {
        self.members[0].config.max_len
    }

    /// Every member's prediction for one encoded text.
    pub fn member_predictions(&self, encoded: &EncodedText) -> Result<Vec<Prediction<f32>>> {
        self.members
            .iter()
            .map(|m| predict(&m.params, &m.config, encoded))
            .collect()
    }

    pub fn predict(&self, encoded: &EncodedText) -> Result<Vote> {
        vote(&self.member_predictions(encoded)?)
    }
}

/// Trains member `i` on `split_train_dev(corpus, 0.1, base_seed + i)` with
/// initialization and shuffling seed `base_seed + i`. Members are
/// independent; `jobs > 1` trains them on that many threads.
pub fn train_ensemble(
    corpus: &[EncodedExample],
    k: usize,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<Member>> {
    if k < 1 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    let train_member = |i: usize| -> Result<Member> {
        let seed = base_seed.wrapping_add(i as u64);
        let (train, dev) = split_train_dev(corpus, MEMBER_DEV_FRACTION, seed)?;
        let cfg = TrainConfig {
            seed,
            ..train_config.clone()
        };
        let outcome = train_model(&train, &dev, model_config, &cfg)?;
        Ok(Member {
            params: outcome.params,
            config: model_config.clone(),
            seed,
            history: Some(outcome.history),
        })
    };
    let wrap = |i: usize| {
        train_member(i).map_err(|e| Error::Member {
            member: i,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<Member>> = if jobs <= 1 {
        (0..k).map(wrap).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<Member>>>> =
            (0..k).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..jobs.min(k) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= k {
                        break;
                    }
                    let r = wrap(i);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every member trained"))
            .collect()
    };
    results.into_iter().collect()
}

/// Winning label and first-place vote counts per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub label: usize,
    pub tally: Vec<usize>,
}

/// Plurality vote over member argmaxes. Ties go to the larger summed
/// probability across members, then to the lowest label index.
pub fn vote<T: Scalar>(predictions: &[Prediction<T>]) -> Result<Vote> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot vote over zero predictions".into()))?;
    let k = first.probabilities.len();
    if predictions.iter().any(|p| p.probabilities.len() != k || p.label >= k) {
        return Err(Error::Shape("predictions disagree on the class count".into()));
    }
    let mut tally = vec![0usize; k];
    let mut mass = vec![0f64; k];
    for p in predictions {
        tally[p.label] += 1;
        for (m, q) in mass.iter_mut().zip(&p.probabilities) {
            *m += q.to_f64().unwrap_or(0.0);
        }
    }
    let top = *tally.iter().max().expect("k >= 1");
    let mut label = None;
    for c in (0..k).filter(|&c| tally[c] == top) {
        match label {
            Some(best) if mass[c] <= mass[best] => {}
            _ => label = Some(c),
        }
    }
    Ok(Vote {
        label: label.expect("some class has the top count"),
        tally,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(probs: &[f64]) -> Prediction<f64> {
        Prediction::from_probabilities(probs.to_vec())
    }

    #[test]
    fn plurality_wins() {
        let v = vote(&[pred(&[0.9, 0.1]), pred(&[0.2, 0.8]), pred(&[0.6, 0.4])]).unwrap();
        assert_eq!(v.label, 0);
        assert_eq!(v.tally, vec![2, 1]);
    }

    #[test]
    fn tie_goes_to_summed_probability() {
        // argmaxes A, B; summed A = 1.1, B = 0.9
        let v = vote(&[pred(&[0.6, 0.4]), pred(&[0.5, 0.5 + 1e-9])]);
        assert_eq!(v.unwrap().label, 0);
        let v = vote(&[pred(&[0.55, 0.45]), pred(&[0.1, 0.9])]).unwrap();
        assert_eq!(v.label, 1);
    }

    #[test]
    fn full_tie_goes_to_lowest_index() {
        let v = vote(&[pred(&[0.7, 0.3]), pred(&[0.3, 0.7])]).unwrap();
        assert_eq!(v.label, 0);
    }

    #[test]
    fn empty_vote_is_an_error() {
        assert!(vote::<f64>(&[]).is_err());
    }

    #[test]
    fn unanimous_members_win_regardless_of_probability() {
        let v = vote(&[pred(&[0.1, 0.44, 0.46]), pred(&[0.3, 0.31, 0.39])]).unwrap();
        assert_eq!(v.label, 2);
    }
}
