//! Toy corpora with disjoint character sets per class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledExample;

/// Character pools per class; no character is shared between classes.
pub const POOLS: [&str; 3] = ["abcdefgh", "ijklmnop", "qrstuvwx"];

/// `per_class[c]` texts labelled `class{c}`, each 8..=30 characters drawn
/// from `POOLS[c]`. At most three classes.
pub fn separable_corpus(per_class: &[usize], seed: u64) -> Vec<LabeledExample> {
    assert!(per_class.len() <= POOLS.len(), "at most {} classes", POOLS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (class, &n) in per_class.iter().enumerate() {
        let pool: Vec<char> = POOLS[class].chars().collect();
        for _ in 0..n {
            let len = rng.gen_range(8..=30);
            let text: String = (0..len).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
            out.push(LabeledExample::new(text, format!("class{class}")));
        }
    }
    out
}

/// The corpus as DSL-style `text<TAB>label` lines.
pub fn to_tsv(corpus: &[LabeledExample]) -> String {
    corpus.iter().map(|e| format!("{}\t{}\n", e.text, e.label)).collect()
}
