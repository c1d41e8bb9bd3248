//! Labeled text ingestion, character alphabets, fixed-length encoding and
//! mini-batching.
//!
//! Data files hold one record per line: the text, a TAB, then the label.
//! The label is taken after the *last* tab so texts may themselves contain
//! tabs. Encoding keeps the first `L` characters of a text and pads the rest
//! with [`PAD_INDEX`]; characters never seen while building the alphabet map
//! to [`UNK_INDEX`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;

/// Reserved index count (PAD and UNK).
const RESERVED: u32 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledExample {
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Reads a labeled data file (`text<TAB>label` per line).
pub fn load_dsl_file(path: impl AsRef<Path>, allow_empty: bool) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let content = read_utf8(path)?;
    parse_dsl(&content, &path.display().to_string(), allow_empty)
}

/// Parses labeled records from an in-memory string. `source` names the
/// origin in error messages.
pub fn parse_dsl(content: &str, source: &str, allow_empty: bool) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (lineno, line) in lines(content) {
        let (text, label) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: lineno,
            message: "missing TAB separator between text and label".into(),
        })?;
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::Parse {
                path: source.to_string(),
                line: lineno,
                message: "empty label".into(),
            });
        }
        if text.is_empty() && !allow_empty {
            return Err(Error::Parse {
                path: source.to_string(),
                line: lineno,
                message: "empty text (pass allow-empty to accept)".into(),
            });
        }
        out.push(LabeledExample::new(text, label));
    }
    Ok(out)
}

/// Reads an unlabeled file: every line is one text.
pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let content = read_utf8(path.as_ref())?;
    Ok(lines(&content).map(|(_, l)| l.to_string()).collect())
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::NotUtf8(path.display().to_string()))
}

/// Splits on LF, strips one trailing CR per line, and drops the empty tail
/// left by a final newline. Yields 1-based line numbers.
fn lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = content.strip_suffix('\n').unwrap_or(content);
    let empty = content.is_empty();
    body.split('\n')
        .filter(move |_| !empty)
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// Bidirectional character/index map. Index 0 is PAD, index 1 is UNK and
/// every other index maps to exactly one character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    char_to_index: BTreeMap<char, u32>,
    index_to_char: Vec<char>,
}

impl Alphabet {
    /// Builds an alphabet from explicit characters in index order (index 2
    /// onward). Duplicates are rejected.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut char_to_index = BTreeMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if char_to_index.insert(c, i as u32 + RESERVED).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate alphabet character {c:?}"
                )));
            }
        }
        Ok(Alphabet {
            char_to_index,
            index_to_char: chars,
        })
    }

    pub fn len(&self) -> usize {
        self.index_to_char.len() + RESERVED as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad_index(&self) -> u32 {
        PAD_INDEX
    }

    pub fn unk_index(&self) -> u32 {
        UNK_INDEX
    }

    pub fn index_of(&self, c: char) -> u32 {
        self.char_to_index.get(&c).copied().unwrap_or(UNK_INDEX)
    }

    /// `None` for PAD, UNK and out-of-range indices.
    pub fn char_at(&self, index: u32) -> Option<char> {
        index
            .checked_sub(RESERVED)
            .and_then(|i| self.index_to_char.get(i as usize).copied())
    }

    /// Non-reserved characters in index order.
    pub fn chars(&self) -> &[char] {
        &self.index_to_char
    }

    /// Maps indices back to text. PAD is dropped, UNK becomes U+FFFD.
    pub fn decode(&self, encoded: &EncodedText) -> String {
        encoded
            .indices()
            .iter()
            .filter(|&&i| i != PAD_INDEX)
            .map(|&i| self.char_at(i).unwrap_or('\u{FFFD}'))
            .collect()
    }
}

/// Collects every distinct character in the corpus texts, sorted by code
/// point, after the two reserved symbols.
pub fn build_alphabet(corpus: &[LabeledExample]) -> Result<Alphabet> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build an alphabet from an empty corpus".into(),
        ));
    }
    let chars: BTreeSet<char> = corpus.iter().flat_map(|e| e.text.chars()).collect();
    Alphabet::from_chars(chars.into_iter().collect())
}

/// Ordered class names; index `i` is the `i`-th name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelSet {
    /// Deduplicates and sorts the given names lexicographically.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self::from_ordered(set.into_iter().collect())
    }

    pub fn from_examples(corpus: &[LabeledExample]) -> Result<Self> {
        Self::new(corpus.iter().map(|e| e.label.clone()))
    }

    /// Keeps the given order; names must be distinct and non-empty.
    pub fn from_ordered(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("label set is empty".into()));
        }
        let mut index = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::InvalidArgument("empty label name".into()));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate label `{n}`")));
            }
        }
        Ok(LabelSet { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

/// Exactly `L` alphabet indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedText(Vec<u32>);

impl EncodedText {
    pub fn from_indices(indices: Vec<u32>) -> Self {
        EncodedText(indices)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps the first `max_len` characters through the alphabet and pads the
/// remainder with PAD.
pub fn encode(text: &str, alphabet: &Alphabet, max_len: usize) -> Result<EncodedText> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut indices: Vec<u32> = text
        .chars()
        .take(max_len)
        .map(|c| alphabet.index_of(c))
        .collect();
    indices.resize(max_len, PAD_INDEX);
    Ok(EncodedText(indices))
}

/// An encoded text paired with its class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub input: EncodedText,
    pub label: usize,
}

pub fn encode_corpus(
    corpus: &[LabeledExample],
    alphabet: &Alphabet,
    labels: &LabelSet,
    max_len: usize,
) -> Result<Vec<EncodedExample>> {
    corpus
        .iter()
        .map(|e| {
            Ok(EncodedExample {
                input: encode(&e.text, alphabet, max_len)?,
                label: labels.index_of(&e.label)?,
            })
        })
        .collect()
}

/// Inputs with their gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Vec<EncodedText>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<EncodedText>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "batch needs matching non-empty inputs and labels (got {} and {})",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a EncodedExample>) -> Result<Self> {
        let (inputs, labels) = examples
            .into_iter()
            .map(|e| (e.input.clone(), e.label))
            .unzip();
        Batch::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Shuffles a copy of `corpus` under `seed` and moves the last
/// `max(1, floor(n * dev_fraction))` items to the dev side.
pub fn split_train_dev<T: Clone>(
    corpus: &[T],
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dev fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two examples to split".into(),
        ));
    }
    let n = corpus.len();
    let dev_len = ((n as f64 * dev_fraction).floor() as usize).clamp(1, n - 1);
    let order = permutation(n, seed);
    let (train_idx, dev_idx) = order.split_at(n - dev_len);
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok((pick(train_idx), pick(dev_idx)))
}

/// Shuffled index chunks for one epoch; the last chunk may be short.
pub fn batch_order(len: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if len == 0 {
        return Err(Error::InvalidArgument("cannot batch an empty dataset".into()));
    }
    Ok(permutation(len, epoch_seed)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn batches(data: &[EncodedExample], batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    batch_order(data.len(), batch_size, epoch_seed)?
        .into_iter()
        .map(|chunk| Batch::from_examples(chunk.iter().map(|&i| &data[i])))
        .collect()
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}
