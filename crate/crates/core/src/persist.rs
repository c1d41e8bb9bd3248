//! The `.ccnn` model container and ensemble directories.
//!
//! Layout of a model file:
//!
//! ```text
//! "CCNN"            4 bytes
//! version           u32, little-endian
//! metadata length   u32, little-endian
//! metadata          UTF-8 JSON: alphabet, labels, config, seed, tensor list
//! tensors           f32 little-endian, row-major, in the declared order
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Alphabet, LabelSet};
use crate::ensemble::{Ensemble, Member, VOTE_RULE};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"CCNN";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorDecl {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    alphabet: Vec<String>,
    labels: Vec<String>,
    config: ModelConfig,
    seed: u64,
    tensors: Vec<TensorDecl>,
}

/// Everything stored in a model file.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams<f32>,
    pub config: ModelConfig,
    pub alphabet: Alphabet,
    pub labels: LabelSet,
    pub seed: u64,
}

fn check_vocab(config: &ModelConfig, alphabet: &Alphabet, labels: &LabelSet) -> Result<()> {
    if config.alphabet_size != alphabet.len() || config.num_classes != labels.len() {
        return Err(Error::Shape(format!(
            "config expects {} characters and {} classes, got {} and {}",
            config.alphabet_size,
            config.num_classes,
            alphabet.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn model_to_bytes(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    alphabet: &Alphabet,
    labels: &LabelSet,
    seed: u64,
) -> Result<Vec<u8>> {
    config.validate()?;
    params.check_shapes(config)?;
    check_vocab(config, alphabet, labels)?;
    let meta = Metadata {
        alphabet: alphabet.chars().iter().map(char::to_string).collect(),
        labels: labels.names().to_vec(),
        config: config.clone(),
        seed,
        tensors: config
            .tensor_layout()
            .into_iter()
            .map(|(name, shape)| TensorDecl { name, shape })
            .collect(),
    };
    let meta = serde_json::to_vec(&meta)?;
    let meta_len = u32::try_from(meta.len())
        .map_err(|_| Error::InvalidArgument("metadata block too large".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 4 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta);
    for t in params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<SavedModel> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::NotAModelFile("missing CCNN magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt("truncated header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let meta_len = word(8) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt("truncated metadata block".into()))?;
    let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;

    let config = meta.config;
    config.validate()?;
    let layout: Vec<TensorDecl> = config
        .tensor_layout()
        .into_iter()
        .map(|(name, shape)| TensorDecl { name, shape })
        .collect();
    if layout != meta.tensors {
        return Err(Error::Corrupt(
            "declared tensors do not match the model configuration".into(),
        ));
    }
    let chars = meta
        .alphabet
        .iter()
        .map(|s| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(Error::Corrupt(format!("alphabet entry {s:?} is not one character"))),
            }
        })
        .collect::<Result<Vec<char>>>()?;
    let alphabet = Alphabet::from_chars(chars)?;
    let labels = LabelSet::from_ordered(meta.labels)?;
    check_vocab(&config, &alphabet, &labels)?;

    let mut params = ModelParams::<f32>::zeros(&config);
    let mut pos = meta_end;
    for (decl, tensor) in layout.iter().zip(params.tensors_mut()) {
        let need = tensor.len() * 4;
        let chunk = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::Corrupt(format!("tensor `{}` is truncated", decl.name)))?;
        for (x, b) in tensor.iter_mut().zip(chunk.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        pos += need;
    }
    if pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after the tensor block",
            bytes.len() - pos
        )));
    }
    if !params.all_finite() {
        return Err(Error::Corrupt("non-finite parameter values".into()));
    }
    Ok(SavedModel {
        params,
        config,
        alphabet,
        labels,
        seed: meta.seed,
    })
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_model(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    alphabet: &Alphabet,
    labels: &LabelSet,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = model_to_bytes(params, config, alphabet, labels, seed)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// SHA-256 over the alphabet characters and label names, hex-encoded.
pub fn vocabulary_hash(alphabet: &Alphabet, labels: &LabelSet) -> String {
    let chars: Vec<String> = alphabet.chars().iter().map(char::to_string).collect();
    let canonical = serde_json::to_vec(&(chars, labels.names())).expect("strings serialize");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub file: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format: String,
    pub version: u32,
    pub vote_rule: String,
    pub vocabulary_sha256: String,
    pub members: Vec<ManifestMember>,
}

pub fn member_file_name(i: usize) -> String {
    format!("member_{i:03}.ccnn")
}

pub fn save_ensemble(ensemble: &Ensemble, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut members = Vec::with_capacity(ensemble.members.len());
    for (i, m) in ensemble.members.iter().enumerate() {
        let file = member_file_name(i);
        save_model(
            &m.params,
            &m.config,
            &ensemble.alphabet,
            &ensemble.labels,
            m.seed,
            dir.join(&file),
        )
        .map_err(|e| Error::Member {
            member: i,
            source: Box::new(e),
        })?;
        members.push(ManifestMember { file, seed: m.seed });
    }
    let manifest = EnsembleManifest {
        format: "charlid-ensemble".into(),
        version: FORMAT_VERSION,
        vote_rule: VOTE_RULE.into(),
        vocabulary_sha256: vocabulary_hash(&ensemble.alphabet, &ensemble.labels),
        members,
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &text)
}

pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<Ensemble> {
    let dir = dir.as_ref();
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EnsembleManifest = serde_json::from_slice(&text)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: FORMAT_VERSION,
        });
    }
    if manifest.vote_rule != VOTE_RULE {
        return Err(Error::Corrupt(format!("unknown vote rule `{}`", manifest.vote_rule)));
    }
    let mut vocab: Option<(Alphabet, LabelSet)> = None;
    let mut members = Vec::with_capacity(manifest.members.len());
    for (i, entry) in manifest.members.iter().enumerate() {
        let wrap = |e: Error| Error::Member {
            member: i,
            source: Box::new(e),
        };
        let saved = load_model(dir.join(&entry.file)).map_err(wrap)?;
        if vocabulary_hash(&saved.alphabet, &saved.labels) != manifest.vocabulary_sha256 {
            return Err(wrap(Error::Corrupt(
                "alphabet or labels differ from the manifest".into(),
            )));
        }
        vocab.get_or_insert((saved.alphabet, saved.labels));
        members.push(Member {
            params: saved.params,
            config: saved.config,
            seed: saved.seed,
            history: None,
        });
    }
    let (alphabet, labels) =
        vocab.ok_or_else(|| Error::Corrupt("ensemble manifest lists no members".into()))?;
    Ensemble::new(members, alphabet, labels)
}
