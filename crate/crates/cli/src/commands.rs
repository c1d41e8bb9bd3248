use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use charlid::corpus::{
    build_alphabet, encode, encode_corpus, load_dsl_file, load_unlabeled, split_train_dev,
    Alphabet, EncodedExample, LabelSet, LabeledExample,
};
use charlid::ensemble::{train_ensemble, Ensemble};
use charlid::eval::{
    confusion, majority_baseline, random_baseline, render_confusion, report_with, MacroAverage,
};
use charlid::model::{gradient_check_suite, predict, ModelConfig};
use charlid::persist::{load_ensemble, load_model, save_ensemble, save_model, SavedModel};
use charlid::train::{
    train_fixed_epochs_with, train_model_with, StopMode, LOG_HEADER,
};

use crate::config::ModelOpts;
use crate::{
    BaselineArgs, BaselineKind, EnsembleArgs, EvaluateArgs, GradcheckArgs, PredictArgs,
    TrainArgs, TrainFixedArgs, Usage,
};

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist or is not a file", path.display());
    }
    Ok(())
}

fn require_model(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("model {} does not exist", path.display());
    }
    Ok(())
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("directory {} for {} does not exist", dir.display(), path.display())
        }
        _ => Ok(()),
    }
}

fn check_inputs(files: &[(&Path, &str)], opts: &ModelOpts, outputs: &[&Path]) -> Result<()> {
    for (p, what) in files {
        require_file(p, what)?;
    }
    for p in opts.paths() {
        require_file(p, "config file")?;
    }
    for p in outputs {
        require_parent(p)?;
    }
    Ok(())
}

/// Epoch lines go to stdout and, when requested, to a log file.
struct EpochLog {
    file: Option<BufWriter<File>>,
    error: Option<io::Error>,
}

impl EpochLog {
    fn open(path: Option<&Path>, header: &str) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        let mut log = EpochLog { file, error: None };
        log.line(header);
        Ok(log)
    }

    fn line(&mut self, line: &str) {
        println!("{line}");
        if let Some(f) = &mut self.file {
            if let Err(e) = writeln!(f, "{line}") {
                self.error.get_or_insert(e);
            }
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e).context("writing the epoch log");
        }
        if let Some(mut f) = self.file {
            f.flush().context("writing the epoch log")?;
        }
        Ok(())
    }
}

struct Prepared {
    alphabet: Alphabet,
    labels: LabelSet,
    config: ModelConfig,
}

fn prepare(corpus: &[LabeledExample], mut config: ModelConfig) -> Result<Prepared> {
    let alphabet = build_alphabet(corpus)?;
    let labels = LabelSet::from_examples(corpus)?;
    config.alphabet_size = alphabet.len();
    config.num_classes = labels.len();
    config.validate()?;
    Ok(Prepared {
        alphabet,
        labels,
        config,
    })
}

fn encode_with(corpus: &[LabeledExample], p: &Prepared) -> Result<Vec<EncodedExample>> {
    Ok(encode_corpus(corpus, &p.alphabet, &p.labels, p.config.max_len)?)
}

fn announce_seed(seed: u64) {
    eprintln!("seed\t{seed}");
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut files = vec![(args.data.as_path(), "training data")];
    if let Some(dev) = &args.dev {
        files.push((dev.as_path(), "dev data"));
    }
    let mut outputs = vec![args.out.as_path()];
    outputs.extend(args.log.as_deref());
    check_inputs(&files, &args.opts, &outputs)?;
    if let Some(f) = args.dev_split {
        if !(f > 0.0 && f < 1.0) {
            return Err(Usage(format!("--dev-split must lie in (0, 1), got {f}")).into());
        }
    }
    let (model_cfg, mut train_cfg) = args.opts.resolve(args.seed)?;
    train_cfg.mode = StopMode::EarlyStop;
    announce_seed(args.seed);

    let corpus = load_dsl_file(&args.data, false)?;
    let p = prepare(&corpus, model_cfg)?;
    let (train_set, dev_set) = match &args.dev {
        Some(dev) => (
            encode_with(&corpus, &p)?,
            encode_with(&load_dsl_file(dev, false)?, &p)?,
        ),
        None => {
            let all = encode_with(&corpus, &p)?;
            split_train_dev(&all, args.dev_split.unwrap_or(0.1), args.seed)?
        }
    };
    eprintln!(
        "{} training and {} dev examples, {} characters, {} labels, {} parameters",
        train_set.len(),
        dev_set.len(),
        p.alphabet.len(),
        p.labels.len(),
        p.config.num_parameters()
    );

    let mut log = EpochLog::open(args.log.as_deref(), LOG_HEADER)?;
    let outcome = train_model_with(&train_set, &dev_set, &p.config, &train_cfg, |r| {
        log.line(&r.to_tsv())
    })?;
    log.finish()?;
    let h = &outcome.history;
    eprintln!(
        "best epoch {} of {} ({} updates)",
        h.best_epoch, h.stopped_epoch, h.steps
    );
    save_model(&outcome.params, &p.config, &p.alphabet, &p.labels, args.seed, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

pub fn train_fixed(args: &TrainFixedArgs) -> Result<()> {
    let mut outputs = vec![args.out.as_path()];
    outputs.extend(args.log.as_deref());
    check_inputs(&[(args.data.as_path(), "training data")], &args.opts, &outputs)?;
    if args.epochs == 0 {
        return Err(Usage("--epochs must be at least 1".into()).into());
    }
    let (model_cfg, mut train_cfg) = args.opts.resolve(args.seed)?;
    train_cfg.mode = StopMode::FixedEpochs(args.epochs);
    announce_seed(args.seed);

    let corpus = load_dsl_file(&args.data, false)?;
    let p = prepare(&corpus, model_cfg)?;
    let data = encode_with(&corpus, &p)?;
    let mut log = EpochLog::open(args.log.as_deref(), LOG_HEADER)?;
    let outcome =
        train_fixed_epochs_with(&data, &p.config, &train_cfg, |r| log.line(&r.to_tsv()))?;
    log.finish()?;
    save_model(&outcome.params, &p.config, &p.alphabet, &p.labels, args.seed, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

pub fn ensemble(args: &EnsembleArgs) -> Result<()> {
    let outputs: Vec<&Path> = args.log.as_deref().into_iter().collect();
    check_inputs(&[(args.data.as_path(), "training data")], &args.opts, &outputs)?;
    if args.out.exists() && !args.out.is_dir() {
        bail!("{} exists and is not a directory", args.out.display());
    }
    if args.k == 0 || args.jobs == 0 {
        return Err(Usage("--k and --jobs must be at least 1".into()).into());
    }
    let (model_cfg, mut train_cfg) = args.opts.resolve(args.seed)?;
    train_cfg.mode = StopMode::EarlyStop;
    announce_seed(args.seed);

    let corpus = load_dsl_file(&args.data, false)?;
    let p = prepare(&corpus, model_cfg)?;
    let data = encode_with(&corpus, &p)?;
    eprintln!(
        "training {} members on {} examples with {} job(s)",
        args.k,
        data.len(),
        args.jobs
    );
    let members = train_ensemble(&data, args.k, &p.config, &train_cfg, args.seed, args.jobs)?;

    let mut log = EpochLog::open(args.log.as_deref(), &format!("member\t{LOG_HEADER}"))?;
    for (i, m) in members.iter().enumerate() {
        let h = m.history.as_ref().expect("freshly trained member");
        for r in &h.epochs {
            log.line(&format!("{i}\t{}", r.to_tsv()));
        }
    }
    log.finish()?;
    for (i, m) in members.iter().enumerate() {
        let h = m.history.as_ref().expect("freshly trained member");
        eprintln!("member {i}: seed {}, best epoch {}", m.seed, h.best_epoch);
    }
    let ens = Ensemble::new(members, p.alphabet, p.labels)?;
    save_ensemble(&ens, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

/// A single model file or an ensemble directory.
enum Classifier {
    Single(Box<SavedModel>),
    Ensemble(Ensemble),
}

impl Classifier {
    fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(Classifier::Ensemble(load_ensemble(path)?))
        } else {
            Ok(Classifier::Single(Box::new(load_model(path)?)))
        }
    }

    fn alphabet(&self) -> &Alphabet {
        match self {
            Classifier::Single(m) => &m.alphabet,
            Classifier::Ensemble(e) => &e.alphabet,
        }
    }

    fn labels(&self) -> &LabelSet {
        match self {
            Classifier::Single(m) => &m.labels,
            Classifier::Ensemble(e) => &e.labels,
        }
    }

    fn max_len(&self) -> usize {
        match self {
            Classifier::Single(m) => m.config.max_len,
            Classifier::Ensemble(e) => e.max_len(),
        }
    }

    /// Label index and class probabilities (member mean for ensembles).
    fn classify(&self, text: &str) -> Result<(usize, Vec<f32>)> {
        let encoded = encode(text, self.alphabet(), self.max_len())?;
        match self {
            Classifier::Single(m) => {
                let p = predict(&m.params, &m.config, &encoded)?;
                Ok((p.label, p.probabilities))
            }
            Classifier::Ensemble(e) => {
                let preds = e.member_predictions(&encoded)?;
                let label = charlid::ensemble::vote(&preds)?.label;
                let mut mean = vec![0.0f32; e.labels.len()];
                for p in &preds {
                    for (m, q) in mean.iter_mut().zip(&p.probabilities) {
                        *m += q;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= preds.len() as f32);
                Ok((label, mean))
            }
        }
    }
}

pub fn predict_cmd(args: &PredictArgs) -> Result<()> {
    require_model(&args.model)?;
    require_file(&args.input, "input")?;
    if let Some(out) = &args.out {
        require_parent(out)?;
    }
    let clf = Classifier::open(&args.model)?;
    let texts = load_unlabeled(&args.input)?;
    let mut lines = String::new();
    for text in &texts {
        let (label, probs) = clf.classify(text)?;
        lines.push_str(clf.labels().name(label).expect("label index in range"));
        if args.probs {
            for p in probs {
                lines.push_str(&format!("\t{p:.6}"));
            }
        }
        lines.push('\n');
    }
    match &args.out {
        Some(path) => {
            fs::write(path, lines).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {} predictions to {}", texts.len(), path.display());
        }
        None => print!("{lines}"),
    }
    Ok(())
}

fn gold_indices(corpus: &[LabeledExample], labels: &LabelSet) -> Result<Vec<usize>> {
    Ok(corpus
        .iter()
        .map(|e| labels.index_of(&e.label))
        .collect::<charlid::Result<_>>()?)
}

fn macro_mode(include_absent: bool) -> MacroAverage {
    if include_absent {
        MacroAverage::IncludeAbsent
    } else {
        MacroAverage::ExcludeAbsent
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    require_model(&args.model)?;
    require_file(&args.test, "test data")?;
    if let Some(out) = &args.confusion_out {
        require_parent(out)?;
    }
    let clf = Classifier::open(&args.model)?;
    let test = load_dsl_file(&args.test, true)?;
    let gold = gold_indices(&test, clf.labels())?;
    let pred = test
        .iter()
        .map(|e| clf.classify(&e.text).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    let cm = confusion(&gold, &pred, clf.labels())?;
    let report = report_with(&cm, macro_mode(args.include_absent))?;
    print!("{}", report.to_tsv());
    let rendered = render_confusion(&cm, args.normalize)?;
    println!();
    print!("{}", rendered.table);
    if let Some(path) = &args.confusion_out {
        fs::write(path, &rendered.csv).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

pub fn baseline(args: &BaselineArgs) -> Result<()> {
    if args.kind == BaselineKind::Majority && args.train.is_none() {
        return Err(Usage("--kind majority needs --train".into()).into());
    }
    if let Some(t) = &args.train {
        require_file(t, "training data")?;
    }
    require_file(&args.test, "test data")?;
    announce_seed(args.seed);

    let test = load_dsl_file(&args.test, true)?;
    let train = match &args.train {
        Some(t) => load_dsl_file(t, true)?,
        None => Vec::new(),
    };
    let labels = LabelSet::new(train.iter().chain(&test).map(|e| e.label.clone()))?;
    let gold = gold_indices(&test, &labels)?;
    let report = match args.kind {
        BaselineKind::Majority => majority_baseline(&gold_indices(&train, &labels)?, &gold, &labels)?,
        BaselineKind::Random => random_baseline(&labels, &gold, args.seed)?,
    };
    print!("{}", report.to_tsv());
    Ok(())
}

/// Returns whether the worst error is within tolerance.
pub fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let r = gradient_check_suite(&args.seeds, args.epsilon)?;
    println!("{:e}", r.max_relative_error);
    eprintln!(
        "{} parameters checked over seeds {:?}; worst: {}[{}]",
        r.parameters_checked, args.seeds, r.worst_tensor, r.worst_index
    );
    Ok(r.max_relative_error < GRADCHECK_TOLERANCE)
}
