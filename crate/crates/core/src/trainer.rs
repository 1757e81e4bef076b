//! Multi-task training: vocabulary construction, word dropout, the per-epoch
//! sentence schedule, per-sentence Adam updates and dev-based selection.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AutodiffError, Graph, NodeId};
use crate::checkpoint;
use crate::corpus::{read_conllu, read_segmented, read_tagged, AnnotatedSentence};
use crate::encoder::{parse_word_vectors, Dims, TagSet, Vocab};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict, round2};
use crate::lexicon::Lexicon;
use crate::model::{Mode, Model, ModelConfig, Task, Vocabularies};

/// Probability that a token seen `count` times is replaced by the unknown
/// token during training: `alpha / (alpha + count)`.
pub fn word_dropout_probability(count: usize, alpha: f64) -> Result<f64> {
    if count < 1 {
        return Err(Error::Input("word dropout needs a count of at least 1".into()));
    }
    Ok(alpha / (alpha + count as f64))
}

/// Training-corpus occurrence counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    pub syllables: BTreeMap<String, usize>,
    pub words: BTreeMap<String, usize>,
}

impl FrequencyTable {
    pub fn add_syllables(&mut self, s: &AnnotatedSentence) {
        for t in &s.syllables {
            *self.syllables.entry(t.clone()).or_insert(0) += 1;
        }
    }

    pub fn add_words(&mut self, s: &AnnotatedSentence) {
        for w in s.word_forms().unwrap_or_default() {
            *self.words.entry(w).or_insert(0) += 1;
        }
    }
}

/// The three training (or development) corpora.
#[derive(Clone, Debug, Default)]
pub struct Corpora {
    pub wseg: Vec<AnnotatedSentence>,
    pub pos: Vec<AnnotatedSentence>,
    pub dep: Vec<AnnotatedSentence>,
}

impl Corpora {
    /// The same sentences serving all three tasks.
    pub fn shared(sentences: Vec<AnnotatedSentence>) -> Self {
        Corpora {
            wseg: sentences.clone(),
            pos: sentences.clone(),
            dep: sentences,
        }
    }

    pub fn get(&self, task: Task) -> &[AnnotatedSentence] {
        match task {
            Task::Segmentation => &self.wseg,
            Task::Tagging => &self.pos,
            Task::Parsing => &self.dep,
        }
    }
}

/// Syllables from every corpus; words and POS tags from the tagged corpora;
/// labels from the treebank.
pub fn build_vocabularies(train: &Corpora) -> Vocabularies {
    let mut freq = FrequencyTable::default();
    let mut tags = Vec::new();
    let mut labels = Vec::new();
    for s in train.wseg.iter().chain(&train.pos).chain(&train.dep) {
        freq.add_syllables(s);
    }
    for s in train.pos.iter().chain(&train.dep) {
        freq.add_words(s);
        tags.extend(s.pos_tags.iter().flatten().cloned());
    }
    for s in &train.dep {
        labels.extend(s.deprels.iter().flatten().cloned());
    }
    Vocabularies {
        syllables: Vocab::new(&freq.syllables),
        words: Vocab::new(&freq.words),
        pos: TagSet::new(tags),
        labels: TagSet::new(labels),
    }
}

/// Every multi-syllable word of every training corpus.
pub fn build_lexicon(train: &Corpora) -> Lexicon {
    Lexicon::from_sentences(train.wseg.iter().chain(&train.pos).chain(&train.dep))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One epoch's sentence order: every treebank sentence plus `|dep|` draws
/// from each of the other corpora, shuffled together. Draws are without
/// replacement unless a corpus is smaller than the treebank.
pub fn epoch_schedule(sizes: [usize; 3], seed: u64, epoch: usize) -> Result<Vec<(Task, usize)>> {
    let [wseg, pos, dep] = sizes;
    if wseg == 0 || pos == 0 || dep == 0 {
        return Err(Error::Config("every training corpus must be non-empty".into()));
    }
    let mut rng = stream_rng(seed, 2 * epoch as u64);
    let mut order: Vec<(Task, usize)> = (0..dep).map(|i| (Task::Parsing, i)).collect();
    for (task, len) in [(Task::Segmentation, wseg), (Task::Tagging, pos)] {
        if len >= dep {
            order.extend(index::sample(&mut rng, len, dep).into_iter().map(|i| (task, i)));
        } else {
            warn!("{task:?} corpus has {len} sentences, fewer than the treebank's {dep}; sampling with replacement");
            order.extend((0..dep).map(|_| (task, rng.gen_range(0..len))));
        }
    }
    order.shuffle(&mut rng);
    Ok(order)
}

/// Sum of the loss terms a sentence of `task` contributes.
pub fn sentence_loss(
    model: &Model,
    g: &mut Graph,
    sentence: &AnnotatedSentence,
    task: Task,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let terms = model.losses(g, sentence, task, rng)?.terms();
    Ok(g.add_n(&terms)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub wseg_train: Option<PathBuf>,
    pub pos_train: Option<PathBuf>,
    pub dep_train: Option<PathBuf>,
    pub wseg_dev: Option<PathBuf>,
    pub pos_dev: Option<PathBuf>,
    pub dep_dev: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            model: ModelConfig::default(),
            epochs: 50,
            learning_rate: 0.001,
            seed: 1,
            wseg_train: None,
            pos_train: None,
            dep_train: None,
            wseg_dev: None,
            pos_dev: None,
            dep_dev: None,
            output: None,
            log: None,
            lexicon: None,
            word_vectors: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl TrainingConfig {
    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = TrainingConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let path = || Some(base.join(value));
            let dims = &mut c.model.dims;
            let feats = &mut c.model.features;
            match key {
                "wseg_train" => c.wseg_train = path(),
                "pos_train" => c.pos_train = path(),
                "dep_train" => c.dep_train = path(),
                "wseg_dev" => c.wseg_dev = path(),
                "pos_dev" => c.pos_dev = path(),
                "dep_dev" => c.dep_dev = path(),
                "model" => c.output = path(),
                "log" => c.log = path(),
                "lexicon" => c.lexicon = path(),
                "word_vectors" => c.word_vectors = path(),
                "epochs" => c.epochs = parse_value(key, value)?,
                "learning_rate" => c.learning_rate = parse_value(key, value)?,
                "seed" => c.seed = parse_value(key, value)?,
                "keep_probability" => c.model.keep = parse_value(key, value)?,
                "word_dropout_alpha" => c.model.alpha = parse_value(key, value)?,
                "hidden_size" => dims.hidden = parse_value(key, value)?,
                "layers" => dims.layers = parse_value(key, value)?,
                "syllable_dim" => dims.syllable = parse_value(key, value)?,
                "boundary_dim" => dims.boundary = parse_value(key, value)?,
                "word_dim" => dims.word = parse_value(key, value)?,
                "pos_dim" => dims.pos = parse_value(key, value)?,
                "ffnn_dim" => dims.ffnn = parse_value(key, value)?,
                "initial_bio" => feats.initial_bio = parse_value(key, value)?,
                "crf_wseg" => feats.crf_wseg = parse_value(key, value)?,
                "crf_pos" => feats.crf_pos = parse_value(key, value)?,
                "pos_embedding" => feats.pos_embedding = parse_value(key, value)?,
                "mode" => {
                    c.model.mode = match value {
                        "joint" => Mode::Joint,
                        "pipeline" => Mode::Pipeline,
                        _ => return Err(Error::Config(format!("unknown mode {value:?}"))),
                    }
                }
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", i + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.model.keep > 0.0 && self.model.keep <= 1.0) {
            return Err(Error::Config(format!("keep probability {} outside (0, 1]", self.model.keep)));
        }
        if self.model.alpha < 0.0 {
            return Err(Error::Config("word dropout alpha must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        let Dims { syllable, word, hidden, layers, ffnn, .. } = self.model.dims;
        if [syllable, word, hidden, layers, ffnn].contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// Every input path named by the configuration.
    pub fn inputs(&self) -> Vec<&Path> {
        [
            &self.wseg_train,
            &self.pos_train,
            &self.dep_train,
            &self.wseg_dev,
            &self.pos_dev,
            &self.dep_dev,
            &self.lexicon,
            &self.word_vectors,
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect()
    }
}

/// Reads a corpus, choosing the format by extension: `.conllu` treebanks,
/// `.pos`/`.tagged` word/TAG files, anything else segmented text.
pub fn read_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let parsed = match ext {
        "conllu" | "conll" => read_conllu(&text),
        "pos" | "tagged" => read_tagged(&text),
        _ => read_segmented(&text),
    };
    parsed.map_err(|source| Error::Corpus {
        path: path.to_path_buf(),
        source,
    })
}

/// Dev-set scores after one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub wseg: f64,
    pub pos: f64,
    pub las: f64,
    pub uas: f64,
    pub average: f64,
    pub selected: bool,
}

impl fmt::Display for EpochReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} wseg={:.2} pos={:.2} las={:.2} uas={:.2} average={:.2} selected={}",
            self.epoch,
            round2(self.wseg),
            round2(self.pos),
            round2(self.las),
            round2(self.uas),
            round2(self.average),
            self.selected
        )
    }
}

/// End-to-end dev scores: segmentation F1 on the segmentation dev set,
/// tagging F1 on the POS dev set, attachment F1 on the treebank dev set.
/// Missing dev sets fall back to the treebank dev set.
pub fn dev_scores(model: &Model, dev: &Corpora) -> Result<(f64, f64, f64, f64)> {
    let run = |gold: &[AnnotatedSentence]| -> Result<crate::eval::EvalReport> {
        let raw: Vec<AnnotatedSentence> = gold.iter().map(AnnotatedSentence::unsegmented).collect();
        let system = predict(model, &raw, false)?;
        evaluate(gold, &system)
    };
    let dep = run(&dev.dep)?;
    let wseg = if dev.wseg.is_empty() { dep.wseg.f1() } else { run(&dev.wseg)?.wseg.f1() };
    let pos_report = if dev.pos.is_empty() { dep.clone() } else { run(&dev.pos)? };
    let pos = pos_report
        .ptag
        .ok_or_else(|| Error::Config("POS dev set lacks POS tags".into()))?
        .f1();
    let las = dep.las.ok_or_else(|| Error::Config("treebank dev set lacks dependency labels".into()))?;
    let uas = dep.uas.expect("labels imply heads");
    Ok((wseg, pos, las.f1(), uas.f1()))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: Model,
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
}

fn divergence(err: Error, epoch: usize, sentence: usize) -> Error {
    match err {
        Error::Autodiff(source @ AutodiffError::NonFinite { .. }) => Error::Divergence {
            epoch,
            sentence,
            source,
        },
        other => other,
    }
}

/// Trains `model` in place for `config.epochs` epochs; after each epoch the
/// dev average decides whether the epoch is selected. `on_select` runs for
/// every newly selected epoch.
pub fn train_model(
    config: &TrainingConfig,
    mut model: Model,
    train: &Corpora,
    dev: &Corpora,
    mut on_select: impl FnMut(&Model, &EpochReport) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dev.dep.is_empty() {
        return Err(Error::Config("a treebank dev set is required for model selection".into()));
    }
    let mut adam = Adam::new();
    let mut reports = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let sizes = [train.wseg.len(), train.pos.len(), train.dep.len()];
    let non_projective = train
        .dep
        .iter()
        .filter(|s| s.parse_tree().is_some_and(|t| !t.is_projective()))
        .count();
    for epoch in 1..=config.epochs {
        if non_projective > 0 {
            info!("epoch {epoch}: {non_projective} non-projective gold trees kept for training");
        }
        let schedule = epoch_schedule(sizes, config.seed, epoch)?;
        let mut rng = stream_rng(config.seed, 2 * epoch as u64 + 1);
        let mut total = 0.0;
        for (k, &(task, i)) in schedule.iter().enumerate() {
            let sentence = &train.get(task)[i];
            let mut step = || -> Result<_> {
                let mut g = Graph::new(&model.store);
                let loss = sentence_loss(&model, &mut g, sentence, task, Some(&mut rng))?;
                let value = g.scalar(loss);
                Ok((value, g.backward(loss)?))
            };
            let (value, grads) = step().map_err(|e| divergence(e, epoch, k + 1))?;
            total += value;
            model.store.accumulate(&grads);
            match model.trainable(task).map(<[_]>::to_vec) {
                None => adam.step(&mut model.store, config.learning_rate),
                Some(ids) => adam.step_subset(&mut model.store, config.learning_rate, &ids),
            }
        }
        let (wseg, pos, las, uas) = dev_scores(&model, dev)?;
        let average = (wseg + pos + las) / 3.0;
        let selected = best.as_ref().map_or(true, |(b, _, _)| average > *b);
        let report = EpochReport {
            epoch,
            wseg,
            pos,
            las,
            uas,
            average,
            selected,
        };
        info!("{report} loss={:.4}", total / schedule.len() as f64);
        if selected {
            on_select(&model, &report)?;
            best = Some((average, epoch, model.clone()));
        }
        reports.push(report);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        reports,
        best_epoch,
    })
}

/// Builds a fresh model for `train`, with the lexicon and pretrained word
/// vectors optionally supplied.
pub fn build_model(
    config: &TrainingConfig,
    train: &Corpora,
    lexicon: Option<Lexicon>,
    vectors: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<Model> {
    let vocab = build_vocabularies(train);
    let lexicon = lexicon.unwrap_or_else(|| build_lexicon(train));
    let mut model = Model::new(config.model, vocab, lexicon, config.seed)?;
    if let Some(v) = vectors {
        let n = model.load_word_vectors(v)?;
        info!("initialized {n} word embeddings from pretrained vectors");
    }
    Ok(model)
}

fn read_optional(path: &Option<PathBuf>) -> Result<Vec<AnnotatedSentence>> {
    path.as_deref().map_or(Ok(Vec::new()), read_corpus)
}

/// File-driven training: reads corpora, trains, writes the selected
/// checkpoint and the epoch log.
pub fn train(config: &TrainingConfig) -> Result<TrainOutcome> {
    let require = |p: &Option<PathBuf>, key: &str| -> Result<Vec<AnnotatedSentence>> {
        let p = p.as_deref().ok_or_else(|| Error::Config(format!("{key} is required")))?;
        read_corpus(p)
    };
    let train_sets = Corpora {
        wseg: require(&config.wseg_train, "wseg_train")?,
        pos: require(&config.pos_train, "pos_train")?,
        dep: require(&config.dep_train, "dep_train")?,
    };
    let dev = Corpora {
        wseg: read_optional(&config.wseg_dev)?,
        pos: read_optional(&config.pos_dev)?,
        dep: require(&config.dep_dev, "dep_dev")?,
    };
    let lexicon = match &config.lexicon {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(Lexicon::parse(&text).map_err(|source| Error::Corpus { path: p.clone(), source })?)
        }
        None => None,
    };
    let vectors = match &config.word_vectors {
        Some(p) => Some(parse_word_vectors(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?),
        None => None,
    };
    let model = build_model(config, &train_sets, lexicon, vectors.as_ref())?;
    let output = config.output.clone();
    let outcome = train_model(config, model, &train_sets, &dev, |m, r| {
        if let Some(path) = &output {
            checkpoint::save(m, path)?;
            info!("epoch {} selected; checkpoint written to {}", r.epoch, path.display());
        }
        Ok(())
    })?;
    if let Some(path) = &config.log {
        let log: String = outcome.reports.iter().map(|r| format!("{r}\n")).collect();
        fs::write(path, log).map_err(|e| Error::io(path, e))?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_conllu;

    #[test]
    fn dropout_probability() {
        assert_eq!(word_dropout_probability(1, 0.25).unwrap(), 0.2);
        assert!((word_dropout_probability(3, 0.25).unwrap() - 1.0 / 13.0).abs() < 1e-15);
        let p: Vec<f64> = (1..100).map(|c| word_dropout_probability(c, 0.25).unwrap()).collect();
        assert!(p.windows(2).all(|w| w[1] < w[0]));
        assert!(word_dropout_probability(1_000_000_000, 0.25).unwrap() < 1e-9);
        assert!(word_dropout_probability(0, 0.25).is_err());
        assert_eq!(word_dropout_probability(5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn schedule_shape_and_determinism() {
        let s = epoch_schedule([5, 7, 2], 3, 1).unwrap();
        assert_eq!(s.len(), 6);
        for task in [Task::Segmentation, Task::Tagging, Task::Parsing] {
            let picks: Vec<usize> = s.iter().filter(|(t, _)| *t == task).map(|(_, i)| *i).collect();
            assert_eq!(picks.len(), 2);
            assert_ne!(picks[0], picks[1]);
        }
        assert_eq!(s, epoch_schedule([5, 7, 2], 3, 1).unwrap());
        let a = epoch_schedule([50, 50, 20], 3, 1).unwrap();
        let b = epoch_schedule([50, 50, 20], 3, 2).unwrap();
        assert_ne!(a, b);
        let small = epoch_schedule([1, 7, 3], 3, 1).unwrap();
        assert_eq!(small.iter().filter(|(t, _)| *t == Task::Segmentation).count(), 3);
        assert!(epoch_schedule([0, 1, 1], 0, 1).is_err());
    }

    #[test]
    fn config_parsing() {
        let text = "# toy\nwseg_train = a.seg\ndep_dev = d.conllu\nepochs = 3\nhidden_size = 32\nmode = pipeline\ncrf_pos = false\n";
        let c = TrainingConfig::parse(text, Path::new("/data")).unwrap();
        assert_eq!(c.wseg_train, Some(PathBuf::from("/data/a.seg")));
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model.dims.hidden, 32);
        assert_eq!(c.model.mode, Mode::Pipeline);
        assert!(!c.model.features.crf_pos);
        assert_eq!(c.inputs().len(), 2);
        assert!(TrainingConfig::parse("bogus = 1", Path::new(".")).is_err());
        assert!(TrainingConfig::parse("epochs = 0", Path::new(".")).is_err());
        assert!(TrainingConfig::parse("keep_probability = 0", Path::new(".")).is_err());
        assert!(TrainingConfig::parse("epochs", Path::new(".")).is_err());
        let d = TrainingConfig::default();
        assert_eq!((d.epochs, d.learning_rate, d.model.keep, d.model.alpha), (50, 0.001, 0.67, 0.25));
    }

    fn toy() -> Vec<AnnotatedSentence> {
        read_conllu(
            "1\tTôi\t_\tPRON\t_\t_\t2\tsub\t_\t_\n\
             2\tlà\t_\tVERB\t_\t_\t0\troot\t_\t_\n\
             3\tsinh_viên\t_\tNOUN\t_\t_\t2\tvmod\t_\t_\n\n\
             1\tTôi\t_\tPRON\t_\t_\t2\tsub\t_\t_\n\
             2\tăn\t_\tVERB\t_\t_\t0\troot\t_\t_\n\
             3\tcơm\t_\tNOUN\t_\t_\t2\tdob\t_\t_\n\n",
        )
        .unwrap()
    }

    fn tiny_config() -> TrainingConfig {
        TrainingConfig {
            model: ModelConfig {
                dims: Dims {
                    syllable: 4,
                    boundary: 2,
                    word: 4,
                    pos: 3,
                    hidden: 3,
                    layers: 1,
                    ffnn: 4,
                },
                ..ModelConfig::default()
            },
            epochs: 2,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn vocabularies_from_corpora() {
        let c = Corpora::shared(toy());
        let v = build_vocabularies(&c);
        assert_eq!(v.syllables.len(), 7);
        assert_eq!(v.syllables.counts()[v.syllables.get("Tôi")], 6);
        assert_eq!(v.words.counts()[v.words.get("sinh_viên")], 2);
        assert_eq!(v.pos.names(), ["NOUN", "PRON", "VERB"]);
        assert_eq!(v.labels.len(), 4);
        assert_eq!(build_lexicon(&c).words().collect::<Vec<_>>(), ["sinh_viên"]);
    }

    #[test]
    fn total_loss_is_sum_of_parts() {
        let c = Corpora::shared(toy());
        let config = tiny_config();
        let model = build_model(&config, &c, None, None).unwrap();
        let mut g = Graph::new(&model.store);
        let parts = model.losses(&mut g, &c.dep[0], Task::Parsing, None).unwrap();
        let total = sentence_loss(&model, &mut g, &c.dep[0], Task::Parsing, None).unwrap();
        let sum: f64 = parts.terms().iter().map(|&t| g.scalar(t)).sum();
        assert!((g.scalar(total) - sum).abs() < 1e-12);

        // Gradient of the sum is the sum of gradients.
        let gt = g.backward(total).unwrap();
        let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for t in parts.terms() {
            for (id, grad) in g.backward(t).unwrap().params() {
                let e = acc.entry(id.index()).or_insert_with(|| vec![0.0; grad.len()]);
                e.iter_mut().zip(grad.data()).for_each(|(a, b)| *a += b);
            }
        }
        for (id, grad) in gt.params() {
            let expect = acc.get(&id.index()).cloned().unwrap_or_else(|| vec![0.0; grad.len()]);
            for (a, b) in grad.data().iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn single_epoch_selects_it() {
        let c = Corpora::shared(toy());
        let config = TrainingConfig { epochs: 1, ..tiny_config() };
        let model = build_model(&config, &c, None, None).unwrap();
        let mut calls = 0;
        let out = train_model(&config, model, &c, &c, |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].selected);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(calls, 1);
        let line = out.reports[0].to_string();
        assert!(line.starts_with("epoch=1 wseg="));
        assert!(line.ends_with("selected=true"));
    }

    #[test]
    fn nonfinite_training_reports_coordinates() {
        let c = Corpora::shared(toy());
        let config = TrainingConfig { epochs: 1, ..tiny_config() };
        let mut model = build_model(&config, &c, None, None).unwrap();
        let id = model.store.get("syllable_embedding").unwrap();
        model.store.value_mut(id).data_mut()[..].iter_mut().for_each(|v| *v = f64::NAN);
        match train_model(&config, model, &c, &c, |_, _| Ok(())) {
            Err(e @ Error::Divergence { epoch: 1, sentence: 1, .. }) => assert!(e.is_numeric()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
