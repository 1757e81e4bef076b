//! The assembled system: one shared network in joint mode, or three
//! independent networks in pipeline mode, with per-task losses and
//! end-to-end decoding.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParameterStore};
use crate::corpus::{spans_from_tags, AnnotatedSentence, BoundaryTag, WordSpan};
use crate::crf::{argmax, softmax_nll, Crf};
use crate::encoder::{Dims, DepEncoder, PosEncoder, SyllableEncoder, TagSet, Vocab, WordEncoder};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::nn::{dropout, Activation, Linear};
use crate::parser::{arc_hinge_loss, eisner, ArcScorer};

/// Ablation switches. All on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Features {
    pub initial_bio: bool,
    pub crf_wseg: bool,
    pub crf_pos: bool,
    pub pos_embedding: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            initial_bio: true,
            crf_wseg: true,
            crf_pos: true,
            pos_embedding: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Joint,
    Pipeline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::Pipeline => "pipeline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub dims: Dims,
    pub features: Features,
    pub mode: Mode,
    pub keep: f64,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: Dims::default(),
            features: Features::default(),
            mode: Mode::Joint,
            keep: 0.67,
            alpha: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabularies {
    pub syllables: Vocab,
    pub words: Vocab,
    pub pos: TagSet,
    pub labels: TagSet,
}

/// Which corpus a training sentence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    Segmentation,
    Tagging,
    Parsing,
}

/// The loss terms one sentence contributes; absent terms are `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TaskLosses {
    pub wseg: Option<NodeId>,
    pub pos: Option<NodeId>,
    pub arc: Option<NodeId>,
    pub label: Option<NodeId>,
}

impl TaskLosses {
    pub fn terms(&self) -> Vec<NodeId> {
        [self.wseg, self.pos, self.arc, self.label].into_iter().flatten().collect()
    }
}

#[derive(Clone, Debug)]
struct WsegHead {
    ffnn: Linear,
    crf: Option<Crf>,
}

#[derive(Clone, Debug)]
struct PosHead {
    encoder: PosEncoder,
    crf: Option<Crf>,
}

#[derive(Clone, Debug)]
struct ParserHead {
    encoder: DepEncoder,
    scorer: ArcScorer,
}

/// Token lookups plus the word-dropout rate used at training time.
struct Lookup<'a> {
    vocab: &'a Vocabularies,
    alpha: f64,
}

/// One network over the syllable stream; heads are present per task.
#[derive(Clone, Debug)]
struct Network {
    syllables: SyllableEncoder,
    wseg: Option<WsegHead>,
    words: Option<WordEncoder>,
    pos: Option<PosHead>,
    parser: Option<ParserHead>,
    keep: f64,
    params: Vec<ParamId>,
}

fn sequence_loss(g: &mut Graph, crf: Option<&Crf>, emissions: &[NodeId], gold: &[usize]) -> Result<NodeId> {
    match crf {
        Some(crf) => crf.nll(g, emissions, gold),
        None => softmax_nll(g, emissions, gold),
    }
}

fn sequence_decode(g: &Graph, crf: Option<&Crf>, emissions: &[NodeId]) -> Vec<usize> {
    let values: Vec<Vec<f64>> = emissions.iter().map(|e| g.value(*e).data().to_vec()).collect();
    match crf {
        Some(crf) => crf.viterbi(g.store(), &values),
        None => values.iter().map(|v| argmax(v)).collect(),
    }
}

impl Network {
    fn new(
        store: &mut ParameterStore,
        prefix: &str,
        config: &ModelConfig,
        vocab: &Vocabularies,
        tasks: [bool; 3],
    ) -> Result<Self> {
        let [wseg, pos, parse] = tasks;
        let dims = &config.dims;
        let f = &config.features;
        let keep = config.keep;
        let first = store.len();
        let syllables = SyllableEncoder::new(store, prefix, dims, vocab.syllables.len(), f.initial_bio, keep)?;
        let expected = dims.syllable + if f.initial_bio { dims.boundary } else { 0 };
        if syllables.vector_width() != expected {
            return Err(Error::Config(format!(
                "syllable vector width {} != {expected}",
                syllables.vector_width()
            )));
        }
        let wseg = if wseg {
            let ffnn = Linear::new(
                store,
                &format!("{prefix}ffnn_ws"),
                syllables.bilstm.output_width(),
                BoundaryTag::ALL.len(),
                Activation::Identity,
            )?;
            let crf = if f.crf_wseg {
                Some(Crf::new(store, &format!("{prefix}crf_ws"), BoundaryTag::ALL.len())?)
            } else {
                None
            };
            Some(WsegHead { ffnn, crf })
        } else {
            None
        };
        let words = if pos || parse {
            let w = WordEncoder::new(store, prefix, dims, vocab.words.len(), keep)?;
            if w.vector_width() != dims.word + dims.ffnn {
                return Err(Error::Config(format!("word vector width {}", w.vector_width())));
            }
            Some(w)
        } else {
            None
        };
        let word_width = dims.word + dims.ffnn;
        let pos = if pos {
            let encoder = PosEncoder::new(store, prefix, dims, word_width, vocab.pos.len(), keep)?;
            let crf = if f.crf_pos {
                Some(Crf::new(store, &format!("{prefix}crf_pos"), vocab.pos.len())?)
            } else {
                None
            };
            Some(PosHead { encoder, crf })
        } else {
            None
        };
        let parser = if parse {
            let encoder = DepEncoder::new(store, prefix, dims, word_width, vocab.pos.len(), f.pos_embedding, keep)?;
            let expected = word_width + if f.pos_embedding { dims.pos } else { 0 };
            if encoder.input_width() != expected {
                return Err(Error::Config(format!(
                    "parser input width {} != {expected}",
                    encoder.input_width()
                )));
            }
            let scorer = ArcScorer::new(
                store,
                &format!("{prefix}parser"),
                encoder.bilstm.output_width(),
                dims.ffnn,
                vocab.labels.len(),
                keep,
            )?;
            Some(ParserHead { encoder, scorer })
        } else {
            None
        };
        let params = store.ids().skip(first).collect();
        Ok(Network {
            syllables,
            wseg,
            words,
            pos,
            parser,
            keep,
            params,
        })
    }

    fn states(
        &self,
        g: &mut Graph,
        sentence: &AnnotatedSentence,
        initial: &[BoundaryTag],
        lookup: &Lookup,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<NodeId>> {
        let ids: Vec<usize> = sentence
            .syllables
            .iter()
            .map(|s| lookup.vocab.syllables.get_train(s, lookup.alpha, rng.as_deref_mut()))
            .collect();
        let v = self.syllables.syllable_vectors(g, &ids, initial)?;
        self.syllables.states(g, &v, rng)
    }

    fn wseg_emissions(&self, g: &mut Graph, states: &[NodeId], mut rng: Option<&mut ChaCha8Rng>) -> Result<(&WsegHead, Vec<NodeId>)> {
        let head = self.wseg.as_ref().ok_or(Error::Config("network has no segmentation head".into()))?;
        let mut out = Vec::with_capacity(states.len());
        for &r in states {
            let r = dropout(g, r, self.keep, rng.as_deref_mut())?;
            out.push(head.ffnn.forward(g, r)?);
        }
        Ok((head, out))
    }

    fn segment(&self, g: &mut Graph, states: &[NodeId]) -> Result<(Vec<WordSpan>, usize)> {
        let (head, emissions) = self.wseg_emissions(g, states, None)?;
        let tags: Vec<BoundaryTag> = sequence_decode(g, head.crf.as_ref(), &emissions)
            .into_iter()
            .map(|i| BoundaryTag::from_index(i).expect("boundary tag index"))
            .collect();
        Ok(spans_from_tags(&tags))
    }

    fn word_vectors(
        &self,
        g: &mut Graph,
        sentence: &AnnotatedSentence,
        spans: &[WordSpan],
        states: &[NodeId],
        lookup: &Lookup,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<NodeId>> {
        let enc = self.words.as_ref().ok_or(Error::Config("network has no word encoder".into()))?;
        let ids: Vec<usize> = spans
            .iter()
            .map(|&w| lookup.vocab.words.get_train(&sentence.span_form(w), lookup.alpha, rng.as_deref_mut()))
            .collect();
        enc.word_vectors(g, &ids, spans, states, rng)
    }

    fn pos_emissions(&self, g: &mut Graph, x: &[NodeId], rng: Option<&mut ChaCha8Rng>) -> Result<(&PosHead, Vec<NodeId>)> {
        let head = self.pos.as_ref().ok_or(Error::Config("network has no tagging head".into()))?;
        let h = head.encoder.emissions(g, x, rng)?;
        Ok((head, h))
    }

    fn parser(&self) -> Result<&ParserHead> {
        self.parser.as_ref().ok_or(Error::Config("network has no parser".into()))
    }

    fn parse(&self, g: &mut Graph, x: &[NodeId], tags: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let head = self.parser()?;
        let r = head.encoder.states(g, x, tags, None)?;
        let feats = head.scorer.features(g, &r, None)?;
        let heads = eisner(&feats.arcs.values(g));
        let labels = head.scorer.predict_labels(g, &feats, &heads)?;
        Ok((heads, labels))
    }
}

#[derive(Clone, Debug)]
enum Networks {
    Joint(Network),
    Pipeline {
        wseg: Network,
        pos: Network,
        parse: Network,
    },
}

/// A complete trainable system together with its vocabularies and lexicon.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabularies,
    pub lexicon: Lexicon,
    pub store: ParameterStore,
    networks: Networks,
}

/// Representation widths of a built model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    pub syllable_vector: usize,
    pub word_vector: usize,
    pub parser_input: usize,
}

/// Decoder output for one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub sentence: AnnotatedSentence,
    /// Ill-formed segmentation tags that had to be repaired.
    pub repairs: usize,
}

fn missing<T>(layer: &'static str) -> impl FnOnce() -> Result<T> {
    move || Err(Error::MissingAnnotation(layer))
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabularies, lexicon: Lexicon, seed: u64) -> Result<Self> {
        if !(config.keep > 0.0 && config.keep <= 1.0) {
            return Err(Error::Config(format!("keep probability {} outside (0, 1]", config.keep)));
        }
        if vocab.pos.is_empty() || vocab.labels.is_empty() {
            return Err(Error::Config("empty POS or dependency label set".into()));
        }
        let mut store = ParameterStore::new(seed);
        let networks = match config.mode {
            Mode::Joint => Networks::Joint(Network::new(&mut store, "", &config, &vocab, [true; 3])?),
            Mode::Pipeline => Networks::Pipeline {
                wseg: Network::new(&mut store, "ws/", &config, &vocab, [true, false, false])?,
                pos: Network::new(&mut store, "pos/", &config, &vocab, [false, true, false])?,
                parse: Network::new(&mut store, "dep/", &config, &vocab, [false, false, true])?,
            },
        };
        Ok(Model {
            config,
            vocab,
            lexicon,
            store,
            networks,
        })
    }

    /// Copies pretrained rows into every word table; returns rows loaded.
    pub fn load_word_vectors(&mut self, vectors: &std::collections::BTreeMap<String, Vec<f64>>) -> Result<usize> {
        let tables: Vec<_> = match &self.networks {
            Networks::Joint(n) => vec![n.words.clone()],
            Networks::Pipeline { pos, parse, .. } => vec![pos.words.clone(), parse.words.clone()],
        };
        let mut loaded = 0;
        for enc in tables.into_iter().flatten() {
            loaded = enc.words.load(&mut self.store, &self.vocab.words, vectors)?;
        }
        Ok(loaded)
    }

    fn lookup(&self) -> Lookup<'_> {
        Lookup {
            vocab: &self.vocab,
            alpha: self.config.alpha,
        }
    }

    pub fn widths(&self) -> Widths {
        let parse = self.network(Task::Parsing);
        Widths {
            syllable_vector: self.network(Task::Segmentation).syllables.vector_width(),
            word_vector: parse.words.as_ref().map_or(0, WordEncoder::vector_width),
            parser_input: parse.parser.as_ref().map_or(0, |p| p.encoder.input_width()),
        }
    }

    /// Parameters updated by a sentence of `task`; `None` means all of them.
    pub fn trainable(&self, task: Task) -> Option<&[ParamId]> {
        match &self.networks {
            Networks::Joint(_) => None,
            Networks::Pipeline { wseg, pos, parse } => Some(match task {
                Task::Segmentation => &wseg.params,
                Task::Tagging => &pos.params,
                Task::Parsing => &parse.params,
            }),
        }
    }

    fn network(&self, task: Task) -> &Network {
        match &self.networks {
            Networks::Joint(n) => n,
            Networks::Pipeline { wseg, pos, parse } => match task {
                Task::Segmentation => wseg,
                Task::Tagging => pos,
                Task::Parsing => parse,
            },
        }
    }

    fn pos_indices(&self, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| self.vocab.pos.get(t).ok_or_else(|| Error::Input(format!("unknown POS tag {t:?}"))))
            .collect()
    }

    /// Loss terms for one training sentence of `task`, built on `g`. Gold
    /// segmentation forms the words; the lexicon supplies initial tags.
    pub fn losses(
        &self,
        g: &mut Graph,
        sentence: &AnnotatedSentence,
        task: Task,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TaskLosses> {
        if sentence.is_empty() {
            return Err(Error::Input("empty training sentence".into()));
        }
        let net = self.network(task);
        let lookup = self.lookup();
        let initial = self.lexicon.initial_tags(&sentence.syllables);
        let spans = sentence.words.clone().map_or_else(missing("word segmentation"), Ok)?;
        let states = net.states(g, sentence, &initial, &lookup, rng.as_deref_mut())?;
        let mut out = TaskLosses::default();
        if task == Task::Segmentation {
            let gold: Vec<usize> = crate::corpus::tags_from_spans(&spans, sentence.len())
                .into_iter()
                .map(BoundaryTag::index)
                .collect();
            let (head, h) = net.wseg_emissions(g, &states, rng.as_deref_mut())?;
            out.wseg = Some(sequence_loss(g, head.crf.as_ref(), &h, &gold)?);
            return Ok(out);
        }
        let gold_pos = sentence.pos_tags.as_deref().map_or_else(missing("POS"), Ok)?;
        if gold_pos.len() != spans.len() {
            return Err(Error::Input("POS tags and words differ in length".into()));
        }
        let gold_pos = self.pos_indices(gold_pos)?;
        let x = net.word_vectors(g, sentence, &spans, &states, &lookup, rng.as_deref_mut())?;
        let tags = if net.pos.is_some() {
            let (head, h) = net.pos_emissions(g, &x, rng.as_deref_mut())?;
            out.pos = Some(sequence_loss(g, head.crf.as_ref(), &h, &gold_pos)?);
            sequence_decode(g, head.crf.as_ref(), &h)
        } else {
            gold_pos
        };
        if task == Task::Tagging {
            return Ok(out);
        }
        let heads = sentence.heads.as_deref().map_or_else(missing("heads"), Ok)?;
        let rels = sentence.deprels.as_deref().map_or_else(missing("dependency labels"), Ok)?;
        if heads.len() != spans.len() || rels.len() != spans.len() {
            return Err(Error::Input("parse annotation and words differ in length".into()));
        }
        let labels: Vec<usize> = rels
            .iter()
            .map(|l| self.vocab.labels.get(l).ok_or_else(|| Error::Input(format!("unknown dependency label {l:?}"))))
            .collect::<Result<_>>()?;
        let parser = net.parser()?;
        let r = parser.encoder.states(g, &x, &tags, rng.as_deref_mut())?;
        let feats = parser.scorer.features(g, &r, rng.as_deref_mut())?;
        out.arc = Some(arc_hinge_loss(g, &feats.arcs, heads)?.loss);
        out.label = Some(parser.scorer.label_loss(g, &feats, heads, &labels)?);
        Ok(out)
    }

    /// Word segmentation only.
    pub fn segment(&self, sentence: &AnnotatedSentence) -> Result<Prediction> {
        if sentence.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        let net = self.network(Task::Segmentation);
        let mut g = Graph::new(&self.store);
        let initial = self.lexicon.initial_tags(&sentence.syllables);
        let states = net.states(&mut g, sentence, &initial, &self.lookup(), None)?;
        let (spans, repairs) = net.segment(&mut g, &states)?;
        let mut out = sentence.unsegmented();
        out.set_words(spans);
        Ok(Prediction { sentence: out, repairs })
    }

    /// Full decode. With `gold_segmentation` the sentence's own word spans are
    /// kept and segmentation decoding is skipped.
    pub fn predict(&self, sentence: &AnnotatedSentence, gold_segmentation: bool) -> Result<Prediction> {
        if sentence.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        let lookup = self.lookup();
        let initial = self.lexicon.initial_tags(&sentence.syllables);
        let mut g = Graph::new(&self.store);
        let states = |g: &mut Graph, net: &Network| net.states(g, sentence, &initial, &lookup, None);

        let seg_net = self.network(Task::Segmentation);
        let seg_states = states(&mut g, seg_net)?;
        let (spans, repairs) = if gold_segmentation {
            let spans = sentence.words.clone().map_or_else(missing("word segmentation"), Ok)?;
            (spans, 0)
        } else {
            seg_net.segment(&mut g, &seg_states)?
        };

        let (tags, x_parse) = match &self.networks {
            Networks::Joint(net) => {
                let x = net.word_vectors(&mut g, sentence, &spans, &seg_states, &lookup, None)?;
                let (head, h) = net.pos_emissions(&mut g, &x, None)?;
                (sequence_decode(&g, head.crf.as_ref(), &h), x)
            }
            Networks::Pipeline { pos, parse, .. } => {
                let s = states(&mut g, pos)?;
                let x = pos.word_vectors(&mut g, sentence, &spans, &s, &lookup, None)?;
                let (head, h) = pos.pos_emissions(&mut g, &x, None)?;
                let tags = sequence_decode(&g, head.crf.as_ref(), &h);
                let s = states(&mut g, parse)?;
                (tags, parse.word_vectors(&mut g, sentence, &spans, &s, &lookup, None)?)
            }
        };
        let (heads, labels) = self.network(Task::Parsing).parse(&mut g, &x_parse, &tags)?;

        let mut out = sentence.unsegmented();
        out.set_words(spans);
        out.pos_tags = Some(tags.iter().map(|&t| self.vocab.pos.name(t).to_string()).collect());
        out.heads = Some(heads);
        out.deprels = Some(labels.iter().map(|&l| self.vocab.labels.name(l).to_string()).collect());
        Ok(Prediction { sentence: out, repairs })
    }
}
