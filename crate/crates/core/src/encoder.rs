//! Token vocabularies, embedding tables and the stacked encoders that turn a
//! syllable sequence into syllable, word, POS and parser representations.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParameterStore};
use crate::corpus::{BoundaryTag, WordSpan};
use crate::error::{Error, Result};
use crate::nn::{dropout, Activation, BiLstm, Linear};
use crate::trainer::word_dropout_probability;

pub const UNKNOWN: &str = "<unk>";

/// Token inventory with occurrence counts. Row 0 is the unknown token; the
/// remaining tokens are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new(counts: &BTreeMap<String, usize>) -> Self {
        let mut tokens = vec![UNKNOWN.to_string()];
        let mut freq = vec![0];
        for (t, &c) in counts {
            if t != UNKNOWN && c > 0 {
                tokens.push(t.clone());
                freq.push(c);
            }
        }
        Self::from_parts(tokens, freq)
    }

    pub(crate) fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Lookup with word dropout: a known token is swapped for the unknown row
    /// with probability `alpha / (alpha + count)` when `rng` is given.
    pub fn get_train(&self, token: &str, alpha: f64, rng: Option<&mut ChaCha8Rng>) -> usize {
        let id = self.get(token);
        match rng {
            Some(rng) if id != 0 && alpha > 0.0 => {
                let p = word_dropout_probability(self.counts[id], alpha).unwrap_or(0.0);
                if rng.gen::<f64>() < p {
                    0
                } else {
                    id
                }
            }
            _ => id,
        }
    }
}

/// Closed label inventory (POS tags, dependency relations), sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TagSet {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        let index = names.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TagSet { names, index }
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

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }
}

/// Lookup table: one trainable row per token.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub width: usize,
}

impl Embedding {
    pub fn new(store: &mut ParameterStore, name: &str, rows: usize, width: usize) -> Result<Self> {
        let bound = (3.0 / width as f64).sqrt();
        let table = store.add(name, &[rows, width], Init::Uniform(bound))?;
        Ok(Embedding { table, rows, width })
    }

    pub fn lookup(&self, g: &mut Graph, row: usize) -> Result<NodeId> {
        let t = g.param(self.table);
        Ok(g.pick_row(t, row)?)
    }

    /// Overwrites the rows of tokens present in `vectors`; returns how many.
    pub fn load(&self, store: &mut ParameterStore, vocab: &Vocab, vectors: &BTreeMap<String, Vec<f64>>) -> Result<usize> {
        let mut loaded = 0;
        let table = store.value_mut(self.table);
        for (i, tok) in vocab.tokens().iter().enumerate() {
            if let Some(v) = vectors.get(tok) {
                if v.len() != self.width {
                    return Err(Error::Input(format!(
                        "pretrained vector for {tok:?} has width {}, expected {}",
                        v.len(),
                        self.width
                    )));
                }
                table.row_mut(i).copy_from_slice(v);
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

/// Word2Vec text vectors: one token per line followed by its components. An
/// optional `count width` header line is skipped.
pub fn parse_word_vectors(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| Error::Input(format!("vector line {}: {e}", i + 1)))?;
        if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            continue;
        }
        if values.is_empty() {
            return Err(Error::Input(format!("vector line {}: no components", i + 1)));
        }
        out.insert(token.to_string(), values);
    }
    Ok(out)
}

/// Layer sizes of one network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub syllable: usize,
    pub boundary: usize,
    pub word: usize,
    pub pos: usize,
    pub hidden: usize,
    pub layers: usize,
    pub ffnn: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            syllable: 100,
            boundary: 25,
            word: 100,
            pos: 100,
            hidden: 128,
            layers: 2,
            ffnn: 100,
        }
    }
}

/// Syllable vectors `e^S ∘ e^B` and the word-segmentation BiLSTM over them.
#[derive(Clone, Debug)]
pub struct SyllableEncoder {
    pub syllables: Embedding,
    pub boundary: Option<Embedding>,
    pub bilstm: BiLstm,
    keep: f64,
}

impl SyllableEncoder {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        dims: &Dims,
        vocab: usize,
        initial_bio: bool,
        keep: f64,
    ) -> Result<Self> {
        let syllables = Embedding::new(store, &format!("{prefix}syllable_embedding"), vocab, dims.syllable)?;
        let boundary = if initial_bio {
            Some(Embedding::new(store, &format!("{prefix}boundary_embedding"), 3, dims.boundary)?)
        } else {
            None
        };
        let width = dims.syllable + boundary.as_ref().map_or(0, |b| b.width);
        let bilstm = BiLstm::new(store, &format!("{prefix}bilstm_ws"), width, dims.hidden, dims.layers)?;
        Ok(SyllableEncoder {
            syllables,
            boundary,
            bilstm,
            keep,
        })
    }

    /// Width of each syllable vector: 125 with boundary embeddings, else 100.
    pub fn vector_width(&self) -> usize {
        self.syllables.width + self.boundary.as_ref().map_or(0, |b| b.width)
    }

    pub fn syllable_vectors(&self, g: &mut Graph, ids: &[usize], tags: &[BoundaryTag]) -> Result<Vec<NodeId>> {
        if ids.len() != tags.len() {
            return Err(Error::Input("syllables and initial tags differ in length".into()));
        }
        ids.iter()
            .zip(tags)
            .map(|(&s, &b)| {
                let e = self.syllables.lookup(g, s)?;
                match &self.boundary {
                    Some(table) => {
                        let t = table.lookup(g, b.index())?;
                        Ok(g.concat(&[e, t])?)
                    }
                    None => Ok(e),
                }
            })
            .collect()
    }

    pub fn states(&self, g: &mut Graph, v: &[NodeId], mut rng: Option<&mut ChaCha8Rng>) -> Result<Vec<NodeId>> {
        if v.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        let v: Vec<NodeId> = v
            .iter()
            .map(|&x| dropout(g, x, self.keep, rng.as_deref_mut()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(self.bilstm.forward(g, &v)?)
    }
}

/// Word vectors `e^W ∘ FFNN_sw(r_first ∘ r_last)`.
#[derive(Clone, Debug)]
pub struct WordEncoder {
    pub words: Embedding,
    pub compose: Linear,
    keep: f64,
}

impl WordEncoder {
    pub fn new(store: &mut ParameterStore, prefix: &str, dims: &Dims, vocab: usize, keep: f64) -> Result<Self> {
        let words = Embedding::new(store, &format!("{prefix}word_embedding"), vocab, dims.word)?;
        let compose = Linear::new(
            store,
            &format!("{prefix}ffnn_sw"),
            4 * dims.hidden,
            dims.ffnn,
            Activation::Tanh,
        )?;
        Ok(WordEncoder { words, compose, keep })
    }

    pub fn vector_width(&self) -> usize {
        self.words.width + self.compose.output
    }

    pub fn word_vectors(
        &self,
        g: &mut Graph,
        ids: &[usize],
        spans: &[WordSpan],
        syllable_states: &[NodeId],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<NodeId>> {
        if ids.len() != spans.len() {
            return Err(Error::Input("word ids and spans differ in length".into()));
        }
        let mut out = Vec::with_capacity(ids.len());
        for (&w, span) in ids.iter().zip(spans) {
            if span.last >= syllable_states.len() || span.first > span.last {
                return Err(Error::Input(format!("word span {span:?} outside sentence")));
            }
            let e = self.words.lookup(g, w)?;
            let r = g.concat(&[syllable_states[span.first], syllable_states[span.last]])?;
            let r = dropout(g, r, self.keep, rng.as_deref_mut())?;
            let sw = self.compose.forward(g, r)?;
            out.push(g.concat(&[e, sw])?);
        }
        Ok(out)
    }
}

/// POS BiLSTM followed by the emission projection.
#[derive(Clone, Debug)]
pub struct PosEncoder {
    pub bilstm: BiLstm,
    pub ffnn: Linear,
    keep: f64,
}

impl PosEncoder {
    pub fn new(store: &mut ParameterStore, prefix: &str, dims: &Dims, input: usize, tags: usize, keep: f64) -> Result<Self> {
        Ok(PosEncoder {
            bilstm: BiLstm::new(store, &format!("{prefix}bilstm_pos"), input, dims.hidden, dims.layers)?,
            ffnn: Linear::new(
                store,
                &format!("{prefix}ffnn_pos"),
                2 * dims.hidden,
                tags,
                Activation::Identity,
            )?,
            keep,
        })
    }

    /// Emission score vectors, one per word.
    pub fn emissions(&self, g: &mut Graph, x: &[NodeId], mut rng: Option<&mut ChaCha8Rng>) -> Result<Vec<NodeId>> {
        if x.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        let x: Vec<NodeId> = x
            .iter()
            .map(|&v| dropout(g, v, self.keep, rng.as_deref_mut()))
            .collect::<std::result::Result<_, _>>()?;
        let states = self.bilstm.forward(g, &x)?;
        states
            .into_iter()
            .map(|r| {
                let r = dropout(g, r, self.keep, rng.as_deref_mut())?;
                Ok(self.ffnn.forward(g, r)?)
            })
            .collect()
    }
}

/// Parser inputs `z = x ∘ e^P` with a learned root vector prepended, and the
/// parser BiLSTM over them.
#[derive(Clone, Debug)]
pub struct DepEncoder {
    pub pos: Option<Embedding>,
    pub root: ParamId,
    pub bilstm: BiLstm,
    keep: f64,
}

impl DepEncoder {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        dims: &Dims,
        word_width: usize,
        tags: usize,
        pos_embedding: bool,
        keep: f64,
    ) -> Result<Self> {
        let pos = if pos_embedding {
            Some(Embedding::new(store, &format!("{prefix}pos_embedding"), tags, dims.pos)?)
        } else {
            None
        };
        let width = word_width + pos.as_ref().map_or(0, |p| p.width);
        let bound = (3.0 / width as f64).sqrt();
        let root = store.add(&format!("{prefix}root"), &[width], Init::Uniform(bound))?;
        let bilstm = BiLstm::new(store, &format!("{prefix}bilstm_dep"), width, dims.hidden, dims.layers)?;
        Ok(DepEncoder {
            pos,
            root,
            bilstm,
            keep,
        })
    }

    pub fn input_width(&self) -> usize {
        self.bilstm.input_width()
    }

    /// The `z` sequence, root first.
    pub fn inputs(&self, g: &mut Graph, x: &[NodeId], tags: &[usize]) -> Result<Vec<NodeId>> {
        if x.len() != tags.len() {
            return Err(Error::Input("words and POS tags differ in length".into()));
        }
        let mut z = Vec::with_capacity(x.len() + 1);
        z.push(g.param(self.root));
        for (&xj, &p) in x.iter().zip(tags) {
            z.push(match &self.pos {
                Some(table) => {
                    let e = table.lookup(g, p)?;
                    g.concat(&[xj, e])?
                }
                None => xj,
            });
        }
        Ok(z)
    }

    pub fn states(&self, g: &mut Graph, x: &[NodeId], tags: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Result<Vec<NodeId>> {
        if x.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        let z = self.inputs(g, x, tags)?;
        let z: Vec<NodeId> = z
            .into_iter()
            .map(|v| dropout(g, v, self.keep, rng.as_deref_mut()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(self.bilstm.forward(g, &z)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::autodiff::Tensor;
    use crate::nn::{lstm_cell, LstmWeights};
    use BoundaryTag::*;

    fn constant(g: &mut Graph, values: Vec<f64>) -> Result<NodeId> {
        Ok(g.input(Tensor::vector(values))?)
    }

    fn small() -> Dims {
        Dims {
            syllable: 4,
            boundary: 2,
            word: 3,
            pos: 2,
            hidden: 3,
            layers: 2,
            ffnn: 3,
        }
    }

    fn zero_all(store: &mut ParameterStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn counts(tokens: &[(&str, usize)]) -> BTreeMap<String, usize> {
        tokens.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    #[test]
    fn vocab_maps_unknown_to_row_zero() {
        let v = Vocab::new(&counts(&[("là", 3), ("Tôi", 1)]));
        assert_eq!(v.tokens(), [UNKNOWN, "Tôi", "là"]);
        assert_eq!(v.get("là"), 2);
        assert_eq!(v.get("xyz"), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| v.get_train("là", 0.0, Some(&mut rng)) == 2));
        assert_eq!(v.get_train("là", 0.25, None), 2);
    }

    #[test]
    fn default_widths() {
        let d = Dims::default();
        let mut store = ParameterStore::new(0);
        let s = SyllableEncoder::new(&mut store, "", &d, 10, true, 1.0).unwrap();
        assert_eq!(s.vector_width(), 125);
        assert_eq!(s.bilstm.output_width(), 256);
        let s2 = SyllableEncoder::new(&mut store, "b/", &d, 10, false, 1.0).unwrap();
        assert_eq!(s2.vector_width(), 100);
        let w = WordEncoder::new(&mut store, "", &d, 10, 1.0).unwrap();
        assert_eq!(w.vector_width(), 200);
        let dep = DepEncoder::new(&mut store, "", &d, 200, 5, true, 1.0).unwrap();
        assert_eq!(dep.input_width(), 300);
        let dep2 = DepEncoder::new(&mut store, "b/", &d, 200, 5, false, 1.0).unwrap();
        assert_eq!(dep2.input_width(), 200);
    }

    #[test]
    fn syllable_vectors_concatenate_rows() {
        let mut store = ParameterStore::new(3);
        let enc = SyllableEncoder::new(&mut store, "", &small(), 5, true, 1.0).unwrap();
        let mut g = Graph::new(&store);
        let v = enc.syllable_vectors(&mut g, &[2, 0], &[B, I]).unwrap();
        let syl = store.value(enc.syllables.table);
        let tag = store.value(enc.boundary.as_ref().unwrap().table);
        let expect: Vec<f64> = syl.row(2).iter().chain(tag.row(B.index())).copied().collect();
        assert_eq!(g.value(v[0]).data(), &expect[..]);
        let expect: Vec<f64> = syl.row(0).iter().chain(tag.row(I.index())).copied().collect();
        assert_eq!(g.value(v[1]).data(), &expect[..]);

        let enc = SyllableEncoder::new(&mut store, "x/", &small(), 5, false, 1.0).unwrap();
        let mut g = Graph::new(&store);
        let v = enc.syllable_vectors(&mut g, &[1], &[B]).unwrap();
        assert_eq!(g.value(v[0]).data(), store.value(enc.syllables.table).row(1));
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut store = ParameterStore::new(3);
        let enc = SyllableEncoder::new(&mut store, "", &small(), 5, true, 1.0).unwrap();
        let emb: Vec<f64> = store.value(enc.syllables.table).data().to_vec();
        zero_all(&mut store);
        store.value_mut(enc.syllables.table).data_mut().copy_from_slice(&emb);
        let mut g = Graph::new(&store);
        let v = enc.syllable_vectors(&mut g, &[1, 2, 3], &[B, I, B]).unwrap();
        let r = enc.states(&mut g, &v, None).unwrap();
        assert!(r.iter().all(|&n| g.value(n).data().iter().all(|x| *x == 0.0)));
    }

    fn run(g: &mut Graph, xs: &[NodeId], w: &LstmWeights) -> Vec<NodeId> {
        let mut h = constant(g, vec![0.0; w.hidden]).unwrap();
        let mut c = constant(g, vec![0.0; w.hidden]).unwrap();
        let mut out = Vec::new();
        for &x in xs {
            let (h2, c2) = lstm_cell(g, x, h, c, w).unwrap();
            h = h2;
            c = c2;
            out.push(h);
        }
        out
    }

    #[test]
    fn states_match_explicit_directional_runs() {
        let mut store = ParameterStore::new(8);
        let mut dims = small();
        dims.layers = 1;
        let enc = SyllableEncoder::new(&mut store, "", &dims, 6, true, 1.0).unwrap();
        let fwd = LstmWeights::new(&mut store, "probe/f", 6, 3).unwrap();
        let bwd = LstmWeights::new(&mut store, "probe/b", 6, 3).unwrap();
        // Mirror the encoder's single layer into the probe cells.
        for (src, dst) in [("bilstm_ws/layer0/forward", &fwd), ("bilstm_ws/layer0/backward", &bwd)] {
            for (part, id) in [("weight", dst.weight), ("bias", dst.bias)] {
                let v = store.value(store.get(&format!("{src}/{part}")).unwrap()).clone();
                *store.value_mut(id) = v;
            }
        }
        let mut g = Graph::new(&store);
        let ids = [1, 4, 2, 5];
        let tags = [B, I, B, B];
        let v = enc.syllable_vectors(&mut g, &ids, &tags).unwrap();
        let r = enc.states(&mut g, &v, None).unwrap();
        let f = run(&mut g, &v, &fwd);
        let rev: Vec<NodeId> = v.iter().rev().copied().collect();
        let mut b = run(&mut g, &rev, &bwd);
        b.reverse();
        for i in 0..4 {
            let expect: Vec<f64> = g.value(f[i]).data().iter().chain(g.value(b[i]).data()).copied().collect();
            for (x, y) in g.value(r[i]).data().iter().zip(&expect) {
                assert!((x - y).abs() < 1e-14);
            }
        }

        // Reversing the input of a direction-tied BiLSTM reverses the outputs
        // and swaps their halves.
        let fwd_w = store.value(store.get("bilstm_ws/layer0/forward/weight").unwrap()).clone();
        let fwd_b = store.value(store.get("bilstm_ws/layer0/forward/bias").unwrap()).clone();
        *store.value_mut(store.get("bilstm_ws/layer0/backward/weight").unwrap()) = fwd_w;
        *store.value_mut(store.get("bilstm_ws/layer0/backward/bias").unwrap()) = fwd_b;
        let mut g = Graph::new(&store);
        let v = enc.syllable_vectors(&mut g, &ids, &tags).unwrap();
        let r = enc.states(&mut g, &v, None).unwrap();
        let rev: Vec<NodeId> = v.iter().rev().copied().collect();
        let rr = enc.states(&mut g, &rev, None).unwrap();
        for i in 0..4 {
            let a = g.value(r[i]).data();
            let b = g.value(rr[3 - i]).data();
            for k in 0..3 {
                assert!((a[k] - b[k + 3]).abs() < 1e-14);
                assert!((a[k + 3] - b[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_syllable_state() {
        let mut store = ParameterStore::new(2);
        let mut dims = small();
        dims.layers = 1;
        let enc = SyllableEncoder::new(&mut store, "", &dims, 3, false, 1.0).unwrap();
        let mut g = Graph::new(&store);
        let v = enc.syllable_vectors(&mut g, &[1], &[B]).unwrap();
        let r = enc.states(&mut g, &v, None).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(g.value(r[0]).len(), 6);
    }

    #[test]
    fn states_are_sentence_global() {
        let mut store = ParameterStore::new(4);
        let enc = SyllableEncoder::new(&mut store, "", &small(), 6, true, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = rng.gen_range(2..6);
            let ids: Vec<usize> = (0..m).map(|_| rng.gen_range(0..6)).collect();
            let mut changed = ids.clone();
            let at = rng.gen_range(0..m);
            changed[at] = (changed[at] + 1) % 6;
            let tags = vec![B; m];
            let mut g = Graph::new(&store);
            let a = enc.syllable_vectors(&mut g, &ids, &tags).unwrap();
            let a = enc.states(&mut g, &a, None).unwrap();
            let b = enc.syllable_vectors(&mut g, &changed, &tags).unwrap();
            let b = enc.states(&mut g, &b, None).unwrap();
            for i in 0..m {
                assert_ne!(g.value(a[i]).data(), g.value(b[i]).data());
            }
        }
    }

    #[test]
    fn word_vectors_compose_span_ends() {
        let mut store = ParameterStore::new(5);
        let dims = small();
        let enc = WordEncoder::new(&mut store, "", &dims, 4, 1.0).unwrap();
        let mut g = Graph::new(&store);
        let states: Vec<NodeId> = (0..4)
            .map(|i| constant(&mut g, (0..6).map(|k| (i * 6 + k) as f64 * 0.05).collect()).unwrap())
            .collect();
        // "Tôi là sinh_viên": the last word spans syllables 2..=3.
        let spans = [WordSpan::new(0, 0), WordSpan::new(1, 1), WordSpan::new(2, 3)];
        let x = enc.word_vectors(&mut g, &[1, 0, 3], &spans, &states, None).unwrap();
        assert_eq!(g.value(x[2]).len(), 6);
        let table = store.value(enc.words.table);
        assert_eq!(&g.value(x[1]).data()[..3], table.row(0));
        let cat = g.concat(&[states[2], states[3]]).unwrap();
        let sw = enc.compose.forward(&mut g, cat).unwrap();
        assert_eq!(&g.value(x[2]).data()[3..], g.value(sw).data());
        let dup = g.concat(&[states[0], states[0]]).unwrap();
        let sw = enc.compose.forward(&mut g, dup).unwrap();
        assert_eq!(&g.value(x[0]).data()[3..], g.value(sw).data());
    }

    #[test]
    fn zero_pos_weights_give_uniform_emissions() {
        let mut store = ParameterStore::new(6);
        let enc = PosEncoder::new(&mut store, "", &small(), 5, 4, 1.0).unwrap();
        zero_all(&mut store);
        let mut g = Graph::new(&store);
        let x = constant(&mut g, vec![1.0; 5]).unwrap();
        let h = enc.emissions(&mut g, &[x], None).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(g.value(h[0]).data(), &[0.0; 4]);
    }

    #[test]
    fn emission_gradients_match_finite_differences() {
        let mut store = ParameterStore::new(7);
        let dims = small();
        let syl = SyllableEncoder::new(&mut store, "", &dims, 4, true, 1.0).unwrap();
        let words = WordEncoder::new(&mut store, "", &dims, 3, 1.0).unwrap();
        let pos = PosEncoder::new(&mut store, "", &dims, words.vector_width(), 3, 1.0).unwrap();
        let spans = [WordSpan::new(0, 1), WordSpan::new(2, 2)];
        let loss = |store: &ParameterStore| -> (f64, Option<crate::autodiff::Gradients>) {
            let mut g = Graph::new(store);
            let v = syl.syllable_vectors(&mut g, &[1, 2, 3], &[B, I, B]).unwrap();
            let r = syl.states(&mut g, &v, None).unwrap();
            let x = words.word_vectors(&mut g, &[2, 1], &spans, &r, None).unwrap();
            let h = pos.emissions(&mut g, &x, None).unwrap();
            let a = g.pick(h[0], 1).unwrap();
            let b = g.pick(h[1], 2).unwrap();
            let b = g.scale(b, 0.7).unwrap();
            let l = g.add(a, b).unwrap();
            (g.scalar(l), g.backward(l).ok())
        };
        let grads = loss(&store).1.unwrap();
        let ids: Vec<_> = store.ids().collect();
        let mut worst: f64 = 0.0;
        for id in ids {
            let analytic = grads.param(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; store.value(id).len()]);
            for k in 0..store.value(id).len() {
                let mut s = store.clone();
                s.value_mut(id).data_mut()[k] += 1e-5;
                let up = loss(&s).0;
                s.value_mut(id).data_mut()[k] -= 2e-5;
                let down = loss(&s).0;
                let numeric = (up - down) / 2e-5;
                let a = analytic[k];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2));
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn dep_inputs_prepend_root() {
        let mut store = ParameterStore::new(9);
        let dims = small();
        let dep = DepEncoder::new(&mut store, "", &dims, 4, 3, true, 1.0).unwrap();
        let mut g = Graph::new(&store);
        let x = constant(&mut g, vec![0.5; 4]).unwrap();
        let r = dep.states(&mut g, &[x], &[1], None).unwrap();
        assert_eq!(r.len(), 2);
        let z1 = dep.inputs(&mut g, &[x], &[1]).unwrap();
        let z2 = dep.inputs(&mut g, &[x], &[2]).unwrap();
        assert_eq!(g.value(z1[0]).data(), store.value(dep.root).data());
        let (a, b) = (g.value(z1[1]).data(), g.value(z2[1]).data());
        assert_eq!(a[..4], b[..4]);
        let table = store.value(dep.pos.as_ref().unwrap().table);
        assert_eq!(&a[4..], table.row(1));
        assert_eq!(&b[4..], table.row(2));

        let plain = DepEncoder::new(&mut store, "p/", &dims, 4, 3, false, 1.0).unwrap();
        let mut g = Graph::new(&store);
        let x = constant(&mut g, vec![0.5; 4]).unwrap();
        let z = plain.inputs(&mut g, &[x], &[1]).unwrap();
        assert_eq!(g.value(z[1]).data(), &[0.5; 4]);
    }

    #[test]
    fn pretrained_vectors() {
        let v = parse_word_vectors("2 3\nsinh_viên 0.1 0.2 0.3\nTôi 1 2 3\n").unwrap();
        assert_eq!(v.len(), 2);
        let vocab = Vocab::new(&counts(&[("sinh_viên", 1), ("là", 1)]));
        let mut store = ParameterStore::new(0);
        let e = Embedding::new(&mut store, "w", vocab.len(), 3).unwrap();
        assert_eq!(e.load(&mut store, &vocab, &v).unwrap(), 1);
        assert_eq!(store.value(e.table).row(vocab.get("sinh_viên")), &[0.1, 0.2, 0.3]);
        let e2 = Embedding::new(&mut store, "w2", vocab.len(), 2).unwrap();
        assert!(e2.load(&mut store, &vocab, &v).is_err());
        assert!(parse_word_vectors("a x y").is_err());
    }
}
